#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "falldet/models.hpp"
#include "falldet/preprocess.hpp"

using namespace falldet;
using namespace falldet::ml;
using Catch::Approx;

namespace {

namespace fs = std::filesystem;

constexpr std::size_t kD = kFeaturesPerInterval;  // w=1 windows

prep::WindowSample ws(std::vector<std::pair<std::size_t, float>> cols, std::uint8_t label) {
    prep::WindowSample s;
    s.x.assign(kD, 0.0f);
    for (auto [i, v] : cols) s.x[i] = v;
    s.label = label;
    return s;
}

std::vector<prep::WindowSample> random_set(std::size_t n, std::uint64_t seed, double shift) {
    // two blobs along a handful of columns; shift controls separation
    Rng rng(seed);
    std::vector<prep::WindowSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        prep::WindowSample s;
        s.label = i % 2;
        s.x.assign(kD, 0.0f);
        for (std::size_t f = 0; f < kD; ++f) s.x[f] = static_cast<float>(rng.normal(0.0, 1.0));
        if (s.label)
            for (std::size_t f = 13; f < 20; ++f) s.x[f] += static_cast<float>(shift);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<double> scores_of(const TrainedModel& m, const std::vector<prep::WindowSample>& set) {
    std::vector<double> out;
    for (const auto& s : set) out.push_back(score_sample(m, s.x));
    return out;
}

std::vector<std::uint8_t> labels_of(const std::vector<prep::WindowSample>& set) {
    std::vector<std::uint8_t> out;
    for (const auto& s : set) out.push_back(s.label);
    return out;
}

// Dense symmetric solve by Gaussian elimination with partial pivoting;
// independent of the library's solver.
std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        for (std::size_t r = col + 1; r < n; ++r) {
            double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
        x[i] = s / a[i][i];
    }
    return x;
}

struct TmpFile {
    fs::path path;
    explicit TmpFile(const char* tag) {
        static std::size_t n = 0;
        path = fs::temp_directory_path() / ("falldet-model-" + std::string(tag) + "-" +
                                            std::to_string(Catch::rngSeed()) + "-" +
                                            std::to_string(n++) + ".fmod");
    }
    ~TmpFile() { fs::remove(path); }
};

}  // namespace

TEST_CASE("model specs reject invalid hyperparameters") {
    ModelSpec spec;
    spec.kind = ModelKind::Knn;
    spec.k = 4;
    REQUIRE_THROWS_AS(spec.validate(), ConfigError);
    spec.k = 0;
    REQUIRE_THROWS_AS(spec.validate(), ConfigError);
    spec.k = 3;
    REQUIRE_NOTHROW(spec.validate());
    spec.kind = ModelKind::Mlp;
    spec.epochs = 0;
    REQUIRE_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("threshold training separates a trivial pair by max magnitude") {
    std::vector<prep::WindowSample> train = {
        ws({{prep::kAxOffset, 500.0f}}, 0),
        ws({{prep::kAxOffset, 3000.0f}}, 1),
    };
    ModelSpec spec;
    spec.kind = ModelKind::Threshold;
    auto m = train_model(spec, train, train);
    REQUIRE(m.tau > 500.0);
    REQUIRE(m.tau <= 3000.0);
    REQUIRE(score_sample(m, train[0].x) == Approx(500.0));
    REQUIRE(score_sample(m, train[1].x) == Approx(3000.0));
    REQUIRE(score_sample(m, train[0].x) < m.tau);
    REQUIRE(score_sample(m, train[1].x) >= m.tau);
}

TEST_CASE("the window maximum looks across rows and sample slots") {
    // magnitude of (3,4,0) = 5 placed in the second row, slot 7
    prep::WindowSample s;
    s.x.assign(2 * kD, 0.0f);
    s.x[kD + prep::kAxOffset + 7] = 3.0f;
    s.x[kD + prep::kAyOffset + 7] = 4.0f;
    s.x[prep::kAzOffset + 2] = 1.0f;  // first row holds a smaller spike
    TrainedModel m;
    m.spec.kind = ModelKind::Threshold;
    m.w = 2;
    m.d = 2 * kD;
    REQUIRE(score_sample(m, s.x) == Approx(5.0));
}

TEST_CASE("single class training sets are rejected") {
    auto both = random_set(20, 1, 0.5);
    std::vector<prep::WindowSample> ones;
    for (const auto& s : both)
        if (s.label) ones.push_back(s);
    for (auto kind : {ModelKind::Threshold, ModelKind::LinearRegression, ModelKind::GaussianNb,
                      ModelKind::BernoulliNb, ModelKind::Mlp}) {
        ModelSpec spec;
        spec.kind = kind;
        spec.epochs = 2;
        REQUIRE_THROWS_AS(train_model(spec, ones, ones), SingleClassTraining);
    }
    // KNN merely stores points, so a single class is allowed
    ModelSpec knn;
    knn.kind = ModelKind::Knn;
    knn.k = 1;
    REQUIRE_NOTHROW(train_model(knn, ones, ones));
    REQUIRE_THROWS_AS(train_model(knn, {}, {}), EmptyInput);
}

TEST_CASE("a constant regression model scores its intercept") {
    TrainedModel m;
    m.spec.kind = ModelKind::LinearRegression;
    m.w = 1;
    m.d = kD;
    m.beta.assign(kD, 0.0f);
    m.intercept = 0.4;
    auto s = ws({{3, 123.0f}, {40, -9.0f}}, 0);
    REQUIRE(score_sample(m, s.x) == Approx(0.4));
}

TEST_CASE("ridge regression matches an independent dense solve") {
    auto train = random_set(60, 7, 1.0);
    ModelSpec spec;
    spec.kind = ModelKind::LinearRegression;
    auto m = train_model(spec, train, train);

    // oracle: (X'X + lambda*I)beta = X'y over [features, 1], intercept unpenalized
    const std::size_t n = train.size(), d = kD;
    std::vector<std::vector<double>> a(d + 1, std::vector<double>(d + 1, 0.0));
    std::vector<double> b(d + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> xi(d + 1, 1.0);
        for (std::size_t f = 0; f < d; ++f) xi[f] = train[i].x[f];
        for (std::size_t r = 0; r <= d; ++r) {
            for (std::size_t c = 0; c <= d; ++c) a[r][c] += xi[r] * xi[c];
            b[r] += xi[r] * train[i].label;
        }
    }
    for (std::size_t f = 0; f < d; ++f) a[f][f] += 1e-4;
    auto beta = solve_dense(a, b);
    // weights live in the model as f32, so the oracle rounds them the same way
    for (std::size_t i = 0; i < 10; ++i) {
        double want = beta[d];
        for (std::size_t f = 0; f < d; ++f)
            want += static_cast<double>(static_cast<float>(beta[f])) * train[i].x[f];
        REQUIRE(score_sample(m, train[i].x) == Approx(want).margin(1e-7));
    }
}

TEST_CASE("knn votes among the three nearest neighbours") {
    std::vector<prep::WindowSample> train = {
        ws({{0, 1.0f}}, 1),
        ws({{0, 2.0f}}, 1),
        ws({{0, 3.0f}}, 0),
    };
    ModelSpec spec;
    spec.kind = ModelKind::Knn;
    spec.k = 3;
    auto m = train_model(spec, train, {});
    auto probe = ws({{0, 1.5f}}, 0);
    REQUIRE(score_sample(m, probe.x) == Approx(2.0 / 3.0));
}

TEST_CASE("knn with one neighbour returns the training label") {
    auto train = random_set(40, 11, 0.0);
    ModelSpec spec;
    spec.kind = ModelKind::Knn;
    spec.k = 1;
    auto m = train_model(spec, train, {});
    for (const auto& s : train)
        REQUIRE(score_sample(m, s.x) == Approx(static_cast<double>(s.label)));
}

TEST_CASE("knn distance ties resolve to the lower training index") {
    std::vector<prep::WindowSample> train = {
        ws({{5, 1.0f}}, 0),
        ws({{5, -1.0f}}, 1),
    };
    ModelSpec spec;
    spec.kind = ModelKind::Knn;
    spec.k = 1;
    auto m = train_model(spec, train, {});
    auto probe = ws({}, 0);  // exactly between the two
    REQUIRE(score_sample(m, probe.x) == Approx(0.0));
    // swapping the rows flips the winner
    std::swap(train[0], train[1]);
    auto m2 = train_model(spec, train, {});
    REQUIRE(score_sample(m2, probe.x) == Approx(1.0));
}

TEST_CASE("standardisation absorbs constant column shifts for knn") {
    // integer-valued raw windows whose column sums divide evenly
    std::vector<prep::WindowSample> raw;
    const float vals[4] = {1.0f, 3.0f, 5.0f, 7.0f};
    const float other[4] = {2.0f, 4.0f, 6.0f, 8.0f};
    for (int i = 0; i < 4; ++i) {
        auto s = ws({{13, vals[i]}, {14, other[i]}}, i % 2);
        raw.push_back(std::move(s));
    }
    auto shifted = raw;
    for (auto& s : shifted) s.x[13] += 7.0f;

    auto run = [&](std::vector<prep::WindowSample> set) {
        auto params = prep::fit_scaler(set, prep::ScalerMethod::Standardise, "unit");
        prep::apply_scaler(params, set);
        ModelSpec spec;
        spec.kind = ModelKind::Knn;
        spec.k = 1;
        auto m = train_model(spec, set, {});
        std::vector<double> out;
        for (const auto& s : set) out.push_back(score_sample(m, s.x));
        return out;
    };
    REQUIRE(run(raw) == run(shifted));
}

TEST_CASE("gaussian nb reproduces hand computed class means") {
    std::vector<prep::WindowSample> train = {
        ws({{0, 1.0f}, {1, 10.0f}}, 0),
        ws({{0, 3.0f}, {1, 14.0f}}, 0),
        ws({{0, 8.0f}, {1, 2.0f}}, 1),
        ws({{0, 12.0f}, {1, 4.0f}}, 1),
    };
    ModelSpec spec;
    spec.kind = ModelKind::GaussianNb;
    auto m = train_model(spec, train, train);
    REQUIRE(m.gnb_mean[0][0] == Approx(2.0));
    REQUIRE(m.gnb_mean[0][1] == Approx(12.0));
    REQUIRE(m.gnb_mean[1][0] == Approx(10.0));
    REQUIRE(m.gnb_mean[1][1] == Approx(3.0));
    REQUIRE(m.gnb_var[0][0] == Approx(1.0));   // population variance of {1,3}
    REQUIRE(m.gnb_var[1][1] == Approx(1.0));   // of {2,4}
    REQUIRE(m.gnb_var[0][2] == Approx(1e-9));  // untouched column hits the floor
}

TEST_CASE("gaussian nb is calibrated and symmetric") {
    std::vector<prep::WindowSample> train = {
        ws({{0, -1.0f}}, 0),
        ws({{0, -3.0f}}, 0),
        ws({{0, 1.0f}}, 1),
        ws({{0, 3.0f}}, 1),
    };
    ModelSpec spec;
    spec.kind = ModelKind::GaussianNb;
    auto m = train_model(spec, train, train);
    auto mid = ws({}, 0);  // equidistant from both class means
    REQUIRE(score_sample(m, mid.x) == Approx(0.5));
    auto near1 = ws({{0, 2.0f}}, 0);
    auto near0 = ws({{0, -2.0f}}, 0);
    REQUIRE(score_sample(m, near1.x) > 0.5);
    REQUIRE(score_sample(m, near0.x) < 0.5);
    REQUIRE(score_sample(m, near1.x) + score_sample(m, near0.x) == Approx(1.0));
    for (const auto& s : train) {
        double p = score_sample(m, s.x);
        REQUIRE(p >= 0.0);
        REQUIRE(p <= 1.0);
    }
}

TEST_CASE("bernoulli nb matches laplace smoothed hand arithmetic") {
    std::vector<prep::WindowSample> train = {
        ws({{2, 1.0f}}, 1),
        ws({{2, 2.0f}}, 1),
        ws({{2, 5.0f}}, 0),
        ws({{2, -3.0f}}, 0),
    };
    ModelSpec spec;
    spec.kind = ModelKind::BernoulliNb;
    auto m = train_model(spec, train, train);
    // class 1: both samples positive in column 2 -> (2+1)/(2+2) = 0.75
    // class 0: one positive -> (1+1)/(2+2) = 0.5; all other columns match
    REQUIRE(m.bnb_p1[1][2] == Approx(0.75));
    REQUIRE(m.bnb_p1[0][2] == Approx(0.5));
    auto probe = ws({{2, 0.5f}}, 0);
    double f1 = 0.75, f0 = 0.5;
    // remaining columns contribute (1-1/4) for both classes and cancel
    REQUIRE(score_sample(m, probe.x) == Approx(f1 / (f1 + f0)));
    auto zeros = ws({}, 0);  // column 2 at zero binarizes to 0
    double g1 = 0.25, g0 = 0.5;
    REQUIRE(score_sample(m, zeros.x) == Approx(g1 / (g1 + g0)));
}

TEST_CASE("mlp gradients match central finite differences") {
    const std::size_t d = 6, h = 4, n = 5;
    Rng rng(13);
    MlpParams<double> p = he_init<double>(d, h, 17);
    std::vector<std::vector<double>> X(n, std::vector<double>(d));
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % 2;
        for (auto& v : X[i]) v = rng.normal(0.0, 1.0);
    }
    const double wd = 1e-4;
    auto grad = mlp_gradient(p, X, y, wd);
    auto check = [&](double& slot, double g) {
        const double step = 1e-4;
        double keep = slot;
        slot = keep + step;
        double up = mlp_loss(p, X, y, wd);
        slot = keep - step;
        double dn = mlp_loss(p, X, y, wd);
        slot = keep;
        double fd = (up - dn) / (2 * step);
        double rel = std::abs(g - fd) / std::max(1e-8, std::abs(g) + std::abs(fd));
        REQUIRE(rel < 1e-4);
    };
    for (std::size_t i = 0; i < p.W1.size(); ++i) check(p.W1[i], grad.W1[i]);
    for (std::size_t i = 0; i < p.b1.size(); ++i) check(p.b1[i], grad.b1[i]);
    for (std::size_t i = 0; i < p.W2.size(); ++i) check(p.W2[i], grad.W2[i]);
    check(p.b2, grad.b2);
}

TEST_CASE("zero weights and a balanced batch zero the output bias gradient") {
    MlpParams<double> p;
    p.d = 3;
    p.h = 2;
    p.W1.assign(p.d * p.h, 0.0);
    p.b1.assign(p.h, 0.0);
    p.W2.assign(p.h, 0.0);
    p.b2 = 0.0;
    std::vector<std::vector<double>> X = {{1, 2, 3}, {-1, 0, 1}, {4, 4, 4}, {0, 0, 1}};
    std::vector<std::uint8_t> y = {0, 1, 0, 1};
    auto g = mlp_gradient(p, X, y, 0.0);
    REQUIRE(g.b2 == Approx(0.0).margin(1e-15));
}

TEST_CASE("weight decay adds exactly lambda times the parameter") {
    const std::size_t d = 5, h = 3, n = 4;
    MlpParams<double> p = he_init<double>(d, h, 23);
    Rng rng(29);
    std::vector<std::vector<double>> X(n, std::vector<double>(d));
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = (i * 7) % 2;
        for (auto& v : X[i]) v = rng.normal(0.0, 1.0);
    }
    auto g0 = mlp_gradient(p, X, y, 0.0);
    auto g1 = mlp_gradient(p, X, y, 1e-4);
    for (std::size_t i = 0; i < p.W1.size(); ++i)
        REQUIRE(g1.W1[i] - g0.W1[i] == Approx(1e-4 * p.W1[i]).margin(1e-12));
    for (std::size_t i = 0; i < p.b1.size(); ++i)
        REQUIRE(g1.b1[i] - g0.b1[i] == Approx(1e-4 * p.b1[i]).margin(1e-12));
    for (std::size_t i = 0; i < p.W2.size(); ++i)
        REQUIRE(g1.W2[i] - g0.W2[i] == Approx(1e-4 * p.W2[i]).margin(1e-12));
    REQUIRE(g1.b2 - g0.b2 == Approx(1e-4 * p.b2).margin(1e-12));
}

TEST_CASE("the mlp masters a linearly separable set") {
    auto train = random_set(200, 31, 3.0);
    auto val = random_set(80, 37, 3.0);
    // separability oracle: plain ridge regression already ranks it perfectly
    ModelSpec lin;
    lin.kind = ModelKind::LinearRegression;
    auto lm = train_model(lin, train, val);
    REQUIRE(metrics::roc_auc(scores_of(lm, train), labels_of(train)).auc >= 0.999);

    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.epochs = 100;
    spec.seed = 5;
    auto m = train_model(spec, train, val);
    REQUIRE(m.history.size() == 100);
    REQUIRE(m.history.back().train_auc >= 0.99);
    auto best = metrics::select_best_epoch(m.history);
    REQUIRE(best.val_auc >= 0.99);
    // deployed parameters are the best epoch's snapshot
    REQUIRE(metrics::roc_auc(scores_of(m, val), labels_of(val)).auc ==
            Approx(best.val_auc).margin(1e-12));
}

TEST_CASE("mlp training is reproducible under its seed") {
    auto train = random_set(64, 41, 1.0);
    auto val = random_set(32, 43, 1.0);
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.hidden_width = 32;
    spec.epochs = 6;
    spec.seed = 9;
    auto a = train_model(spec, train, val);
    auto b = train_model(spec, train, val);
    REQUIRE(a.mlp.W1 == b.mlp.W1);
    REQUIRE(a.mlp.b1 == b.mlp.b1);
    REQUIRE(a.mlp.W2 == b.mlp.W2);
    REQUIRE(a.mlp.b2 == b.mlp.b2);
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        REQUIRE(a.history[e].loss == b.history[e].loss);
        REQUIRE(a.history[e].val_auc == b.history[e].val_auc);
    }
    spec.seed = 10;
    auto c = train_model(spec, train, val);
    REQUIRE(a.mlp.W1 != c.mlp.W1);
}

TEST_CASE("the plateau scheduler cuts the learning rate after stalls") {
    auto train = random_set(120, 47, 4.0);  // easy set saturates early
    auto val = random_set(60, 53, 4.0);
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.hidden_width = 32;
    spec.epochs = 25;
    spec.seed = 3;
    auto m = train_model(spec, train, val);
    REQUIRE(m.history.front().lr == Approx(0.01));
    REQUIRE(m.history.back().lr <= 0.001 + 1e-12);
    // the rate only ever decreases, by factors of ten
    for (std::size_t e = 1; e < m.history.size(); ++e)
        REQUIRE(m.history[e].lr <= m.history[e - 1].lr + 1e-15);
}

TEST_CASE("divergent training reports a non finite loss") {
    auto train = random_set(64, 59, 1.0);
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.hidden_width = 16;
    spec.epochs = 5;
    spec.lr = 1e30;
    REQUIRE_THROWS_AS(train_model(spec, train, train), NonFiniteLoss);
}

TEST_CASE("every kind survives a save load round trip bit for bit") {
    auto train = random_set(50, 61, 1.5);
    auto val = random_set(20, 67, 1.5);
    auto probes = random_set(100, 71, 1.5);
    for (auto kind : {ModelKind::Threshold, ModelKind::LinearRegression, ModelKind::Knn,
                      ModelKind::GaussianNb, ModelKind::BernoulliNb, ModelKind::Mlp}) {
        ModelSpec spec;
        spec.kind = kind;
        spec.hidden_width = 16;
        spec.epochs = 3;
        auto m = train_model(spec, train, val);
        TmpFile file("roundtrip");
        save_model(m, file.path);
        auto back = load_model(file.path);
        REQUIRE(back.spec.kind == m.spec.kind);
        REQUIRE(back.w == m.w);
        REQUIRE(back.d == m.d);
        REQUIRE(back.history.size() == m.history.size());
        for (const auto& p : probes) {
            double a = score_sample(m, p.x);
            double b = score_sample(back, p.x);
            REQUIRE(std::memcmp(&a, &b, sizeof(double)) == 0);
        }
    }
}

TEST_CASE("scoring a window of the wrong shape is rejected") {
    auto train = random_set(30, 73, 1.0);
    ModelSpec spec;
    spec.kind = ModelKind::Knn;
    auto m = train_model(spec, train, {});
    std::vector<float> wrong(2 * kD, 0.0f);
    REQUIRE_THROWS_AS(score_sample(m, wrong), ShapeMismatch);
    TmpFile file("shape");
    save_model(m, file.path);
    auto back = load_model(file.path);  // loading succeeds, scoring enforces w
    REQUIRE_THROWS_AS(score_sample(back, wrong), ShapeMismatch);
}

TEST_CASE("corrupt model files are rejected") {
    auto train = random_set(30, 79, 1.0);
    ModelSpec spec;
    spec.kind = ModelKind::GaussianNb;
    auto m = train_model(spec, train, train);
    TmpFile file("corrupt");
    save_model(m, file.path);
    std::string bytes;
    {
        std::ifstream in(file.path, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        bytes = ss.str();
    }
    {
        std::ofstream out(file.path, std::ios::binary | std::ios::trunc);
        out << bytes.substr(0, bytes.size() / 2);
    }
    REQUIRE_THROWS_AS(load_model(file.path), MalformedModelFile);
    {
        std::ofstream out(file.path, std::ios::binary | std::ios::trunc);
        out << "not a model\n";
    }
    REQUIRE_THROWS_AS(load_model(file.path), MalformedModelFile);
    REQUIRE_THROWS_AS(load_model(file.path.string() + ".does-not-exist"), MalformedModelFile);
}

TEST_CASE("scores are deterministic") {
    auto train = random_set(40, 83, 1.0);
    auto probe = random_set(1, 89, 1.0)[0];
    for (auto kind : {ModelKind::Threshold, ModelKind::LinearRegression, ModelKind::Knn,
                      ModelKind::GaussianNb, ModelKind::BernoulliNb, ModelKind::Mlp}) {
        ModelSpec spec;
        spec.kind = kind;
        spec.hidden_width = 8;
        spec.epochs = 2;
        auto m = train_model(spec, train, train);
        double a = score_sample(m, probe.x);
        double b = score_sample(m, probe.x);
        REQUIRE(std::memcmp(&a, &b, sizeof(double)) == 0);
    }
}

TEST_CASE("non mlp models record a single history entry") {
    auto train = random_set(40, 97, 2.0);
    auto val = random_set(20, 101, 2.0);
    for (auto kind : {ModelKind::Threshold, ModelKind::LinearRegression, ModelKind::Knn,
                      ModelKind::GaussianNb, ModelKind::BernoulliNb}) {
        ModelSpec spec;
        spec.kind = kind;
        auto m = train_model(spec, train, val);
        REQUIRE(m.history.size() == 1);
        REQUIRE(m.history[0].epoch == 1);
        REQUIRE(m.history[0].train_auc > 0.5);
        REQUIRE(m.history[0].val_auc > 0.5);
    }
}
