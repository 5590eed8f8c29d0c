// falldet: single entry point for the pipeline. Subcommands: simulate,
// serve, collect, preprocess, train, eval, detect. Every subcommand
// prints one JSON summary line on success; failures print one JSON
// error line on stderr (exit 1 for domain errors, 2 for usage).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "falldet/detector.hpp"
#include "falldet/metrics.hpp"
#include "falldet/models.hpp"
#include "falldet/preprocess.hpp"
#include "falldet/recording_codec.hpp"
#include "falldet/simgen.hpp"
#include "falldet/tcp.hpp"
#include "falldet/transport.hpp"

namespace fs = std::filesystem;
using falldet::json;

namespace {

// ===== shared config ==============================================
// JSON file referenced by --config. Every field is optional; explicit
// flags win over config values, config values win over built-ins.

struct CliConfig {
    std::optional<std::string> store_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> w;
    std::optional<std::int64_t> lag_ms;
    std::optional<std::size_t> stride;
    std::optional<std::string> scaler;
    std::optional<std::string> model;
    std::optional<std::size_t> k, width, epochs;
    std::optional<std::vector<std::string>> allowlist;
    std::optional<std::string> source_addr;
    std::optional<std::uint16_t> port;
    std::optional<falldet::rt::GeoLocation> location;
};

CliConfig load_cli_config(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw falldet::ConfigError("cannot read config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw falldet::MalformedDocument(path + ": " + e.what());
    }
    static const std::vector<std::string> known = {
        "store_dir", "seed",  "w",         "lag_ms", "stride",      "scaler",
        "model",     "k",     "width",     "epochs", "allowlist",   "source_addr",
        "port",      "location"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw falldet::ConfigError(path + ": unknown config key '" + key + "'");
    CliConfig c;
    try {
        if (j.contains("store_dir")) c.store_dir = j["store_dir"].get<std::string>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("w")) c.w = j["w"].get<std::size_t>();
        if (j.contains("lag_ms")) c.lag_ms = j["lag_ms"].get<std::int64_t>();
        if (j.contains("stride")) c.stride = j["stride"].get<std::size_t>();
        if (j.contains("scaler")) c.scaler = j["scaler"].get<std::string>();
        if (j.contains("model")) c.model = j["model"].get<std::string>();
        if (j.contains("k")) c.k = j["k"].get<std::size_t>();
        if (j.contains("width")) c.width = j["width"].get<std::size_t>();
        if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
        if (j.contains("allowlist")) c.allowlist = j["allowlist"].get<std::vector<std::string>>();
        if (j.contains("source_addr")) c.source_addr = j["source_addr"].get<std::string>();
        if (j.contains("port")) c.port = j["port"].get<std::uint16_t>();
        if (j.contains("location")) {
            const auto& l = j["location"];
            c.location = falldet::rt::GeoLocation{l.at("latitude").get<double>(),
                                                  l.at("longitude").get<double>(),
                                                  l.at("postal_address").get<std::string>()};
        }
    } catch (const json::exception& e) {
        throw falldet::ConfigError(path + ": " + e.what());
    }
    // referenced paths must be resolvable before any command runs
    if (c.store_dir) {
        fs::path p(*c.store_dir);
        if (!fs::exists(p) && !p.parent_path().empty() && !fs::exists(p.parent_path()))
            throw falldet::ConfigError(path + ": store_dir not resolvable: " + *c.store_dir);
    }
    return c;
}

// ===== small helpers ==============================================

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in.is_open()) throw falldet::StoreFailure("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    if (!out.is_open()) throw falldet::StoreFailure("cannot write " + p.string());
    out << body;
    if (!out) throw falldet::StoreFailure("failed writing " + p.string());
}

json parse_json_file(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw falldet::MalformedDocument(path + ": " + e.what());
    }
}

// Files given directly are kept as-is; directories contribute their
// *.frec entries. Sorted so runs are order-independent.
std::vector<fs::path> expand_recording_inputs(const std::vector<std::string>& inputs) {
    std::vector<fs::path> files;
    for (const auto& in : inputs) {
        fs::path p(in);
        if (fs::is_directory(p)) {
            for (const auto& e : fs::directory_iterator(p))
                if (e.is_regular_file() && e.path().extension() == ".frec")
                    files.push_back(e.path());
        } else if (fs::is_regular_file(p)) {
            files.push_back(p);
        } else {
            throw falldet::ConfigError("recording input not found: " + in);
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw falldet::EmptyInput("no recording files given");
    return files;
}

std::vector<falldet::Recording> load_recordings_from_store(const std::string& dir) {
    if (!fs::is_directory(dir)) throw falldet::ConfigError("store dir not found: " + dir);
    falldet::net::Store store{fs::path(dir)};
    std::vector<falldet::Recording> out;
    for (const auto& id : store.meta_ids()) out.push_back(falldet::net::reassemble(store, id));
    return out;
}

const char* phase_name(falldet::rt::Phase p) {
    switch (p) {
        case falldet::rt::Phase::Idle: return "idle";
        case falldet::rt::Phase::FallDetected: return "fall_detected";
        case falldet::rt::Phase::Escalated: return "escalated";
    }
    return "unknown";
}

const char* error_kind(const falldet::Error& e) {
    if (dynamic_cast<const falldet::ConfigError*>(&e)) return "config";
    if (dynamic_cast<const falldet::MalformedDocument*>(&e)) return "malformed";
    if (dynamic_cast<const falldet::MalformedModelFile*>(&e)) return "malformed_model";
    if (dynamic_cast<const falldet::MissingMeta*>(&e)) return "missing_meta";
    if (dynamic_cast<const falldet::MissingChunk*>(&e)) return "missing_chunk";
    if (dynamic_cast<const falldet::StoreFailure*>(&e)) return "store";
    if (dynamic_cast<const falldet::ShapeMismatch*>(&e)) return "shape";
    if (dynamic_cast<const falldet::EmptyInput*>(&e)) return "empty_input";
    if (dynamic_cast<const falldet::SingleClass*>(&e)) return "single_class";
    if (dynamic_cast<const falldet::SingleClassTraining*>(&e)) return "single_class";
    if (dynamic_cast<const falldet::NoContacts*>(&e)) return "no_contacts";
    if (dynamic_cast<const falldet::SinkUnavailable*>(&e)) return "sink";
    return "domain";
}

// ===== simulate ===================================================

struct SimulateArgs {
    std::uint64_t seed = 1;
    std::size_t recordings = 20;
    double fall_ratio = 0.22;
    std::int64_t mean_duration_ms = 117000;
    std::size_t subjects = 5;
    bool oracle_labels = false;
    std::string scenario_file;
    std::string out_dir;
};

json run_simulate(SimulateArgs a, const CLI::App* cmd) {
    if (!a.scenario_file.empty()) {
        json j = parse_json_file(a.scenario_file);
        static const std::vector<std::string> known = {"n_recordings", "target_fall_ratio",
                                                       "mean_duration_ms", "seed", "n_subjects",
                                                       "oracle_labels"};
        for (const auto& [key, _] : j.items())
            if (std::find(known.begin(), known.end(), key) == known.end())
                throw falldet::ConfigError(a.scenario_file + ": unknown scenario key '" + key +
                                           "'");
        // explicit flags beat the scenario file
        if (j.contains("n_recordings") && cmd->count("--recordings") == 0)
            a.recordings = j["n_recordings"].get<std::size_t>();
        if (j.contains("target_fall_ratio") && cmd->count("--fall-ratio") == 0)
            a.fall_ratio = j["target_fall_ratio"].get<double>();
        if (j.contains("mean_duration_ms") && cmd->count("--mean-duration-ms") == 0)
            a.mean_duration_ms = j["mean_duration_ms"].get<std::int64_t>();
        if (j.contains("seed") && cmd->count("--seed") == 0) a.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("n_subjects") && cmd->count("--subjects") == 0)
            a.subjects = j["n_subjects"].get<std::size_t>();
        if (j.contains("oracle_labels") && cmd->count("--oracle-labels") == 0)
            a.oracle_labels = j["oracle_labels"].get<bool>();
    }
    fs::create_directories(a.out_dir);

    falldet::sim::ScenarioConfig sc{a.recordings, a.fall_ratio, a.mean_duration_ms, a.seed};
    auto scripts = falldet::sim::build_scenario(sc);
    auto subjects = falldet::sim::make_subjects(a.subjects, a.seed);
    falldet::sim::SignalModel model;

    json recs = json::array();
    std::size_t total_falls = 0;
    for (std::size_t i = 0; i < scripts.size(); ++i) {
        auto rec = falldet::sim::synth_recording(scripts[i], subjects[i % subjects.size()], model,
                                                 a.oracle_labels);
        fs::path out = fs::path(a.out_dir) / (rec.meta.recording_id + ".frec");
        write_file(out, falldet::encode_recording(rec));
        // events come in fall/getup pairs
        total_falls += rec.events.size() / 2;
        recs.push_back({{"recording_id", rec.meta.recording_id},
                        {"subject_id", rec.profile.subject_id},
                        {"falls", rec.events.size() / 2},
                        {"duration_ms", rec.duration_ms()},
                        {"file", out.string()}});
    }
    return {{"command", "simulate"}, {"recordings", recs.size()},     {"falls", total_falls},
            {"seed", a.seed},        {"out", a.out_dir},              {"details", recs}};
}

// ===== serve ======================================================

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }

json run_serve(const std::string& store_dir, const std::vector<std::string>& allowlist,
               std::uint16_t port) {
    falldet::net::Server server({allowlist, fs::path(store_dir)});
    falldet::net::TcpServer tcp(server, port);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    // ready line first so callers can read the bound port
    std::cout << json{{"event", "listening"}, {"port", tcp.port()}, {"store_dir", store_dir}}.dump()
              << std::endl;
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    tcp.stop();
    return {{"command", "serve"},
            {"port", tcp.port()},
            {"store_dir", store_dir},
            {"recordings", server.store().meta_ids().size()}};
}

// ===== collect ====================================================

struct CollectArgs {
    std::vector<std::string> inputs;
    std::string store_dir;
    std::string source_addr = "client-1";
    std::vector<std::string> allowlist;
    bool cancel = false;
    bool net = false;
    std::uint16_t port = 0;
    double drop_prob = 0.0;
    double reorder_prob = 0.0;
    std::uint64_t fault_seed = 1;
    std::size_t flush_rounds = 10;
};

json run_collect(const CollectArgs& a) {
    namespace net = falldet::net;
    auto files = expand_recording_inputs(a.inputs);

    std::string source = a.net ? "127.0.0.1" : a.source_addr;
    std::vector<std::string> allow = a.allowlist.empty() ? std::vector<std::string>{source}
                                                         : a.allowlist;
    net::Server server({allow, fs::path(a.store_dir)});

    std::unique_ptr<net::TcpServer> tcp;
    std::unique_ptr<net::Channel> base;
    if (a.net) {
        tcp = std::make_unique<net::TcpServer>(server, a.port);
        base = std::make_unique<net::TcpClientChannel>("127.0.0.1", tcp->port());
    } else {
        base = std::make_unique<net::DirectChannel>(server, source);
    }
    std::unique_ptr<net::Channel> chan;
    if (a.drop_prob > 0.0 || a.reorder_prob > 0.0)
        chan = std::make_unique<net::FaultyChannel>(*base,
                                                    net::FaultSpec{a.drop_prob, a.reorder_prob,
                                                                   a.fault_seed});

    net::Channel& channel = chan ? *chan : *base;
    auto decision = a.cancel ? net::Decision::Cancel : net::Decision::Save;

    json results = json::array();
    std::size_t saved = 0, cancelled = 0, failed = 0;
    for (const auto& f : files) {
        auto rec = falldet::decode_recording(read_file(f));
        try {
            auto outcome = net::client_session(rec, channel, decision, a.flush_rounds);
            bool ok = outcome.status == net::SessionStatus::Saved;
            (ok ? saved : cancelled) += 1;
            results.push_back({{"recording_id", rec.meta.recording_id},
                               {"status", ok ? "saved" : "cancelled"},
                               {"chunks_confirmed", outcome.posted_chunks.size()},
                               {"meta_posted", outcome.meta_posted}});
        } catch (const falldet::FinalFlushFailed& e) {
            ++failed;
            results.push_back({{"recording_id", rec.meta.recording_id},
                               {"status", "failed"},
                               {"reason", e.what()}});
        }
    }
    if (tcp) tcp->stop();
    return {{"command", "collect"},     {"sessions", files.size()},
            {"saved", saved},           {"cancelled", cancelled},
            {"failed", failed},         {"store_dir", a.store_dir},
            {"net", a.net},             {"results", results}};
}

// ===== preprocess =================================================

struct PreprocessArgs {
    std::string store_dir;
    std::vector<std::string> inputs;
    std::size_t w = 20;
    std::int64_t lag_ms = 0;
    std::size_t stride = 1;
    std::string scaler = "standardise";
    std::uint64_t seed = 1;
    std::string out;
    std::string scaler_out;
    std::string id;
};

json run_preprocess(const PreprocessArgs& a) {
    namespace prep = falldet::prep;
    if (a.store_dir.empty() == a.inputs.empty())
        throw falldet::ConfigError("give exactly one of --store-dir or --recordings");

    std::vector<falldet::Recording> recs;
    if (!a.store_dir.empty()) {
        recs = load_recordings_from_store(a.store_dir);
    } else {
        for (const auto& f : expand_recording_inputs(a.inputs))
            recs.push_back(falldet::decode_recording(read_file(f)));
        std::sort(recs.begin(), recs.end(), [](const auto& x, const auto& y) {
            return x.meta.recording_id < y.meta.recording_id;
        });
    }
    if (recs.empty()) throw falldet::EmptyInput("no recordings to preprocess");

    prep::WindowingConfig wc{a.w, a.lag_ms, a.stride};
    std::vector<prep::WindowSample> pool;
    for (const auto& r : recs) {
        auto ws = prep::windows_from_recording(r, wc);
        pool.insert(pool.end(), std::make_move_iterator(ws.begin()),
                    std::make_move_iterator(ws.end()));
    }

    prep::Dataset d;
    d.w = a.w;
    d.stride = a.stride;
    d.lag_ms = a.lag_ms;
    d.seed = a.seed;
    d.id = a.id.empty() ? fs::path(a.out).stem().string() : a.id;

    auto sp = prep::split_dataset(pool.size(), a.seed);
    auto take = [&](const std::vector<std::size_t>& idx) {
        std::vector<prep::WindowSample> out;
        out.reserve(idx.size());
        for (auto i : idx) out.push_back(pool[i]);
        return out;
    };
    d.train = take(sp.train);
    d.val = take(sp.val);
    d.test = take(sp.test);

    double ratio = prep::fall_ratio(pool);
    d.scaler = prep::fit_scaler(d.train, prep::scaler_method_from_name(a.scaler), d.id);
    prep::apply_scaler(d.scaler, d.train);
    prep::apply_scaler(d.scaler, d.val);
    prep::apply_scaler(d.scaler, d.test);
    prep::save_dataset(d, a.out);

    json summary = {{"command", "preprocess"},
                    {"recordings", recs.size()},
                    {"windows", pool.size()},
                    {"train", d.train.size()},
                    {"val", d.val.size()},
                    {"test", d.test.size()},
                    {"fall_ratio", ratio},
                    {"w", a.w},
                    {"lag_ms", a.lag_ms},
                    {"stride", a.stride},
                    {"scaler", a.scaler},
                    {"dataset_id", d.id},
                    {"out", a.out}};
    if (!a.scaler_out.empty()) {
        write_file(a.scaler_out, prep::scaler_to_json(d.scaler).dump() + "\n");
        summary["scaler_out"] = a.scaler_out;
    }
    return summary;
}

// ===== train ======================================================

struct TrainArgs {
    std::string dataset;
    std::string model = "threshold";
    std::size_t k = 3;
    std::size_t width = 500;
    std::size_t epochs = 100;
    double lr = 0.01;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    std::size_t batch = 512;
    std::uint64_t seed = 1;
    std::string out;
};

json run_train(const TrainArgs& a) {
    namespace ml = falldet::ml;
    auto d = falldet::prep::load_dataset(a.dataset);

    ml::ModelSpec spec;
    spec.kind = ml::model_kind_from_name(a.model);
    spec.k = a.k;
    spec.hidden_width = a.width;
    spec.epochs = a.epochs;
    spec.lr = a.lr;
    spec.weight_decay = a.weight_decay;
    spec.momentum = a.momentum;
    spec.batch = a.batch;
    spec.seed = a.seed;

    auto m = ml::train_model(spec, d.train, d.val);
    m.scaler_id = d.scaler.fitted_on;
    ml::save_model(m, a.out);

    const auto& best = falldet::metrics::select_best_epoch(m.history);
    json summary = {{"command", "train"},
                    {"model", a.model},
                    {"dataset_id", d.id},
                    {"w", m.w},
                    {"n_features", m.d},
                    {"epochs_run", m.history.size()},
                    {"best_epoch", best.epoch},
                    {"train_auc", best.train_auc},
                    {"val_auc", best.val_auc},
                    {"out", a.out}};
    if (spec.kind == ml::ModelKind::Threshold) summary["tau"] = m.tau;
    return summary;
}

// ===== eval =======================================================

struct EvalArgs {
    std::string model;
    std::string dataset;
    std::string split = "test";
    std::string report;
    std::string roc_csv;
};

json run_eval(const EvalArgs& a) {
    namespace ml = falldet::ml;
    namespace metrics = falldet::metrics;
    auto m = ml::load_model(a.model);
    auto d = falldet::prep::load_dataset(a.dataset);
    if (m.d != d.n_features())
        throw falldet::ShapeMismatch("model expects " + std::to_string(m.d) +
                                     " features, dataset has " + std::to_string(d.n_features()));

    const std::vector<falldet::prep::WindowSample>* split = nullptr;
    if (a.split == "train")
        split = &d.train;
    else if (a.split == "val")
        split = &d.val;
    else if (a.split == "test")
        split = &d.test;
    else
        throw falldet::ConfigError("unknown split '" + a.split + "'");
    if (split->empty()) throw falldet::EmptyInput("split '" + a.split + "' is empty");

    auto score_all = [&](const std::vector<falldet::prep::WindowSample>& set) {
        std::vector<double> scores(set.size());
        std::vector<std::uint8_t> labels(set.size());
        for (std::size_t i = 0; i < set.size(); ++i) {
            scores[i] = ml::score_sample(m, set[i].x);
            labels[i] = set[i].label;
        }
        return std::make_pair(std::move(scores), std::move(labels));
    };

    auto [scores, labels] = score_all(*split);
    auto rep = metrics::roc_auc(scores, labels);

    // Operating threshold: Youden J on the validation split; falls back
    // to the evaluated split when validation cannot provide one.
    double tau = 0.0;
    std::string tau_source = "youden_val";
    try {
        if (d.val.empty()) throw falldet::EmptyInput("no validation split");
        auto [vs, vl] = score_all(d.val);
        tau = metrics::youden_threshold(vs, vl);
    } catch (const falldet::Error&) {
        tau = metrics::youden_threshold(scores, labels);
        tau_source = "youden_" + a.split;
    }
    auto conf = metrics::confusion_at(scores, labels, tau);

    json report = {{"command", "eval"},
                   {"model", ml::model_kind_name(m.spec.kind)},
                   {"dataset_id", d.id},
                   {"split", a.split},
                   {"n", split->size()},
                   {"n_pos", rep.n_pos},
                   {"n_neg", rep.n_neg},
                   {"auc", rep.auc},
                   {"threshold", tau},
                   {"threshold_source", tau_source},
                   {"sensitivity", conf.sensitivity()},
                   {"specificity", conf.specificity()},
                   {"tp", conf.tp},
                   {"fp", conf.fp},
                   {"tn", conf.tn},
                   {"fn", conf.fn}};
    if (!a.report.empty()) {
        write_file(a.report, report.dump(2) + "\n");
        report["report"] = a.report;
    }
    if (!a.roc_csv.empty()) {
        std::ostringstream csv;
        csv << "threshold,fpr,tpr\n";
        for (const auto& p : rep.roc) csv << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
        write_file(a.roc_csv, csv.str());
        report["roc_csv"] = a.roc_csv;
    }
    return report;
}

// ===== detect =====================================================

struct DetectArgs {
    std::string model;
    std::string scaler;
    std::string recording;
    bool live_sim = false;
    std::uint64_t seed = 1;
    std::int64_t sim_duration_ms = 60000;
    double threshold = 0.0;
    bool threshold_set = false;
    std::int64_t refractory_ms = falldet::rt::kDefaultRefractoryMs;
    std::int64_t escalation_ms = falldet::rt::kDefaultEscalationMs;
    std::string outbox;
    std::string responses;
    falldet::rt::GeoLocation location{0.0, 0.0, "unconfigured location"};
};

json run_detect(const DetectArgs& a) {
    namespace rt = falldet::rt;
    namespace ml = falldet::ml;
    if (a.recording.empty() == !a.live_sim)
        throw falldet::ConfigError("give exactly one of --recording or --live-sim");

    auto m = ml::load_model(a.model);
    auto scaler = falldet::prep::scaler_from_json(parse_json_file(a.scaler));

    falldet::Recording rec;
    if (a.live_sim) {
        falldet::sim::ScenarioConfig sc{1, 0.22, a.sim_duration_ms, a.seed};
        auto scripts = falldet::sim::build_scenario(sc);
        auto subject = falldet::sim::make_subjects(1, a.seed)[0];
        rec = falldet::sim::synth_recording(scripts[0], subject, falldet::sim::SignalModel{});
    } else {
        rec = falldet::decode_recording(read_file(a.recording));
    }

    rt::DetectorConfig dc;
    dc.w = m.w;
    dc.tau = a.threshold_set ? a.threshold
                             : (m.spec.kind == ml::ModelKind::Threshold ? m.tau : 0.5);
    dc.refractory_ms = a.refractory_ms;
    dc.escalation_timeout_ms = a.escalation_ms;
    dc.location = a.location;

    std::vector<rt::UserResponse> responses;
    if (!a.responses.empty()) {
        json j = parse_json_file(a.responses);
        if (!j.is_array()) throw falldet::MalformedDocument(a.responses + ": expected an array");
        for (const auto& r : j)
            responses.push_back({r.at("t_ms").get<std::int64_t>(), r.at("help").get<bool>()});
    }

    rt::Runtime runtime(m, scaler, dc);
    rt::OutboxSink sink{fs::path(a.outbox)};
    rt::Dispatcher disp(sink);
    auto res = rt::run_replay(runtime, rec, rec.profile, responses, disp);

    std::size_t notifications = 0, alert_actions = 0;
    for (const auto& act : res.actions)
        (act.kind == rt::ActionKind::NotifyUser ? notifications : alert_actions) += 1;

    json events = json::array();
    for (const auto& e : res.events)
        events.push_back({{"event_id", e.event_id}, {"t_ms", e.t_ms}, {"score", e.score}});

    return {{"command", "detect"},
            {"recording_id", rec.meta.recording_id},
            {"source", a.live_sim ? "live_sim" : "recording"},
            {"threshold", dc.tau},
            {"events", res.events.size()},
            {"notifications", notifications},
            {"alert_dispatches", alert_actions},
            {"deliveries", rt::read_outbox(fs::path(a.outbox)).size()},
            {"undelivered", disp.dead().size()},
            {"final_phase", phase_name(res.final_state.phase)},
            {"outbox", a.outbox},
            {"event_details", events}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wearable fall-detection pipeline: simulation, collection, training, detection"};
    app.require_subcommand(1);
    app.fallthrough();
    app.failure_message(CLI::FailureMessage::help);
    std::string config_path;
    app.add_option("--config", config_path, "shared JSON config file");

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "synthesize labelled recordings to a directory");
    c_sim->add_option("--seed", sim.seed, "scenario seed");
    c_sim->add_option("--recordings", sim.recordings, "number of recordings");
    c_sim->add_option("--fall-ratio", sim.fall_ratio, "target fall window ratio");
    c_sim->add_option("--mean-duration-ms", sim.mean_duration_ms, "mean recording length");
    c_sim->add_option("--subjects", sim.subjects, "number of simulated subjects");
    c_sim->add_flag("--oracle-labels", sim.oracle_labels, "timestamp labels at impact onset");
    c_sim->add_option("--scenario", sim.scenario_file, "scenario config JSON file");
    c_sim->add_option("--out", sim.out_dir, "output directory")->required();

    std::string srv_store, srv_allow = "127.0.0.1";
    std::uint16_t srv_port = 0;
    auto* c_srv = app.add_subcommand("serve", "run the ingest server until interrupted");
    c_srv->add_option("--port", srv_port, "TCP port (0 = ephemeral)");
    c_srv->add_option("--allowlist", srv_allow, "comma-separated allowed source addresses");
    auto* srv_store_opt = c_srv->add_option("--store-dir", srv_store, "store directory");

    CollectArgs col;
    std::string col_allow;
    auto* c_col = app.add_subcommand("collect", "upload recordings through the chunk protocol");
    c_col->add_option("--recordings", col.inputs, "recording files or directories")->required();
    auto* col_store_opt = c_col->add_option("--store-dir", col.store_dir, "store directory");
    c_col->add_option("--source-addr", col.source_addr, "client address presented to the server");
    c_col->add_option("--allowlist", col_allow, "comma-separated allowed source addresses");
    c_col->add_flag("--cancel", col.cancel, "cancel each session instead of saving");
    c_col->add_flag("--net", col.net, "use real TCP sockets instead of in-process channel");
    c_col->add_option("--port", col.port, "TCP port for --net (0 = ephemeral)");
    c_col->add_option("--drop-prob", col.drop_prob, "per-leg drop probability")
        ->check(CLI::Range(0.0, 1.0));
    c_col->add_option("--reorder-prob", col.reorder_prob, "request reorder probability")
        ->check(CLI::Range(0.0, 1.0));
    auto* col_seed_opt = c_col->add_option("--seed", col.fault_seed, "fault channel seed");
    c_col->add_option("--flush-rounds", col.flush_rounds, "retry rounds before giving up");

    PreprocessArgs pre;
    auto* c_pre = app.add_subcommand("preprocess", "window, label, split and scale recordings");
    auto* pre_store_opt = c_pre->add_option("--store-dir", pre.store_dir, "read from a store");
    c_pre->add_option("--recordings", pre.inputs, "recording files or directories");
    auto* pre_w_opt = c_pre->add_option("--w", pre.w, "window length in intervals");
    auto* pre_lag_opt = c_pre->add_option("--lag-ms", pre.lag_ms, "label lag in ms");
    auto* pre_stride_opt = c_pre->add_option("--stride", pre.stride, "window stride");
    auto* pre_scaler_opt = c_pre->add_option("--scaler", pre.scaler,
                                             "standardise | normalise | log_standardise");
    auto* pre_seed_opt = c_pre->add_option("--seed", pre.seed, "split shuffle seed");
    c_pre->add_option("--out", pre.out, "dataset output file")->required();
    c_pre->add_option("--scaler-out", pre.scaler_out, "standalone scaler JSON output");
    c_pre->add_option("--id", pre.id, "dataset id (default: output file stem)");

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "fit a classifier on a dataset");
    c_tr->add_option("--dataset", tr.dataset, "dataset file")->required();
    auto* tr_model_opt = c_tr->add_option(
        "--model", tr.model,
        "threshold | linear_regression | knn | gaussian_nb | bernoulli_nb | mlp");
    auto* tr_k_opt = c_tr->add_option("--k", tr.k, "KNN neighbour count");
    auto* tr_width_opt = c_tr->add_option("--width", tr.width, "MLP hidden width");
    auto* tr_epochs_opt = c_tr->add_option("--epochs", tr.epochs, "MLP training epochs");
    c_tr->add_option("--lr", tr.lr, "MLP learning rate");
    c_tr->add_option("--weight-decay", tr.weight_decay, "L2 penalty");
    c_tr->add_option("--momentum", tr.momentum, "SGD momentum");
    c_tr->add_option("--batch", tr.batch, "minibatch size");
    auto* tr_seed_opt = c_tr->add_option("--seed", tr.seed, "training seed");
    c_tr->add_option("--out", tr.out, "model output file")->required();

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "score a model on a dataset split");
    c_ev->add_option("--model", ev.model, "model file")->required();
    c_ev->add_option("--dataset", ev.dataset, "dataset file")->required();
    c_ev->add_option("--split", ev.split, "train | val | test");
    c_ev->add_option("--report", ev.report, "write the full report JSON here");
    c_ev->add_option("--roc-csv", ev.roc_csv, "write threshold,fpr,tpr rows here");

    DetectArgs det;
    auto* c_det = app.add_subcommand("detect", "replay a recording through the live detector");
    c_det->add_option("--model", det.model, "model file")->required();
    c_det->add_option("--scaler", det.scaler, "scaler JSON file")->required();
    c_det->add_option("--recording", det.recording, "recording file to replay");
    c_det->add_flag("--live-sim", det.live_sim, "synthesize and stream a session instead");
    auto* det_seed_opt = c_det->add_option("--seed", det.seed, "live-sim scenario seed");
    c_det->add_option("--sim-duration-ms", det.sim_duration_ms, "live-sim session length");
    auto* det_tau_opt = c_det->add_option("--threshold", det.threshold, "detection threshold");
    c_det->add_option("--refractory-ms", det.refractory_ms, "event refractory window");
    c_det->add_option("--escalation-ms", det.escalation_ms, "escalation deadline");
    c_det->add_option("--outbox", det.outbox, "alert outbox JSONL path")->required();
    c_det->add_option("--responses", det.responses, "user response script JSON");
    auto* det_lat_opt = c_det->add_option("--lat", det.location.latitude, "alert latitude");
    auto* det_lon_opt = c_det->add_option("--lon", det.location.longitude, "alert longitude");
    auto* det_addr_opt = c_det->add_option("--address", det.location.postal_address,
                                           "alert postal address");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    }

    try {
        CliConfig cfg;
        if (!config_path.empty()) cfg = load_cli_config(config_path);
        auto overlay = [](const CLI::Option* opt, auto& var, const auto& maybe) {
            if (opt->count() == 0 && maybe) var = *maybe;
        };

        json summary;
        if (*c_sim) {
            summary = run_simulate(sim, c_sim);
        } else if (*c_srv) {
            overlay(srv_store_opt, srv_store, cfg.store_dir);
            if (srv_store.empty()) throw falldet::ConfigError("serve needs --store-dir");
            if (c_srv->count("--port") == 0 && cfg.port) srv_port = *cfg.port;
            auto allow = split_csv(srv_allow);
            if (c_srv->count("--allowlist") == 0 && cfg.allowlist) allow = *cfg.allowlist;
            summary = run_serve(srv_store, allow, srv_port);
        } else if (*c_col) {
            overlay(col_store_opt, col.store_dir, cfg.store_dir);
            overlay(col_seed_opt, col.fault_seed, cfg.seed);
            if (col.store_dir.empty()) throw falldet::ConfigError("collect needs --store-dir");
            if (c_col->count("--source-addr") == 0 && cfg.source_addr)
                col.source_addr = *cfg.source_addr;
            if (!col_allow.empty())
                col.allowlist = split_csv(col_allow);
            else if (cfg.allowlist)
                col.allowlist = *cfg.allowlist;
            summary = run_collect(col);
        } else if (*c_pre) {
            overlay(pre_store_opt, pre.store_dir, cfg.store_dir);
            overlay(pre_w_opt, pre.w, cfg.w);
            overlay(pre_lag_opt, pre.lag_ms, cfg.lag_ms);
            overlay(pre_stride_opt, pre.stride, cfg.stride);
            overlay(pre_scaler_opt, pre.scaler, cfg.scaler);
            overlay(pre_seed_opt, pre.seed, cfg.seed);
            summary = run_preprocess(pre);
        } else if (*c_tr) {
            overlay(tr_model_opt, tr.model, cfg.model);
            overlay(tr_k_opt, tr.k, cfg.k);
            overlay(tr_width_opt, tr.width, cfg.width);
            overlay(tr_epochs_opt, tr.epochs, cfg.epochs);
            overlay(tr_seed_opt, tr.seed, cfg.seed);
            summary = run_train(tr);
        } else if (*c_ev) {
            summary = run_eval(ev);
        } else if (*c_det) {
            overlay(det_seed_opt, det.seed, cfg.seed);
            det.threshold_set = det_tau_opt->count() > 0;
            if (cfg.location) {
                if (det_lat_opt->count() == 0) det.location.latitude = cfg.location->latitude;
                if (det_lon_opt->count() == 0) det.location.longitude = cfg.location->longitude;
                if (det_addr_opt->count() == 0)
                    det.location.postal_address = cfg.location->postal_address;
            }
            summary = run_detect(det);
        }
        std::cout << summary.dump() << std::endl;
        return 0;
    } catch (const falldet::Error& e) {
        std::cerr << json{{"error", error_kind(e)}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    }
}
