#pragma once

// POSIX TCP carrier for the framed wire protocol: a thread-per-connection
// server bound to 127.0.0.1 and a blocking client channel.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "falldet/transport.hpp"

namespace falldet::net {

namespace posix {

inline bool write_all(int fd, const char* data, std::size_t n) {
    while (n > 0) {
        ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
        if (k < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        data += k;
        n -= static_cast<std::size_t>(k);
    }
    return true;
}

// Appends up to 64KiB to buf; false on EOF, error, or timeout.
inline bool read_some(int fd, std::string& buf) {
    char tmp[65536];
    while (true) {
        ssize_t k = ::recv(fd, tmp, sizeof(tmp), 0);
        if (k < 0 && errno == EINTR) continue;
        if (k <= 0) return false;
        buf.append(tmp, static_cast<std::size_t>(k));
        return true;
    }
}

}  // namespace posix

class TcpServer {
  public:
    // port 0 binds an ephemeral port; read it back via port().
    TcpServer(Server& server, std::uint16_t port) : server_(server) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw StoreFailure("socket: " + std::string(std::strerror(errno)));
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(port);
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
            auto err = std::string(std::strerror(errno));
            ::close(listen_fd_);
            throw StoreFailure("bind: " + err);
        }
        socklen_t len = sizeof(addr);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        if (::listen(listen_fd_, 16) < 0) {
            auto err = std::string(std::strerror(errno));
            ::close(listen_fd_);
            throw StoreFailure("listen: " + err);
        }
        acceptor_ = std::thread([this] { accept_loop(); });
    }

    ~TcpServer() { stop(); }

    std::uint16_t port() const { return port_; }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        if (acceptor_.joinable()) acceptor_.join();
        {
            // wake connection threads blocked in recv; they close their own fds
            std::lock_guard lock(conns_mu_);
            for (int fd : active_fds_) ::shutdown(fd, SHUT_RDWR);
        }
        std::vector<std::thread> threads;
        {
            std::lock_guard lock(conns_mu_);
            threads.swap(conns_);
        }
        for (auto& t : threads)
            if (t.joinable()) t.join();
    }

  private:
    void accept_loop() {
        while (!stopping_) {
            sockaddr_in peer{};
            socklen_t len = sizeof(peer);
            int fd = ::accept(listen_fd_, reinterpret_cast<sockaddr*>(&peer), &len);
            if (fd < 0) {
                if (errno == EINTR) continue;
                break;  // listener closed
            }
            char ip[INET_ADDRSTRLEN] = {0};
            ::inet_ntop(AF_INET, &peer.sin_addr, ip, sizeof(ip));
            std::lock_guard lock(conns_mu_);
            active_fds_.insert(fd);
            conns_.emplace_back([this, fd, addr = std::string(ip)] { serve_conn(fd, addr); });
        }
    }

    void serve_conn(int fd, const std::string& source_addr) {
        std::string rx;
        std::size_t pos = 0;
        while (!stopping_) {
            std::optional<std::string> frame;
            try {
                frame = read_frame(rx, pos);
            } catch (const MalformedDocument&) {
                break;  // oversized frame; drop the connection
            }
            if (!frame) {
                if (pos > 0) {
                    rx.erase(0, pos);
                    pos = 0;
                }
                if (!posix::read_some(fd, rx)) break;
                continue;
            }
            WireResponse resp;
            try {
                auto msg = wire_message_from_json(json::parse(*frame));
                resp = server_.handle(msg, source_addr);
            } catch (const std::exception& e) {
                resp.status = "error";
                resp.error_kind = "malformed";
                resp.error = e.what();
            }
            std::string out;
            append_frame(out, wire_response_to_json(resp).dump());
            if (!posix::write_all(fd, out.data(), out.size())) break;
        }
        std::lock_guard lock(conns_mu_);
        active_fds_.erase(fd);
        ::close(fd);
    }

    Server& server_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::thread acceptor_;
    std::mutex conns_mu_;
    std::vector<std::thread> conns_;
    std::set<int> active_fds_;
    std::atomic<bool> stopping_{false};
};

class TcpClientChannel final : public Channel {
  public:
    TcpClientChannel(const std::string& host, std::uint16_t port, int timeout_ms = 5000) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw StoreFailure("socket: " + std::string(std::strerror(errno)));
        timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
            ::close(fd_);
            throw ConfigError("bad address: " + host);
        }
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
            auto err = std::string(std::strerror(errno));
            ::close(fd_);
            throw StoreFailure("connect " + host + ":" + std::to_string(port) + ": " + err);
        }
    }

    ~TcpClientChannel() override {
        if (fd_ >= 0) ::close(fd_);
    }

    TcpClientChannel(const TcpClientChannel&) = delete;
    TcpClientChannel& operator=(const TcpClientChannel&) = delete;

    std::optional<WireResponse> roundtrip(const WireMessage& msg) override {
        std::string out;
        append_frame(out, wire_message_to_json(msg).dump());
        if (!posix::write_all(fd_, out.data(), out.size())) return std::nullopt;
        while (true) {
            auto frame = read_frame(rx_, rxpos_);
            if (frame) {
                if (rxpos_ > 0) {
                    rx_.erase(0, rxpos_);
                    rxpos_ = 0;
                }
                try {
                    return wire_response_from_json(json::parse(*frame));
                } catch (const std::exception&) {
                    return std::nullopt;
                }
            }
            if (!posix::read_some(fd_, rx_)) return std::nullopt;  // EOF or timeout
        }
    }

  private:
    int fd_ = -1;
    std::string rx_;
    std::size_t rxpos_ = 0;
};

}  // namespace falldet::net
