// Local HTTP server that records every request and tracks how many are being
// served at once.
#pragma once

#include <httplib.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace fake {

struct Seen {
  std::string path;
  std::string body;
  std::string authorization;
};

class CountingServer {
 public:
  // Handler gets the 1-based request number and the parsed body; it sets the
  // response. Each request is held for `hold` to make overlap observable.
  using Handler = std::function<void(int n, const nlohmann::json& body, httplib::Response& res)>;

  explicit CountingServer(Handler handler, std::chrono::milliseconds hold = std::chrono::milliseconds(0))
      : handler_(std::move(handler)), hold_(hold) {
    server_.new_task_queue = [] { return new httplib::ThreadPool(64); };
    server_.Post(".*", [this](const httplib::Request& req, httplib::Response& res) {
      int now = ++in_flight_;
      int prev = max_in_flight_.load();
      while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
      }
      int n = ++requests_;
      {
        std::lock_guard<std::mutex> lock(mu_);
        seen_.push_back({req.path, req.body, req.get_header_value("Authorization")});
      }
      if (hold_.count()) std::this_thread::sleep_for(hold_);
      auto body = nlohmann::json::parse(req.body, nullptr, false);
      handler_(n, body, res);
      --in_flight_;
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~CountingServer() {
    server_.stop();
    thread_.join();
  }

  std::string url(const std::string& path = "/v1/endpoint") const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }
  int requests() const { return requests_.load(); }
  int max_in_flight() const { return max_in_flight_.load(); }
  std::vector<Seen> seen() const {
    std::lock_guard<std::mutex> lock(mu_);
    return seen_;
  }

 private:
  Handler handler_;
  std::chrono::milliseconds hold_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  std::atomic<int> requests_{0};
  mutable std::mutex mu_;
  std::vector<Seen> seen_;
};

inline void reply_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

// A port nothing listens on: bound once, then released.
inline int closed_port() {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace fake
