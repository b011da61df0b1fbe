#pragma once

// In-process HTTP receiver for alert posts. Fails the first `fail_first`
// requests with 503, then accepts and stores the rest.

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace stub {

struct Received {
  std::string body;
  std::string idempotency_key;
  std::string content_type;
};

class WebhookStub {
public:
  explicit WebhookStub(int fail_first = 0) : fail_first_(fail_first) {
    server_.Post("/alerts", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      ++requests_;
      if (requests_ <= fail_first_) {
        res.status = 503;
        return;
      }
      accepted_.push_back({req.body, req.get_header_value("Idempotency-Key"), req.get_header_value("Content-Type")});
      res.status = 200;
      res.set_content("{}", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~WebhookStub() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/alerts"; }

  int requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

  std::vector<Received> accepted() const {
    std::lock_guard lock(mu_);
    return accepted_;
  }

  /// Accepted posts with distinct idempotency keys.
  std::size_t distinct_deliveries() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> keys;
    for (const auto& r : accepted_) {
      if (std::find(keys.begin(), keys.end(), r.idempotency_key) == keys.end()) keys.push_back(r.idempotency_key);
    }
    return keys.size();
  }

private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  mutable std::mutex mu_;
  int fail_first_;
  int requests_ = 0;
  std::vector<Received> accepted_;
};

}  // namespace stub
