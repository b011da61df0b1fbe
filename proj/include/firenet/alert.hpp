#pragma once

// Remote alerting: a content-addressed snapshot store and a webhook notifier
// with bounded retries. The notifier body is JSON:
//
//   {"event": "fire"|"smoke", "timestamp": "<ISO-8601>", "confidence": <number>,
//    "snapshot_ref": "<sha256 hex>"|null, "idempotency_key": "<kind>@<timestamp>"}

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "firenet/content_hash.hpp"
#include "firenet/fusion.hpp"

namespace firenet {

class StoreError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Snapshot store.

class SnapshotStore {
public:
  virtual ~SnapshotStore() = default;
  /// Stores `bytes` and returns its content reference.
  virtual std::string put(std::span<const std::uint8_t> bytes) = 0;
  virtual std::vector<std::uint8_t> get(const std::string& ref) const = 0;
};

/// Directory of files named by the SHA-256 of their contents.
class LocalSnapshotStore : public SnapshotStore {
public:
  explicit LocalSnapshotStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) {
      throw StoreError("cannot create snapshot directory " + dir_.string() + ": " + ec.message());
    }
  }

  const std::filesystem::path& directory() const { return dir_; }

  std::string put(std::span<const std::uint8_t> bytes) override {
    const std::string ref = content_ref(bytes);
    const auto target = dir_ / ref;
    if (std::filesystem::exists(target)) return ref;
    const auto tmp = dir_ / (ref + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (!out) throw StoreError("failed writing snapshot " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) throw StoreError("failed publishing snapshot " + target.string() + ": " + ec.message());
    return ref;
  }

  std::vector<std::uint8_t> get(const std::string& ref) const override {
    std::ifstream in(dir_ / ref, std::ios::binary);
    if (!in) throw StoreError("unknown snapshot " + ref);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }

private:
  std::filesystem::path dir_;
};

inline std::string upload_snapshot(SnapshotStore& store, std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw std::invalid_argument("refusing to upload an empty snapshot");
  return store.put(bytes);
}

// ---------------------------------------------------------------------------
// Notifier.

inline nlohmann::json alert_json(const AlertMessage& msg) {
  nlohmann::json j;
  j["event"] = to_string(msg.event_kind);
  j["timestamp"] = msg.timestamp;
  j["confidence"] = msg.confidence;
  j["snapshot_ref"] = msg.snapshot_ref ? nlohmann::json(*msg.snapshot_ref) : nlohmann::json(nullptr);
  j["idempotency_key"] = msg.idempotency_key();
  return j;
}

struct TransportResult {
  bool ok = false;
  int status = 0;
  std::string error;
};

/// One delivery attempt of a serialized alert.
class AlertTransport {
public:
  virtual ~AlertTransport() = default;
  virtual TransportResult post(const std::string& body, const std::string& idempotency_key) = 0;
};

struct Endpoint {
  std::string scheme_host_port;  // e.g. http://127.0.0.1:8080
  std::string path;              // e.g. /alerts
};

inline Endpoint parse_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.substr(0, scheme) != "http") {
    throw std::invalid_argument("endpoint must be an http:// URL, got '" + url + "'");
  }
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

/// HTTP POST with content-type application/json.
class HttpTransport : public AlertTransport {
public:
  explicit HttpTransport(const std::string& url, std::chrono::milliseconds timeout = std::chrono::seconds(5))
      : endpoint_(parse_endpoint(url)), client_(endpoint_.scheme_host_port) {
    const auto secs = static_cast<time_t>(timeout.count() / 1000);
    const auto usecs = static_cast<time_t>((timeout.count() % 1000) * 1000);
    client_.set_connection_timeout(secs, usecs);
    client_.set_read_timeout(secs, usecs);
    client_.set_write_timeout(secs, usecs);
  }

  TransportResult post(const std::string& body, const std::string& idempotency_key) override {
    httplib::Headers headers{{"Idempotency-Key", idempotency_key}};
    auto res = client_.Post(endpoint_.path, headers, body, "application/json");
    if (!res) return {false, 0, "transport error: " + httplib::to_string(res.error())};
    if (res->status < 200 || res->status >= 300) {
      return {false, res->status, "HTTP " + std::to_string(res->status)};
    }
    return {true, res->status, {}};
  }

private:
  Endpoint endpoint_;
  httplib::Client client_;
};

struct RetryPolicy {
  int max_retries = 3;  // attempts = 1 + max_retries
  std::chrono::milliseconds initial_backoff{100};
  double multiplier = 2.0;
};

struct DeliveryResult {
  bool delivered = false;
  int attempts = 0;
  std::string idempotency_key;
  std::string last_error;
};

class Notifier {
public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Notifier(std::shared_ptr<AlertTransport> transport, RetryPolicy policy = {}, Sleeper sleeper = {})
      : transport_(std::move(transport)), policy_(policy), sleeper_(std::move(sleeper)) {
    if (!transport_) throw std::invalid_argument("notifier needs a transport");
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }

  const RetryPolicy& policy() const { return policy_; }

  /// At-least-once delivery: every attempt carries the same idempotency key.
  DeliveryResult send(const AlertMessage& msg) {
    DeliveryResult r;
    r.idempotency_key = msg.idempotency_key();
    const std::string body = alert_json(msg).dump();
    auto backoff = policy_.initial_backoff;
    for (int attempt = 0; attempt <= policy_.max_retries; ++attempt) {
      if (attempt > 0) {
        sleeper_(backoff);
        backoff = std::chrono::milliseconds(
            static_cast<std::int64_t>(static_cast<double>(backoff.count()) * policy_.multiplier));
      }
      ++r.attempts;
      TransportResult t;
      try {
        t = transport_->post(body, r.idempotency_key);
      } catch (const std::exception& e) {
        t = {false, 0, e.what()};
      }
      if (t.ok) {
        r.delivered = true;
        r.last_error.clear();
        return r;
      }
      r.last_error = t.error;
    }
    return r;
  }

private:
  std::shared_ptr<AlertTransport> transport_;
  RetryPolicy policy_;
  Sleeper sleeper_;
};

inline DeliveryResult send_alert(Notifier& notifier, const AlertMessage& msg) { return notifier.send(msg); }

/// Prints alerts instead of delivering them.
class DryRunTransport : public AlertTransport {
public:
  explicit DryRunTransport(std::function<void(const std::string&)> out) : out_(std::move(out)) {}
  TransportResult post(const std::string& body, const std::string&) override {
    out_(body);
    return {true, 200, {}};
  }

private:
  std::function<void(const std::string&)> out_;
};

// ---------------------------------------------------------------------------
// Background dispatch: uploads referenced snapshots, then sends the alert.
// Runs on its own thread so fusion transitions never wait on the network.

struct DispatchRecord {
  AlertMessage alert;
  DeliveryResult delivery;
  std::optional<std::string> upload_error;
};

class AlertDispatcher {
public:
  AlertDispatcher(Notifier notifier, std::shared_ptr<SnapshotStore> store)
      : notifier_(std::move(notifier)), store_(std::move(store)), worker_([this] { run(); }) {}

  AlertDispatcher(const AlertDispatcher&) = delete;
  AlertDispatcher& operator=(const AlertDispatcher&) = delete;

  ~AlertDispatcher() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  void submit(std::vector<AlertMessage> alerts, std::vector<SnapshotUpload> uploads) {
    if (alerts.empty() && uploads.empty()) return;
    {
      std::lock_guard lock(mu_);
      queue_.push_back({std::move(alerts), std::move(uploads)});
    }
    cv_.notify_all();
  }

  /// Blocks until every submitted job has been processed.
  void flush() {
    std::unique_lock lock(mu_);
    idle_cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
  }

  std::vector<DispatchRecord> records() const {
    std::lock_guard lock(mu_);
    return records_;
  }

private:
  struct Job {
    std::vector<AlertMessage> alerts;
    std::vector<SnapshotUpload> uploads;
  };

  void run() {
    for (;;) {
      Job job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
        busy_ = true;
      }
      std::optional<std::string> upload_error;
      for (const auto& u : job.uploads) {
        try {
          if (store_ && u.bytes) {
            const auto ref = upload_snapshot(*store_, *u.bytes);
            if (ref != u.ref) upload_error = "store returned " + ref + " for " + u.ref;
          }
        } catch (const std::exception& e) {
          upload_error = e.what();
        }
      }
      std::vector<DispatchRecord> done;
      for (const auto& a : job.alerts) done.push_back({a, notifier_.send(a), upload_error});
      {
        std::lock_guard lock(mu_);
        records_.insert(records_.end(), done.begin(), done.end());
        busy_ = false;
      }
      idle_cv_.notify_all();
    }
  }

  Notifier notifier_;
  std::shared_ptr<SnapshotStore> store_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<Job> queue_;
  std::vector<DispatchRecord> records_;
  bool stopping_ = false;
  bool busy_ = false;
  std::thread worker_;
};

}  // namespace firenet
