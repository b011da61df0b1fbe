#include <gtest/gtest.h>

#include <filesystem>

#include <unistd.h>

#include "firenet/alert.hpp"
#include "webhook_stub.hpp"

using namespace firenet;
namespace fs = std::filesystem;

namespace {

AlertMessage fire_alert(std::int64_t t, std::optional<std::string> ref = std::nullopt) {
  return {EventKind::Fire, t, iso8601_utc(t), 0.93, std::move(ref)};
}

struct RecordingSleeper {
  std::shared_ptr<std::vector<std::int64_t>> waits = std::make_shared<std::vector<std::int64_t>>();
  void operator()(std::chrono::milliseconds d) const { waits->push_back(d.count()); }
};

fs::path temp_dir(const std::string& name) {
  return fs::temp_directory_path() / ("firenet_alert_" + std::to_string(::getpid()) + "_" + name);
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

class CountingTransport : public AlertTransport {
public:
  explicit CountingTransport(int fail_first) : fail_first_(fail_first) {}
  TransportResult post(const std::string&, const std::string&) override {
    ++calls;
    if (calls <= fail_first_) return {false, 0, "down"};
    return {true, 200, {}};
  }
  int calls = 0;

private:
  int fail_first_;
};

}  // namespace

TEST(AlertJson, Fields) {
  const auto j = alert_json(fire_alert(1500, "abc"));
  EXPECT_EQ(j["event"], "fire");
  EXPECT_EQ(j["timestamp"], "1970-01-01T00:00:01.500Z");
  EXPECT_DOUBLE_EQ(j["confidence"].get<double>(), 0.93);
  EXPECT_EQ(j["snapshot_ref"], "abc");
  EXPECT_EQ(j["idempotency_key"], "fire@1970-01-01T00:00:01.500Z");
  EXPECT_TRUE(alert_json(fire_alert(0))["snapshot_ref"].is_null());
}

TEST(Webhook, DeliversBodyAndHeaders) {
  stub::WebhookStub server;
  Notifier n(std::make_shared<HttpTransport>(server.url()));
  const auto r = n.send(fire_alert(2000, "ref1"));
  EXPECT_TRUE(r.delivered);
  EXPECT_EQ(r.attempts, 1);
  const auto got = server.accepted();
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].idempotency_key, "fire@1970-01-01T00:00:02.000Z");
  EXPECT_EQ(got[0].content_type, "application/json");
  const auto body = nlohmann::json::parse(got[0].body);
  EXPECT_EQ(body, alert_json(fire_alert(2000, "ref1")));
}

TEST(Webhook, FailTwiceThenSucceedDeliversOnce) {
  stub::WebhookStub server(2);
  RecordingSleeper sleeper;
  Notifier n(std::make_shared<HttpTransport>(server.url()), RetryPolicy{}, sleeper);
  const auto r = n.send(fire_alert(3000));
  EXPECT_TRUE(r.delivered);
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(server.requests(), 3);
  EXPECT_EQ(server.accepted().size(), 1u);
  EXPECT_EQ(server.distinct_deliveries(), 1u);
  EXPECT_EQ(*sleeper.waits, (std::vector<std::int64_t>{100, 200}));
}

TEST(Webhook, ExhaustedRetriesReportFailure) {
  stub::WebhookStub server(100);
  RecordingSleeper sleeper;
  Notifier n(std::make_shared<HttpTransport>(server.url()), RetryPolicy{}, sleeper);
  const auto r = n.send(fire_alert(4000));
  EXPECT_FALSE(r.delivered);
  EXPECT_EQ(r.attempts, 4);
  EXPECT_NE(r.last_error.find("503"), std::string::npos);
  EXPECT_EQ(*sleeper.waits, (std::vector<std::int64_t>{100, 200, 400}));
}

TEST(Webhook, UnreachableEndpointFailsWithoutThrowing) {
  int port = 0;
  {
    stub::WebhookStub closed;
    port = std::stoi(closed.url().substr(closed.url().rfind(':') + 1));
  }
  RetryPolicy p;
  p.max_retries = 1;
  Notifier n(std::make_shared<HttpTransport>("http://127.0.0.1:" + std::to_string(port) + "/alerts",
                                             std::chrono::milliseconds(500)),
             p, RecordingSleeper{});
  const auto r = n.send(fire_alert(0));
  EXPECT_FALSE(r.delivered);
  EXPECT_EQ(r.attempts, 2);
}

TEST(Webhook, DuplicateDeliveryCarriesSameKey) {
  stub::WebhookStub server;
  Notifier n(std::make_shared<HttpTransport>(server.url()));
  n.send(fire_alert(5000));
  n.send(fire_alert(5000));
  const auto got = server.accepted();
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].idempotency_key, got[1].idempotency_key);
  EXPECT_EQ(server.distinct_deliveries(), 1u);
}

TEST(Endpoint, Parsing) {
  const auto e = parse_endpoint("http://host:81/a/b");
  EXPECT_EQ(e.scheme_host_port, "http://host:81");
  EXPECT_EQ(e.path, "/a/b");
  EXPECT_EQ(parse_endpoint("http://host").path, "/");
  EXPECT_THROW(parse_endpoint("ftp://host/x"), std::invalid_argument);
  EXPECT_THROW(parse_endpoint("host/x"), std::invalid_argument);
}

TEST(SnapshotStore, ContentAddressedRoundTrip) {
  const auto dir = temp_dir("store");
  LocalSnapshotStore store(dir);
  const auto data = bytes_of("frame bytes");
  const auto ref = upload_snapshot(store, data);
  EXPECT_EQ(ref, content_ref(data));
  EXPECT_EQ(ref.size(), 64u);
  EXPECT_EQ(upload_snapshot(store, data), ref);
  EXPECT_EQ(store.get(ref), data);
  EXPECT_TRUE(fs::exists(dir / ref));
  EXPECT_THROW(upload_snapshot(store, std::vector<std::uint8_t>{}), std::invalid_argument);
  EXPECT_THROW(store.get("missing"), StoreError);
  fs::remove_all(dir);
}

TEST(ContentRef, KnownDigest) {
  EXPECT_EQ(content_ref(bytes_of("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Dispatcher, UploadsThenDeliversAndIsolatesFailures) {
  const auto dir = temp_dir("dispatch");
  auto store = std::make_shared<LocalSnapshotStore>(dir);
  auto transport = std::make_shared<CountingTransport>(100);
  RetryPolicy p;
  p.max_retries = 2;

  FusionConfig cfg;
  cfg.fire_confirm_k = 1;
  const auto snap = std::make_shared<const std::vector<std::uint8_t>>(bytes_of("jpeg"));
  const auto out = fusion_step({}, VisionEvent{{0, 0, 0.9, true}, snap}, cfg);
  ASSERT_EQ(out.alerts.size(), 1u);

  const FusionState before = out.state;
  {
    AlertDispatcher d(Notifier(transport, p, RecordingSleeper{}), store);
    d.submit(out.alerts, out.uploads);
    d.flush();
    const auto records = d.records();
    ASSERT_EQ(records.size(), 1u);
    EXPECT_FALSE(records[0].delivery.delivered);
    EXPECT_EQ(records[0].delivery.attempts, 3);
    EXPECT_FALSE(records[0].upload_error);
  }
  EXPECT_EQ(transport->calls, 3);
  EXPECT_EQ(store->get(*out.alerts[0].snapshot_ref), *snap);
  // The fusion state held by the caller is untouched by delivery failure.
  EXPECT_EQ(out.state.state, before.state);
  EXPECT_EQ(out.state.last_fire_alert_ms, before.last_fire_alert_ms);
  fs::remove_all(dir);
}

TEST(Dispatcher, DryRunPrintsBodies) {
  std::vector<std::string> printed;
  AlertDispatcher d(Notifier(std::make_shared<DryRunTransport>([&](const std::string& b) { printed.push_back(b); })),
                    nullptr);
  d.submit({fire_alert(1), fire_alert(2)}, {});
  d.flush();
  ASSERT_EQ(printed.size(), 2u);
  EXPECT_EQ(nlohmann::json::parse(printed[1])["timestamp"], iso8601_utc(2));
}
