#pragma once

// Detection-unit controller: merges vision detections and smoke-sensor
// readings into distinct fire / smoke alarm commands and alert messages.
//
// States: Idle, SmokeAlert, FireAlert.
//   * smoke_debounce_n consecutive readings >= smoke_threshold raise smoke;
//     the same number of consecutive readings below it clear it.
//   * fire_confirm_k consecutive fire detections raise fire; the same number
//     of consecutive non-fire detections clear it.
//   * FireAlert dominates: smoke readings never change state while in it.
//   * Alarm commands of a kind are only ever issued by events of that kind;
//     clearing an alert issues AllOff.
//   * At most one alert per event kind per cooldown_ms; while an alert state
//     persists, a reminder alert is sent each time the cooldown has elapsed.

#include <cstdint>
#include <ctime>
#include <istream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "firenet/content_hash.hpp"
#include "firenet/inference.hpp"

namespace firenet {

class FusionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kAdcMax = 1023;

struct SmokeReading {
  std::int64_t timestamp_ms = 0;
  int adc_value = 0;

  bool operator==(const SmokeReading&) const = default;
};

using SnapshotBytes = std::shared_ptr<const std::vector<std::uint8_t>>;

struct VisionEvent {
  Detection detection;
  SnapshotBytes snapshot;  // encoded frame, may be null
};

using UnitEvent = std::variant<VisionEvent, SmokeReading>;

inline std::int64_t event_time(const UnitEvent& e) {
  return std::visit(
      [](const auto& v) -> std::int64_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, VisionEvent>) return v.detection.timestamp_ms;
        else return v.timestamp_ms;
      },
      e);
}

enum class AlarmKind { FireAlarmOn, SmokeAlarmOn, AllOff };

inline const char* to_string(AlarmKind k) {
  switch (k) {
    case AlarmKind::FireAlarmOn: return "FireAlarmOn";
    case AlarmKind::SmokeAlarmOn: return "SmokeAlarmOn";
    case AlarmKind::AllOff: return "AllOff";
  }
  return "?";
}

struct AlarmCommand {
  AlarmKind kind;
  std::int64_t timestamp_ms = 0;

  bool operator==(const AlarmCommand&) const = default;
};

enum class EventKind { Fire, Smoke };

inline const char* to_string(EventKind k) { return k == EventKind::Fire ? "fire" : "smoke"; }

/// UTC ISO-8601 with millisecond precision, e.g. 1970-01-01T00:00:01.500Z.
inline std::string iso8601_utc(std::int64_t timestamp_ms) {
  std::int64_t secs = timestamp_ms / 1000;
  std::int64_t ms = timestamp_ms % 1000;
  if (ms < 0) {
    ms += 1000;
    --secs;
  }
  const std::time_t t = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

struct AlertMessage {
  EventKind event_kind = EventKind::Fire;
  std::int64_t timestamp_ms = 0;
  std::string timestamp;  // ISO-8601 of timestamp_ms
  double confidence = 0.0;
  std::optional<std::string> snapshot_ref;

  /// Stable across redeliveries of the same alert.
  std::string idempotency_key() const { return std::string(to_string(event_kind)) + "@" + timestamp; }

  bool operator==(const AlertMessage&) const = default;
};

struct SnapshotUpload {
  std::string ref;
  SnapshotBytes bytes;
};

struct FusionConfig {
  int smoke_threshold = 400;
  std::uint32_t smoke_debounce_n = 3;
  std::uint32_t fire_confirm_k = 3;
  std::int64_t cooldown_ms = 60000;

  void validate() const {
    if (smoke_threshold <= 0 || smoke_threshold > kAdcMax) throw FusionError("smoke_threshold must be in [1, 1023]");
    if (smoke_debounce_n == 0) throw FusionError("smoke_debounce_n must be positive");
    if (fire_confirm_k == 0) throw FusionError("fire_confirm_k must be positive");
    if (cooldown_ms <= 0) throw FusionError("cooldown_ms must be positive");
  }
};

enum class UnitState { Idle, SmokeAlert, FireAlert };

inline const char* to_string(UnitState s) {
  switch (s) {
    case UnitState::Idle: return "Idle";
    case UnitState::SmokeAlert: return "SmokeAlert";
    case UnitState::FireAlert: return "FireAlert";
  }
  return "?";
}

struct FusionState {
  UnitState state = UnitState::Idle;
  std::uint32_t smoke_above = 0;  // consecutive readings >= threshold
  std::uint32_t smoke_below = 0;
  bool smoke_active = false;
  std::uint32_t fire_hits = 0;  // consecutive fire detections
  std::uint32_t fire_misses = 0;
  SnapshotBytes run_snapshot;  // latest snapshot of the current fire run
  std::optional<std::int64_t> last_timestamp;
  std::optional<std::int64_t> last_fire_alert_ms;
  std::optional<std::int64_t> last_smoke_alert_ms;
};

struct FusionOutput {
  FusionState state;
  std::vector<AlarmCommand> commands;
  std::vector<AlertMessage> alerts;
  std::vector<SnapshotUpload> uploads;  // snapshots referenced by `alerts`
};

namespace detail {

inline bool cooldown_open(const std::optional<std::int64_t>& last, std::int64_t now, std::int64_t cooldown) {
  return !last || now - *last >= cooldown;
}

}  // namespace detail

/// One deterministic transition. Throws FusionError (state untouched) when
/// the event is older than the previous one.
inline FusionOutput fusion_step(const FusionState& state, const UnitEvent& event, const FusionConfig& config) {
  config.validate();
  const std::int64_t now = event_time(event);
  if (state.last_timestamp && now < *state.last_timestamp) {
    throw FusionError("event at " + std::to_string(now) + " ms arrived after one at " +
                      std::to_string(*state.last_timestamp) + " ms");
  }
  FusionOutput out{state, {}, {}, {}};
  FusionState& s = out.state;
  s.last_timestamp = now;

  if (const auto* reading = std::get_if<SmokeReading>(&event)) {
    if (reading->adc_value < 0 || reading->adc_value > kAdcMax) {
      throw FusionError("ADC value " + std::to_string(reading->adc_value) + " outside the 10-bit range");
    }
    const bool above = reading->adc_value >= config.smoke_threshold;
    if (above) {
      ++s.smoke_above;
      s.smoke_below = 0;
      if (s.smoke_above >= config.smoke_debounce_n) s.smoke_active = true;
    } else {
      ++s.smoke_below;
      s.smoke_above = 0;
      if (s.smoke_below >= config.smoke_debounce_n) s.smoke_active = false;
    }

    auto smoke_alert = [&] {
      if (!detail::cooldown_open(s.last_smoke_alert_ms, now, config.cooldown_ms)) return;
      out.alerts.push_back({EventKind::Smoke, now, iso8601_utc(now),
                            static_cast<double>(reading->adc_value) / kAdcMax, std::nullopt});
      s.last_smoke_alert_ms = now;
    };

    if (s.state == UnitState::Idle && s.smoke_active && above) {
      s.state = UnitState::SmokeAlert;
      out.commands.push_back({AlarmKind::SmokeAlarmOn, now});
      smoke_alert();
    } else if (s.state == UnitState::SmokeAlert && !s.smoke_active) {
      s.state = UnitState::Idle;
      out.commands.push_back({AlarmKind::AllOff, now});
    } else if (s.state == UnitState::SmokeAlert && above) {
      smoke_alert();
    }
    return out;
  }

  const auto& vision = std::get<VisionEvent>(event);
  if (vision.detection.is_fire) {
    ++s.fire_hits;
    s.fire_misses = 0;
    if (vision.snapshot && !vision.snapshot->empty()) s.run_snapshot = vision.snapshot;
  } else {
    ++s.fire_misses;
    s.fire_hits = 0;
    s.run_snapshot.reset();
  }

  auto fire_alert = [&] {
    if (!detail::cooldown_open(s.last_fire_alert_ms, now, config.cooldown_ms)) return;
    AlertMessage msg{EventKind::Fire, now, iso8601_utc(now), vision.detection.fire_probability, std::nullopt};
    if (s.run_snapshot) {
      msg.snapshot_ref = content_ref(*s.run_snapshot);
      out.uploads.push_back({*msg.snapshot_ref, s.run_snapshot});
    }
    out.alerts.push_back(std::move(msg));
    s.last_fire_alert_ms = now;
  };

  if (s.state != UnitState::FireAlert && s.fire_hits >= config.fire_confirm_k) {
    s.state = UnitState::FireAlert;
    out.commands.push_back({AlarmKind::FireAlarmOn, now});
    fire_alert();
  } else if (s.state == UnitState::FireAlert && s.fire_misses >= config.fire_confirm_k) {
    s.state = UnitState::Idle;
    out.commands.push_back({AlarmKind::AllOff, now});
  } else if (s.state == UnitState::FireAlert && vision.detection.is_fire) {
    fire_alert();
  }
  return out;
}

struct FusionTrace {
  FusionState final_state;
  std::vector<AlarmCommand> commands;
  std::vector<AlertMessage> alerts;
};

/// Folds fusion_step over an event log.
inline FusionTrace replay(const std::vector<UnitEvent>& events, const FusionConfig& config,
                          FusionState initial = {}) {
  FusionTrace t{std::move(initial), {}, {}};
  for (const auto& e : events) {
    auto out = fusion_step(t.final_state, e, config);
    t.final_state = std::move(out.state);
    t.commands.insert(t.commands.end(), out.commands.begin(), out.commands.end());
    t.alerts.insert(t.alerts.end(), out.alerts.begin(), out.alerts.end());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Sensor transport: "timestamp_ms,adc_value" per line.

struct SensorIssue {
  std::size_t line = 0;  // 1-based
  std::string text;
  std::string reason;
};

struct SensorParse {
  std::vector<SmokeReading> readings;
  std::vector<SensorIssue> issues;
};

inline SensorParse parse_sensor_stream(std::istream& in) {
  SensorParse out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;

    long long ts = 0, adc = 0;
    char tail = 0;
    if (std::sscanf(line.c_str(), " %lld , %lld %c", &ts, &adc, &tail) != 2) {
      out.issues.push_back({lineno, line, "expected 'timestamp_ms,adc_value'"});
      continue;
    }
    if (adc < 0 || adc > kAdcMax) {
      out.issues.push_back({lineno, line, "adc value " + std::to_string(adc) + " out of range [0, 1023]"});
      continue;
    }
    out.readings.push_back({static_cast<std::int64_t>(ts), static_cast<int>(adc)});
  }
  return out;
}

inline SensorParse parse_sensor_stream(const std::string& text) {
  std::istringstream in(text);
  return parse_sensor_stream(in);
}

}  // namespace firenet
