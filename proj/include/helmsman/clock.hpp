#pragma once

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <random>
#include <string>
#include <string_view>

#include "helmsman/error.hpp"

namespace helmsman {

/// Wall-clock instant at millisecond precision; everything persisted uses it
/// so that serialize/restore round-trips are exact.
using Timestamp = std::chrono::time_point<std::chrono::system_clock, std::chrono::milliseconds>;

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() = 0;
};

class SystemClock final : public Clock {
 public:
  Timestamp now() override {
    return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
  }
};

/// Test clock: returns a fixed instant, advanced explicitly.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Timestamp start = Timestamp{std::chrono::milliseconds{1'767'225'600'000}})
      : now_(start.time_since_epoch().count()) {}
  Timestamp now() override { return Timestamp{std::chrono::milliseconds{now_.load()}}; }
  void advance(std::chrono::milliseconds d) { now_ += d.count(); }

 private:
  std::atomic<std::int64_t> now_;
};

namespace detail {

// Howard Hinnant's days <-> civil date conversions.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct Civil {
  std::int64_t year;
  unsigned month;
  unsigned day;
};

constexpr Civil civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

inline int parse_digits(std::string_view s, std::size_t pos, std::size_t count) {
  int value = 0;
  if (pos + count > s.size()) return -1;
  auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + pos + count, value);
  if (ec != std::errc{} || ptr != s.data() + pos + count) return -1;
  return value;
}

}  // namespace detail

/// `YYYY-MM-DDTHH:MM:SS.mmmZ`
inline std::string format_rfc3339(Timestamp t) {
  using namespace std::chrono;
  const std::int64_t ms = t.time_since_epoch().count();
  std::int64_t days = ms / 86'400'000;
  std::int64_t rem = ms % 86'400'000;
  if (rem < 0) {
    rem += 86'400'000;
    --days;
  }
  const auto civil = detail::civil_from_days(days);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lld.%03lldZ",
                static_cast<long long>(civil.year), civil.month, civil.day,
                static_cast<long long>(rem / 3'600'000), static_cast<long long>(rem / 60'000 % 60),
                static_cast<long long>(rem / 1000 % 60), static_cast<long long>(rem % 1000));
  return buf;
}

/// Accepts `Z` or `±HH:MM` offsets and an optional fraction (truncated to ms).
inline Timestamp parse_rfc3339(std::string_view s) {
  auto fail = [&]() -> Error {
    return Error(errc::parse_error, "invalid RFC 3339 timestamp '" + std::string(s) + "'");
  };
  if (s.size() < 20 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != 't') ||
      s[13] != ':' || s[16] != ':')
    throw fail();
  const int year = detail::parse_digits(s, 0, 4);
  const int month = detail::parse_digits(s, 5, 2);
  const int day = detail::parse_digits(s, 8, 2);
  const int hour = detail::parse_digits(s, 11, 2);
  const int minute = detail::parse_digits(s, 14, 2);
  const int second = detail::parse_digits(s, 17, 2);
  if (year < 0 || month < 1 || month > 12 || day < 1 || day > 31 || hour < 0 || hour > 23 ||
      minute < 0 || minute > 59 || second < 0 || second > 60)
    throw fail();
  std::size_t pos = 19;
  std::int64_t millis = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      if (digits < 3) millis = millis * 10 + (s[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) throw fail();
    for (int d = digits; d < 3; ++d) millis *= 10;
  }
  std::int64_t offset_minutes = 0;
  if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
    ++pos;
  } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
    const int oh = detail::parse_digits(s, pos + 1, 2);
    const int om = detail::parse_digits(s, pos + 4, 2);
    if (oh < 0 || om < 0 || pos + 3 >= s.size() || s[pos + 3] != ':') throw fail();
    offset_minutes = (oh * 60 + om) * (s[pos] == '+' ? 1 : -1);
    pos += 6;
  } else {
    throw fail();
  }
  if (pos != s.size()) throw fail();
  const std::int64_t days = detail::days_from_civil(year, static_cast<unsigned>(month),
                                                    static_cast<unsigned>(day));
  const std::int64_t total = ((days * 24 + hour) * 60 + minute - offset_minutes) * 60'000 +
                             static_cast<std::int64_t>(second) * 1000 + millis;
  return Timestamp{std::chrono::milliseconds{total}};
}

// ---------------------------------------------------------------------------

/// Source of unique identifiers. Tests and the headless chat use the
/// sequential form so transcripts are reproducible.
class IdSource {
 public:
  virtual ~IdSource() = default;
  virtual std::string next(std::string_view prefix) = 0;
};

class SequentialIds final : public IdSource {
 public:
  std::string next(std::string_view prefix) override {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04llu", static_cast<unsigned long long>(++counter_));
    return std::string(prefix) + "-" + buf;
  }

 private:
  std::atomic<std::uint64_t> counter_{0};
};

class RandomIds final : public IdSource {
 public:
  RandomIds() : rng_(std::random_device{}()) {}
  std::string next(std::string_view prefix) override {
    std::lock_guard lock(mutex_);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(prefix);
    out += '-';
    for (int i = 0; i < 16; ++i) out += kHex[rng_() & 0xF];
    return out;
  }

 private:
  std::mutex mutex_;
  std::mt19937_64 rng_;
};

}  // namespace helmsman
