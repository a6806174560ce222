#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace retrainaudit {

// Configuration / usage problems; the CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data that cannot be reduced to a
// row-level rejection.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Broken internal invariant; the CLI maps these to exit code 1.
struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A metric value that may be undefined. Undefined values carry a reason
// code and are never silently folded into aggregates.
class Stat {
 public:
  Stat() : reason_("unset") {}

  static Stat of(double v) {
    Stat s;
    s.v_ = v;
    s.reason_.clear();
    return s;
  }
  static Stat undefined(std::string reason) {
    Stat s;
    s.reason_ = std::move(reason);
    return s;
  }

  bool defined() const { return v_.has_value(); }
  double value() const {
    if (!v_) throw InternalError("Stat::value on undefined (" + reason_ + ")");
    return *v_;
  }
  double value_or(double fallback) const { return v_.value_or(fallback); }
  const std::string& reason() const { return reason_; }

 private:
  std::optional<double> v_;
  std::string reason_;
};

// ---------------------------------------------------------------------------
// Calendar dates (day resolution) and instants (minute resolution).

// Days since 1970-01-01 (proleptic Gregorian).
struct Date {
  std::int32_t days = 0;
  friend auto operator<=>(const Date&, const Date&) = default;
};

// Minutes since 1970-01-01T00:00 UTC.
struct Instant {
  std::int64_t minutes = 0;
  friend auto operator<=>(const Instant&, const Instant&) = default;
};

std::int64_t days_from_civil(int y, unsigned m, unsigned d);
void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d);

// Strict "YYYY-MM-DD". Throws DataError on malformed input.
Date parse_date(std::string_view s);
std::string format_date(Date d);

// "YYYY-MM-DD[T |]HH:MM[:SS]"; seconds are truncated to the minute.
Instant parse_instant(std::string_view s);
std::string format_instant(Instant t);

inline Date date_of(Instant t) {
  // Negative instants (pre-epoch) do not occur in this toolkit.
  return Date{static_cast<std::int32_t>(t.minutes / (24 * 60))};
}

// ---------------------------------------------------------------------------
// Dense row-major matrix of doubles.

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  std::span<const double> row_span(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// ---------------------------------------------------------------------------
// Locale-free numeric formatting/parsing. Doubles use shortest round-trip
// form so serialized output is byte-stable.

std::string fmt_double(double v);
double parse_double(std::string_view s);  // throws DataError
long long parse_int(std::string_view s);  // throws DataError

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string lower(std::string_view s);

}  // namespace retrainaudit
