#include "retrainaudit/common.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>

namespace retrainaudit {

// Howard Hinnant's civil-day algorithms.
std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<std::int64_t>(era) * 146097 +
         static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = static_cast<int>(yy + (m <= 2));
}

namespace {

int parse_uint_field(std::string_view s, std::size_t pos, std::size_t len,
                     std::string_view whole) {
  int v = 0;
  if (pos + len > s.size()) throw DataError("bad date/time: '" + std::string(whole) + "'");
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9')
      throw DataError("bad date/time: '" + std::string(whole) + "'");
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

}  // namespace

Date parse_date(std::string_view s) {
  s = trim(s);
  if (s.size() != 10 || s[4] != '-' || s[7] != '-')
    throw DataError("bad date: '" + std::string(s) + "'");
  const int y = parse_uint_field(s, 0, 4, s);
  const int m = parse_uint_field(s, 5, 2, s);
  const int d = parse_uint_field(s, 8, 2, s);
  if (m < 1 || m > 12 || d < 1 || d > 31)
    throw DataError("bad date: '" + std::string(s) + "'");
  return Date{static_cast<std::int32_t>(days_from_civil(y, m, d))};
}

std::string format_date(Date dt) {
  int y;
  unsigned m, d;
  civil_from_days(dt.days, y, m, d);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", y, m, d);
  return buf;
}

Instant parse_instant(std::string_view s) {
  s = trim(s);
  if (s.size() < 16) throw DataError("bad timestamp: '" + std::string(s) + "'");
  if (s[10] != 'T' && s[10] != ' ' && s[10] != '|')
    throw DataError("bad timestamp: '" + std::string(s) + "'");
  const Date d = parse_date(s.substr(0, 10));
  if (s[13] != ':') throw DataError("bad timestamp: '" + std::string(s) + "'");
  const int hh = parse_uint_field(s, 11, 2, s);
  const int mm = parse_uint_field(s, 14, 2, s);
  if (hh > 23 || mm > 59) throw DataError("bad timestamp: '" + std::string(s) + "'");
  // Anything past minutes (":SS", fractions, "Z") is truncated.
  return Instant{static_cast<std::int64_t>(d.days) * 24 * 60 + hh * 60 + mm};
}

std::string format_instant(Instant t) {
  const std::int64_t day = t.minutes / (24 * 60);
  const int rem = static_cast<int>(t.minutes % (24 * 60));
  char buf[24];
  std::snprintf(buf, sizeof buf, "%sT%02d:%02d",
                format_date(Date{static_cast<std::int32_t>(day)}).c_str(),
                rem / 60, rem % 60);
  return buf;
}

std::string fmt_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc())
    throw InternalError("fmt_double failed");
  return std::string(buf, p);
}

double parse_double(std::string_view s) {
  s = trim(s);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw DataError("not a number: '" + std::string(s) + "'");
  return v;
}

long long parse_int(std::string_view s) {
  s = trim(s);
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw DataError("not an integer: '" + std::string(s) + "'");
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace retrainaudit
