// SPDX-License-Identifier: Apache-2.0
#include "cogtipro/timeutil.hpp"

#include <charconv>

#include <fmt/format.h>

#include "cogtipro/error.hpp"

namespace cogtipro::timeutil {
namespace {

using namespace std::chrono;

int read_int(std::string_view s, std::size_t pos, std::size_t len,
             std::string_view whole) {
  if (pos + len > s.size()) {
    throw IngestionError(fmt::format("truncated timestamp '{}'", whole));
  }
  int v = 0;
  auto first = s.data() + pos;
  auto [ptr, ec] = std::from_chars(first, first + len, v);
  if (ec != std::errc{} || ptr != first + len) {
    throw IngestionError(fmt::format("malformed timestamp '{}'", whole));
  }
  return v;
}

void expect(std::string_view s, std::size_t pos, char c,
            std::string_view whole) {
  if (pos >= s.size() || s[pos] != c) {
    throw IngestionError(fmt::format("malformed timestamp '{}'", whole));
  }
}

Date make_date(int y, int m, int d, std::string_view whole) {
  year_month_day ymd{year{y}, month{static_cast<unsigned>(m)},
                     day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) {
    throw IngestionError(fmt::format("invalid calendar date '{}'", whole));
  }
  return sys_days{ymd};
}

}  // namespace

Date parse_date(std::string_view s) {
  if (s.size() != 10) {
    throw IngestionError(fmt::format("malformed date '{}'", s));
  }
  int y = read_int(s, 0, 4, s);
  expect(s, 4, '-', s);
  int m = read_int(s, 5, 2, s);
  expect(s, 7, '-', s);
  int d = read_int(s, 8, 2, s);
  return make_date(y, m, d, s);
}

std::string format_date(Date d) {
  year_month_day ymd{d};
  return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()),
                     static_cast<unsigned>(ymd.day()));
}

Instant parse_rfc3339(std::string_view s) {
  if (s.size() < 20) {
    throw IngestionError(fmt::format("malformed timestamp '{}'", s));
  }
  Date date = parse_date(s.substr(0, 10));
  if (s[10] != 'T' && s[10] != 't' && s[10] != ' ') {
    throw IngestionError(fmt::format("malformed timestamp '{}'", s));
  }
  int hh = read_int(s, 11, 2, s);
  expect(s, 13, ':', s);
  int mm = read_int(s, 14, 2, s);
  expect(s, 16, ':', s);
  int ss = read_int(s, 17, 2, s);
  if (hh > 23 || mm > 59 || ss > 60) {
    throw IngestionError(fmt::format("time of day out of range in '{}'", s));
  }
  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
  }
  if (pos >= s.size()) {
    throw IngestionError(fmt::format("timestamp '{}' lacks a UTC offset", s));
  }
  int offset_min = 0;
  char z = s[pos];
  if (z == 'Z' || z == 'z') {
    ++pos;
  } else if (z == '+' || z == '-') {
    int oh = read_int(s, pos + 1, 2, s);
    expect(s, pos + 3, ':', s);
    int om = read_int(s, pos + 4, 2, s);
    offset_min = (oh * 60 + om) * (z == '+' ? 1 : -1);
    pos += 6;
  } else {
    throw IngestionError(fmt::format("malformed UTC offset in '{}'", s));
  }
  if (pos != s.size()) {
    throw IngestionError(fmt::format("trailing characters in '{}'", s));
  }
  auto local = time_point_cast<seconds>(date) + hours{hh} + minutes{mm} +
               seconds{ss};
  return local - minutes{offset_min};
}

std::string format_rfc3339(Instant t) {
  auto day_point = floor<days>(t);
  hh_mm_ss tod{t - day_point};
  return fmt::format("{}T{:02d}:{:02d}:{:02d}Z", format_date(day_point),
                     tod.hours().count(), tod.minutes().count(),
                     tod.seconds().count());
}

Date add_months(Date d, int months) {
  year_month_day ymd{d};
  auto ym = year_month{ymd.year(), ymd.month()} + std::chrono::months{months};
  auto last = year_month_day_last{ym.year(), month_day_last{ym.month()}};
  auto dd = ymd.day() > last.day() ? last.day() : ymd.day();
  return sys_days{year_month_day{ym.year(), ym.month(), dd}};
}

int months_since(Date start, Instant t) {
  if (t < time_point_cast<seconds>(start)) return -1;
  year_month_day a{start};
  year_month_day b{floor<days>(t)};
  int m = (static_cast<int>(b.year()) - static_cast<int>(a.year())) * 12 +
          (static_cast<int>(static_cast<unsigned>(b.month())) -
           static_cast<int>(static_cast<unsigned>(a.month())));
  while (m > 0 && time_point_cast<seconds>(add_months(start, m)) > t) --m;
  while (time_point_cast<seconds>(add_months(start, m + 1)) <= t) ++m;
  return m;
}

}  // namespace cogtipro::timeutil
