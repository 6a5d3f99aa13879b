// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace cogtipro {

using Instant = std::chrono::sys_seconds;
using Date = std::chrono::sys_days;

namespace timeutil {

/// Parses "YYYY-MM-DDTHH:MM:SS[.frac](Z|+hh:mm|-hh:mm)". Fractional seconds
/// are truncated. Throws IngestionError on malformed input.
Instant parse_rfc3339(std::string_view s);

/// Always renders UTC with a trailing 'Z'.
std::string format_rfc3339(Instant t);

/// Parses "YYYY-MM-DD".
Date parse_date(std::string_view s);
std::string format_date(Date d);

/// Calendar-month addition; the day is clamped to the target month's length.
Date add_months(Date d, int months);

/// Largest m with add_months(start, m) <= t, or -1 when t precedes start.
int months_since(Date start, Instant t);

}  // namespace timeutil
}  // namespace cogtipro
