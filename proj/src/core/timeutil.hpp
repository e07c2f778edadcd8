#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace sprag {

// Milliseconds since the Unix epoch, UTC.
struct Timestamp {
  std::int64_t millis = 0;

  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

// Accepts "YYYY-MM-DD", "YYYY-MM-DD[T ]HH:MM[:SS[.fff]]" with an optional
// "Z", "+HH:MM", "+HHMM" or "+HH" suffix. Missing offset means UTC.
std::optional<Timestamp> parse_iso8601(std::string_view text);

// "YYYY-MM-DDTHH:MM:SS.mmmZ" (fraction omitted when zero).
std::string format_iso8601(Timestamp ts);

std::string utc_now_iso8601();

}  // namespace sprag
