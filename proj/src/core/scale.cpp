#include "scale.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "error.hpp"

namespace sprag {

const ScaleDef& ScaleDef::fibonacci() {
  static const ScaleDef deck({0, 0.5, 1, 2, 3, 5, 8, 13, 21, 34, 55, 89});
  return deck;
}

ScaleDef::ScaleDef(std::vector<double> allowed) : allowed_(std::move(allowed)) {
  if (allowed_.empty()) fail(ErrorCode::InvalidArgument, "scale must not be empty");
  for (std::size_t i = 1; i < allowed_.size(); ++i) {
    if (!(allowed_[i - 1] < allowed_[i])) {
      fail(ErrorCode::InvalidArgument, "scale values must be strictly increasing");
    }
  }
}

bool ScaleDef::contains(double sp) const {
  return std::binary_search(allowed_.begin(), allowed_.end(), sp);
}

double snap_to_scale(double value, const ScaleDef& scale) {
  if (std::isnan(value)) fail(ErrorCode::InvalidArgument, "cannot snap NaN to scale");
  value = std::clamp(value, scale.min(), scale.max());
  auto values = scale.values();
  auto hi = std::lower_bound(values.begin(), values.end(), value);
  if (hi == values.begin()) return *hi;
  if (hi == values.end()) return values.back();
  auto lo = hi - 1;
  // <= sends exact ties to the smaller card
  return (value - *lo) <= (*hi - value) ? *lo : *hi;
}

std::string format_story_point(double sp) { return fmt::format("{}", sp); }

double lower_median(std::vector<double> values) {
  if (values.empty()) fail(ErrorCode::InvalidArgument, "median of empty evidence");
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

}  // namespace sprag
