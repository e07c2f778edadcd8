#pragma once

#include <span>
#include <string>
#include <vector>

namespace sprag {

// Story-point card deck. Values are strictly increasing.
class ScaleDef {
 public:
  // {0, 0.5, 1, 2, 3, 5, 8, 13, 21, 34, 55, 89}
  static const ScaleDef& fibonacci();

  explicit ScaleDef(std::vector<double> allowed);

  std::span<const double> values() const { return allowed_; }
  bool contains(double sp) const;
  double min() const { return allowed_.front(); }
  double max() const { return allowed_.back(); }

 private:
  std::vector<double> allowed_;
};

// Nearest deck value by absolute distance; exact ties go to the smaller card.
// Negative input clamps to the lowest card, values past the top card to the top card.
double snap_to_scale(double value, const ScaleDef& scale);

// "3", "0.5", "13" -- shortest round-trip decimal rendering.
std::string format_story_point(double sp);

// Median of evidence story points; even counts take the lower middle value.
double lower_median(std::vector<double> values);

}  // namespace sprag
