#include "stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "error.hpp"

namespace sprag {

const char* to_string(Alternative alt) {
  switch (alt) {
    case Alternative::TwoSided: return "two-sided";
    case Alternative::Less: return "less";
    case Alternative::Greater: return "greater";
  }
  return "?";
}

const char* to_string(TestMethod method) {
  switch (method) {
    case TestMethod::WilcoxonExact: return "wilcoxon-exact";
    case TestMethod::WilcoxonNormal: return "wilcoxon-normal";
    case TestMethod::KruskalWallis: return "kruskal-wallis";
  }
  return "?";
}

Alternative parse_alternative(std::string_view text) {
  if (text == "two-sided") return Alternative::TwoSided;
  if (text == "less") return Alternative::Less;
  if (text == "greater") return Alternative::Greater;
  fail(ErrorCode::InvalidArgument, fmt::format("unknown alternative '{}'", text));
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::vector<std::uint64_t> signed_rank_null_counts(std::span<const std::int64_t> doubled_ranks) {
  std::int64_t total = 0;
  for (auto r : doubled_ranks) {
    if (r < 0) fail(ErrorCode::InvalidArgument, "ranks must be non-negative");
    total += r;
  }
  // Subset-sum DP: each rank is either positive (adds r) or negative.
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(total) + 1, 0);
  counts[0] = 1;
  std::int64_t reach = 0;
  for (auto r : doubled_ranks) {
    for (std::int64_t s = reach; s >= 0; --s) {
      if (counts[static_cast<std::size_t>(s)]) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
    }
    reach += r;
  }
  return counts;
}

namespace {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

TestResult wilcoxon_signed_rank(const PairedSamples& samples, Alternative alternative,
                                const WilcoxonOptions& options) {
  if (samples.x.size() != samples.y.size()) {
    fail(ErrorCode::LengthMismatch, fmt::format("paired samples differ in length: {} vs {}", samples.x.size(),
                                                samples.y.size()));
  }
  std::vector<double> diffs;
  for (std::size_t i = 0; i < samples.x.size(); ++i) {
    const double d = samples.x[i] - samples.y[i];
    if (d != 0.0) diffs.push_back(d);
  }
  if (!samples.x.empty() && diffs.empty()) fail(ErrorCode::NoSignal, "all paired differences are zero");
  const std::size_t n = diffs.size();
  if (n < 3) fail(ErrorCode::InsufficientPairs, fmt::format("{} non-zero differences; at least 3 required", n));

  std::vector<double> abs_d(n);
  for (std::size_t i = 0; i < n; ++i) abs_d[i] = std::abs(diffs[i]);
  const auto ranks = average_ranks(abs_d);

  double w_plus = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (diffs[i] > 0) w_plus += ranks[i];
  }

  TestResult result;
  result.statistic = w_plus;
  result.alternative = alternative;
  result.n_effective = n;

  if (n <= options.max_exact_n) {
    std::vector<std::int64_t> doubled(n);
    for (std::size_t i = 0; i < n; ++i) doubled[i] = std::llround(2.0 * ranks[i]);
    const auto counts = signed_rank_null_counts(doubled);
    const auto observed = std::llround(2.0 * w_plus);
    const double total = std::ldexp(1.0, static_cast<int>(n));
    double le = 0, ge = 0;
    for (std::size_t s = 0; s < counts.size(); ++s) {
      const auto c = static_cast<double>(counts[s]);
      if (static_cast<std::int64_t>(s) <= observed) le += c;
      if (static_cast<std::int64_t>(s) >= observed) ge += c;
    }
    const double p_le = le / total, p_ge = ge / total;
    double p = 0;
    switch (alternative) {
      case Alternative::Less: p = p_le; break;
      case Alternative::Greater: p = p_ge; break;
      case Alternative::TwoSided: p = 2.0 * std::min(p_le, p_ge); break;
    }
    result.method = TestMethod::WilcoxonExact;
    result.exact = true;
    result.p_value = std::clamp(p, 0.0, 1.0);
    return result;
  }

  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1) / 4.0;
  double tie_term = 0;
  {
    std::vector<double> sorted = abs_d;
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
  const double sd = std::sqrt(var);
  double p = 0;
  switch (alternative) {
    case Alternative::Less: p = normal_cdf((w_plus - mean + 0.5) / sd); break;
    case Alternative::Greater: p = normal_sf((w_plus - mean - 0.5) / sd); break;
    case Alternative::TwoSided: {
      const double z = (std::abs(w_plus - mean) - 0.5) / sd;
      p = 2.0 * normal_sf(std::max(z, 0.0));
      break;
    }
  }
  result.method = TestMethod::WilcoxonNormal;
  result.exact = false;
  result.p_value = std::clamp(p, 0.0, 1.0);
  return result;
}

TestResult kruskal_wallis(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) fail(ErrorCode::InvalidArgument, "Kruskal-Wallis needs at least two groups");
  std::vector<double> all;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) fail(ErrorCode::InsufficientData, fmt::format("group {} is empty", g + 1));
    all.insert(all.end(), groups[g].begin(), groups[g].end());
  }
  const std::size_t n_total = all.size();
  if (n_total < 5) fail(ErrorCode::InsufficientData, fmt::format("{} observations; at least 5 required", n_total));

  const auto ranks = average_ranks(all);
  const double N = static_cast<double>(n_total);
  double sum_term = 0;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    double r = 0;
    for (std::size_t i = 0; i < g.size(); ++i) r += ranks[offset + i];
    sum_term += r * r / static_cast<double>(g.size());
    offset += g.size();
  }
  const double h_raw = 12.0 / (N * (N + 1)) * sum_term - 3.0 * (N + 1);

  std::vector<double> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  double tie_sum = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_sum += t * t * t - t;
    i = j + 1;
  }
  const double correction = 1.0 - tie_sum / (N * N * N - N);

  TestResult result;
  result.method = TestMethod::KruskalWallis;
  result.alternative = Alternative::TwoSided;
  result.n_effective = n_total;
  result.exact = false;
  if (correction <= 0) {
    result.statistic = 0;
    result.p_value = 1;
    return result;
  }
  result.statistic = std::max(0.0, h_raw / correction);
  result.p_value = chi_squared_sf(result.statistic, static_cast<int>(groups.size() - 1));
  return result;
}

// ---------------------------------------------------------------------------
// Incomplete gamma: power series for x < a + 1, Lentz continued fraction otherwise.

namespace {

constexpr double kEps = 1e-16;
constexpr int kMaxIter = 10000;

double gamma_p_series(double a, double x) {
  double sum = 1.0 / a;
  double term = sum;
  double ap = a;
  for (int i = 0; i < kMaxIter; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_continued_fraction(double a, double x) {
  constexpr double tiny = std::numeric_limits<double>::min() / kEps;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIter; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double regularized_gamma_q(double a, double x) {
  if (!(a > 0)) fail(ErrorCode::InvalidArgument, "gamma shape must be positive");
  if (x < 0 || std::isnan(x)) fail(ErrorCode::InvalidArgument, "gamma argument must be non-negative");
  if (x == 0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return std::clamp(1.0 - gamma_p_series(a, x), 0.0, 1.0);
  return std::clamp(gamma_q_continued_fraction(a, x), 0.0, 1.0);
}

double chi_squared_sf(double x, int df) {
  if (df <= 0) fail(ErrorCode::InvalidArgument, "chi-squared df must be positive");
  if (x < 0) fail(ErrorCode::InvalidArgument, "chi-squared statistic must be non-negative");
  return regularized_gamma_q(static_cast<double>(df) / 2.0, x / 2.0);
}

}  // namespace sprag
