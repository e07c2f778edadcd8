#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sprag {

enum class Alternative { TwoSided, Less, Greater };
enum class TestMethod { WilcoxonExact, WilcoxonNormal, KruskalWallis };

const char* to_string(Alternative alt);
const char* to_string(TestMethod method);
Alternative parse_alternative(std::string_view text);

struct PairedSamples {
  std::vector<std::string> labels;
  std::vector<double> x;
  std::vector<double> y;
};

struct TestResult {
  TestMethod method = TestMethod::WilcoxonExact;
  double statistic = 0;
  double p_value = 1;
  Alternative alternative = Alternative::TwoSided;
  std::size_t n_effective = 0;
  bool exact = false;
};

// Average ranks (1-based) of values; ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

// Null distribution of the signed-rank statistic for the given doubled ranks
// (2 x average rank, always integral): counts[s] = number of the 2^n sign
// assignments whose positive doubled ranks sum to s.
std::vector<std::uint64_t> signed_rank_null_counts(std::span<const std::int64_t> doubled_ranks);

struct WilcoxonOptions {
  std::size_t max_exact_n = 25;
};

// Differences d = x - y; zeros dropped; W = sum of ranks of positive d.
// "less": x tends to be smaller than y. Exact for n <= max_exact_n, otherwise
// normal approximation with tie-corrected variance and continuity correction.
// All-zero differences -> Error(NoSignal); n < 3 -> Error(InsufficientPairs).
TestResult wilcoxon_signed_rank(const PairedSamples& samples, Alternative alternative,
                                const WilcoxonOptions& options = {});

// H with tie correction, p from chi-squared(k-1). All values equal -> H=0, p=1.
TestResult kruskal_wallis(std::span<const std::vector<double>> groups);

// Upper tail Q(df/2, x/2) of the chi-squared distribution.
double chi_squared_sf(double x, int df);

// Regularized upper incomplete gamma Q(a, x).
double regularized_gamma_q(double a, double x);

}  // namespace sprag
