#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace bame {

enum class TestMethod { Exact, NormalApprox };
enum class Alternative { Greater, TwoSided };

struct WilcoxonResult {
    double statistic = 0;  // W+, sum of ranks of positive differences
    double p_value = 1;
    int n_effective = 0;   // differences left after dropping zeros
    TestMethod method = TestMethod::Exact;
};

// Signed-rank test on paired differences. Zeros are dropped, tied
// magnitudes share their average rank. Exact p for n_effective <= 20 (full
// sign-assignment distribution), normal approximation with tie and
// continuity corrections above that. Throws std::invalid_argument when
// every difference is zero.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences, Alternative alternative);

// 1-based ranks of the values with ties averaged.
std::vector<double> average_ranks(std::span<const double> values);

struct ProportionCI {
    double point = 0;
    double lower = 0;
    double upper = 0;
    double level = 0;
};

// Wilson score interval for a binomial proportion.
ProportionCI proportion_ci(int64_t count, int64_t total, double level);

double normal_cdf(double x);
// Inverse standard normal CDF for p in (0, 1).
double normal_quantile(double p);

}  // namespace bame
