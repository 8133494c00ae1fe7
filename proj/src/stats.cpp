#include "bame/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bame {
namespace {

constexpr int kExactLimit = 20;

// Subset-sum counts over doubled ranks (doubling keeps half-ranks integral).
// counts[s] = number of sign assignments whose positive-rank sum is s/2.
std::vector<uint64_t> rank_sum_counts(const std::vector<int>& ranks2) {
    int total = std::accumulate(ranks2.begin(), ranks2.end(), 0);
    std::vector<uint64_t> counts(static_cast<size_t>(total) + 1, 0);
    counts[0] = 1;
    for (int r : ranks2) {
        for (int s = total; s >= r; --s) {
            counts[static_cast<size_t>(s)] += counts[static_cast<size_t>(s - r)];
        }
    }
    return counts;
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
    size_t n = values.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        // positions i..j (0-based) share the average of ranks i+1..j+1
        double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences, Alternative alternative) {
    std::vector<double> mags;
    std::vector<bool> positive;
    for (double d : differences) {
        if (!std::isfinite(d)) throw std::invalid_argument("wilcoxon: non-finite difference");
        if (d == 0.0) continue;
        mags.push_back(std::fabs(d));
        positive.push_back(d > 0.0);
    }
    int n = static_cast<int>(mags.size());
    if (n == 0) {
        throw std::invalid_argument("wilcoxon: all differences are zero");
    }

    std::vector<double> ranks = average_ranks(mags);
    double w = 0;
    for (size_t i = 0; i < ranks.size(); ++i) {
        if (positive[i]) w += ranks[i];
    }

    WilcoxonResult result;
    result.statistic = w;
    result.n_effective = n;

    if (n <= kExactLimit) {
        result.method = TestMethod::Exact;
        std::vector<int> ranks2(ranks.size());
        for (size_t i = 0; i < ranks.size(); ++i) {
            ranks2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
        }
        int w2 = static_cast<int>(std::lround(2.0 * w));
        std::vector<uint64_t> counts = rank_sum_counts(ranks2);
        uint64_t ge = 0, le = 0;
        for (size_t s = 0; s < counts.size(); ++s) {
            if (static_cast<int>(s) >= w2) ge += counts[s];
            if (static_cast<int>(s) <= w2) le += counts[s];
        }
        double denom = std::ldexp(1.0, n);  // 2^n assignments
        if (alternative == Alternative::Greater) {
            result.p_value = static_cast<double>(ge) / denom;
        } else {
            double tail = static_cast<double>(std::min(ge, le)) / denom;
            result.p_value = std::min(1.0, 2.0 * tail);
        }
        return result;
    }

    result.method = TestMethod::NormalApprox;
    double dn = n;
    double mean = dn * (dn + 1.0) / 4.0;
    double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0;
    // tie correction: subtract sum(t^3 - t)/48 over tie groups
    std::vector<double> sorted(mags);
    std::sort(sorted.begin(), sorted.end());
    size_t i = 0;
    while (i < sorted.size()) {
        size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        double t = static_cast<double>(j - i + 1);
        var -= (t * t * t - t) / 48.0;
        i = j + 1;
    }
    double sd = std::sqrt(var);
    if (alternative == Alternative::Greater) {
        double z = (w - mean - 0.5) / sd;
        result.p_value = 1.0 - normal_cdf(z);
    } else {
        double z = (std::fabs(w - mean) - 0.5) / sd;
        if (z < 0) z = 0;
        result.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
    }
    return result;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("normal_quantile: p must be in (0,1)");
    }
    // Acklam's rational approximation, then one Halley refinement step.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                               1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                               6.680131188771972e+01,  -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                               -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                               3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    double e = normal_cdf(x) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
}

ProportionCI proportion_ci(int64_t count, int64_t total, double level) {
    if (total <= 0) throw std::invalid_argument("proportion_ci: total must be positive");
    if (count < 0 || count > total) throw std::invalid_argument("proportion_ci: count out of range");
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("proportion_ci: level must be in (0,1)");

    double z = normal_quantile(0.5 + level / 2.0);
    double n = static_cast<double>(total);
    double ph = static_cast<double>(count) / n;
    double z2 = z * z;
    double denom = 1.0 + z2 / n;
    double center = (ph + z2 / (2.0 * n)) / denom;
    double half = z * std::sqrt(ph * (1.0 - ph) / n + z2 / (4.0 * n * n)) / denom;

    ProportionCI ci;
    ci.point = ph;
    ci.level = level;
    ci.lower = count == 0 ? 0.0 : std::max(0.0, center - half);
    ci.upper = count == total ? 1.0 : std::min(1.0, center + half);
    return ci;
}

}  // namespace bame
