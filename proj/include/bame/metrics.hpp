#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bame/demographics.hpp"

namespace bame {

enum class Axis { Gender, Ethnicity, Intersection };

size_t axis_size(Axis axis);                                // 2, 4, 8
std::string_view to_string(Axis axis);
const std::vector<std::string>& axis_categories(Axis axis); // canonical order

// Shares over one axis's categories; always sums to 1 (within 1e-9).
class Distribution {
  public:
    Distribution(Axis axis, std::vector<double> shares);

    Axis axis() const { return axis_; }
    const std::vector<double>& shares() const { return shares_; }
    double share(size_t i) const { return shares_.at(i); }
    size_t size() const { return shares_.size(); }

  private:
    Axis axis_;
    std::vector<double> shares_;
};

// Per-occupation counts of classified story characters. A character counts
// as classified only when both gender and ethnicity resolved; everything
// else lands in `excluded` and nowhere else.
struct BatchTally {
    std::string occupation;
    std::array<int64_t, 2> gender{};        // female, male
    std::array<int64_t, 4> ethnicity{};     // european, african, api, hispanic_latino
    std::array<int64_t, 8> intersection{};  // ethnicity-major, female first
    int64_t excluded = 0;

    int64_t total_classified() const;
    int64_t total_stories() const { return total_classified() + excluded; }
    int64_t count(Axis axis, size_t i) const;

    BatchTally& operator+=(const BatchTally& other);  // keeps lhs occupation
    bool operator==(const BatchTally&) const = default;
};

BatchTally tally_batch(std::span<const DemographicLabel> labels, std::string occupation);
BatchTally sum_tallies(std::span<const BatchTally> tallies);

// Uniform targets: gender .5/.5, ethnicity .25 x4, intersection .125 x8.
Distribution target_distribution(Axis axis);

// Observed shares among classified characters; throws std::invalid_argument
// when the tally has no classified characters.
Distribution distribution_of(const BatchTally& tally, Axis axis);

// Total variation distance, 0.5 * L1. Axes must match.
double tvd(const Distribution& a, const Distribution& b);

// Demographic parity ratios, observed share / target share per category.
class DprVector {
  public:
    DprVector(Axis axis, std::vector<double> ratios);

    Axis axis() const { return axis_; }
    const std::vector<double>& ratios() const { return ratios_; }
    double ratio(size_t i) const { return ratios_.at(i); }
    size_t size() const { return ratios_.size(); }

  private:
    Axis axis_;
    std::vector<double> ratios_;
};

// Throws std::invalid_argument on axis mismatch or a zero target share.
DprVector dpr(const Distribution& observed, const Distribution& target);

// Per-category improvement |baseline-1| - |treated-1|; positive means the
// treated run sits closer to parity. Axes must match.
std::vector<double> delta_correction(const DprVector& baseline, const DprVector& treated);

// Share of occupations with equal / female-heavy / male-heavy gender counts.
struct RepresentationSummary {
    int occupations = 0;
    double equal_pct = 0;
    double over_female_pct = 0;
    double over_male_pct = 0;
};

RepresentationSummary representation_summary(std::span<const BatchTally> tallies);

// Distinct / total n-grams pooled over the texts (n-grams never span text
// boundaries). Tokens are lowercased alphanumeric runs. n must be 1..3.
double ngram_diversity(std::span<const std::string> texts, int n);

}  // namespace bame
