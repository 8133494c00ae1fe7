#include "bame/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace bame {
namespace {

constexpr double kShareSumTolerance = 1e-9;

void require_same_axis(Axis a, Axis b, const char* what) {
    if (a != b) {
        throw std::invalid_argument(std::string(what) + ": axis mismatch (" + std::string(to_string(a)) +
                                    " vs " + std::string(to_string(b)) + ")");
    }
}

}  // namespace

size_t axis_size(Axis axis) {
    switch (axis) {
        case Axis::Gender: return 2;
        case Axis::Ethnicity: return 4;
        case Axis::Intersection: return 8;
    }
    return 0;
}

std::string_view to_string(Axis axis) {
    switch (axis) {
        case Axis::Gender: return "gender";
        case Axis::Ethnicity: return "ethnicity";
        case Axis::Intersection: return "intersection";
    }
    return "";
}

const std::vector<std::string>& axis_categories(Axis axis) {
    static const std::vector<std::string> gender = {"female", "male"};
    static const std::vector<std::string> ethnicity = {"european", "african", "api", "hispanic_latino"};
    static const std::vector<std::string> intersection = [] {
        std::vector<std::string> names;
        for (const IntersectionKey& k : all_intersection_keys()) names.push_back(intersection_name(k));
        return names;
    }();
    switch (axis) {
        case Axis::Gender: return gender;
        case Axis::Ethnicity: return ethnicity;
        case Axis::Intersection: return intersection;
    }
    return gender;
}

Distribution::Distribution(Axis axis, std::vector<double> shares) : axis_(axis), shares_(std::move(shares)) {
    if (shares_.size() != axis_size(axis_)) {
        throw std::invalid_argument("distribution: expected " + std::to_string(axis_size(axis_)) +
                                    " shares for axis " + std::string(to_string(axis_)) + ", got " +
                                    std::to_string(shares_.size()));
    }
    double sum = 0;
    for (double s : shares_) {
        if (!(s >= 0.0) || !std::isfinite(s)) {
            throw std::invalid_argument("distribution: shares must be finite and non-negative");
        }
        sum += s;
    }
    if (std::fabs(sum - 1.0) > kShareSumTolerance) {
        throw std::invalid_argument("distribution: shares sum to " + std::to_string(sum) + ", expected 1");
    }
}

int64_t BatchTally::total_classified() const {
    int64_t n = 0;
    for (int64_t c : intersection) n += c;
    return n;
}

int64_t BatchTally::count(Axis axis, size_t i) const {
    switch (axis) {
        case Axis::Gender: return gender.at(i);
        case Axis::Ethnicity: return ethnicity.at(i);
        case Axis::Intersection: return intersection.at(i);
    }
    return 0;
}

BatchTally& BatchTally::operator+=(const BatchTally& other) {
    for (size_t i = 0; i < gender.size(); ++i) gender[i] += other.gender[i];
    for (size_t i = 0; i < ethnicity.size(); ++i) ethnicity[i] += other.ethnicity[i];
    for (size_t i = 0; i < intersection.size(); ++i) intersection[i] += other.intersection[i];
    excluded += other.excluded;
    return *this;
}

BatchTally tally_batch(std::span<const DemographicLabel> labels, std::string occupation) {
    BatchTally tally;
    tally.occupation = std::move(occupation);
    for (const DemographicLabel& label : labels) {
        if (!label.classified()) {
            ++tally.excluded;
            continue;
        }
        ++tally.gender[label.gender == Gender::Female ? 0 : 1];
        ++tally.ethnicity[static_cast<size_t>(label.ethnicity)];
        ++tally.intersection[intersection_index(label.gender, label.ethnicity)];
    }
    return tally;
}

BatchTally sum_tallies(std::span<const BatchTally> tallies) {
    BatchTally total;
    for (const BatchTally& t : tallies) total += t;
    return total;
}

Distribution target_distribution(Axis axis) {
    size_t n = axis_size(axis);
    return Distribution(axis, std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

Distribution distribution_of(const BatchTally& tally, Axis axis) {
    int64_t total = tally.total_classified();
    if (total == 0) {
        throw std::invalid_argument("distribution_of: no classified characters in batch '" +
                                    tally.occupation + "'");
    }
    std::vector<double> shares(axis_size(axis));
    for (size_t i = 0; i < shares.size(); ++i) {
        shares[i] = static_cast<double>(tally.count(axis, i)) / static_cast<double>(total);
    }
    return Distribution(axis, std::move(shares));
}

double tvd(const Distribution& a, const Distribution& b) {
    require_same_axis(a.axis(), b.axis(), "tvd");
    double sum = 0;
    for (size_t i = 0; i < a.size(); ++i) sum += std::fabs(a.share(i) - b.share(i));
    return 0.5 * sum;
}

DprVector::DprVector(Axis axis, std::vector<double> ratios) : axis_(axis), ratios_(std::move(ratios)) {
    if (ratios_.size() != axis_size(axis_)) {
        throw std::invalid_argument("dpr vector: wrong category count for axis");
    }
}

DprVector dpr(const Distribution& observed, const Distribution& target) {
    require_same_axis(observed.axis(), target.axis(), "dpr");
    std::vector<double> ratios(observed.size());
    for (size_t i = 0; i < ratios.size(); ++i) {
        if (target.share(i) == 0.0) {
            throw std::invalid_argument("dpr: zero target share for category '" +
                                        axis_categories(target.axis())[i] + "'");
        }
        ratios[i] = observed.share(i) / target.share(i);
    }
    return DprVector(observed.axis(), std::move(ratios));
}

std::vector<double> delta_correction(const DprVector& baseline, const DprVector& treated) {
    require_same_axis(baseline.axis(), treated.axis(), "delta_correction");
    std::vector<double> delta(baseline.size());
    for (size_t i = 0; i < delta.size(); ++i) {
        delta[i] = std::fabs(baseline.ratio(i) - 1.0) - std::fabs(treated.ratio(i) - 1.0);
    }
    return delta;
}

RepresentationSummary representation_summary(std::span<const BatchTally> tallies) {
    if (tallies.empty()) {
        throw std::invalid_argument("representation_summary: no occupations");
    }
    int equal = 0, over_f = 0, over_m = 0;
    for (const BatchTally& t : tallies) {
        if (t.gender[0] == t.gender[1]) {
            ++equal;
        } else if (t.gender[0] > t.gender[1]) {
            ++over_f;
        } else {
            ++over_m;
        }
    }
    RepresentationSummary s;
    s.occupations = static_cast<int>(tallies.size());
    double n = static_cast<double>(tallies.size());
    s.equal_pct = 100.0 * equal / n;
    s.over_female_pct = 100.0 * over_f / n;
    s.over_male_pct = 100.0 * over_m / n;
    return s;
}

double ngram_diversity(std::span<const std::string> texts, int n) {
    if (n < 1 || n > 3) {
        throw std::invalid_argument("ngram_diversity: n must be 1..3");
    }
    int64_t total = 0;
    std::unordered_set<std::string> distinct;
    for (const std::string& text : texts) {
        std::vector<Token> tokens = tokenize(text);
        if (tokens.size() < static_cast<size_t>(n)) continue;
        for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
            std::string gram = tokens[i].text;
            for (size_t j = 1; j < static_cast<size_t>(n); ++j) {
                gram.push_back(' ');
                gram += tokens[i + j].text;
            }
            distinct.insert(std::move(gram));
            ++total;
        }
    }
    if (total == 0) {
        throw std::invalid_argument("ngram_diversity: no n-grams of size " + std::to_string(n) +
                                    " in the corpus");
    }
    return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

}  // namespace bame
