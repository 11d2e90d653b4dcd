#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brainattr/attribution.hpp"
#include "brainattr/corpus.hpp"

namespace brainattr {

// Smallest prefix of the magnitude-ranked words whose cumulative |score|
// reaches t% of the record's total mass. Ties break toward smaller distance
// (more recent), then smaller word index.
struct TopSet {
    double threshold_pct = 0.0;
    std::vector<int64_t> words;  // in rank order
    double covered_mass_fraction = 0.0;

    bool contains(int64_t w) const;
};

TopSet top_set(const AttributionRecord& record, double threshold_pct);

// Jaccard overlap of two word-instance sets; both empty gives 0 (warning).
double iou(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

// Monte-Carlo mean IoU of size-matched uniform word-set pairs drawn without
// replacement from a context of n words.
double random_baseline_iou(int64_t context_size, int64_t size_a, int64_t size_b, int draws,
                           uint64_t seed);

// Attribution-weighted mean distance from the most recent word (0 = latest),
// mass = |score|. Throws invalid_input when the record carries no mass.
double com(const AttributionRecord& record);
// Same, restricted to the record's top-t% words (the figure convention).
double com_top(const AttributionRecord& record, double threshold_pct);

struct SpreadCurve {
    std::vector<double> thresholds_pct;
    std::vector<double> mean_unique_words;
    double auc = 0.0;  // trapezoid over thresholds mapped to [0,1]
};

SpreadCurve spread_curve(const std::vector<const AttributionRecord*>& records,
                         const std::vector<double>& thresholds_pct);

// Per-record top-set sizes at one threshold (paired inputs for the t-test).
std::vector<double> spread_counts(const std::vector<const AttributionRecord*>& records,
                                  double threshold_pct);

// Proportion of top-t words per distance bin; sums to 1 over bins.
std::vector<double> positional_histogram(const std::vector<const AttributionRecord*>& records,
                                         double threshold_pct, int64_t bin_width);

enum class TopGroup : int { kBrainOnly = 0, kNwpOnly = 1, kBoth = 2 };
std::string group_name(TopGroup g);

struct FeatureShare {
    // [category][group] mean percentage across contexts; -1 when no context
    // carried a feature of that category.
    double percent[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    int64_t contexts_used[3] = {0, 0, 0};
};

// Percentage of each annotation category's features that fall on
// BA-only / NWP-only / shared top-t words, averaged across paired records.
// Contexts with zero features of a category are excluded from that
// category's mean.
FeatureShare feature_percentages(const std::vector<const AttributionRecord*>& brain_records,
                                 const std::vector<const AttributionRecord*>& nwp_records,
                                 const Corpus& corpus, double threshold_pct);

// The paper's IoU threshold list.
std::vector<double> paper_thresholds();

struct PairedTest {
    double t_stat = 0.0;
    double p_value = 1.0;
    int64_t n = 0;
};

// Two-sided paired t-test; zero-variance differences give p = 1 (warning).
PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Benjamini-Hochberg step-up adjusted p-values over a family of comparisons.
std::vector<double> bh_adjust(const std::vector<double>& p_values);

// Two-sided tail probability of Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, int64_t df);

}  // namespace brainattr
