#include "brainattr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>
#include <unordered_set>

#include "brainattr/rng.hpp"

namespace brainattr {

bool TopSet::contains(int64_t w) const {
    return std::find(words.begin(), words.end(), w) != words.end();
}

TopSet top_set(const AttributionRecord& record, double threshold_pct) {
    if (threshold_pct <= 0.0 || threshold_pct > 100.0)
        throw invalid_input("top_set: threshold must be in (0, 100]");
    TopSet out;
    out.threshold_pct = threshold_pct;

    double total = 0.0;
    for (double s : record.score) total += std::abs(s);
    if (total == 0.0) {
        std::cerr << "warning: all-zero attribution record (run " << record.target.run << ", tr "
                  << record.target.tr << "); empty top set\n";
        return out;
    }

    std::vector<size_t> order(record.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const double ma = std::abs(record.score[a]);
        const double mb = std::abs(record.score[b]);
        if (ma != mb) return ma > mb;
        if (record.distance[a] != record.distance[b]) return record.distance[a] < record.distance[b];
        return record.word_index[a] < record.word_index[b];
    });

    const double target = total * threshold_pct / 100.0;
    double cum = 0.0;
    for (size_t i : order) {
        out.words.push_back(record.word_index[i]);
        cum += std::abs(record.score[i]);
        if (cum >= target) break;
    }
    out.covered_mass_fraction = cum / total;
    return out;
}

double iou(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    if (a.empty() && b.empty()) {
        std::cerr << "warning: IoU of two empty sets defined as 0\n";
        return 0.0;
    }
    const std::set<int64_t> sa(a.begin(), a.end());
    const std::set<int64_t> sb(b.begin(), b.end());
    size_t inter = 0;
    for (int64_t w : sa) inter += sb.count(w);
    const size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double random_baseline_iou(int64_t context_size, int64_t size_a, int64_t size_b, int draws,
                           uint64_t seed) {
    if (size_a > context_size || size_b > context_size)
        throw invalid_input("random_baseline_iou: set larger than context");
    if (size_a == 0 && size_b == 0) return 0.0;
    Rng rng(seed);
    double acc = 0.0;
    std::vector<char> in_a(static_cast<size_t>(context_size));
    for (int d = 0; d < draws; ++d) {
        const auto perm_a = rng.permutation(static_cast<size_t>(context_size));
        const auto perm_b = rng.permutation(static_cast<size_t>(context_size));
        std::fill(in_a.begin(), in_a.end(), 0);
        for (int64_t i = 0; i < size_a; ++i) in_a[perm_a[static_cast<size_t>(i)]] = 1;
        int64_t inter = 0;
        for (int64_t i = 0; i < size_b; ++i) inter += in_a[perm_b[static_cast<size_t>(i)]];
        const int64_t uni = size_a + size_b - inter;
        acc += uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return acc / draws;
}

namespace {

double com_over(const AttributionRecord& record, const std::vector<char>& include) {
    double mass = 0.0, weighted = 0.0;
    for (size_t i = 0; i < record.size(); ++i) {
        if (!include[i]) continue;
        const double m = std::abs(record.score[i]);
        mass += m;
        weighted += m * static_cast<double>(record.distance[i]);
    }
    if (mass == 0.0) throw invalid_input("com: record carries no attribution mass");
    return weighted / mass;
}

}  // namespace

double com(const AttributionRecord& record) {
    return com_over(record, std::vector<char>(record.size(), 1));
}

double com_top(const AttributionRecord& record, double threshold_pct) {
    const TopSet top = top_set(record, threshold_pct);
    std::unordered_set<int64_t> members(top.words.begin(), top.words.end());
    std::vector<char> include(record.size(), 0);
    for (size_t i = 0; i < record.size(); ++i)
        include[i] = members.count(record.word_index[i]) ? 1 : 0;
    return com_over(record, include);
}

SpreadCurve spread_curve(const std::vector<const AttributionRecord*>& records,
                         const std::vector<double>& thresholds_pct) {
    for (size_t i = 1; i < thresholds_pct.size(); ++i)
        if (thresholds_pct[i] <= thresholds_pct[i - 1])
            throw invalid_input("spread_curve: thresholds must be ascending");
    SpreadCurve curve;
    curve.thresholds_pct = thresholds_pct;
    for (double t : thresholds_pct) {
        double mean = 0.0;
        for (const auto* rec : records) mean += static_cast<double>(top_set(*rec, t).words.size());
        curve.mean_unique_words.push_back(records.empty() ? 0.0 : mean / static_cast<double>(records.size()));
    }
    for (size_t i = 1; i < thresholds_pct.size(); ++i) {
        const double dx = (thresholds_pct[i] - thresholds_pct[i - 1]) / 100.0;
        curve.auc += dx * 0.5 * (curve.mean_unique_words[i] + curve.mean_unique_words[i - 1]);
    }
    return curve;
}

std::vector<double> spread_counts(const std::vector<const AttributionRecord*>& records,
                                  double threshold_pct) {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto* rec : records)
        out.push_back(static_cast<double>(top_set(*rec, threshold_pct).words.size()));
    return out;
}

std::vector<double> positional_histogram(const std::vector<const AttributionRecord*>& records,
                                         double threshold_pct, int64_t bin_width) {
    if (bin_width < 1) throw invalid_input("positional_histogram: bin width must be >= 1");
    std::vector<double> counts;
    double total = 0.0;
    for (const auto* rec : records) {
        const TopSet top = top_set(*rec, threshold_pct);
        std::unordered_set<int64_t> members(top.words.begin(), top.words.end());
        for (size_t i = 0; i < rec->size(); ++i) {
            if (!members.count(rec->word_index[i])) continue;
            const size_t bin = static_cast<size_t>(rec->distance[i] / bin_width);
            if (counts.size() <= bin) counts.resize(bin + 1, 0.0);
            counts[bin] += 1.0;
            total += 1.0;
        }
    }
    if (total > 0)
        for (auto& c : counts) c /= total;
    return counts;
}

std::string group_name(TopGroup g) {
    switch (g) {
        case TopGroup::kBrainOnly: return "ba_only";
        case TopGroup::kNwpOnly: return "nwp_only";
        default: return "both";
    }
}

FeatureShare feature_percentages(const std::vector<const AttributionRecord*>& brain_records,
                                 const std::vector<const AttributionRecord*>& nwp_records,
                                 const Corpus& corpus, double threshold_pct) {
    if (brain_records.size() != nwp_records.size())
        throw invalid_input("feature_percentages: record lists must be paired");
    FeatureShare share;
    double sums[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    int64_t used[3] = {0, 0, 0};
    int64_t skipped[3] = {0, 0, 0};

    for (size_t r = 0; r < brain_records.size(); ++r) {
        const AttributionRecord& ba = *brain_records[r];
        const AttributionRecord& nwp = *nwp_records[r];
        const TopSet ba_top = top_set(ba, threshold_pct);
        const TopSet nwp_top = top_set(nwp, threshold_pct);
        const std::unordered_set<int64_t> a(ba_top.words.begin(), ba_top.words.end());
        const std::unordered_set<int64_t> b(nwp_top.words.begin(), nwp_top.words.end());

        // The context is the union of both records' word windows.
        std::set<int64_t> window(ba.word_index.begin(), ba.word_index.end());
        window.insert(nwp.word_index.begin(), nwp.word_index.end());

        for (int cat = 0; cat < 3; ++cat) {
            int64_t denom = 0;
            int64_t counts[3] = {0, 0, 0};
            for (int64_t w : window) {
                const AnnotationSet& ann = corpus.words[static_cast<size_t>(w)].annotations;
                const std::vector<int>& ids = cat == 0   ? ann.semantic
                                              : cat == 1 ? ann.syntactic
                                                         : ann.discourse;
                denom += static_cast<int64_t>(ids.size());
                const bool in_a = a.count(w) > 0;
                const bool in_b = b.count(w) > 0;
                if (!in_a && !in_b) continue;
                const int group = in_a && in_b ? 2 : (in_a ? 0 : 1);
                counts[group] += static_cast<int64_t>(ids.size());
            }
            if (denom == 0) {
                skipped[cat] += 1;
                continue;
            }
            for (int gidx = 0; gidx < 3; ++gidx)
                sums[cat][gidx] += 100.0 * static_cast<double>(counts[gidx]) / static_cast<double>(denom);
            used[cat] += 1;
        }
    }

    for (int cat = 0; cat < 3; ++cat) {
        share.contexts_used[cat] = used[cat];
        if (skipped[cat] > 0)
            std::cerr << "warning: " << skipped[cat] << " contexts had no category-" << cat
                      << " features and were excluded\n";
        for (int gidx = 0; gidx < 3; ++gidx)
            share.percent[cat][gidx] = used[cat] == 0 ? -1.0 : sums[cat][gidx] / static_cast<double>(used[cat]);
    }
    return share;
}

std::vector<double> paper_thresholds() {
    return {1, 2, 3, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95, 98};
}

}  // namespace brainattr
