#include "protorefine/pseudo_label.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "protorefine/errors.hpp"

namespace protorefine {

FrequencyStats prototype_frequencies(const SlideDataset& slide,
                                     const std::vector<Assignment>& assignments, int K) {
    if (assignments.size() != slide.size())
        throw DataError("assignment count " + std::to_string(assignments.size()) +
                        " != patch count " + std::to_string(slide.size()));
    FrequencyStats stats;
    stats.counts.assign(static_cast<std::size_t>(K), 0);
    for (std::size_t j = 0; j < slide.size(); ++j) {
        if (slide.patches[j].coarse_label != 1) continue;
        const int a = assignments[j].prototype_index;
        if (a < 0 || a >= K)
            throw DataError("assignment index " + std::to_string(a) + " outside [0," +
                            std::to_string(K) + ")");
        ++stats.counts[static_cast<std::size_t>(a)];
        ++stats.total_in_annotation;
    }
    if (stats.total_in_annotation == 0)
        throw DataError("empty coarse annotation on slide '" + slide.slide_id + "'");
    return stats;
}

MajorSelection select_major_prototypes(const FrequencyStats& stats, const MajorRule& rule) {
    const std::size_t K = stats.counts.size();
    std::vector<int> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return stats.counts[static_cast<std::size_t>(a)] > stats.counts[static_cast<std::size_t>(b)];
    });
    std::size_t nonzero = 0;
    for (std::int64_t c : stats.counts)
        if (c > 0) ++nonzero;

    MajorSelection sel;
    sel.rule_used = rule;
    if (rule.kind == MajorRule::Kind::fixed_m) {
        if (rule.m < 1) throw ConfigError("fixed_m m must be >= 1");
        if (static_cast<std::size_t>(rule.m) > nonzero)
            throw DataError("fixed_m m=" + std::to_string(rule.m) +
                            " exceeds prototypes with nonzero count (maximum feasible m=" +
                            std::to_string(nonzero) + ")");
        sel.major_indices.assign(order.begin(), order.begin() + rule.m);
    } else {
        if (!(rule.rho > 0.0 && rule.rho <= 1.0)) throw ConfigError("coverage rho must be in (0,1]");
        const double target = rule.rho * static_cast<double>(stats.total_in_annotation);
        double cum = 0.0;
        for (int idx : order) {
            const std::int64_t c = stats.counts[static_cast<std::size_t>(idx)];
            if (c == 0) break;
            sel.major_indices.push_back(idx);
            cum += static_cast<double>(c);
            if (cum >= target) break;
        }
    }
    return sel;
}

LabelTable assign_pseudo_labels(const SlideDataset& slide, const PrototypeSet& globals,
                                const MajorSelection& major, double theta,
                                bool preserve_coarse_positives) {
    if (major.major_indices.empty()) throw DataError("empty major prototype selection");
    if (!(theta > -1.0 && theta < 1.0)) throw ConfigError("theta must be in (-1,1)");
    if (slide.dim() != globals.dim())
        throw DataError("pseudo-labeling: slide dim " + std::to_string(slide.dim()) +
                        " != prototype dim " + std::to_string(globals.dim()));
    for (int m : major.major_indices)
        if (m < 0 || static_cast<std::size_t>(m) >= globals.count())
            throw DataError("major index " + std::to_string(m) + " outside prototype set");

    LabelTable table;
    table.slide_id = slide.slide_id;
    table.entries.reserve(slide.size());
    for (std::size_t j = 0; j < slide.size(); ++j) {
        double best = -1.0;
        for (int m : major.major_indices)
            best = std::max(best, cosine_similarity(slide.embedding(j),
                                                    globals.prototype(static_cast<std::size_t>(m))));
        LabelEntry e;
        e.patch_id = slide.patches[j].patch_id;
        int label = best > theta ? 1 : 0;
        if (preserve_coarse_positives && slide.patches[j].coarse_label == 1) label = 1;
        e.label = label;
        // scores live in [0,1]; similarities below zero clamp to 0
        e.score = static_cast<float>(std::clamp(best, 0.0, 1.0));
        table.entries.push_back(std::move(e));
    }
    return table;
}

} // namespace protorefine
