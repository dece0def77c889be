#pragma once

#include <vector>

#include "protorefine/prototyping.hpp"
#include "protorefine/types.hpp"

namespace protorefine {

struct FrequencyStats {
    std::vector<std::int64_t> counts;       // counts[q] = in-annotation patches assigned to q
    std::int64_t total_in_annotation = 0;   // sum of counts, >= 1
};

struct MajorSelection {
    std::vector<int> major_indices; // descending by count, ties -> lowest index
    MajorRule rule_used;
};

// Tally of assigned prototypes over the patches with coarse_label = 1.
// Throws if the slide has no coarse positives.
FrequencyStats prototype_frequencies(const SlideDataset& slide,
                                     const std::vector<Assignment>& assignments, int K);

// fixed_m: exactly the m highest-count indices.  coverage(rho): the smallest
// descending-count prefix whose cumulative count reaches rho * total.
// Prototypes with count 0 are never selected.
MajorSelection select_major_prototypes(const FrequencyStats& stats, const MajorRule& rule);

// Eq.-style thresholding over every patch: score = max major similarity,
// label = 1 iff score > theta (strict).  With preserve_coarse_positives,
// patches already coarse-positive keep label 1 regardless of the threshold.
LabelTable assign_pseudo_labels(const SlideDataset& slide, const PrototypeSet& globals,
                                const MajorSelection& major, double theta,
                                bool preserve_coarse_positives = false);

} // namespace protorefine
