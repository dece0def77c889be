#pragma once

#include <cstdint>
#include <vector>

#include "protorefine/types.hpp"

namespace protorefine {

// Parameters of the synthetic cohort generator.  Embeddings are drawn from
// per-pattern isotropic Gaussians whose means are rescaled so the minimum
// pairwise distance equals exactly 6 * blob_sigma; the n_cancer_patterns
// mutually closest patterns are the positive ones.
struct SynthSpec {
    int grid_w = 64;
    int grid_h = 32;
    int d = 32;
    int n_tissue_patterns = 6;
    int n_cancer_patterns = 2;
    double blob_sigma = 1.0;
    int region_count = 1;            // connected cancer regions per slide
    double boundary_flip_rate = 0.25; // flip probability inside the boundary band
    int dilation_radius = 2;          // coarse over-annotation in patches
    std::uint64_t seed = 1;
};

void validate(const SynthSpec& spec);

struct SynthSlide {
    SlideDataset slide;  // coarse labels in the patch records
    LabelTable truth;    // ground-truth labels
};

// Pattern means shared by every slide generated from this spec (cancer
// patterns first).  Deterministic in spec.seed.
std::vector<std::vector<double>> pattern_means(const SynthSpec& spec);

// Deterministic under (spec.seed, slide_index).  Coarse labels are the
// ground truth dilated by dilation_radius (Chebyshev), then flipped with
// probability boundary_flip_rate inside the band within dilation_radius + 1
// of the region boundary.
SynthSlide generate_slide(const SynthSpec& spec, int slide_index);

std::vector<SynthSlide> generate_cohort(const SynthSpec& spec, int n_slides);

} // namespace protorefine
