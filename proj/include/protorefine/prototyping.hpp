#pragma once

#include <span>
#include <vector>

#include "protorefine/kmeans.hpp"
#include "protorefine/types.hpp"

namespace protorefine {

struct SimilarityVector {
    std::vector<double> values; // values[k] = sim(z, h_k), each in [-1, 1]
};

struct Assignment {
    int prototype_index = 0; // k* = argmax_k sim(z, h_k), ties -> lowest index
    double similarity = 0.0;
};

// (z.h)/(|z||h|), clamped to [-1,1]; throws on zero-norm input.
double cosine_similarity(std::span<const float> z, std::span<const float> h);

SimilarityVector similarity_vector(std::span<const float> z, const PrototypeSet& globals);

Assignment assign_to_prototype(std::span<const float> z, const PrototypeSet& globals);

// All patches of a slide against one prototype set, in patch order.
std::vector<Assignment> assign_all(const SlideDataset& slide, const PrototypeSet& set);

// k-means over every embedding of the slide (inside and outside the coarse
// annotation); member_counts are the cluster sizes.
PrototypeSet extract_local_prototypes(const SlideDataset& slide, int c, std::uint64_t seed,
                                      const RefineConfig& cfg);

// Pools the vectors of the local sets (unweighted) and clusters them with
// k = K; member_counts are the number of local prototypes per global cluster.
PrototypeSet aggregate_global_prototypes(const std::vector<PrototypeSet>& locals, int K,
                                         std::uint64_t seed, const RefineConfig& cfg);

} // namespace protorefine
