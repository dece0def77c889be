#include "protorefine/prototyping.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "protorefine/errors.hpp"

namespace protorefine {

double cosine_similarity(std::span<const float> z, std::span<const float> h) {
    if (z.size() != h.size())
        throw DataError("cosine: dimension mismatch (" + std::to_string(z.size()) + " vs " +
                        std::to_string(h.size()) + ")");
    double dot = 0.0, nz = 0.0, nh = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        const double a = z[j];
        const double b = h[j];
        dot += a * b;
        nz += a * a;
        nh += b * b;
    }
    if (nz == 0.0 || nh == 0.0) throw DataError("cosine: zero-norm input");
    const double sim = dot / (std::sqrt(nz) * std::sqrt(nh));
    return std::clamp(sim, -1.0, 1.0);
}

SimilarityVector similarity_vector(std::span<const float> z, const PrototypeSet& globals) {
    SimilarityVector sv;
    sv.values.reserve(globals.count());
    for (std::size_t k = 0; k < globals.count(); ++k)
        sv.values.push_back(cosine_similarity(z, globals.prototype(k)));
    return sv;
}

Assignment assign_to_prototype(std::span<const float> z, const PrototypeSet& globals) {
    const SimilarityVector sv = similarity_vector(z, globals);
    Assignment a;
    a.prototype_index = 0;
    a.similarity = sv.values[0];
    for (std::size_t k = 1; k < sv.values.size(); ++k) {
        if (sv.values[k] > a.similarity) {
            a.similarity = sv.values[k];
            a.prototype_index = static_cast<int>(k);
        }
    }
    return a;
}

std::vector<Assignment> assign_all(const SlideDataset& slide, const PrototypeSet& set) {
    if (slide.dim() != set.dim())
        throw DataError("assignment: slide dim " + std::to_string(slide.dim()) +
                        " != prototype dim " + std::to_string(set.dim()));
    std::vector<Assignment> out;
    out.reserve(slide.size());
    for (std::size_t j = 0; j < slide.size(); ++j)
        out.push_back(assign_to_prototype(slide.embedding(j), set));
    return out;
}

namespace {

PrototypeSet result_to_set(const KMeansResult& km, std::size_t d, PrototypeLevel level,
                           std::optional<std::string> source) {
    PrototypeSet set;
    set.level = level;
    set.source_slide = std::move(source);
    const std::size_t k = km.centroids.size() / d;
    set.vectors = MatrixF(k, d);
    for (std::size_t i = 0; i < k * d; ++i)
        set.vectors.data[i] = static_cast<float>(km.centroids[i]);
    set.member_counts.assign(k, 0);
    for (int a : km.assignments) ++set.member_counts[static_cast<std::size_t>(a)];
    validate(set);
    return set;
}

} // namespace

PrototypeSet extract_local_prototypes(const SlideDataset& slide, int c, std::uint64_t seed,
                                      const RefineConfig& cfg) {
    if (c < 1) throw ConfigError("local prototype count must be >= 1");
    if (static_cast<std::size_t>(c) > slide.size())
        throw DataError("local prototype count " + std::to_string(c) + " exceeds patch count " +
                        std::to_string(slide.size()) + " on slide '" + slide.slide_id + "'");
    const KMeansResult km = kmeans_fit(slide.embeddings, c, seed, cfg.kmeans_max_iters, cfg.kmeans_tol);
    return result_to_set(km, slide.dim(), PrototypeLevel::local, slide.slide_id);
}

PrototypeSet aggregate_global_prototypes(const std::vector<PrototypeSet>& locals, int K,
                                         std::uint64_t seed, const RefineConfig& cfg) {
    if (locals.empty()) throw DataError("no local prototype sets to aggregate");
    const std::size_t d = locals.front().dim();
    std::size_t total = 0;
    for (const PrototypeSet& s : locals) {
        if (s.dim() != d)
            throw DataError("local prototype dimension mismatch: " + std::to_string(s.dim()) +
                            " vs " + std::to_string(d));
        total += s.count();
    }
    if (K < 1) throw ConfigError("global prototype count must be >= 1");
    if (static_cast<std::size_t>(K) > total)
        throw DataError("global prototype count " + std::to_string(K) +
                        " exceeds pooled local count " + std::to_string(total));

    MatrixF pooled(total, d);
    std::size_t r = 0;
    for (const PrototypeSet& s : locals)
        for (std::size_t i = 0; i < s.count(); ++i, ++r)
            std::copy(s.prototype(i).begin(), s.prototype(i).end(), pooled.data.begin() + r * d);

    const KMeansResult km = kmeans_fit(pooled, K, seed, cfg.kmeans_max_iters, cfg.kmeans_tol);
    return result_to_set(km, d, PrototypeLevel::global, std::nullopt);
}

} // namespace protorefine
