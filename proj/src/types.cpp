#include "protorefine/types.hpp"

#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "protorefine/errors.hpp"

namespace protorefine {

namespace {

void check_patch_id(const std::string& id) {
    if (id.empty()) throw DataError("empty patch_id");
    for (char c : id) {
        if (c == ',' || c == '"' || c == '\n' || c == '\r')
            throw DataError("patch_id '" + id + "' contains characters not representable in the label-table CSV");
    }
}

} // namespace

void validate(const SlideDataset& slide) {
    if (slide.slide_id.empty()) throw DataError("empty slide_id");
    const std::size_t n = slide.patches.size();
    if (slide.embeddings.rows != n)
        throw DataError("count mismatch: embedding rows=" + std::to_string(slide.embeddings.rows) +
                        ", manifest lines=" + std::to_string(n));
    if (n > 0 && slide.embeddings.cols == 0) throw DataError("embedding dimension is zero");

    std::unordered_set<std::string> ids;
    std::set<std::pair<std::int64_t, std::int64_t>> coords;
    for (std::size_t j = 0; j < n; ++j) {
        const PatchRecord& p = slide.patches[j];
        check_patch_id(p.patch_id);
        if (!ids.insert(p.patch_id).second)
            throw DataError("duplicate patch_id '" + p.patch_id + "' at row " + std::to_string(j));
        if (p.grid_x < 0 || p.grid_y < 0)
            throw DataError("negative grid coordinate at row " + std::to_string(j));
        if (!coords.insert({p.grid_x, p.grid_y}).second)
            throw DataError("duplicate grid coordinate (" + std::to_string(p.grid_x) + "," +
                            std::to_string(p.grid_y) + ") at row " + std::to_string(j));
        if (p.coarse_label != 0 && p.coarse_label != 1)
            throw DataError("coarse_label not in {0,1} at row " + std::to_string(j));
    }
    for (std::size_t j = 0; j < n; ++j) {
        double norm2 = 0.0;
        for (float v : slide.embeddings.row(j)) {
            if (!std::isfinite(v))
                throw DataError("non-finite embedding at row " + std::to_string(j));
            norm2 += static_cast<double>(v) * static_cast<double>(v);
        }
        if (norm2 == 0.0)
            throw DataError("zero-norm embedding at row " + std::to_string(j));
    }
}

void validate(const PrototypeSet& set) {
    if (set.level == PrototypeLevel::local && !set.source_slide.has_value())
        throw DataError("local prototype set without source_slide");
    if (set.level == PrototypeLevel::global && set.source_slide.has_value())
        throw DataError("global prototype set with source_slide");
    const std::size_t k = set.vectors.rows;
    if (k == 0) throw DataError("empty prototype set");
    if (set.member_counts.size() != k)
        throw DataError("member_counts length " + std::to_string(set.member_counts.size()) +
                        " != prototype count " + std::to_string(k));
    for (std::size_t i = 0; i < k; ++i) {
        if (set.member_counts[i] < 1)
            throw DataError("member_counts[" + std::to_string(i) + "] < 1");
        for (float v : set.vectors.row(i))
            if (!std::isfinite(v)) throw DataError("non-finite prototype at row " + std::to_string(i));
    }
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
            bool same = true;
            for (std::size_t c = 0; c < set.vectors.cols && same; ++c)
                same = set.vectors.at(i, c) == set.vectors.at(j, c);
            if (same)
                throw DataError("identical prototype vectors at rows " + std::to_string(i) + " and " +
                                std::to_string(j));
        }
    }
}

void validate(const LabelTable& table) {
    std::unordered_set<std::string> ids;
    for (std::size_t i = 0; i < table.entries.size(); ++i) {
        const LabelEntry& e = table.entries[i];
        check_patch_id(e.patch_id);
        if (!ids.insert(e.patch_id).second)
            throw DataError("duplicate patch_id '" + e.patch_id + "' at entry " + std::to_string(i));
        if (e.label != 0 && e.label != 1)
            throw DataError("label not in {0,1} at entry " + std::to_string(i));
        if (!std::isfinite(e.score) || e.score < 0.0f || e.score > 1.0f)
            throw DataError("score outside [0,1] at entry " + std::to_string(i));
    }
}

void validate(const RefineConfig& cfg) {
    if (cfg.c_local < 1) throw ConfigError("c_local must be >= 1");
    if (cfg.k_global < 1) throw ConfigError("k_global must be >= 1");
    if (cfg.major_rule.kind == MajorRule::Kind::fixed_m) {
        if (cfg.major_rule.m < 1) throw ConfigError("fixed_m m must be >= 1");
        if (cfg.major_rule.m > cfg.k_global)
            throw ConfigError("fixed_m m exceeds k_global");
    } else {
        if (!(cfg.major_rule.rho > 0.0 && cfg.major_rule.rho <= 1.0))
            throw ConfigError("coverage rho must be in (0,1]");
    }
    if (!(cfg.theta > -1.0 && cfg.theta < 1.0)) throw ConfigError("theta must be in (-1,1)");
    if (!(cfg.focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be >= 0");
    if (!(cfg.focal_alpha > 0.0 && cfg.focal_alpha < 1.0))
        throw ConfigError("focal_alpha must be in (0,1)");
    if (cfg.batch_half_size < 1) throw ConfigError("batch_half_size must be >= 1");
    if (cfg.dynamic_iters < 0) throw ConfigError("dynamic_iters must be >= 0");
    if (cfg.refinetune_epochs < 0) throw ConfigError("refinetune_epochs must be >= 0");
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (cfg.kmeans_max_iters < 1) throw ConfigError("kmeans_max_iters must be >= 1");
    if (!(cfg.kmeans_tol >= 0.0)) throw ConfigError("kmeans_tol must be >= 0");
    if (cfg.hidden_units < 0) throw ConfigError("hidden_units must be >= 0");
}

void check_matches_slide(const LabelTable& table, const SlideDataset& slide) {
    if (table.entries.size() != slide.patches.size())
        throw DataError("label table has " + std::to_string(table.entries.size()) +
                        " entries for a slide with " + std::to_string(slide.patches.size()) + " patches");
    std::unordered_map<std::string, int> ids;
    for (const auto& p : slide.patches) ids.emplace(p.patch_id, 0);
    for (const auto& e : table.entries) {
        auto it = ids.find(e.patch_id);
        if (it == ids.end())
            throw DataError("label table patch_id '" + e.patch_id + "' not present on slide '" +
                            slide.slide_id + "'");
    }
}

} // namespace protorefine
