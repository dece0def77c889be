#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace protorefine {

// Row-major float matrix.  Embeddings and prototype vectors are kept in
// 32-bit floats so in-memory values round-trip the on-disk format bit-exactly.
struct MatrixF {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    MatrixF() = default;
    MatrixF(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    float at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(data.data() + i * cols, cols);
    }

    bool operator==(const MatrixF&) const = default;
};

struct PatchRecord {
    std::string patch_id;
    std::int64_t grid_x = 0;
    std::int64_t grid_y = 0;
    int coarse_label = 0;

    bool operator==(const PatchRecord&) const = default;
};

// One slide: ordered patch grid plus an N x d embedding matrix whose row j
// belongs to patches[j].  patch_size_px and magnification are opaque metadata.
struct SlideDataset {
    std::string slide_id;
    std::vector<PatchRecord> patches;
    MatrixF embeddings;
    int patch_size_px = 256;
    std::string magnification = "40x";

    std::size_t size() const { return patches.size(); }
    std::size_t dim() const { return embeddings.cols; }
    std::span<const float> embedding(std::size_t j) const { return embeddings.row(j); }

    bool operator==(const SlideDataset&) const = default;
};

enum class PrototypeLevel { local, global };

struct PrototypeSet {
    PrototypeLevel level = PrototypeLevel::local;
    std::optional<std::string> source_slide; // required iff level == local
    MatrixF vectors;                         // K x d
    std::vector<std::int64_t> member_counts; // one per prototype, each >= 1

    std::size_t count() const { return vectors.rows; }
    std::size_t dim() const { return vectors.cols; }
    std::span<const float> prototype(std::size_t k) const { return vectors.row(k); }

    bool operator==(const PrototypeSet&) const = default;
};

struct LabelEntry {
    std::string patch_id;
    int label = 0;    // {0,1}
    float score = 0.0f; // [0,1]

    bool operator==(const LabelEntry&) const = default;
};

struct LabelTable {
    std::string slide_id;
    std::vector<LabelEntry> entries;

    bool operator==(const LabelTable&) const = default;
};

struct MajorRule {
    enum class Kind { fixed_m, coverage };
    Kind kind = Kind::coverage;
    int m = 1;        // fixed_m
    double rho = 0.8; // coverage, in (0,1]

    static MajorRule fixed(int m) { return MajorRule{Kind::fixed_m, m, 0.0}; }
    static MajorRule coverage(double rho) { return MajorRule{Kind::coverage, 0, rho}; }
};

// All pipeline hyperparameters.
struct RefineConfig {
    int c_local = 8;      // local prototypes per slide
    int k_global = 16;    // global prototypes
    MajorRule major_rule; // coverage(0.8) by default
    double theta = 0.85;  // pseudo-label similarity threshold, in (-1,1)
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    int batch_half_size = 32;  // C: positives (= negatives) per batch
    int dynamic_iters = 500;   // T
    int refinetune_epochs = 3;
    double learning_rate = 0.01;
    std::uint64_t seed = 1;
    int kmeans_max_iters = 100;
    double kmeans_tol = 1e-6;
    // extensions (defaults keep the base behaviour)
    bool preserve_coarse_positives = false; // keep coarse positives positive in Eq.3 output
    int hidden_units = 0;                   // >0 switches the classifier to one hidden layer
    bool pooled_training = false;           // train one head across slides
};

// Throw DataError/ConfigError when invariants fail.
void validate(const SlideDataset& slide);
void validate(const PrototypeSet& set);
void validate(const LabelTable& table);
void validate(const RefineConfig& cfg);

// Check that a label table covers exactly the patches of a slide (same id set).
void check_matches_slide(const LabelTable& table, const SlideDataset& slide);

} // namespace protorefine
