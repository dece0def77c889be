#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "protorefine/types.hpp"

namespace protorefine {

// Logistic patch classifier over embeddings.  hidden_units > 0 switches to a
// one-hidden-layer variant with ReLU activations; weights then holds the
// output layer.
struct ClassifierHead {
    int d = 0;
    std::vector<double> weights; // d (linear) or hidden_units (hidden variant)
    double bias = 0.0;
    int hidden_units = 0;
    std::vector<double> hidden_weights; // hidden_units x d, row-major
    std::vector<double> hidden_bias;    // hidden_units

    bool is_hidden() const { return hidden_units > 0; }
    bool operator==(const ClassifierHead&) const = default;
};

struct HeadGradient {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> hidden_weights;
    std::vector<double> hidden_bias;
};

struct TrainRecord {
    int iteration = 0; // t, 1-based
    double loss = 0.0; // L_t: mean focal loss over the 2C batch samples
    std::vector<std::string> batch_pos_ids;
    std::vector<std::string> batch_neg_ids;
};

ClassifierHead make_zero_head(int d);
// Deterministic small uniform init; needed because a zero-initialized hidden
// net has zero gradient through its hidden layer.
ClassifierHead make_hidden_head(int d, int hidden_units, std::uint64_t seed);

// sigma(w.z + b), clamped to [1e-12, 1-1e-12].
double predict_proba(const ClassifierHead& head, std::span<const float> z);

// FL = -alpha_t (1 - p_t)^gamma ln(p_t) with p_t = p if y=1 else 1-p and
// alpha_t = alpha if y=1 else 1-alpha; p is clamped to [1e-7, 1-1e-7].
double focal_loss(double p, int y, double gamma, double alpha);

// Analytic gradient of focal_loss(predict_proba(head, z), y) in all parameters.
HeadGradient focal_loss_gradient(const ClassifierHead& head, std::span<const float> z, int y,
                                 double gamma, double alpha);

class Rng;

// C positive and C negative patch ids; without replacement when the class has
// >= C members, with replacement otherwise.
std::pair<std::vector<std::string>, std::vector<std::string>>
sample_balanced_batch(const LabelTable& labels, int C, Rng& rng);

using TrainObserver = std::function<void(const ClassifierHead&, const TrainRecord&)>;

// T = cfg.dynamic_iters iterations of balanced-batch focal-loss training with
// momentum SGD (momentum 0.9).  The observer, when set, is called with the
// pre-update head and the record of each iteration.
std::pair<ClassifierHead, std::vector<TrainRecord>>
train_dynamic(const SlideDataset& slide, const LabelTable& labels, const RefineConfig& cfg,
              const TrainObserver& observer = nullptr);

// Predict-update-train cycle: relabel every patch at threshold 0.5, run
// cfg.refinetune_epochs full passes over all patches in order (no balancing),
// then re-predict.  Returns the updated head and the final label table.
std::pair<ClassifierHead, LabelTable> refinetune(const SlideDataset& slide,
                                                 const ClassifierHead& head,
                                                 const RefineConfig& cfg);

// label = 1 iff predict_proba >= threshold; score = probability.
LabelTable predict_labels(const ClassifierHead& head, const SlideDataset& slide,
                          double threshold = 0.5);

// Head JSON: {"d","weights","bias","hidden","config_hash"}.
void save_head(const ClassifierHead& head, const std::string& path, const std::string& config_hash);
ClassifierHead load_head(const std::string& path);

// FNV-1a hex digest of the canonical config serialization; stored with heads.
std::string config_hash(const RefineConfig& cfg);

} // namespace protorefine
