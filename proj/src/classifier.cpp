#include "protorefine/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "protorefine/errors.hpp"
#include "protorefine/rng.hpp"

namespace protorefine {

namespace {

constexpr double kProbaClamp = 1e-12;
constexpr double kFocalEps = 1e-7;
constexpr double kMomentum = 0.9;
constexpr std::uint64_t kInitStream = 0x1417u;
constexpr std::uint64_t kBatchStream = 0xBA7Cu;

double clamp_p(double p) { return std::clamp(p, kFocalEps, 1.0 - kFocalEps); }

// forward pass; fills activations/pre-activations for the hidden variant
double score_of(const ClassifierHead& head, std::span<const float> z, std::vector<double>* pre,
                std::vector<double>* act) {
    if (!head.is_hidden()) {
        double s = head.bias;
        for (int j = 0; j < head.d; ++j) s += head.weights[static_cast<std::size_t>(j)] * z[static_cast<std::size_t>(j)];
        return s;
    }
    const int h = head.hidden_units;
    double s = head.bias;
    if (pre) pre->resize(static_cast<std::size_t>(h));
    if (act) act->resize(static_cast<std::size_t>(h));
    for (int i = 0; i < h; ++i) {
        double p = head.hidden_bias[static_cast<std::size_t>(i)];
        const double* wrow = head.hidden_weights.data() + static_cast<std::size_t>(i) * head.d;
        for (int j = 0; j < head.d; ++j) p += wrow[j] * z[static_cast<std::size_t>(j)];
        const double a = p > 0.0 ? p : 0.0;
        if (pre) (*pre)[static_cast<std::size_t>(i)] = p;
        if (act) (*act)[static_cast<std::size_t>(i)] = a;
        s += head.weights[static_cast<std::size_t>(i)] * a;
    }
    return s;
}

// d(FL)/d(score) at clamped p
double focal_dscore(double p, int y, double gamma, double alpha) {
    p = clamp_p(p);
    if (y == 1) return alpha * std::pow(1.0 - p, gamma) * (gamma * p * std::log(p) - (1.0 - p));
    return (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * std::log1p(-p));
}

void check_dims(const ClassifierHead& head, std::span<const float> z) {
    if (static_cast<int>(z.size()) != head.d)
        throw DataError("classifier: embedding dim " + std::to_string(z.size()) +
                        " != head dim " + std::to_string(head.d));
}

struct Momentum {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> hidden_weights;
    std::vector<double> hidden_bias;

    explicit Momentum(const ClassifierHead& head)
        : weights(head.weights.size(), 0.0),
          hidden_weights(head.hidden_weights.size(), 0.0),
          hidden_bias(head.hidden_bias.size(), 0.0) {}
};

void apply_update(ClassifierHead& head, Momentum& mom, const HeadGradient& g, double lr) {
    for (std::size_t i = 0; i < head.weights.size(); ++i) {
        mom.weights[i] = kMomentum * mom.weights[i] + g.weights[i];
        head.weights[i] -= lr * mom.weights[i];
    }
    mom.bias = kMomentum * mom.bias + g.bias;
    head.bias -= lr * mom.bias;
    for (std::size_t i = 0; i < head.hidden_weights.size(); ++i) {
        mom.hidden_weights[i] = kMomentum * mom.hidden_weights[i] + g.hidden_weights[i];
        head.hidden_weights[i] -= lr * mom.hidden_weights[i];
    }
    for (std::size_t i = 0; i < head.hidden_bias.size(); ++i) {
        mom.hidden_bias[i] = kMomentum * mom.hidden_bias[i] + g.hidden_bias[i];
        head.hidden_bias[i] -= lr * mom.hidden_bias[i];
    }
}

void accumulate(HeadGradient& acc, const HeadGradient& g) {
    for (std::size_t i = 0; i < acc.weights.size(); ++i) acc.weights[i] += g.weights[i];
    acc.bias += g.bias;
    for (std::size_t i = 0; i < acc.hidden_weights.size(); ++i)
        acc.hidden_weights[i] += g.hidden_weights[i];
    for (std::size_t i = 0; i < acc.hidden_bias.size(); ++i) acc.hidden_bias[i] += g.hidden_bias[i];
}

void scale(HeadGradient& g, double s) {
    for (double& v : g.weights) v *= s;
    g.bias *= s;
    for (double& v : g.hidden_weights) v *= s;
    for (double& v : g.hidden_bias) v *= s;
}

HeadGradient zero_gradient(const ClassifierHead& head) {
    HeadGradient g;
    g.weights.assign(head.weights.size(), 0.0);
    g.hidden_weights.assign(head.hidden_weights.size(), 0.0);
    g.hidden_bias.assign(head.hidden_bias.size(), 0.0);
    return g;
}

ClassifierHead make_initial_head(const SlideDataset& slide, const RefineConfig& cfg) {
    const int d = static_cast<int>(slide.dim());
    if (cfg.hidden_units > 0)
        return make_hidden_head(d, cfg.hidden_units, mix_seed(cfg.seed, kInitStream));
    return make_zero_head(d);
}

std::unordered_map<std::string, std::size_t> row_index(const SlideDataset& slide) {
    std::unordered_map<std::string, std::size_t> idx;
    idx.reserve(slide.size());
    for (std::size_t j = 0; j < slide.size(); ++j) idx.emplace(slide.patches[j].patch_id, j);
    return idx;
}

} // namespace

ClassifierHead make_zero_head(int d) {
    ClassifierHead head;
    head.d = d;
    head.weights.assign(static_cast<std::size_t>(d), 0.0);
    head.bias = 0.0;
    return head;
}

ClassifierHead make_hidden_head(int d, int hidden_units, std::uint64_t seed) {
    ClassifierHead head;
    head.d = d;
    head.hidden_units = hidden_units;
    Rng rng(seed);
    const double r1 = std::sqrt(6.0 / static_cast<double>(d + hidden_units));
    head.hidden_weights.resize(static_cast<std::size_t>(hidden_units) * d);
    for (double& w : head.hidden_weights) w = (2.0 * rng.uniform() - 1.0) * r1;
    head.hidden_bias.assign(static_cast<std::size_t>(hidden_units), 0.0);
    const double r2 = std::sqrt(6.0 / static_cast<double>(hidden_units + 1));
    head.weights.resize(static_cast<std::size_t>(hidden_units));
    for (double& w : head.weights) w = (2.0 * rng.uniform() - 1.0) * r2;
    head.bias = 0.0;
    return head;
}

double predict_proba(const ClassifierHead& head, std::span<const float> z) {
    check_dims(head, z);
    const double s = score_of(head, z, nullptr, nullptr);
    if (!std::isfinite(s)) throw DataError("classifier: non-finite score");
    const double p = 1.0 / (1.0 + std::exp(-s));
    return std::clamp(p, kProbaClamp, 1.0 - kProbaClamp);
}

double focal_loss(double p, int y, double gamma, double alpha) {
    p = clamp_p(p);
    const double pt = y == 1 ? p : 1.0 - p;
    const double at = y == 1 ? alpha : 1.0 - alpha;
    return -at * std::pow(1.0 - pt, gamma) * std::log(pt);
}

HeadGradient focal_loss_gradient(const ClassifierHead& head, std::span<const float> z, int y,
                                 double gamma, double alpha) {
    check_dims(head, z);
    std::vector<double> pre, act;
    const double s = score_of(head, z, &pre, &act);
    const double p = 1.0 / (1.0 + std::exp(-s));
    const double g = focal_dscore(p, y, gamma, alpha);

    HeadGradient grad = zero_gradient(head);
    if (!head.is_hidden()) {
        for (int j = 0; j < head.d; ++j)
            grad.weights[static_cast<std::size_t>(j)] = g * z[static_cast<std::size_t>(j)];
        grad.bias = g;
        return grad;
    }
    const int h = head.hidden_units;
    grad.bias = g;
    for (int i = 0; i < h; ++i) {
        grad.weights[static_cast<std::size_t>(i)] = g * act[static_cast<std::size_t>(i)];
        if (pre[static_cast<std::size_t>(i)] > 0.0) {
            const double gi = g * head.weights[static_cast<std::size_t>(i)];
            grad.hidden_bias[static_cast<std::size_t>(i)] = gi;
            double* row = grad.hidden_weights.data() + static_cast<std::size_t>(i) * head.d;
            for (int j = 0; j < head.d; ++j) row[j] = gi * z[static_cast<std::size_t>(j)];
        }
    }
    return grad;
}

std::pair<std::vector<std::string>, std::vector<std::string>>
sample_balanced_batch(const LabelTable& labels, int C, Rng& rng) {
    if (C < 1) throw ConfigError("batch half size C must be >= 1");
    std::vector<const std::string*> pos, neg;
    for (const LabelEntry& e : labels.entries) (e.label == 1 ? pos : neg).push_back(&e.patch_id);
    if (pos.empty()) throw DataError("cannot balance: class positive empty");
    if (neg.empty()) throw DataError("cannot balance: class negative empty");

    auto draw = [&](const std::vector<const std::string*>& pool) {
        std::vector<std::string> out;
        out.reserve(static_cast<std::size_t>(C));
        if (pool.size() >= static_cast<std::size_t>(C)) {
            for (std::size_t i : rng.sample_without_replacement(pool.size(), static_cast<std::size_t>(C)))
                out.push_back(*pool[i]);
        } else {
            for (int i = 0; i < C; ++i) out.push_back(*pool[rng.below(pool.size())]);
        }
        return out;
    };
    auto pos_ids = draw(pos);
    auto neg_ids = draw(neg);
    return {std::move(pos_ids), std::move(neg_ids)};
}

std::pair<ClassifierHead, std::vector<TrainRecord>>
train_dynamic(const SlideDataset& slide, const LabelTable& labels, const RefineConfig& cfg,
              const TrainObserver& observer) {
    check_matches_slide(labels, slide);
    ClassifierHead head = make_initial_head(slide, cfg);
    std::vector<TrainRecord> records;
    if (cfg.dynamic_iters == 0) return {std::move(head), std::move(records)};

    const auto idx = row_index(slide);
    Rng rng(mix_seed(cfg.seed, kBatchStream));
    Momentum mom(head);
    const int C = cfg.batch_half_size;
    records.reserve(static_cast<std::size_t>(cfg.dynamic_iters));

    for (int t = 1; t <= cfg.dynamic_iters; ++t) {
        auto [pos_ids, neg_ids] = sample_balanced_batch(labels, C, rng);
        HeadGradient acc = zero_gradient(head);
        double loss = 0.0;
        auto visit = [&](const std::vector<std::string>& ids, int y) {
            for (const std::string& id : ids) {
                const std::size_t j = idx.at(id);
                const double p = predict_proba(head, slide.embedding(j));
                loss += focal_loss(p, y, cfg.focal_gamma, cfg.focal_alpha);
                accumulate(acc, focal_loss_gradient(head, slide.embedding(j), y, cfg.focal_gamma,
                                                    cfg.focal_alpha));
            }
        };
        visit(pos_ids, 1);
        visit(neg_ids, 0);
        const double inv = 1.0 / static_cast<double>(2 * C);
        loss *= inv;
        scale(acc, inv);
        if (!std::isfinite(loss))
            throw std::runtime_error("train_dynamic: non-finite loss at iteration " +
                                     std::to_string(t));

        TrainRecord rec;
        rec.iteration = t;
        rec.loss = loss;
        rec.batch_pos_ids = std::move(pos_ids);
        rec.batch_neg_ids = std::move(neg_ids);
        if (observer) observer(head, rec);
        records.push_back(std::move(rec));

        apply_update(head, mom, acc, cfg.learning_rate);
    }
    return {std::move(head), std::move(records)};
}

std::pair<ClassifierHead, LabelTable> refinetune(const SlideDataset& slide,
                                                 const ClassifierHead& head_in,
                                                 const RefineConfig& cfg) {
    ClassifierHead head = head_in;
    const LabelTable updated = predict_labels(head, slide, 0.5);

    bool any_pos = false, any_neg = false;
    for (const LabelEntry& e : updated.entries) (e.label == 1 ? any_pos : any_neg) = true;
    if (!(any_pos && any_neg))
        std::cerr << "warning: updated pseudo-labels on slide '" << slide.slide_id
                  << "' collapse to one class; re-finetuning on the full dataset anyway\n";

    if (cfg.refinetune_epochs > 0) {
        Momentum mom(head);
        for (int e = 0; e < cfg.refinetune_epochs; ++e) {
            // one full-dataset gradient step per epoch: mean focal loss over
            // all N patches, fixed accumulation order, no balancing
            HeadGradient acc = zero_gradient(head);
            for (std::size_t j = 0; j < slide.size(); ++j)
                accumulate(acc, focal_loss_gradient(head, slide.embedding(j),
                                                    updated.entries[j].label, cfg.focal_gamma,
                                                    cfg.focal_alpha));
            scale(acc, 1.0 / static_cast<double>(slide.size()));
            apply_update(head, mom, acc, cfg.learning_rate);
        }
    }
    LabelTable final_labels = predict_labels(head, slide, 0.5);
    return {std::move(head), std::move(final_labels)};
}

LabelTable predict_labels(const ClassifierHead& head, const SlideDataset& slide, double threshold) {
    LabelTable table;
    table.slide_id = slide.slide_id;
    table.entries.reserve(slide.size());
    for (std::size_t j = 0; j < slide.size(); ++j) {
        const double p = predict_proba(head, slide.embedding(j));
        LabelEntry e;
        e.patch_id = slide.patches[j].patch_id;
        e.label = p >= threshold ? 1 : 0;
        e.score = static_cast<float>(p);
        table.entries.push_back(std::move(e));
    }
    return table;
}

void save_head(const ClassifierHead& head, const std::string& path, const std::string& hash) {
    nlohmann::ordered_json j;
    j["d"] = head.d;
    j["weights"] = head.weights;
    j["bias"] = head.bias;
    if (head.is_hidden()) {
        nlohmann::ordered_json hj;
        hj["units"] = head.hidden_units;
        hj["weights"] = head.hidden_weights;
        hj["bias"] = head.hidden_bias;
        j["hidden"] = hj;
    } else {
        j["hidden"] = nullptr;
    }
    j["config_hash"] = hash;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << j.dump() << "\n";
    if (!out.good()) throw DataError("write failure on '" + path + "'");
}

ClassifierHead load_head(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + path + "': malformed JSON (" + e.what() + ")");
    }
    ClassifierHead head;
    try {
        head.d = j.at("d").get<int>();
        head.weights = j.at("weights").get<std::vector<double>>();
        head.bias = j.at("bias").get<double>();
        if (!j.at("hidden").is_null()) {
            const auto& hj = j.at("hidden");
            head.hidden_units = hj.at("units").get<int>();
            head.hidden_weights = hj.at("weights").get<std::vector<double>>();
            head.hidden_bias = hj.at("bias").get<std::vector<double>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + path + "': " + e.what());
    }
    const std::size_t expect_w =
        head.is_hidden() ? static_cast<std::size_t>(head.hidden_units) : static_cast<std::size_t>(head.d);
    if (head.weights.size() != expect_w)
        throw DataError("'" + path + "': weight vector length mismatch");
    if (head.is_hidden() &&
        (head.hidden_weights.size() != static_cast<std::size_t>(head.hidden_units) * head.d ||
         head.hidden_bias.size() != static_cast<std::size_t>(head.hidden_units)))
        throw DataError("'" + path + "': hidden layer shape mismatch");
    for (double v : head.weights)
        if (!std::isfinite(v)) throw DataError("'" + path + "': non-finite weight");
    if (!std::isfinite(head.bias)) throw DataError("'" + path + "': non-finite bias");
    for (double v : head.hidden_weights)
        if (!std::isfinite(v)) throw DataError("'" + path + "': non-finite hidden weight");
    for (double v : head.hidden_bias)
        if (!std::isfinite(v)) throw DataError("'" + path + "': non-finite hidden bias");
    return head;
}

std::string config_hash(const RefineConfig& cfg) {
    std::ostringstream ss;
    ss << cfg.c_local << '|' << cfg.k_global << '|'
       << (cfg.major_rule.kind == MajorRule::Kind::fixed_m ? "m" : "c") << '|' << cfg.major_rule.m
       << '|' << cfg.major_rule.rho << '|' << cfg.theta << '|' << cfg.focal_gamma << '|'
       << cfg.focal_alpha << '|' << cfg.batch_half_size << '|' << cfg.dynamic_iters << '|'
       << cfg.refinetune_epochs << '|' << cfg.learning_rate << '|' << cfg.seed << '|'
       << cfg.kmeans_max_iters << '|' << cfg.kmeans_tol << '|' << cfg.preserve_coarse_positives
       << '|' << cfg.hidden_units << '|' << cfg.pooled_training;
    const std::string s = ss.str();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace protorefine
