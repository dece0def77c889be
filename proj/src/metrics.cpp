#include "protorefine/metrics.hpp"

#include <cmath>
#include <limits>
#include <unordered_map>

#include <json.hpp>

#include "protorefine/errors.hpp"

namespace protorefine {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ratio(std::int64_t num, std::int64_t den) {
    if (den == 0) return kNaN;
    return static_cast<double>(num) / static_cast<double>(den);
}

struct Field {
    const char* name;
    double MetricReport::* member;
};

constexpr Field kFields[] = {
    {"dice", &MetricReport::dice}, {"iou", &MetricReport::iou},
    {"f1", &MetricReport::f1},     {"ppv", &MetricReport::ppv},
    {"npv", &MetricReport::npv},   {"tpr", &MetricReport::tpr},
    {"tnr", &MetricReport::tnr},   {"accuracy", &MetricReport::accuracy},
};

void collect_flags(MetricReport& r) {
    r.undefined_flags.clear();
    for (const Field& f : kFields)
        if (std::isnan(r.*(f.member))) r.undefined_flags.push_back(f.name);
}

} // namespace

ConfusionMatrix confusion_matrix(const LabelTable& predicted, const LabelTable& truth) {
    if (predicted.entries.size() != truth.entries.size())
        throw DataError("confusion matrix: table sizes differ (" +
                        std::to_string(predicted.entries.size()) + " vs " +
                        std::to_string(truth.entries.size()) + ")");
    std::unordered_map<std::string, int> truth_by_id;
    truth_by_id.reserve(truth.entries.size());
    for (const LabelEntry& e : truth.entries)
        if (!truth_by_id.emplace(e.patch_id, e.label).second)
            throw DataError("confusion matrix: duplicate patch_id '" + e.patch_id + "' in truth");
    ConfusionMatrix cm;
    for (const LabelEntry& e : predicted.entries) {
        auto it = truth_by_id.find(e.patch_id);
        if (it == truth_by_id.end())
            throw DataError("confusion matrix: patch_id '" + e.patch_id + "' missing from truth");
        if (e.label == 1)
            (it->second == 1 ? cm.tp : cm.fp)++;
        else
            (it->second == 1 ? cm.fn : cm.tn)++;
    }
    return cm;
}

MetricReport compute_metrics(const ConfusionMatrix& cm) {
    if (cm.total() < 1) throw DataError("confusion matrix is empty");
    MetricReport r;
    r.aggregation = "single";
    r.dice = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn);
    r.iou = ratio(cm.tp, cm.tp + cm.fp + cm.fn);
    r.f1 = r.dice; // identical at patch level
    r.ppv = ratio(cm.tp, cm.tp + cm.fp);
    r.npv = ratio(cm.tn, cm.tn + cm.fn);
    r.tpr = ratio(cm.tp, cm.tp + cm.fn);
    r.tnr = ratio(cm.tn, cm.tn + cm.fp);
    r.accuracy = ratio(cm.tp + cm.tn, cm.total());
    collect_flags(r);
    return r;
}

MetricReport aggregate_reports(const std::vector<std::pair<std::string, ConfusionMatrix>>& per_slide,
                               Aggregation mode) {
    if (per_slide.empty()) throw DataError("no slides to aggregate");
    MetricReport out;
    if (mode == Aggregation::micro) {
        ConfusionMatrix pooled;
        for (const auto& [id, cm] : per_slide) pooled += cm;
        out = compute_metrics(pooled);
        out.aggregation = "micro";
    } else {
        out.aggregation = "macro";
        for (const Field& f : kFields) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& [id, cm] : per_slide) {
                const MetricReport r = compute_metrics(cm);
                const double v = r.*(f.member);
                if (!std::isnan(v)) {
                    sum += v;
                    ++n;
                }
            }
            out.*(f.member) = n > 0 ? sum / static_cast<double>(n) : kNaN;
        }
        collect_flags(out);
    }
    for (const auto& [id, cm] : per_slide) out.per_slide[id] = compute_metrics(cm);
    return out;
}

std::string report_to_json(const MetricReport& report) {
    auto fill = [](const MetricReport& r, nlohmann::ordered_json& j) {
        j["aggregation"] = r.aggregation;
        for (const Field& f : kFields) {
            const double v = r.*(f.member);
            if (std::isnan(v))
                j[f.name] = nullptr;
            else
                j[f.name] = v;
        }
    };
    nlohmann::ordered_json j;
    fill(report, j);
    j["per_slide"] = nlohmann::ordered_json::object();
    for (const auto& [id, r] : report.per_slide) {
        nlohmann::ordered_json sj;
        fill(r, sj);
        sj["undefined_flags"] = r.undefined_flags;
        j["per_slide"][id] = sj;
    }
    j["undefined_flags"] = report.undefined_flags;
    return j.dump();
}

} // namespace protorefine
