#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "protorefine/types.hpp"

namespace protorefine {

struct ConfusionMatrix {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

// Metric values; a 0/0 ratio is NaN and its name is listed in undefined_flags.
struct MetricReport {
    std::string aggregation = "single"; // "single" | "macro" | "micro"
    double dice = 0.0, iou = 0.0, f1 = 0.0, ppv = 0.0, npv = 0.0, tpr = 0.0, tnr = 0.0,
           accuracy = 0.0;
    std::vector<std::string> undefined_flags;
    std::map<std::string, MetricReport> per_slide;
};

enum class Aggregation { macro, micro };

// Standard 2x2 tally with positive = label 1; both tables must cover the
// same patch_id set.
ConfusionMatrix confusion_matrix(const LabelTable& predicted, const LabelTable& truth);

MetricReport compute_metrics(const ConfusionMatrix& cm);

// macro: unweighted mean over slides with defined values (a metric undefined
// on some slide is excluded from that metric's mean); micro: metrics of the
// summed confusion matrix.  per_slide reports are attached either way.
MetricReport aggregate_reports(const std::vector<std::pair<std::string, ConfusionMatrix>>& per_slide,
                               Aggregation mode);

// JSON per the report schema: {"aggregation","dice",...,"per_slide","undefined_flags"}.
std::string report_to_json(const MetricReport& report);

} // namespace protorefine
