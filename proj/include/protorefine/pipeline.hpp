#pragma once

#include <optional>
#include <vector>

#include "protorefine/classifier.hpp"
#include "protorefine/metrics.hpp"
#include "protorefine/prototyping.hpp"
#include "protorefine/types.hpp"

namespace protorefine {

// Stage toggles mirroring the ablation axes: neither prototype toggle set
// evaluates the coarse annotation as-is; use_local_only stops at per-slide
// prototypes; use_global adds cross-slide aggregation.  Training stages
// require a refinement source ordering: refinetune needs dynamic sampling.
struct AblationToggles {
    bool use_local_only = false;
    bool use_global = true;
    bool use_dynamic_sampling = true;
    bool use_refinetune = true;
};

void validate(const AblationToggles& toggles);

struct SlideOutcome {
    std::string slide_id;
    LabelTable pseudo;  // prototype-stage labels (coarse echo when prototyping is off)
    LabelTable refined; // final labels
    std::optional<ClassifierHead> head;
    std::vector<TrainRecord> records;
};

struct PipelineResult {
    std::vector<PrototypeSet> locals;     // one per slide when prototyping ran
    std::optional<PrototypeSet> globals;  // when use_global
    std::vector<SlideOutcome> slides;
};

PipelineResult run_pipeline(const std::vector<SlideDataset>& slides, const RefineConfig& cfg,
                            const AblationToggles& toggles,
                            const TrainObserver& observer = nullptr);

// Per-slide confusion matrices of predicted vs truth tables, aggregated.
MetricReport evaluate_tables(const std::vector<LabelTable>& predicted,
                             const std::vector<LabelTable>& truth, Aggregation mode);

} // namespace protorefine
