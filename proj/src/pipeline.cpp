#include "protorefine/pipeline.hpp"

#include <string>
#include <unordered_map>

#include "protorefine/errors.hpp"
#include "protorefine/pseudo_label.hpp"

namespace protorefine {

namespace {

LabelTable coarse_echo(const SlideDataset& slide) {
    LabelTable t;
    t.slide_id = slide.slide_id;
    t.entries.reserve(slide.size());
    for (const PatchRecord& p : slide.patches)
        t.entries.push_back({p.patch_id, p.coarse_label, static_cast<float>(p.coarse_label)});
    return t;
}

LabelTable pseudo_label_slide(const SlideDataset& slide, const PrototypeSet& ref,
                              const RefineConfig& cfg) {
    const std::vector<Assignment> assignments = assign_all(slide, ref);
    const FrequencyStats stats =
        prototype_frequencies(slide, assignments, static_cast<int>(ref.count()));
    const MajorSelection majors = select_major_prototypes(stats, cfg.major_rule);
    return assign_pseudo_labels(slide, ref, majors, cfg.theta, cfg.preserve_coarse_positives);
}

// Concatenated cohort for pooled training; patch ids are prefixed with the
// slide id and grid rows are shifted apart so the merged grid stays valid.
SlideDataset merge_slides(const std::vector<SlideDataset>& slides,
                          const std::vector<LabelTable>& labels, LabelTable& merged_labels) {
    SlideDataset pooled;
    pooled.slide_id = "pooled";
    const std::size_t d = slides.front().dim();
    std::size_t total = 0;
    for (const SlideDataset& s : slides) total += s.size();
    pooled.embeddings = MatrixF(total, d);
    std::int64_t y_offset = 0;
    std::size_t row = 0;
    merged_labels.slide_id = "pooled";
    for (std::size_t i = 0; i < slides.size(); ++i) {
        const SlideDataset& s = slides[i];
        std::int64_t max_y = 0;
        for (std::size_t j = 0; j < s.size(); ++j, ++row) {
            PatchRecord p = s.patches[j];
            p.patch_id = s.slide_id + "/" + p.patch_id;
            p.grid_y += y_offset;
            max_y = std::max(max_y, s.patches[j].grid_y);
            pooled.patches.push_back(std::move(p));
            std::copy(s.embedding(j).begin(), s.embedding(j).end(),
                      pooled.embeddings.data.begin() + row * d);
            LabelEntry e = labels[i].entries[j];
            e.patch_id = s.slide_id + "/" + labels[i].entries[j].patch_id;
            merged_labels.entries.push_back(std::move(e));
        }
        y_offset += max_y + 1;
    }
    return pooled;
}

} // namespace

void validate(const AblationToggles& t) {
    if (t.use_local_only && t.use_global)
        throw ConfigError("use_local_only and use_global are mutually exclusive");
    if (t.use_refinetune && !t.use_dynamic_sampling)
        throw ConfigError("use_refinetune requires use_dynamic_sampling");
}

PipelineResult run_pipeline(const std::vector<SlideDataset>& slides, const RefineConfig& cfg,
                            const AblationToggles& toggles, const TrainObserver& observer) {
    if (slides.empty()) throw DataError("no slides");
    validate(cfg);
    validate(toggles);
    const std::size_t d = slides.front().dim();
    for (const SlideDataset& s : slides)
        if (s.dim() != d)
            throw DataError("embedding dimension differs across slides (" + std::to_string(s.dim()) +
                            " vs " + std::to_string(d) + ")");

    PipelineResult result;
    const bool prototyping = toggles.use_local_only || toggles.use_global;

    if (prototyping) {
        result.locals.reserve(slides.size());
        for (const SlideDataset& s : slides)
            result.locals.push_back(extract_local_prototypes(s, cfg.c_local, cfg.seed, cfg));
        if (toggles.use_global)
            result.globals = aggregate_global_prototypes(result.locals, cfg.k_global, cfg.seed, cfg);
    }

    std::vector<LabelTable> pseudo;
    pseudo.reserve(slides.size());
    for (std::size_t i = 0; i < slides.size(); ++i) {
        if (!prototyping)
            pseudo.push_back(coarse_echo(slides[i]));
        else
            pseudo.push_back(pseudo_label_slide(
                slides[i], toggles.use_global ? *result.globals : result.locals[i], cfg));
    }

    result.slides.resize(slides.size());
    for (std::size_t i = 0; i < slides.size(); ++i) {
        result.slides[i].slide_id = slides[i].slide_id;
        result.slides[i].pseudo = pseudo[i];
    }

    if (!toggles.use_dynamic_sampling) {
        for (std::size_t i = 0; i < slides.size(); ++i) result.slides[i].refined = pseudo[i];
        return result;
    }

    if (cfg.pooled_training) {
        LabelTable merged_labels;
        const SlideDataset pooled = merge_slides(slides, pseudo, merged_labels);
        auto [head, records] = train_dynamic(pooled, merged_labels, cfg, observer);
        for (std::size_t i = 0; i < slides.size(); ++i) {
            SlideOutcome& out = result.slides[i];
            out.records = records; // shared training trace
            if (toggles.use_refinetune) {
                auto [h2, refined] = refinetune(slides[i], head, cfg);
                out.head = std::move(h2);
                out.refined = std::move(refined);
            } else {
                out.head = head;
                out.refined = predict_labels(head, slides[i], 0.5);
            }
        }
        return result;
    }

    for (std::size_t i = 0; i < slides.size(); ++i) {
        SlideOutcome& out = result.slides[i];
        auto [head, records] = train_dynamic(slides[i], pseudo[i], cfg, observer);
        out.records = std::move(records);
        if (toggles.use_refinetune) {
            auto [h2, refined] = refinetune(slides[i], head, cfg);
            out.head = std::move(h2);
            out.refined = std::move(refined);
        } else {
            out.head = std::move(head);
            out.refined = predict_labels(*out.head, slides[i], 0.5);
        }
    }
    return result;
}

MetricReport evaluate_tables(const std::vector<LabelTable>& predicted,
                             const std::vector<LabelTable>& truth, Aggregation mode) {
    if (predicted.size() != truth.size())
        throw DataError("evaluate: " + std::to_string(predicted.size()) + " predictions vs " +
                        std::to_string(truth.size()) + " truth tables");
    std::vector<std::pair<std::string, ConfusionMatrix>> cms;
    cms.reserve(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i)
        cms.emplace_back(predicted[i].slide_id, confusion_matrix(predicted[i], truth[i]));
    return aggregate_reports(cms, mode);
}

} // namespace protorefine
