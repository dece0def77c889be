// protorefine: refine coarse per-patch annotations with prototype-guided
// pseudo-labeling and a focal-loss patch classifier.
//
// Exit codes: 0 success, 1 data error, 2 config error, 3 internal error.
// Diagnostics go to stderr; machine-readable output goes to files (or stdout
// for `eval`).

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "protorefine/classifier.hpp"
#include "protorefine/errors.hpp"
#include "protorefine/io.hpp"
#include "protorefine/metrics.hpp"
#include "protorefine/pipeline.hpp"
#include "protorefine/pseudo_label.hpp"
#include "protorefine/synth.hpp"

namespace fs = std::filesystem;
using namespace protorefine;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct PipelineConfig {
    RefineConfig cfg;
    AblationToggles toggles;
    std::string aggregation = "macro";
    int seeds = 1;
    std::optional<SynthSpec> synth;
    int synth_slides = 8;
    std::vector<std::string> slides; // manifest paths
    std::string out_dir;
};

json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ConfigError("'" + path + "': malformed JSON (" + e.what() + ")");
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
}

SynthSpec parse_synth_spec(const json& j, std::uint64_t default_seed) {
    SynthSpec s;
    s.seed = default_seed;
    read_field(j, "grid_w", s.grid_w);
    read_field(j, "grid_h", s.grid_h);
    read_field(j, "d", s.d);
    read_field(j, "n_tissue_patterns", s.n_tissue_patterns);
    read_field(j, "n_cancer_patterns", s.n_cancer_patterns);
    read_field(j, "blob_sigma", s.blob_sigma);
    read_field(j, "region_count", s.region_count);
    read_field(j, "boundary_flip_rate", s.boundary_flip_rate);
    read_field(j, "dilation_radius", s.dilation_radius);
    read_field(j, "seed", s.seed);
    validate(s);
    return s;
}

PipelineConfig parse_config(const json& j) {
    PipelineConfig pc;
    RefineConfig& c = pc.cfg;
    read_field(j, "c_local", c.c_local);
    read_field(j, "k_global", c.k_global);
    std::string rule = c.major_rule.kind == MajorRule::Kind::coverage ? "coverage" : "fixed_m";
    read_field(j, "major_rule", rule);
    if (rule == "coverage")
        c.major_rule.kind = MajorRule::Kind::coverage;
    else if (rule == "fixed_m")
        c.major_rule.kind = MajorRule::Kind::fixed_m;
    else
        throw ConfigError("major_rule must be 'coverage' or 'fixed_m'");
    read_field(j, "major_rho", c.major_rule.rho);
    read_field(j, "major_m", c.major_rule.m);
    read_field(j, "theta", c.theta);
    read_field(j, "focal_gamma", c.focal_gamma);
    read_field(j, "focal_alpha", c.focal_alpha);
    read_field(j, "batch_half_size", c.batch_half_size);
    read_field(j, "dynamic_iters", c.dynamic_iters);
    read_field(j, "refinetune_epochs", c.refinetune_epochs);
    read_field(j, "learning_rate", c.learning_rate);
    read_field(j, "seed", c.seed);
    read_field(j, "kmeans_max_iters", c.kmeans_max_iters);
    read_field(j, "kmeans_tol", c.kmeans_tol);
    read_field(j, "preserve_coarse_positives", c.preserve_coarse_positives);
    read_field(j, "hidden_units", c.hidden_units);
    read_field(j, "pooled_training", c.pooled_training);

    if (const char* env = std::getenv("PROTO_REFINE_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0')
            throw ConfigError("PROTO_REFINE_SEED is not an unsigned integer");
        c.seed = static_cast<std::uint64_t>(v);
    }

    read_field(j, "use_local_only", pc.toggles.use_local_only);
    read_field(j, "use_global", pc.toggles.use_global);
    read_field(j, "use_dynamic_sampling", pc.toggles.use_dynamic_sampling);
    read_field(j, "use_refinetune", pc.toggles.use_refinetune);
    read_field(j, "aggregation", pc.aggregation);
    if (pc.aggregation != "macro" && pc.aggregation != "micro")
        throw ConfigError("aggregation must be 'macro' or 'micro'");
    read_field(j, "seeds", pc.seeds);
    if (pc.seeds < 1) throw ConfigError("seeds must be >= 1");
    read_field(j, "out_dir", pc.out_dir);
    read_field(j, "slides", pc.slides);
    if (j.contains("synth")) {
        pc.synth = parse_synth_spec(j.at("synth"), c.seed);
        read_field(j.at("synth"), "n_slides", pc.synth_slides);
        if (pc.synth_slides < 1) throw ConfigError("n_slides must be >= 1");
    }
    validate(c);
    validate(pc.toggles);
    return pc;
}

std::string embedding_path_for(const std::string& manifest_path) {
    fs::path p(manifest_path);
    p.replace_extension(".pemb");
    return p.string();
}

std::string truth_path_for(const std::string& manifest_path) {
    fs::path p(manifest_path);
    p.replace_extension(".truth.csv");
    return p.string();
}

LabelTable coarse_table(const SlideDataset& s) {
    LabelTable t;
    t.slide_id = s.slide_id;
    for (const auto& p : s.patches)
        t.entries.push_back({p.patch_id, p.coarse_label, static_cast<float>(p.coarse_label)});
    return t;
}

void write_train_records(const std::vector<TrainRecord>& records, const std::string& path) {
    std::string out = "iteration,loss\n";
    char buf[64];
    for (const TrainRecord& r : records) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g\n", r.iteration, r.loss);
        out += buf;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f << out;
    if (!f.good()) throw DataError("write failure on '" + path + "'");
}

ordered_json report_json(const MetricReport& r) {
    return ordered_json::parse(report_to_json(r));
}

// ---------------------------------------------------------------- synth ----

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    const json j = parse_json_file(spec_path);
    const json& sj = j.contains("synth") ? j.at("synth") : j;
    const SynthSpec spec = parse_synth_spec(sj, SynthSpec{}.seed);
    int n_slides = 8;
    read_field(sj, "n_slides", n_slides);
    if (n_slides < 1) throw ConfigError("n_slides must be >= 1");

    fs::create_directories(out_dir);
    ordered_json cohort = ordered_json::array();
    for (int i = 0; i < n_slides; ++i) {
        const SynthSlide s = generate_slide(spec, i);
        const fs::path base = fs::path(out_dir) / s.slide.slide_id;
        save_slide(s.slide, base.string() + ".jsonl", base.string() + ".pemb");
        save_label_table(s.truth, base.string() + ".truth.csv");
        ordered_json entry;
        entry["slide_id"] = s.slide.slide_id;
        entry["manifest"] = s.slide.slide_id + ".jsonl";
        entry["embeddings"] = s.slide.slide_id + ".pemb";
        entry["truth"] = s.slide.slide_id + ".truth.csv";
        cohort.push_back(entry);
    }
    std::ofstream f(fs::path(out_dir) / "cohort.json", std::ios::binary | std::ios::trunc);
    f << cohort.dump(2) << "\n";
    if (!f.good()) throw DataError("write failure on cohort.json");
    std::cerr << "wrote " << n_slides << " slides to " << out_dir << "\n";
    return 0;
}

// ------------------------------------------------------------ prototype ----

int cmd_prototype(const std::vector<std::string>& manifests, const std::string& config_path,
                  const std::string& out_dir) {
    const PipelineConfig pc = parse_config(parse_json_file(config_path));
    fs::create_directories(out_dir);
    std::vector<PrototypeSet> locals;
    for (const std::string& m : manifests) {
        const SlideDataset slide = load_slide(m, embedding_path_for(m));
        locals.push_back(extract_local_prototypes(slide, pc.cfg.c_local, pc.cfg.seed, pc.cfg));
        save_prototypes(locals.back(),
                        (fs::path(out_dir) / ("local_" + slide.slide_id + ".pemb")).string());
    }
    if (!pc.toggles.use_local_only) {
        const PrototypeSet global =
            aggregate_global_prototypes(locals, pc.cfg.k_global, pc.cfg.seed, pc.cfg);
        save_prototypes(global, (fs::path(out_dir) / "global.pemb").string());
    }
    std::cerr << "wrote prototypes for " << manifests.size() << " slides to " << out_dir << "\n";
    return 0;
}

// --------------------------------------------------------------- refine ----

int cmd_refine(const std::string& manifest, const std::string& proto_path,
               const std::string& config_path, const std::string& out_csv) {
    const PipelineConfig pc = parse_config(parse_json_file(config_path));
    const SlideDataset slide = load_slide(manifest, embedding_path_for(manifest));
    const PrototypeSet protos = load_prototypes(proto_path);
    const auto assignments = assign_all(slide, protos);
    const FrequencyStats stats =
        prototype_frequencies(slide, assignments, static_cast<int>(protos.count()));
    const MajorSelection majors = select_major_prototypes(stats, pc.cfg.major_rule);
    const LabelTable pseudo = assign_pseudo_labels(slide, protos, majors, pc.cfg.theta,
                                                   pc.cfg.preserve_coarse_positives);
    save_label_table(pseudo, out_csv);
    std::cerr << "wrote pseudo-labels for slide '" << slide.slide_id << "' (" << majors.major_indices.size()
              << " major prototypes)\n";
    return 0;
}

// ---------------------------------------------------------------- train ----

int cmd_train(const std::string& manifest, const std::string& labels_csv,
              const std::string& config_path, const std::string& out_dir) {
    const PipelineConfig pc = parse_config(parse_json_file(config_path));
    const SlideDataset slide = load_slide(manifest, embedding_path_for(manifest));
    const LabelTable labels = load_label_table(labels_csv, slide.slide_id);
    fs::create_directories(out_dir);

    auto [head, records] = train_dynamic(slide, labels, pc.cfg);
    LabelTable refined;
    if (pc.toggles.use_refinetune) {
        auto [h2, r2] = refinetune(slide, head, pc.cfg);
        head = std::move(h2);
        refined = std::move(r2);
    } else {
        refined = predict_labels(head, slide, 0.5);
    }
    save_head(head, (fs::path(out_dir) / "head.json").string(), config_hash(pc.cfg));
    write_train_records(records, (fs::path(out_dir) / "train_records.csv").string());
    save_label_table(refined, (fs::path(out_dir) / "refined.csv").string());
    std::cerr << "trained on " << slide.size() << " patches (" << records.size() << " iterations)\n";
    return 0;
}

// ----------------------------------------------------------------- eval ----

int cmd_eval(const std::vector<std::string>& pred_paths, const std::vector<std::string>& truth_paths,
             const std::string& aggregation) {
    if (pred_paths.size() != truth_paths.size())
        throw ConfigError("--pred and --truth must be given the same number of times");
    if (pred_paths.empty()) throw ConfigError("at least one --pred/--truth pair is required");
    std::vector<std::pair<std::string, ConfusionMatrix>> cms;
    for (std::size_t i = 0; i < pred_paths.size(); ++i) {
        const std::string id = fs::path(pred_paths[i]).stem().string();
        const LabelTable pred = load_label_table(pred_paths[i], id);
        const LabelTable truth = load_label_table(truth_paths[i], id);
        cms.emplace_back(id, confusion_matrix(pred, truth));
    }
    if (aggregation.empty()) {
        std::cout << report_to_json(aggregate_reports(cms, Aggregation::macro)) << "\n";
        std::cout << report_to_json(aggregate_reports(cms, Aggregation::micro)) << "\n";
    } else {
        const Aggregation mode = aggregation == "micro" ? Aggregation::micro : Aggregation::macro;
        std::cout << report_to_json(aggregate_reports(cms, mode)) << "\n";
    }
    return 0;
}

// --------------------------------------------------------------- render ----

int cmd_render(const std::string& labels_csv, const std::string& manifest,
               const std::string& out_pgm) {
    const SlideDataset slide = load_slide(manifest, embedding_path_for(manifest));
    const LabelTable labels = load_label_table(labels_csv, slide.slide_id);
    render_label_mask(slide.patches, labels, out_pgm);
    return 0;
}

// ------------------------------------------------------------- pipeline ----

struct CohortData {
    std::vector<SlideDataset> slides;
    std::vector<LabelTable> truth; // empty when unavailable
};

CohortData load_cohort(const PipelineConfig& pc, const fs::path& out_dir) {
    CohortData data;
    if (pc.synth.has_value()) {
        for (int i = 0; i < pc.synth_slides; ++i) {
            SynthSlide s = generate_slide(*pc.synth, i);
            const fs::path base = out_dir / s.slide.slide_id;
            save_slide(s.slide, base.string() + ".jsonl", base.string() + ".pemb");
            save_label_table(s.truth, base.string() + ".truth.csv");
            data.slides.push_back(std::move(s.slide));
            data.truth.push_back(std::move(s.truth));
        }
        return data;
    }
    if (pc.slides.empty())
        throw ConfigError("pipeline config needs either 'synth' or a non-empty 'slides' list");
    bool all_truth = true;
    for (const std::string& m : pc.slides) {
        data.slides.push_back(load_slide(m, embedding_path_for(m)));
        const std::string tp = truth_path_for(m);
        if (fs::exists(tp))
            data.truth.push_back(load_label_table(tp, data.slides.back().slide_id));
        else
            all_truth = false;
    }
    if (!all_truth) data.truth.clear();
    return data;
}

ordered_json run_pipeline_once(const PipelineConfig& pc, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    CohortData data = load_cohort(pc, out_dir);

    const PipelineResult result = run_pipeline(data.slides, pc.cfg, pc.toggles);

    if (!result.locals.empty()) {
        const fs::path proto_dir = out_dir / "prototypes";
        fs::create_directories(proto_dir);
        for (std::size_t i = 0; i < result.locals.size(); ++i)
            save_prototypes(result.locals[i],
                            (proto_dir / ("local_" + data.slides[i].slide_id + ".pemb")).string());
        if (result.globals.has_value())
            save_prototypes(*result.globals, (proto_dir / "global.pemb").string());
    }

    std::vector<LabelTable> refined;
    for (std::size_t i = 0; i < result.slides.size(); ++i) {
        const SlideOutcome& out = result.slides[i];
        const fs::path slide_dir = out_dir / out.slide_id;
        fs::create_directories(slide_dir);
        save_label_table(out.pseudo, (slide_dir / "pseudo.csv").string());
        save_label_table(out.refined, (slide_dir / "refined.csv").string());
        if (out.head.has_value()) {
            save_head(*out.head, (slide_dir / "head.json").string(), config_hash(pc.cfg));
            write_train_records(out.records, (slide_dir / "train_records.csv").string());
        }
        render_label_mask(data.slides[i].patches, out.refined, (slide_dir / "refined.pgm").string());
        refined.push_back(out.refined);
    }

    ordered_json report;
    report["seed"] = pc.cfg.seed;
    report["aggregation"] = pc.aggregation;
    report["n_slides"] = data.slides.size();
    if (!data.truth.empty()) {
        std::vector<LabelTable> coarse;
        for (const SlideDataset& s : data.slides) coarse.push_back(coarse_table(s));
        report["refined"] = report_json(evaluate_tables(refined, data.truth, Aggregation::macro));
        report["refined_micro"] =
            report_json(evaluate_tables(refined, data.truth, Aggregation::micro));
        report["coarse"] = report_json(evaluate_tables(coarse, data.truth, Aggregation::macro));
        report["coarse_micro"] =
            report_json(evaluate_tables(coarse, data.truth, Aggregation::micro));
    } else {
        report["note"] = "no ground truth provided; metrics skipped";
    }
    std::ofstream f(out_dir / "report.json", std::ios::binary | std::ios::trunc);
    f << report.dump(2) << "\n";
    if (!f.good()) throw DataError("write failure on report.json");
    return report;
}

int cmd_pipeline(const std::string& config_path, int seeds_override) {
    PipelineConfig pc = parse_config(parse_json_file(config_path));
    if (seeds_override > 0) pc.seeds = seeds_override;
    if (pc.out_dir.empty()) throw ConfigError("pipeline config needs 'out_dir'");

    if (pc.seeds == 1) {
        run_pipeline_once(pc, pc.out_dir);
        std::cerr << "pipeline done; report at " << (fs::path(pc.out_dir) / "report.json") << "\n";
        return 0;
    }

    // multi-seed: rerun with seed, seed+1, ... and aggregate mean +- sd
    std::vector<ordered_json> per_seed;
    const std::uint64_t base = pc.cfg.seed;
    for (int i = 0; i < pc.seeds; ++i) {
        PipelineConfig run = pc;
        run.cfg.seed = base + static_cast<std::uint64_t>(i);
        if (run.synth.has_value()) run.synth->seed = run.cfg.seed;
        char name[32];
        std::snprintf(name, sizeof(name), "seed_%02d", i);
        per_seed.push_back(run_pipeline_once(run, fs::path(pc.out_dir) / name));
    }

    ordered_json multi;
    multi["base_seed"] = base;
    multi["seeds"] = pc.seeds;
    multi["per_seed"] = per_seed;
    const char* metrics[] = {"dice", "iou", "f1", "ppv", "npv", "tpr", "tnr", "accuracy"};
    ordered_json mean, sd;
    if (!per_seed.empty() && per_seed.front().contains("refined")) {
        for (const char* m : metrics) {
            std::vector<double> vals;
            for (const auto& r : per_seed)
                if (!r.at("refined").at(m).is_null()) vals.push_back(r.at("refined").at(m).get<double>());
            if (vals.empty()) {
                mean[m] = nullptr;
                sd[m] = nullptr;
                continue;
            }
            double mu = 0.0;
            for (double v : vals) mu += v;
            mu /= static_cast<double>(vals.size());
            double var = 0.0;
            for (double v : vals) var += (v - mu) * (v - mu);
            var = vals.size() > 1 ? var / static_cast<double>(vals.size() - 1) : 0.0;
            mean[m] = mu;
            sd[m] = std::sqrt(var);
        }
    }
    multi["refined_mean"] = mean;
    multi["refined_sd"] = sd;
    std::ofstream f(fs::path(pc.out_dir) / "multi_report.json", std::ios::binary | std::ios::trunc);
    f << multi.dump(2) << "\n";
    if (!f.good()) throw DataError("write failure on multi_report.json");
    std::cerr << "pipeline done for " << pc.seeds << " seeds; summary at "
              << (fs::path(pc.out_dir) / "multi_report.json") << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"prototype-guided coarse annotation refinement"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, config_path, manifest, proto_path, labels_csv, out_csv, out_pgm;
    std::vector<std::string> manifests, pred_paths, truth_paths;
    std::string aggregation;
    int seeds_override = 0;

    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
    synth->add_option("spec", spec_path, "synthetic cohort spec (JSON)")->required();
    synth->add_option("out_dir", out_dir, "output directory")->required();

    auto* prototype = app.add_subcommand("prototype", "extract local and global prototypes");
    prototype->add_option("slides", manifests, "slide manifest paths (.jsonl)")->required();
    prototype->add_option("--config", config_path, "pipeline config (JSON)")->required();
    prototype->add_option("--out", out_dir, "output directory")->required();

    auto* refine = app.add_subcommand("refine", "emit prototype-guided pseudo-labels");
    refine->add_option("slide", manifest, "slide manifest path (.jsonl)")->required();
    refine->add_option("prototypes", proto_path, "prototype set (.pemb)")->required();
    refine->add_option("--config", config_path, "pipeline config (JSON)")->required();
    refine->add_option("--out", out_csv, "output label table (.csv)")->required();

    auto* train = app.add_subcommand("train", "train the patch classifier on pseudo-labels");
    train->add_option("slide", manifest, "slide manifest path (.jsonl)")->required();
    train->add_option("labels", labels_csv, "pseudo-label table (.csv)")->required();
    train->add_option("--config", config_path, "pipeline config (JSON)")->required();
    train->add_option("--out-dir", out_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate label tables against ground truth");
    eval->add_option("--pred", pred_paths, "predicted label table (repeatable)")->required();
    eval->add_option("--truth", truth_paths, "ground-truth label table (repeatable)")->required();
    eval->add_option("--aggregation", aggregation, "macro|micro (default: print both)");

    auto* render = app.add_subcommand("render", "render a label table to a PGM mask");
    render->add_option("labels", labels_csv, "label table (.csv)")->required();
    render->add_option("manifest", manifest, "slide manifest (.jsonl)")->required();
    render->add_option("out", out_pgm, "output mask (.pgm)")->required();

    auto* pipeline = app.add_subcommand("pipeline", "run the full refinement pipeline");
    pipeline->add_option("config", config_path, "pipeline config (JSON)")->required();
    pipeline->add_option("--seeds", seeds_override, "rerun with this many consecutive seeds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(spec_path, out_dir);
        if (prototype->parsed()) return cmd_prototype(manifests, config_path, out_dir);
        if (refine->parsed()) return cmd_refine(manifest, proto_path, config_path, out_csv);
        if (train->parsed()) return cmd_train(manifest, labels_csv, config_path, out_dir);
        if (eval->parsed()) {
            if (!aggregation.empty() && aggregation != "macro" && aggregation != "micro")
                throw ConfigError("--aggregation must be macro or micro");
            return cmd_eval(pred_paths, truth_paths, aggregation);
        }
        if (render->parsed()) return cmd_render(labels_csv, manifest, out_pgm);
        if (pipeline->parsed()) return cmd_pipeline(config_path, seeds_override);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 3;
}
