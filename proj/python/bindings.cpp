#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "protorefine/classifier.hpp"
#include "protorefine/errors.hpp"
#include "protorefine/io.hpp"
#include "protorefine/kmeans.hpp"
#include "protorefine/metrics.hpp"
#include "protorefine/pipeline.hpp"
#include "protorefine/pseudo_label.hpp"
#include "protorefine/synth.hpp"

namespace py = pybind11;
using namespace protorefine;

namespace {

MatrixF matrix_from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw DataError("expected a 2-d float array");
    MatrixF m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
    std::copy(arr.data(), arr.data() + m.rows * m.cols, m.data.begin());
    return m;
}

py::array_t<float> matrix_to_numpy(const MatrixF& m) {
    py::array_t<float> arr({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), arr.mutable_data());
    return arr;
}

py::array_t<double> doubles_to_numpy(const std::vector<double>& v, std::size_t rows,
                                     std::size_t cols) {
    py::array_t<double> arr({rows, cols});
    std::copy(v.begin(), v.end(), arr.mutable_data());
    return arr;
}

std::vector<float> vec_from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 1) throw DataError("expected a 1-d float array");
    return std::vector<float>(arr.data(), arr.data() + arr.shape(0));
}

py::dict report_to_dict(const MetricReport& r) {
    py::dict d;
    d["aggregation"] = r.aggregation;
    auto set = [&](const char* name, double v) {
        if (std::isnan(v))
            d[name] = py::none();
        else
            d[name] = v;
    };
    set("dice", r.dice);
    set("iou", r.iou);
    set("f1", r.f1);
    set("ppv", r.ppv);
    set("npv", r.npv);
    set("tpr", r.tpr);
    set("tnr", r.tnr);
    set("accuracy", r.accuracy);
    d["undefined_flags"] = r.undefined_flags;
    py::dict per;
    for (const auto& [id, sub] : r.per_slide) per[py::str(id)] = report_to_dict(sub);
    d["per_slide"] = per;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "prototype-guided coarse annotation refinement core";

    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::class_<PatchRecord>(m, "PatchRecord")
        .def(py::init<>())
        .def_readwrite("patch_id", &PatchRecord::patch_id)
        .def_readwrite("grid_x", &PatchRecord::grid_x)
        .def_readwrite("grid_y", &PatchRecord::grid_y)
        .def_readwrite("coarse_label", &PatchRecord::coarse_label);

    py::class_<SlideDataset>(m, "SlideDataset")
        .def_readonly("slide_id", &SlideDataset::slide_id)
        .def_readonly("patches", &SlideDataset::patches)
        .def_property_readonly("embeddings",
                               [](const SlideDataset& s) { return matrix_to_numpy(s.embeddings); })
        .def_readonly("patch_size_px", &SlideDataset::patch_size_px)
        .def_readonly("magnification", &SlideDataset::magnification)
        .def("__len__", &SlideDataset::size)
        .def_property_readonly("dim", &SlideDataset::dim)
        .def_property_readonly("coarse_labels", [](const SlideDataset& s) {
            std::vector<int> out;
            out.reserve(s.size());
            for (const auto& p : s.patches) out.push_back(p.coarse_label);
            return out;
        });

    m.def(
        "slide_from_arrays",
        [](const std::string& slide_id, const std::vector<std::string>& patch_ids,
           const std::vector<std::int64_t>& grid_x, const std::vector<std::int64_t>& grid_y,
           const std::vector<int>& coarse_labels,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& embeddings) {
            SlideDataset s;
            s.slide_id = slide_id;
            const std::size_t n = patch_ids.size();
            if (grid_x.size() != n || grid_y.size() != n || coarse_labels.size() != n)
                throw DataError("patch field arrays must have equal length");
            for (std::size_t j = 0; j < n; ++j)
                s.patches.push_back({patch_ids[j], grid_x[j], grid_y[j], coarse_labels[j]});
            s.embeddings = matrix_from_numpy(embeddings);
            validate(s);
            return s;
        },
        py::arg("slide_id"), py::arg("patch_ids"), py::arg("grid_x"), py::arg("grid_y"),
        py::arg("coarse_labels"), py::arg("embeddings"),
        "Build a validated slide from parallel arrays plus an N x d embedding matrix.");

    py::enum_<PrototypeLevel>(m, "PrototypeLevel")
        .value("local", PrototypeLevel::local)
        .value("global_", PrototypeLevel::global);

    py::class_<PrototypeSet>(m, "PrototypeSet")
        .def_readonly("level", &PrototypeSet::level)
        .def_readonly("source_slide", &PrototypeSet::source_slide)
        .def_readonly("member_counts", &PrototypeSet::member_counts)
        .def_property_readonly("vectors",
                               [](const PrototypeSet& s) { return matrix_to_numpy(s.vectors); })
        .def("__len__", &PrototypeSet::count);

    py::class_<LabelEntry>(m, "LabelEntry")
        .def_readonly("patch_id", &LabelEntry::patch_id)
        .def_readonly("label", &LabelEntry::label)
        .def_readonly("score", &LabelEntry::score);

    py::class_<LabelTable>(m, "LabelTable")
        .def_readonly("slide_id", &LabelTable::slide_id)
        .def_readonly("entries", &LabelTable::entries)
        .def("__len__", [](const LabelTable& t) { return t.entries.size(); })
        .def_property_readonly("labels", [](const LabelTable& t) {
            std::vector<int> out;
            out.reserve(t.entries.size());
            for (const auto& e : t.entries) out.push_back(e.label);
            return out;
        })
        .def_property_readonly("scores", [](const LabelTable& t) {
            std::vector<float> out;
            out.reserve(t.entries.size());
            for (const auto& e : t.entries) out.push_back(e.score);
            return out;
        });

    py::class_<MajorRule>(m, "MajorRule")
        .def_static("fixed", &MajorRule::fixed, py::arg("m"))
        .def_static("coverage", &MajorRule::coverage, py::arg("rho"));

    py::class_<RefineConfig>(m, "RefineConfig")
        .def(py::init<>())
        .def_readwrite("c_local", &RefineConfig::c_local)
        .def_readwrite("k_global", &RefineConfig::k_global)
        .def_readwrite("major_rule", &RefineConfig::major_rule)
        .def_readwrite("theta", &RefineConfig::theta)
        .def_readwrite("focal_gamma", &RefineConfig::focal_gamma)
        .def_readwrite("focal_alpha", &RefineConfig::focal_alpha)
        .def_readwrite("batch_half_size", &RefineConfig::batch_half_size)
        .def_readwrite("dynamic_iters", &RefineConfig::dynamic_iters)
        .def_readwrite("refinetune_epochs", &RefineConfig::refinetune_epochs)
        .def_readwrite("learning_rate", &RefineConfig::learning_rate)
        .def_readwrite("seed", &RefineConfig::seed)
        .def_readwrite("kmeans_max_iters", &RefineConfig::kmeans_max_iters)
        .def_readwrite("kmeans_tol", &RefineConfig::kmeans_tol)
        .def_readwrite("preserve_coarse_positives", &RefineConfig::preserve_coarse_positives)
        .def_readwrite("hidden_units", &RefineConfig::hidden_units)
        .def_readwrite("pooled_training", &RefineConfig::pooled_training);

    m.def(
        "kmeans_fit",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& rows, int k,
           std::uint64_t seed, int max_iters, double tol) {
            const MatrixF m2 = matrix_from_numpy(rows);
            KMeansResult res = kmeans_fit(m2, k, seed, max_iters, tol);
            py::dict d;
            d["centroids"] = doubles_to_numpy(res.centroids, static_cast<std::size_t>(k), m2.cols);
            d["assignments"] = res.assignments;
            d["inertia"] = res.inertia;
            d["iterations_run"] = res.iterations_run;
            d["inertia_history"] = res.inertia_history;
            return d;
        },
        py::arg("rows"), py::arg("k"), py::arg("seed") = 1, py::arg("max_iters") = 100,
        py::arg("tol") = 1e-6);

    m.def("cosine_similarity",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
             const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
              const auto va = vec_from_numpy(a);
              const auto vb = vec_from_numpy(b);
              return cosine_similarity(va, vb);
          });

    py::class_<Assignment>(m, "Assignment")
        .def_readonly("prototype_index", &Assignment::prototype_index)
        .def_readonly("similarity", &Assignment::similarity);

    m.def("similarity_vector",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast>& z,
             const PrototypeSet& set) {
              const auto vz = vec_from_numpy(z);
              return similarity_vector(vz, set).values;
          });
    m.def("assign_to_prototype",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast>& z,
             const PrototypeSet& set) {
              const auto vz = vec_from_numpy(z);
              return assign_to_prototype(vz, set);
          });
    m.def("assign_all", &assign_all, py::arg("slide"), py::arg("prototypes"));

    m.def("extract_local_prototypes", &extract_local_prototypes, py::arg("slide"), py::arg("c"),
          py::arg("seed"), py::arg("config"));
    m.def("aggregate_global_prototypes", &aggregate_global_prototypes, py::arg("locals"),
          py::arg("k"), py::arg("seed"), py::arg("config"));

    py::class_<FrequencyStats>(m, "FrequencyStats")
        .def_readonly("counts", &FrequencyStats::counts)
        .def_readonly("total_in_annotation", &FrequencyStats::total_in_annotation);
    py::class_<MajorSelection>(m, "MajorSelection")
        .def_readonly("major_indices", &MajorSelection::major_indices);

    m.def("prototype_frequencies", &prototype_frequencies, py::arg("slide"), py::arg("assignments"),
          py::arg("k"));
    m.def("select_major_prototypes", &select_major_prototypes, py::arg("stats"), py::arg("rule"));
    m.def("assign_pseudo_labels", &assign_pseudo_labels, py::arg("slide"), py::arg("prototypes"),
          py::arg("majors"), py::arg("theta"), py::arg("preserve_coarse_positives") = false);

    py::class_<ClassifierHead>(m, "ClassifierHead")
        .def_readonly("d", &ClassifierHead::d)
        .def_readonly("weights", &ClassifierHead::weights)
        .def_readonly("bias", &ClassifierHead::bias)
        .def_readonly("hidden_units", &ClassifierHead::hidden_units);

    py::class_<TrainRecord>(m, "TrainRecord")
        .def_readonly("iteration", &TrainRecord::iteration)
        .def_readonly("loss", &TrainRecord::loss)
        .def_readonly("batch_pos_ids", &TrainRecord::batch_pos_ids)
        .def_readonly("batch_neg_ids", &TrainRecord::batch_neg_ids);

    m.def("focal_loss", &focal_loss, py::arg("p"), py::arg("y"), py::arg("gamma"),
          py::arg("alpha"));
    m.def("predict_proba",
          [](const ClassifierHead& head,
             const py::array_t<float, py::array::c_style | py::array::forcecast>& z) {
              const auto vz = vec_from_numpy(z);
              return predict_proba(head, vz);
          });
    m.def(
        "train_dynamic",
        [](const SlideDataset& slide, const LabelTable& labels, const RefineConfig& cfg) {
            return train_dynamic(slide, labels, cfg);
        },
        py::arg("slide"), py::arg("labels"), py::arg("config"));
    m.def("refinetune", &refinetune, py::arg("slide"), py::arg("head"), py::arg("config"));
    m.def("predict_labels", &predict_labels, py::arg("head"), py::arg("slide"),
          py::arg("threshold") = 0.5);

    py::class_<ConfusionMatrix>(m, "ConfusionMatrix")
        .def(py::init([](std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn) {
                 return ConfusionMatrix{tp, fp, fn, tn};
             }),
             py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn"))
        .def_readonly("tp", &ConfusionMatrix::tp)
        .def_readonly("fp", &ConfusionMatrix::fp)
        .def_readonly("fn", &ConfusionMatrix::fn)
        .def_readonly("tn", &ConfusionMatrix::tn);

    py::enum_<Aggregation>(m, "Aggregation")
        .value("macro", Aggregation::macro)
        .value("micro", Aggregation::micro);

    m.def("confusion_matrix", &confusion_matrix, py::arg("predicted"), py::arg("truth"));
    m.def("compute_metrics",
          [](const ConfusionMatrix& cm) { return report_to_dict(compute_metrics(cm)); });
    m.def("evaluate_tables",
          [](const std::vector<LabelTable>& predicted, const std::vector<LabelTable>& truth,
             Aggregation mode) { return report_to_dict(evaluate_tables(predicted, truth, mode)); },
          py::arg("predicted"), py::arg("truth"), py::arg("mode") = Aggregation::macro);

    py::class_<SynthSpec>(m, "SynthSpec")
        .def(py::init<>())
        .def_readwrite("grid_w", &SynthSpec::grid_w)
        .def_readwrite("grid_h", &SynthSpec::grid_h)
        .def_readwrite("d", &SynthSpec::d)
        .def_readwrite("n_tissue_patterns", &SynthSpec::n_tissue_patterns)
        .def_readwrite("n_cancer_patterns", &SynthSpec::n_cancer_patterns)
        .def_readwrite("blob_sigma", &SynthSpec::blob_sigma)
        .def_readwrite("region_count", &SynthSpec::region_count)
        .def_readwrite("boundary_flip_rate", &SynthSpec::boundary_flip_rate)
        .def_readwrite("dilation_radius", &SynthSpec::dilation_radius)
        .def_readwrite("seed", &SynthSpec::seed);

    py::class_<SynthSlide>(m, "SynthSlide")
        .def_readonly("slide", &SynthSlide::slide)
        .def_readonly("truth", &SynthSlide::truth);

    m.def("generate_slide", &generate_slide, py::arg("spec"), py::arg("slide_index"));
    m.def("generate_cohort", &generate_cohort, py::arg("spec"), py::arg("n_slides"));
    m.def("pattern_means", &pattern_means, py::arg("spec"));

    py::class_<AblationToggles>(m, "AblationToggles")
        .def(py::init<>())
        .def_readwrite("use_local_only", &AblationToggles::use_local_only)
        .def_readwrite("use_global", &AblationToggles::use_global)
        .def_readwrite("use_dynamic_sampling", &AblationToggles::use_dynamic_sampling)
        .def_readwrite("use_refinetune", &AblationToggles::use_refinetune);

    py::class_<SlideOutcome>(m, "SlideOutcome")
        .def_readonly("slide_id", &SlideOutcome::slide_id)
        .def_readonly("pseudo", &SlideOutcome::pseudo)
        .def_readonly("refined", &SlideOutcome::refined)
        .def_readonly("head", &SlideOutcome::head)
        .def_readonly("records", &SlideOutcome::records);

    py::class_<PipelineResult>(m, "PipelineResult")
        .def_readonly("locals", &PipelineResult::locals)
        .def_readonly("globals", &PipelineResult::globals)
        .def_readonly("slides", &PipelineResult::slides);

    m.def(
        "run_pipeline",
        [](const std::vector<SlideDataset>& slides, const RefineConfig& cfg,
           const AblationToggles& toggles) { return run_pipeline(slides, cfg, toggles); },
        py::arg("slides"), py::arg("config"), py::arg("toggles") = AblationToggles{});

    m.def("load_slide", &load_slide, py::arg("manifest_path"), py::arg("embedding_path"));
    m.def("save_slide", &save_slide, py::arg("slide"), py::arg("manifest_path"),
          py::arg("embedding_path"));
    m.def("load_prototypes", &load_prototypes, py::arg("path"));
    m.def("save_prototypes", &save_prototypes, py::arg("prototypes"), py::arg("path"));
    m.def("load_label_table", &load_label_table, py::arg("path"), py::arg("slide_id"));
    m.def("save_label_table", &save_label_table, py::arg("table"), py::arg("path"));
    m.def("load_head", &load_head, py::arg("path"));
    m.def("save_head", &save_head, py::arg("head"), py::arg("path"), py::arg("config_hash") = "");
}
