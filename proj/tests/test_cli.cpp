// End-to-end tests of the command-line front end.  The binary path comes from
// the PROTOREFINE_CLI environment variable (set by ctest).
#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "protorefine/io.hpp"
#include "protorefine/metrics.hpp"
#include "protorefine/pipeline.hpp"
#include "protorefine/pseudo_label.hpp"
#include "protorefine/synth.hpp"

using namespace protorefine;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli() {
    const char* p = std::getenv("PROTOREFINE_CLI");
    REQUIRE_MESSAGE(p != nullptr, "PROTOREFINE_CLI must point at the CLI binary");
    return p;
}

struct RunResult {
    int exit_code;
    std::string out;
    std::string err;
};

RunResult run(const std::string& args) {
    static int counter = 0;
    const fs::path out = fs::temp_directory_path() / ("prf_cli_out_" + std::to_string(::getpid()) +
                                                      "_" + std::to_string(counter));
    const fs::path err = fs::temp_directory_path() / ("prf_cli_err_" + std::to_string(::getpid()) +
                                                      "_" + std::to_string(counter));
    ++counter;
    const std::string cmd =
        cli() + " " + args + " >" + out.string() + " 2>" + err.string();
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    r.out = slurp(out);
    r.err = slurp(err);
    fs::remove(out);
    fs::remove(err);
    return r;
}

fs::path fresh_dir(const std::string& tag) {
    static int counter = 0;
    const fs::path p = fs::temp_directory_path() /
                       ("prf_cli_" + tag + "_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter++));
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << body;
}

// small, fast cohort spec shared by the tests
const char* kSpecSmall = R"({
  "grid_w": 28, "grid_h": 14, "d": 16,
  "n_tissue_patterns": 4, "n_cancer_patterns": 2,
  "blob_sigma": 1.0, "region_count": 1,
  "boundary_flip_rate": 0.2, "dilation_radius": 1,
  "seed": 5, "n_slides": 2
})";

const char* kConfigFast = R"({
  "c_local": 6, "k_global": 8, "theta": 0.85,
  "dynamic_iters": 80, "refinetune_epochs": 2, "seed": 5
})";

} // namespace

TEST_CASE("synth subcommand") {
    const fs::path dir = fresh_dir("synth");
    write_file(dir / "spec.json", kSpecSmall);

    const RunResult r = run("synth " + (dir / "spec.json").string() + " " + (dir / "out").string());
    CHECK(r.exit_code == 0);
    CHECK(r.out.empty()); // diagnostics on stderr only
    CHECK(fs::exists(dir / "out/slide_000.jsonl"));
    CHECK(fs::exists(dir / "out/slide_000.pemb"));
    CHECK(fs::exists(dir / "out/slide_000.truth.csv"));
    CHECK(fs::exists(dir / "out/cohort.json"));

    SUBCASE("rerun writes identical bytes") {
        const std::string manifest = slurp(dir / "out/slide_001.jsonl");
        const std::string pemb = slurp(dir / "out/slide_001.pemb");
        const RunResult r2 =
            run("synth " + (dir / "spec.json").string() + " " + (dir / "out2").string());
        CHECK(r2.exit_code == 0);
        CHECK(slurp(dir / "out2/slide_001.jsonl") == manifest);
        CHECK(slurp(dir / "out2/slide_001.pemb") == pemb);
    }
    SUBCASE("invalid spec exits 2 with a message") {
        write_file(dir / "bad.json", R"({"n_tissue_patterns": 2, "n_cancer_patterns": 3})");
        const RunResult r2 =
            run("synth " + (dir / "bad.json").string() + " " + (dir / "out3").string());
        CHECK(r2.exit_code == 2);
        CHECK(r2.err.find("n_cancer_patterns") != std::string::npos);
    }
}

TEST_CASE("prototype, refine, train, eval, render chain") {
    const fs::path dir = fresh_dir("chain");
    write_file(dir / "spec.json", kSpecSmall);
    write_file(dir / "config.json", kConfigFast);
    REQUIRE(run("synth " + (dir / "spec.json").string() + " " + (dir / "data").string()).exit_code ==
            0);
    const std::string s0 = (dir / "data/slide_000.jsonl").string();
    const std::string s1 = (dir / "data/slide_001.jsonl").string();
    const std::string cfg = (dir / "config.json").string();

    // prototype
    const RunResult rp =
        run("prototype " + s0 + " " + s1 + " --config " + cfg + " --out " + (dir / "protos").string());
    REQUIRE(rp.exit_code == 0);
    const PrototypeSet global = load_prototypes((dir / "protos/global.pemb").string());
    CHECK(global.count() == 8);
    CHECK(load_prototypes((dir / "protos/local_slide_000.pemb").string()).count() == 6);

    // refine matches the library path
    const RunResult rr = run("refine " + s0 + " " + (dir / "protos/global.pemb").string() +
                             " --config " + cfg + " --out " + (dir / "pseudo.csv").string());
    REQUIRE(rr.exit_code == 0);
    {
        const SlideDataset slide = load_slide(s0, (dir / "data/slide_000.pemb").string());
        RefineConfig rc;
        rc.c_local = 6;
        rc.k_global = 8;
        rc.seed = 5;
        const auto assignments = assign_all(slide, global);
        const auto stats = prototype_frequencies(slide, assignments, 8);
        const auto majors = select_major_prototypes(stats, rc.major_rule);
        const LabelTable expect = assign_pseudo_labels(slide, global, majors, 0.85);
        save_label_table(expect, (dir / "expect.csv").string());
        CHECK(slurp(dir / "pseudo.csv") == slurp(dir / "expect.csv"));
    }

    // train
    const RunResult rt = run("train " + s0 + " " + (dir / "pseudo.csv").string() + " --config " +
                             cfg + " --out-dir " + (dir / "train").string());
    REQUIRE(rt.exit_code == 0);
    CHECK(fs::exists(dir / "train/head.json"));
    CHECK(fs::exists(dir / "train/train_records.csv"));
    CHECK(fs::exists(dir / "train/refined.csv"));
    {
        const std::string records = slurp(dir / "train/train_records.csv");
        CHECK(records.rfind("iteration,loss\n", 0) == 0);
    }

    // eval: refined vs truth prints a report to stdout
    const RunResult re = run("eval --pred " + (dir / "train/refined.csv").string() + " --truth " +
                             (dir / "data/slide_000.truth.csv").string() + " --aggregation macro");
    REQUIRE(re.exit_code == 0);
    const json report = json::parse(re.out);
    CHECK(report.at("aggregation") == "macro");
    CHECK(report.at("dice").is_number());

    SUBCASE("macro and micro agree on a single slide") {
        const RunResult rm = run("eval --pred " + (dir / "train/refined.csv").string() +
                                 " --truth " + (dir / "data/slide_000.truth.csv").string());
        REQUIRE(rm.exit_code == 0);
        const auto nl = rm.out.find('\n');
        const json macro = json::parse(rm.out.substr(0, nl));
        const json micro = json::parse(rm.out.substr(nl + 1));
        CHECK(macro.at("aggregation") == "macro");
        CHECK(micro.at("aggregation") == "micro");
        CHECK(macro.at("dice").get<double>() ==
              doctest::Approx(micro.at("dice").get<double>()).epsilon(1e-12));
    }
    SUBCASE("perfect labels give an all-ones report") {
        const RunResult rm = run("eval --pred " + (dir / "data/slide_000.truth.csv").string() +
                                 " --truth " + (dir / "data/slide_000.truth.csv").string() +
                                 " --aggregation micro");
        REQUIRE(rm.exit_code == 0);
        const json rep = json::parse(rm.out);
        CHECK(rep.at("dice").get<double>() == doctest::Approx(1.0));
        CHECK(rep.at("accuracy").get<double>() == doctest::Approx(1.0));
    }
    SUBCASE("mismatched ids exit 1") {
        write_file(dir / "other.csv", "patch_id,label,score\nzz,1,1\n");
        const RunResult rm = run("eval --pred " + (dir / "other.csv").string() + " --truth " +
                                 (dir / "data/slide_000.truth.csv").string());
        CHECK(rm.exit_code == 1);
    }

    // render
    const RunResult rv = run("render " + (dir / "train/refined.csv").string() + " " + s0 + " " +
                             (dir / "mask.pgm").string());
    REQUIRE(rv.exit_code == 0);
    const std::string pgm = slurp(dir / "mask.pgm");
    CHECK(pgm.rfind("P5\n28 14\n255\n", 0) == 0);
    CHECK(pgm.size() == std::string("P5\n28 14\n255\n").size() + 28 * 14);
    SUBCASE("render reruns byte-identically") {
        const RunResult rv2 = run("render " + (dir / "train/refined.csv").string() + " " + s0 +
                                  " " + (dir / "mask2.pgm").string());
        REQUIRE(rv2.exit_code == 0);
        CHECK(slurp(dir / "mask2.pgm") == pgm);
    }
}

TEST_CASE("refine error paths") {
    const fs::path dir = fresh_dir("refine_err");
    write_file(dir / "spec.json", kSpecSmall);
    write_file(dir / "config.json", kConfigFast);
    REQUIRE(run("synth " + (dir / "spec.json").string() + " " + (dir / "data").string()).exit_code ==
            0);
    const std::string s0 = (dir / "data/slide_000.jsonl").string();
    REQUIRE(run("prototype " + s0 + " " + (dir / "data/slide_001.jsonl").string() + " --config " +
                (dir / "config.json").string() + " --out " + (dir / "protos").string())
                .exit_code == 0);

    SUBCASE("missing input file exits 1") {
        const RunResult r = run("refine " + (dir / "data/none.jsonl").string() + " " +
                                (dir / "protos/global.pemb").string() + " --config " +
                                (dir / "config.json").string() + " --out " + (dir / "x.csv").string());
        CHECK(r.exit_code == 1);
        const RunResult rp = run("prototype " + (dir / "data/none.jsonl").string() + " --config " +
                                 (dir / "config.json").string() + " --out " + (dir / "p2").string());
        CHECK(rp.exit_code == 1);
    }
    SUBCASE("theta out of range exits 2") {
        write_file(dir / "bad.json", R"({"theta": 1.5})");
        const RunResult r = run("refine " + s0 + " " + (dir / "protos/global.pemb").string() +
                                " --config " + (dir / "bad.json").string() + " --out " +
                                (dir / "x.csv").string());
        CHECK(r.exit_code == 2);
        CHECK(r.err.find("theta") != std::string::npos);
    }
    SUBCASE("empty coarse annotation exits 1 with the spec message") {
        // rewrite the manifest with all coarse labels zero
        SlideDataset slide = load_slide(s0, (dir / "data/slide_000.pemb").string());
        for (auto& p : slide.patches) p.coarse_label = 0;
        save_slide(slide, (dir / "zero.jsonl").string(), (dir / "zero.pemb").string());
        const RunResult r = run("refine " + (dir / "zero.jsonl").string() + " " +
                                (dir / "protos/global.pemb").string() + " --config " +
                                (dir / "config.json").string() + " --out " + (dir / "x.csv").string());
        CHECK(r.exit_code == 1);
        CHECK(r.err.find("empty coarse annotation") != std::string::npos);
    }
}

TEST_CASE("train edge cases") {
    const fs::path dir = fresh_dir("train_edge");
    write_file(dir / "spec.json", kSpecSmall);
    REQUIRE(run("synth " + (dir / "spec.json").string() + " " + (dir / "data").string()).exit_code ==
            0);
    const std::string s0 = (dir / "data/slide_000.jsonl").string();
    const SlideDataset slide = load_slide(s0, (dir / "data/slide_000.pemb").string());

    SUBCASE("dynamic_iters = 0 writes the zero head") {
        write_file(dir / "cfg0.json", R"({"dynamic_iters": 0, "use_refinetune": false})");
        const RunResult r = run("train " + s0 + " " + (dir / "data/slide_000.truth.csv").string() +
                                " --config " + (dir / "cfg0.json").string() + " --out-dir " +
                                (dir / "t0").string());
        REQUIRE(r.exit_code == 0);
        const ClassifierHead head = load_head((dir / "t0/head.json").string());
        CHECK(head == make_zero_head(static_cast<int>(slide.dim())));
    }
    SUBCASE("one-class labels exit 1") {
        LabelTable all_pos;
        all_pos.slide_id = slide.slide_id;
        for (const auto& p : slide.patches) all_pos.entries.push_back({p.patch_id, 1, 1.0f});
        save_label_table(all_pos, (dir / "allpos.csv").string());
        write_file(dir / "cfg.json", kConfigFast);
        const RunResult r = run("train " + s0 + " " + (dir / "allpos.csv").string() + " --config " +
                                (dir / "cfg.json").string() + " --out-dir " + (dir / "t1").string());
        CHECK(r.exit_code == 1);
        CHECK(r.err.find("cannot balance") != std::string::npos);
    }
    SUBCASE("deterministic under a fixed seed") {
        write_file(dir / "cfg.json", kConfigFast);
        REQUIRE(run("train " + s0 + " " + (dir / "data/slide_000.truth.csv").string() +
                    " --config " + (dir / "cfg.json").string() + " --out-dir " +
                    (dir / "ta").string())
                    .exit_code == 0);
        REQUIRE(run("train " + s0 + " " + (dir / "data/slide_000.truth.csv").string() +
                    " --config " + (dir / "cfg.json").string() + " --out-dir " +
                    (dir / "tb").string())
                    .exit_code == 0);
        CHECK(slurp(dir / "ta/head.json") == slurp(dir / "tb/head.json"));
        CHECK(slurp(dir / "ta/train_records.csv") == slurp(dir / "tb/train_records.csv"));
        CHECK(slurp(dir / "ta/refined.csv") == slurp(dir / "tb/refined.csv"));
    }
}

TEST_CASE("pipeline runs end to end and composes from the individual subcommands") {
    const fs::path dir = fresh_dir("pipe");
    const std::string pipeline_cfg = std::string(R"({
      "c_local": 6, "k_global": 8, "theta": 0.85,
      "dynamic_iters": 80, "refinetune_epochs": 2, "seed": 5,
      "synth": {"grid_w": 28, "grid_h": 14, "d": 16,
                "n_tissue_patterns": 4, "n_cancer_patterns": 2,
                "boundary_flip_rate": 0.2, "dilation_radius": 1,
                "region_count": 1, "n_slides": 2},
      "out_dir": ")") + (dir / "run").string() + "\"\n}";
    write_file(dir / "pipe.json", pipeline_cfg);
    write_file(dir / "config.json", kConfigFast);
    write_file(dir / "spec.json", kSpecSmall);

    const RunResult r = run("pipeline " + (dir / "pipe.json").string());
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(dir / "run/report.json"));
    const json report = json::parse(slurp(dir / "run/report.json"));
    CHECK(report.at("refined").at("dice").get<double>() >
          report.at("coarse").at("dice").get<double>());

    SUBCASE("identical reruns are byte-identical") {
        const std::string report_bytes = slurp(dir / "run/report.json");
        const std::string refined = slurp(dir / "run/slide_000/refined.csv");
        const std::string head = slurp(dir / "run/slide_000/head.json");
        const std::string mask = slurp(dir / "run/slide_000/refined.pgm");
        // rerun into the same directory: outputs must not change
        const RunResult r2 = run("pipeline " + (dir / "pipe.json").string());
        REQUIRE(r2.exit_code == 0);
        CHECK(slurp(dir / "run/report.json") == report_bytes);
        CHECK(slurp(dir / "run/slide_000/refined.csv") == refined);
        CHECK(slurp(dir / "run/slide_000/head.json") == head);
        CHECK(slurp(dir / "run/slide_000/refined.pgm") == mask);
    }

    SUBCASE("composition of subcommands reproduces the pipeline artifacts byte for byte") {
        // synth -> prototype -> refine -> train -> render, same config values
        REQUIRE(run("synth " + (dir / "spec.json").string() + " " + (dir / "comp").string())
                    .exit_code == 0);
        CHECK(slurp(dir / "comp/slide_000.jsonl") == slurp(dir / "run/slide_000.jsonl"));
        CHECK(slurp(dir / "comp/slide_000.pemb") == slurp(dir / "run/slide_000.pemb"));

        const std::string cfg = (dir / "config.json").string();
        const std::string s0 = (dir / "comp/slide_000.jsonl").string();
        const std::string s1 = (dir / "comp/slide_001.jsonl").string();
        REQUIRE(run("prototype " + s0 + " " + s1 + " --config " + cfg + " --out " +
                    (dir / "comp/protos").string())
                    .exit_code == 0);
        CHECK(slurp(dir / "comp/protos/global.pemb") ==
              slurp(dir / "run/prototypes/global.pemb"));
        CHECK(slurp(dir / "comp/protos/local_slide_000.pemb") ==
              slurp(dir / "run/prototypes/local_slide_000.pemb"));

        for (const std::string sid : {"slide_000", "slide_001"}) {
            const std::string manifest = (dir / "comp" / (sid + ".jsonl")).string();
            REQUIRE(run("refine " + manifest + " " + (dir / "comp/protos/global.pemb").string() +
                        " --config " + cfg + " --out " + (dir / ("comp/" + sid + "_pseudo.csv")).string())
                        .exit_code == 0);
            CHECK(slurp(dir / ("comp/" + sid + "_pseudo.csv")) ==
                  slurp(dir / ("run/" + sid + "/pseudo.csv")));
            REQUIRE(run("train " + manifest + " " + (dir / ("comp/" + sid + "_pseudo.csv")).string() +
                        " --config " + cfg + " --out-dir " + (dir / ("comp/" + sid)).string())
                        .exit_code == 0);
            CHECK(slurp(dir / ("comp/" + sid + "/head.json")) ==
                  slurp(dir / ("run/" + sid + "/head.json")));
            CHECK(slurp(dir / ("comp/" + sid + "/train_records.csv")) ==
                  slurp(dir / ("run/" + sid + "/train_records.csv")));
            CHECK(slurp(dir / ("comp/" + sid + "/refined.csv")) ==
                  slurp(dir / ("run/" + sid + "/refined.csv")));
            REQUIRE(run("render " + (dir / ("comp/" + sid + "/refined.csv")).string() + " " +
                        manifest + " " + (dir / ("comp/" + sid + "/refined.pgm")).string())
                        .exit_code == 0);
            CHECK(slurp(dir / ("comp/" + sid + "/refined.pgm")) ==
                  slurp(dir / ("run/" + sid + "/refined.pgm")));
        }
    }

    SUBCASE("ablation toggle: local-only variant runs") {
        std::string lp_cfg = pipeline_cfg;
        lp_cfg.insert(lp_cfg.find("\"c_local\""),
                      "\"use_local_only\": true, \"use_global\": false, "
                      "\"use_dynamic_sampling\": false, \"use_refinetune\": false, ");
        lp_cfg.replace(lp_cfg.find((dir / "run").string()), (dir / "run").string().size(),
                       (dir / "lp_run").string());
        write_file(dir / "lp.json", lp_cfg);
        const RunResult r2 = run("pipeline " + (dir / "lp.json").string());
        REQUIRE(r2.exit_code == 0);
        CHECK(fs::exists(dir / "lp_run/slide_000/pseudo.csv"));
        CHECK(!fs::exists(dir / "lp_run/prototypes/global.pemb"));
        CHECK(!fs::exists(dir / "lp_run/slide_000/head.json"));
    }

    SUBCASE("inconsistent toggles exit 2") {
        std::string bad = pipeline_cfg;
        bad.insert(bad.find("\"c_local\""), "\"use_local_only\": true, \"use_global\": true, ");
        write_file(dir / "bad.json", bad);
        CHECK(run("pipeline " + (dir / "bad.json").string()).exit_code == 2);
    }

    SUBCASE("PROTO_REFINE_SEED overrides the config seed") {
        std::string env_cfg = pipeline_cfg;
        env_cfg.replace(env_cfg.find((dir / "run").string()), (dir / "run").string().size(),
                        (dir / "env_run").string());
        write_file(dir / "env.json", env_cfg);
        const std::string cmd = "PROTO_REFINE_SEED=99 " + cli() + " pipeline " +
                                (dir / "env.json").string() + " >/dev/null 2>&1";
        REQUIRE(std::system(cmd.c_str()) == 0);
        const json rep = json::parse(slurp(dir / "env_run/report.json"));
        CHECK(rep.at("seed").get<std::uint64_t>() == 99);
        CHECK(slurp(dir / "env_run/slide_000.pemb") != slurp(dir / "run/slide_000.pemb"));
    }

    SUBCASE("--seeds emits per-seed runs and a mean/sd summary") {
        std::string multi_cfg = pipeline_cfg;
        multi_cfg.replace(multi_cfg.find((dir / "run").string()), (dir / "run").string().size(),
                          (dir / "multi").string());
        write_file(dir / "multi.json", multi_cfg);
        const RunResult r2 = run("pipeline " + (dir / "multi.json").string() + " --seeds 2");
        REQUIRE(r2.exit_code == 0);
        REQUIRE(fs::exists(dir / "multi/multi_report.json"));
        const json multi = json::parse(slurp(dir / "multi/multi_report.json"));
        CHECK(multi.at("seeds").get<int>() == 2);
        CHECK(multi.at("per_seed").size() == 2);
        CHECK(multi.at("refined_mean").at("dice").is_number());
        CHECK(multi.at("refined_sd").at("dice").is_number());
        CHECK(fs::exists(dir / "multi/seed_00/report.json"));
        CHECK(fs::exists(dir / "multi/seed_01/report.json"));
    }
}
