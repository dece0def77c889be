#include <doctest.h>

#include <cmath>
#include <cstring>

#include "protorefine/errors.hpp"
#include "protorefine/metrics.hpp"
#include "protorefine/synth.hpp"

using namespace protorefine;

namespace {

LabelTable coarse_table(const SlideDataset& s) {
    LabelTable t;
    t.slide_id = s.slide_id;
    for (const auto& p : s.patches)
        t.entries.push_back({p.patch_id, p.coarse_label, static_cast<float>(p.coarse_label)});
    return t;
}

} // namespace

TEST_CASE("zero noise reproduces the ground truth exactly") {
    SynthSpec spec;
    spec.grid_w = 20;
    spec.grid_h = 12;
    spec.dilation_radius = 0;
    spec.boundary_flip_rate = 0.0;
    spec.seed = 3;
    const SynthSlide s = generate_slide(spec, 0);
    for (std::size_t j = 0; j < s.slide.size(); ++j)
        CHECK(s.slide.patches[j].coarse_label == s.truth.entries[j].label);
}

TEST_CASE("identical (seed, slide_index) gives bit-identical output") {
    SynthSpec spec;
    spec.grid_w = 24;
    spec.grid_h = 16;
    spec.seed = 7;
    const SynthSlide a = generate_slide(spec, 2);
    const SynthSlide b = generate_slide(spec, 2);
    CHECK(a.slide == b.slide);
    CHECK(a.truth == b.truth);
    CHECK(std::memcmp(a.slide.embeddings.data.data(), b.slide.embeddings.data.data(),
                      a.slide.embeddings.data.size() * sizeof(float)) == 0);
    const SynthSlide c = generate_slide(spec, 3);
    CHECK(a.slide.embeddings.data != c.slide.embeddings.data);
}

TEST_CASE("coarse quality degrades monotonically with dilation radius") {
    double prev = 1.0;
    for (int radius : {0, 1, 2, 4}) {
        SynthSpec spec;
        spec.boundary_flip_rate = 0.3;
        spec.dilation_radius = radius;
        spec.seed = 11;
        const SynthSlide s = generate_slide(spec, 0);
        const MetricReport r =
            compute_metrics(confusion_matrix(coarse_table(s.slide), s.truth));
        CHECK(r.dice < 1.0);
        CHECK(r.dice < prev);
        prev = r.dice;
    }
}

TEST_CASE("coarse labels differ from truth only inside the dilation+boundary band") {
    SynthSpec spec;
    spec.grid_w = 32;
    spec.grid_h = 20;
    spec.dilation_radius = 2;
    spec.boundary_flip_rate = 0.4;
    spec.seed = 13;
    const SynthSlide s = generate_slide(spec, 0);

    const int W = spec.grid_w, H = spec.grid_h, band = spec.dilation_radius + 1;
    auto truth_at = [&](int x, int y) {
        return s.truth.entries[static_cast<std::size_t>(y) * W + x].label;
    };
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t j = static_cast<std::size_t>(y) * W + x;
            if (s.slide.patches[j].coarse_label == truth_at(x, y)) continue;
            // a differing cell must see both classes within Chebyshev distance band
            bool saw_pos = false, saw_neg = false;
            for (int dy = -band; dy <= band; ++dy)
                for (int dx = -band; dx <= band; ++dx) {
                    const int xx = x + dx, yy = y + dy;
                    if (xx < 0 || xx >= W || yy < 0 || yy >= H) continue;
                    (truth_at(xx, yy) ? saw_pos : saw_neg) = true;
                }
            CHECK(saw_pos);
            CHECK(saw_neg);
        }
    }
}

TEST_CASE("cohort slides share pattern means") {
    SynthSpec spec;
    spec.grid_w = 32;
    spec.grid_h = 24;
    spec.seed = 17;
    const auto cohort = generate_cohort(spec, 2);
    // empirical mean of ground-truth-positive embeddings per slide
    std::vector<std::vector<double>> means;
    for (const auto& s : cohort) {
        std::vector<double> m(s.slide.dim(), 0.0);
        std::size_t n = 0;
        for (std::size_t j = 0; j < s.slide.size(); ++j) {
            if (s.truth.entries[j].label != 1) continue;
            ++n;
            for (std::size_t c = 0; c < s.slide.dim(); ++c) m[c] += s.slide.embedding(j)[c];
        }
        REQUIRE(n > 0);
        for (double& v : m) v /= static_cast<double>(n);
        means.push_back(std::move(m));
    }
    double d2 = 0.0;
    for (std::size_t c = 0; c < means[0].size(); ++c) {
        const double diff = means[0][c] - means[1][c];
        d2 += diff * diff;
    }
    CHECK(std::sqrt(d2) < spec.blob_sigma);
}

TEST_CASE("planted patterns are separable by nearest mean at 0.999") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        SynthSpec spec;
        spec.seed = seed;
        const auto means = pattern_means(spec);
        // 6-sigma floor on pairwise distances
        for (std::size_t a = 0; a < means.size(); ++a)
            for (std::size_t b = a + 1; b < means.size(); ++b) {
                double d2 = 0.0;
                for (std::size_t c = 0; c < means[a].size(); ++c) {
                    const double diff = means[a][c] - means[b][c];
                    d2 += diff * diff;
                }
                CHECK(std::sqrt(d2) >= 6.0 * spec.blob_sigma - 1e-9);
            }
        const auto cohort = generate_cohort(spec, 4);
        std::int64_t correct = 0, total = 0;
        for (const auto& s : cohort) {
            for (std::size_t j = 0; j < s.slide.size(); ++j) {
                double best = 1e300;
                std::size_t best_p = 0;
                for (std::size_t p = 0; p < means.size(); ++p) {
                    double d2 = 0.0;
                    for (std::size_t c = 0; c < means[p].size(); ++c) {
                        const double diff = s.slide.embedding(j)[c] - means[p][c];
                        d2 += diff * diff;
                    }
                    if (d2 < best) {
                        best = d2;
                        best_p = p;
                    }
                }
                const int pred = best_p < static_cast<std::size_t>(spec.n_cancer_patterns) ? 1 : 0;
                correct += pred == s.truth.entries[j].label;
                ++total;
            }
        }
        CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.999);
    }
}

TEST_CASE("invalid specs are rejected") {
    SynthSpec spec;
    SUBCASE("n_cancer above n_tissue") {
        spec.n_cancer_patterns = spec.n_tissue_patterns + 1;
        CHECK_THROWS_AS(validate(spec), ConfigError);
    }
    SUBCASE("grid too small for a region") {
        spec.grid_w = 2;
        spec.grid_h = 2;
        CHECK_THROWS_WITH_AS(generate_slide(spec, 0), doctest::Contains("region larger than grid"),
                             ConfigError);
    }
    SUBCASE("flip rate out of range") {
        spec.boundary_flip_rate = 1.0;
        CHECK_THROWS_AS(validate(spec), ConfigError);
    }
    SUBCASE("cohort needs at least one slide") {
        CHECK_THROWS_AS(generate_cohort(spec, 0), ConfigError);
    }
}
