#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "protorefine/errors.hpp"
#include "protorefine/pseudo_label.hpp"
#include "protorefine/rng.hpp"
#include "protorefine/synth.hpp"

using namespace protorefine;

namespace {

SlideDataset slide_with_coarse(const std::vector<int>& coarse, std::size_t d = 2) {
    SlideDataset s;
    s.slide_id = "s0";
    s.embeddings = MatrixF(coarse.size(), d);
    for (std::size_t j = 0; j < coarse.size(); ++j) {
        s.patches.push_back({"p" + std::to_string(j), static_cast<std::int64_t>(j), 0, coarse[j]});
        s.embeddings.at(j, 0) = 1.0f; // nonzero rows
    }
    return s;
}

std::vector<Assignment> assignments_of(const std::vector<int>& idx) {
    std::vector<Assignment> out;
    for (int i : idx) out.push_back({i, 1.0});
    return out;
}

PrototypeSet global_set(const MatrixF& vectors) {
    PrototypeSet s;
    s.level = PrototypeLevel::global;
    s.vectors = vectors;
    s.member_counts.assign(vectors.rows, 1);
    return s;
}

} // namespace

TEST_CASE("frequency counts tally only coarse positives") {
    SlideDataset s = slide_with_coarse({1, 1, 1, 1, 1});
    const FrequencyStats stats = prototype_frequencies(s, assignments_of({0, 0, 1, 2, 0}), 3);
    CHECK(stats.counts == std::vector<std::int64_t>{3, 1, 1});
    CHECK(stats.total_in_annotation == 5);

    SUBCASE("out-of-annotation assignments are ignored") {
        SlideDataset mixed = slide_with_coarse({1, 0, 1, 0, 1});
        const FrequencyStats st2 = prototype_frequencies(mixed, assignments_of({0, 0, 1, 2, 0}), 3);
        CHECK(st2.counts == std::vector<std::int64_t>{2, 1, 0});
        CHECK(st2.total_in_annotation == 3);
    }
    SUBCASE("no coarse positives is an error") {
        SlideDataset empty = slide_with_coarse({0, 0, 0});
        CHECK_THROWS_WITH_AS(prototype_frequencies(empty, assignments_of({0, 1, 2}), 3),
                             doctest::Contains("empty coarse annotation"), DataError);
    }
    SUBCASE("length mismatch is an error") {
        CHECK_THROWS_AS(prototype_frequencies(s, assignments_of({0, 1}), 3), DataError);
    }
}

TEST_CASE("1000 random assignments match a histogram oracle") {
    Rng rng(17);
    const int K = 12;
    std::vector<int> coarse(1000), idx(1000);
    for (auto& c : coarse) c = static_cast<int>(rng.below(2));
    coarse[0] = 1;
    for (auto& i : idx) i = static_cast<int>(rng.below(K));
    SlideDataset s = slide_with_coarse(coarse);
    const FrequencyStats stats = prototype_frequencies(s, assignments_of(idx), K);

    std::vector<std::int64_t> expect(K, 0);
    std::int64_t total = 0;
    for (std::size_t j = 0; j < coarse.size(); ++j)
        if (coarse[j] == 1) {
            ++expect[static_cast<std::size_t>(idx[j])];
            ++total;
        }
    CHECK(stats.counts == expect);
    CHECK(stats.total_in_annotation == total);
}

TEST_CASE("major selection") {
    SUBCASE("coverage picks the smallest prefix reaching rho") {
        FrequencyStats st{{50, 30, 20}, 100};
        const MajorSelection sel = select_major_prototypes(st, MajorRule::coverage(0.8));
        CHECK(sel.major_indices == std::vector<int>{0, 1});
    }
    SUBCASE("fixed_m single max") {
        FrequencyStats st{{5, 10}, 15};
        CHECK(select_major_prototypes(st, MajorRule::fixed(1)).major_indices ==
              std::vector<int>{1});
    }
    SUBCASE("tie goes to the lowest index") {
        FrequencyStats st{{7, 7, 1}, 15};
        CHECK(select_major_prototypes(st, MajorRule::fixed(1)).major_indices ==
              std::vector<int>{0});
    }
    SUBCASE("m above the nonzero count reports the feasible maximum") {
        FrequencyStats st{{3, 0, 2}, 5};
        CHECK_THROWS_WITH_AS(select_major_prototypes(st, MajorRule::fixed(3)),
                             doctest::Contains("maximum feasible m=2"), DataError);
    }
    SUBCASE("zero-count prototypes are never selected, even at rho = 1") {
        FrequencyStats st{{3, 0, 2}, 5};
        const MajorSelection sel = select_major_prototypes(st, MajorRule::coverage(1.0));
        CHECK(sel.major_indices == std::vector<int>{0, 2});
    }
    SUBCASE("coverage minimality: dropping the last selected breaks coverage") {
        Rng rng(23);
        for (int trial = 0; trial < 50; ++trial) {
            const int K = 2 + static_cast<int>(rng.below(10));
            FrequencyStats st;
            st.counts.resize(static_cast<std::size_t>(K));
            st.total_in_annotation = 0;
            for (auto& c : st.counts) {
                c = static_cast<std::int64_t>(rng.below(40));
                st.total_in_annotation += c;
            }
            if (st.total_in_annotation == 0) {
                st.counts[0] = 1;
                st.total_in_annotation = 1;
            }
            const double rho = 0.3 + 0.7 * rng.uniform();
            const MajorSelection sel = select_major_prototypes(st, MajorRule::coverage(rho));
            double cum = 0.0;
            for (int i : sel.major_indices) cum += static_cast<double>(st.counts[static_cast<std::size_t>(i)]);
            CHECK(cum >= rho * static_cast<double>(st.total_in_annotation));
            const double last =
                static_cast<double>(st.counts[static_cast<std::size_t>(sel.major_indices.back())]);
            if (cum - last >= rho * static_cast<double>(st.total_in_annotation))
                FAIL_CHECK("selection not minimal");
            // selected counts dominate unselected ones
            std::int64_t min_sel = INT64_MAX;
            for (int i : sel.major_indices)
                min_sel = std::min(min_sel, st.counts[static_cast<std::size_t>(i)]);
            for (int i = 0; i < K; ++i) {
                bool selected = false;
                for (int j : sel.major_indices) selected |= j == i;
                if (!selected) CHECK(st.counts[static_cast<std::size_t>(i)] <= min_sel);
            }
        }
    }
}

TEST_CASE("pseudo-label thresholding follows the strict inequality") {
    // single major prototype along e0; patches at controlled cosines
    MatrixF protos(1, 2);
    protos.at(0, 0) = 1.0f;
    const PrototypeSet set = global_set(protos);
    MajorSelection majors;
    majors.major_indices = {0};

    auto at_cos = [](double c) {
        return std::pair<float, float>(static_cast<float>(c),
                                       static_cast<float>(std::sqrt(1.0 - c * c)));
    };
    SlideDataset s = slide_with_coarse({1, 0, 0});
    auto [x0, y0] = at_cos(0.95);
    auto [x1, y1] = at_cos(0.85);
    s.embeddings.at(0, 0) = x0;
    s.embeddings.at(0, 1) = y0;
    s.embeddings.at(1, 0) = x1;
    s.embeddings.at(1, 1) = y1;
    s.embeddings.at(2, 0) = -1.0f;
    s.embeddings.at(2, 1) = 0.0f;

    const LabelTable t = assign_pseudo_labels(s, set, majors, 0.9);
    REQUIRE(t.entries.size() == 3);
    CHECK(t.entries[0].label == 1);  // 0.95 > 0.9
    CHECK(t.entries[1].label == 0);  // 0.85 < 0.9

    SUBCASE("score exactly equal to theta stays negative") {
        const double exact = cosine_similarity(s.embedding(0), set.prototype(0));
        const LabelTable t2 = assign_pseudo_labels(s, set, majors, exact);
        CHECK(t2.entries[0].label == 0);
    }
    SUBCASE("negative similarity clamps the stored score to 0") {
        CHECK(t.entries[2].label == 0);
        CHECK(t.entries[2].score == 0.0f);
    }
    SUBCASE("preserve_coarse_positives keeps coarse positives positive") {
        const LabelTable t3 = assign_pseudo_labels(s, set, majors, 0.99, true);
        CHECK(t3.entries[0].label == 1); // coarse 1, below theta
        CHECK(t3.entries[1].label == 0);
    }
}

TEST_CASE("full synthetic slide matches the brute-force pseudo-label oracle") {
    SynthSpec spec;
    spec.grid_w = 25;
    spec.grid_h = 20;
    spec.d = 16;
    spec.n_tissue_patterns = 4;
    spec.n_cancer_patterns = 2;
    spec.seed = 33;
    const SynthSlide synth = generate_slide(spec, 0);

    Rng rng(71);
    MatrixF protos(8, 16);
    for (auto& v : protos.data) v = static_cast<float>(rng.normal());
    const PrototypeSet set = global_set(protos);
    MajorSelection majors;
    majors.major_indices = {5, 2};
    const double theta = 0.1;
    const LabelTable t = assign_pseudo_labels(synth.slide, set, majors, theta);

    REQUIRE(t.entries.size() == synth.slide.size()); // one entry per patch
    for (std::size_t j = 0; j < synth.slide.size(); ++j) {
        double best = -2.0;
        for (int m : majors.major_indices)
            best = std::max(best, oracles::cosine(synth.slide.embedding(j),
                                                  protos.row(static_cast<std::size_t>(m))));
        CHECK(t.entries[j].label == (best > theta ? 1 : 0));
        CHECK(t.entries[j].score ==
              static_cast<float>(std::clamp(best, 0.0, 1.0)));
    }
}

TEST_CASE("positive set shrinks monotonically in theta") {
    SynthSpec spec;
    spec.grid_w = 16;
    spec.grid_h = 12;
    spec.seed = 9;
    const SynthSlide synth = generate_slide(spec, 0);
    Rng rng(5);
    MatrixF protos(4, 32);
    for (auto& v : protos.data) v = static_cast<float>(rng.normal());
    const PrototypeSet set = global_set(protos);
    MajorSelection majors;
    majors.major_indices = {0, 3};

    std::vector<std::vector<int>> positive_sets;
    for (double theta : {-0.5, 0.0, 0.3, 0.6, 0.9}) {
        const LabelTable t = assign_pseudo_labels(synth.slide, set, majors, theta);
        std::vector<int> pos;
        for (std::size_t j = 0; j < t.entries.size(); ++j)
            if (t.entries[j].label == 1) pos.push_back(static_cast<int>(j));
        positive_sets.push_back(std::move(pos));
    }
    for (std::size_t i = 1; i < positive_sets.size(); ++i)
        for (int j : positive_sets[i])
            CHECK(std::find(positive_sets[i - 1].begin(), positive_sets[i - 1].end(), j) !=
                  positive_sets[i - 1].end());
}

TEST_CASE("a patch's own coarse label does not force its pseudo-label") {
    SynthSpec spec;
    spec.grid_w = 12;
    spec.grid_h = 8;
    spec.seed = 41;
    SynthSlide synth = generate_slide(spec, 0);
    Rng rng(6);
    MatrixF protos(4, 32);
    for (auto& v : protos.data) v = static_cast<float>(rng.normal());
    const PrototypeSet set = global_set(protos);
    MajorSelection majors;
    majors.major_indices = {1};

    const LabelTable before = assign_pseudo_labels(synth.slide, set, majors, 0.2);
    // flip one patch's coarse label; with fixed majors nothing may change
    synth.slide.patches[5].coarse_label = 1 - synth.slide.patches[5].coarse_label;
    const LabelTable after = assign_pseudo_labels(synth.slide, set, majors, 0.2);
    CHECK(before.entries == after.entries);
}
