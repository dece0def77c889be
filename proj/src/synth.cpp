#include "protorefine/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "protorefine/errors.hpp"
#include "protorefine/rng.hpp"

namespace protorefine {

namespace {

constexpr std::uint64_t kPatternStream = 0x9a77e21fu;
constexpr std::uint64_t kSlideStream = 0x51cde5u;

// Pattern means are unit directions in two cones: a tight cancer cone and a
// wider tissue cone, rotated apart so the classes stay linearly separable and
// cross-class cosine sits well under the pseudo-label threshold, while
// within-pattern cosine stays high.
constexpr double kGroupAngle = 0.9;     // radians between the cone axes
constexpr double kCancerSpread = 0.065;  // within-cone direction noise, cancer
constexpr double kTissueSpread = 0.11;  // within-cone direction noise, tissue

// Region size fractions of the grid edge (main region, then satellites).
constexpr double kMainLo = 0.68, kMainHi = 0.88;
constexpr double kSatLo = 0.20, kSatHi = 0.32;
constexpr int kMinGrid = 3;

double dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = a[j] - b[j];
        s += diff * diff;
    }
    return std::sqrt(s);
}

struct Rect {
    int x0, y0, x1, y1; // half-open [x0,x1) x [y0,y1), clipped to the grid
};

Rect sample_rect(Rng& rng, int grid_w, int grid_h, double lo, double hi,
                 const Rect* overlap_with) {
    const int w = std::max(3, static_cast<int>(std::lround((lo + (hi - lo) * rng.uniform()) * grid_w)));
    const int h = std::max(3, static_cast<int>(std::lround((lo + (hi - lo) * rng.uniform()) * grid_h)));
    int x0, y0;
    if (overlap_with) {
        // anchor so the new rect intersects the previous one (keeps the union connected)
        const int xlo = overlap_with->x0 - w + 1;
        const int xhi = overlap_with->x1 - 1;
        const int ylo = overlap_with->y0 - h + 1;
        const int yhi = overlap_with->y1 - 1;
        x0 = xlo + static_cast<int>(rng.below(static_cast<std::uint64_t>(xhi - xlo + 1)));
        y0 = ylo + static_cast<int>(rng.below(static_cast<std::uint64_t>(yhi - ylo + 1)));
    } else {
        // allow overhang of up to a third of the rect; clipping at the border
        // mimics lesions running off the captured area
        const int over_x = w / 3, over_y = h / 3;
        x0 = -over_x + static_cast<int>(rng.below(static_cast<std::uint64_t>(grid_w - w + 2 * over_x + 1)));
        y0 = -over_y + static_cast<int>(rng.below(static_cast<std::uint64_t>(grid_h - h + 2 * over_y + 1)));
    }
    Rect r;
    r.x0 = std::clamp(x0, 0, grid_w);
    r.y0 = std::clamp(y0, 0, grid_h);
    r.x1 = std::clamp(x0 + w, 0, grid_w);
    r.y1 = std::clamp(y0 + h, 0, grid_h);
    return r;
}

void paint(std::vector<std::uint8_t>& grid, int grid_w, const Rect& r) {
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) grid[static_cast<std::size_t>(y) * grid_w + x] = 1;
}

// one 8-neighbourhood max step, `steps` times (Chebyshev dilation)
std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& grid, int grid_w, int grid_h,
                                 int steps) {
    std::vector<std::uint8_t> cur = grid;
    std::vector<std::uint8_t> next(cur.size());
    for (int s = 0; s < steps; ++s) {
        for (int y = 0; y < grid_h; ++y) {
            for (int x = 0; x < grid_w; ++x) {
                std::uint8_t v = 0;
                for (int dy = -1; dy <= 1 && !v; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= grid_h) continue;
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int xx = x + dx;
                        if (xx < 0 || xx >= grid_w) continue;
                        if (cur[static_cast<std::size_t>(yy) * grid_w + xx]) {
                            v = 1;
                            break;
                        }
                    }
                }
                next[static_cast<std::size_t>(y) * grid_w + x] = v;
            }
        }
        cur.swap(next);
    }
    return cur;
}

} // namespace

void validate(const SynthSpec& spec) {
    if (spec.grid_w < 1 || spec.grid_h < 1) throw ConfigError("grid dimensions must be >= 1");
    if (spec.d < 2) throw ConfigError("embedding dimension must be >= 2");
    if (spec.n_tissue_patterns < 1) throw ConfigError("n_tissue_patterns must be >= 1");
    if (spec.n_cancer_patterns < 1) throw ConfigError("n_cancer_patterns must be >= 1");
    if (spec.n_cancer_patterns > spec.n_tissue_patterns)
        throw ConfigError("n_cancer_patterns exceeds n_tissue_patterns");
    if (!(spec.blob_sigma > 0.0)) throw ConfigError("blob_sigma must be > 0");
    if (spec.region_count < 1) throw ConfigError("region_count must be >= 1");
    if (!(spec.boundary_flip_rate >= 0.0 && spec.boundary_flip_rate < 1.0))
        throw ConfigError("boundary_flip_rate must be in [0,1)");
    if (spec.dilation_radius < 0) throw ConfigError("dilation_radius must be >= 0");
    if (spec.grid_w < kMinGrid || spec.grid_h < kMinGrid)
        throw ConfigError("region larger than grid: need at least " + std::to_string(kMinGrid) +
                          "x" + std::to_string(kMinGrid) + " cells");
}

std::vector<std::vector<double>> pattern_means(const SynthSpec& spec) {
    validate(spec);
    Rng rng(mix_seed(spec.seed, kPatternStream));
    const int P = spec.n_tissue_patterns;
    const int C = spec.n_cancer_patterns;
    const int D = spec.d;

    auto unit_normal = [&] {
        std::vector<double> v(static_cast<std::size_t>(D));
        double n2 = 0.0;
        for (double& x : v) {
            x = rng.normal();
            n2 += x * x;
        }
        const double inv = 1.0 / std::sqrt(n2);
        for (double& x : v) x *= inv;
        return v;
    };

    // tissue axis, and a cancer axis rotated kGroupAngle away from it
    const std::vector<double> axis_t = unit_normal();
    std::vector<double> axis_c(static_cast<std::size_t>(D));
    {
        std::vector<double> v = unit_normal();
        double proj = 0.0;
        for (int j = 0; j < D; ++j) proj += v[static_cast<std::size_t>(j)] * axis_t[static_cast<std::size_t>(j)];
        double n2 = 0.0;
        for (int j = 0; j < D; ++j) {
            v[static_cast<std::size_t>(j)] -= proj * axis_t[static_cast<std::size_t>(j)];
            n2 += v[static_cast<std::size_t>(j)] * v[static_cast<std::size_t>(j)];
        }
        const double inv = 1.0 / std::sqrt(n2);
        for (int j = 0; j < D; ++j)
            axis_c[static_cast<std::size_t>(j)] = std::cos(kGroupAngle) * axis_t[static_cast<std::size_t>(j)] +
                                                  std::sin(kGroupAngle) * v[static_cast<std::size_t>(j)] * inv;
    }

    auto cone_direction = [&](const std::vector<double>& axis, double spread) {
        std::vector<double> m(static_cast<std::size_t>(D));
        double n2 = 0.0;
        for (int j = 0; j < D; ++j) {
            m[static_cast<std::size_t>(j)] = axis[static_cast<std::size_t>(j)] + spread * rng.normal();
            n2 += m[static_cast<std::size_t>(j)] * m[static_cast<std::size_t>(j)];
        }
        const double inv = 1.0 / std::sqrt(n2);
        for (double& x : m) x *= inv;
        return m;
    };

    // cancer patterns first (tight cone), then tissue patterns; tissue
    // directions wandering too close to the cancer cone are redrawn so the
    // minimum pairwise distance stays within the cancer group
    std::vector<std::vector<double>> means;
    means.reserve(static_cast<std::size_t>(P));
    double max_cancer_chord = 0.0;
    for (int p = 0; p < C; ++p) means.push_back(cone_direction(axis_c, kCancerSpread));
    for (int a = 0; a < C; ++a)
        for (int b = a + 1; b < C; ++b)
            max_cancer_chord = std::max(max_cancer_chord, dist(means[a], means[b]));
    const double floor_chord = std::max(1.3 * max_cancer_chord, 0.5);
    for (int p = C; p < P; ++p) {
        std::vector<double> m;
        for (int attempt = 0; attempt < 256; ++attempt) {
            m = cone_direction(axis_t, kTissueSpread);
            double ok = std::numeric_limits<double>::infinity();
            for (const auto& prev : means) ok = std::min(ok, dist(m, prev));
            if (ok >= floor_chord) break;
        }
        means.push_back(std::move(m));
    }

    // rescale so the minimum pairwise distance is exactly 6 * blob_sigma
    double min_d = std::numeric_limits<double>::infinity();
    for (int a = 0; a < P; ++a)
        for (int b = a + 1; b < P; ++b) min_d = std::min(min_d, dist(means[a], means[b]));
    if (P == 1) min_d = 1.0;
    if (!(min_d > 0.0)) throw DataError("degenerate pattern means (coincident directions)");
    const double scale = 6.0 * spec.blob_sigma / min_d;
    for (auto& m : means)
        for (double& v : m) v *= scale;
    return means;
}

SynthSlide generate_slide(const SynthSpec& spec, int slide_index) {
    validate(spec);
    const auto means = pattern_means(spec);
    Rng rng(mix_seed(mix_seed(spec.seed, kSlideStream), static_cast<std::uint64_t>(slide_index)));

    const int W = spec.grid_w, H = spec.grid_h;
    const std::size_t n = static_cast<std::size_t>(W) * H;
    std::vector<std::uint8_t> gt(n, 0);

    for (int r = 0; r < spec.region_count; ++r) {
        const bool main_region = r == 0;
        const double lo = main_region ? kMainLo : kSatLo;
        const double hi = main_region ? kMainHi : kSatHi;
        const int rects = 1 + static_cast<int>(rng.below(2));
        Rect first = sample_rect(rng, W, H, lo, hi, nullptr);
        paint(gt, W, first);
        for (int q = 1; q < rects; ++q) paint(gt, W, sample_rect(rng, W, H, lo * 0.6, hi * 0.6, &first));
    }

    // coarse = dilated ground truth with band flips
    const std::vector<std::uint8_t> dilated = dilate(gt, W, H, spec.dilation_radius);
    std::vector<std::uint8_t> inv(n);
    for (std::size_t i = 0; i < n; ++i) inv[i] = gt[i] ? 0 : 1;
    const std::vector<std::uint8_t> near_pos = dilate(gt, W, H, spec.dilation_radius + 1);
    const std::vector<std::uint8_t> near_neg = dilate(inv, W, H, spec.dilation_radius + 1);
    std::vector<std::uint8_t> coarse = dilated;
    for (std::size_t i = 0; i < n; ++i) {
        if (near_pos[i] && near_neg[i]) { // boundary band
            if (rng.uniform() < spec.boundary_flip_rate) coarse[i] = coarse[i] ? 0 : 1;
        }
    }

    const int n_cancer = spec.n_cancer_patterns;
    const int n_normal = spec.n_tissue_patterns - n_cancer;

    SynthSlide out;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "slide_%03d", slide_index);
    out.slide.slide_id = buf;
    out.slide.patches.reserve(n);
    out.slide.embeddings = MatrixF(n, static_cast<std::size_t>(spec.d));
    out.truth.slide_id = out.slide.slide_id;
    out.truth.entries.reserve(n);

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t j = static_cast<std::size_t>(y) * W + x;
            PatchRecord rec;
            std::snprintf(buf, sizeof(buf), "p%06zu", j);
            rec.patch_id = buf;
            rec.grid_x = x;
            rec.grid_y = y;
            rec.coarse_label = coarse[j];
            out.slide.patches.push_back(rec);

            int pattern;
            if (gt[j]) {
                pattern = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_cancer)));
            } else {
                if (n_normal == 0)
                    throw DataError("slide has negative patches but no non-cancer pattern");
                pattern = n_cancer + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_normal)));
            }
            const auto& mean = means[static_cast<std::size_t>(pattern)];
            float* row = out.slide.embeddings.data.data() + j * spec.d;
            for (int c = 0; c < spec.d; ++c)
                row[c] = static_cast<float>(mean[static_cast<std::size_t>(c)] +
                                            spec.blob_sigma * rng.normal());

            LabelEntry e;
            e.patch_id = rec.patch_id;
            e.label = gt[j];
            e.score = static_cast<float>(gt[j]);
            out.truth.entries.push_back(e);
        }
    }
    validate(out.slide);
    return out;
}

std::vector<SynthSlide> generate_cohort(const SynthSpec& spec, int n_slides) {
    if (n_slides < 1) throw ConfigError("n_slides must be >= 1");
    std::vector<SynthSlide> out;
    out.reserve(static_cast<std::size_t>(n_slides));
    for (int i = 0; i < n_slides; ++i) out.push_back(generate_slide(spec, i));
    return out;
}

} // namespace protorefine
