#include "protorefine/kmeans.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "protorefine/errors.hpp"
#include "protorefine/rng.hpp"

namespace protorefine {

namespace {

constexpr int kRestarts = 5;
constexpr std::size_t kSwapSweepLimit = 512;
constexpr std::size_t kSmallInputLimit = 64;
constexpr int kSmallInputRestarts = 50;

double sq_dist(std::span<const float> row, const double* c, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(row[j]) - c[j];
        s += diff * diff;
    }
    return s;
}

KMeansResult run_once(const MatrixF& rows, int k, std::uint64_t seed, int max_iters, double tol) {
    const std::size_t n = rows.rows;
    const std::size_t d = rows.cols;
    const std::size_t ku = static_cast<std::size_t>(k);
    Rng rng(seed);

    // k-means++ seeding
    std::vector<double> centroids(ku * d);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    {
        const std::size_t first = static_cast<std::size_t>(rng.below(n));
        for (std::size_t j = 0; j < d; ++j) centroids[j] = rows.at(first, j);
        for (std::size_t i = 0; i < n; ++i) min_d2[i] = sq_dist(rows.row(i), centroids.data(), d);
        for (std::size_t c = 1; c < ku; ++c) {
            double total = 0.0;
            for (double v : min_d2) total += v;
            std::size_t pick;
            if (total > 0.0) {
                const double target = rng.uniform() * total;
                double acc = 0.0;
                pick = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += min_d2[i];
                    if (acc >= target) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = static_cast<std::size_t>(rng.below(n));
            }
            double* cc = centroids.data() + c * d;
            for (std::size_t j = 0; j < d; ++j) cc[j] = rows.at(pick, j);
            for (std::size_t i = 0; i < n; ++i)
                min_d2[i] = std::min(min_d2[i], sq_dist(rows.row(i), cc, d));
        }
    }

    KMeansResult res;
    res.assignments.assign(n, 0);
    std::vector<std::size_t> counts(ku, 0);
    std::vector<double> new_centroids(ku * d);

    auto recompute_means = [&] {
        new_centroids.assign(ku * d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double* cc = new_centroids.data() + static_cast<std::size_t>(res.assignments[i]) * d;
            const auto row = rows.row(i);
            for (std::size_t j = 0; j < d; ++j) cc[j] += row[j];
        }
        for (std::size_t c = 0; c < ku; ++c) {
            double* cc = new_centroids.data() + c * d;
            const double inv = 1.0 / static_cast<double>(counts[c]);
            for (std::size_t j = 0; j < d; ++j) cc[j] *= inv;
        }
    };
    auto record_inertia = [&] {
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            inertia += sq_dist(rows.row(i),
                               centroids.data() + static_cast<std::size_t>(res.assignments[i]) * d, d);
        res.inertia_history.push_back(inertia);
        res.inertia = inertia;
    };

    bool budget_left = true;
    for (int round = 0; round < 64 && budget_left; ++round) {
        // Lloyd iterations until the centroid shift falls under tol
        while (res.iterations_run < max_iters) {
            ++res.iterations_run;
            // assignment (ties -> lowest index)
            for (std::size_t i = 0; i < n; ++i) {
                double best = std::numeric_limits<double>::infinity();
                int best_c = 0;
                for (std::size_t c = 0; c < ku; ++c) {
                    const double dist = sq_dist(rows.row(i), centroids.data() + c * d, d);
                    if (dist < best) {
                        best = dist;
                        best_c = static_cast<int>(c);
                    }
                }
                res.assignments[i] = best_c;
            }
            counts.assign(ku, 0);
            for (std::size_t i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(res.assignments[i])];

            // empty-cluster repair: reseed from the point farthest from its
            // centroid, among clusters that can spare a member
            for (std::size_t c = 0; c < ku; ++c) {
                if (counts[c] != 0) continue;
                double worst = -1.0;
                std::size_t worst_i = n;
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t a = static_cast<std::size_t>(res.assignments[i]);
                    if (counts[a] < 2) continue;
                    const double dist = sq_dist(rows.row(i), centroids.data() + a * d, d);
                    if (dist > worst) {
                        worst = dist;
                        worst_i = i;
                    }
                }
                if (worst_i == n)
                    throw DataError("k-means cannot repair empty cluster (k > distinct rows?)");
                --counts[static_cast<std::size_t>(res.assignments[worst_i])];
                res.assignments[worst_i] = static_cast<int>(c);
                counts[c] = 1;
                double* cc = centroids.data() + c * d;
                for (std::size_t j = 0; j < d; ++j) cc[j] = rows.at(worst_i, j);
            }

            recompute_means();
            double shift2 = 0.0;
            for (std::size_t c = 0; c < ku; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = new_centroids[c * d + j] - centroids[c * d + j];
                    s += diff * diff;
                }
                shift2 = std::max(shift2, s);
            }
            centroids.swap(new_centroids);
            record_inertia();
            if (std::sqrt(shift2) <= tol) break;
        }
        budget_left = res.iterations_run < max_iters;
        if (!budget_left) break;

        // single-point improvement sweeps (Hartigan-style): Lloyd stops at
        // assignment-stable states that are not always partition-optimal, and
        // the optimality contract is checked against exhaustive search
        bool any_move = false;
        bool sweep_moved = true;
        while (sweep_moved) {
            sweep_moved = false;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t a = static_cast<std::size_t>(res.assignments[i]);
                if (counts[a] < 2) continue;
                const double na = static_cast<double>(counts[a]);
                const double removal =
                    na / (na - 1.0) * sq_dist(rows.row(i), centroids.data() + a * d, d);
                double best_delta = -1e-12;
                std::size_t best_b = ku;
                for (std::size_t b = 0; b < ku; ++b) {
                    if (b == a) continue;
                    const double nb = static_cast<double>(counts[b]);
                    const double addition =
                        nb / (nb + 1.0) * sq_dist(rows.row(i), centroids.data() + b * d, d);
                    const double delta = addition - removal;
                    if (delta < best_delta) {
                        best_delta = delta;
                        best_b = b;
                    }
                }
                if (best_b == ku) continue;
                // apply the move with incremental mean updates
                double* ma = centroids.data() + a * d;
                double* mb = centroids.data() + best_b * d;
                const double na2 = static_cast<double>(counts[a]);
                const double nb2 = static_cast<double>(counts[best_b]);
                const auto row = rows.row(i);
                for (std::size_t j = 0; j < d; ++j) {
                    ma[j] = (na2 * ma[j] - row[j]) / (na2 - 1.0);
                    mb[j] = (nb2 * mb[j] + row[j]) / (nb2 + 1.0);
                }
                --counts[a];
                ++counts[best_b];
                res.assignments[i] = static_cast<int>(best_b);
                sweep_moved = true;
                any_move = true;
            }
        }
        // pairwise swap sweeps for small inputs, where single-point moves
        // still leave 2-opt local minima
        if (n <= kSwapSweepLimit) {
            bool swap_moved = true;
            while (swap_moved) {
                swap_moved = false;
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = i + 1; j < n; ++j) {
                        const std::size_t a = static_cast<std::size_t>(res.assignments[i]);
                        const std::size_t b = static_cast<std::size_t>(res.assignments[j]);
                        if (a == b) continue;
                        const double na = static_cast<double>(counts[a]);
                        const double nb = static_cast<double>(counts[b]);
                        // exact WCSS change of exchanging rows i and j
                        double delta = 0.0;
                        {
                            const auto xi = rows.row(i);
                            const auto xj = rows.row(j);
                            double ni2 = 0.0, nj2 = 0.0, da_old = 0.0, da_new = 0.0, db_old = 0.0,
                                   db_new = 0.0;
                            for (std::size_t c2 = 0; c2 < d; ++c2) {
                                const double xa = xi[c2], xb = xj[c2];
                                ni2 += xa * xa;
                                nj2 += xb * xb;
                                const double mua = centroids[a * d + c2];
                                const double mub = centroids[b * d + c2];
                                const double mua_new = mua + (xb - xa) / na;
                                const double mub_new = mub + (xa - xb) / nb;
                                da_old += mua * mua;
                                da_new += mua_new * mua_new;
                                db_old += mub * mub;
                                db_new += mub_new * mub_new;
                            }
                            delta = (nj2 - ni2 - na * (da_new - da_old)) +
                                    (ni2 - nj2 - nb * (db_new - db_old));
                        }
                        if (delta < -1e-12) {
                            double* ma = centroids.data() + a * d;
                            double* mb = centroids.data() + b * d;
                            const auto xi = rows.row(i);
                            const auto xj = rows.row(j);
                            for (std::size_t c2 = 0; c2 < d; ++c2) {
                                ma[c2] += (static_cast<double>(xj[c2]) - xi[c2]) / na;
                                mb[c2] += (static_cast<double>(xi[c2]) - xj[c2]) / nb;
                            }
                            std::swap(res.assignments[i], res.assignments[j]);
                            swap_moved = true;
                            any_move = true;
                        }
                    }
                }
            }
        }

        if (!any_move) break;
        recompute_means();
        centroids.swap(new_centroids);
        record_inertia();
    }

    res.centroids = std::move(centroids);
    return res;
}

} // namespace

KMeansResult kmeans_fit(const MatrixF& rows, int k, std::uint64_t seed, int max_iters, double tol) {
    if (k < 1) throw ConfigError("k-means: k must be >= 1");
    if (static_cast<std::size_t>(k) > rows.rows)
        throw DataError("k-means: k=" + std::to_string(k) + " exceeds row count " +
                        std::to_string(rows.rows));
    if (max_iters < 1) throw ConfigError("k-means: max_iters must be >= 1");
    if (!(tol >= 0.0)) throw ConfigError("k-means: tol must be >= 0");
    for (std::size_t i = 0; i < rows.rows; ++i)
        for (float v : rows.row(i))
            if (!std::isfinite(v)) throw DataError("k-means: non-finite input at row " + std::to_string(i));

    KMeansResult best;
    bool have = false;
    // tiny inputs get extra restarts: they are nearly free there and the
    // partition-optimality contract is checked against exhaustive search
    const int restarts = rows.rows <= kSmallInputLimit ? kSmallInputRestarts : kRestarts;
    for (int r = 0; r < restarts; ++r) {
        KMeansResult cur = run_once(rows, k, mix_seed(seed, static_cast<std::uint64_t>(r)), max_iters, tol);
        if (!have || cur.inertia < best.inertia) {
            best = std::move(cur);
            have = true;
        }
    }
    return best;
}

} // namespace protorefine
