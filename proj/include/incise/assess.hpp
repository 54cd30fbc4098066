#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "mesh.hpp"
#include "model.hpp"
#include "raster.hpp"
#include "util.hpp"

// Cross-validation splits, per-grid predictive count aggregation, proper
// scoring rules (SE / DS / LS / CRPS) for count and Gaussian predictives, and
// score-difference utilities.

namespace incise {

enum class FoldSide { white, black };

// ---------------------------------------------------------------------------
// splits

struct ThinningSplit {
    std::vector<std::size_t> train, test;  // indices into the point set
};

// Seeded random 50% thinning: first ceil(n/2) of a shuffled permutation train.
inline ThinningSplit thinning_split(const PointData& pts, std::uint64_t seed) {
    const std::size_t n = pts.size();
    if (n < 2) throw DataError("thinning split needs at least 2 points");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng = make_rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t n_train = (n + 1) / 2;
    ThinningSplit s;
    s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    return s;
}

inline PointData subset_points(const PointData& pts, const std::vector<std::size_t>& idx) {
    PointData out;
    for (std::size_t i : idx) {
        out.x.push_back(pts.x[i]);
        out.y.push_back(pts.y[i]);
        if (pts.has_marks()) out.marks.push_back(pts.marks[i]);
    }
    return out;
}

// Square lattice anchored at the region's lower-left corner. Cell (i,j) is a
// training cell of the white fold iff i+j is even; the black fold negates.
struct Chequerboard {
    double x0 = 0.0, y0 = 0.0, cell = 0.0;
    int ni = 0, nj = 0;
    bool single_cell = false;  // grid larger than the region

    int n_cells() const { return ni * nj; }

    bool is_train(int i, int j, FoldSide fold) const {
        const bool even = ((i + j) % 2) == 0;
        return fold == FoldSide::white ? even : !even;
    }

    // flat id j*ni+i of the cell containing (x,y); border points clamp inward
    int cell_of(double x, double y) const {
        int i = static_cast<int>(std::floor((x - x0) / cell));
        int j = static_cast<int>(std::floor((y - y0) / cell));
        i = std::clamp(i, 0, ni - 1);
        j = std::clamp(j, 0, nj - 1);
        return j * ni + i;
    }

    std::vector<int> fold_cells(FoldSide fold, bool train) const {
        std::vector<int> out;
        for (int j = 0; j < nj; ++j)
            for (int i = 0; i < ni; ++i)
                if (is_train(i, j, fold) == train) out.push_back(j * ni + i);
        return out;
    }
};

inline Chequerboard chequerboard_split(const GridHeader& region, double grid_size) {
    if (!(grid_size > 0.0)) throw ConfigError("chequerboard grid size must be positive");
    Chequerboard g;
    g.x0 = region.x_origin;
    g.y0 = region.y_origin;
    g.cell = grid_size;
    const double w = region.ncols * region.cell_size;
    const double h = region.nrows * region.cell_size;
    g.ni = std::max(1, static_cast<int>(std::ceil(w / grid_size)));
    g.nj = std::max(1, static_cast<int>(std::ceil(h / grid_size)));
    g.single_cell = g.n_cells() == 1;
    return g;
}

// ---------------------------------------------------------------------------
// predictive counts per grid cell

struct GridCounts {
    std::vector<int> cell_ids;             // evaluation cells that kept support
    std::vector<double> y_obs;             // observed counts
    Eigen::MatrixXd lambda;                // n_samples x n_cells integrated intensities
    std::vector<std::vector<int>> counts;  // seeded Poisson draws per cell
    int excluded_zero_weight = 0;          // cells dropped for lack of quadrature
};

struct PredictiveCountOptions {
    int n_samples = 1000;
    std::uint64_t seed = 0;
    double intensity_scale = 1.0;  // test/train share ratio for thinning folds
    bool at_mode_only = false;     // degenerate predictive: every sample is the mode
};

// Integrates exp(eta) over the quadrature points of each evaluation cell for
// every posterior sample, then draws predictive counts ~ Poisson(lambda).
inline GridCounts predictive_counts(const Posterior& post, const CovariateStack& cov,
                                    const Quadrature& quad, const Chequerboard& grid,
                                    const std::vector<int>& eval_cells, const PointData& test_points,
                                    const PredictiveCountOptions& opt = {}) {
    if (opt.n_samples < 1) throw ConfigError("predictive counts need at least 1 sample");
    const int m = opt.n_samples;
    const Eigen::MatrixXd samples =
        opt.at_mode_only ? Eigen::MatrixXd(post.mode.replicate(1, m)) : sample_posterior(post, m, opt.seed);

    std::vector<int> slot(static_cast<std::size_t>(grid.n_cells()), -1);
    for (std::size_t c = 0; c < eval_cells.size(); ++c) {
        const int id = eval_cells[c];
        if (id < 0 || id >= grid.n_cells()) throw ConfigError("evaluation cell outside the grid");
        slot[static_cast<std::size_t>(id)] = static_cast<int>(c);
    }

    // usable quadrature rows, grouped by evaluation cell
    const std::size_t nq = quad.x.size();
    std::vector<int> q_slot(nq, -1);
    std::vector<std::vector<std::pair<int, double>>> q_row(nq);
    std::vector<double> support(eval_cells.size(), 0.0);
    for (std::size_t q = 0; q < nq; ++q) {
        const int s = slot[static_cast<std::size_t>(grid.cell_of(quad.x[q], quad.y[q]))];
        if (s < 0) continue;
        if (!detail::design_row(post.blocks, cov, quad.x[q], quad.y[q], q_row[q], nullptr)) continue;
        q_slot[q] = s;
        support[static_cast<std::size_t>(s)] += quad.w[q];
    }

    GridCounts gc;
    std::vector<int> kept_slot(eval_cells.size(), -1);
    for (std::size_t c = 0; c < eval_cells.size(); ++c) {
        if (support[c] > 0.0) {
            kept_slot[c] = static_cast<int>(gc.cell_ids.size());
            gc.cell_ids.push_back(eval_cells[c]);
        } else {
            ++gc.excluded_zero_weight;
        }
    }
    const std::size_t n_kept = gc.cell_ids.size();

    gc.lambda = Eigen::MatrixXd::Zero(m, static_cast<int>(n_kept));
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t s) {
        for (std::size_t q = 0; q < nq; ++q) {
            if (q_slot[q] < 0) continue;
            const int k = kept_slot[static_cast<std::size_t>(q_slot[q])];
            if (k < 0) continue;
            double eta = 0.0;
            for (const auto& [col, v] : q_row[q]) eta += v * samples(col, static_cast<int>(s));
            gc.lambda(static_cast<int>(s), k) += quad.w[q] * 1e-6 * std::exp(eta) * opt.intensity_scale;
        }
    });

    gc.y_obs.assign(n_kept, 0.0);
    for (std::size_t p = 0; p < test_points.size(); ++p) {
        const int s = slot[static_cast<std::size_t>(grid.cell_of(test_points.x[p], test_points.y[p]))];
        if (s < 0) continue;
        const int k = kept_slot[static_cast<std::size_t>(s)];
        if (k >= 0) gc.y_obs[static_cast<std::size_t>(k)] += 1.0;
    }

    // count draws in a fixed cell-major order, independent of threading
    std::mt19937_64 rng = make_rng(mix_seed(opt.seed, 0x9e3779b97f4a7c15ull));
    gc.counts.assign(n_kept, std::vector<int>(static_cast<std::size_t>(m), 0));
    for (std::size_t c = 0; c < n_kept; ++c)
        for (int s = 0; s < m; ++s) {
            const double lam = gc.lambda(s, static_cast<int>(c));
            if (lam > 0.0) gc.counts[c][static_cast<std::size_t>(s)] = std::poisson_distribution<int>(lam)(rng);
        }
    return gc;
}

// ---------------------------------------------------------------------------
// scores

struct CountScore {
    double se, ds, ls, crps;
};

struct GaussScore {
    double se, ds, ls;
};

namespace detail {

inline double poisson_logpmf(double y, double lam) {
    if (lam <= 0.0) return y == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
    return y * std::log(lam) - lam - std::lgamma(y + 1.0);
}

// pmf over 0..k_max anchored at the mode so large rates cannot underflow the
// forward recurrence
inline void poisson_pmf_row(double lam, std::vector<double>& pmf) {
    std::fill(pmf.begin(), pmf.end(), 0.0);
    if (lam <= 0.0) {
        pmf[0] = 1.0;
        return;
    }
    const long k_max = static_cast<long>(pmf.size()) - 1;
    const long k0 = std::min(static_cast<long>(std::floor(lam)), k_max);
    pmf[static_cast<std::size_t>(k0)] = std::exp(poisson_logpmf(static_cast<double>(k0), lam));
    for (long k = k0; k > 0; --k)
        pmf[static_cast<std::size_t>(k - 1)] = pmf[static_cast<std::size_t>(k)] * static_cast<double>(k) / lam;
    for (long k = k0; k < k_max; ++k)
        pmf[static_cast<std::size_t>(k + 1)] = pmf[static_cast<std::size_t>(k)] * lam / static_cast<double>(k + 1);
}

} // namespace detail

// truncation point with predictive tail mass below 1e-12
inline long crps_k_max(const std::vector<double>& lambdas, double y) {
    double lmax = 0.0;
    for (double l : lambdas) lmax = std::max(lmax, l);
    return static_cast<long>(std::max(y, std::ceil(lmax)) + 40.0 * std::sqrt(lmax) + 40.0);
}

// SE/DS from analytic mixture moments (E = mean rate, V = mean rate + rate
// variance), LS from the exact Poisson-mixture pmf, CRPS from the truncated
// discrete sum of squared CDF differences.
inline CountScore score_count_mixture(const std::vector<double>& lambdas, double y,
                                      long k_max_override = -1) {
    if (lambdas.empty()) throw DataError("count score needs at least one predictive sample");
    const std::size_t n = lambdas.size();
    const double e = mean_of(lambdas);
    const double v = e + population_variance(lambdas);

    CountScore s{};
    s.se = (y - e) * (y - e);
    if (v > 0.0)
        s.ds = s.se / v + std::log(v);
    else
        s.ds = s.se == 0.0 ? -700.0 : std::numeric_limits<double>::infinity();

    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> lp(n);
    for (std::size_t i = 0; i < n; ++i) {
        lp[i] = detail::poisson_logpmf(y, lambdas[i]);
        best = std::max(best, lp[i]);
    }
    if (best < std::log(1e-300)) {
        s.ls = 700.0;  // every sample's mass at y underflows
    } else {
        double acc = 0.0;
        for (double v2 : lp) acc += std::exp(v2 - best);
        s.ls = -(best + std::log(acc / static_cast<double>(n)));
    }

    const long k_max = k_max_override >= 0 ? k_max_override : crps_k_max(lambdas, y);
    std::vector<double> mean_cdf(static_cast<std::size_t>(k_max) + 1, 0.0);
    std::vector<double> pmf(static_cast<std::size_t>(k_max) + 1);
    for (double lam : lambdas) {
        detail::poisson_pmf_row(lam, pmf);
        double cdf = 0.0;
        for (long k = 0; k <= k_max; ++k) {
            cdf += pmf[static_cast<std::size_t>(k)];
            mean_cdf[static_cast<std::size_t>(k)] += cdf;
        }
    }
    double crps = 0.0;
    for (long k = 0; k <= k_max; ++k) {
        const double f = mean_cdf[static_cast<std::size_t>(k)] / static_cast<double>(n);
        const double ind = y <= static_cast<double>(k) ? 1.0 : 0.0;
        crps += (f - ind) * (f - ind);
    }
    s.crps = crps;
    return s;
}

// equal-weight mixture of Normal(mu_s, sigma2); CRPS intentionally omitted
inline GaussScore score_gaussian_mixture(const std::vector<double>& mus, double sigma2, double y) {
    if (mus.empty()) throw DataError("gaussian score needs at least one predictive sample");
    if (!(sigma2 > 0.0)) throw NumericalError("gaussian score: non-positive predictive variance");
    const std::size_t n = mus.size();
    const double e = mean_of(mus);
    const double v = sigma2 + population_variance(mus);

    GaussScore g{};
    g.se = (y - e) * (y - e);
    g.ds = g.se / v + std::log(v);

    const double lognorm = -0.5 * std::log(2.0 * M_PI * sigma2);
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> lp(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = y - mus[i];
        lp[i] = lognorm - 0.5 * d * d / sigma2;
        best = std::max(best, lp[i]);
    }
    double acc = 0.0;
    for (double v2 : lp) acc += std::exp(v2 - best);
    g.ls = -(best + std::log(acc / static_cast<double>(n)));
    return g;
}

// ---------------------------------------------------------------------------
// score tables

struct ScoreRow {
    int id = 0;  // grid cell id for counts, point index for marks
    double y_obs = 0.0;
    double se = 0.0, ds = 0.0, ls = 0.0, crps = 0.0;
};

inline std::vector<ScoreRow> score_counts(const GridCounts& gc) {
    std::vector<ScoreRow> rows(gc.cell_ids.size());
    const int m = static_cast<int>(gc.lambda.rows());
    parallel_for(gc.cell_ids.size(), [&](std::size_t c) {
        std::vector<double> lam(static_cast<std::size_t>(m));
        for (int s = 0; s < m; ++s) lam[static_cast<std::size_t>(s)] = gc.lambda(s, static_cast<int>(c));
        const CountScore cs = score_count_mixture(lam, gc.y_obs[c]);
        rows[c] = {gc.cell_ids[c], gc.y_obs[c], cs.se, cs.ds, cs.ls, cs.crps};
    });
    return rows;
}

// Scores held-out marks under the sampled-mean mixture with the modal noise
// variance. Points with nodata covariates are skipped. CRPS is reported as
// NaN for mark models.
inline std::vector<ScoreRow> score_gaussian_marks(const Posterior& post, const CovariateStack& cov,
                                                  const PointData& test, int n_samples,
                                                  std::uint64_t seed) {
    if (!test.has_marks()) throw DataError("mark scoring needs observed marks");
    const Eigen::MatrixXd samples = sample_posterior(post, n_samples, seed);
    std::vector<ScoreRow> rows;
    std::vector<std::pair<int, double>> entries;
    std::map<std::string, long> unseen;
    std::vector<double> mus(static_cast<std::size_t>(n_samples));
    for (std::size_t p = 0; p < test.size(); ++p) {
        if (!detail::design_row(post.blocks, cov, test.x[p], test.y[p], entries, &unseen)) continue;
        for (int s = 0; s < n_samples; ++s) {
            double mu = 0.0;
            for (const auto& [col, v] : entries) mu += v * samples(col, s);
            mus[static_cast<std::size_t>(s)] = mu;
        }
        const GaussScore g = score_gaussian_mixture(mus, post.noise_var, test.marks[p]);
        rows.push_back({static_cast<int>(p), test.marks[p], g.se, g.ds, g.ls,
                        std::numeric_limits<double>::quiet_NaN()});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// comparison utilities

// left-open empirical CDF F(s) = #{x < s}/n
struct Ecdf {
    std::vector<double> sorted;
    double operator()(double s) const {
        const auto it = std::lower_bound(sorted.begin(), sorted.end(), s);
        return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
    }
};

inline Ecdf make_ecdf(std::vector<double> scores) {
    if (scores.empty()) throw DataError("ecdf needs at least one score");
    std::sort(scores.begin(), scores.end());
    return {std::move(scores)};
}

// per-cell score differences, other - base; negative favours `other`
inline std::vector<ScoreRow> score_difference(const std::vector<ScoreRow>& base,
                                              const std::vector<ScoreRow>& other) {
    if (base.size() != other.size()) throw DataError("score tables do not cover the same cells");
    std::vector<ScoreRow> out(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        if (base[i].id != other[i].id) throw DataError("score tables do not cover the same cells");
        out[i] = {base[i].id,           base[i].y_obs,
                  other[i].se - base[i].se,   other[i].ds - base[i].ds,
                  other[i].ls - base[i].ls,   other[i].crps - base[i].crps};
    }
    return out;
}

struct ScoreSummary {
    double rmse = 0.0, ds = 0.0, ls = 0.0, crps = 0.0;
};

inline ScoreSummary summarize_scores(const std::vector<ScoreRow>& rows) {
    if (rows.empty()) throw DataError("cannot summarize an empty score table");
    double se = 0.0, ds = 0.0, ls = 0.0, crps = 0.0;
    for (const ScoreRow& r : rows) {
        se += r.se;
        ds += r.ds;
        ls += r.ls;
        crps += r.crps;
    }
    const double n = static_cast<double>(rows.size());
    return {std::sqrt(se / n), ds / n, ls / n, crps / n};
}

} // namespace incise
