#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "incise/assess.hpp"
#include "incise/mesh.hpp"
#include "incise/model.hpp"
#include "incise/raster.hpp"

using namespace incise;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

GridHeader region_header(int ncols, int nrows, double cell) {
    GridHeader h;
    h.ncols = ncols;
    h.nrows = nrows;
    h.x_origin = 0.0;
    h.y_origin = 0.0;
    h.cell_size = cell;
    h.nodata = -9999.0;
    return h;
}

Quadrature grid_quadrature(double x0, double y0, double side, int n, double total_weight) {
    Quadrature q;
    const double w = total_weight / (n * n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            q.x.push_back(x0 + side * (i + 0.5) / n);
            q.y.push_back(y0 + side * (j + 0.5) / n);
            q.w.push_back(w);
        }
    return q;
}

PointData n_points(std::size_t n) {
    PointData p;
    for (std::size_t i = 0; i < n; ++i) {
        p.x.push_back(static_cast<double>(i));
        p.y.push_back(static_cast<double>(i));
    }
    return p;
}

} // namespace

TEST_CASE("thinning split bookkeeping matches the published fold sizes") {
    const PointData pts = n_points(20471);
    const ThinningSplit s = thinning_split(pts, 7);
    REQUIRE(s.train.size() == 10236);
    REQUIRE(s.test.size() == 10235);

    std::vector<char> seen(pts.size(), 0);
    for (std::size_t i : s.train) seen[i] += 1;
    for (std::size_t i : s.test) seen[i] += 1;
    for (char c : seen) REQUIRE(c == 1);

    const ThinningSplit again = thinning_split(pts, 7);
    REQUIRE(again.train == s.train);
    REQUIRE(again.test == s.test);

    const ThinningSplit small = thinning_split(n_points(4), 99);
    REQUIRE(small.train.size() == 2);
    REQUIRE(small.test.size() == 2);

    REQUIRE_THROWS_AS(thinning_split(n_points(1), 0), DataError);
}

TEST_CASE("point subsets keep coordinates and marks aligned") {
    PointData p = n_points(5);
    p.marks = {10, 11, 12, 13, 14};
    const PointData s = subset_points(p, {4, 1});
    REQUIRE(s.size() == 2);
    REQUIRE(s.x[0] == 4.0);
    REQUIRE(s.marks[0] == 14.0);
    REQUIRE(s.marks[1] == 11.0);
}

TEST_CASE("chequerboard parity labels and complementarity") {
    const GridHeader region = region_header(100, 100, 100.0); // 10 km x 10 km
    const Chequerboard g = chequerboard_split(region, 3000.0);
    REQUIRE(g.ni == 4);
    REQUIRE(g.nj == 4);
    REQUIRE_FALSE(g.single_cell);

    REQUIRE(g.is_train(0, 0, FoldSide::white));
    REQUIRE_FALSE(g.is_train(0, 1, FoldSide::white));
    REQUIRE_FALSE(g.is_train(1, 0, FoldSide::white));
    for (int j = 0; j < g.nj; ++j)
        for (int i = 0; i < g.ni; ++i)
            REQUIRE(g.is_train(i, j, FoldSide::black) == !g.is_train(i, j, FoldSide::white));

    // white-fold train cells are exactly the black-fold test cells
    REQUIRE(g.fold_cells(FoldSide::white, true) == g.fold_cells(FoldSide::black, false));
    REQUIRE(g.fold_cells(FoldSide::white, true).size() + g.fold_cells(FoldSide::white, false).size() ==
            static_cast<std::size_t>(g.n_cells()));

    REQUIRE(g.cell_of(100.0, 100.0) == 0);
    REQUIRE(g.cell_of(3100.0, 100.0) == 1);
    REQUIRE(g.cell_of(9999.0, 9999.0) == 15);

    const Chequerboard one = chequerboard_split(region, 20000.0);
    REQUIRE(one.ni == 1);
    REQUIRE(one.nj == 1);
    REQUIRE(one.single_cell);

    REQUIRE_THROWS_AS(chequerboard_split(region, 0.0), ConfigError);
}

TEST_CASE("count scores match closed forms") {
    // single-sample Poisson(2) predictive observed at its mean
    const CountScore a = score_count_mixture({2.0}, 2.0);
    REQUIRE_THAT(a.ls, WithinAbs(2.0 - std::log(2.0), 1e-12));
    REQUIRE_THAT(a.se, WithinAbs(0.0, 1e-12));
    REQUIRE_THAT(a.ds, WithinAbs(std::log(2.0), 1e-12));
    REQUIRE(a.crps >= 0.0);
    REQUIRE(std::isfinite(a.crps));

    // zero intensity forecasting the observed zero is a perfect score
    const CountScore z = score_count_mixture({0.0}, 0.0);
    REQUIRE(z.crps == 0.0);
    REQUIRE(z.se == 0.0);

    // zero intensity facing a positive count: SE = y^2, DS overflows
    const CountScore bad = score_count_mixture({0.0, 0.0}, 3.0);
    REQUIRE(bad.se == 9.0);
    REQUIRE(std::isinf(bad.ds));
    REQUIRE(bad.ds > 0.0);
    REQUIRE(bad.ls == 700.0); // underflow sentinel

    // predictive mass at y below 1e-300 in every sample
    const CountScore under = score_count_mixture({1e-8, 1e-8}, 50.0);
    REQUIRE(under.ls == 700.0);
}

TEST_CASE("poisson crps matches a brute-force truncated sum") {
    double brute = 0.0, p = std::exp(-1.0), cdf = 0.0;
    for (int k = 0; k <= 60; ++k) {
        cdf += p;
        brute += (cdf - 1.0) * (cdf - 1.0);
        p *= 1.0 / (k + 1);
    }
    const CountScore s = score_count_mixture({1.0}, 0.0);
    REQUIRE_THAT(s.crps, WithinAbs(brute, 1e-9));
}

TEST_CASE("crps truncation is converged") {
    const std::vector<std::vector<double>> cases = {{0.5, 3.7, 12.0}, {150.0}, {800.0}};
    const std::vector<double> ys = {4.0, 140.0, 790.0};
    for (std::size_t c = 0; c < cases.size(); ++c) {
        const CountScore s1 = score_count_mixture(cases[c], ys[c]);
        const long k = crps_k_max(cases[c], ys[c]);
        const CountScore s2 = score_count_mixture(cases[c], ys[c], 2 * k);
        REQUIRE(std::isfinite(s1.crps));
        REQUIRE(s1.crps >= 0.0);
        REQUIRE_THAT(s2.crps, WithinAbs(s1.crps, 1e-9));
    }
}

TEST_CASE("gaussian scores match closed forms") {
    const GaussScore g = score_gaussian_mixture({0.0}, 1.0, 0.0);
    REQUIRE_THAT(g.ls, WithinAbs(0.5 * std::log(2.0 * M_PI), 1e-12));
    REQUIRE(g.se == 0.0);
    REQUIRE_THAT(g.ds, WithinAbs(0.0, 1e-12));

    // two-component mixture: mean 0, variance 1 + 1
    const GaussScore m = score_gaussian_mixture({-1.0, 1.0}, 1.0, 0.0);
    REQUIRE(m.se == 0.0);
    REQUIRE_THAT(m.ds, WithinAbs(std::log(2.0), 1e-12));

    REQUIRE_THROWS_AS(score_gaussian_mixture({0.0}, 0.0, 0.0), NumericalError);
}

TEST_CASE("ecdf follows the strict less-than convention") {
    const Ecdf f = make_ecdf({3.0, 1.0, 2.0});
    REQUIRE(f(2.5) == 2.0 / 3.0);
    REQUIRE(f(1.0) == 0.0); // strict: nothing is < the minimum
    REQUIRE(f(3.0) == 2.0 / 3.0);
    REQUIRE(f(4.0) == 1.0);
    REQUIRE(f(-10.0) == 0.0);
    REQUIRE_THROWS_AS(make_ecdf({}), DataError);
}

TEST_CASE("score differences join by cell and are antisymmetric") {
    const std::vector<ScoreRow> a = {{0, 1.0, 1.0, 2.0, 3.0, 4.0}, {5, 2.0, 2.0, 1.0, 0.5, 0.25}};
    std::vector<ScoreRow> b = a;
    b[0].se = 4.0;
    b[1].ls = 2.5;

    const std::vector<ScoreRow> zero = score_difference(a, a);
    for (const ScoreRow& r : zero) {
        REQUIRE(r.se == 0.0);
        REQUIRE(r.ds == 0.0);
        REQUIRE(r.ls == 0.0);
        REQUIRE(r.crps == 0.0);
    }

    // a step ECDF at zero for identical tables
    std::vector<double> deltas;
    for (const ScoreRow& r : zero) deltas.push_back(r.ls);
    const Ecdf f = make_ecdf(deltas);
    REQUIRE(f(0.0) == 0.0);
    REQUIRE(f(1e-12) == 1.0);

    const std::vector<ScoreRow> ab = score_difference(a, b);
    const std::vector<ScoreRow> ba = score_difference(b, a);
    REQUIRE(ab[0].se == 3.0);
    for (std::size_t i = 0; i < ab.size(); ++i) {
        REQUIRE(ab[i].id == a[i].id);
        REQUIRE(ab[i].se == -ba[i].se);
        REQUIRE(ab[i].ds == -ba[i].ds);
        REQUIRE(ab[i].ls == -ba[i].ls);
        REQUIRE(ab[i].crps == -ba[i].crps);
    }

    std::vector<ScoreRow> mismatched = a;
    mismatched[1].id = 6;
    REQUIRE_THROWS_AS(score_difference(a, mismatched), DataError);
}

TEST_CASE("score summaries use root-mean-square error") {
    const std::vector<ScoreRow> rows = {{0, 0.0, 1.0, 2.0, 3.0, 4.0}, {1, 0.0, 4.0, 4.0, 5.0, 6.0}};
    const ScoreSummary s = summarize_scores(rows);
    REQUIRE_THAT(s.rmse, WithinAbs(std::sqrt(2.5), 1e-12));
    REQUIRE_THAT(s.ds, WithinAbs(3.0, 1e-12));
    REQUIRE_THAT(s.ls, WithinAbs(4.0, 1e-12));
    REQUIRE_THAT(s.crps, WithinAbs(5.0, 1e-12));

    std::vector<ScoreRow> marks = rows;
    marks[0].crps = std::numeric_limits<double>::quiet_NaN();
    REQUIRE(std::isnan(summarize_scores(marks).crps));
}

TEST_CASE("predictive counts integrate the modal intensity exactly") {
    // 8 points over 4 km^2 -> modal rate 2 per km^2
    const GridHeader region = region_header(20, 20, 100.0); // 2 km x 2 km
    CovariateStack cov;
    PointData pts;
    for (int i = 0; i < 8; ++i) {
        pts.x.push_back(150.0 + 200.0 * i);
        pts.y.push_back(450.0 + 100.0 * i);
    }
    const Quadrature quad = grid_quadrature(0.0, 0.0, 2000.0, 20, 4e6);

    ModelSpec spec;
    spec.name = "const";
    const LatentModel lmod = build_design(spec, pts, quad, cov);
    const Posterior post = fit(lmod, Likelihood::poisson_pp);
    REQUIRE_THAT(post.mode[0], WithinAbs(std::log(2.0), 1e-6));

    const Chequerboard grid = chequerboard_split(region, 1000.0);
    REQUIRE(grid.n_cells() == 4);
    std::vector<int> cells(4);
    for (int i = 0; i < 4; ++i) cells[i] = i;

    PredictiveCountOptions opt;
    opt.n_samples = 5;
    opt.at_mode_only = true;
    const GridCounts gc = predictive_counts(post, cov, quad, grid, cells, pts, opt);
    REQUIRE(gc.cell_ids.size() == 4);
    REQUIRE(gc.lambda.rows() == 5);
    for (int c = 0; c < 4; ++c)
        for (int s = 0; s < 5; ++s) REQUIRE_THAT(gc.lambda(s, c), WithinRel(2.0, 1e-6));

    double total_y = 0.0;
    for (double y : gc.y_obs) total_y += y;
    REQUIRE(total_y == 8.0);

    // intensity scaling is linear
    PredictiveCountOptions half = opt;
    half.intensity_scale = 0.5;
    const GridCounts gh = predictive_counts(post, cov, quad, grid, cells, pts, half);
    for (int c = 0; c < 4; ++c) REQUIRE_THAT(gh.lambda(0, c), WithinRel(gc.lambda(0, c) * 0.5, 1e-12));
}

TEST_CASE("cells without quadrature support are excluded") {
    const GridHeader region = region_header(20, 10, 100.0); // 2 km x 1 km
    CovariateStack cov;
    PointData pts;
    for (int i = 0; i < 4; ++i) {
        pts.x.push_back(100.0 + 200.0 * i);
        pts.y.push_back(500.0);
    }
    // quadrature covers only the left square kilometre
    const Quadrature quad = grid_quadrature(0.0, 0.0, 1000.0, 10, 1e6);

    ModelSpec spec;
    const LatentModel lmod = build_design(spec, pts, quad, cov);
    const Posterior post = fit(lmod, Likelihood::poisson_pp);

    const Chequerboard grid = chequerboard_split(region, 1000.0);
    REQUIRE(grid.n_cells() == 2);
    const GridCounts gc = predictive_counts(post, cov, quad, grid, {0, 1}, pts, {});
    REQUIRE(gc.cell_ids == std::vector<int>{0});
    REQUIRE(gc.excluded_zero_weight == 1);
}

TEST_CASE("sampled counts agree with the analytic mixture moments") {
    const GridHeader region = region_header(20, 20, 100.0);
    CovariateStack cov;
    PointData pts;
    std::mt19937_64 rng(424242);
    std::uniform_real_distribution<double> unif(0.0, 2000.0);
    for (int i = 0; i < 40; ++i) {
        pts.x.push_back(unif(rng));
        pts.y.push_back(unif(rng));
    }
    const Quadrature quad = grid_quadrature(0.0, 0.0, 2000.0, 20, 4e6);

    ModelSpec spec;
    const LatentModel lmod = build_design(spec, pts, quad, cov);
    const Posterior post = fit(lmod, Likelihood::poisson_pp);

    const Chequerboard grid = chequerboard_split(region, 1000.0);
    PredictiveCountOptions opt;
    opt.n_samples = 2000;
    opt.seed = 5;
    const GridCounts gc = predictive_counts(post, cov, quad, grid, {0, 1, 2, 3}, pts, opt);
    const std::vector<ScoreRow> rows = score_counts(gc);
    REQUIRE(rows.size() == 4);

    const double m = static_cast<double>(opt.n_samples);
    for (std::size_t c = 0; c < gc.cell_ids.size(); ++c) {
        std::vector<double> draws;
        for (int v : gc.counts[c]) draws.push_back(static_cast<double>(v));
        const double mc_mean = mean_of(draws);
        const double mc_var = population_variance(draws);

        // recover E and V from the scored quantities: DS = SE/V + log V
        std::vector<double> lam(gc.lambda.col(static_cast<int>(c)).data(),
                                gc.lambda.col(static_cast<int>(c)).data() + opt.n_samples);
        const double e = mean_of(lam);
        const double v = e + population_variance(lam);
        REQUIRE_THAT(rows[c].se, WithinAbs((gc.y_obs[c] - e) * (gc.y_obs[c] - e), 1e-10));

        const double se_mean = std::sqrt(v / m);
        REQUIRE_THAT(mc_mean, WithinAbs(e, 3.0 * se_mean));

        double m4 = 0.0;
        for (double d : draws) m4 += std::pow(d - mc_mean, 4);
        m4 /= m;
        const double se_var = std::sqrt(std::max(m4 - mc_var * mc_var, 0.0) / m);
        REQUIRE_THAT(mc_var, WithinAbs(v, 3.0 * se_var + 1e-9));
    }

    // seeded reproducibility of the count draws
    const GridCounts gc2 = predictive_counts(post, cov, quad, grid, {0, 1, 2, 3}, pts, opt);
    REQUIRE(gc2.counts == gc.counts);
    REQUIRE(gc2.lambda == gc.lambda);
}

TEST_CASE("gaussian mark scoring runs on held-out points") {
    const GridHeader h = region_header(10, 10, 100.0);
    CovariateStack cov;
    PointData train;
    train.x = {150.0, 350.0, 550.0};
    train.y = {150.0, 350.0, 550.0};
    train.marks = {1.0, 2.0, 3.0};
    Quadrature quad; // marks model ignores quadrature rows
    (void)h;

    ModelSpec spec;
    spec.response = Response::log_sizes;
    const LatentModel lmod = build_design(spec, train, quad, cov);
    const Posterior post = fit(lmod, Likelihood::gaussian);

    PointData test;
    test.x = {450.0};
    test.y = {450.0};
    test.marks = {2.5};
    const std::vector<ScoreRow> rows = score_gaussian_marks(post, cov, test, 200, 11);
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].id == 0);
    REQUIRE(std::isfinite(rows[0].se));
    REQUIRE(std::isfinite(rows[0].ds));
    REQUIRE(std::isfinite(rows[0].ls));
    REQUIRE(std::isnan(rows[0].crps));

    // the intercept-only predictive mean is close to the training mean
    REQUIRE_THAT(std::sqrt(rows[0].se) + 2.0, WithinAbs(2.5, 0.25));
}
