// Acceptance gate: ten pinned criteria covering flow routing mass balance,
// steepness recovery, point-process inference, proper scoring rules and
// pipeline determinism. Prints one PASS/FAIL line per criterion and returns
// the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <incise/assess.hpp>
#include <incise/flow.hpp>
#include <incise/model.hpp>
#include <incise/pipeline.hpp>
#include <incise/simulate.hpp>
#include <incise/steepness.hpp>

using namespace incise;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

int failures = 0;

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

void report(int idx, bool ok, const std::string& detail) {
    std::printf("[%2d] %s %s\n", idx, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// shared generator for criteria 4 and 6: a 10 km x 10 km window with two
// smooth orthogonal covariates and intensity exp(b0 + b1 x1 + b2 x2) per km^2
struct PoissonScene {
    GridHeader h = square_header(100, 100.0);
    Raster<double> x1, x2;
    CovariateStack cov;
    Quadrature quad;
    ModelSpec spec;
    double b0 = std::log(50.0), b1 = 1.0, b2 = -0.5;
    double lam_max = 0.0;

    PoissonScene() : x1(h, 0.0), x2(h, 0.0) {
        const double w = h.ncols * h.cell_size;
        for (int r = 0; r < h.nrows; ++r)
            for (int c = 0; c < h.ncols; ++c) {
                const double px = h.cell_center_x(c), py = h.cell_center_y(r);
                x1.at(c, r) = std::sin(2.0 * M_PI * px / w) * std::cos(2.0 * M_PI * py / w);
                x2.at(c, r) = std::cos(4.0 * M_PI * px / w) * std::sin(2.0 * M_PI * py / w);
            }
        cov.add("x1", x1);
        cov.add("x2", x2);
        for (int r = 0; r < h.nrows; ++r)
            for (int c = 0; c < h.ncols; ++c) {
                quad.x.push_back(h.cell_center_x(c));
                quad.y.push_back(h.cell_center_y(r));
                quad.w.push_back(h.cell_size * h.cell_size);
            }
        spec.response = Response::centroids;
        spec.terms = {{"x1", Transform::identity, EffectKind::linear, 25},
                      {"x2", Transform::identity, EffectKind::linear, 25}};
        for (std::size_t i = 0; i < x1.size(); ++i)
            lam_max = std::max(lam_max, intensity(x1[i], x2[i]));
    }

    double intensity(double v1, double v2) const {
        return std::exp(b0 + b1 * v1 + b2 * v2);
    }

    PointData draw(std::uint64_t seed) const {
        return thin_poisson(
            h, [&](double x, double y) { return intensity(x1.sample_at(x, y), x2.sample_at(x, y)); },
            lam_max, seed);
    }
};

const LatentBlock& block_labelled(const Posterior& post, const std::string& label) {
    for (const LatentBlock& b : post.blocks)
        if (b.label == label) return b;
    throw DataError("no block labelled " + label);
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(INCISE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return (status != -1 && WIFEXITED(status)) ? WEXITSTATUS(status) : -2;
}

// --------------------------------------------------------------------------

void criterion_1_mass_conservation() {
    const auto t0 = clock_type::now();
    struct Case {
        int n;
        double cell;
        std::uint64_t seed;
        bool hole;
    };
    const Case cases[] = {{64, 100.0, 3, false}, {128, 50.0, 5, true}, {512, 100.0, 9, true}};
    bool ok = true;
    long checked = 0;
    for (const Case& c : cases) {
        const Raster<double> dem = random_surface(c.n, c.cell, c.seed, c.hole);
        const FlowField ff = d8_flow(fill_depressions(dem));
        const Raster<double> acc = accumulate(ff);
        double outlet_sum = 0.0;
        for (int i = 0; i < static_cast<int>(acc.size()); ++i)
            if (!acc.is_nodata(static_cast<std::size_t>(i)) && ff.is_outlet(i)) outlet_sum += acc[static_cast<std::size_t>(i)];
        const double expect = static_cast<double>(ff.n_valid) * c.cell * c.cell;
        if (outlet_sum != expect) ok = false;
        ++checked;
    }
    const double dt = seconds_since(t0);
    ok = ok && dt < 5.0;
    report(1, ok, "flow mass conservation exact on " + std::to_string(checked) +
                      " grids incl 512x512, " + fmt(dt, 3) + " s (< 5 s)");
}

void criterion_2_ksn_recovery() {
    const auto t0 = clock_type::now();
    const int n = 256;
    const double cell = 100.0;

    // uniform steepness: every channel node should report ksn = 100 m
    const Raster<double> dem = steady_state_dem(n, cell, 0.5, [](double, double) { return 100.0; }, 1);
    const FlowField ff = d8_flow(fill_depressions(dem));
    const Raster<double> acc = accumulate(ff);
    ChannelNetwork net = extract_channels(ff, dem, acc, 50.0);
    chi_transform(net, 0.5);
    ksn_estimate(net, 9);
    long good = 0;
    for (const ChannelNode& nd : net.nodes)
        if (std::isfinite(nd.ksn) && std::abs(nd.ksn / 100.0 - 1.0) <= 0.02) ++good;
    const double frac = net.nodes.empty() ? 0.0 : static_cast<double>(good) / static_cast<double>(net.nodes.size());

    // concavity mismatch: the steepness ranking should survive theta +/- 0.1
    const GridHeader h = square_header(n, cell);
    const Raster<double> fld = smooth_field(h, 33);
    const Raster<double> dem2 = steady_state_dem(
        n, cell, 0.5, [&](double x, double y) { return 100.0 * std::exp(1.5 * fld.sample_at(x, y)); }, 1);
    const FlowField ff2 = d8_flow(fill_depressions(dem2));
    const Raster<double> acc2 = accumulate(ff2);
    const std::vector<SweepRow> rows = concavity_sweep(ff2, dem2, acc2, {0.4, 0.5, 0.6}, {50.0}, 9);
    double rho_lo = 0.0, rho_hi = 0.0;
    for (const SweepRow& r : rows) {
        if (r.theta_a == 0.4 && r.theta_b == 0.5) rho_lo = r.rho;
        if (r.theta_a == 0.5 && r.theta_b == 0.6) rho_hi = r.rho;
    }
    const double dt = seconds_since(t0);
    const bool ok = frac >= 0.95 && rho_lo > 0.9 && rho_hi > 0.9 && dt < 30.0;
    report(2, ok, "ksn=100 within 2% at " + fmt(100.0 * frac, 4) + "% of " +
                      std::to_string(net.nodes.size()) + " nodes (>= 95%), rank rho " +
                      fmt(rho_lo, 4) + "/" + fmt(rho_hi, 4) + " (> 0.9), " + fmt(dt, 3) +
                      " s (< 30 s)");
}

void criterion_3_homogeneous_poisson() {
    const auto t0 = clock_type::now();
    PointData pts;
    std::mt19937_64 rng = make_rng(7);
    std::uniform_real_distribution<double> ux(0.0, 5000.0), uy(0.0, 1000.0);
    for (int i = 0; i < 10; ++i) {
        pts.x.push_back(ux(rng));
        pts.y.push_back(uy(rng));
    }
    Quadrature quad;  // 50 nodes x 0.1 km^2 = 5 km^2 exactly
    for (int i = 0; i < 50; ++i) {
        quad.x.push_back(50.0 + 100.0 * i);
        quad.y.push_back(500.0);
        quad.w.push_back(1e5);
    }
    ModelSpec spec;
    spec.response = Response::centroids;
    CovariateStack cov;
    const Posterior post = fit(build_design(spec, pts, quad, cov), Likelihood::poisson_pp);
    const double lam = std::exp(post.mode[0]);
    const double rel = std::abs(lam / 2.0 - 1.0);
    const double dt = seconds_since(t0);
    const bool ok = rel <= 1e-8 && dt < 1.0;
    report(3, ok, "homogeneous rate " + fmt(lam, 12) + " /km^2 vs 2, rel err " + fmt(rel, 3) +
                      " (<= 1e-8), " + fmt(dt, 3) + " s (< 1 s)");
}

void criterion_4_coefficient_recovery(const PoissonScene& scene) {
    const auto t0 = clock_type::now();
    const int n_rep = 20;
    int covered = 0;
    double mae1 = 0.0, mae2 = 0.0;
    for (int k = 0; k < n_rep; ++k) {
        const PointData pts = scene.draw(mix_seed(777, static_cast<std::uint64_t>(k)));
        const Posterior post =
            fit(build_design(scene.spec, pts, scene.quad, scene.cov), Likelihood::poisson_pp);
        const double truth[3] = {scene.b0, scene.b1, scene.b2};
        const char* labels[3] = {"intercept", "x1", "x2"};
        bool inside = true;
        double est[3];
        for (int j = 0; j < 3; ++j) {
            const int off = block_labelled(post, labels[j]).offset;
            est[j] = post.mode[off];
            const double sd = std::sqrt(post.cov(off, off));
            if (std::abs(est[j] - truth[j]) > 3.0 * sd) inside = false;
        }
        if (inside) ++covered;
        mae1 += std::abs(est[1] - scene.b1) / n_rep;
        mae2 += std::abs(est[2] - scene.b2) / n_rep;
    }
    const double dt = seconds_since(t0);
    const bool ok = covered >= 19 && mae1 < 0.1 && mae2 < 0.1 && dt < 300.0;
    report(4, ok, "coefficients within 3 sd in " + std::to_string(covered) + "/20 (>= 19), MAE " +
                      fmt(mae1, 3) + "/" + fmt(mae2, 3) + " (< 0.1), " + fmt(dt, 3) +
                      " s (< 300 s)");
}

void criterion_5_score_closed_forms() {
    const CountScore pois2 = score_count_mixture({2.0}, 2.0);
    const double e_ls_pois = std::abs(pois2.ls - (2.0 - std::log(2.0)));
    const GaussScore norm0 = score_gaussian_mixture({0.0}, 1.0, 0.0);
    const double e_ls_norm = std::abs(norm0.ls - 0.5 * std::log(2.0 * M_PI));

    // brute-force lattice CRPS for Poisson(1) at y = 0
    double brute = 0.0, cdf = 0.0, pmf = std::exp(-1.0);
    for (int k = 0; k <= 60; ++k) {
        cdf += pmf;
        const double diff = cdf - 1.0;  // indicator k >= 0 always 1
        brute += diff * diff;
        pmf *= 1.0 / (k + 1);
    }
    const double e_crps = std::abs(score_count_mixture({1.0}, 0.0).crps - brute);

    const GaussScore mix = score_gaussian_mixture({-1.0, 1.0}, 1.0, 0.0);
    const double e_ds = std::abs(mix.ds - std::log(2.0));

    const bool ok = e_ls_pois <= 1e-12 && e_ls_norm <= 1e-12 && e_crps <= 1e-9 && e_ds <= 1e-12;
    report(5, ok, "closed-form errors LS " + fmt(e_ls_pois, 3) + "/" + fmt(e_ls_norm, 3) +
                      " (<= 1e-12), CRPS " + fmt(e_crps, 3) + " (<= 1e-9), DS " + fmt(e_ds, 3) +
                      " (<= 1e-12)");
}

void criterion_6_propriety(const PoissonScene& scene) {
    const auto t0 = clock_type::now();
    CovariateStack shuffled;
    shuffled.add("x1", shuffle_raster(scene.x1, 404));
    shuffled.add("x2", shuffle_raster(scene.x2, 505));
    const Chequerboard grid = chequerboard_split(scene.h, 1000.0);
    std::vector<int> cells(static_cast<std::size_t>(grid.n_cells()));
    std::iota(cells.begin(), cells.end(), 0);

    int wins_ls = 0, wins_crps = 0;
    const int n_rep = 20;
    for (int k = 0; k < n_rep; ++k) {
        const PointData pts = scene.draw(mix_seed(888, static_cast<std::uint64_t>(k)));
        const ThinningSplit ts = thinning_split(pts, mix_seed(999, static_cast<std::uint64_t>(k)));
        const PointData train = subset_points(pts, ts.train);
        const PointData test = subset_points(pts, ts.test);
        PredictiveCountOptions opt;
        opt.n_samples = 200;
        opt.seed = mix_seed(1234, static_cast<std::uint64_t>(k));
        opt.intensity_scale = static_cast<double>(ts.test.size()) / static_cast<double>(ts.train.size());

        ScoreSummary sm[2];
        const CovariateStack* stacks[2] = {&scene.cov, &shuffled};
        for (int m = 0; m < 2; ++m) {
            const Posterior post =
                fit(build_design(scene.spec, train, scene.quad, *stacks[m]), Likelihood::poisson_pp);
            const GridCounts gc = predictive_counts(post, *stacks[m], scene.quad, grid, cells, test, opt);
            sm[m] = summarize_scores(score_counts(gc));
        }
        if (sm[0].ls < sm[1].ls) ++wins_ls;
        if (sm[0].crps < sm[1].crps) ++wins_crps;
    }
    const double dt = seconds_since(t0);
    const bool ok = wins_ls >= 18 && wins_crps >= 18;
    report(6, ok, "true model wins LS " + std::to_string(wins_ls) + "/20, CRPS " +
                      std::to_string(wins_crps) + "/20 (>= 18), " + fmt(dt, 3) + " s");
}

void criterion_7_rw2_structure() {
    bool ok = true;
    std::string detail;
    for (int n : {5, 10, 25}) {
        const Eigen::MatrixXd q = rw2_structure(n);
        Eigen::VectorXd ones = Eigen::VectorXd::Ones(n), ramp(n), sq(n);
        for (int i = 0; i < n; ++i) {
            ramp[i] = i + 1.0;
            sq[i] = (i + 1.0) * (i + 1.0);
        }
        const double e1 = (q * ones).lpNorm<Eigen::Infinity>();
        const double e2 = (q * ramp).lpNorm<Eigen::Infinity>();
        const double energy = sq.dot(q * sq);
        if (e1 != 0.0 || e2 != 0.0 || energy != 4.0 * (n - 2)) ok = false;
        detail += (detail.empty() ? "n=" : ", n=") + std::to_string(n) + " energy " + fmt(energy, 6);
    }
    report(7, ok, "rw2 null space and quadratic energy exact: " + detail);
}

void criterion_8_split_bookkeeping() {
    PointData pts;
    std::mt19937_64 rng = make_rng(12);
    std::uniform_real_distribution<double> u(0.0, 10000.0);
    for (int i = 0; i < 20471; ++i) {
        pts.x.push_back(u(rng));
        pts.y.push_back(u(rng));
    }
    const ThinningSplit a = thinning_split(pts, 42);
    const ThinningSplit b = thinning_split(pts, 42);
    std::vector<std::size_t> all(a.train);
    all.insert(all.end(), a.test.begin(), a.test.end());
    std::sort(all.begin(), all.end());
    bool partition = all.size() == pts.size();
    for (std::size_t i = 0; i < all.size() && partition; ++i) partition = all[i] == i;
    const bool repro = a.train == b.train && a.test == b.test;

    const Chequerboard grid = chequerboard_split(square_header(100, 100.0), 3000.0);
    bool complement = grid.fold_cells(FoldSide::white, true) == grid.fold_cells(FoldSide::black, false);
    for (int j = 0; j < grid.nj && complement; ++j)
        for (int i = 0; i < grid.ni; ++i)
            if (grid.is_train(i, j, FoldSide::white) == grid.is_train(i, j, FoldSide::black))
                complement = false;

    const bool ok = a.train.size() == 10236 && a.test.size() == 10235 && partition && repro && complement;
    report(8, ok, "thinning 20471 -> " + std::to_string(a.train.size()) + "/" +
                      std::to_string(a.test.size()) + " (10236/10235), partition and seed repro " +
                      (partition && repro ? "hold" : "FAIL") + ", chequerboard folds complementary");
}

void criterion_9_pipeline_determinism() {
    const auto t0 = clock_type::now();
    const fs::path dir = fs::temp_directory_path() / "incise_acceptance_cv";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto cfg_file = [&](const std::string& name, const std::string& text) {
        std::ofstream out(dir / name);
        out << text;
        return (dir / name).string();
    };
    const std::string base = "out=" + dir.string() + "\n";
    const std::string sim = cfg_file("sim.cfg", base + "sim_size=64\nsim_seed=7\nsim_rate=6\n");
    std::string run = base;
    for (const char* f : {"dem", "pga", "landcover", "geology"})
        run += std::string(f) + "=" + (dir / (std::string(f) + ".asc")).string() + "\n";
    run += "points=" + (dir / "points.csv").string() + "\n";
    run += "threshold_pixels=50\npresets=fit1a,fit4a,fit1b,fit4b\ngrid_size=2000\nn_samples=60\n";
    run += "split_seed=11\nsample_seed=3\n";
    const std::string main_cfg = cfg_file("run.cfg", run);

    bool ok = run_cli("simulate --config " + sim) == 0;
    ok = ok && run_cli("terrain --config " + main_cfg) == 0;
    ok = ok && run_cli("cv --config " + main_cfg) == 0;
    const std::string scores1 = slurp(dir / "scores.csv");
    const std::string summary1 = slurp(dir / "summary.csv");
    const std::string ecdf1 = slurp(dir / "ecdf_thinA_fit4a_vs_fit1a_ls.csv");
    ok = ok && !scores1.empty() && !summary1.empty() && !ecdf1.empty();
    ok = ok && run_cli("cv --config " + main_cfg) == 0;
    ok = ok && slurp(dir / "scores.csv") == scores1 && slurp(dir / "summary.csv") == summary1 &&
         slurp(dir / "ecdf_thinA_fit4a_vs_fit1a_ls.csv") == ecdf1;
    report(9, ok, std::string("repeated `cv` runs byte-identical ") + (ok ? "yes" : "no") + ", " +
                      fmt(seconds_since(t0), 3) + " s");
}

void criterion_10_degenerate_cv_map(const PoissonScene& scene) {
    const PointData pts = scene.draw(mix_seed(777, 0));
    const Posterior post =
        fit(build_design(scene.spec, pts, scene.quad, scene.cov), Likelihood::poisson_pp);
    PredictOptions opt;
    opt.n_samples = 25;
    opt.at_mode_only = true;
    const Prediction pred = predict_raster(post, scene.cov, scene.h, opt);
    long cells = 0, zero = 0;
    for (std::size_t i = 0; i < pred.cv.size(); ++i) {
        if (pred.cv.is_nodata(i)) continue;
        ++cells;
        if (pred.cv[i] == 0.0) ++zero;
    }
    const bool ok = cells > 0 && zero == cells;
    report(10, ok, "mode-collapsed coefficient of variation exactly 0 at " + std::to_string(zero) +
                       "/" + std::to_string(cells) + " cells");
}

} // namespace

int main() {
    const auto t0 = clock_type::now();
    const PoissonScene scene;
    criterion_1_mass_conservation();
    criterion_2_ksn_recovery();
    criterion_3_homogeneous_poisson();
    criterion_4_coefficient_recovery(scene);
    criterion_5_score_closed_forms();
    criterion_6_propriety(scene);
    criterion_7_rw2_structure();
    criterion_8_split_bookkeeping();
    criterion_9_pipeline_determinism();
    criterion_10_degenerate_cv_map(scene);
    std::printf("%d/10 criteria passed in %.1f s\n", 10 - failures, seconds_since(t0));
    return failures;
}
