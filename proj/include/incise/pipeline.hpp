#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "assess.hpp"
#include "channel.hpp"
#include "config.hpp"
#include "csv.hpp"
#include "errors.hpp"
#include "flow.hpp"
#include "mesh.hpp"
#include "model.hpp"
#include "raster.hpp"
#include "simulate.hpp"
#include "steepness.hpp"
#include "util.hpp"

// Pipeline stages behind the CLI subcommands. Each stage reads its inputs
// from a flat config, writes its products into the configured output
// directory, and reports progress and data warnings on the given stream.

namespace incise {

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

} // namespace detail

inline Raster<int> valid_mask(const Raster<double>& dem) {
    GridHeader h = dem.header();
    h.nodata = -1.0;
    Raster<int> mask(h, 0);
    for (std::size_t i = 0; i < dem.size(); ++i)
        if (!dem.is_nodata(i)) mask[i] = 1;
    return mask;
}

// ---------------------------------------------------------------------------
// terrain: fill -> route -> accumulate -> channels -> chi/ksn -> rasters

inline void cmd_terrain(const Config& cfg, std::ostream& log) {
    const Raster<double> dem = read_ascii_grid<double>(cfg.file("dem"));
    const double threshold = cfg.num("threshold_pixels", 200.0);
    const double theta = cfg.num("theta", 0.5);
    const int window = static_cast<int>(cfg.integer("window_nodes", 9));
    const std::string out = cfg.out_dir();

    const Raster<double> filled = fill_depressions(dem);
    const FlowField ff = d8_flow(filled);
    const Raster<double> acc = accumulate(ff);
    ChannelNetwork net = extract_channels(ff, dem, acc, threshold);
    chi_transform(net, theta);
    ksn_estimate(net, window);

    const Raster<double> fd = fd2ch(ff, net);
    long negative_relief = 0;
    const Raster<double> rf = rf2ch(ff, net, dem, &negative_relief);
    if (negative_relief > 0)
        log << "terrain: " << negative_relief << " cells sit below their channel node\n";

    Raster<double> ksn = ksn_raster(ff, net);
    if (cfg.has("glacial_mask")) {
        const Raster<double> glacial = read_ascii_grid<double>(cfg.file("glacial_mask"));
        if (!glacial.header().aligned_with(dem.header()))
            throw DataError("glacial mask grid does not align with the DEM");
        Raster<int> region(valid_mask(dem));
        long masked = 0;
        for (std::size_t i = 0; i < ksn.size(); ++i) {
            const bool on = !glacial.is_nodata(i) && glacial[i] > 0.0;
            region[i] = on ? 1 : 0;
            if (on && !ksn.is_nodata(i)) {
                ksn[i] = ksn.header().nodata;
                ++masked;
            }
        }
        ksn = masked_nearest_fill(ksn, &region);
        log << "terrain: refilled " << masked << " steepness cells under the glacial mask\n";
    }

    write_ascii_grid(filled, detail::join_path(out, "filled.asc"));
    write_ascii_grid(acc, detail::join_path(out, "accumulation.asc"));
    write_ascii_grid(fd, detail::join_path(out, "fd2ch.asc"));
    write_ascii_grid(rf, detail::join_path(out, "rf2ch.asc"));
    write_ascii_grid(ksn, detail::join_path(out, "ksn.asc"));
    write_channels_csv(net, detail::join_path(out, "channels.csv"));
    log << "terrain: " << net.nodes.size() << " channel nodes in " << net.segments.size()
        << " segments, " << net.outlet_count << " outlets\n";
}

// ---------------------------------------------------------------------------
// mesh: triangulate the valid DEM region and report quadrature coverage

inline void cmd_mesh(const Config& cfg, std::ostream& log) {
    const Raster<double> dem = read_ascii_grid<double>(cfg.file("dem"));
    const double tri_area = cfg.num("tri_area", 1e5);
    const std::string out = cfg.out_dir();
    const TriMesh mesh = build_mesh(valid_mask(dem), tri_area);
    write_mesh_csv(mesh, detail::join_path(out, "mesh_vertices.csv"),
                   detail::join_path(out, "mesh_triangles.csv"));
    const Quadrature q = quadrature_of(mesh);
    double region_area = 0.0;
    for (std::size_t i = 0; i < dem.size(); ++i)
        if (!dem.is_nodata(i)) region_area += dem.header().cell_size * dem.header().cell_size;
    log << "mesh: " << mesh.tris.size() << " triangles, quadrature "
        << format_double(q.total_weight() * 1e-6) << " km^2 over a region of "
        << format_double(region_area * 1e-6) << " km^2\n";
}

// ---------------------------------------------------------------------------
// shared model inputs

struct ModelInputs {
    Raster<double> dem;
    CovariateStack cov;
    PointData points;
    Quadrature quad;
};

inline ModelInputs load_model_inputs(const Config& cfg, std::ostream& log) {
    ModelInputs mi;
    mi.dem = read_ascii_grid<double>(cfg.file("dem"));
    mi.cov.add("dem", mi.dem);
    for (const char* key : {"pga", "landcover", "geology"})
        mi.cov.add(key, read_ascii_grid<double>(cfg.file(key)));
    const std::string out = cfg.out_dir();
    for (const char* name : {"ksn", "fd2ch", "rf2ch"}) {
        const std::string path = detail::join_path(out, std::string(name) + ".asc");
        if (!std::filesystem::exists(path))
            throw ConfigError(std::string("terrain output missing: ") + path + " (run `terrain` first)");
        mi.cov.add(name, read_ascii_grid<double>(path));
    }

    const PointSet ps = read_points_csv(cfg.file("points"));
    mi.points.x = ps.x;
    mi.points.y = ps.y;
    if (ps.has_values) mi.points.marks = ps.value;
    if (mi.points.size() == 0) throw DataError("points file has no rows");

    const TriMesh mesh = build_mesh(valid_mask(mi.dem), cfg.num("tri_area", 1e5));
    mi.quad = quadrature_of(mesh);
    log << "inputs: " << mi.points.size() << " points, " << mi.quad.x.size()
        << " quadrature nodes covering " << format_double(mi.quad.total_weight() * 1e-6) << " km^2\n";
    return mi;
}

inline void log_design_warnings(const std::string& name, const LatentModel& lm, std::ostream& log) {
    if (lm.dropped_points > 0)
        log << name << ": dropped " << lm.dropped_points << " points on nodata covariates\n";
    if (lm.dropped_weight > 0.0)
        log << name << ": dropped " << format_double(lm.dropped_weight * 1e-6)
            << " km^2 of quadrature on nodata covariates\n";
}

// ---------------------------------------------------------------------------
// fit: posterior summary plus mean / CV / per-term surfaces per preset

inline void cmd_fit(const Config& cfg, std::ostream& log) {
    const std::vector<std::string> presets = cfg.list("presets");
    if (presets.empty()) throw ConfigError("no presets listed; set presets=fit1a,...");
    ModelInputs mi = load_model_inputs(cfg, log);
    const int map_samples = static_cast<int>(cfg.integer("map_samples", 100));
    const std::uint64_t sample_seed = cfg.seed("sample_seed", 1);
    const std::string out = cfg.out_dir();

    for (const std::string& name : presets) {
        const ModelSpec spec = preset_model(name);
        const Likelihood lik =
            spec.response == Response::centroids ? Likelihood::poisson_pp : Likelihood::gaussian;
        const LatentModel lm = build_design(spec, mi.points, mi.quad, mi.cov);
        log_design_warnings(name, lm, log);
        const Posterior post = fit(lm, lik);
        log << name << ": log evidence " << format_double(post.log_marginal) << "\n";
        write_posterior_summary_csv(detail::join_path(out, name + "_summary.csv"), post);

        PredictOptions po;
        po.n_samples = map_samples;
        po.seed = sample_seed;
        const Prediction pred = predict_raster(post, mi.cov, mi.dem.header(), po);
        write_ascii_grid(pred.mean, detail::join_path(out, name + "_mean.asc"));
        write_ascii_grid(pred.cv, detail::join_path(out, name + "_cv.asc"));
        for (const auto& [label, surface] : pred.term_effect)
            write_ascii_grid(surface, detail::join_path(out, name + "_effect_" + label + ".asc"));
        for (const auto& [term, n] : pred.unseen_levels)
            log << name << ": " << n << " cells with unseen " << term << " levels\n";
        if (pred.nodata_cells > 0)
            log << name << ": " << pred.nodata_cells << " cells without covariates\n";
    }
}

// ---------------------------------------------------------------------------
// cv: four folds x presets -> score tables, summaries, differences, ECDFs

struct FoldDef {
    std::string name;
    PointData train, test;
    std::vector<std::size_t> test_ids;  // global point indices, for mark rows
    Quadrature train_quad;
    std::vector<int> eval_cells;
    double intensity_scale = 1.0;
};

inline std::vector<FoldDef> make_folds(const PointData& pts, const Quadrature& quad,
                                       const Chequerboard& grid, std::uint64_t split_seed) {
    std::vector<FoldDef> folds;
    const ThinningSplit ts = thinning_split(pts, split_seed);
    std::vector<int> all_cells(static_cast<std::size_t>(grid.n_cells()));
    for (int c = 0; c < grid.n_cells(); ++c) all_cells[static_cast<std::size_t>(c)] = c;

    // thinning folds train on one random half over the full window; the
    // held-out half carries test/train of the total intensity
    const std::pair<const std::vector<std::size_t>*, const std::vector<std::size_t>*> thin[2] = {
        {&ts.train, &ts.test}, {&ts.test, &ts.train}};
    const char* thin_names[2] = {"thinA", "thinB"};
    for (int k = 0; k < 2; ++k) {
        FoldDef f;
        f.name = thin_names[k];
        f.train = subset_points(pts, *thin[k].first);
        f.test = subset_points(pts, *thin[k].second);
        f.test_ids = *thin[k].second;
        f.train_quad = quad;
        f.eval_cells = all_cells;
        f.intensity_scale =
            static_cast<double>(thin[k].second->size()) / static_cast<double>(thin[k].first->size());
        folds.push_back(std::move(f));
    }

    // chequerboard folds observe the process on train-parity cells only
    const FoldSide sides[2] = {FoldSide::white, FoldSide::black};
    const char* side_names[2] = {"gridW", "gridB"};
    for (int k = 0; k < 2; ++k) {
        FoldDef f;
        f.name = side_names[k];
        for (std::size_t p = 0; p < pts.size(); ++p) {
            const int id = grid.cell_of(pts.x[p], pts.y[p]);
            const int i = id % grid.ni, j = id / grid.ni;
            if (grid.is_train(i, j, sides[k])) {
                f.train.x.push_back(pts.x[p]);
                f.train.y.push_back(pts.y[p]);
                if (pts.has_marks()) f.train.marks.push_back(pts.marks[p]);
            } else {
                f.test.x.push_back(pts.x[p]);
                f.test.y.push_back(pts.y[p]);
                if (pts.has_marks()) f.test.marks.push_back(pts.marks[p]);
                f.test_ids.push_back(p);
            }
        }
        for (std::size_t q = 0; q < quad.x.size(); ++q) {
            const int id = grid.cell_of(quad.x[q], quad.y[q]);
            const int i = id % grid.ni, j = id / grid.ni;
            if (!grid.is_train(i, j, sides[k])) continue;
            f.train_quad.x.push_back(quad.x[q]);
            f.train_quad.y.push_back(quad.y[q]);
            f.train_quad.w.push_back(quad.w[q]);
        }
        f.eval_cells = grid.fold_cells(sides[k], false);
        folds.push_back(std::move(f));
    }
    return folds;
}

namespace detail {

inline Raster<double> delta_raster(const Chequerboard& grid, const std::vector<ScoreRow>& rows,
                                   double ScoreRow::*score) {
    GridHeader h;
    h.ncols = grid.ni;
    h.nrows = grid.nj;
    h.x_origin = grid.x0;
    h.y_origin = grid.y0;
    h.cell_size = grid.cell;
    h.nodata = -9999.0;
    Raster<double> out(h, h.nodata);
    for (const ScoreRow& r : rows) {
        const int i = r.id % grid.ni, j = r.id / grid.ni;
        out.at(i, grid.nj - 1 - j) = r.*score;  // raster rows run north to south
    }
    return out;
}

// models drop test points whose own covariates are nodata, so two score
// tables may cover slightly different points; differences use the overlap
inline std::pair<std::vector<ScoreRow>, std::vector<ScoreRow>> common_rows(
    const std::vector<ScoreRow>& a, const std::vector<ScoreRow>& b) {
    std::set<int> in_b;
    for (const ScoreRow& r : b) in_b.insert(r.id);
    std::pair<std::vector<ScoreRow>, std::vector<ScoreRow>> out;
    std::set<int> keep;
    for (const ScoreRow& r : a)
        if (in_b.count(r.id)) {
            out.first.push_back(r);
            keep.insert(r.id);
        }
    for (const ScoreRow& r : b)
        if (keep.count(r.id)) out.second.push_back(r);
    return out;
}

inline void write_ecdf_csv(const std::string& path, const std::vector<ScoreRow>& rows,
                           double ScoreRow::*score) {
    std::vector<double> deltas;
    for (const ScoreRow& r : rows) deltas.push_back(r.*score);
    const Ecdf f = make_ecdf(deltas);
    CsvWriter csv(path, "delta,F");
    for (double d : f.sorted) csv.row({format_double(d), format_double(f(d))});
}

} // namespace detail

inline void cmd_cv(const Config& cfg, std::ostream& log) {
    const std::vector<std::string> presets = cfg.list("presets");
    if (presets.empty()) throw ConfigError("no presets listed; set presets=fit1a,...");
    ModelInputs mi = load_model_inputs(cfg, log);
    const double grid_size = cfg.num("grid_size", 3000.0);
    const int n_samples = static_cast<int>(cfg.integer("n_samples", 1000));
    const std::uint64_t split_seed = cfg.seed("split_seed", 1);
    const std::uint64_t sample_seed = cfg.seed("sample_seed", 2);
    const std::string out = cfg.out_dir();

    const Chequerboard grid = chequerboard_split(mi.dem.header(), grid_size);
    if (grid.single_cell) log << "cv: warning: grid cell is larger than the region\n";
    const std::vector<FoldDef> folds = make_folds(mi.points, mi.quad, grid, split_seed);

    CsvWriter scores(detail::join_path(out, "scores.csv"), "fold,model,cell_id,y_obs,se,ds,ls,crps");
    CsvWriter summary(detail::join_path(out, "summary.csv"), "fold,model,rmse,ds,ls,crps");
    std::map<std::pair<std::string, std::string>, std::vector<ScoreRow>> tables;

    for (std::size_t fi = 0; fi < folds.size(); ++fi) {
        const FoldDef& fold = folds[fi];
        for (const std::string& name : presets) {
            const ModelSpec spec = preset_model(name);
            const bool counts = spec.response == Response::centroids;
            const LatentModel lm = build_design(spec, fold.train, fold.train_quad, mi.cov);
            log_design_warnings(fold.name + "/" + name, lm, log);
            const Posterior post = fit(lm, counts ? Likelihood::poisson_pp : Likelihood::gaussian);

            std::vector<ScoreRow> rows;
            if (counts) {
                PredictiveCountOptions opt;
                opt.n_samples = n_samples;
                opt.seed = mix_seed(sample_seed, fi);
                opt.intensity_scale = fold.intensity_scale;
                const GridCounts gc =
                    predictive_counts(post, mi.cov, mi.quad, grid, fold.eval_cells, fold.test, opt);
                if (gc.excluded_zero_weight > 0)
                    log << fold.name << "/" << name << ": " << gc.excluded_zero_weight
                        << " cells without quadrature excluded\n";
                rows = score_counts(gc);
            } else {
                rows = score_gaussian_marks(post, mi.cov, fold.test, n_samples, mix_seed(sample_seed, fi));
                for (ScoreRow& r : rows) r.id = static_cast<int>(fold.test_ids[static_cast<std::size_t>(r.id)]);
            }

            for (const ScoreRow& r : rows)
                scores.row({fold.name, name, std::to_string(r.id), format_double(r.y_obs),
                            format_double(r.se), format_double(r.ds), format_double(r.ls),
                            format_double(r.crps)});
            const ScoreSummary sm = summarize_scores(rows);
            summary.row({fold.name, name, format_double(sm.rmse), format_double(sm.ds),
                         format_double(sm.ls), format_double(sm.crps)});
            tables[{fold.name, name}] = std::move(rows);
        }
    }

    // differences against the first preset of the same response kind
    std::string count_ref, mark_ref;
    for (const std::string& name : presets) {
        const bool counts = preset_model(name).response == Response::centroids;
        std::string& ref = counts ? count_ref : mark_ref;
        if (ref.empty()) ref = name;
    }
    const std::pair<const char*, double ScoreRow::*> score_fields[4] = {
        {"se", &ScoreRow::se}, {"ds", &ScoreRow::ds}, {"ls", &ScoreRow::ls}, {"crps", &ScoreRow::crps}};
    for (const FoldDef& fold : folds) {
        for (const std::string& name : presets) {
            const bool counts = preset_model(name).response == Response::centroids;
            const std::string& ref = counts ? count_ref : mark_ref;
            if (name == ref) continue;
            const auto [base, other] =
                detail::common_rows(tables.at({fold.name, ref}), tables.at({fold.name, name}));
            const std::size_t omitted = tables.at({fold.name, ref}).size() - base.size() +
                                        tables.at({fold.name, name}).size() - other.size();
            if (omitted > 0)
                log << fold.name << "/" << name << " vs " << ref << ": " << omitted
                    << " rows scored by only one model omitted from differences\n";
            if (base.empty()) continue;
            const std::vector<ScoreRow> diff = score_difference(base, other);
            const int n_scores = counts ? 4 : 3;  // marks carry no CRPS
            for (int k = 0; k < n_scores; ++k) {
                const std::string tag =
                    fold.name + "_" + name + "_vs_" + ref + "_" + score_fields[k].first;
                detail::write_ecdf_csv(detail::join_path(out, "ecdf_" + tag + ".csv"), diff,
                                       score_fields[k].second);
                if (counts)
                    write_ascii_grid(detail::delta_raster(grid, diff, score_fields[k].second),
                                     detail::join_path(out, "delta_" + tag + ".asc"));
            }
        }
    }
    log << "cv: " << folds.size() << " folds x " << presets.size() << " models scored\n";
}

// ---------------------------------------------------------------------------
// sweep: concavity sensitivity table

inline void cmd_sweep(const Config& cfg, std::ostream& log) {
    const Raster<double> dem = read_ascii_grid<double>(cfg.file("dem"));
    std::vector<double> thetas = cfg.num_list("thetas");
    if (thetas.empty()) thetas = {0.4, 0.5, 0.6};
    std::vector<double> thresholds = cfg.num_list("thresholds");
    if (thresholds.empty()) thresholds = {cfg.num("threshold_pixels", 200.0)};
    const int window = static_cast<int>(cfg.integer("window_nodes", 9));
    const std::string out = cfg.out_dir();

    const Raster<double> filled = fill_depressions(dem);
    const FlowField ff = d8_flow(filled);
    const Raster<double> acc = accumulate(ff);
    const std::vector<SweepRow> rows = concavity_sweep(ff, dem, acc, thetas, thresholds, window);

    CsvWriter csv(detail::join_path(out, "sweep.csv"), "theta_a,theta_b,threshold_pixels,rho,n_nodes");
    for (const SweepRow& r : rows)
        csv.row({format_double(r.theta_a), format_double(r.theta_b),
                 format_double(r.threshold_pixels), format_double(r.rho), std::to_string(r.n_nodes)});
    log << "sweep: " << rows.size() << " theta pairs\n";
}

// ---------------------------------------------------------------------------
// simulate: synthetic inputs for pipeline exercises

inline void cmd_simulate(const Config& cfg, std::ostream& log) {
    const int n = static_cast<int>(cfg.integer("sim_size", 128));
    if (n < 16) throw ConfigError("sim_size must be at least 16");
    const double cell = cfg.num("sim_cell", 100.0);
    if (!(cell > 0.0)) throw ConfigError("sim_cell must be positive");
    const double rate = cfg.num("sim_rate", 5.0);
    if (!(rate > 0.0)) throw ConfigError("sim_rate must be positive");
    const std::uint64_t seed = cfg.seed("sim_seed", 1);
    const std::string out = cfg.out_dir();
    const GridHeader h = square_header(n, cell);

    const Raster<double> ksn_field = smooth_field(h, mix_seed(seed, 11));
    const Raster<double> dem = steady_state_dem(
        n, cell, 0.5,
        [&](double x, double y) { return 100.0 + 50.0 * ksn_field.sample_at(x, y); }, seed);
    const Raster<double> pga =
        map_cells(smooth_field(h, mix_seed(seed, 1)), [](double v) { return 0.3 + 0.2 * v; });
    const Raster<double> landcover = categorical_mosaic(h, 4, mix_seed(seed, 2));
    const Raster<double> geology = categorical_mosaic(h, 3, mix_seed(seed, 3));

    const double lam_max = rate * std::exp(3.0 * 0.2 + 1e-9);
    PointData pts = thin_poisson(
        h, [&](double x, double y) { return rate * std::exp(3.0 * (pga.sample_at(x, y) - 0.3)); },
        lam_max, mix_seed(seed, 4));
    if (pts.size() == 0) throw DataError("simulated point pattern is empty; raise sim_rate");
    std::mt19937_64 rng = make_rng(mix_seed(seed, 5));
    std::normal_distribution<double> noise(0.0, 0.5);
    PointSet ps;
    ps.x = pts.x;
    ps.y = pts.y;
    ps.has_values = true;
    for (std::size_t i = 0; i < pts.size(); ++i)
        ps.value.push_back(8.0 + 2.0 * pga.sample_at(pts.x[i], pts.y[i]) + noise(rng));

    write_ascii_grid(dem, detail::join_path(out, "dem.asc"));
    write_ascii_grid(pga, detail::join_path(out, "pga.asc"));
    write_ascii_grid(landcover, detail::join_path(out, "landcover.asc"));
    write_ascii_grid(geology, detail::join_path(out, "geology.asc"));
    write_points_csv(ps, detail::join_path(out, "points.csv"));
    log << "simulate: " << n << "x" << n << " grids and " << pts.size() << " points\n";
}

} // namespace incise
