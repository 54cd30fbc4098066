#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "errors.hpp"
#include "flow.hpp"
#include "model.hpp"
#include "raster.hpp"
#include "util.hpp"

// Synthetic data generators: rough random surfaces, steady-state fluvial
// landscapes with a prescribed steepness field, smooth covariate fields,
// categorical mosaics, and seeded inhomogeneous point patterns. Used by the
// `simulate` subcommand and the acceptance suite.

namespace incise {

inline GridHeader square_header(int n, double cell) {
    GridHeader h;
    h.ncols = n;
    h.nrows = n;
    h.x_origin = 0.0;
    h.y_origin = 0.0;
    h.cell_size = cell;
    h.nodata = -9999.0;
    return h;
}

// Rough uniform-noise surface; optionally punches a nodata disk so masked
// routing paths get exercised at scale.
inline Raster<double> random_surface(int n, double cell, std::uint64_t seed, bool nodata_hole = false) {
    const GridHeader h = square_header(n, cell);
    Raster<double> z(h, 0.0);
    std::mt19937_64 rng = make_rng(seed);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = u(rng);
    if (nodata_hole) {
        const int cx = n / 3, cy = n / 3, r = std::max(2, n / 8);
        for (int row = 0; row < n; ++row)
            for (int col = 0; col < n; ++col)
                if ((col - cx) * (col - cx) + (row - cy) * (row - cy) <= r * r)
                    z.at(col, row) = h.nodata;
    }
    return z;
}

// Steady-state landscape for a prescribed steepness field: starting from a
// gently tilted bumpy surface, alternate D8 routing with a bottom-up rebuild
//   z(c) = z(rcv) + ksn(c) * 0.5*((1/A_c)^theta + (1/A_rcv)^theta) * L(c,rcv)
// until the routing reaches a fixed point, so elevations satisfy z = ksn*chi
// exactly along every flow path of their own drainage pattern.
template <typename KsnField>
Raster<double> steady_state_dem(int n, double cell, double theta, KsnField&& ksn_at,
                                std::uint64_t seed, int max_rounds = 200) {
    const GridHeader h = square_header(n, cell);
    const double w = n * cell;
    Raster<double> z(h, 0.0);
    std::mt19937_64 rng = make_rng(seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    const double p1 = phase(rng), p2 = phase(rng), p3 = phase(rng), p4 = phase(rng);
    std::uniform_real_distribution<double> jitter(-0.01, 0.01);
    for (int row = 0; row < n; ++row)
        for (int col = 0; col < n; ++col) {
            const double x = h.cell_center_x(col), y = h.cell_center_y(row);
            z.at(col, row) = 0.05 * y + 6.0 * std::sin(2.0 * M_PI * x / w * 2.0 + p1) * std::sin(2.0 * M_PI * y / w * 1.5 + p2) +
                             3.0 * std::sin(2.0 * M_PI * x / w * 4.5 + p3) * std::cos(2.0 * M_PI * y / w * 3.2 + p4) +
                             jitter(rng);
        }

    std::vector<int> prev;
    for (int round = 0; round < max_rounds; ++round) {
        Raster<double> filled = fill_depressions(z);
        FlowField ff = d8_flow(filled);
        if (ff.receiver == prev) break;  // z was rebuilt from this exact routing
        prev = ff.receiver;
        const Raster<double> acc = accumulate(ff);
        for (int c : ff.stack) {
            const std::size_t ci = static_cast<std::size_t>(c);
            const int r = ff.receiver[ci];
            if (r == c) {
                z[ci] = 0.0;
                continue;
            }
            const std::size_t ri = static_cast<std::size_t>(r);
            const double integrand = 0.5 * (std::pow(1.0 / acc[ci], theta) + std::pow(1.0 / acc[ri], theta));
            const double x = h.cell_center_x(h.col_of(c)), y = h.cell_center_y(h.row_of(c));
            z[ci] = z[ri] + ksn_at(x, y) * integrand * ff.step[ci];
        }
    }
    return z;
}

// Sum of a few random sinusoids, normalized into [-1, 1].
inline Raster<double> smooth_field(const GridHeader& h, std::uint64_t seed, int modes = 4) {
    if (modes < 1) throw ConfigError("smooth_field: need at least one mode");
    std::mt19937_64 rng = make_rng(seed);
    std::uniform_int_distribution<int> freq(1, 4);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    std::uniform_real_distribution<double> amp(0.5, 1.0);
    struct Mode {
        double fx, fy, ph, a;
    };
    std::vector<Mode> ms;
    double norm = 0.0;
    for (int k = 0; k < modes; ++k) {
        Mode m{static_cast<double>(freq(rng)), static_cast<double>(freq(rng)), phase(rng), amp(rng)};
        norm += m.a;
        ms.push_back(m);
    }
    const double w = h.ncols * h.cell_size, ht = h.nrows * h.cell_size;
    Raster<double> out(h, 0.0);
    for (int row = 0; row < h.nrows; ++row)
        for (int col = 0; col < h.ncols; ++col) {
            const double x = h.cell_center_x(col), y = h.cell_center_y(row);
            double v = 0.0;
            for (const Mode& m : ms) v += m.a * std::sin(2.0 * M_PI * (m.fx * x / w + m.fy * y / ht) + m.ph);
            out.at(col, row) = v / norm;
        }
    return out;
}

// Contiguous class blobs 1..n_classes from equal-width slices of a smooth field.
inline Raster<double> categorical_mosaic(const GridHeader& h, int n_classes, std::uint64_t seed) {
    if (n_classes < 1) throw ConfigError("categorical_mosaic: need at least one class");
    const Raster<double> f = smooth_field(h, seed);
    Raster<double> out(h, 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) {
        const int k = std::clamp(static_cast<int>(std::floor((f[i] + 1.0) * 0.5 * n_classes)), 0, n_classes - 1);
        out[i] = static_cast<double>(k + 1);
    }
    return out;
}

// Inhomogeneous Poisson pattern by thinning a homogeneous proposal of rate
// lambda_max (events per km^2); exact when lambda_km2 never exceeds the bound.
template <typename F>
PointData thin_poisson(const GridHeader& region, F&& lambda_km2, double lambda_max, std::uint64_t seed) {
    if (!(lambda_max > 0.0)) throw ConfigError("thin_poisson: intensity bound must be positive");
    const double w = region.ncols * region.cell_size, h = region.nrows * region.cell_size;
    const double area_km2 = w * h * 1e-6;
    std::mt19937_64 rng = make_rng(seed);
    const long n = std::poisson_distribution<long>(lambda_max * area_km2)(rng);
    std::uniform_real_distribution<double> ux(region.x_origin, region.x_origin + w);
    std::uniform_real_distribution<double> uy(region.y_origin, region.y_origin + h);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    PointData out;
    for (long i = 0; i < n; ++i) {
        const double x = ux(rng), y = uy(rng), u = u01(rng);
        const double lam = lambda_km2(x, y);
        if (lam > lambda_max * (1.0 + 1e-12))
            throw NumericalError("thin_poisson: intensity exceeds the stated bound");
        if (u * lambda_max < lam) {
            out.x.push_back(x);
            out.y.push_back(y);
        }
    }
    return out;
}

// Permute the valid cells of a raster; breaks any spatial association while
// keeping the marginal distribution.
inline Raster<double> shuffle_raster(const Raster<double>& src, std::uint64_t seed) {
    std::vector<std::size_t> idx;
    std::vector<double> vals;
    for (std::size_t i = 0; i < src.size(); ++i)
        if (!src.is_nodata(i)) {
            idx.push_back(i);
            vals.push_back(src[i]);
        }
    std::mt19937_64 rng = make_rng(seed);
    std::shuffle(vals.begin(), vals.end(), rng);
    Raster<double> out = src;
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = vals[k];
    return out;
}

} // namespace incise
