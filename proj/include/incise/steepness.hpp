#pragma once

// Channel steepness from slope-area scaling.
//
// Under detachment-limited incision, local slope S relates to drainage area
// A as S = k_sn * A^(-theta), so elevation is linear in the chi coordinate
// chi = integral (A0/A)^theta dx taken upstream from the outlet. With
// A0 = 1 m^2 the steepness index k_sn equals dz/dchi, which is estimated
// here by ordinary least squares over a node window that never crosses a
// junction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "incise/channel.hpp"
#include "incise/errors.hpp"
#include "incise/flow.hpp"
#include "incise/raster.hpp"
#include "incise/util.hpp"

namespace incise {

// Integrate chi upstream from every outlet (chi = 0 there), trapezoid rule
// on the (A0/A)^theta integrand between consecutive channel nodes.
inline void chi_transform(ChannelNetwork& net, double theta, double a0 = 1.0) {
    if (!(theta > 0.0 && theta < 1.0))
        throw ConfigError("chi_transform: theta must lie in (0, 1)");
    if (!(a0 > 0.0)) throw ConfigError("chi_transform: reference area must be positive");
    for (std::size_t id = 0; id < net.nodes.size(); ++id) {
        ChannelNode& n = net.nodes[id]; // downstream node already done (lower id)
        if (n.downstream < 0) {
            n.chi = 0.0;
            continue;
        }
        const ChannelNode& d = net.nodes[static_cast<std::size_t>(n.downstream)];
        const double dx = n.flow_dist - d.flow_dist;
        const double integrand = 0.5 * (std::pow(a0 / n.area, theta) + std::pow(a0 / d.area, theta));
        n.chi = d.chi + integrand * dx;
    }
}

// Windowed OLS slope of elevation against chi, per node. The window spans
// up to window_nodes positions of the node's own segment, truncated at the
// segment ends. Windows with fewer than two distinct chi values give NaN;
// negative slopes are floored at zero.
inline void ksn_estimate(ChannelNetwork& net, int window_nodes = 9) {
    if (window_nodes < 3 || window_nodes % 2 == 0)
        throw ConfigError("ksn_estimate: window_nodes must be odd and >= 3");
    const int half = window_nodes / 2;
    for (const auto& seg : net.segments) {
        const int len = static_cast<int>(seg.size());
        for (int p = 0; p < len; ++p) {
            const int lo = std::max(0, p - half);
            const int hi = std::min(len - 1, p + half);
            double sx = 0.0, sy = 0.0;
            const int m = hi - lo + 1;
            for (int q = lo; q <= hi; ++q) {
                sx += net.nodes[static_cast<std::size_t>(seg[static_cast<std::size_t>(q)])].chi;
                sy += net.nodes[static_cast<std::size_t>(seg[static_cast<std::size_t>(q)])].z;
            }
            const double mx = sx / m, my = sy / m;
            double sxx = 0.0, sxy = 0.0;
            bool distinct = false;
            const double chi0 = net.nodes[static_cast<std::size_t>(seg[static_cast<std::size_t>(lo)])].chi;
            for (int q = lo; q <= hi; ++q) {
                const ChannelNode& n = net.nodes[static_cast<std::size_t>(seg[static_cast<std::size_t>(q)])];
                if (n.chi != chi0) distinct = true;
                sxx += (n.chi - mx) * (n.chi - mx);
                sxy += (n.chi - mx) * (n.z - my);
            }
            ChannelNode& node = net.nodes[static_cast<std::size_t>(seg[static_cast<std::size_t>(p)])];
            if (!distinct || sxx == 0.0) {
                node.ksn = std::numeric_limits<double>::quiet_NaN();
            } else {
                node.ksn = std::max(0.0, sxy / sxx);
            }
        }
    }
}

// Spread node steepness onto hillslopes: each cell takes the ksn of the
// first channel node downstream of it. Cells that never reach the network,
// or whose node has no ksn estimate, stay nodata.
inline Raster<double> ksn_raster(const FlowField& ff, const ChannelNetwork& net) {
    const GridHeader& h = ff.header;
    Raster<double> out(h, h.nodata);
    const std::vector<int> idx = donor_channel_index(ff, net);
    for (int c : ff.stack) {
        const std::size_t ci = static_cast<std::size_t>(c);
        if (idx[ci] < 0) continue;
        const double k = net.nodes[static_cast<std::size_t>(idx[ci])].ksn;
        if (!std::isnan(k)) out[ci] = k;
    }
    return out;
}

// Replace every nodata cell (inside `region`, when given) by the value of
// the Euclidean-nearest valid cell; distance ties resolve to the lowest cell
// index. Search walks outward over Chebyshev rings and stops once no farther
// ring can beat the best squared distance (integer arithmetic, so ties are
// exact).
inline Raster<double> masked_nearest_fill(const Raster<double>& src, const Raster<int>* region = nullptr) {
    const GridHeader& h = src.header();
    if (region && !h.aligned_with(region->header()))
        throw DataError("masked_nearest_fill: region mask does not align");
    bool any_valid = false;
    for (std::size_t i = 0; i < src.size() && !any_valid; ++i)
        if (!src.is_nodata(i)) any_valid = true;
    if (!any_valid) throw DataError("masked_nearest_fill: no valid source cells");

    Raster<double> out = src;
    const int ncols = h.ncols, nrows = h.nrows;
    const int max_ring = std::max(ncols, nrows);

    parallel_for(src.size(), [&](std::size_t i) {
        if (!src.is_nodata(i)) return;
        if (region && ((*region)[i] <= 0 || region->is_nodata(i))) return;
        const int col = h.col_of(static_cast<int>(i)), row = h.row_of(static_cast<int>(i));
        long best_d2 = -1;
        int best_cell = -1;
        auto consider = [&](int nc, int nr) {
            if (nc < 0 || nc >= ncols || nr < 0 || nr >= nrows) return;
            const int m = h.index(nc, nr);
            if (src.is_nodata(static_cast<std::size_t>(m))) return;
            const long dc = nc - col, dr = nr - row;
            const long d2 = dc * dc + dr * dr;
            if (best_d2 < 0 || d2 < best_d2 || (d2 == best_d2 && m < best_cell)) {
                best_d2 = d2;
                best_cell = m;
            }
        };
        for (int r = 1; r <= max_ring; ++r) {
            if (best_d2 >= 0 && static_cast<long>(r) * r > best_d2) break;
            for (int dc = -r; dc <= r; ++dc) {
                consider(col + dc, row - r);
                consider(col + dc, row + r);
            }
            for (int dr = -r + 1; dr <= r - 1; ++dr) {
                consider(col - r, row + dr);
                consider(col + r, row + dr);
            }
        }
        if (best_cell >= 0) out[i] = src[static_cast<std::size_t>(best_cell)];
    });
    return out;
}

// Spearman rank correlation with average ranks over ties.
inline double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw DataError("spearman_rho: need two samples of equal length >= 2");
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    const double ma = mean_of(ra), mb = mean_of(rb);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
        sab += (ra[i] - ma) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0)
        throw NumericalError("spearman_rho: a sample is constant, correlation undefined");
    return sab / std::sqrt(saa * sbb);
}

struct SweepRow {
    double theta_a = 0.0;
    double theta_b = 0.0;
    double threshold_pixels = 0.0;
    double rho = 0.0;
    long n_nodes = 0;
};

// Concavity sensitivity: for every channel threshold, extract one network,
// compute ksn under each theta, and report the rank correlation of steepness
// between every theta pair over nodes valued under both.
inline std::vector<SweepRow> concavity_sweep(const FlowField& ff, const Raster<double>& dem,
                                             const Raster<double>& area,
                                             const std::vector<double>& thetas,
                                             const std::vector<double>& thresholds,
                                             int window_nodes = 9) {
    if (thetas.size() < 2) throw ConfigError("concavity_sweep: need at least two theta values");
    if (thresholds.empty()) throw ConfigError("concavity_sweep: need at least one threshold");
    std::vector<SweepRow> rows;
    for (double thr : thresholds) {
        ChannelNetwork net = extract_channels(ff, dem, area, thr);
        std::vector<std::vector<double>> ksn_by_theta;
        for (double theta : thetas) {
            chi_transform(net, theta);
            ksn_estimate(net, window_nodes);
            std::vector<double> k(net.nodes.size());
            for (std::size_t i = 0; i < net.nodes.size(); ++i) k[i] = net.nodes[i].ksn;
            ksn_by_theta.push_back(std::move(k));
        }
        for (std::size_t ia = 0; ia < thetas.size(); ++ia) {
            for (std::size_t ib = ia + 1; ib < thetas.size(); ++ib) {
                std::vector<double> xa, xb;
                for (std::size_t i = 0; i < net.nodes.size(); ++i) {
                    const double ka = ksn_by_theta[ia][i], kb = ksn_by_theta[ib][i];
                    if (std::isnan(ka) || std::isnan(kb)) continue;
                    xa.push_back(std::log1p(ka));
                    xb.push_back(std::log1p(kb));
                }
                SweepRow row;
                row.theta_a = thetas[ia];
                row.theta_b = thetas[ib];
                row.threshold_pixels = thr;
                row.n_nodes = static_cast<long>(xa.size());
                row.rho = spearman_rho(xa, xb);
                rows.push_back(row);
            }
        }
    }
    return rows;
}

} // namespace incise
