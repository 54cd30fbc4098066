#pragma once

// Triangulation of the study region for numerical integration of the point
// process intensity. The mesh is a lattice of congruent equilateral
// triangles sized to a target area, anchored at the lower-left corner of
// the region bounding box. Quadrature nodes are triangle centroids with the
// (exact, common) triangle area as weight.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "incise/csv.hpp"
#include "incise/errors.hpp"
#include "incise/raster.hpp"

namespace incise {

struct TriMesh {
    std::vector<double> vx, vy;             // vertex coordinates, metres
    std::vector<std::array<int, 3>> tris;   // CCW vertex ids
    double tri_area = 0.0;                  // common area of every triangle, m^2
};

struct Quadrature {
    std::vector<double> x, y; // centroid coordinates
    std::vector<double> w;    // weights, m^2
    double total_weight() const {
        double s = 0.0;
        for (double v : w) s += v;
        return s;
    }
};

// Build the lattice over the bounding box of the region's valid cells and
// keep every fully covered triangle, and round the partially covered boundary
// triangles with error diffusion: walking candidates in lattice order, keep a
// straddler only while the running kept-minus-covered area deficit favours it.
// Any pointwise keep rule (centroid, majority coverage) commits the same
// rounding error on every strip of a straight region edge, which accumulates
// to percents of the total area; diffusing the rounding error keeps the kept
// area within roughly half a triangle of the covered area. If the region is
// smaller than a single triangle, fall back to keeping triangles with any
// sample point or vertex on the region so at least one survives.
inline TriMesh build_mesh(const Raster<int>& region, double target_tri_area) {
    if (!(target_tri_area > 0.0)) throw ConfigError("build_mesh: target triangle area must be positive");
    const GridHeader& h = region.header();

    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool any = false;
    for (int row = 0; row < h.nrows; ++row) {
        for (int col = 0; col < h.ncols; ++col) {
            if (region.is_nodata(col, row) || region.at(col, row) <= 0) continue;
            const double x0 = h.x_origin + col * h.cell_size;
            const double y0 = h.y_origin + (h.nrows - row - 1) * h.cell_size;
            if (!any) {
                xmin = x0; xmax = x0 + h.cell_size;
                ymin = y0; ymax = y0 + h.cell_size;
                any = true;
            } else {
                xmin = std::min(xmin, x0); xmax = std::max(xmax, x0 + h.cell_size);
                ymin = std::min(ymin, y0); ymax = std::max(ymax, y0 + h.cell_size);
            }
        }
    }
    if (!any) throw DataError("build_mesh: region mask has no valid cells");

    // Equilateral triangle with area T has edge e = sqrt(4 T / sqrt(3)).
    const double e = std::sqrt(4.0 * target_tri_area / std::sqrt(3.0));
    const double rh = e * std::sqrt(3.0) / 2.0; // row pitch
    // one extra column each side so the half-pitch-shifted rows still tile
    // past the region edges
    const int ni = static_cast<int>(std::ceil((xmax - xmin) / e)) + 3;
    const int nj = static_cast<int>(std::ceil((ymax - ymin) / rh)) + 1;

    auto vxy = [&](int j, int i) {
        return std::pair<double, double>(xmin + (i - 1) * e + ((j % 2) ? 0.5 * e : 0.0), ymin + j * rh);
    };
    auto vid = [&](int j, int i) { return j * (ni + 1) + i; };

    auto inside = [&](double x, double y) {
        const int v = region.sample_at(x, y);
        return v > 0 && !region.value_is_nodata(v);
    };

    struct Cand { std::array<int, 3> v; std::array<double, 3> px, py; };
    std::vector<Cand> cands;
    for (int j = 0; j < nj; ++j) {
        for (int i = 0; i < ni; ++i) {
            std::array<std::array<int, 3>, 2> pair;
            if (j % 2 == 0) {
                pair[0] = {vid(j, i), vid(j, i + 1), vid(j + 1, i)};
                pair[1] = {vid(j, i + 1), vid(j + 1, i + 1), vid(j + 1, i)};
            } else {
                pair[0] = {vid(j, i), vid(j, i + 1), vid(j + 1, i + 1)};
                pair[1] = {vid(j, i), vid(j + 1, i + 1), vid(j + 1, i)};
            }
            for (const auto& t : pair) {
                Cand c{t, {}, {}};
                for (int k = 0; k < 3; ++k) {
                    auto [x, y] = vxy(t[static_cast<std::size_t>(k)] / (ni + 1),
                                      t[static_cast<std::size_t>(k)] % (ni + 1));
                    c.px[static_cast<std::size_t>(k)] = x;
                    c.py[static_cast<std::size_t>(k)] = y;
                }
                cands.push_back(c);
            }
        }
    }

    // covered fraction estimated on a strictly interior barycentric lattice
    // (a+b+g = 12, all >= 1): 55 points per triangle
    constexpr int kSampleSum = 12, kSampleCount = 55;
    auto covered = [&](const Cand& c) {
        int n = 0;
        for (int a = 1; a <= kSampleSum - 2; ++a)
            for (int b = 1; b <= kSampleSum - 1 - a; ++b) {
                const int g = kSampleSum - a - b;
                const double x = (a * c.px[0] + b * c.px[1] + g * c.px[2]) / kSampleSum;
                const double y = (a * c.py[0] + b * c.py[1] + g * c.py[2]) / kSampleSum;
                if (inside(x, y)) ++n;
            }
        return n;
    };

    std::vector<char> keep(cands.size(), 0);
    std::size_t kept = 0;
    double carry = 0.0; // kept minus covered area over straddlers, in triangles
    for (std::size_t t = 0; t < cands.size(); ++t) {
        const int n = covered(cands[t]);
        if (n == 0) continue;
        if (n == kSampleCount) {
            keep[t] = 1;
            ++kept;
            continue;
        }
        const double f = static_cast<double>(n) / kSampleCount;
        if (carry < f - 0.5) {
            keep[t] = 1;
            ++kept;
            carry += 1.0 - f;
        } else {
            carry -= f;
        }
    }
    if (kept == 0) {
        // coarse mesh over a thin region: accept any touching triangle
        for (std::size_t t = 0; t < cands.size(); ++t) {
            bool touch = covered(cands[t]) > 0;
            for (int v : cands[t].v) {
                auto [x, y] = vxy(v / (ni + 1), v % (ni + 1));
                touch = touch || inside(x, y);
            }
            if (touch) {
                keep[t] = 1;
                ++kept;
            }
        }
    }
    if (kept == 0) throw DataError("build_mesh: no triangle touches the region");

    TriMesh mesh;
    mesh.tri_area = 0.5 * e * rh;
    std::vector<int> remap(static_cast<std::size_t>(nj + 1) * (ni + 1), -1);
    // vertices renumbered by ascending lattice id across kept triangles
    for (std::size_t t = 0; t < cands.size(); ++t)
        if (keep[t])
            for (int v : cands[t].v) remap[static_cast<std::size_t>(v)] = 0;
    for (std::size_t v = 0; v < remap.size(); ++v) {
        if (remap[v] != 0) continue; // 0 marks "used", -1 unused
        remap[v] = static_cast<int>(mesh.vx.size());
        auto [x, y] = vxy(static_cast<int>(v) / (ni + 1), static_cast<int>(v) % (ni + 1));
        mesh.vx.push_back(x);
        mesh.vy.push_back(y);
    }
    for (std::size_t t = 0; t < cands.size(); ++t) {
        if (!keep[t]) continue;
        mesh.tris.push_back({remap[static_cast<std::size_t>(cands[t].v[0])],
                             remap[static_cast<std::size_t>(cands[t].v[1])],
                             remap[static_cast<std::size_t>(cands[t].v[2])]});
    }
    return mesh;
}

inline Quadrature quadrature_of(const TriMesh& mesh) {
    Quadrature q;
    q.x.reserve(mesh.tris.size());
    q.y.reserve(mesh.tris.size());
    q.w.assign(mesh.tris.size(), mesh.tri_area);
    for (const auto& t : mesh.tris) {
        q.x.push_back((mesh.vx[static_cast<std::size_t>(t[0])] + mesh.vx[static_cast<std::size_t>(t[1])] +
                       mesh.vx[static_cast<std::size_t>(t[2])]) / 3.0);
        q.y.push_back((mesh.vy[static_cast<std::size_t>(t[0])] + mesh.vy[static_cast<std::size_t>(t[1])] +
                       mesh.vy[static_cast<std::size_t>(t[2])]) / 3.0);
    }
    return q;
}

inline void write_mesh_csv(const TriMesh& mesh, const std::string& vertices_path,
                           const std::string& triangles_path) {
    CsvWriter wv(vertices_path, "vid,x,y");
    for (std::size_t v = 0; v < mesh.vx.size(); ++v)
        wv.row({std::to_string(v), format_double(mesh.vx[v]), format_double(mesh.vy[v])});
    CsvWriter wt(triangles_path, "tid,v0,v1,v2");
    for (std::size_t t = 0; t < mesh.tris.size(); ++t)
        wt.row({std::to_string(t), std::to_string(mesh.tris[t][0]), std::to_string(mesh.tris[t][1]),
                std::to_string(mesh.tris[t][2])});
}

} // namespace incise
