#pragma once

// Single-direction (D8) flow routing on filled DEMs.
//
// The routing pipeline is: fill_depressions -> d8_flow -> accumulate.
// Everything downstream (channel extraction, distances, chi) consumes the
// FlowField produced here. All choices are deterministic: priority-queue
// ties break on cell index, receiver ties break cardinal-before-diagonal
// then on a fixed enumeration order, and flats drain to the equal-elevation
// neighbour that left the priority-flood queue earliest.

#include <cmath>
#include <cstdint>
#include <queue>
#include <tuple>
#include <vector>

#include "incise/errors.hpp"
#include "incise/raster.hpp"

namespace incise {

namespace d8 {

// Neighbour enumeration order: cardinals first (E, N, W, S), then
// diagonals (NE, NW, SW, SE). Receiver ties resolve to the first entry.
inline constexpr int dcol[8] = {+1, 0, -1, 0, +1, -1, -1, +1};
inline constexpr int drow[8] = {0, -1, 0, +1, -1, -1, +1, +1};

inline double step_length(int k, double cell_size) {
    return k < 4 ? cell_size : cell_size * std::sqrt(2.0);
}

} // namespace d8

struct FlowField {
    GridHeader header;
    std::vector<int> receiver;       // per cell: receiver index; self at outlets; -1 where nodata
    std::vector<double> step;        // per cell: distance to its receiver (0 at outlets)
    std::vector<int> stack;          // valid cells, every receiver before its donors
    std::vector<int> donor_start;    // CSR donor lists, donors in ascending cell index
    std::vector<int> donor_cell;
    std::size_t n_valid = 0;

    bool is_outlet(int c) const { return receiver[static_cast<std::size_t>(c)] == c; }

    int donor_count(int c) const { return donor_start[static_cast<std::size_t>(c) + 1] - donor_start[static_cast<std::size_t>(c)]; }
};

namespace detail {

// Priority-flood sweep from the raster boundary inward. Pops cells in
// nondecreasing elevation (ties by cell index), optionally raising cells to
// the level of their popping neighbour (the fill itself). Returns the pop
// sequence position per cell (-1 where nodata).
inline std::vector<int> priority_flood(Raster<double>& dem, bool raise) {
    const GridHeader& h = dem.header();
    const int ncols = h.ncols, nrows = h.nrows;
    const std::size_t n = h.cell_count();
    std::vector<int> order(n, -1);
    std::vector<char> queued(n, 0);

    using Entry = std::pair<double, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> pq;

    auto push = [&](int c, double z) {
        queued[static_cast<std::size_t>(c)] = 1;
        pq.emplace(z, c);
    };

    // Seeds: raster edge cells plus valid cells adjacent to nodata. Both act
    // as drains to the outside world.
    for (int row = 0; row < nrows; ++row) {
        for (int col = 0; col < ncols; ++col) {
            const int c = h.index(col, row);
            if (dem.is_nodata(static_cast<std::size_t>(c))) {
                queued[static_cast<std::size_t>(c)] = 1;
                continue;
            }
            bool seed = (row == 0 || row == nrows - 1 || col == 0 || col == ncols - 1);
            if (!seed) {
                for (int k = 0; k < 8 && !seed; ++k) {
                    const int nc = col + d8::dcol[k], nr = row + d8::drow[k];
                    if (h.in_grid(nc, nr) && dem.is_nodata(nc, nr)) seed = true;
                }
            }
            if (seed) push(c, dem[static_cast<std::size_t>(c)]);
        }
    }

    int pos = 0;
    while (!pq.empty()) {
        const auto [z, c] = pq.top();
        pq.pop();
        order[static_cast<std::size_t>(c)] = pos++;
        const int col = h.col_of(c), row = h.row_of(c);
        for (int k = 0; k < 8; ++k) {
            const int nc = col + d8::dcol[k], nr = row + d8::drow[k];
            if (!h.in_grid(nc, nr)) continue;
            const int m = h.index(nc, nr);
            if (queued[static_cast<std::size_t>(m)]) continue;
            double zn = dem[static_cast<std::size_t>(m)];
            if (raise && zn < z) {
                zn = z; // depression: raise to the spill level, epsilon 0
                dem[static_cast<std::size_t>(m)] = zn;
            }
            push(m, zn);
        }
    }
    return order;
}

} // namespace detail

// Derive donor lists (CSR, ascending cell index), the topological stack
// (outlets in ascending index, then depth-first upstream), and the valid
// cell count from an already-populated receiver array. Split out so custom
// routings can be assembled cell by cell and finished here.
inline void finalize_flow_field(FlowField& ff) {
    const std::size_t n = ff.header.cell_count();
    if (ff.receiver.size() != n)
        throw DataError("finalize_flow_field: receiver array does not match the header");

    ff.n_valid = 0;
    for (std::size_t c = 0; c < n; ++c)
        if (ff.receiver[c] >= 0) ++ff.n_valid;

    ff.donor_start.assign(n + 1, 0);
    for (std::size_t c = 0; c < n; ++c) {
        const int r = ff.receiver[c];
        if (r >= 0 && r != static_cast<int>(c)) ++ff.donor_start[static_cast<std::size_t>(r) + 1];
    }
    for (std::size_t i = 0; i < n; ++i) ff.donor_start[i + 1] += ff.donor_start[i];
    ff.donor_cell.assign(static_cast<std::size_t>(ff.donor_start[n]), 0);
    {
        std::vector<int> cursor(ff.donor_start.begin(), ff.donor_start.end() - 1);
        for (std::size_t c = 0; c < n; ++c) {
            const int r = ff.receiver[c];
            if (r >= 0 && r != static_cast<int>(c))
                ff.donor_cell[static_cast<std::size_t>(cursor[static_cast<std::size_t>(r)]++)] = static_cast<int>(c);
        }
    }

    ff.stack.clear();
    ff.stack.reserve(ff.n_valid);
    std::vector<int> work;
    for (std::size_t c = 0; c < n; ++c) {
        if (ff.receiver[c] != static_cast<int>(c)) continue;
        work.push_back(static_cast<int>(c));
        while (!work.empty()) {
            const int u = work.back();
            work.pop_back();
            ff.stack.push_back(u);
            for (int i = ff.donor_start[static_cast<std::size_t>(u) + 1] - 1;
                 i >= ff.donor_start[static_cast<std::size_t>(u)]; --i)
                work.push_back(ff.donor_cell[static_cast<std::size_t>(i)]);
        }
    }
    if (ff.stack.size() != ff.n_valid)
        throw NumericalError("flow field: receiver graph is not a forest rooted at outlets");
}

// Depression filling by priority flood (epsilon 0: filled lakes stay flat).
// Nodata cells are untouched and act as external drains.
inline Raster<double> fill_depressions(const Raster<double>& dem) {
    Raster<double> filled = dem;
    detail::priority_flood(filled, true);
    return filled;
}

// D8 receivers on a filled DEM. Per cell, the receiver is the neighbour with
// the steepest positive downhill grade (drop divided by step length). Flat
// cells drain to the equal-elevation neighbour that popped earliest in a
// priority-flood sweep of the same surface; flats therefore drain toward the
// spill point deterministically. Boundary cells with no receiver are outlets
// (self-receiving). An interior cell with no receiver means the surface was
// not filled, which is reported as a numerical error.
inline FlowField d8_flow(const Raster<double>& filled) {
    const GridHeader& h = filled.header();
    const std::size_t n = h.cell_count();
    FlowField ff;
    ff.header = h;
    ff.receiver.assign(n, -1);
    ff.step.assign(n, 0.0);

    // Ordering pass only (raise=false leaves the surface untouched); an
    // unfilled depression shows up below as an interior cell without any
    // receiver and is rejected there.
    Raster<double> surface = filled;
    const std::vector<int> pop_order = detail::priority_flood(surface, false);

    for (int row = 0; row < h.nrows; ++row) {
        for (int col = 0; col < h.ncols; ++col) {
            const int c = h.index(col, row);
            if (filled.is_nodata(static_cast<std::size_t>(c))) continue;
            ++ff.n_valid;
            const double zc = filled[static_cast<std::size_t>(c)];

            int best = -1;
            double best_grade = 0.0;
            int flat = -1;
            bool boundary = (row == 0 || row == h.nrows - 1 || col == 0 || col == h.ncols - 1);
            for (int k = 0; k < 8; ++k) {
                const int nc = col + d8::dcol[k], nr = row + d8::drow[k];
                if (!h.in_grid(nc, nr)) continue;
                const int m = h.index(nc, nr);
                if (filled.is_nodata(static_cast<std::size_t>(m))) {
                    boundary = true;
                    continue;
                }
                const double zn = filled[static_cast<std::size_t>(m)];
                if (zn < zc) {
                    const double grade = (zc - zn) / d8::step_length(k, h.cell_size);
                    if (grade > best_grade) {
                        best_grade = grade;
                        best = m;
                    }
                } else if (zn == zc && pop_order[static_cast<std::size_t>(m)] != -1 &&
                           pop_order[static_cast<std::size_t>(m)] < pop_order[static_cast<std::size_t>(c)]) {
                    if (flat == -1 || pop_order[static_cast<std::size_t>(m)] < pop_order[static_cast<std::size_t>(flat)])
                        flat = m;
                }
            }

            int r;
            if (best != -1) {
                r = best;
            } else if (flat != -1) {
                r = flat;
            } else if (boundary) {
                r = c; // outlet
            } else {
                throw NumericalError("d8_flow: interior cell " + std::to_string(c) +
                                     " has no downhill or flat receiver");
            }
            ff.receiver[static_cast<std::size_t>(c)] = r;
            if (r != c) {
                const int dc = h.col_of(r) - col, dr = h.row_of(r) - row;
                ff.step[static_cast<std::size_t>(c)] =
                    (dc != 0 && dr != 0) ? h.cell_size * std::sqrt(2.0) : h.cell_size;
            }
        }
    }

    finalize_flow_field(ff);
    return ff;
}

// Drainage area in square metres: own cell area plus everything upstream.
// One sweep from the most upstream end of the stack downstream.
inline Raster<double> accumulate(const FlowField& ff) {
    const GridHeader& h = ff.header;
    Raster<double> area(h, h.nodata);
    const double cell_area = h.cell_size * h.cell_size;
    for (int c : ff.stack) area[static_cast<std::size_t>(c)] = cell_area;
    for (auto it = ff.stack.rbegin(); it != ff.stack.rend(); ++it) {
        const int c = *it;
        const int r = ff.receiver[static_cast<std::size_t>(c)];
        if (r != c) area[static_cast<std::size_t>(r)] += area[static_cast<std::size_t>(c)];
    }
    return area;
}

// Along-flow distance from each cell to the first cell where `target` is
// nonzero (0 on target cells themselves). Paths that exit at an outlet
// without meeting a target cell get nodata.
inline Raster<double> flow_path_length(const FlowField& ff, const Raster<int>& target) {
    if (!ff.header.aligned_with(target.header()))
        throw DataError("flow_path_length: target mask grid does not align with the flow field");
    const GridHeader& h = ff.header;
    Raster<double> len(h, h.nodata);
    for (int c : ff.stack) {
        const std::size_t ci = static_cast<std::size_t>(c);
        if (target[ci] > 0 && !target.is_nodata(ci)) {
            len[ci] = 0.0;
            continue;
        }
        const int r = ff.receiver[ci];
        if (r == c) continue; // unmasked outlet: stays nodata
        if (len.is_nodata(static_cast<std::size_t>(r))) continue;
        len[ci] = len[static_cast<std::size_t>(r)] + ff.step[ci];
    }
    return len;
}

} // namespace incise
