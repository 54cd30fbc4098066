#pragma once

// Regular-grid raster storage with ESRI ASCII grid I/O.
//
// Grid convention: row 0 is the northernmost row, (x_origin, y_origin) is
// the lower-left corner of the lower-left cell, cells are square. All
// coordinates are metres. Nodata is a sentinel value carried in the header;
// nodata cells never take part in arithmetic.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "incise/errors.hpp"
#include "incise/util.hpp"

namespace incise {

struct GridHeader {
    int ncols = 0;
    int nrows = 0;
    double x_origin = 0.0; // lower-left corner x
    double y_origin = 0.0; // lower-left corner y
    double cell_size = 0.0;
    double nodata = -9999.0;

    std::size_t cell_count() const { return static_cast<std::size_t>(ncols) * static_cast<std::size_t>(nrows); }

    bool aligned_with(const GridHeader& o) const {
        return ncols == o.ncols && nrows == o.nrows && x_origin == o.x_origin &&
               y_origin == o.y_origin && cell_size == o.cell_size;
    }

    double width() const { return ncols * cell_size; }
    double height() const { return nrows * cell_size; }

    double cell_center_x(int col) const { return x_origin + (col + 0.5) * cell_size; }
    double cell_center_y(int row) const { return y_origin + (nrows - row - 0.5) * cell_size; }

    int index(int col, int row) const { return row * ncols + col; }
    int col_of(int index) const { return index % ncols; }
    int row_of(int index) const { return index / ncols; }

    bool in_grid(int col, int row) const { return col >= 0 && col < ncols && row >= 0 && row < nrows; }

    // Cell containing (x, y); points exactly on a cell boundary fall in the
    // higher-index cell. Returns false when outside the grid extent.
    bool locate(double x, double y, int& col, int& row) const {
        const double fx = (x - x_origin) / cell_size;
        const double fy = (y - y_origin) / cell_size;
        if (fx < 0.0 || fy < 0.0 || fx > ncols || fy > nrows) return false;
        col = static_cast<int>(std::floor(fx));
        row = nrows - 1 - static_cast<int>(std::floor(fy));
        // boundary on the far edge: floor(fx) == ncols means x sits exactly on
        // the east edge; there is no higher-index cell, so it is outside.
        if (col >= ncols || row < 0) return false;
        return true;
    }
};

template <class T>
class Raster {
public:
    Raster() = default;
    Raster(const GridHeader& h, T fill) : header_(h), cells_(h.cell_count(), fill) {}

    const GridHeader& header() const { return header_; }
    GridHeader& header() { return header_; }

    int ncols() const { return header_.ncols; }
    int nrows() const { return header_.nrows; }
    std::size_t size() const { return cells_.size(); }

    T& operator[](std::size_t i) { return cells_[i]; }
    const T& operator[](std::size_t i) const { return cells_[i]; }

    T& at(int col, int row) { return cells_[static_cast<std::size_t>(header_.index(col, row))]; }
    const T& at(int col, int row) const { return cells_[static_cast<std::size_t>(header_.index(col, row))]; }

    T nodata_value() const { return static_cast<T>(header_.nodata); }

    bool is_nodata(std::size_t i) const { return value_is_nodata(cells_[i]); }
    bool is_nodata(int col, int row) const { return value_is_nodata(at(col, row)); }

    bool value_is_nodata(T v) const {
        if constexpr (std::is_floating_point_v<T>) {
            return std::isnan(v) || v == nodata_value();
        } else {
            return v == nodata_value();
        }
    }

    void set_nodata(std::size_t i) { cells_[i] = nodata_value(); }

    // Value at a point by nearest (containing) cell, or nodata if outside
    // the extent or the cell itself is nodata.
    T sample_at(double x, double y) const {
        int col, row;
        if (!header_.locate(x, y, col, row)) return nodata_value();
        return at(col, row);
    }

    const std::vector<T>& cells() const { return cells_; }
    std::vector<T>& cells() { return cells_; }

private:
    GridHeader header_;
    std::vector<T> cells_;
};

namespace detail {

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

inline double parse_number(const std::string& tok, const std::string& what) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw DataError("grid " + what + ": bad numeric token '" + tok + "'");
    return v;
}

} // namespace detail

// ESRI ASCII grid reader. Header keys (case-insensitive): ncols, nrows,
// xllcorner, yllcorner, cellsize, nodata_value (optional, default -9999).
// Values follow row-major, north row first.
template <class T = double>
Raster<T> read_ascii_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("grid: cannot open '" + path + "'");

    GridHeader h;
    bool have[5] = {false, false, false, false, false};
    std::string key;
    // header: key/value pairs until the first purely numeric "key"
    std::streampos row_start = in.tellg();
    while (in >> key) {
        const std::string k = detail::lower(key);
        double v;
        if (k == "ncols" || k == "nrows" || k == "xllcorner" || k == "yllcorner" ||
            k == "cellsize" || k == "nodata_value") {
            std::string tok;
            if (!(in >> tok)) throw DataError("grid header: missing value for key '" + key + "'");
            v = detail::parse_number(tok, "header");
            if (k == "ncols") { h.ncols = static_cast<int>(v); have[0] = true; }
            else if (k == "nrows") { h.nrows = static_cast<int>(v); have[1] = true; }
            else if (k == "xllcorner") { h.x_origin = v; have[2] = true; }
            else if (k == "yllcorner") { h.y_origin = v; have[3] = true; }
            else if (k == "cellsize") { h.cell_size = v; have[4] = true; }
            else h.nodata = v;
            row_start = in.tellg();
        } else {
            char* end = nullptr;
            std::strtod(key.c_str(), &end);
            if (end != key.c_str() + key.size())
                throw DataError("grid header: unexpected key '" + key + "'");
            break; // first data token
        }
    }
    const char* names[5] = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize"};
    for (int i = 0; i < 5; ++i)
        if (!have[i]) throw DataError(std::string("grid header: missing key '") + names[i] + "'");
    if (h.ncols <= 0 || h.nrows <= 0) throw DataError("grid header: ncols/nrows must be positive");
    if (!(h.cell_size > 0.0)) throw DataError("grid header: cellsize must be positive");

    in.clear();
    in.seekg(row_start);
    Raster<T> r(h, static_cast<T>(h.nodata));
    const std::size_t n = h.cell_count();
    std::string tok;
    std::size_t i = 0;
    while (in >> tok) {
        if (i >= n) throw DataError("grid: more values than ncols*nrows in '" + path + "'");
        r[i++] = static_cast<T>(detail::parse_number(tok, "values"));
    }
    if (i != n)
        throw DataError("grid: truncated, expected " + std::to_string(n) + " values, got " +
                        std::to_string(i) + " in '" + path + "'");
    return r;
}

template <class T>
void write_ascii_grid(const Raster<T>& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("grid: cannot write '" + path + "'");
    const GridHeader& h = r.header();
    out << "ncols " << h.ncols << "\n";
    out << "nrows " << h.nrows << "\n";
    out << "xllcorner " << format_double(h.x_origin) << "\n";
    out << "yllcorner " << format_double(h.y_origin) << "\n";
    out << "cellsize " << format_double(h.cell_size) << "\n";
    out << "nodata_value " << format_double(h.nodata) << "\n";
    for (int row = 0; row < h.nrows; ++row) {
        for (int col = 0; col < h.ncols; ++col) {
            if (col) out << ' ';
            if constexpr (std::is_floating_point_v<T>) {
                out << format_double(r.at(col, row));
            } else {
                out << r.at(col, row);
            }
        }
        out << '\n';
    }
    if (!out) throw DataError("grid: write failed for '" + path + "'");
}

// Bilinear resample onto a target header. Source cell centers are the
// interpolation nodes; queries outside the center hull clamp to the edge.
// Any nodata among the four surrounding nodes yields nodata.
inline Raster<double> resample_bilinear(const Raster<double>& src, const GridHeader& target) {
    const GridHeader& sh = src.header();
    Raster<double> out(target, target.nodata);
    for (int row = 0; row < target.nrows; ++row) {
        for (int col = 0; col < target.ncols; ++col) {
            const double x = target.cell_center_x(col);
            const double y = target.cell_center_y(row);
            // fractional position in source cell-center coordinates
            double gx = (x - sh.x_origin) / sh.cell_size - 0.5;
            double gy = (y - sh.y_origin) / sh.cell_size - 0.5; // measured from south
            gx = std::clamp(gx, 0.0, static_cast<double>(sh.ncols - 1));
            gy = std::clamp(gy, 0.0, static_cast<double>(sh.nrows - 1));
            const int c0 = std::min(static_cast<int>(std::floor(gx)), sh.ncols - 1);
            const int r0s = std::min(static_cast<int>(std::floor(gy)), sh.nrows - 1);
            const int c1 = std::min(c0 + 1, sh.ncols - 1);
            const int r1s = std::min(r0s + 1, sh.nrows - 1);
            const double tx = gx - c0;
            const double ty = gy - r0s;
            // convert south-based rows to storage rows (row 0 = north)
            const int r0 = sh.nrows - 1 - r0s;
            const int r1 = sh.nrows - 1 - r1s;
            const double v00 = src.at(c0, r0), v10 = src.at(c1, r0);
            const double v01 = src.at(c0, r1), v11 = src.at(c1, r1);
            if (src.value_is_nodata(v00) || src.value_is_nodata(v10) ||
                src.value_is_nodata(v01) || src.value_is_nodata(v11)) {
                out.at(col, row) = target.nodata;
                continue;
            }
            const double v0 = v00 * (1.0 - tx) + v10 * tx;
            const double v1 = v01 * (1.0 - tx) + v11 * tx;
            out.at(col, row) = v0 * (1.0 - ty) + v1 * ty;
        }
    }
    return out;
}

// Elementwise map with nodata propagation.
template <class T, class F>
Raster<double> map_cells(const Raster<T>& src, F&& f) {
    GridHeader h = src.header();
    Raster<double> out(h, h.nodata);
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src.is_nodata(i)) continue;
        out[i] = f(static_cast<double>(src[i]));
    }
    return out;
}

} // namespace incise
