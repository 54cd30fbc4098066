#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "incise/flow.hpp"

using namespace incise;

namespace {

GridHeader header(int ncols, int nrows, double cs = 30.0) {
    GridHeader h;
    h.ncols = ncols;
    h.nrows = nrows;
    h.cell_size = cs;
    return h;
}

Raster<double> grid_of(int ncols, int nrows, std::initializer_list<double> vals, double cs = 30.0) {
    Raster<double> r(header(ncols, nrows, cs), 0.0);
    std::size_t i = 0;
    for (double v : vals) r[i++] = v;
    REQUIRE(i == r.size());
    return r;
}

double outlet_area_sum(const FlowField& ff, const Raster<double>& area) {
    double s = 0.0;
    for (int c : ff.stack)
        if (ff.is_outlet(c)) s += area[static_cast<std::size_t>(c)];
    return s;
}

} // namespace

TEST_CASE("priority flood raises a pit to its spill level") {
    // Ring at 5 with one low edge cell at 4; the centre pit at 1 must rise
    // to exactly the spill elevation 4 (epsilon 0).
    Raster<double> dem = grid_of(3, 3, {5, 5, 5, 5, 1, 4, 5, 5, 5});
    Raster<double> filled = fill_depressions(dem);
    REQUIRE(filled.at(1, 1) == 4.0);
    for (std::size_t i = 0; i < dem.size(); ++i) REQUIRE(filled[i] >= dem[i]);

    Raster<double> twice = fill_depressions(filled);
    for (std::size_t i = 0; i < dem.size(); ++i) REQUIRE(twice[i] == filled[i]);
}

TEST_CASE("d8 picks the steepest downhill grade, ties to the first cardinal") {
    // centre 10: E drops 1 (grade 1/30), SE drops 8 (grade 8/(30*sqrt 2), steeper)
    Raster<double> dem = grid_of(3, 3, {20, 20, 20, 20, 10, 9, 20, 20, 2});
    FlowField ff = d8_flow(fill_depressions(dem));
    REQUIRE(ff.receiver[4] == 8);

    // equal drops east and north: enumeration order E, N, W, S picks E
    Raster<double> tie = grid_of(3, 3, {20, 9, 20, 20, 10, 9, 20, 20, 20});
    FlowField fft = d8_flow(fill_depressions(tie));
    REQUIRE(fft.receiver[4] == 5);
}

TEST_CASE("flat cells drain to the earliest-popped equal neighbour") {
    // Fully flat surface: every cell is a boundary seed, pop order follows
    // cell index, so cell 0 is the single outlet and flats drain toward it.
    Raster<double> dem = grid_of(3, 3, {5, 5, 5, 5, 5, 5, 5, 5, 5});
    FlowField ff = d8_flow(dem);
    int outlets = 0;
    for (int c = 0; c < 9; ++c)
        if (ff.is_outlet(c)) ++outlets;
    REQUIRE(outlets == 1);
    REQUIRE(ff.is_outlet(0));
    REQUIRE(ff.receiver[1] == 0);

    Raster<double> area = accumulate(ff);
    REQUIRE(area[0] == 9.0 * 900.0);
}

TEST_CASE("unfilled interior pit is rejected") {
    Raster<double> dem = grid_of(3, 3, {5, 5, 5, 5, 1, 5, 5, 5, 5});
    REQUIRE_THROWS_AS(d8_flow(dem), NumericalError);
}

TEST_CASE("two chains joining one outlet accumulate 11 cells") {
    // Two five-cell chains flow west along rows 0 and 2 into a shared west
    // edge outlet (0,1); everything else is nodata. 11 valid cells at 30 m:
    // outlet area = 11 * 900 m^2.
    const double nd = -9999.0;
    Raster<double> dem = grid_of(6, 3,
                                 {nd, 2, 3, 4, 5, 6,
                                  1, nd, nd, nd, nd, nd,
                                  nd, 2, 3, 4, 5, 6});
    FlowField ff = d8_flow(fill_depressions(dem));
    REQUIRE(ff.n_valid == 11);
    REQUIRE(ff.is_outlet(6));
    Raster<double> area = accumulate(ff);
    REQUIRE(area[6] == 11.0 * 900.0);
    REQUIRE(outlet_area_sum(ff, area) == 11.0 * 900.0);

    // the diagonal step into the outlet then a cardinal step upstream
    REQUIRE(ff.step[1] == 30.0 * std::sqrt(2.0));
    REQUIRE(ff.step[2] == 30.0);
}

TEST_CASE("flow path length accumulates step distances to the mask") {
    const double nd = -9999.0;
    Raster<double> dem = grid_of(6, 3,
                                 {nd, 2, 3, 4, 5, 6,
                                  1, nd, nd, nd, nd, nd,
                                  nd, 2, 3, 4, 5, 6});
    FlowField ff = d8_flow(fill_depressions(dem));

    GridHeader mh = dem.header();
    mh.nodata = -9999;
    Raster<int> mask(mh, 0);
    mask[6] = 1; // the outlet
    Raster<double> len = flow_path_length(ff, mask);
    REQUIRE(len[6] == 0.0);
    REQUIRE(len[1] == 30.0 * std::sqrt(2.0));
    REQUIRE_THAT(len[2], Catch::Matchers::WithinAbs(30.0 * (1.0 + std::sqrt(2.0)), 1e-9));

    // mask away from the outlet: downstream cells never meet it -> nodata
    Raster<int> mask2(mh, 0);
    mask2[3] = 1; // cell (3,0)
    Raster<double> len2 = flow_path_length(ff, mask2);
    REQUIRE(len2[4] == 30.0);
    REQUIRE(len2.is_nodata(2));
    REQUIRE(len2.is_nodata(6));
    REQUIRE(len2.is_nodata(8)); // other chain
}

TEST_CASE("mass conservation on a random surface") {
    std::mt19937_64 rng(20240817ULL);
    std::uniform_real_distribution<double> uz(0.0, 100.0);
    Raster<double> dem(header(20, 20), 0.0);
    for (std::size_t i = 0; i < dem.size(); ++i) dem[i] = uz(rng);
    // punch a nodata hole
    for (int row = 7; row < 11; ++row)
        for (int col = 9; col < 12; ++col) dem.at(col, row) = dem.nodata_value();

    FlowField ff = d8_flow(fill_depressions(dem));
    REQUIRE(ff.n_valid == 400 - 12);
    Raster<double> area = accumulate(ff);
    REQUIRE(outlet_area_sum(ff, area) == (400.0 - 12.0) * 900.0);

    // stack invariant: every receiver appears before its donors
    std::vector<int> pos(dem.size(), -1);
    for (std::size_t i = 0; i < ff.stack.size(); ++i) pos[static_cast<std::size_t>(ff.stack[i])] = static_cast<int>(i);
    for (int c : ff.stack) {
        const int r = ff.receiver[static_cast<std::size_t>(c)];
        REQUIRE(pos[static_cast<std::size_t>(r)] <= pos[static_cast<std::size_t>(c)]);
    }

    // area is nondecreasing downstream
    for (int c : ff.stack) {
        const int r = ff.receiver[static_cast<std::size_t>(c)];
        if (r != c) REQUIRE(area[static_cast<std::size_t>(r)] >= area[static_cast<std::size_t>(c)]);
    }
}

TEST_CASE("finalize_flow_field builds donors and stack from receivers") {
    FlowField ff;
    ff.header = header(3, 1);
    ff.receiver = {0, 0, 1};
    ff.step = {0.0, 30.0, 30.0};
    finalize_flow_field(ff);
    REQUIRE(ff.n_valid == 3);
    REQUIRE(ff.stack == std::vector<int>{0, 1, 2});
    REQUIRE(ff.donor_count(0) == 1);
    REQUIRE(ff.donor_count(1) == 1);
    REQUIRE(ff.donor_count(2) == 0);
}
