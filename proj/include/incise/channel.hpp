#pragma once

// Channel network extraction from a routed DEM.
//
// Channel cells are those whose drainage area reaches a pixel-count
// threshold. The network inherits the flow field's tree structure; nodes are
// ordered downstream-before-upstream. Segments run junction to junction: a
// segment starts at a channel head or a junction node and extends downstream
// up to (not including) the next junction, or through the outlet. A junction
// node therefore belongs to the segment continuing downstream of it.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "incise/csv.hpp"
#include "incise/errors.hpp"
#include "incise/flow.hpp"
#include "incise/raster.hpp"

namespace incise {

struct ChannelNode {
    int cell = -1;          // raster cell index
    double z = 0.0;         // elevation, m
    double area = 0.0;      // drainage area, m^2
    int strahler = 1;
    int downstream = -1;    // node index of the next channel node; -1 at outlets
    double flow_dist = 0.0; // along-flow distance from the outlet, m
    double chi = std::numeric_limits<double>::quiet_NaN(); // m, filled by the steepness pass
    double ksn = std::numeric_limits<double>::quiet_NaN(); // m, filled by the steepness pass
};

struct ChannelNetwork {
    GridHeader header;
    std::vector<ChannelNode> nodes;        // downstream-before-upstream
    std::vector<int> node_of_cell;         // raster-sized, -1 off-channel
    std::vector<std::vector<int>> segments; // node ids, upstream -> downstream
    std::vector<int> segment_of;           // per node
    std::vector<int> pos_in_segment;       // per node, position within its segment
    std::vector<int> channel_donor_count;  // per node
    int junction_count = 0;
    int outlet_count = 0; // channels truncated at the grid/nodata boundary

    double node_x(int id) const { return header.cell_center_x(header.col_of(nodes[static_cast<std::size_t>(id)].cell)); }
    double node_y(int id) const { return header.cell_center_y(header.row_of(nodes[static_cast<std::size_t>(id)].cell)); }
};

// Extract all cells with drainage area >= threshold_pixels cell areas and
// assemble them into a node tree with Strahler orders, junction-to-junction
// segments, and outlet distances.
inline ChannelNetwork extract_channels(const FlowField& ff, const Raster<double>& dem,
                                       const Raster<double>& area, double threshold_pixels) {
    if (!ff.header.aligned_with(dem.header()) || !ff.header.aligned_with(area.header()))
        throw DataError("extract_channels: DEM/area grids do not align with the flow field");
    if (!(threshold_pixels >= 1.0))
        throw ConfigError("extract_channels: threshold_pixels must be >= 1");

    const GridHeader& h = ff.header;
    const double min_area = threshold_pixels * h.cell_size * h.cell_size;

    ChannelNetwork net;
    net.header = h;
    net.node_of_cell.assign(h.cell_count(), -1);

    for (int c : ff.stack) {
        const std::size_t ci = static_cast<std::size_t>(c);
        if (area.is_nodata(ci) || area[ci] < min_area) continue;
        const int id = static_cast<int>(net.nodes.size());
        net.node_of_cell[ci] = id;
        ChannelNode node;
        node.cell = c;
        node.z = dem[ci];
        node.area = area[ci];
        const int r = ff.receiver[ci];
        if (r == c) {
            node.downstream = -1;
            node.flow_dist = 0.0;
            ++net.outlet_count;
        } else {
            // drainage area is nondecreasing downstream, so the receiver is
            // already a channel node (and precedes this one in stack order)
            node.downstream = net.node_of_cell[static_cast<std::size_t>(r)];
            if (node.downstream < 0)
                throw NumericalError("extract_channels: channel cell drains to a non-channel cell");
            node.flow_dist = net.nodes[static_cast<std::size_t>(node.downstream)].flow_dist + ff.step[ci];
        }
        net.nodes.push_back(node);
    }
    if (net.nodes.empty())
        throw DataError("extract_channels: no cell reaches the drainage-area threshold");

    // Channel donor counts and Strahler orders, upstream-to-downstream.
    const std::size_t nn = net.nodes.size();
    net.channel_donor_count.assign(nn, 0);
    for (std::size_t id = 0; id < nn; ++id) {
        const int down = net.nodes[id].downstream;
        if (down >= 0) ++net.channel_donor_count[static_cast<std::size_t>(down)];
    }
    {
        std::vector<int> max_order(nn, 0), max_count(nn, 0);
        for (std::size_t i = nn; i-- > 0;) { // upstream nodes first
            ChannelNode& node = net.nodes[i];
            if (net.channel_donor_count[i] == 0) {
                node.strahler = 1;
            } else {
                node.strahler = max_order[i] + (max_count[i] >= 2 ? 1 : 0);
            }
            const int down = node.downstream;
            if (down >= 0) {
                auto& mo = max_order[static_cast<std::size_t>(down)];
                auto& mc = max_count[static_cast<std::size_t>(down)];
                if (node.strahler > mo) {
                    mo = node.strahler;
                    mc = 1;
                } else if (node.strahler == mo) {
                    ++mc;
                }
            }
        }
    }

    for (std::size_t i = 0; i < nn; ++i)
        if (net.channel_donor_count[i] >= 2) ++net.junction_count;

    // Segments: walk downstream from each head or junction node and stop
    // before the next junction.
    net.segment_of.assign(nn, -1);
    net.pos_in_segment.assign(nn, -1);
    for (std::size_t i = 0; i < nn; ++i) {
        const bool starts = net.channel_donor_count[i] == 0 || net.channel_donor_count[i] >= 2;
        if (!starts) continue;
        const int seg = static_cast<int>(net.segments.size());
        std::vector<int> member;
        int cur = static_cast<int>(i);
        while (true) {
            net.segment_of[static_cast<std::size_t>(cur)] = seg;
            net.pos_in_segment[static_cast<std::size_t>(cur)] = static_cast<int>(member.size());
            member.push_back(cur);
            const int down = net.nodes[static_cast<std::size_t>(cur)].downstream;
            if (down < 0 || net.channel_donor_count[static_cast<std::size_t>(down)] >= 2) break;
            cur = down;
        }
        net.segments.push_back(std::move(member));
    }
    for (std::size_t i = 0; i < nn; ++i)
        if (net.segment_of[i] < 0)
            throw NumericalError("extract_channels: node left without a segment");

    return net;
}

// 0/1 mask of channel cells.
inline Raster<int> channel_mask(const ChannelNetwork& net) {
    GridHeader h = net.header;
    h.nodata = -9999;
    Raster<int> mask(h, 0);
    for (const auto& node : net.nodes) mask[static_cast<std::size_t>(node.cell)] = 1;
    return mask;
}

// Per raster cell, the id of the first channel node met flowing downstream
// (the cell's own node if it is a channel cell); -1 where the flow path
// exits the grid without touching the network.
inline std::vector<int> donor_channel_index(const FlowField& ff, const ChannelNetwork& net) {
    std::vector<int> idx(ff.header.cell_count(), -1);
    for (int c : ff.stack) {
        const std::size_t ci = static_cast<std::size_t>(c);
        if (net.node_of_cell[ci] >= 0) {
            idx[ci] = net.node_of_cell[ci];
            continue;
        }
        const int r = ff.receiver[ci];
        if (r != c) idx[ci] = idx[static_cast<std::size_t>(r)];
    }
    return idx;
}

// Basin labels: every cell is tagged with the segment id of its first
// channel node downstream. Cells never reaching the network get nodata.
inline Raster<int> delineate_basins(const FlowField& ff, const ChannelNetwork& net) {
    GridHeader h = ff.header;
    h.nodata = -9999;
    Raster<int> basins(h, -9999);
    const std::vector<int> idx = donor_channel_index(ff, net);
    for (int c : ff.stack) {
        const std::size_t ci = static_cast<std::size_t>(c);
        if (idx[ci] >= 0) basins[ci] = net.segment_of[static_cast<std::size_t>(idx[ci])];
    }
    return basins;
}

// Flow distance to the nearest downstream channel cell, kilometres.
inline Raster<double> fd2ch(const FlowField& ff, const ChannelNetwork& net) {
    Raster<double> len = flow_path_length(ff, channel_mask(net));
    for (std::size_t i = 0; i < len.size(); ++i)
        if (!len.is_nodata(i)) len[i] /= 1000.0;
    return len;
}

// Relief above the first downstream channel node, kilometres. On a filled
// DEM the value is nonnegative; a raw DEM can produce small negatives, whose
// count is reported through `negative_count` when provided.
inline Raster<double> rf2ch(const FlowField& ff, const ChannelNetwork& net,
                            const Raster<double>& dem, long* negative_count = nullptr) {
    if (!ff.header.aligned_with(dem.header()))
        throw DataError("rf2ch: DEM grid does not align with the flow field");
    const GridHeader& h = ff.header;
    Raster<double> relief(h, h.nodata);
    const std::vector<int> idx = donor_channel_index(ff, net);
    long negatives = 0;
    for (int c : ff.stack) {
        const std::size_t ci = static_cast<std::size_t>(c);
        if (idx[ci] < 0 || dem.is_nodata(ci)) continue;
        const auto& node = net.nodes[static_cast<std::size_t>(idx[ci])];
        const double dz = (dem[ci] - dem[static_cast<std::size_t>(node.cell)]) / 1000.0;
        if (dz < 0.0) ++negatives;
        relief[ci] = dz;
    }
    if (negative_count) *negative_count = negatives;
    return relief;
}

// Node table: one row per channel node.
inline void write_channels_csv(const ChannelNetwork& net, const std::string& path) {
    CsvWriter w(path, "node_id,x_m,y_m,z_m,area_m2,strahler,downstream_id,flow_dist_m,chi,ksn");
    for (std::size_t id = 0; id < net.nodes.size(); ++id) {
        const ChannelNode& n = net.nodes[id];
        w.row({std::to_string(id), format_double(net.node_x(static_cast<int>(id))),
               format_double(net.node_y(static_cast<int>(id))), format_double(n.z),
               format_double(n.area), std::to_string(n.strahler), std::to_string(n.downstream),
               format_double(n.flow_dist), format_double(n.chi), format_double(n.ksn)});
    }
}

} // namespace incise
