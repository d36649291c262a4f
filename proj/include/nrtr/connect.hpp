#pragma once

#include <array>
#include <vector>

#include "nrtr/points.hpp"
#include "nrtr/swc.hpp"

namespace nrtr {

/// A predicted point in absolute voxel coordinates.
struct GlobalPoint {
    std::array<double, 3> center{0, 0, 0};
    double radius = 0.0;
    double cls = 0.0;
    int source_block = -1;
};

/// Keeps points with cls >= threshold ("no-object" points are removed).
PointSet filter_points(const PointSet& set, double threshold = 0.5);

struct BlockPoints {
    PointSet points;  // normalized to the block
    std::array<int, 3> origin{0, 0, 0};
    int size = 64;
    int block_id = 0;
};

/// Denormalizes per-block points to absolute coordinates and greedily
/// merges pairs closer than merge_radius (ascending original pair
/// distance, then ascending indices) into cls-weighted means with max cls.
std::vector<GlobalPoint> merge_blocks(const std::vector<BlockPoints>& blocks,
                                      double merge_radius);

/// Euclidean MST over point centers, pruned at edges longer than
/// min(absolute_cap, tau*(r_i+r_j)); each component becomes one tree
/// rooted at its maximum-radius point (ties: lowest index).
SwcForest build_forest(const std::vector<GlobalPoint>& points, double prune_factor,
                       double absolute_cap);

}  // namespace nrtr
