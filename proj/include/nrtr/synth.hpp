#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include "nrtr/swc.hpp"
#include "nrtr/volume.hpp"

namespace nrtr {

/// Image-formation parameters for synthetic renders. Intensities are in
/// the 16-bit range of Volume.
struct RenderSpec {
    std::array<int, 3> dims{64, 64, 64};
    float foreground_intensity = 20000.0f;
    float background_level = 1000.0f;
    float noise_sd = 300.0f;
    float psf_sigma = 0.8f;  // voxels
};

/// Random-forest generation parameters. All lengths are in voxels.
struct SynthSpec {
    std::array<int, 3> dims{64, 64, 64};
    int n_trees = 2;
    std::array<int, 2> nodes_per_tree{8, 16};
    std::array<double, 2> radius_range{2.0, 4.0};
    double branch_probability = 0.15;
    std::array<double, 2> step_range{3.0, 6.0};
    std::uint64_t seed = 0;
};

/// Rasterizes a forest into a binary mask (0/1 intensities). A voxel is
/// foreground iff its center lies inside some parent-child capsule with
/// linearly interpolated radius, or inside the sphere of an isolated root.
Volume rasterize_mask(const SwcForest& forest, const std::array<int, 3>& dims);

/// mask * foreground + background, separable Gaussian blur (kernel
/// truncated at 3 sigma, replicate borders), i.i.d. Gaussian noise,
/// clamped to [0, 65535]. Deterministic per seed.
Volume render_image(const SwcForest& forest, const RenderSpec& spec, std::uint64_t seed);

/// Random-walk trees with branching. Node coordinates and radii are
/// quantized to 1/1024 voxel so cube-symmetry transforms are exact in
/// double precision. Output always passes validate().
SwcForest gen_random_forest(const SynthSpec& spec);

/// Applies one of the 48 cube symmetries (id = axis-permutation * 8 +
/// flip mask; id 0 is the identity) to voxel data of a cubic volume.
Volume apply_symmetry(const Volume& v, int symmetry_id);

/// The same symmetry applied to forest node coordinates (x -> s - x on
/// flipped axes, axes permuted); radii and tags unchanged.
SwcForest apply_symmetry(const SwcForest& forest, int symmetry_id, const std::array<int, 3>& dims);

/// Decomposition of a symmetry id: output axis a reads input axis
/// perm[a], mirrored when flip[a] is set.
struct CubeSymmetry {
    std::array<int, 3> perm;
    std::array<bool, 3> flip;
};
CubeSymmetry cube_symmetry(int symmetry_id);

}  // namespace nrtr
