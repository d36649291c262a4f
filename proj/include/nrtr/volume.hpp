#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace nrtr {

/// 3D scalar intensity grid. Data is stored as float in the 16-bit range
/// [0, 65535] regardless of the on-disk dtype; layout is x-fastest, then y,
/// then z (flat index x + W*(y + H*z)).
struct Volume {
    std::array<int, 3> dims{0, 0, 0};              // (W, H, D)
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // um/voxel, metadata only
    std::vector<float> data;

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(y) +
                                                    static_cast<std::size_t>(dims[1]) * z);
    }
    float at(int x, int y, int z) const { return data[index(x, y, z)]; }
    float& at(int x, int y, int z) { return data[index(x, y, z)]; }
};

/// Fixed-size cubic crop of a parent volume with intensities in [0, 1].
struct Block {
    std::array<int, 3> origin{0, 0, 0};
    int size = 64;
    std::vector<float> data;  // x-fastest, size^3 values

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(size) * (static_cast<std::size_t>(y) +
                                                 static_cast<std::size_t>(size) * z);
    }
};

/// Loads a volume from the container format: a JSON header `{name}.json`
/// ({"dims":[W,H,D],"dtype":"u8"|"u16","spacing":[sx,sy,sz],
/// "order":"x-fastest"}) plus a raw little-endian payload `{name}.raw`.
/// 8-bit data is scaled by 257 so 255 maps to 65535. `path` may name the
/// header file or the common basename.
Volume load_volume(const std::string& path);

/// Writes the container pair. dtype is "u8" or "u16"; values are rounded
/// and clamped to the dtype range.
void save_volume(const Volume& v, const std::string& path, const std::string& dtype = "u16");

/// Integer-factor trilinear upsampling. Output sample i reads the input at
/// (i + 0.5) / factor - 0.5 per axis, clamped at the borders; spacing is
/// divided by the factor.
Volume upsample_trilinear(const Volume& v, int factor);

/// Block origins covering the volume with stride (block_size - overlap).
/// The final block per axis is shifted inward to end at the boundary.
/// Throws if the volume is smaller than block_size on any axis.
std::vector<std::array<int, 3>> blockify(const Volume& v, int block_size = 64, int overlap = 0);

/// Cuts a block and maps intensities to [0, 1] by dividing by 65535.
/// This is the pre-normalization block used for emptiness filtering.
Block extract_block(const Volume& v, const std::array<int, 3>& origin, int block_size);

/// True iff the fraction of voxels brighter than fg_threshold is below
/// min_fraction. Thresholds are in the block's own intensity scale.
bool is_empty_block(const Block& b, float fg_threshold, float min_fraction);

/// Percentile normalization x -> clamp((x - p1) / (p99.5 - p1), 0, 1)
/// computed on the block's own histogram; constant blocks map to zero.
Block normalize(const Block& raw);

/// Nearest-rank percentile of `values` at q in [0, 100] (index
/// round(q/100 * (n-1)) of the sorted data).
float percentile(std::vector<float> values, double q);

}  // namespace nrtr
