#include "nrtr/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace nrtr {

namespace {

std::string strip_suffix(const std::string& s, const std::string& suffix) {
    if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
        return s.substr(0, s.size() - suffix.size());
    return s;
}

}  // namespace

Volume load_volume(const std::string& path) {
    const std::string base = strip_suffix(strip_suffix(path, ".json"), ".raw");
    const std::string header_path = base + ".json";
    const std::string raw_path = base + ".raw";

    std::ifstream hf(header_path);
    if (!hf) throw std::runtime_error("missing volume header: " + header_path);
    nlohmann::json header;
    try {
        hf >> header;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("corrupt volume header " + header_path + ": " + e.what());
    }

    Volume v;
    try {
        auto dims = header.at("dims");
        for (int a = 0; a < 3; ++a) v.dims[a] = dims.at(a).get<int>();
        if (header.contains("spacing"))
            for (int a = 0; a < 3; ++a) v.spacing[a] = header["spacing"].at(a).get<double>();
        const std::string order = header.value("order", "x-fastest");
        if (order != "x-fastest")
            throw std::runtime_error("unsupported sample order '" + order + "'");
        const std::string dtype = header.at("dtype").get<std::string>();
        if (dtype != "u8" && dtype != "u16")
            throw std::runtime_error("unsupported dtype '" + dtype + "'");
        if (v.dims[0] <= 0 || v.dims[1] <= 0 || v.dims[2] <= 0)
            throw std::runtime_error("non-positive dims");

        std::ifstream rf(raw_path, std::ios::binary);
        if (!rf) throw std::runtime_error("missing volume payload: " + raw_path);
        rf.seekg(0, std::ios::end);
        const std::size_t bytes = static_cast<std::size_t>(rf.tellg());
        rf.seekg(0);
        const std::size_t n = v.voxel_count();
        const std::size_t sample_bytes = (dtype == "u8") ? 1 : 2;
        if (bytes != n * sample_bytes)
            throw std::runtime_error("payload length mismatch: header promises " +
                                     std::to_string(n * sample_bytes) + " bytes, file has " +
                                     std::to_string(bytes));
        v.data.resize(n);
        if (dtype == "u8") {
            std::vector<std::uint8_t> buf(n);
            rf.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
            for (std::size_t i = 0; i < n; ++i)
                v.data[i] = static_cast<float>(buf[i]) * 257.0f;  // 255 -> 65535
        } else {
            std::vector<std::uint8_t> buf(n * 2);
            rf.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 2));
            for (std::size_t i = 0; i < n; ++i)
                v.data[i] = static_cast<float>(buf[2 * i] | (buf[2 * i + 1] << 8));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("corrupt volume header " + header_path + ": " + e.what());
    }
    return v;
}

void save_volume(const Volume& v, const std::string& path, const std::string& dtype) {
    if (dtype != "u8" && dtype != "u16")
        throw std::invalid_argument("save_volume: dtype must be u8 or u16");
    if (v.data.size() != v.voxel_count())
        throw std::invalid_argument("save_volume: data length does not match dims");
    const std::string base = strip_suffix(strip_suffix(path, ".json"), ".raw");

    nlohmann::json header = {
        {"dims", {v.dims[0], v.dims[1], v.dims[2]}},
        {"dtype", dtype},
        {"spacing", {v.spacing[0], v.spacing[1], v.spacing[2]}},
        {"order", "x-fastest"},
    };
    std::ofstream hf(base + ".json", std::ios::binary);
    if (!hf) throw std::runtime_error("cannot write volume header: " + base + ".json");
    hf << header.dump(2) << "\n";

    std::ofstream rf(base + ".raw", std::ios::binary);
    if (!rf) throw std::runtime_error("cannot write volume payload: " + base + ".raw");
    const float max_value = (dtype == "u8") ? 255.0f : 65535.0f;
    for (float f : v.data) {
        const float clamped = std::clamp(std::round(f), 0.0f, max_value);
        if (dtype == "u8") {
            const std::uint8_t b = static_cast<std::uint8_t>(clamped);
            rf.write(reinterpret_cast<const char*>(&b), 1);
        } else {
            const std::uint16_t s = static_cast<std::uint16_t>(clamped);
            const std::uint8_t lo = static_cast<std::uint8_t>(s & 0xff);
            const std::uint8_t hi = static_cast<std::uint8_t>(s >> 8);
            rf.write(reinterpret_cast<const char*>(&lo), 1);
            rf.write(reinterpret_cast<const char*>(&hi), 1);
        }
    }
}

Volume upsample_trilinear(const Volume& v, int factor) {
    if (factor < 1) throw std::invalid_argument("upsample_trilinear: factor must be >= 1");
    if (factor == 1) return v;

    Volume out;
    for (int a = 0; a < 3; ++a) {
        out.dims[a] = v.dims[a] * factor;
        out.spacing[a] = v.spacing[a] / factor;
    }
    out.data.resize(out.voxel_count());

    const double inv = 1.0 / factor;
    // Per-axis source coordinate (sample-center alignment), clamped at borders.
    auto axis_coords = [&](int n_out, int n_in) {
        std::vector<std::pair<int, double>> c(n_out);  // (lower index, fraction)
        for (int i = 0; i < n_out; ++i) {
            double u = (i + 0.5) * inv - 0.5;
            u = std::clamp(u, 0.0, static_cast<double>(n_in - 1));
            int lo = std::min(static_cast<int>(u), n_in - 1);
            c[i] = {lo, u - lo};
        }
        return c;
    };
    const auto cx = axis_coords(out.dims[0], v.dims[0]);
    const auto cy = axis_coords(out.dims[1], v.dims[1]);
    const auto cz = axis_coords(out.dims[2], v.dims[2]);

    for (int z = 0; z < out.dims[2]; ++z) {
        const auto [z0, fz] = cz[z];
        const int z1 = std::min(z0 + 1, v.dims[2] - 1);
        for (int y = 0; y < out.dims[1]; ++y) {
            const auto [y0, fy] = cy[y];
            const int y1 = std::min(y0 + 1, v.dims[1] - 1);
            for (int x = 0; x < out.dims[0]; ++x) {
                const auto [x0, fx] = cx[x];
                const int x1 = std::min(x0 + 1, v.dims[0] - 1);
                const double c00 = v.at(x0, y0, z0) * (1 - fx) + v.at(x1, y0, z0) * fx;
                const double c10 = v.at(x0, y1, z0) * (1 - fx) + v.at(x1, y1, z0) * fx;
                const double c01 = v.at(x0, y0, z1) * (1 - fx) + v.at(x1, y0, z1) * fx;
                const double c11 = v.at(x0, y1, z1) * (1 - fx) + v.at(x1, y1, z1) * fx;
                const double c0 = c00 * (1 - fy) + c10 * fy;
                const double c1 = c01 * (1 - fy) + c11 * fy;
                out.at(x, y, z) = static_cast<float>(c0 * (1 - fz) + c1 * fz);
            }
        }
    }
    return out;
}

std::vector<std::array<int, 3>> blockify(const Volume& v, int block_size, int overlap) {
    if (block_size <= 0) throw std::invalid_argument("blockify: block_size must be > 0");
    if (overlap < 0 || overlap >= block_size)
        throw std::invalid_argument("blockify: need 0 <= overlap < block_size");
    for (int a = 0; a < 3; ++a)
        if (v.dims[a] < block_size)
            throw std::runtime_error("blockify: volume axis " + std::to_string(a) + " (" +
                                     std::to_string(v.dims[a]) + ") smaller than block size " +
                                     std::to_string(block_size) + "; upsample first");

    const int stride = block_size - overlap;
    std::array<std::vector<int>, 3> axis_origins;
    for (int a = 0; a < 3; ++a) {
        for (int o = 0;; o += stride) {
            if (o + block_size >= v.dims[a]) {
                axis_origins[a].push_back(v.dims[a] - block_size);  // boundary-clamped last block
                break;
            }
            axis_origins[a].push_back(o);
        }
    }
    std::vector<std::array<int, 3>> origins;
    origins.reserve(axis_origins[0].size() * axis_origins[1].size() * axis_origins[2].size());
    for (int z : axis_origins[2])
        for (int y : axis_origins[1])
            for (int x : axis_origins[0]) origins.push_back({x, y, z});
    return origins;
}

Block extract_block(const Volume& v, const std::array<int, 3>& origin, int block_size) {
    for (int a = 0; a < 3; ++a)
        if (origin[a] < 0 || origin[a] + block_size > v.dims[a])
            throw std::out_of_range("extract_block: block leaves the volume on axis " +
                                    std::to_string(a));
    Block b;
    b.origin = origin;
    b.size = block_size;
    b.data.resize(static_cast<std::size_t>(block_size) * block_size * block_size);
    constexpr float kScale = 1.0f / 65535.0f;
    for (int z = 0; z < block_size; ++z)
        for (int y = 0; y < block_size; ++y)
            for (int x = 0; x < block_size; ++x)
                b.data[b.index(x, y, z)] =
                    v.at(origin[0] + x, origin[1] + y, origin[2] + z) * kScale;
    return b;
}

bool is_empty_block(const Block& b, float fg_threshold, float min_fraction) {
    if (b.data.empty()) return true;
    std::size_t above = 0;
    for (float x : b.data)
        if (x > fg_threshold) ++above;
    return static_cast<double>(above) / static_cast<double>(b.data.size()) <
           static_cast<double>(min_fraction);
}

float percentile(std::vector<float> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of empty data");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const std::size_t idx = static_cast<std::size_t>(std::llround(pos));
    return values[std::min(idx, values.size() - 1)];
}

Block normalize(const Block& raw) {
    Block out = raw;
    if (raw.data.empty()) return out;
    const float p_lo = percentile(raw.data, 1.0);
    const float p_hi = percentile(raw.data, 99.5);
    if (p_hi <= p_lo) {
        std::fill(out.data.begin(), out.data.end(), 0.0f);
        return out;
    }
    const float scale = 1.0f / (p_hi - p_lo);
    for (float& x : out.data) x = std::clamp((x - p_lo) * scale, 0.0f, 1.0f);
    return out;
}

}  // namespace nrtr
