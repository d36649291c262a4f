#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <fstream>

#include "nrtr/rng.hpp"
#include "nrtr/volume.hpp"
#include "support.hpp"

using namespace nrtr;

namespace {

void write_raw_volume(const std::string& base, const std::array<int, 3>& dims,
                      const std::string& dtype, const std::vector<std::uint16_t>& samples) {
    std::ofstream h(base + ".json");
    h << "{\"dims\":[" << dims[0] << "," << dims[1] << "," << dims[2] << "],\"dtype\":\"" << dtype
      << "\",\"spacing\":[1,1,1],\"order\":\"x-fastest\"}";
    h.close();
    std::ofstream r(base + ".raw", std::ios::binary);
    for (std::uint16_t s : samples) {
        if (dtype == "u8") {
            const char b = static_cast<char>(s & 0xff);
            r.write(&b, 1);
        } else {
            const char lo = static_cast<char>(s & 0xff);
            const char hi = static_cast<char>(s >> 8);
            r.write(&lo, 1);
            r.write(&hi, 1);
        }
    }
}

Volume make_volume(const std::array<int, 3>& dims, const std::vector<float>& data) {
    Volume v;
    v.dims = dims;
    v.data = data;
    return v;
}

}  // namespace

TEST_SUITE("volume") {

TEST_CASE("load: 8-bit data is scaled by 257; 16-bit loads unchanged") {
    testutil::TempDir tmp("vol_load");
    write_raw_volume(tmp.file("a"), {4, 4, 4}, "u8", std::vector<std::uint16_t>(64, 100));
    const Volume a = load_volume(tmp.file("a.json"));
    CHECK(a.dims == std::array<int, 3>{4, 4, 4});
    for (float x : a.data) CHECK(x == 25700.0f);

    write_raw_volume(tmp.file("b"), {2, 2, 2}, "u16", {0, 1, 2, 3, 4, 5, 6, 65535});
    const Volume b = load_volume(tmp.file("b"));
    CHECK(b.data[0] == 0.0f);
    CHECK(b.data[7] == 65535.0f);
}

TEST_CASE("load: payload length mismatch is an error") {
    testutil::TempDir tmp("vol_mismatch");
    write_raw_volume(tmp.file("c"), {2, 2, 2}, "u8", std::vector<std::uint16_t>(7, 1));
    CHECK_THROWS_WITH_AS(load_volume(tmp.file("c")),
                         doctest::Contains("length mismatch"), std::runtime_error);
}

TEST_CASE("save/load round trip") {
    testutil::TempDir tmp("vol_rt");
    Volume v = make_volume({3, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 65535});
    v.spacing = {0.5, 0.5, 2.0};
    save_volume(v, tmp.file("v"));
    const Volume w = load_volume(tmp.file("v"));
    CHECK(w.dims == v.dims);
    CHECK(w.spacing == v.spacing);
    CHECK(w.data == v.data);
}

TEST_CASE("upsample: factor 1 is the identity") {
    const Volume v = make_volume({2, 2, 1}, {1, 2, 3, 4});
    const Volume u = upsample_trilinear(v, 1);
    CHECK(u.data == v.data);
}

TEST_CASE("upsample: constants stay constant") {
    const Volume v = make_volume({3, 3, 3}, std::vector<float>(27, 7.0f));
    const Volume u = upsample_trilinear(v, 4);
    CHECK(u.dims == std::array<int, 3>{12, 12, 12});
    for (float x : u.data) CHECK(x == doctest::Approx(7.0f));
}

TEST_CASE("upsample: hand-evaluated 1-D profile [0,10] x2 -> [0,2.5,7.5,10]") {
    const Volume v = make_volume({2, 1, 1}, {0.0f, 10.0f});
    const Volume u = upsample_trilinear(v, 2);
    REQUIRE(u.dims == std::array<int, 3>{4, 2, 2});
    CHECK(u.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(u.at(1, 0, 0) == doctest::Approx(2.5));
    CHECK(u.at(2, 0, 0) == doctest::Approx(7.5));
    CHECK(u.at(3, 0, 0) == doctest::Approx(10.0));
    CHECK(u.spacing[0] == doctest::Approx(0.5));
}

TEST_CASE("upsample: output stays within the input min/max envelope") {
    Rng rng(7);
    std::vector<float> data(5 * 4 * 3);
    for (auto& x : data) x = static_cast<float>(rng.uniform(0, 65535));
    const Volume v = make_volume({5, 4, 3}, data);
    const float lo = *std::min_element(data.begin(), data.end());
    const float hi = *std::max_element(data.begin(), data.end());
    const Volume u = upsample_trilinear(v, 3);
    for (float x : u.data) {
        CHECK(x >= lo - 1e-3f);
        CHECK(x <= hi + 1e-3f);
    }
}

TEST_CASE("blockify: grids, boundary clamp, and failure on small volumes") {
    Volume v;
    v.dims = {128, 128, 128};
    CHECK(blockify(v, 64, 0).size() == 8);

    v.dims = {100, 100, 100};
    const auto origins = blockify(v, 64, 0);
    CHECK(origins.size() == 8);
    for (const auto& o : origins)
        for (int a = 0; a < 3; ++a) CHECK((o[a] == 0 || o[a] == 36));

    v.dims = {64, 64, 64};
    const auto single = blockify(v, 64, 0);
    REQUIRE(single.size() == 1);
    CHECK(single[0] == std::array<int, 3>{0, 0, 0});

    v.dims = {63, 64, 64};
    CHECK_THROWS_AS(blockify(v, 64, 0), std::runtime_error);
    v.dims = {64, 64, 64};
    CHECK_THROWS_AS(blockify(v, 64, 64), std::invalid_argument);
}

TEST_CASE("blockify: every voxel is covered, origins non-negative") {
    Volume v;
    v.dims = {70, 100, 65};
    for (int overlap : {0, 16}) {
        const auto origins = blockify(v, 64, overlap);
        std::vector<char> covered_x(v.dims[0], 0);
        for (const auto& o : origins) {
            for (int a = 0; a < 3; ++a) {
                CHECK(o[a] >= 0);
                CHECK(o[a] + 64 <= v.dims[a]);
            }
            for (int x = o[0]; x < o[0] + 64; ++x) covered_x[x] = 1;
        }
        for (char c : covered_x) CHECK(c == 1);
    }
}

TEST_CASE("is_empty_block: threshold fraction logic") {
    Block b;
    b.size = 64;
    b.data.assign(64 * 64 * 64, 0.0f);
    CHECK(is_empty_block(b, 0.5f, 0.001f));

    std::fill(b.data.begin(), b.data.end(), 1.0f);
    CHECK_FALSE(is_empty_block(b, 0.5f, 0.001f));

    // 300 voxels above threshold out of 64^3: 300/262144 > 0.001.
    std::fill(b.data.begin(), b.data.end(), 0.0f);
    for (int i = 0; i < 300; ++i) b.data[static_cast<std::size_t>(i) * 801] = 1.0f;
    CHECK_FALSE(is_empty_block(b, 0.5f, 0.001f));
    // 261 voxels is below the 0.001 fraction (262.144 voxels).
    std::fill(b.data.begin(), b.data.end(), 0.0f);
    for (int i = 0; i < 261; ++i) b.data[static_cast<std::size_t>(i) * 801] = 1.0f;
    CHECK(is_empty_block(b, 0.5f, 0.001f));
}

TEST_CASE("normalize: constant blocks map to zero, output in [0,1]") {
    Block b;
    b.size = 4;
    b.data.assign(64, 1234.0f);
    const Block n = normalize(b);
    for (float x : n.data) CHECK(x == 0.0f);

    Rng rng(3);
    for (auto& x : b.data) x = static_cast<float>(rng.uniform(0, 65535));
    const Block m = normalize(b);
    for (float x : m.data) {
        CHECK(x >= 0.0f);
        CHECK(x <= 1.0f);
    }
}

TEST_CASE("normalize: two-value histogram maps to 0 and 1") {
    // 99% zeros and 1% at 65535: p1 = 0, p99.5 = 65535.
    Block b;
    b.size = 10;
    b.data.assign(1000, 0.0f);
    for (int i = 0; i < 10; ++i) b.data[static_cast<std::size_t>(i) * 97 + 3] = 65535.0f;
    const Block n = normalize(b);
    for (std::size_t i = 0; i < b.data.size(); ++i)
        CHECK(n.data[i] == (b.data[i] > 0 ? 1.0f : 0.0f));
}

TEST_CASE("normalize: monotone non-decreasing in input intensity") {
    Rng rng(11);
    Block b;
    b.size = 8;
    b.data.resize(512);
    for (auto& x : b.data) x = static_cast<float>(rng.uniform(0, 65535));
    const Block n = normalize(b);
    for (std::size_t i = 0; i < b.data.size(); ++i)
        for (std::size_t j = 0; j < b.data.size(); j += 37)
            if (b.data[i] <= b.data[j]) CHECK(n.data[i] <= n.data[j]);
}

TEST_CASE("extract_block: scales to [0,1] and respects bounds") {
    Volume v = make_volume({4, 4, 4}, std::vector<float>(64, 65535.0f));
    const Block b = extract_block(v, {0, 0, 0}, 4);
    for (float x : b.data) CHECK(x == 1.0f);
    CHECK_THROWS_AS(extract_block(v, {1, 0, 0}, 4), std::out_of_range);
}

}  // TEST_SUITE
