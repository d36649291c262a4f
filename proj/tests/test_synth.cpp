#include <doctest.h>

#include <cmath>
#include <numeric>

#include "nrtr/swc.hpp"
#include "nrtr/synth.hpp"

using namespace nrtr;

namespace {

std::size_t foreground_count(const Volume& mask) {
    std::size_t n = 0;
    for (float x : mask.data) n += x != 0.0f;
    return n;
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("rasterize: radius 1.5 sphere at a voxel center covers exactly 19 voxels") {
    // Integer offsets with squared norm <= 2.25: the center (1), the six
    // axis neighbors (6), the twelve edge diagonals (12).
    const SwcForest f = parse_swc("1 1 8.5 8.5 8.5 1.5 -1");
    const Volume mask = rasterize_mask(f, {17, 17, 17});
    CHECK(foreground_count(mask) == 19);
    CHECK(mask.at(8, 8, 8) == 1.0f);
    CHECK(mask.at(9, 8, 8) == 1.0f);
    CHECK(mask.at(9, 9, 8) == 1.0f);
    CHECK(mask.at(9, 9, 9) == 0.0f);  // sqrt(3) > 1.5
}

TEST_CASE("rasterize: radius 0.4 keeps only the center voxel; empty forest keeps none") {
    const SwcForest f = parse_swc("1 1 4.5 4.5 4.5 0.4 -1");
    CHECK(foreground_count(rasterize_mask(f, {9, 9, 9})) == 1);
    CHECK(foreground_count(rasterize_mask(SwcForest(), {9, 9, 9})) == 0);
}

TEST_CASE("rasterize: capsule covers the segment between nodes") {
    const SwcForest f = parse_swc("1 1 2.5 4.5 4.5 1 -1\n2 3 6.5 4.5 4.5 1 1");
    const Volume mask = rasterize_mask(f, {9, 9, 9});
    for (int x = 2; x <= 6; ++x) CHECK(mask.at(x, 4, 4) == 1.0f);
    CHECK(mask.at(4, 5, 4) == 1.0f);  // within radius of the axis
    CHECK(mask.at(4, 7, 4) == 0.0f);
    // Tapered radii: thick end covers a 2-offset, thin end does not.
    const SwcForest g = parse_swc("1 1 2.5 4.5 4.5 2.2 -1\n2 3 6.5 4.5 4.5 0.6 1");
    const Volume tapered = rasterize_mask(g, {9, 9, 9});
    CHECK(tapered.at(2, 6, 4) == 1.0f);
    CHECK(tapered.at(6, 6, 4) == 0.0f);
}

TEST_CASE("rasterize: monotone in radius") {
    SynthSpec spec;
    spec.seed = 21;
    const SwcForest f = gen_random_forest(spec);
    std::vector<SwcNode> grown = f.nodes();
    for (auto& n : grown) n.radius += 0.75;
    const Volume small_mask = rasterize_mask(f, {64, 64, 64});
    const Volume big_mask = rasterize_mask(SwcForest::from_nodes(grown), {64, 64, 64});
    for (std::size_t i = 0; i < small_mask.data.size(); ++i)
        if (small_mask.data[i] != 0.0f) CHECK(big_mask.data[i] != 0.0f);
}

TEST_CASE("rasterize: union of forests equals union of masks") {
    SynthSpec a;
    a.seed = 5;
    a.n_trees = 1;
    SynthSpec b;
    b.seed = 6;
    b.n_trees = 1;
    const SwcForest fa = gen_random_forest(a);
    const SwcForest fb = gen_random_forest(b);

    std::vector<SwcNode> both = fa.nodes();
    long long offset = 1000;
    for (SwcNode n : fb.nodes()) {
        n.id += offset;
        if (n.parent_id != -1) n.parent_id += offset;
        both.push_back(n);
    }
    const Volume ma = rasterize_mask(fa, {64, 64, 64});
    const Volume mb = rasterize_mask(fb, {64, 64, 64});
    const Volume mu = rasterize_mask(SwcForest::from_nodes(both), {64, 64, 64});
    for (std::size_t i = 0; i < mu.data.size(); ++i)
        CHECK((mu.data[i] != 0.0f) == ((ma.data[i] != 0.0f) || (mb.data[i] != 0.0f)));
}

TEST_CASE("render: zero blur and noise gives mask*foreground + background") {
    SynthSpec spec;
    spec.seed = 31;
    const SwcForest f = gen_random_forest(spec);
    RenderSpec r;
    r.noise_sd = 0;
    r.psf_sigma = 0;
    r.foreground_intensity = 20000;
    r.background_level = 1000;
    const Volume img = render_image(f, r, 0);
    const Volume mask = rasterize_mask(f, r.dims);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(img.data[i] == (mask.data[i] != 0.0f ? 21000.0f : 1000.0f));
    // Thresholding inverts the render back to the mask.
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK((img.data[i] > r.background_level + r.foreground_intensity / 2) ==
              (mask.data[i] != 0.0f));
}

TEST_CASE("render: deterministic per seed") {
    SynthSpec spec;
    spec.seed = 32;
    const SwcForest f = gen_random_forest(spec);
    RenderSpec r;
    const Volume a = render_image(f, r, 77);
    const Volume b = render_image(f, r, 77);
    CHECK(a.data == b.data);
    const Volume c = render_image(f, r, 78);
    CHECK(a.data != c.data);
}

TEST_CASE("render: background-only mean within 3 sigma of the level") {
    RenderSpec r;
    r.dims = {32, 32, 32};
    r.noise_sd = 300;
    r.psf_sigma = 0;
    r.background_level = 5000;
    const Volume img = render_image(SwcForest(), r, 123);
    const double mean =
        std::accumulate(img.data.begin(), img.data.end(), 0.0) / img.data.size();
    const double bound = 3.0 * 300.0 / std::sqrt(32.0 * 32.0 * 32.0);
    CHECK(std::abs(mean - 5000.0) < bound);
}

TEST_CASE("gen_random_forest: tree count, radii range, determinism, validity") {
    SynthSpec spec;
    spec.seed = 9;
    spec.n_trees = 2;
    spec.radius_range = {1.5, 3.0};
    const SwcForest f = gen_random_forest(spec);
    CHECK(f.roots().size() == 2);
    for (const auto& n : f.nodes()) {
        CHECK(n.radius >= 1.5);
        CHECK(n.radius <= 3.0);
        for (int a = 0; a < 3; ++a) {
            CHECK(n.center[a] >= 0.0);
            CHECK(n.center[a] < 64.0);
        }
    }
    CHECK(validate(f).ok());
    CHECK(write_swc(gen_random_forest(spec)) == write_swc(f));
}

TEST_CASE("gen_random_forest: infeasible specs are rejected") {
    SynthSpec spec;
    spec.step_range = {100.0, 120.0};
    CHECK_THROWS_AS(gen_random_forest(spec), std::runtime_error);
    SynthSpec bad_radius;
    bad_radius.radius_range = {40.0, 40.0};
    CHECK_THROWS_AS(gen_random_forest(bad_radius), std::runtime_error);
}

TEST_CASE("cube symmetries: id 0 is the identity, all 48 distinct") {
    Volume v;
    v.dims = {4, 4, 4};
    v.data.resize(64);
    for (std::size_t i = 0; i < 64; ++i) v.data[i] = static_cast<float>(i);
    CHECK(apply_symmetry(v, 0).data == v.data);
    std::vector<std::vector<float>> images;
    for (int id = 0; id < 48; ++id) images.push_back(apply_symmetry(v, id).data);
    for (int i = 0; i < 48; ++i)
        for (int j = i + 1; j < 48; ++j) CHECK(images[i] != images[j]);
    CHECK_THROWS_AS(apply_symmetry(v, 48), std::invalid_argument);
}

TEST_CASE("rasterize commutes with cube symmetries exactly") {
    for (std::uint64_t seed : {41, 42, 43}) {
        SynthSpec spec;
        spec.seed = seed;
        spec.dims = {32, 32, 32};
        spec.nodes_per_tree = {6, 10};
        spec.step_range = {2.0, 4.0};
        const SwcForest f = gen_random_forest(spec);
        const Volume mask = rasterize_mask(f, spec.dims);
        for (int id : {0, 1, 7, 13, 25, 38, 47}) {
            const Volume a = apply_symmetry(mask, id);
            const Volume b = rasterize_mask(apply_symmetry(f, id, spec.dims), spec.dims);
            CHECK(a.data == b.data);
        }
    }
}

}  // TEST_SUITE
