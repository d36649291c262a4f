#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nrtr/swc.hpp"
#include "nrtr/synth.hpp"

using namespace nrtr;

TEST_SUITE("swc") {

TEST_CASE("parse: minimal two-node chain") {
    const SwcForest f = parse_swc("1 1 5 5 5 2 -1\n2 3 7 5 5 1 1");
    REQUIRE(f.size() == 2);
    CHECK(f.roots() == std::vector<long long>{1});
    const SwcNode& root = f.nodes()[f.index_of(1)];
    CHECK(root.tag == 1);
    CHECK(root.center == std::array<double, 3>{5, 5, 5});
    CHECK(root.radius == 2);
    CHECK(f.nodes()[f.index_of(2)].parent_id == 1);
    CHECK(f.children_of(1) == std::vector<long long>{2});
}

TEST_CASE("parse: comments and blank lines are skipped") {
    const SwcForest f = parse_swc("# comment\n\n  # indented comment\n1 1 0 0 0 1 -1\n");
    REQUIRE(f.size() == 1);
    CHECK(f.nodes()[0].parent_id == -1);
}

TEST_CASE("parse: two-node parent cycle is a structural error") {
    CHECK_THROWS_AS(parse_swc("1 1 0 0 0 1 2\n2 1 1 0 0 1 1"), SwcStructureError);
}

TEST_CASE("parse: malformed lines carry the line number") {
    try {
        parse_swc("1 1 0 0 0 1 -1\n2 1 zero 0 0 1 1\n");
        FAIL("expected parse error");
    } catch (const SwcParseError& e) {
        CHECK(e.line() == 2);
    }
    try {
        parse_swc("1 1 0 0 0 1\n");
        FAIL("expected parse error");
    } catch (const SwcParseError& e) {
        CHECK(e.line() == 1);
        CHECK(std::string(e.what()).find("7 fields") != std::string::npos);
    }
}

TEST_CASE("parse: duplicate id and dangling parent are structural errors") {
    CHECK_THROWS_AS(parse_swc("1 1 0 0 0 1 -1\n1 1 1 0 0 1 -1"), SwcStructureError);
    CHECK_THROWS_AS(parse_swc("1 1 0 0 0 1 99"), SwcStructureError);
}

TEST_CASE("validate: reports all violations with node ids") {
    SUBCASE("valid three-node chain is clean") {
        std::vector<SwcNode> nodes{{1, 1, {0, 0, 0}, 1.0, -1},
                                   {2, 3, {1, 0, 0}, 1.0, 1},
                                   {3, 3, {2, 0, 0}, 1.0, 2}};
        CHECK(validate(SwcForest::from_nodes(nodes)).ok());
    }
    SUBCASE("negative radius") {
        std::vector<SwcNode> nodes{{1, 1, {0, 0, 0}, -1.0, -1}};
        const auto report = validate(SwcForest::from_nodes(nodes));
        REQUIRE(report.violations.size() == 1);
        CHECK(report.violations[0].node_id == 1);
        CHECK(report.violations[0].message.find("radius") != std::string::npos);
    }
    SUBCASE("dangling parent 99") {
        std::vector<SwcNode> nodes{{1, 1, {0, 0, 0}, 1.0, 99}};
        const auto report = validate(SwcForest::from_nodes(nodes));
        REQUIRE(report.violations.size() == 1);
        CHECK(report.violations[0].message.find("dangling") != std::string::npos);
    }
    SUBCASE("three-node cycle") {
        std::vector<SwcNode> nodes{{1, 1, {0, 0, 0}, 1.0, 3},
                                   {2, 1, {1, 0, 0}, 1.0, 1},
                                   {3, 1, {2, 0, 0}, 1.0, 2}};
        CHECK_FALSE(validate(SwcForest::from_nodes(nodes)).ok());
    }
}

TEST_CASE("write: single root ends in -1, forests keep their root count") {
    const SwcForest one = parse_swc("1 1 0.5 0 0 1 -1");
    const std::string text = write_swc(one);
    CHECK(text == "1 1 0.500000 0.000000 0.000000 1.000000 -1\n");

    const SwcForest two = parse_swc("1 1 0 0 0 1 -1\n5 1 9 9 9 1 -1\n2 3 1 0 0 1 1");
    const std::string out = write_swc(two);
    int roots = 0;
    std::istringstream lines(out);
    std::string line;
    while (std::getline(lines, line))
        if (line.size() >= 2 && line.substr(line.size() - 2) == "-1") ++roots;
    CHECK(roots == 2);
}

TEST_CASE("write: parents always precede children") {
    // Input deliberately lists a child before its parent.
    const SwcForest f = parse_swc("3 3 2 0 0 1 1\n1 1 0 0 0 1 -1\n2 3 1 0 0 1 1");
    const std::string out = write_swc(f);
    std::istringstream lines(out);
    std::string line;
    std::vector<long long> seen;
    while (std::getline(lines, line)) {
        std::istringstream ls(line);
        long long id, tag, parent;
        double x, y, z, r;
        ls >> id >> tag >> x >> y >> z >> r >> parent;
        if (parent != -1)
            CHECK(std::find(seen.begin(), seen.end(), parent) != seen.end());
        seen.push_back(id);
    }
}

TEST_CASE("round-trip: parse(write(F)) == F on generated forests") {
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        SynthSpec spec;
        spec.seed = seed;
        spec.n_trees = 3;
        const SwcForest f = gen_random_forest(spec);
        const SwcForest g = parse_swc(write_swc(f));
        REQUIRE(f.size() == g.size());
        for (const auto& n : f.nodes()) {
            const long long gi = g.index_of(n.id);
            REQUIRE(gi >= 0);
            const SwcNode& m = g.nodes()[gi];
            CHECK(m.tag == n.tag);
            CHECK(m.parent_id == n.parent_id);
            // printed with 6 decimals: worst-case rounding is half an ulp
            for (int a = 0; a < 3; ++a)
                CHECK(std::abs(m.center[a] - n.center[a]) <= 5.001e-7);
            CHECK(std::abs(m.radius - n.radius) <= 5.001e-7);
        }
    }
}

TEST_CASE("block_ground_truth: normalization and the half-open convention") {
    const SwcForest f = parse_swc("1 1 10 20 30 2 -1");
    const PointSet set = block_ground_truth(f, {0, 0, 0}, 64);
    REQUIRE(set.size() == 1);
    CHECK(set.points[0].a == doctest::Approx(0.15625).epsilon(1e-12));
    CHECK(set.points[0].b == doctest::Approx(0.3125).epsilon(1e-12));
    CHECK(set.points[0].c == doctest::Approx(0.46875).epsilon(1e-12));
    CHECK(set.points[0].r == doctest::Approx(0.03125).epsilon(1e-12));
    CHECK(set.points[0].cls == 1.0);

    CHECK(block_ground_truth(parse_swc("1 1 70 0 0 1 -1"), {0, 0, 0}, 64).empty());
    CHECK(block_ground_truth(parse_swc("1 1 64 0 0 1 -1"), {0, 0, 0}, 64).empty());

    const PointSet at_origin = block_ground_truth(parse_swc("1 1 0 0 0 1 -1"), {0, 0, 0}, 64);
    REQUIRE(at_origin.size() == 1);
    CHECK(at_origin.points[0].a == 0.0);
    CHECK(at_origin.points[0].b == 0.0);
    CHECK(at_origin.points[0].c == 0.0);
}

TEST_CASE("block_ground_truth: disjoint tiling partitions the node set") {
    SynthSpec spec;
    spec.seed = 99;
    spec.dims = {96, 96, 96};
    spec.n_trees = 4;
    spec.nodes_per_tree = {20, 30};
    const SwcForest f = gen_random_forest(spec);
    std::size_t covered = 0;
    for (int z = 0; z < 96; z += 32)
        for (int y = 0; y < 96; y += 32)
            for (int x = 0; x < 96; x += 32)
                covered += block_ground_truth(f, {double(x), double(y), double(z)}, 32).size();
    CHECK(covered == f.size());
}

TEST_CASE("validate accepts exactly the forests write_swc accepts") {
    std::vector<SwcNode> bad{{1, 1, {0, 0, 0}, 1.0, 42}};
    const SwcForest f = SwcForest::from_nodes(bad);
    CHECK_FALSE(validate(f).ok());
    CHECK_THROWS_AS(write_swc(f), SwcStructureError);
}

}  // TEST_SUITE
