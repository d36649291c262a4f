#pragma once

#include <array>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "nrtr/points.hpp"

namespace nrtr {

/// Syntax-level failure while reading SWC text (bad field count,
/// non-numeric field). Carries the 1-based line number.
class SwcParseError : public std::runtime_error {
public:
    SwcParseError(int line, const std::string& what)
        : std::runtime_error("swc parse error at line " + std::to_string(line) + ": " + what),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

/// Structure-level failure: duplicate ids, dangling parents, cycles,
/// negative radii.
class SwcStructureError : public std::runtime_error {
public:
    explicit SwcStructureError(const std::string& what)
        : std::runtime_error("swc structure error: " + what) {}
};

/// One node of an SWC reconstruction: id, structure tag, center (voxels),
/// radius (voxels) and parent id (-1 for roots). Unknown tags are kept
/// verbatim.
struct SwcNode {
    long long id = 0;
    long long tag = 0;
    std::array<double, 3> center{0.0, 0.0, 0.0};
    double radius = 0.0;
    long long parent_id = -1;
};

struct SwcViolation {
    long long node_id;
    std::string message;
};

/// Result of validate(): the complete list of invariant violations.
struct ValidationReport {
    std::vector<SwcViolation> violations;
    bool ok() const { return violations.empty(); }
    std::string to_string() const;
};

/// One or more rooted trees of SwcNode. Construction via from_nodes() is
/// unchecked so that validate() can report on malformed inputs; parse_swc
/// only returns forests whose invariants hold.
class SwcForest {
public:
    SwcForest() = default;

    /// Builds a forest from raw nodes without checking invariants.
    static SwcForest from_nodes(std::vector<SwcNode> nodes);

    const std::vector<SwcNode>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

    /// Index of the node with the given id, or -1.
    long long index_of(long long id) const;

    /// Children ids of a node, ascending. Ids not in the forest map to {}.
    std::vector<long long> children_of(long long id) const;

    /// Ids of all roots (parent_id == -1), ascending.
    std::vector<long long> roots() const;

private:
    std::vector<SwcNode> nodes_;
    std::unordered_map<long long, std::size_t> index_;
};

/// Parses SWC text: 7 whitespace-separated fields per line
/// (id tag x y z radius parent), '#' comments, blank lines allowed.
/// Throws SwcParseError on malformed lines and SwcStructureError when the
/// resulting forest violates an invariant.
SwcForest parse_swc(std::istream& in);
SwcForest parse_swc(const std::string& text);
SwcForest read_swc_file(const std::string& path);

/// Writes a valid forest as SWC text, parents before children, sibling
/// order ascending by id, coordinates and radii with 6 decimal places.
std::string write_swc(const SwcForest& forest);
void write_swc_file(const SwcForest& forest, const std::string& path);

/// Reports every invariant violation (duplicate id, id < 1, negative
/// radius, self/dangling/cyclic parent). Empty report iff valid.
ValidationReport validate(const SwcForest& forest);

/// Ground-truth point set of one block: every node whose center lies in
/// [origin, origin + block_size) per axis, coordinates and radius divided
/// by block_size, cls = 1.
PointSet block_ground_truth(const SwcForest& forest, const std::array<double, 3>& block_origin,
                            int block_size);

}  // namespace nrtr
