#include "nrtr/swc.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace nrtr {

namespace {

bool parse_ll(const std::string& s, long long& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [p, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && p == last;
}

bool parse_double(const std::string& s, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    if (ok()) {
        os << "valid\n";
        return os.str();
    }
    for (const auto& v : violations)
        os << "node " << v.node_id << ": " << v.message << "\n";
    return os.str();
}

SwcForest SwcForest::from_nodes(std::vector<SwcNode> nodes) {
    SwcForest f;
    f.nodes_ = std::move(nodes);
    f.index_.reserve(f.nodes_.size());
    for (std::size_t i = 0; i < f.nodes_.size(); ++i)
        f.index_.emplace(f.nodes_[i].id, i);  // first occurrence wins on duplicates
    return f;
}

long long SwcForest::index_of(long long id) const {
    auto it = index_.find(id);
    return it == index_.end() ? -1 : static_cast<long long>(it->second);
}

std::vector<long long> SwcForest::children_of(long long id) const {
    std::vector<long long> out;
    for (const auto& n : nodes_)
        if (n.parent_id == id) out.push_back(n.id);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<long long> SwcForest::roots() const {
    std::vector<long long> out;
    for (const auto& n : nodes_)
        if (n.parent_id == -1) out.push_back(n.id);
    std::sort(out.begin(), out.end());
    return out;
}

SwcForest parse_swc(std::istream& in) {
    std::vector<SwcNode> nodes;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        if (line[first] == '#') continue;

        std::istringstream ls(line);
        std::vector<std::string> fields;
        std::string tok;
        while (ls >> tok) fields.push_back(tok);
        if (fields.size() != 7)
            throw SwcParseError(line_no, "expected 7 fields, got " + std::to_string(fields.size()));

        SwcNode n;
        if (!parse_ll(fields[0], n.id)) throw SwcParseError(line_no, "bad id '" + fields[0] + "'");
        if (!parse_ll(fields[1], n.tag)) throw SwcParseError(line_no, "bad tag '" + fields[1] + "'");
        for (int a = 0; a < 3; ++a)
            if (!parse_double(fields[2 + a], n.center[a]))
                throw SwcParseError(line_no, "bad coordinate '" + fields[2 + a] + "'");
        if (!parse_double(fields[5], n.radius))
            throw SwcParseError(line_no, "bad radius '" + fields[5] + "'");
        if (!parse_ll(fields[6], n.parent_id))
            throw SwcParseError(line_no, "bad parent id '" + fields[6] + "'");
        nodes.push_back(n);
    }

    SwcForest forest = SwcForest::from_nodes(std::move(nodes));
    ValidationReport report = validate(forest);
    if (!report.ok()) throw SwcStructureError(report.to_string());
    return forest;
}

SwcForest parse_swc(const std::string& text) {
    std::istringstream in(text);
    return parse_swc(in);
}

SwcForest read_swc_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open SWC file: " + path);
    return parse_swc(in);
}

ValidationReport validate(const SwcForest& forest) {
    ValidationReport report;
    const auto& nodes = forest.nodes();

    std::unordered_map<long long, int> id_count;
    for (const auto& n : nodes) ++id_count[n.id];

    for (const auto& n : nodes) {
        if (n.id < 1) report.violations.push_back({n.id, "id must be >= 1"});
        if (id_count[n.id] > 1) report.violations.push_back({n.id, "duplicate id"});
        if (n.radius < 0) report.violations.push_back({n.id, "negative radius"});
        if (n.parent_id == n.id) report.violations.push_back({n.id, "node is its own parent"});
        if (n.parent_id != -1 && id_count.find(n.parent_id) == id_count.end())
            report.violations.push_back({n.id, "dangling parent " + std::to_string(n.parent_id)});
    }
    // Deduplicate the duplicate-id messages (one per id, not per occurrence).
    std::sort(report.violations.begin(), report.violations.end(),
              [](const SwcViolation& a, const SwcViolation& b) {
                  return std::tie(a.node_id, a.message) < std::tie(b.node_id, b.message);
              });
    report.violations.erase(std::unique(report.violations.begin(), report.violations.end(),
                                        [](const SwcViolation& a, const SwcViolation& b) {
                                            return a.node_id == b.node_id && a.message == b.message;
                                        }),
                            report.violations.end());

    // Cycle check on the parent relation. Walk each node towards the root;
    // 0 = unvisited, 1 = on current walk, 2 = known acyclic.
    if (std::all_of(nodes.begin(), nodes.end(), [&](const SwcNode& n) {
            return id_count[n.id] == 1 &&
                   (n.parent_id == -1 || id_count.count(n.parent_id)) && n.parent_id != n.id;
        })) {
        std::unordered_map<long long, int> state;
        for (const auto& n : nodes) {
            if (state[n.id] != 0) continue;
            std::vector<long long> walk;
            long long cur = n.id;
            while (cur != -1 && state[cur] == 0) {
                state[cur] = 1;
                walk.push_back(cur);
                cur = nodes[forest.index_of(cur)].parent_id;
            }
            if (cur != -1 && state[cur] == 1)
                report.violations.push_back({cur, "cyclic parent chain"});
            for (long long id : walk) state[id] = 2;
        }
    }
    return report;
}

std::string write_swc(const SwcForest& forest) {
    ValidationReport report = validate(forest);
    if (!report.ok()) throw SwcStructureError("write_swc on invalid forest:\n" + report.to_string());

    // Children adjacency, sibling order ascending by id.
    std::unordered_map<long long, std::vector<long long>> children;
    for (const auto& n : forest.nodes())
        if (n.parent_id != -1) children[n.parent_id].push_back(n.id);
    for (auto& [id, kids] : children) std::sort(kids.begin(), kids.end());

    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    std::vector<long long> stack = forest.roots();
    std::reverse(stack.begin(), stack.end());
    while (!stack.empty()) {
        long long id = stack.back();
        stack.pop_back();
        const SwcNode& n = forest.nodes()[forest.index_of(id)];
        os << n.id << ' ' << n.tag << ' ' << n.center[0] << ' ' << n.center[1] << ' '
           << n.center[2] << ' ' << n.radius << ' ' << n.parent_id << '\n';
        auto it = children.find(id);
        if (it != children.end())
            for (auto kid = it->second.rbegin(); kid != it->second.rend(); ++kid)
                stack.push_back(*kid);
    }
    return os.str();
}

void write_swc_file(const SwcForest& forest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write SWC file: " + path);
    out << write_swc(forest);
}

PointSet block_ground_truth(const SwcForest& forest, const std::array<double, 3>& block_origin,
                            int block_size) {
    if (block_size <= 0) throw std::invalid_argument("block_ground_truth: block_size must be > 0");
    PointSet set;
    set.role = SetRole::GroundTruth;
    const double s = static_cast<double>(block_size);
    for (const auto& n : forest.nodes()) {
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
            double rel = n.center[a] - block_origin[a];
            if (rel < 0.0 || rel >= s) {
                inside = false;
                break;
            }
        }
        if (!inside) continue;
        PredPoint p;
        p.a = (n.center[0] - block_origin[0]) / s;
        p.b = (n.center[1] - block_origin[1]) / s;
        p.c = (n.center[2] - block_origin[2]) / s;
        p.r = n.radius / s;
        p.cls = 1.0;
        set.points.push_back(p);
    }
    return set;
}

}  // namespace nrtr
