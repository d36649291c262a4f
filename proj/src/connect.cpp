#include "nrtr/connect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>
#include <tuple>

namespace nrtr {

PointSet filter_points(const PointSet& set, double threshold) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw std::invalid_argument("filter_points: threshold must be in (0,1)");
    PointSet out;
    out.role = set.role;
    for (const auto& p : set.points)
        if (p.cls >= threshold) out.points.push_back(p);
    return out;
}

namespace {

double dist3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

std::vector<GlobalPoint> merge_blocks(const std::vector<BlockPoints>& blocks,
                                      double merge_radius) {
    if (merge_radius < 0) throw std::invalid_argument("merge_blocks: merge_radius must be >= 0");
    std::vector<GlobalPoint> pts;
    for (const auto& b : blocks)
        for (const auto& p : b.points.points) {
            GlobalPoint g;
            g.center = {b.origin[0] + p.a * b.size, b.origin[1] + p.b * b.size,
                        b.origin[2] + p.c * b.size};
            g.radius = p.r * b.size;
            g.cls = p.cls;
            g.source_block = b.block_id;
            pts.push_back(g);
        }

    const int n = static_cast<int>(pts.size());
    std::vector<std::tuple<double, int, int>> close_pairs;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double d = dist3(pts[i].center, pts[j].center);
            if (d <= merge_radius) close_pairs.emplace_back(d, i, j);
        }
    std::sort(close_pairs.begin(), close_pairs.end());

    std::vector<char> consumed(n, 0);
    std::vector<GlobalPoint> merged_at(n);
    std::vector<char> has_merge(n, 0);
    for (const auto& [d, i, j] : close_pairs) {
        if (consumed[i] || consumed[j]) continue;
        consumed[i] = consumed[j] = 1;
        const double wi = pts[i].cls, wj = pts[j].cls;
        const double wsum = wi + wj;
        GlobalPoint g;
        for (int a = 0; a < 3; ++a)
            g.center[a] = (wi * pts[i].center[a] + wj * pts[j].center[a]) / wsum;
        g.radius = (wi * pts[i].radius + wj * pts[j].radius) / wsum;
        g.cls = std::max(wi, wj);
        g.source_block = pts[i].source_block;
        merged_at[i] = g;  // merged pair takes the earlier slot
        has_merge[i] = 1;
    }
    std::vector<GlobalPoint> out;
    out.reserve(pts.size());
    for (int i = 0; i < n; ++i) {
        if (has_merge[i])
            out.push_back(merged_at[i]);
        else if (!consumed[i])
            out.push_back(pts[i]);
    }
    return out;
}

SwcForest build_forest(const std::vector<GlobalPoint>& points, double prune_factor,
                       double absolute_cap) {
    if (prune_factor <= 0) throw std::invalid_argument("build_forest: prune_factor must be > 0");
    const int n = static_cast<int>(points.size());
    if (n == 0) return SwcForest();

    // Dense Prim. key[i] = distance to the grown tree, parent[i] = closest
    // tree vertex; ties resolved toward the lowest index.
    std::vector<double> key(n, std::numeric_limits<double>::infinity());
    std::vector<int> mst_parent(n, -1);
    std::vector<char> in_tree(n, 0);
    key[0] = 0.0;
    for (int it = 0; it < n; ++it) {
        int u = -1;
        for (int i = 0; i < n; ++i)
            if (!in_tree[i] && (u == -1 || key[i] < key[u])) u = i;
        in_tree[u] = 1;
        for (int v = 0; v < n; ++v) {
            if (in_tree[v]) continue;
            const double d = dist3(points[u].center, points[v].center);
            if (d < key[v]) {
                key[v] = d;
                mst_parent[v] = u;
            }
        }
    }

    // Keep MST edges short enough for the endpoint radii.
    std::vector<std::vector<int>> adj(n);
    for (int v = 1; v < n; ++v) {
        const int u = mst_parent[v];
        const double d = dist3(points[u].center, points[v].center);
        const double limit =
            std::min(absolute_cap, prune_factor * (points[u].radius + points[v].radius));
        if (d <= limit) {
            adj[u].push_back(v);
            adj[v].push_back(u);
        }
    }
    for (auto& a : adj) std::sort(a.begin(), a.end());

    // Components -> trees rooted at the maximum-radius point.
    std::vector<int> component(n, -1);
    std::vector<std::vector<int>> members;
    for (int i = 0; i < n; ++i) {
        if (component[i] != -1) continue;
        const int c = static_cast<int>(members.size());
        members.emplace_back();
        std::queue<int> q;
        q.push(i);
        component[i] = c;
        while (!q.empty()) {
            const int u = q.front();
            q.pop();
            members[c].push_back(u);
            for (int v : adj[u])
                if (component[v] == -1) {
                    component[v] = c;
                    q.push(v);
                }
        }
    }

    std::vector<SwcNode> nodes;
    nodes.reserve(n);
    std::vector<long long> swc_id(n, 0);
    long long next_id = 1;
    for (const auto& comp : members) {
        int root = comp[0];
        for (int i : comp)
            if (points[i].radius > points[root].radius ||
                (points[i].radius == points[root].radius && i < root))
                root = i;
        // BFS emits parents before children.
        std::queue<int> q;
        q.push(root);
        std::vector<char> seen(n, 0);
        seen[root] = 1;
        std::vector<std::pair<int, int>> emit;  // (point, parent point or -1)
        emit.emplace_back(root, -1);
        while (!q.empty()) {
            const int u = q.front();
            q.pop();
            for (int v : adj[u])
                if (!seen[v]) {
                    seen[v] = 1;
                    emit.emplace_back(v, u);
                    q.push(v);
                }
        }
        for (const auto& [idx, parent_idx] : emit) {
            swc_id[idx] = next_id++;
            SwcNode node;
            node.id = swc_id[idx];
            node.tag = 0;  // predictions carry no structure label
            node.center = points[idx].center;
            node.radius = points[idx].radius;
            node.parent_id = parent_idx == -1 ? -1 : swc_id[parent_idx];
            nodes.push_back(node);
        }
    }
    SwcForest forest = SwcForest::from_nodes(std::move(nodes));
    ValidationReport report = validate(forest);
    if (!report.ok())
        throw std::logic_error("build_forest produced an invalid forest:\n" + report.to_string());
    return forest;
}

}  // namespace nrtr
