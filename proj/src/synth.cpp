#include "nrtr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "nrtr/rng.hpp"

namespace nrtr {

namespace {

// Sum of three values in ascending order. Rasterization results must be
// exactly invariant under axis permutation and mirroring, so every
// reduction over the three axes is done in a canonical order.
inline double sym_sum3(double a, double b, double c) {
    if (a > b) std::swap(a, b);
    if (b > c) std::swap(b, c);
    if (a > b) std::swap(a, b);
    return (a + b) + c;
}

inline double dot3_sym(const std::array<double, 3>& u, const std::array<double, 3>& v) {
    return sym_sum3(u[0] * v[0], u[1] * v[1], u[2] * v[2]);
}

struct Capsule {
    std::array<double, 3> a;
    std::array<double, 3> b;
    double ra;
    double rb;
};

// min over t in [0,1] of |p - (a + t(b-a))| - (ra + t(rb-ra)), <= 0 iff the
// point is inside the tapered capsule. The stationary point solves a
// quadratic (obtained by squaring the optimality condition), so candidates
// are the endpoints plus real roots clamped to (0,1); the objective is
// convex, hence the minimum over candidates is the true minimum.
bool inside_capsule(const std::array<double, 3>& p, const Capsule& c) {
    const std::array<double, 3> w{p[0] - c.a[0], p[1] - c.a[1], p[2] - c.a[2]};
    const std::array<double, 3> d{c.b[0] - c.a[0], c.b[1] - c.a[1], c.b[2] - c.a[2]};
    const double W2 = dot3_sym(w, w);
    const double D2 = dot3_sym(d, d);
    const double dr = c.rb - c.ra;

    if (D2 == 0.0) {
        const double r = std::max(c.ra, c.rb);
        return W2 <= r * r;
    }

    const double wd = dot3_sym(w, d);
    auto dist_minus_r = [&](double t) {
        const double s2 = std::max(0.0, W2 - 2.0 * t * wd + t * t * D2);
        return std::sqrt(s2) - (c.ra + t * dr);
    };

    double best = std::min(dist_minus_r(0.0), dist_minus_r(1.0));
    const double A = D2 * (D2 - dr * dr);
    const double B = -2.0 * wd * (D2 - dr * dr);
    const double C = wd * wd - dr * dr * W2;
    if (A != 0.0) {
        const double disc = B * B - 4.0 * A * C;
        if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-B - sq) / (2.0 * A), (-B + sq) / (2.0 * A)})
                if (t > 0.0 && t < 1.0) best = std::min(best, dist_minus_r(t));
        }
    } else if (B != 0.0) {
        const double t = -C / B;
        if (t > 0.0 && t < 1.0) best = std::min(best, dist_minus_r(t));
    }
    return best <= 0.0;
}

void paint_region(Volume& mask, const std::array<double, 3>& lo, const std::array<double, 3>& hi,
                  const std::function<bool(const std::array<double, 3>&)>& member) {
    std::array<int, 3> vlo, vhi;
    for (int a = 0; a < 3; ++a) {
        vlo[a] = std::max(0, static_cast<int>(std::floor(lo[a] - 0.5)));
        vhi[a] = std::min(mask.dims[a] - 1, static_cast<int>(std::ceil(hi[a] - 0.5)));
    }
    for (int z = vlo[2]; z <= vhi[2]; ++z)
        for (int y = vlo[1]; y <= vhi[1]; ++y)
            for (int x = vlo[0]; x <= vhi[0]; ++x) {
                if (mask.at(x, y, z) != 0.0f) continue;
                const std::array<double, 3> p{x + 0.5, y + 0.5, z + 0.5};
                if (member(p)) mask.at(x, y, z) = 1.0f;
            }
}

void gaussian_blur_axis(Volume& v, int axis, float sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    if (radius < 1) return;
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * (double(k) * k) / (double(sigma) * sigma));
        sum += kernel[k + radius];
    }
    for (double& w : kernel) w /= sum;

    const auto dims = v.dims;
    std::vector<float> line(dims[axis]);
    std::array<int, 3> idx{};
    const int n0 = axis == 0 ? dims[1] : dims[0];
    const int n1 = axis == 2 ? dims[1] : dims[2];
    for (int j = 0; j < n1; ++j)
        for (int i = 0; i < n0; ++i) {
            for (int k = 0; k < dims[axis]; ++k) {
                idx[axis] = k;
                idx[axis == 0 ? 1 : 0] = i;
                idx[axis == 2 ? 1 : 2] = j;
                line[k] = v.at(idx[0], idx[1], idx[2]);
            }
            for (int k = 0; k < dims[axis]; ++k) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    const int s = std::clamp(k + t, 0, dims[axis] - 1);  // replicate border
                    acc += kernel[t + radius] * line[s];
                }
                idx[axis] = k;
                idx[axis == 0 ? 1 : 0] = i;
                idx[axis == 2 ? 1 : 2] = j;
                v.at(idx[0], idx[1], idx[2]) = static_cast<float>(acc);
            }
        }
}

}  // namespace

CubeSymmetry cube_symmetry(int symmetry_id) {
    if (symmetry_id < 0 || symmetry_id > 47)
        throw std::invalid_argument("symmetry id must be in 0..47");
    static constexpr std::array<std::array<int, 3>, 6> kPerms{{
        {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0},
    }};
    CubeSymmetry s;
    s.perm = kPerms[symmetry_id / 8];
    const int mask = symmetry_id % 8;
    for (int a = 0; a < 3; ++a) s.flip[a] = (mask >> a) & 1;
    return s;
}

Volume apply_symmetry(const Volume& v, int symmetry_id) {
    if (v.dims[0] != v.dims[1] || v.dims[1] != v.dims[2])
        throw std::invalid_argument("apply_symmetry requires a cubic volume");
    const CubeSymmetry s = cube_symmetry(symmetry_id);
    const int n = v.dims[0];
    Volume out = v;
    std::array<int, 3> in{}, o{};
    for (in[2] = 0; in[2] < n; ++in[2])
        for (in[1] = 0; in[1] < n; ++in[1])
            for (in[0] = 0; in[0] < n; ++in[0]) {
                for (int a = 0; a < 3; ++a) {
                    const int c = in[s.perm[a]];
                    o[a] = s.flip[a] ? n - 1 - c : c;
                }
                out.at(o[0], o[1], o[2]) = v.at(in[0], in[1], in[2]);
            }
    return out;
}

SwcForest apply_symmetry(const SwcForest& forest, int symmetry_id,
                         const std::array<int, 3>& dims) {
    if (dims[0] != dims[1] || dims[1] != dims[2])
        throw std::invalid_argument("apply_symmetry requires a cubic region");
    const CubeSymmetry s = cube_symmetry(symmetry_id);
    const double n = dims[0];
    std::vector<SwcNode> nodes = forest.nodes();
    for (auto& node : nodes) {
        const std::array<double, 3> c = node.center;
        for (int a = 0; a < 3; ++a)
            node.center[a] = s.flip[a] ? n - c[s.perm[a]] : c[s.perm[a]];
    }
    return SwcForest::from_nodes(std::move(nodes));
}

Volume rasterize_mask(const SwcForest& forest, const std::array<int, 3>& dims) {
    if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
        throw std::invalid_argument("rasterize_mask: dims must be positive");
    Volume mask;
    mask.dims = dims;
    mask.data.assign(mask.voxel_count(), 0.0f);

    std::unordered_map<long long, bool> has_child;
    for (const auto& n : forest.nodes())
        if (n.parent_id != -1) has_child[n.parent_id] = true;

    for (const auto& n : forest.nodes()) {
        if (n.parent_id != -1) {
            const SwcNode& p = forest.nodes()[forest.index_of(n.parent_id)];
            Capsule cap{p.center, n.center, p.radius, n.radius};
            const double rmax = std::max(cap.ra, cap.rb);
            std::array<double, 3> lo, hi;
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(cap.a[a], cap.b[a]) - rmax;
                hi[a] = std::max(cap.a[a], cap.b[a]) + rmax;
            }
            paint_region(mask, lo, hi,
                         [&](const std::array<double, 3>& q) { return inside_capsule(q, cap); });
        } else if (!has_child.count(n.id)) {
            // Isolated root: sphere. Squared distances of grid-quantized
            // inputs are exact, so membership is symmetry-stable.
            const double r2 = n.radius * n.radius;
            std::array<double, 3> lo, hi;
            for (int a = 0; a < 3; ++a) {
                lo[a] = n.center[a] - n.radius;
                hi[a] = n.center[a] + n.radius;
            }
            paint_region(mask, lo, hi, [&](const std::array<double, 3>& q) {
                return sym_sum3((q[0] - n.center[0]) * (q[0] - n.center[0]),
                                (q[1] - n.center[1]) * (q[1] - n.center[1]),
                                (q[2] - n.center[2]) * (q[2] - n.center[2])) <= r2;
            });
        }
    }
    return mask;
}

Volume render_image(const SwcForest& forest, const RenderSpec& spec, std::uint64_t seed) {
    if (spec.noise_sd < 0 || spec.psf_sigma < 0)
        throw std::invalid_argument("render_image: noise_sd and psf_sigma must be >= 0");
    Volume img = rasterize_mask(forest, spec.dims);
    for (float& x : img.data)
        x = x * spec.foreground_intensity + spec.background_level;
    if (spec.psf_sigma > 0)
        for (int axis = 0; axis < 3; ++axis) gaussian_blur_axis(img, axis, spec.psf_sigma);
    if (spec.noise_sd > 0) {
        Rng rng(seed);
        for (float& x : img.data) x += static_cast<float>(rng.normal(0.0, spec.noise_sd));
    }
    for (float& x : img.data) x = std::clamp(x, 0.0f, 65535.0f);
    return img;
}

SwcForest gen_random_forest(const SynthSpec& spec) {
    if (spec.dims[0] <= 0 || spec.dims[1] <= 0 || spec.dims[2] <= 0)
        throw std::invalid_argument("gen_random_forest: dims must be positive");
    if (spec.n_trees < 0) throw std::invalid_argument("gen_random_forest: n_trees must be >= 0");
    if (spec.nodes_per_tree[0] < 1 || spec.nodes_per_tree[1] < spec.nodes_per_tree[0])
        throw std::invalid_argument("gen_random_forest: empty nodes_per_tree range");
    if (spec.radius_range[0] <= 0 || spec.radius_range[1] < spec.radius_range[0])
        throw std::invalid_argument("gen_random_forest: bad radius range");
    if (spec.step_range[0] <= 0 || spec.step_range[1] < spec.step_range[0])
        throw std::invalid_argument("gen_random_forest: bad step range");
    if (spec.branch_probability < 0 || spec.branch_probability > 1)
        throw std::invalid_argument("gen_random_forest: branch probability outside [0,1]");

    const double margin = spec.radius_range[1] + 1.0;
    const int min_dim = std::min({spec.dims[0], spec.dims[1], spec.dims[2]});
    if (2.0 * margin + spec.step_range[1] >= static_cast<double>(min_dim))
        throw std::runtime_error(
            "gen_random_forest: infeasible spec (step/radius too large for dims)");

    Rng rng(spec.seed);
    auto quantize = [](double x) { return std::round(x * 1024.0) / 1024.0; };
    auto in_bounds = [&](const std::array<double, 3>& p) {
        for (int a = 0; a < 3; ++a)
            if (p[a] < margin || p[a] > spec.dims[a] - margin) return false;
        return true;
    };

    std::vector<SwcNode> nodes;
    long long next_id = 1;
    for (int tree = 0; tree < spec.n_trees; ++tree) {
        const int target =
            spec.nodes_per_tree[0] +
            static_cast<int>(rng.below(spec.nodes_per_tree[1] - spec.nodes_per_tree[0] + 1));

        SwcNode root;
        root.id = next_id++;
        root.tag = 1;
        root.parent_id = -1;
        for (int a = 0; a < 3; ++a)
            root.center[a] = quantize(rng.uniform(margin, spec.dims[a] - margin));
        root.radius = quantize(rng.uniform(spec.radius_range[0], spec.radius_range[1]));
        nodes.push_back(root);

        std::vector<std::size_t> branch_stack;
        std::size_t cur = nodes.size() - 1;
        for (int placed = 1; placed < target;) {
            std::array<double, 3> pos{};
            bool found = false;
            for (int attempt = 0; attempt < 200 && !found; ++attempt) {
                const double step = rng.uniform(spec.step_range[0], spec.step_range[1]);
                // Uniform direction from normalized Gaussian.
                std::array<double, 3> dir{rng.normal(), rng.normal(), rng.normal()};
                const double norm =
                    std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
                if (norm == 0.0) continue;
                for (int a = 0; a < 3; ++a)
                    pos[a] = quantize(nodes[cur].center[a] + step * dir[a] / norm);
                found = in_bounds(pos);
            }
            if (!found) {
                if (!branch_stack.empty()) {
                    cur = branch_stack.back();
                    branch_stack.pop_back();
                    continue;
                }
                throw std::runtime_error("gen_random_forest: walk stuck; spec too tight");
            }
            SwcNode n;
            n.id = next_id++;
            n.tag = 3;
            n.parent_id = nodes[cur].id;
            n.center = pos;
            n.radius = quantize(rng.uniform(spec.radius_range[0], spec.radius_range[1]));
            nodes.push_back(n);
            ++placed;
            if (rng.uniform() < spec.branch_probability) branch_stack.push_back(cur);
            cur = nodes.size() - 1;
        }
    }

    SwcForest forest = SwcForest::from_nodes(std::move(nodes));
    ValidationReport report = validate(forest);
    if (!report.ok())
        throw std::logic_error("gen_random_forest produced an invalid forest:\n" +
                               report.to_string());
    return forest;
}

}  // namespace nrtr
