#include "nrtr/set_match.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace nrtr {

Box3 point_to_box(const PredPoint& p) {
    return Box3{{p.a - p.r, p.b - p.r, p.c - p.r}, {p.a + p.r, p.b + p.r, p.c + p.r}};
}

double giou3(const Box3& A, const Box3& B) {
    const double vol_a = A.volume();
    const double vol_b = B.volume();
    if (vol_a == 0.0 && vol_b == 0.0) return 0.0;

    double inter = 1.0, hull = 1.0;
    for (int axis = 0; axis < 3; ++axis) {
        inter *= std::max(0.0, std::min(A.hi[axis], B.hi[axis]) - std::max(A.lo[axis], B.lo[axis]));
        hull *= std::max(A.hi[axis], B.hi[axis]) - std::min(A.lo[axis], B.lo[axis]);
    }
    const double uni = vol_a + vol_b - inter;
    const double iou = uni > 0.0 ? inter / uni : 0.0;
    return iou - (hull - uni) / hull;
}

double point_cost(const PredPoint& gt, const PredPoint& pred, const LossWeights& w) {
    const double l1 = std::abs(gt.a - pred.a) + std::abs(gt.b - pred.b) +
                      std::abs(gt.c - pred.c) + std::abs(gt.r - pred.r);
    const double g = giou3(point_to_box(gt), point_to_box(pred));
    return -w.w_cls * pred.cls + w.w_box * l1 + w.w_iou * (1.0 - g);
}

double matched_pair_loss(const PredPoint& gt, const PredPoint& pred, const LossWeights& w) {
    const double l1 = std::abs(gt.a - pred.a) + std::abs(gt.b - pred.b) +
                      std::abs(gt.c - pred.c) + std::abs(gt.r - pred.r);
    const double g = giou3(point_to_box(gt), point_to_box(pred));
    return w.w_box * l1 + w.w_iou * (1.0 - g);
}

namespace {

// Square Jonker-Volgenant shortest augmenting path solver. Fills the
// column-to-row matching and the dual potentials; reduced costs
// c[i][j] - u[i] - v[j] are >= 0 at exit and 0 on matched edges.
void solve_square_lap(const Eigen::MatrixXd& c, std::vector<int>& col_to_row,
                      std::vector<double>& u, std::vector<double>& v) {
    const int n = static_cast<int>(c.rows());
    u.assign(n + 1, 0.0);
    v.assign(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    col_to_row.assign(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] != 0) col_to_row[j - 1] = p[j] - 1;
}

// Augmenting-path search over tight edges, skipping frozen columns.
bool kuhn_augment(int row, const std::vector<std::vector<int>>& tight,
                  const std::vector<char>& col_frozen, std::vector<char>& col_seen,
                  std::vector<int>& row_to_col, std::vector<int>& col_to_row) {
    for (int j : tight[row]) {
        if (col_frozen[j] || col_seen[j]) continue;
        col_seen[j] = 1;
        if (col_to_row[j] == -1 ||
            kuhn_augment(col_to_row[j], tight, col_frozen, col_seen, row_to_col, col_to_row)) {
            row_to_col[row] = j;
            col_to_row[j] = row;
            return true;
        }
    }
    return false;
}

}  // namespace

Assignment hungarian(const Eigen::MatrixXd& cost) {
    const int m = static_cast<int>(cost.rows());
    const int n = static_cast<int>(cost.cols());
    if (m > n)
        throw std::invalid_argument("hungarian: more ground-truth rows (" + std::to_string(m) +
                                    ") than prediction columns (" + std::to_string(n) + ")");
    Assignment out;
    if (m == 0) return out;
    if (!cost.allFinite()) throw std::invalid_argument("hungarian: non-finite cost entry");

    // Pad with zero-cost dummy rows; their assignment is free, so optima of
    // the square problem restrict exactly to optima of the rectangle.
    Eigen::MatrixXd square = Eigen::MatrixXd::Zero(n, n);
    square.topRows(m) = cost;

    std::vector<int> col_to_row;
    std::vector<double> u, v;
    solve_square_lap(square, col_to_row, u, v);
    std::vector<int> row_to_col(n, -1);
    for (int j = 0; j < n; ++j)
        if (col_to_row[j] >= 0) row_to_col[col_to_row[j]] = j;

    // Optimal assignments use tight edges only; pick the lexicographically
    // smallest one (by ground-truth row, ascending) among them by fixing
    // each row to its smallest feasible tight column and re-augmenting the
    // displaced row.
    const double tol = 1e-9 * (1.0 + square.cwiseAbs().maxCoeff());
    std::vector<std::vector<int>> tight(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (square(i, j) - u[i + 1] - v[j + 1] <= tol) tight[i].push_back(j);

    std::vector<char> col_frozen(n, 0);
    for (int i = 0; i < m; ++i) {
        for (int j : tight[i]) {
            if (col_frozen[j]) continue;
            if (row_to_col[i] == j) break;  // already the smallest feasible pick
            const int displaced = col_to_row[j];
            auto saved_rows = row_to_col;
            auto saved_cols = col_to_row;
            col_to_row[row_to_col[i]] = -1;
            row_to_col[i] = j;
            col_to_row[j] = i;
            row_to_col[displaced] = -1;
            std::vector<char> col_seen(n, 0);
            col_seen[j] = 1;
            if (kuhn_augment(displaced, tight, col_frozen, col_seen, row_to_col, col_to_row))
                break;
            row_to_col = std::move(saved_rows);
            col_to_row = std::move(saved_cols);
        }
        col_frozen[row_to_col[i]] = 1;
    }

    out.pred_index.resize(m);
    for (int i = 0; i < m; ++i) {
        out.pred_index[i] = row_to_col[i];
        out.cost += cost(i, row_to_col[i]);
    }
    return out;
}

SetLossResult set_loss(const PointSet& gt, const PointSet& pred, const LossWeights& w) {
    const int m = static_cast<int>(gt.size());
    const int n = static_cast<int>(pred.size());
    if (m > n)
        throw std::invalid_argument("set_loss: ground truth larger than prediction set (" +
                                    std::to_string(m) + " > " + std::to_string(n) + ")");

    SetLossResult res;
    if (m > 0) {
        Eigen::MatrixXd cost(m, n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                cost(i, j) = point_cost(gt.points[i], pred.points[j], w);
        res.assignment = hungarian(cost);
    }

    std::vector<char> matched(n, 0);
    for (int i = 0; i < m; ++i) {
        const PredPoint& g = gt.points[i];
        const PredPoint& p = pred.points[res.assignment.pred_index[i]];
        matched[res.assignment.pred_index[i]] = 1;
        res.box_term += w.w_box * (std::abs(g.a - p.a) + std::abs(g.b - p.b) +
                                   std::abs(g.c - p.c) + std::abs(g.r - p.r));
        res.giou_term += w.w_iou * (1.0 - giou3(point_to_box(g), point_to_box(p)));
    }
    for (int j = 0; j < n; ++j) {
        const double p = std::clamp(pred.points[j].cls, kClsEps, 1.0 - kClsEps);
        if (matched[j])
            res.cls_term += -std::log(p);
        else
            res.cls_term += -w.no_object_weight * std::log(1.0 - p);
    }
    res.total = res.box_term + res.giou_term + res.cls_term;
    return res;
}

}  // namespace nrtr
