#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "nrtr/points.hpp"

namespace nrtr {

/// Axis-aligned box in normalized coordinates. Corners may leave [0,1]
/// (boxes of points near the block border are not clamped).
struct Box3 {
    std::array<double, 3> lo{0, 0, 0};
    std::array<double, 3> hi{0, 0, 0};

    double volume() const {
        return (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
    }
};

/// Weights of the per-point cost and of the set loss. no_object_weight
/// scales the classification loss of unmatched predictions during
/// training only.
struct LossWeights {
    double w_cls = 1.0;
    double w_box = 5.0;
    double w_iou = 2.0;
    double no_object_weight = 0.1;
};

/// Injective map from ground-truth indices to prediction indices, plus the
/// total matching cost (sum of matched per-point costs).
struct Assignment {
    std::vector<int> pred_index;  // pred_index[i] = matched prediction of gt i
    double cost = 0.0;
};

/// Cube of half-extent r centered at the point.
Box3 point_to_box(const PredPoint& p);

/// Generalized IoU of two boxes: IoU - (hull - union) / hull, in (-1, 1].
/// Defined as 0 when both boxes are degenerate.
double giou3(const Box3& A, const Box3& B);

/// Matching cost between a ground-truth point and a prediction:
/// -w_cls * cls_pred + w_box * L1(coords) + w_iou * (1 - giou3).
double point_cost(const PredPoint& gt, const PredPoint& pred, const LossWeights& w);

/// The geometric part of the training loss for one matched pair:
/// w_box * L1 + w_iou * (1 - giou3).
double matched_pair_loss(const PredPoint& gt, const PredPoint& pred, const LossWeights& w);

/// Exact minimum-cost injective assignment of the M rows to the N columns
/// (M <= N). Among cost-equal optima returns the lexicographically
/// smallest map (by row index ascending). Throws on M > N or non-finite
/// entries.
Assignment hungarian(const Eigen::MatrixXd& cost);

struct SetLossResult {
    double total = 0.0;
    double cls_term = 0.0;   // NLL over all N predictions (no-object weighted)
    double box_term = 0.0;   // w_box * sum of matched L1 distances
    double giou_term = 0.0;  // w_iou * sum of matched (1 - giou3)
    Assignment assignment;
};

/// Set-based loss: Hungarian matching on point_cost, then
/// total = box_term + giou_term + cls_term where cls_term sums -log(cls)
/// over matched predictions and -no_object_weight * log(1 - cls) over
/// unmatched ones. M = 0 gives the pure no-object loss.
SetLossResult set_loss(const PointSet& gt, const PointSet& pred, const LossWeights& w);

/// Probabilities are clamped to [kClsEps, 1 - kClsEps] inside the
/// classification log terms.
inline constexpr double kClsEps = 1e-7;

}  // namespace nrtr
