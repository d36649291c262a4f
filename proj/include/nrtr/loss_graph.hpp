#pragma once

#include "nrtr/set_match.hpp"
#include "nrtr/tensor.hpp"

namespace nrtr {

template <typename T>
struct SetLossGraph {
    Tensor<T> total;       // scalar graph node
    SetLossResult scalar;  // double-precision terms and the assignment used
};

/// Differentiable set loss over a [N,5] prediction tensor (rows are
/// (a,b,c,r,cls)). The assignment is computed from the tensor's current
/// values with the scalar path, then frozen into the graph; gradients flow
/// through the matched geometry and all classification terms. Predicted
/// radii must be positive (model outputs are sigmoid-squashed, so they are).
template <typename T>
SetLossGraph<T> set_loss_graph(const Tensor<T>& pred, const PointSet& gt, const LossWeights& w) {
    if (pred.shape().size() != 2 || pred.shape()[1] != 5)
        throw ShapeError("set_loss_graph: prediction must be [N,5], got " +
                         shape_str(pred.shape()));
    const int n = pred.shape()[0];
    const int m = static_cast<int>(gt.size());

    PointSet pred_set;
    pred_set.role = SetRole::Prediction;
    pred_set.points.resize(n);
    for (int j = 0; j < n; ++j) {
        pred_set.points[j].a = pred.value_at(j * 5 + 0);
        pred_set.points[j].b = pred.value_at(j * 5 + 1);
        pred_set.points[j].c = pred.value_at(j * 5 + 2);
        pred_set.points[j].r = pred.value_at(j * 5 + 3);
        pred_set.points[j].cls = pred.value_at(j * 5 + 4);
    }

    SetLossGraph<T> out;
    out.scalar = set_loss(gt, pred_set, w);

    const std::vector<int>& matched = out.scalar.assignment.pred_index;
    std::vector<char> is_matched(n, 0);
    for (int j : matched) is_matched[j] = 1;
    std::vector<int> unmatched;
    for (int j = 0; j < n; ++j)
        if (!is_matched[j]) unmatched.push_back(j);

    Tensor<T> cls_col = slice(pred, {0, 4}, {n, 1});
    Tensor<T> total;

    if (!unmatched.empty()) {
        Tensor<T> p_un = embedding_lookup(cls_col, unmatched);
        Tensor<T> log_no = log(clamp(scalar_add(neg(p_un), T(1)), static_cast<T>(kClsEps),
                                     static_cast<T>(1.0 - kClsEps)));
        total = scalar_mul(sum(log_no), static_cast<T>(-w.no_object_weight));
    }
    if (m > 0) {
        Tensor<T> p_m = embedding_lookup(cls_col, matched);
        Tensor<T> log_m =
            log(clamp(p_m, static_cast<T>(kClsEps), static_cast<T>(1.0 - kClsEps)));
        Tensor<T> cls_m = scalar_mul(sum(log_m), T(-1));
        total = total.defined() ? add(total, cls_m) : cls_m;

        Tensor<T> geo = embedding_lookup(slice(pred, {0, 0}, {n, 4}), matched);  // [M,4]
        std::vector<T> gt_geo(static_cast<std::size_t>(m) * 4);
        std::vector<T> gt_lo(static_cast<std::size_t>(m) * 3), gt_hi(gt_lo.size());
        std::vector<T> gt_vol(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) {
            const PredPoint& g = gt.points[i];
            gt_geo[i * 4 + 0] = static_cast<T>(g.a);
            gt_geo[i * 4 + 1] = static_cast<T>(g.b);
            gt_geo[i * 4 + 2] = static_cast<T>(g.c);
            gt_geo[i * 4 + 3] = static_cast<T>(g.r);
            const Box3 box = point_to_box(g);
            for (int a = 0; a < 3; ++a) {
                gt_lo[i * 3 + a] = static_cast<T>(box.lo[a]);
                gt_hi[i * 3 + a] = static_cast<T>(box.hi[a]);
            }
            gt_vol[i] = static_cast<T>(box.volume());
        }
        Tensor<T> gt_geo_t = Tensor<T>::from_data({m, 4}, gt_geo);
        Tensor<T> l1 = sum(abs(sub(geo, gt_geo_t)));
        total = add(total, scalar_mul(l1, static_cast<T>(w.w_box)));

        Tensor<T> centers = slice(geo, {0, 0}, {m, 3});
        Tensor<T> radius = slice(geo, {0, 3}, {m, 1});
        Tensor<T> rmat = concat<T>({radius, radius, radius}, 1);
        Tensor<T> box_lo = sub(centers, rmat);
        Tensor<T> box_hi = add(centers, rmat);
        Tensor<T> glo = Tensor<T>::from_data({m, 3}, gt_lo);
        Tensor<T> ghi = Tensor<T>::from_data({m, 3}, gt_hi);

        auto col_product = [&](const Tensor<T>& sides) {
            Tensor<T> prod = mul(slice(sides, {0, 0}, {m, 1}), slice(sides, {0, 1}, {m, 1}));
            return mul(prod, slice(sides, {0, 2}, {m, 1}));
        };
        Tensor<T> inter_len = relu(sub(minimum(box_hi, ghi), maximum(box_lo, glo)));
        Tensor<T> inter_vol = col_product(inter_len);
        Tensor<T> pred_vol = col_product(sub(box_hi, box_lo));
        Tensor<T> gt_vol_t = Tensor<T>::from_data({m, 1}, gt_vol);
        Tensor<T> union_vol = sub(add(pred_vol, gt_vol_t), inter_vol);
        Tensor<T> hull_vol = col_product(sub(maximum(box_hi, ghi), minimum(box_lo, glo)));
        Tensor<T> giou = sub(div(inter_vol, union_vol),
                             div(sub(hull_vol, union_vol), hull_vol));  // [M,1]
        Tensor<T> giou_loss = sum(scalar_add(neg(giou), T(1)));
        total = add(total, scalar_mul(giou_loss, static_cast<T>(w.w_iou)));
    }

    out.total = total.defined() ? total : Tensor<T>::scalar_tensor(T(0));
    return out;
}

}  // namespace nrtr
