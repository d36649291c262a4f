#include "nrtr/metrics.hpp"

#include <stdexcept>

#include "nrtr/synth.hpp"

namespace nrtr {

Confusion confusion(const Volume& pred_mask, const Volume& gt_mask) {
    if (pred_mask.dims != gt_mask.dims)
        throw std::invalid_argument("confusion: mask dims differ");
    Confusion c;
    for (std::size_t i = 0; i < pred_mask.data.size(); ++i) {
        const bool p = pred_mask.data[i] != 0.0f;
        const bool g = gt_mask.data[i] != 0.0f;
        c.tp += p && g;
        c.fp += p && !g;
        c.fn += !p && g;
    }
    return c;
}

Scores scores(const Confusion& c) {
    Scores s;
    s.counts = c;
    const double tp = static_cast<double>(c.tp);
    s.precision = (c.tp + c.fp) > 0 ? tp / static_cast<double>(c.tp + c.fp) : 0.0;
    s.recall = (c.tp + c.fn) > 0 ? tp / static_cast<double>(c.tp + c.fn) : 0.0;
    s.fscore = (s.precision + s.recall) > 0
                   ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                   : 0.0;
    s.jaccard = (c.tp + c.fp + c.fn) > 0 ? tp / static_cast<double>(c.tp + c.fp + c.fn) : 0.0;
    return s;
}

Scores evaluate(const SwcForest& pred, const SwcForest& gt, const std::array<int, 3>& dims) {
    return scores(confusion(rasterize_mask(pred, dims), rasterize_mask(gt, dims)));
}

}  // namespace nrtr
