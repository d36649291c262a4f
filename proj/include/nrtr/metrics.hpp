#pragma once

#include <array>
#include <cstdint>

#include <json.hpp>

#include "nrtr/swc.hpp"
#include "nrtr/volume.hpp"

namespace nrtr {

struct Confusion {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
};

/// Precision, Recall, F-Score, Jaccard; 0/0 denominators give 0.
struct Scores {
    double precision = 0.0;
    double recall = 0.0;
    double fscore = 0.0;
    double jaccard = 0.0;
    Confusion counts;

    nlohmann::json to_json() const {
        return nlohmann::json{{"precision", precision}, {"recall", recall},
                              {"fscore", fscore},       {"jaccard", jaccard},
                              {"tp", counts.tp},        {"fp", counts.fp},
                              {"fn", counts.fn}};
    }
};

/// Voxelwise counts between binary masks of identical dims (foreground =
/// nonzero).
Confusion confusion(const Volume& pred_mask, const Volume& gt_mask);

Scores scores(const Confusion& c);

/// Rasterizes both forests on a dims grid and scores the overlap.
Scores evaluate(const SwcForest& pred, const SwcForest& gt, const std::array<int, 3>& dims);

}  // namespace nrtr
