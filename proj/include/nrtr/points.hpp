#pragma once

#include <cstddef>
#include <vector>

namespace nrtr {

/// One predicted (or ground-truth) point: normalized center coordinates,
/// normalized radius and the probability of belonging to the "neuron"
/// category. The complement 1 - cls is the "no-object" probability.
struct PredPoint {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double r = 0.0;
    double cls = 0.0;
};

enum class SetRole { Prediction, GroundTruth };

/// Ordered collection of points. Prediction sets have the fixed size N
/// configured on the model; ground-truth sets carry cls = 1 on every point.
struct PointSet {
    std::vector<PredPoint> points;
    SetRole role = SetRole::Prediction;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

}  // namespace nrtr
