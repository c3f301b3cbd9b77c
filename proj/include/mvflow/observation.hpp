#pragma once

#include <vector>

#include <Eigen/Dense>

namespace mvflow {

/// One step's counting-measure observation: a multiset of observation
/// points (duplicates are meaningful and contribute additively to
/// likelihoods). Y = int for finite observation spaces, Eigen::VectorXd for
/// Euclidean sensors.
template <class Y>
struct ObservationSet {
    std::vector<Y> points;
    int step = 0;

    int count() const { return static_cast<int>(points.size()); }
};

using FiniteObservations = ObservationSet<int>;
using EuclideanObservations = ObservationSet<Eigen::VectorXd>;

}  // namespace mvflow
