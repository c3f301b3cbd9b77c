#pragma once

// Documented reference models used by the test suites, the acceptance
// runner and the CLI presets. All observation sequences are generated from
// fixed seeds, so every run sees the same inputs.

#include <vector>

#include <Eigen/Dense>

#include "mvflow/bernoulli.hpp"
#include "mvflow/observation.hpp"
#include "mvflow/phd.hpp"
#include "mvflow/rng.hpp"

namespace mvflow::benchmarks {

inline std::vector<FiniteObservations> fixed_observations(std::uint64_t seed, int horizon,
                                                          int num_obs_states, int max_count) {
    std::vector<FiniteObservations> out(static_cast<std::size_t>(horizon));
    RngStream rng(seed);
    for (int n = 0; n < horizon; ++n) {
        auto sub = rng.derive(n);
        out[static_cast<std::size_t>(n)].step = n;
        const int count = static_cast<int>(sub.next_u64() % static_cast<std::uint64_t>(max_count + 1));
        for (int i = 0; i < count; ++i)
            out[static_cast<std::size_t>(n)].points.push_back(
                static_cast<int>(sub.next_u64() % static_cast<std::uint64_t>(num_obs_states)));
    }
    return out;
}

/// Generic 3-state Bernoulli model: detection is informative and the mass
/// moves, so both flow components carry Monte Carlo error. Observation cap 2.
inline bernoulli::BernoulliSpec standard_bernoulli_spec() {
    bernoulli::BernoulliSpec spec;
    spec.survival = Eigen::VectorXd::Constant(3, 0.7);
    spec.detect = Eigen::VectorXd::Constant(3, 0.8);
    spec.local_like = Eigen::MatrixXd(3, 3);
    spec.local_like << 1.6, 0.4, 0.2,
                       0.4, 1.6, 0.4,
                       0.2, 0.4, 1.6;
    spec.clutter = Eigen::VectorXd::Constant(3, 0.8);
    spec.birth = DiscreteMeasure(Eigen::Vector3d(0.16, 0.12, 0.12));  // mu(1) = 0.4
    Eigen::MatrixXd m(3, 3);
    m << 0.70, 0.20, 0.10,
         0.15, 0.70, 0.15,
         0.10, 0.20, 0.70;
    spec.motion = StochasticMatrix(m);
    spec.validate();
    return spec;
}

inline constexpr int kStandardBernoulliObsCap = 2;

inline std::vector<FiniteObservations> standard_bernoulli_observations(int horizon) {
    return fixed_observations(0x5eedbe11u, horizon, 3, kStandardBernoulliObsCap);
}

/// Homogeneous mixing Bernoulli model with s = mu(1): constant mass flow,
/// strongly mixing motion, weak detection. This is the documented spec whose
/// contraction constants are admissible, and the testbed for the uniform-in-time
/// gates. Observation cap 2.
inline bernoulli::BernoulliSpec mixing_bernoulli_spec() {
    bernoulli::BernoulliSpec spec;
    spec.survival = Eigen::VectorXd::Constant(3, 0.3);
    spec.detect = Eigen::VectorXd::Constant(3, 0.1);
    spec.local_like = Eigen::MatrixXd(3, 3);
    spec.local_like << 1.2, 0.8, 0.9,
                       0.8, 1.2, 0.9,
                       0.9, 0.8, 1.2;
    spec.clutter = Eigen::VectorXd::Constant(3, 1.0);
    spec.birth = DiscreteMeasure(Eigen::Vector3d(0.10, 0.10, 0.10));  // mu(1) = 0.3 = s
    Eigen::MatrixXd m(3, 3);
    m << 0.40, 0.30, 0.30,
         0.30, 0.40, 0.30,
         0.30, 0.30, 0.40;
    spec.motion = StochasticMatrix(m);
    spec.validate();
    return spec;
}

inline constexpr int kMixingBernoulliObsCap = 2;

inline std::vector<FiniteObservations> mixing_bernoulli_observations(int horizon) {
    return fixed_observations(0x0b5e55edu, horizon, 3, kMixingBernoulliObsCap);
}

/// Negative control: identity motion (no mixing) and s far from mu(1).
/// Nothing forces this flow to forget its initial condition.
inline bernoulli::BernoulliSpec identity_bernoulli_spec() {
    bernoulli::BernoulliSpec spec = mixing_bernoulli_spec();
    spec.survival = Eigen::VectorXd::Constant(3, 0.8);
    spec.motion = StochasticMatrix::identity(3);
    spec.validate();
    return spec;
}

/// Generic 4-state PHD model with r (1-d) < 1 and positive birth mass.
/// Observation cap 3.
inline phd::PhdSpec standard_phd_spec() {
    phd::PhdSpec spec;
    spec.survival = Eigen::VectorXd::Constant(4, 0.8);
    spec.spawn_rate = Eigen::VectorXd::Constant(4, 0.1);
    Eigen::MatrixXd spawn(4, 4);
    spawn << 0.4, 0.3, 0.2, 0.1,
             0.25, 0.35, 0.25, 0.15,
             0.15, 0.25, 0.35, 0.25,
             0.1, 0.2, 0.3, 0.4;
    spec.spawn_kernel = StochasticMatrix(spawn);
    spec.detect = Eigen::VectorXd::Constant(4, 0.7);
    spec.sensor = Eigen::MatrixXd(4, 3);
    spec.sensor << 1.5, 0.4, 0.3,
                   0.6, 1.5, 0.5,
                   0.4, 0.7, 1.4,
                   0.3, 0.4, 0.9;
    spec.clutter = Eigen::VectorXd::Constant(3, 0.4);
    spec.birth = DiscreteMeasure(Eigen::Vector4d(0.15, 0.15, 0.15, 0.15));  // mu(1) = 0.6
    Eigen::MatrixXd m(4, 4);
    m << 0.6, 0.2, 0.1, 0.1,
         0.15, 0.6, 0.15, 0.1,
         0.1, 0.15, 0.6, 0.15,
         0.1, 0.1, 0.2, 0.6;
    spec.base_motion = StochasticMatrix(m);
    spec.validate();
    return spec;
}

inline constexpr int kStandardPhdObsCap = 3;

inline std::vector<FiniteObservations> standard_phd_observations(int horizon) {
    return fixed_observations(0x90d5eedu, horizon, 3, kStandardPhdObsCap);
}

/// Certified likelihood bounds of a Bernoulli spec over all observation
/// counts up to the cap (used to feed the stability lab).
inline std::pair<double, double> bernoulli_likelihood_envelope(const bernoulli::BernoulliSpec& spec,
                                                               int obs_cap) {
    double lo = 1e300, hi = 0.0;
    for (int count = 0; count <= obs_cap; ++count) {
        const auto [l, h] = bernoulli::likelihood_bounds_certified(
            spec.detect.minCoeff(), spec.detect.maxCoeff(), spec.local_like.minCoeff(),
            spec.local_like.maxCoeff(), spec.clutter.minCoeff(), spec.clutter.maxCoeff(), count);
        lo = std::min(lo, l);
        hi = std::max(hi, h);
    }
    return {lo, hi};
}

}  // namespace mvflow::benchmarks
