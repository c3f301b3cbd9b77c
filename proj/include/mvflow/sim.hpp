#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "mvflow/association.hpp"
#include "mvflow/bernoulli.hpp"
#include "mvflow/errors.hpp"
#include "mvflow/gaussian.hpp"
#include "mvflow/observation.hpp"
#include "mvflow/phd.hpp"
#include "mvflow/rng.hpp"

namespace mvflow::sim {

/// Ground truth for one step: surviving targets with their states and
/// detection flags, plus the clutter points, in generation order.
template <class State, class Obs>
struct StepTruth {
    struct Target {
        int id = 0;
        State state{};
        bool detected = false;
    };
    std::vector<Target> targets;
    std::vector<Obs> clutter;
};

template <class State, class Obs>
struct Scenario {
    std::vector<StepTruth<State, Obs>> truth;          ///< index = step
    std::vector<ObservationSet<Obs>> observations;     ///< index = step
};

using FiniteScenario = Scenario<int, int>;
using EuclideanScenario = Scenario<Eigen::VectorXd, Eigen::VectorXd>;

namespace detail {

inline int sample_row(const Eigen::VectorXd& weights, RngStream& rng) {
    return rng.categorical(weights);
}

/// Draw one observation from the per-state emission row l(x, .) normalized
/// over the observation space.
inline int sample_emission(const Eigen::MatrixXd& table, int state, RngStream& rng) {
    return rng.categorical(Eigen::VectorXd(table.row(state).transpose()));
}

inline void append_finite_clutter(const Eigen::VectorXd& intensity, RngStream& rng,
                                  std::vector<int>& clutter) {
    const double rate = intensity.sum();
    if (!(rate > 0.0)) return;
    const int count = rng.poisson(rate);
    for (int i = 0; i < count; ++i) clutter.push_back(rng.categorical(intensity));
}

}  // namespace detail

/// Single-target scenario matching the joint detection/tracking model:
/// birth with probability mu(1), survival s(x), motion M, detection d(x)
/// with emission l(x, .), Poisson clutter with intensity h.
inline FiniteScenario simulate_bernoulli(const bernoulli::BernoulliSpec& spec, double mass0,
                                         const DiscreteMeasure& eta0, int horizon, RngStream stream,
                                         int obs_cap = std::numeric_limits<int>::max()) {
    spec.validate();
    FiniteScenario out;
    out.truth.resize(static_cast<std::size_t>(horizon));
    out.observations.resize(static_cast<std::size_t>(horizon));

    auto rng = stream.derive(0xbe);
    bool present = rng.bernoulli(mass0);
    int state = present ? detail::sample_row(eta0.weights(), rng) : 0;
    const DiscreteMeasure mu_bar =
        spec.birth_mass() > 0.0 ? spec.birth.normalized() : DiscreteMeasure::uniform(spec.num_states());

    for (int n = 0; n < horizon; ++n) {
        auto& truth = out.truth[static_cast<std::size_t>(n)];
        auto& obs = out.observations[static_cast<std::size_t>(n)];
        obs.step = n;
        if (present) {
            const bool detected = rng.bernoulli(spec.detect[state]);
            truth.targets.push_back({0, state, detected});
            if (detected) obs.points.push_back(detail::sample_emission(spec.local_like, state, rng));
        }
        detail::append_finite_clutter(spec.clutter, rng, truth.clutter);
        for (int y : truth.clutter) obs.points.push_back(y);
        if (static_cast<int>(obs.points.size()) > obs_cap) obs.points.resize(static_cast<std::size_t>(obs_cap));

        // advance to step n + 1
        if (present) {
            if (rng.bernoulli(spec.survival[state]))
                state = detail::sample_row(spec.motion.row(state), rng);
            else
                present = false;
        } else if (rng.bernoulli(spec.birth_mass())) {
            present = true;
            state = detail::sample_row(mu_bar.weights(), rng);
        }
    }
    return out;
}

/// Multi-target scenario for the intensity filter: per step every target
/// survives with probability s(x) and moves by M', spawns Poisson(b(x))
/// offspring from B_bar(x, .), spontaneous births arrive Poisson(mu(1)) from
/// mu_bar, detections fire with probability d(x) and emit from g(x, .), and
/// clutter is Poisson with intensity h.
inline FiniteScenario simulate_phd(const phd::PhdSpec& spec, double mass0,
                                   const DiscreteMeasure& eta0, int horizon, RngStream stream,
                                   int obs_cap = std::numeric_limits<int>::max()) {
    spec.validate();
    FiniteScenario out;
    out.truth.resize(static_cast<std::size_t>(horizon));
    out.observations.resize(static_cast<std::size_t>(horizon));

    auto rng = stream.derive(0xfd);
    std::vector<int> states;
    const int initial = rng.poisson(mass0);
    for (int i = 0; i < initial; ++i) states.push_back(detail::sample_row(eta0.weights(), rng));
    const DiscreteMeasure mu_bar =
        spec.birth_mass() > 0.0 ? spec.birth.normalized() : DiscreteMeasure::uniform(spec.num_states());
    int next_id = initial;

    std::vector<int> ids(states.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);

    for (int n = 0; n < horizon; ++n) {
        auto& truth = out.truth[static_cast<std::size_t>(n)];
        auto& obs = out.observations[static_cast<std::size_t>(n)];
        obs.step = n;
        for (std::size_t i = 0; i < states.size(); ++i) {
            const int x = states[i];
            const bool detected = rng.bernoulli(spec.detect[x]);
            truth.targets.push_back({ids[i], x, detected});
            if (detected) obs.points.push_back(detail::sample_emission(spec.sensor, x, rng));
        }
        detail::append_finite_clutter(spec.clutter, rng, truth.clutter);
        for (int y : truth.clutter) obs.points.push_back(y);
        if (static_cast<int>(obs.points.size()) > obs_cap) obs.points.resize(static_cast<std::size_t>(obs_cap));

        // advance to step n + 1
        std::vector<int> next_states;
        std::vector<int> next_ids;
        for (std::size_t i = 0; i < states.size(); ++i) {
            const int x = states[i];
            if (rng.bernoulli(spec.survival[x])) {
                next_states.push_back(detail::sample_row(spec.base_motion.row(x), rng));
                next_ids.push_back(ids[i]);
            }
            const int spawned = rng.poisson(spec.spawn_rate[x]);
            for (int j = 0; j < spawned; ++j) {
                next_states.push_back(detail::sample_row(spec.spawn_kernel.row(x), rng));
                next_ids.push_back(next_id++);
            }
        }
        const int births = rng.poisson(spec.birth_mass());
        for (int j = 0; j < births; ++j) {
            next_states.push_back(detail::sample_row(mu_bar.weights(), rng));
            next_ids.push_back(next_id++);
        }
        states = std::move(next_states);
        ids = std::move(next_ids);
    }
    return out;
}

/// Linear-Gaussian multi-target scenario on a rectangular window. Clutter is
/// uniform over the window with total rate h * volume, matching a constant
/// clutter intensity h.
inline EuclideanScenario simulate_gaussian_phd(const assoc::LinearGaussianPhdSpec& spec,
                                               double mass0, int horizon,
                                               const Eigen::VectorXd& window_lo,
                                               const Eigen::VectorXd& window_hi, RngStream stream,
                                               int obs_cap = std::numeric_limits<int>::max()) {
    spec.validate();
    EuclideanScenario out;
    out.truth.resize(static_cast<std::size_t>(horizon));
    out.observations.resize(static_cast<std::size_t>(horizon));

    auto rng = stream.derive(0x6a);
    double volume = 1.0;
    for (Eigen::Index i = 0; i < window_lo.size(); ++i) volume *= window_hi[i] - window_lo[i];
    const double clutter_rate = spec.clutter * volume;

    std::vector<Eigen::VectorXd> states;
    const int initial = rng.poisson(mass0);
    for (int i = 0; i < initial; ++i) states.push_back(gaussian::sample_state(spec.birth, rng));
    int next_id = initial;
    std::vector<int> ids(states.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);

    for (int n = 0; n < horizon; ++n) {
        auto& truth = out.truth[static_cast<std::size_t>(n)];
        auto& obs = out.observations[static_cast<std::size_t>(n)];
        obs.step = n;
        for (std::size_t i = 0; i < states.size(); ++i) {
            const bool detected = rng.bernoulli(spec.detect);
            truth.targets.push_back({ids[i], states[i], detected});
            if (detected) obs.points.push_back(spec.sensor.sample(states[i], rng));
        }
        const int clutter_count = rng.poisson(clutter_rate);
        for (int j = 0; j < clutter_count; ++j) {
            Eigen::VectorXd point(window_lo.size());
            for (Eigen::Index i = 0; i < point.size(); ++i)
                point[i] = window_lo[i] + rng.uniform() * (window_hi[i] - window_lo[i]);
            truth.clutter.push_back(point);
            obs.points.push_back(point);
        }
        if (static_cast<int>(obs.points.size()) > obs_cap) obs.points.resize(static_cast<std::size_t>(obs_cap));

        std::vector<Eigen::VectorXd> next_states;
        std::vector<int> next_ids;
        const double spawn_prob = spec.spawn;  // rate x kernel form, kernel = motion
        for (std::size_t i = 0; i < states.size(); ++i) {
            if (rng.bernoulli(spec.survival)) {
                next_states.push_back(spec.motion.sample(states[i], rng));
                next_ids.push_back(ids[i]);
            }
            const int spawned = rng.poisson(spawn_prob);
            for (int j = 0; j < spawned; ++j) {
                next_states.push_back(spec.motion.sample(states[i], rng));
                next_ids.push_back(next_id++);
            }
        }
        const int births = rng.poisson(spec.birth_mass);
        for (int j = 0; j < births; ++j) {
            next_states.push_back(gaussian::sample_state(spec.birth, rng));
            next_ids.push_back(next_id++);
        }
        states = std::move(next_states);
        ids = std::move(next_ids);
    }
    return out;
}

}  // namespace mvflow::sim
