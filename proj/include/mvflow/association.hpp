#pragma once

#include <algorithm>
#include <map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mvflow/errors.hpp"
#include "mvflow/gaussian.hpp"
#include "mvflow/measure.hpp"
#include "mvflow/observation.hpp"
#include "mvflow/phd.hpp"
#include "mvflow/rng.hpp"

namespace mvflow::assoc {

/// Association alphabet symbols: a non-negative id refers to an observation
/// point of the current step; the two virtual points cover undetected
/// targets and births.
inline constexpr int kUndetected = -1;  ///< c
inline constexpr int kBirth = -2;       ///< c'

/// Linear-Gaussian PHD model with state-independent rates, the regime where
/// every association sub-filter stays a single Gaussian. Spawned targets
/// share the base motion kernel, so the merged motion equals `motion`.
struct LinearGaussianPhdSpec {
    double survival = 0.9;  ///< s
    double spawn = 0.0;     ///< b
    double detect = 0.9;    ///< d
    double clutter = 0.0;   ///< h, constant clutter intensity on the window
    gaussian::LinearGaussianKernel motion;
    gaussian::LinearGaussianSensor sensor;
    gaussian::GaussianState birth;  ///< mu_bar
    double birth_mass = 1.0;        ///< mu(1)

    double rate_r() const { return survival + spawn; }

    void validate() const {
        if (!(rate_r() > 0.0)) throw validation_error("LinearGaussianPhdSpec: needs r = s + b > 0");
        if (detect < 0.0 || detect > 1.0) throw validation_error("LinearGaussianPhdSpec: d outside [0,1]");
        if (clutter < 0.0) throw validation_error("LinearGaussianPhdSpec: negative clutter");
        if (!(birth_mass > 0.0)) throw validation_error("LinearGaussianPhdSpec: needs mu(1) > 0");
    }
};

/// Sub-filter policy for the linear-Gaussian spec: closed-form Kalman
/// algebra over single Gaussian states.
struct GaussianSubModel {
    LinearGaussianPhdSpec spec;

    using State = gaussian::GaussianState;
    using Obs = Eigen::VectorXd;

    double rate_r() const { return spec.rate_r(); }
    double detect_d() const { return spec.detect; }
    double clutter_h(const Obs&) const { return spec.clutter; }
    double birth_mass() const { return spec.birth_mass; }

    /// eta^(a)(g(., y)) in closed form.
    double sensor_integral(const State& s, const Obs& y) const {
        return spec.sensor.predictive_likelihood(s, y);
    }
    State step_observation(const State& s, const Obs& y) const {
        return spec.motion.predict(spec.sensor.update(s, y));
    }
    State step_undetected(const State& s) const { return spec.motion.predict(s); }
    State birth_state() const { return spec.birth; }
};

/// Sub-filter policy on a finite space: exact dense sub-measures driven by a
/// homogeneous-rate PhdSpec.
struct FiniteSubModel {
    phd::PhdSpec spec;
    Eigen::MatrixXd merged;

    explicit FiniteSubModel(phd::PhdSpec s) : spec(std::move(s)), merged(spec.merged_motion()) {
        spec.validate(true);
    }

    using State = DiscreteMeasure;
    using Obs = int;

    double rate_r() const { return spec.branch_rate()[0]; }
    double detect_d() const { return spec.detect[0]; }
    double clutter_h(const Obs& y) const { return spec.clutter[y]; }
    double birth_mass() const { return spec.birth_mass(); }

    double sensor_integral(const State& s, const Obs& y) const {
        return integrate(s, Eigen::VectorXd(spec.sensor.col(y)));
    }
    State step_observation(const State& s, const Obs& y) const {
        return DiscreteMeasure(merged.transpose() *
                               boltzmann_gibbs(Eigen::VectorXd(spec.sensor.col(y)), s).weights());
    }
    State step_undetected(const State& s) const {
        return DiscreteMeasure(merged.transpose() * s.weights());
    }
    State birth_state() const { return spec.birth.normalized(); }
};

template <class SM>
struct Hypothesis {
    std::vector<int> symbols;  ///< a_{0:n}; entry -1 = c, -2 = c', k >= 0 = obs index at that step
    double weight = 1.0;
    typename SM::State state;
};

template <class SM>
struct AssociationState {
    double mass = 1.0;  ///< gamma_n(1); B_n = mass x (weights)
    std::vector<Hypothesis<SM>> hypotheses;
    int step = 0;
};

template <class SM>
AssociationState<SM> init_association(typename SM::State eta0, double mass0) {
    AssociationState<SM> out;
    out.mass = mass0;
    out.hypotheses.push_back({{}, 1.0, std::move(eta0)});
    return out;
}

struct PruneConfig {
    std::size_t max_hypotheses = 100000;
    double min_relative_weight = 1e-12;  ///< relative to the total mass of A
};

/// One sub-filter transition Phi^{(b)}: observation symbols apply a Bayes
/// update followed by the motion predict; c predicts only; c' resets to the
/// normalized birth law.
template <class SM>
typename SM::State sub_filter_step(const SM& sm, const typename SM::State& state, int symbol,
                                   const ObservationSet<typename SM::Obs>& obs) {
    if (symbol == kBirth) return sm.birth_state();
    if (symbol == kUndetected) return sm.step_undetected(state);
    if (symbol < 0 || symbol >= static_cast<int>(obs.points.size()))
        throw parameter_error("sub_filter_step: symbol outside alphabet");
    return sm.step_observation(state, obs.points[static_cast<std::size_t>(symbol)]);
}

/// Per-observation normalizers z_y = h(y) + gamma(d g(., y)) for the current
/// association state (gamma = mass x mixture).
template <class SM>
std::vector<double> observation_normalizers(const SM& sm, const AssociationState<SM>& state,
                                            const ObservationSet<typename SM::Obs>& obs) {
    std::vector<double> z(obs.points.size());
    for (std::size_t i = 0; i < obs.points.size(); ++i) {
        double mix = 0.0;
        for (const auto& hyp : state.hypotheses)
            mix += hyp.weight * sm.sensor_integral(hyp.state, obs.points[i]);
        z[i] = sm.clutter_h(obs.points[i]) + state.mass * sm.detect_d() * mix;
        if (!(z[i] > 0.0)) throw extinction_error("association: h(y) + gamma(d g(., y)) = 0");
    }
    return z;
}

/// Predictive weight eta^(a)(G^{(b)}_{n,gamma}): the sub-filter's expected
/// potential under symbol b, given the per-observation normalizers.
template <class SM>
double predictive_weight(const SM& sm, const Hypothesis<SM>& hyp, int symbol,
                         const ObservationSet<typename SM::Obs>& obs,
                         const std::vector<double>& normalizers, double mass) {
    const double r = sm.rate_r();
    const double d = sm.detect_d();
    if (symbol == kUndetected) return r * (1.0 - d);
    if (symbol == kBirth) return sm.birth_mass() / mass;
    return r * d * sm.sensor_integral(hyp.state, obs.points[static_cast<std::size_t>(symbol)]) /
           normalizers[static_cast<std::size_t>(symbol)];
}

template <class SM>
struct OmegaResult {
    AssociationState<SM> next;
    double mass_factor = 0.0;  ///< eta_n(G_{n,gamma_n}) = total unnormalized Omega weight
};

namespace detail {

/// Unnormalized Omega weights W(a, b) = A(a) nu(b) eta^(a)(G^(b)) laid out
/// as rows = hypotheses, cols = alphabet [obs..., c, c'].
template <class SM>
Eigen::MatrixXd omega_weights(const SM& sm, const AssociationState<SM>& state,
                              const ObservationSet<typename SM::Obs>& obs,
                              const std::vector<double>& normalizers) {
    const int num_obs = static_cast<int>(obs.points.size());
    const int cols = num_obs + 2;
    Eigen::MatrixXd w(static_cast<Eigen::Index>(state.hypotheses.size()), cols);
    for (std::size_t a = 0; a < state.hypotheses.size(); ++a) {
        const auto& hyp = state.hypotheses[a];
        for (int b = 0; b < num_obs; ++b)
            w(static_cast<Eigen::Index>(a), b) =
                hyp.weight * predictive_weight(sm, hyp, b, obs, normalizers, state.mass);
        w(static_cast<Eigen::Index>(a), num_obs) =
            hyp.weight * predictive_weight(sm, hyp, kUndetected, obs, normalizers, state.mass);
        w(static_cast<Eigen::Index>(a), num_obs + 1) =
            hyp.weight * predictive_weight(sm, hyp, kBirth, obs, normalizers, state.mass);
    }
    return w;
}

inline int column_symbol(int column, int num_obs) {
    if (column < num_obs) return column;
    return column == num_obs ? kUndetected : kBirth;
}

}  // namespace detail

/// Exact association-measure recursion A' = Omega(mass, A): every hypothesis
/// branches over the extended alphabet, weights are the predictive weights,
/// and the flow mass advances by the total unnormalized weight. Pruning
/// drops sub-threshold atoms (renormalizing) and enforces the hypothesis cap.
template <class SM>
OmegaResult<SM> omega_step(const SM& sm, const AssociationState<SM>& state,
                           const ObservationSet<typename SM::Obs>& obs,
                           const PruneConfig& prune = {}) {
    const auto normalizers = observation_normalizers(sm, state, obs);
    const Eigen::MatrixXd w = detail::omega_weights(sm, state, obs, normalizers);
    const double total = w.sum();
    if (!(total > 0.0)) throw extinction_error("omega_step: all association weights vanish");
    const int num_obs = static_cast<int>(obs.points.size());

    OmegaResult<SM> out;
    out.mass_factor = total;
    out.next.mass = state.mass * total;
    out.next.step = state.step + 1;
    const double threshold = prune.min_relative_weight * total;
    for (std::size_t a = 0; a < state.hypotheses.size(); ++a) {
        for (int b = 0; b < num_obs + 2; ++b) {
            const double weight = w(static_cast<Eigen::Index>(a), b);
            if (weight <= threshold) continue;
            const int symbol = detail::column_symbol(b, num_obs);
            Hypothesis<SM> hyp;
            hyp.symbols = state.hypotheses[a].symbols;
            hyp.symbols.push_back(symbol);
            hyp.weight = weight;
            hyp.state = sub_filter_step(sm, state.hypotheses[a].state, symbol, obs);
            out.next.hypotheses.push_back(std::move(hyp));
        }
    }
    if (out.next.hypotheses.empty()) throw extinction_error("omega_step: pruning removed every atom");
    if (out.next.hypotheses.size() > prune.max_hypotheses) {
        std::nth_element(out.next.hypotheses.begin(),
                         out.next.hypotheses.begin() + static_cast<std::ptrdiff_t>(prune.max_hypotheses),
                         out.next.hypotheses.end(),
                         [](const auto& x, const auto& y) { return x.weight > y.weight; });
        out.next.hypotheses.resize(prune.max_hypotheses);
    }
    double kept = 0.0;
    for (const auto& hyp : out.next.hypotheses) kept += hyp.weight;
    for (auto& hyp : out.next.hypotheses) hyp.weight /= kept;
    return out;
}

/// N-sampled association transition: the mass advances by the exact factor
/// computed from the current (empirical) state, and the new state holds the
/// empirical measure of N conditionally i.i.d. draws from Omega, with one
/// sub-filter update per distinct draw.
template <class SM>
AssociationState<SM> sample_association_ensemble(const SM& sm, const AssociationState<SM>& state,
                                                 const ObservationSet<typename SM::Obs>& obs,
                                                 int count, RngStream stream) {
    if (count < 1) throw parameter_error("sample_association_ensemble: N >= 1");
    const auto normalizers = observation_normalizers(sm, state, obs);
    const Eigen::MatrixXd w = detail::omega_weights(sm, state, obs, normalizers);
    const double total = w.sum();
    if (!(total > 0.0)) throw extinction_error("sample_association_ensemble: weights vanish");
    const int num_obs = static_cast<int>(obs.points.size());
    const int cols = num_obs + 2;

    Eigen::VectorXd flat(w.size());
    for (Eigen::Index a = 0; a < w.rows(); ++a)
        for (int b = 0; b < cols; ++b) flat[a * cols + b] = w(a, b);
    const CategoricalTable table(flat);

    std::map<std::pair<int, int>, int> counts;  // ordered: deterministic iteration
    for (int i = 0; i < count; ++i) {
        auto rng = stream.derive(state.step + 1, i);
        const int idx = table.draw(rng);
        ++counts[{idx / cols, idx % cols}];
    }

    AssociationState<SM> out;
    out.mass = state.mass * total;
    out.step = state.step + 1;
    for (const auto& [key, copies] : counts) {
        const auto& parent = state.hypotheses[static_cast<std::size_t>(key.first)];
        const int symbol = detail::column_symbol(key.second, num_obs);
        Hypothesis<SM> hyp;
        hyp.symbols = parent.symbols;
        hyp.symbols.push_back(symbol);
        hyp.weight = static_cast<double>(copies) / static_cast<double>(count);
        hyp.state = sub_filter_step(sm, parent.state, symbol, obs);
        out.hypotheses.push_back(std::move(hyp));
    }
    return out;
}

/// Total variation between two association measures over the sequence space,
/// matching atoms by their full symbol sequences.
template <class SM>
double association_total_variation(const AssociationState<SM>& a, const AssociationState<SM>& b) {
    std::map<std::vector<int>, double> diff;
    for (const auto& hyp : a.hypotheses) diff[hyp.symbols] += hyp.weight;
    for (const auto& hyp : b.hypotheses) diff[hyp.symbols] -= hyp.weight;
    double tv = 0.0;
    for (const auto& [_, d] : diff) tv += std::abs(d);
    return 0.5 * tv;
}

/// Mixture reconstruction on finite spaces: eta_n = sum_a A(a) eta^(a).
inline DiscreteMeasure reconstruct_measure(const AssociationState<FiniteSubModel>& state,
                                           int num_states) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(num_states);
    for (const auto& hyp : state.hypotheses) acc += hyp.weight * hyp.state.weights();
    return DiscreteMeasure(std::move(acc));
}

/// Gaussian mixture integrals of the reconstructed measure: the mixture
/// mean and eta(f) for Gaussian bump test functions f(x) = N(x; z, S).
inline Eigen::VectorXd mixture_mean(const AssociationState<GaussianSubModel>& state) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(state.hypotheses.front().state.dim());
    for (const auto& hyp : state.hypotheses) acc += hyp.weight * hyp.state.mean;
    return acc;
}

inline double mixture_bump_integral(const AssociationState<GaussianSubModel>& state,
                                    const Eigen::VectorXd& z, const Eigen::MatrixXd& bump_cov) {
    double acc = 0.0;
    for (const auto& hyp : state.hypotheses)
        acc += hyp.weight * gaussian::density(z, hyp.state.mean,
                                              Eigen::MatrixXd(hyp.state.cov + bump_cov));
    return acc;
}

// ---------------------------------------------------------------------------
// Direct Gaussian-mixture PHD recursion (dual route for the association flow)
// ---------------------------------------------------------------------------

struct GaussianMixturePair {
    double mass = 1.0;
    std::vector<double> weights;  ///< normalized
    std::vector<gaussian::GaussianState> components;
    int step = 0;
};

/// One merged PHD step on a Gaussian mixture, mirroring the finite-state
/// recursion: update by the extended-alphabet potential, move by the merged
/// motion, and mix in the birth component.
inline GaussianMixturePair gaussian_phd_flow_step(const LinearGaussianPhdSpec& spec,
                                                  const GaussianMixturePair& pair,
                                                  const EuclideanObservations& obs) {
    spec.validate();
    const double r = spec.rate_r();
    const double d = spec.detect;
    const std::size_t num_comp = pair.components.size();

    std::vector<double> z(obs.points.size());
    for (std::size_t i = 0; i < obs.points.size(); ++i) {
        double mix = 0.0;
        for (std::size_t c = 0; c < num_comp; ++c)
            mix += pair.weights[c] * spec.sensor.predictive_likelihood(pair.components[c], obs.points[i]);
        z[i] = spec.clutter + pair.mass * d * mix;
        if (!(z[i] > 0.0)) throw extinction_error("gaussian_phd_flow_step: vanishing normalizer");
    }

    std::vector<double> weights;
    std::vector<gaussian::GaussianState> comps;
    double total = 0.0;
    for (std::size_t c = 0; c < num_comp; ++c) {
        const double undetected = pair.weights[c] * r * (1.0 - d);
        weights.push_back(undetected);
        comps.push_back(spec.motion.predict(pair.components[c]));
        total += undetected;
        for (std::size_t i = 0; i < obs.points.size(); ++i) {
            const double like =
                spec.sensor.predictive_likelihood(pair.components[c], obs.points[i]);
            const double wt = pair.weights[c] * r * d * like / z[i];
            weights.push_back(wt);
            comps.push_back(spec.motion.predict(spec.sensor.update(pair.components[c], obs.points[i])));
            total += wt;
        }
    }
    if (!(total > 0.0)) throw extinction_error("gaussian_phd_flow_step: eta(g) = 0");

    GaussianMixturePair out;
    out.step = pair.step + 1;
    out.mass = pair.mass * total + spec.birth_mass;
    const double alpha = pair.mass * total / out.mass;
    for (std::size_t c = 0; c < weights.size(); ++c) {
        out.weights.push_back(alpha * weights[c] / total);
        out.components.push_back(comps[c]);
    }
    out.weights.push_back(1.0 - alpha);
    out.components.push_back(spec.birth);
    return out;
}

inline Eigen::VectorXd mixture_mean(const GaussianMixturePair& pair) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(pair.components.front().dim());
    for (std::size_t c = 0; c < pair.components.size(); ++c)
        acc += pair.weights[c] * pair.components[c].mean;
    return acc;
}

inline double mixture_bump_integral(const GaussianMixturePair& pair, const Eigen::VectorXd& z,
                                    const Eigen::MatrixXd& bump_cov) {
    double acc = 0.0;
    for (std::size_t c = 0; c < pair.components.size(); ++c)
        acc += pair.weights[c] * gaussian::density(z, pair.components[c].mean,
                                                   Eigen::MatrixXd(pair.components[c].cov + bump_cov));
    return acc;
}

// ---------------------------------------------------------------------------
// Mixed N x N' scheme
// ---------------------------------------------------------------------------

/// Hypothesis carrying an inner particle ensemble in place of the closed-form
/// sub-filter state.
struct MixedHypothesis {
    std::vector<int> symbols;
    double weight = 1.0;
    std::vector<Eigen::VectorXd> particles;
};

struct MixedState {
    double mass = 1.0;
    std::vector<MixedHypothesis> hypotheses;
    int step = 0;
};

inline MixedState init_mixed(const LinearGaussianPhdSpec& spec, double mass0, int inner_count,
                             RngStream stream) {
    if (inner_count < 1) throw parameter_error("init_mixed: N' >= 1");
    MixedState out;
    out.mass = mass0;
    MixedHypothesis hyp;
    hyp.weight = 1.0;
    for (int j = 0; j < inner_count; ++j) {
        auto rng = stream.derive(0, 0, j);
        hyp.particles.push_back(gaussian::sample_state(spec.birth, rng));
    }
    out.hypotheses.push_back(std::move(hyp));
    return out;
}

/// One step of the mixed scheme: association resampling driven by predictive
/// weights computed from the inner empirical measures, followed by an inner
/// selection/mutation transition per surviving hypothesis.
inline MixedState mixed_step(const LinearGaussianPhdSpec& spec, const MixedState& state,
                             const EuclideanObservations& obs, int count, RngStream stream) {
    spec.validate();
    if (count < 1) throw parameter_error("mixed_step: N >= 1");
    for (const auto& hyp : state.hypotheses)
        if (hyp.particles.empty()) throw parameter_error("mixed_step: empty inner ensemble");
    const double r = spec.rate_r();
    const double d = spec.detect;
    const int num_obs = static_cast<int>(obs.points.size());
    const int cols = num_obs + 2;

    // Inner empirical sensor integrals per (hypothesis, observation).
    Eigen::MatrixXd integral(static_cast<Eigen::Index>(state.hypotheses.size()), std::max(num_obs, 1));
    for (std::size_t a = 0; a < state.hypotheses.size(); ++a) {
        const auto& particles = state.hypotheses[a].particles;
        for (int i = 0; i < num_obs; ++i) {
            double acc = 0.0;
            for (const auto& x : particles)
                acc += gaussian::density(obs.points[static_cast<std::size_t>(i)],
                                         Eigen::VectorXd(spec.sensor.observation * x),
                                         spec.sensor.noise);
            integral(static_cast<Eigen::Index>(a), i) = acc / static_cast<double>(particles.size());
        }
    }

    std::vector<double> z(static_cast<std::size_t>(num_obs));
    for (int i = 0; i < num_obs; ++i) {
        double mix = 0.0;
        for (std::size_t a = 0; a < state.hypotheses.size(); ++a)
            mix += state.hypotheses[a].weight * integral(static_cast<Eigen::Index>(a), i);
        z[static_cast<std::size_t>(i)] = spec.clutter + state.mass * d * mix;
        if (!(z[static_cast<std::size_t>(i)] > 0.0))
            throw extinction_error("mixed_step: vanishing normalizer");
    }

    Eigen::VectorXd flat(static_cast<Eigen::Index>(state.hypotheses.size()) * cols);
    double total = 0.0;
    for (std::size_t a = 0; a < state.hypotheses.size(); ++a) {
        const double wa = state.hypotheses[a].weight;
        for (int b = 0; b < cols; ++b) {
            double pw;
            if (b < num_obs)
                pw = r * d * integral(static_cast<Eigen::Index>(a), b) / z[static_cast<std::size_t>(b)];
            else if (b == num_obs)
                pw = r * (1.0 - d);
            else
                pw = spec.birth_mass / state.mass;
            flat[static_cast<Eigen::Index>(a) * cols + b] = wa * pw;
            total += wa * pw;
        }
    }
    if (!(total > 0.0)) throw extinction_error("mixed_step: association weights vanish");

    const CategoricalTable table(flat);
    std::map<std::pair<int, int>, int> counts;
    for (int i = 0; i < count; ++i) {
        auto rng = stream.derive(state.step + 1, i);
        const int idx = table.draw(rng);
        ++counts[{idx / cols, idx % cols}];
    }

    MixedState out;
    out.mass = state.mass * total;
    out.step = state.step + 1;
    int hyp_index = 0;
    for (const auto& [key, copies] : counts) {
        const auto& parent = state.hypotheses[static_cast<std::size_t>(key.first)];
        const int symbol = detail::column_symbol(key.second, num_obs);
        const int inner = static_cast<int>(parent.particles.size());
        MixedHypothesis hyp;
        hyp.symbols = parent.symbols;
        hyp.symbols.push_back(symbol);
        hyp.weight = static_cast<double>(copies) / static_cast<double>(count);
        hyp.particles.reserve(static_cast<std::size_t>(inner));
        if (symbol == kBirth) {
            for (int j = 0; j < inner; ++j) {
                auto rng = stream.derive(state.step + 1, 1 + hyp_index, j);
                hyp.particles.push_back(gaussian::sample_state(spec.birth, rng));
            }
        } else {
            Eigen::VectorXd weights(inner);
            if (symbol == kUndetected) {
                weights.setOnes();  // constant potential r (1 - d)
            } else {
                for (int j = 0; j < inner; ++j)
                    weights[j] = gaussian::density(
                        obs.points[static_cast<std::size_t>(symbol)],
                        Eigen::VectorXd(spec.sensor.observation * parent.particles[static_cast<std::size_t>(j)]),
                        spec.sensor.noise);
            }
            const AliasTable ancestors(weights);
            for (int j = 0; j < inner; ++j) {
                auto rng = stream.derive(state.step + 1, 1 + hyp_index, j);
                const auto& ancestor =
                    parent.particles[static_cast<std::size_t>(ancestors.draw(rng))];
                hyp.particles.push_back(spec.motion.sample(ancestor, rng));
            }
        }
        out.hypotheses.push_back(std::move(hyp));
        ++hyp_index;
    }
    return out;
}

/// Mixture mean of a mixed state (inner ensembles averaged uniformly).
inline Eigen::VectorXd mixture_mean(const MixedState& state) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(state.hypotheses.front().particles.front().size());
    for (const auto& hyp : state.hypotheses) {
        Eigen::VectorXd inner = Eigen::VectorXd::Zero(acc.size());
        for (const auto& x : hyp.particles) inner += x;
        acc += hyp.weight * inner / static_cast<double>(hyp.particles.size());
    }
    return acc;
}

}  // namespace mvflow::assoc
