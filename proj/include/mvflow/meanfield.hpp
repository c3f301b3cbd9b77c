#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mvflow/errors.hpp"
#include "mvflow/flow.hpp"
#include "mvflow/measure.hpp"
#include "mvflow/rng.hpp"

namespace mvflow::meanfield {

/// N-particle approximation of a mass/measure pair on a finite state space.
/// The empirical measure carries uniform weights 1/N; the mass evolves by
/// the deterministic recursion mass' = mass * eta^N(G). Randomness is drawn
/// from counter-based substreams keyed by (stream key, step, particle), so
/// per-particle parallelism cannot change any result.
struct ParticleEnsemble {
    std::vector<int> particles;
    double mass = 1.0;
    int step = 0;
    RngStream stream;  ///< base stream (master seed + trial already folded in)

    int size() const { return static_cast<int>(particles.size()); }
};

/// Resampling variant used inside the McKean transition. `always`
/// corresponds to eps = 0, where every particle redraws its ancestor.
struct SelectionScheme {
    enum Kind { always, additive, multiplicative } kind = always;
    double eps = 0.0;
};

inline DiscreteMeasure empirical_measure(const ParticleEnsemble& ens, int num_states) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(num_states);
    const double unit = 1.0 / static_cast<double>(ens.size());
    for (int x : ens.particles) {
        if (x < 0 || x >= num_states) throw domain_error("empirical_measure: state out of range");
        w[x] += unit;
    }
    return DiscreteMeasure(std::move(w));
}

/// N i.i.d. draws from eta0, with mass set to the known initial mass.
inline ParticleEnsemble init_ensemble(const DiscreteMeasure& eta0, double mass0, int count,
                                      RngStream stream) {
    if (count < 1) throw parameter_error("init_ensemble: N must be >= 1");
    if (!eta0.is_probability()) throw validation_error("init_ensemble: eta0 must be a probability");
    ParticleEnsemble ens;
    ens.particles.resize(static_cast<std::size_t>(count));
    ens.mass = mass0;
    ens.step = 0;
    ens.stream = stream;
    const CategoricalTable table(eta0.weights());
    for (int i = 0; i < count; ++i) {
        auto rng = stream.derive(/*step=*/0, /*phase=*/0, i);
        ens.particles[static_cast<std::size_t>(i)] = table.draw(rng);
    }
    return ens;
}

/// One mean-field step: mass' = mass * eta^N(G_{n,gamma^N}), then every
/// particle independently moves by the McKean transition
/// K = S_{n,gamma^N} (alpha base + (1-alpha) reset) built at the empirical
/// measure.
template <flow::FiniteFlowModel M>
ParticleEnsemble mf_step(const ParticleEnsemble& ens, const M& model,
                         SelectionScheme scheme = {}) {
    const int n = ens.step;
    const int count = ens.size();
    const DiscreteMeasure eta = empirical_measure(ens, model.num_states());
    const flow::McKeanStep step = model.mckean_step(n, ens.mass, eta);

    // Fixed-order mass reduction.
    double pot_sum = 0.0;
    for (int i = 0; i < count; ++i) pot_sum += step.mass_potential[ens.particles[static_cast<std::size_t>(i)]];
    const double factor = pot_sum / static_cast<double>(count);
    if (!(factor > 0.0)) throw extinction_error("mf_step: eta^N(G) = 0");

    // Selection weights per particle.
    Eigen::VectorXd v(count);
    for (int i = 0; i < count; ++i) v[i] = step.selection_potential[ens.particles[static_cast<std::size_t>(i)]];
    const double v_mean = v.sum() / static_cast<double>(count);
    if (!(v_mean > 0.0) && step.alpha > 0.0) throw extinction_error("mf_step: eta^N(selection) = 0");

    double keep_scale = 0.0;
    Eigen::VectorXd resample_weights = v;
    if (scheme.kind == SelectionScheme::additive) {
        if (scheme.eps < 0.0 || scheme.eps > v.minCoeff() + kWeightTol)
            throw parameter_error("mf_step: additive eps must satisfy 0 <= eps <= min potential");
        keep_scale = scheme.eps / v_mean;
        resample_weights.array() -= scheme.eps;
    } else if (scheme.kind == SelectionScheme::multiplicative) {
        if (scheme.eps < 0.0 || scheme.eps * v.maxCoeff() > 1.0 + kWeightTol)
            throw parameter_error("mf_step: multiplicative eps must satisfy eps * max potential <= 1");
    }
    const bool degenerate_resample = resample_weights.sum() <= 0.0;
    const AliasTable ancestors(degenerate_resample ? v : resample_weights);

    // Row tables for the move kernel (states are few; rows are reused by all
    // particles).
    const int k = model.num_states();
    std::vector<CategoricalTable> rows;
    rows.reserve(static_cast<std::size_t>(k));
    for (int x = 0; x < k; ++x) rows.emplace_back(Eigen::VectorXd(step.base.row(x).transpose()));
    const bool has_reset = step.alpha < 1.0;
    const CategoricalTable reset_row(has_reset ? step.reset : Eigen::VectorXd::Ones(k));

    ParticleEnsemble out;
    out.particles.resize(static_cast<std::size_t>(count));
    out.mass = ens.mass * factor;
    out.step = n + 1;
    out.stream = ens.stream;
    for (int i = 0; i < count; ++i) {
        auto rng = ens.stream.derive(n + 1, /*phase=*/1, i);
        int ancestor_state;
        switch (scheme.kind) {
            case SelectionScheme::additive:
                if (!degenerate_resample && rng.uniform() >= keep_scale)
                    ancestor_state = ens.particles[static_cast<std::size_t>(ancestors.draw(rng))];
                else
                    ancestor_state = ens.particles[static_cast<std::size_t>(i)];
                break;
            case SelectionScheme::multiplicative:
                if (rng.uniform() < scheme.eps * v[i])
                    ancestor_state = ens.particles[static_cast<std::size_t>(i)];
                else
                    ancestor_state = ens.particles[static_cast<std::size_t>(ancestors.draw(rng))];
                break;
            case SelectionScheme::always:
            default:
                ancestor_state = ens.particles[static_cast<std::size_t>(ancestors.draw(rng))];
                break;
        }
        int next;
        if (has_reset && rng.uniform() >= step.alpha)
            next = reset_row.draw(rng);
        else
            next = rows[static_cast<std::size_t>(ancestor_state)].draw(rng);
        out.particles[static_cast<std::size_t>(i)] = next;
    }
    return out;
}

/// Run a full particle trajectory; returns the ensembles at steps 0..horizon.
template <flow::FiniteFlowModel M>
std::vector<ParticleEnsemble> mf_trajectory(const DiscreteMeasure& eta0, double mass0, int count,
                                            RngStream stream, const M& model, int horizon,
                                            SelectionScheme scheme = {}) {
    std::vector<ParticleEnsemble> out;
    out.reserve(static_cast<std::size_t>(horizon) + 1);
    out.push_back(init_ensemble(eta0, mass0, count, stream));
    for (int n = 0; n < horizon; ++n) out.push_back(mf_step(out.back(), model, scheme));
    return out;
}

/// Local sampling discrepancy eta^N_{n} - Gamma^2_n(mass^N_{n-1}, eta^N_{n-1})
/// evaluated against the supplied test functions (unscaled; multiply by
/// sqrt(N) for the normalized field). Conditionally centered given the
/// previous ensemble.
template <flow::FiniteFlowModel M>
Eigen::VectorXd local_field(const ParticleEnsemble& before, const ParticleEnsemble& after,
                            const M& model, const std::vector<Eigen::VectorXd>& test_functions) {
    if (after.step != before.step + 1) throw parameter_error("local_field: ensembles not consecutive");
    const DiscreteMeasure eta_before = empirical_measure(before, model.num_states());
    const flow::MassMeasurePair prev{before.mass, eta_before, before.step};
    const auto target = flow::flow_step(prev, model, flow::Route::mckean);
    const DiscreteMeasure eta_after = empirical_measure(after, model.num_states());
    Eigen::VectorXd out(static_cast<Eigen::Index>(test_functions.size()));
    for (std::size_t j = 0; j < test_functions.size(); ++j)
        out[static_cast<Eigen::Index>(j)] =
            integrate(eta_after, test_functions[j]) - integrate(target.eta, test_functions[j]);
    return out;
}

/// Coordinate indicator test functions, the default diagnostics basis.
inline std::vector<Eigen::VectorXd> indicator_functions(int num_states) {
    std::vector<Eigen::VectorXd> fs;
    fs.reserve(static_cast<std::size_t>(num_states));
    for (int x = 0; x < num_states; ++x) fs.push_back(Eigen::VectorXd::Unit(num_states, x));
    return fs;
}

}  // namespace mvflow::meanfield
