#pragma once

#include <concepts>
#include <vector>

#include <Eigen/Dense>

#include "mvflow/errors.hpp"
#include "mvflow/measure.hpp"

namespace mvflow::flow {

/// The propagated state of a measure-valued flow: total mass gamma_n(1) > 0
/// and the normalized measure eta_n = gamma_n / gamma_n(1), with an explicit
/// step index so time-inhomogeneous models never rely on a hidden clock.
struct MassMeasurePair {
    double mass = 1.0;
    DiscreteMeasure eta;
    int step = 0;
};

/// One-step McKean decomposition shared by the concrete filters:
///
///   mass update      m' = m * eta(mass_potential)
///   measure update   eta' = Psi_{selection_potential}(eta) K
///   with             K = alpha * base + (1 - alpha) * (row = reset)
struct McKeanStep {
    Eigen::VectorXd mass_potential;
    Eigen::VectorXd selection_potential;
    double alpha = 1.0;
    Eigen::MatrixXd base;
    Eigen::VectorXd reset;

    /// Dense McKean kernel K_{n+1,gamma} combining selection and move.
    Eigen::MatrixXd mckean_kernel(const DiscreteMeasure& eta) const {
        const Eigen::VectorXd target = boltzmann_gibbs(selection_potential, eta).weights();
        Eigen::VectorXd moved;
        if (alpha >= 1.0) {
            moved = base.transpose() * target;
        } else {
            moved = alpha * (base.transpose() * target) + (1.0 - alpha) * reset;
        }
        const int n = static_cast<int>(eta.num_states());
        Eigen::MatrixXd K(n, n);
        for (int i = 0; i < n; ++i) K.row(i) = moved.transpose();
        return K;
    }
};

/// A finite-state model of the flow gamma_n = gamma_{n-1} Q_{n,gamma_{n-1}}.
/// `unnorm_operator(n, m, eta)` returns the dense operator Q_{n+1,gamma} for
/// gamma = m * eta; `mckean_step` returns the equivalent decomposed update.
template <class M>
concept FiniteFlowModel = requires(const M& m, int n, double mass, const DiscreteMeasure& eta) {
    { m.num_states() } -> std::convertible_to<int>;
    { m.unnorm_operator(n, mass, eta) } -> std::convertible_to<Eigen::MatrixXd>;
    { m.mckean_step(n, mass, eta) } -> std::convertible_to<McKeanStep>;
};

/// A model that declares mass bounds theta_-(m) <= eta(G_{n, m eta}) <= theta_+(m).
template <class M>
concept DeclaresMassBounds = requires(const M& m, int n, double mass) {
    { m.theta_minus(n, mass) } -> std::convertible_to<double>;
    { m.theta_plus(n, mass) } -> std::convertible_to<double>;
};

/// A model whose one-step output mass always lies in a fixed interval
/// (e.g. the Bernoulli existence probability lives in (0, 1]).
template <class M>
concept DeclaresMassDomain = requires(const M& m) {
    { m.mass_domain() } -> std::convertible_to<std::pair<double, double>>;
};

enum class Route {
    direct,  ///< eta' = eta Q / eta Q(1)
    mckean,  ///< eta' = eta K_{n+1,gamma}
};

/// Total mass update gamma_{n+1}(1) = eta_n(G_{n,gamma_n}) * gamma_n(1).
template <FiniteFlowModel M>
double mass_step(const MassMeasurePair& pair, const M& model) {
    const McKeanStep step = model.mckean_step(pair.step, pair.mass, pair.eta);
    const double factor = integrate(pair.eta, step.mass_potential);
    if (!(factor > 0.0)) throw extinction_error("mass_step: eta(G) <= 0");
    return pair.mass * factor;
}

/// One step of the pair flow (mass, eta) -> Gamma_{n+1}(mass, eta).
template <FiniteFlowModel M>
MassMeasurePair flow_step(const MassMeasurePair& pair, const M& model, Route route = Route::mckean) {
    MassMeasurePair out;
    out.step = pair.step + 1;
    if (route == Route::direct) {
        const Eigen::MatrixXd Q = model.unnorm_operator(pair.step, pair.mass, pair.eta);
        Eigen::VectorXd v = Q.transpose() * pair.eta.weights();
        const double z = v.sum();
        if (!(z > 0.0)) throw extinction_error("flow_step: eta Q(1) <= 0");
        out.mass = pair.mass * z;
        out.eta = DiscreteMeasure(v / z);
    } else {
        const McKeanStep step = model.mckean_step(pair.step, pair.mass, pair.eta);
        out.mass = pair.mass * integrate(pair.eta, step.mass_potential);
        if (!(out.mass > 0.0)) throw extinction_error("flow_step: mass vanished");
        const DiscreteMeasure selected = boltzmann_gibbs(step.selection_potential, pair.eta);
        Eigen::VectorXd w = step.base.transpose() * selected.weights();
        if (step.alpha < 1.0) w = step.alpha * w + (1.0 - step.alpha) * step.reset;
        out.eta = DiscreteMeasure(std::move(w)).normalized();
    }
    return out;
}

/// Semigroup composition Gamma_{p,n} = Gamma_n o ... o Gamma_{p+1}, with the
/// convention Gamma_{n,n} = Id.
template <FiniteFlowModel M>
MassMeasurePair semigroup_flow(int p, int n, const MassMeasurePair& pair, const M& model,
                               Route route = Route::mckean) {
    if (p > n) throw parameter_error("semigroup_flow: p > n");
    if (pair.step != p) throw parameter_error("semigroup_flow: pair.step != p");
    MassMeasurePair cur = pair;
    for (int k = p; k < n; ++k) cur = flow_step(cur, model, route);
    return cur;
}

/// Exact finite-state trajectory [init, Gamma_1(init), ..., Gamma_{0,horizon}(init)]
/// by dense weight arithmetic. Brute-force oracle for everything else.
template <FiniteFlowModel M>
std::vector<MassMeasurePair> exact_reference_flow(const M& model, int horizon,
                                                  const MassMeasurePair& init,
                                                  Route route = Route::direct) {
    if (model.num_states() > 1000) throw parameter_error("exact_reference_flow: |E| > 1000");
    if (horizon < 0 || horizon > 10000) throw parameter_error("exact_reference_flow: bad horizon");
    std::vector<MassMeasurePair> out;
    out.reserve(static_cast<std::size_t>(horizon) + 1);
    out.push_back(init);
    for (int n = 0; n < horizon; ++n) out.push_back(flow_step(out.back(), model, route));
    return out;
}

/// Maximum discrepancy between the two Gamma^2 computation routes and the
/// two mass routes at one step. Models must keep this below ~1e-10.
template <FiniteFlowModel M>
double mckean_consistency_gap(const M& model, const MassMeasurePair& pair) {
    const MassMeasurePair a = flow_step(pair, model, Route::direct);
    const MassMeasurePair b = flow_step(pair, model, Route::mckean);
    return std::max(std::abs(a.mass - b.mass), total_variation(a.eta, b.eta));
}

/// Mass envelope [m_n^-, m_n^+] implied by declared theta bounds:
///   m^-_{n+1} = min over x in {m^-, m^+} of x theta_-(x), and symmetrically
/// for the upper end. Exact for the shipped models, whose maps x theta(x)
/// are Moebius in x and therefore take extremes at interval ends.
template <DeclaresMassBounds M>
std::vector<std::pair<double, double>> mass_envelope(const M& model, double m0, int horizon) {
    std::vector<std::pair<double, double>> env;
    env.reserve(static_cast<std::size_t>(horizon) + 1);
    env.emplace_back(m0, m0);
    for (int n = 0; n < horizon; ++n) {
        const auto [lo, hi] = env.back();
        double cand_lo = std::min(lo * model.theta_minus(n, lo), hi * model.theta_minus(n, hi));
        double cand_hi = std::max(lo * model.theta_plus(n, lo), hi * model.theta_plus(n, hi));
        if constexpr (DeclaresMassDomain<M>) {
            const auto [dom_lo, dom_hi] = model.mass_domain();
            cand_lo = std::isfinite(cand_lo) ? std::max(cand_lo, dom_lo) : dom_lo;
            cand_hi = std::isfinite(cand_hi) ? std::min(cand_hi, dom_hi) : dom_hi;
        }
        env.emplace_back(cand_lo, cand_hi);
    }
    return env;
}

}  // namespace mvflow::flow
