#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mvflow/errors.hpp"
#include "mvflow/flow.hpp"
#include "mvflow/measure.hpp"
#include "mvflow/observation.hpp"

namespace mvflow::phd {

using flow::MassMeasurePair;
using flow::McKeanStep;

/// Probability hypothesis density filter on a finite state space: the flow
/// propagates the intensity measure of the target configuration, so the mass
/// is the expected target count. Spawning is restricted to the rate x kernel
/// form B(x,.) = b(x) * B_bar(x,.) with B_bar Markov.
struct PhdSpec {
    Eigen::VectorXd survival;      ///< s(x) >= 0
    Eigen::VectorXd spawn_rate;    ///< b(x) >= 0
    StochasticMatrix spawn_kernel; ///< B_bar
    Eigen::VectorXd detect;        ///< d(x) in [0,1]
    Eigen::MatrixXd sensor;        ///< g(x,y) >= 0, rows = state, cols = observation point
    Eigen::VectorXd clutter;       ///< h(y) >= 0
    DiscreteMeasure birth;         ///< mu, mass mu(1) = mean spontaneous birth count
    StochasticMatrix base_motion;  ///< M'

    int num_states() const { return static_cast<int>(survival.size()); }
    int num_obs_states() const { return static_cast<int>(clutter.size()); }
    double birth_mass() const { return birth.total_mass(); }

    Eigen::VectorXd branch_rate() const { return survival + spawn_rate; }  // r(x) = s(x) + b(x)

    /// Merged motion/spawn kernel M(x,.) = [s M' + b B_bar](x,.) / r(x),
    /// materialized once per use.
    Eigen::MatrixXd merged_motion() const {
        const Eigen::VectorXd r = branch_rate();
        Eigen::MatrixXd m(num_states(), num_states());
        for (int x = 0; x < num_states(); ++x)
            m.row(x) = (survival[x] * base_motion.row(x) + spawn_rate[x] * spawn_kernel.row(x))
                           .transpose() / r[x];
        return m;
    }

    bool homogeneous_rates() const {
        auto constant = [](const Eigen::VectorXd& v) {
            return v.size() == 0 || (v.maxCoeff() - v.minCoeff()) <= kWeightTol;
        };
        return constant(survival) && constant(spawn_rate) && constant(detect) && constant(clutter);
    }

    void validate(bool for_stability = false) const {
        const int k = num_states();
        if (spawn_rate.size() != k || detect.size() != k || sensor.rows() != k ||
            birth.num_states() != k || base_motion.from_states() != k || spawn_kernel.from_states() != k)
            throw dimension_error("PhdSpec: inconsistent state dimensions");
        if (sensor.cols() != clutter.size()) throw dimension_error("PhdSpec: observation dimensions differ");
        if (survival.minCoeff() < 0.0 || spawn_rate.minCoeff() < 0.0)
            throw validation_error("PhdSpec: negative rate");
        if (detect.minCoeff() < 0.0 || detect.maxCoeff() > 1.0)
            throw validation_error("PhdSpec: detection outside [0,1]");
        if (sensor.size() > 0 && sensor.minCoeff() < 0.0)
            throw validation_error("PhdSpec: negative sensor likelihood");
        if (clutter.size() > 0 && clutter.minCoeff() < 0.0)
            throw validation_error("PhdSpec: negative clutter intensity");
        if (branch_rate().minCoeff() <= 0.0) throw validation_error("PhdSpec: needs r = s + b > 0");
        if (for_stability) {
            if (!homogeneous_rates()) throw validation_error("PhdSpec: stability analysis needs constant rates");
            const double r = branch_rate()[0];
            const double d = detect[0];
            if (!(r * (1.0 - d) < 1.0)) throw validation_error("PhdSpec: stability needs r (1-d) < 1");
            if (!(birth_mass() > 0.0)) throw validation_error("PhdSpec: stability needs mu(1) > 0");
        }
    }
};

/// Per-observation normalizers z_y = h(y) + gamma(d g(.,y)), gamma = m eta.
inline Eigen::VectorXd observation_normalizers(const PhdSpec& spec, double m,
                                               const DiscreteMeasure& eta,
                                               const FiniteObservations& obs) {
    Eigen::VectorXd z(obs.count());
    for (int i = 0; i < obs.count(); ++i) {
        const int y = obs.points[static_cast<std::size_t>(i)];
        if (y < 0 || y >= spec.num_obs_states()) throw domain_error("phd: observation id out of range");
        const double gdg = m * integrate(eta, Eigen::VectorXd(spec.detect.cwiseProduct(spec.sensor.col(y))));
        z[i] = spec.clutter[y] + gdg;
        if (!(z[i] > 0.0)) throw extinction_error("phd: h(y) + gamma(d g(.,y)) = 0");
    }
    return z;
}

/// Likelihood g_{n,gamma}(x) = r(x) [ (1-d(x)) + d(x) sum_y g(x,y) / z_y ].
inline Eigen::VectorXd likelihood(const PhdSpec& spec, double m, const DiscreteMeasure& eta,
                                  const FiniteObservations& obs) {
    const Eigen::VectorXd z = observation_normalizers(spec, m, eta, obs);
    Eigen::VectorXd ratio_sum = Eigen::VectorXd::Zero(spec.num_states());
    for (int i = 0; i < obs.count(); ++i)
        ratio_sum += spec.sensor.col(obs.points[static_cast<std::size_t>(i)]) / z[i];
    const Eigen::VectorXd inner =
        (Eigen::VectorXd::Ones(spec.num_states()) - spec.detect) + spec.detect.cwiseProduct(ratio_sum);
    return spec.branch_rate().cwiseProduct(inner);
}

/// The updating-only potential (no branch rate): g_tilde^c = g_{n,gamma} / r.
inline Eigen::VectorXd update_potential(const PhdSpec& spec, double m, const DiscreteMeasure& eta,
                                        const FiniteObservations& obs) {
    const Eigen::VectorXd z = observation_normalizers(spec, m, eta, obs);
    Eigen::VectorXd ratio_sum = Eigen::VectorXd::Zero(spec.num_states());
    for (int i = 0; i < obs.count(); ++i)
        ratio_sum += spec.sensor.col(obs.points[static_cast<std::size_t>(i)]) / z[i];
    return (Eigen::VectorXd::Ones(spec.num_states()) - spec.detect) + spec.detect.cwiseProduct(ratio_sum);
}

/// Extended observation alphabet Y^c = Y + delta_c and the per-point
/// potential pieces g^gamma(., y), whose nu-average recovers g_{n,gamma}.
struct ExtendedAlphabet {
    static constexpr int kVirtual = -1;          ///< the undetected-targets point c
    std::vector<int> symbols;                    ///< observation ids plus kVirtual
    std::vector<Eigen::VectorXd> potentials;     ///< g^gamma(., y) per symbol

    Eigen::VectorXd averaged() const {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(potentials.empty() ? 0 : potentials.front().size());
        for (const auto& p : potentials) sum += p;
        return sum;
    }
};

inline ExtendedAlphabet extended_alphabet(const PhdSpec& spec, double m, const DiscreteMeasure& eta,
                                          const FiniteObservations& obs) {
    const Eigen::VectorXd z = observation_normalizers(spec, m, eta, obs);
    const Eigen::VectorXd r = spec.branch_rate();
    ExtendedAlphabet out;
    for (int i = 0; i < obs.count(); ++i) {
        const int y = obs.points[static_cast<std::size_t>(i)];
        out.symbols.push_back(y);
        out.potentials.emplace_back(
            r.cwiseProduct(spec.detect.cwiseProduct(spec.sensor.col(y))) / z[i]);
    }
    out.symbols.push_back(ExtendedAlphabet::kVirtual);
    out.potentials.emplace_back(
        r.cwiseProduct(Eigen::VectorXd::Ones(spec.num_states()) - spec.detect));
    return out;
}

/// One merged PHD step: Gamma^1 = gamma(g_{n,gamma}) + mu(1),
/// Gamma^2 = Psi_{g_{n,gamma}}(eta) [alpha M + (1-alpha) mu_bar].
inline MassMeasurePair flow_step(double m, const DiscreteMeasure& eta, const FiniteObservations& obs,
                                 const PhdSpec& spec, int step_index = 0) {
    if (!(m > 0.0)) throw parameter_error("phd::flow_step: mass must be positive");
    const Eigen::VectorXd g = likelihood(spec, m, eta, obs);
    const double gamma_g = m * integrate(eta, g);
    const double mu1 = spec.birth_mass();
    const double new_mass = gamma_g + mu1;
    if (!(new_mass > 0.0)) throw extinction_error("phd::flow_step: gamma(g) + mu(1) = 0");

    const double alpha = gamma_g / new_mass;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(spec.num_states());
    if (alpha > 0.0)
        w = alpha * (spec.merged_motion().transpose() * boltzmann_gibbs(g, eta).weights());
    if (alpha < 1.0) w += (1.0 - alpha) * spec.birth.normalized().weights();

    MassMeasurePair out;
    out.mass = new_mass;
    out.eta = DiscreteMeasure(std::move(w)).normalized();
    out.step = step_index + 1;
    return out;
}

/// The same step split into its updating and prediction halves:
///   update   gamma_hat(1) = gamma(g_tilde^c),  eta_hat = Psi_{g_tilde^c}(eta)
///   predict  gamma'(1) = gamma_hat(r) + mu(1), eta' = Psi_r(eta_hat) [alpha' M + (1-alpha') mu_bar]
/// Their composition equals the merged step.
inline std::pair<MassMeasurePair, MassMeasurePair> update_predict(double m, const DiscreteMeasure& eta,
                                                                  const FiniteObservations& obs,
                                                                  const PhdSpec& spec,
                                                                  int step_index = 0) {
    if (!(m > 0.0)) throw parameter_error("phd::update_predict: mass must be positive");
    const Eigen::VectorXd g_tilde = update_potential(spec, m, eta, obs);
    const double updated_mass = m * integrate(eta, g_tilde);
    if (!(updated_mass > 0.0)) throw extinction_error("phd::update_predict: gamma(g_tilde) = 0");
    MassMeasurePair updated;
    updated.mass = updated_mass;
    updated.eta = boltzmann_gibbs(g_tilde, eta);
    updated.step = step_index;

    const Eigen::VectorXd r = spec.branch_rate();
    const double gamma_hat_r = updated.mass * integrate(updated.eta, r);
    const double mu1 = spec.birth_mass();
    const double new_mass = gamma_hat_r + mu1;
    if (!(new_mass > 0.0)) throw extinction_error("phd::update_predict: gamma_hat(r) + mu(1) = 0");
    const double alpha = gamma_hat_r / new_mass;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(spec.num_states());
    if (alpha > 0.0)
        w = alpha * (spec.merged_motion().transpose() * boltzmann_gibbs(r, updated.eta).weights());
    if (alpha < 1.0) w += (1.0 - alpha) * spec.birth.normalized().weights();

    MassMeasurePair predicted;
    predicted.mass = new_mass;
    predicted.eta = DiscreteMeasure(std::move(w)).normalized();
    predicted.step = step_index + 1;
    return {updated, predicted};
}

/// Uniform-in-time mass envelope for homogeneous specs with bounded
/// observation counts:
///   m^- = mu(1)/(1 - r(1-d)) * (1 + r d Y^-(g^- / (h + d mu(1) g^-)))
///   m^+ = gamma_0(1) + (r Y^+(1) + mu(1)) / (1 - r(1-d))
/// Y^- is a declared guaranteed-per-step observation multiset (may be
/// empty); Y^+(1) is the declared count cap. g^-(y) is the column infimum of
/// the sensor table.
inline std::pair<double, double> mass_bounds(const PhdSpec& spec, double gamma0_mass,
                                             const std::vector<int>& y_lower, int y_upper_count) {
    spec.validate(true);
    const double r = spec.branch_rate()[0];
    const double d = spec.detect[0];
    const double h = spec.clutter.size() ? spec.clutter[0] : 0.0;
    const double mu1 = spec.birth_mass();
    const double slack = 1.0 - r * (1.0 - d);
    double y_lo = 0.0;
    for (int y : y_lower) {
        const double g_lo = spec.sensor.col(y).minCoeff();
        const double denom = h + d * mu1 * g_lo;
        if (denom > 0.0) y_lo += g_lo / denom;
    }
    const double m_lo = mu1 / slack * (1.0 + r * d * y_lo);
    const double m_hi = gamma0_mass + (r * y_upper_count + mu1) / slack;
    return {m_lo, m_hi};
}

/// Weight function w_u(eta, y) of the homogeneous mass flow and its
/// u-uniform sandwich over [m_lo, m_hi].
inline double weight_function(const PhdSpec& spec, double u, const DiscreteMeasure& eta, int y) {
    const double r = spec.branch_rate()[0];
    const double d = spec.detect[0];
    const double h = spec.clutter[y];
    const double t = u * d * integrate(eta, Eigen::VectorXd(spec.sensor.col(y)));
    return r * (1.0 - h / (h + t));
}

inline std::pair<double, double> weight_bounds(const PhdSpec& spec, double m_lo, double m_hi, int y) {
    const double r = spec.branch_rate()[0];
    const double d = spec.detect[0];
    const double h = spec.clutter[y];
    const double g_lo = spec.sensor.col(y).minCoeff();
    const double g_hi = spec.sensor.col(y).maxCoeff();
    const double w_lo = r * d * m_lo * g_lo / (h + d * m_lo * g_lo);
    const double w_hi = r * d * m_hi * g_hi / (h + d * m_hi * g_hi);
    return {w_lo, w_hi};
}

/// Certified constant c such that, uniformly over masses in [m_lo, m_hi],
///   || g_hat_{n,gamma} - g_hat_{n,gamma'} || <= c [ |m-m'| + sum_y |[eta-eta'](d g(.,y))| ].
inline double h2_constant(const PhdSpec& spec, const FiniteObservations& obs, double m_lo,
                          double m_hi) {
    double sum_term = 0.0;
    double max_kappa = 0.0;
    for (int y : obs.points) {
        const double g_hi = spec.sensor.col(y).maxCoeff();
        const double dg_lo = spec.detect.cwiseProduct(spec.sensor.col(y)).minCoeff();
        const double dg_hi = spec.detect.cwiseProduct(spec.sensor.col(y)).maxCoeff();
        const double denom = spec.clutter[y] + m_lo * dg_lo;
        if (!(denom > 0.0)) throw parameter_error("phd::h2_constant: vanishing normalizer bound");
        const double kappa = g_hi / (denom * denom);
        sum_term += kappa * dg_hi;
        max_kappa = std::max(max_kappa, kappa);
    }
    return std::max(sum_term, m_hi * max_kappa);
}

/// Finite-state flow model adapter:
/// Q_{n+1,gamma}(x,.) = g_{n,gamma}(x) M(x,.) + (1/m) mu(.).
class PhdFlowModel {
public:
    PhdFlowModel(PhdSpec spec, std::vector<FiniteObservations> observations)
        : spec_(std::move(spec)), obs_(std::move(observations)), merged_(spec_.merged_motion()) {
        spec_.validate();
    }

    const PhdSpec& spec() const { return spec_; }
    const std::vector<FiniteObservations>& observations() const { return obs_; }
    int num_states() const { return spec_.num_states(); }
    int horizon() const { return static_cast<int>(obs_.size()); }
    const Eigen::MatrixXd& merged_motion() const { return merged_; }

    Eigen::MatrixXd unnorm_operator(int n, double m, const DiscreteMeasure& eta) const {
        if (!(m > 0.0)) throw parameter_error("Phd: mass must be positive");
        const Eigen::VectorXd g = likelihood(spec_, m, eta, obs_at(n));
        const int k = spec_.num_states();
        Eigen::MatrixXd Q(k, k);
        const Eigen::VectorXd birth_part = spec_.birth.weights() / m;
        for (int x = 0; x < k; ++x) Q.row(x) = (g[x] * merged_.row(x).transpose() + birth_part).transpose();
        return Q;
    }

    McKeanStep mckean_step(int n, double m, const DiscreteMeasure& eta) const {
        if (!(m > 0.0)) throw parameter_error("Phd: mass must be positive");
        const int k = spec_.num_states();
        const Eigen::VectorXd g = likelihood(spec_, m, eta, obs_at(n));
        const double gamma_g = m * integrate(eta, g);
        const double mu1 = spec_.birth_mass();
        if (!(gamma_g + mu1 > 0.0)) throw extinction_error("Phd: gamma(g) + mu(1) = 0");

        McKeanStep step;
        step.mass_potential = g.array() + mu1 / m;
        step.selection_potential = gamma_g > 0.0 ? g : Eigen::VectorXd::Ones(k);
        step.alpha = gamma_g / (gamma_g + mu1);
        step.base = merged_;
        step.reset = mu1 > 0.0 ? spec_.birth.normalized().weights() : Eigen::VectorXd::Zero(k);
        return step;
    }

    /// Declared (H1)-style bounds on eta(G_{n, m eta}) for homogeneous specs.
    double theta_minus(int n, double m) const { return theta_bound(n, m, false); }
    double theta_plus(int n, double m) const { return theta_bound(n, m, true); }

private:
    double theta_bound(int n, double m, bool upper) const {
        if (!spec_.homogeneous_rates())
            throw parameter_error("Phd: mass-bound declarations need homogeneous rates");
        const double r = spec_.branch_rate()[0];
        const double d = spec_.detect[0];
        double acc = r * (1.0 - d);
        for (int y : obs_at(n).points) {
            const double g_ext = upper ? spec_.sensor.col(y).maxCoeff() : spec_.sensor.col(y).minCoeff();
            const double h = spec_.clutter[y];
            if (h + m * d * g_ext > 0.0) acc += r * d * g_ext / (h + m * d * g_ext);
        }
        return acc + spec_.birth_mass() / m;
    }

    const FiniteObservations& obs_at(int n) const {
        if (n < 0 || n >= static_cast<int>(obs_.size()))
            throw parameter_error("Phd: no observations for step " + std::to_string(n));
        return obs_[static_cast<std::size_t>(n)];
    }

    PhdSpec spec_;
    std::vector<FiniteObservations> obs_;
    Eigen::MatrixXd merged_;
};

}  // namespace mvflow::phd
