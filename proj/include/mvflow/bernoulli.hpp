#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mvflow/errors.hpp"
#include "mvflow/flow.hpp"
#include "mvflow/measure.hpp"
#include "mvflow/observation.hpp"

namespace mvflow::bernoulli {

using flow::MassMeasurePair;
using flow::McKeanStep;

/// Joint detection/tracking filter for a single on/off target on a finite
/// state space. The mass gamma_n(1) is the probability the target exists;
/// eta_n is its conditional state law. Time dependence enters only through
/// the observation sequence.
struct BernoulliSpec {
    Eigen::VectorXd survival;    ///< s(x) in [0,1]
    Eigen::VectorXd detect;      ///< d(x) in [0,1]
    Eigen::MatrixXd local_like;  ///< l(x,y) > 0, rows = state, cols = observation point
    Eigen::VectorXd clutter;     ///< h(y) > 0
    DiscreteMeasure birth;       ///< mu, total mass = entry probability in [0,1]
    StochasticMatrix motion;     ///< M

    int num_states() const { return static_cast<int>(survival.size()); }
    int num_obs_states() const { return static_cast<int>(clutter.size()); }
    double birth_mass() const { return birth.total_mass(); }

    void validate() const {
        const int k = num_states();
        if (detect.size() != k || local_like.rows() != k || motion.from_states() != k ||
            motion.to_states() != k || birth.num_states() != k)
            throw dimension_error("BernoulliSpec: inconsistent state dimensions");
        if (local_like.cols() != clutter.size())
            throw dimension_error("BernoulliSpec: observation dimensions differ");
        for (int x = 0; x < k; ++x) {
            if (survival[x] < 0.0 || survival[x] > 1.0)
                throw validation_error("BernoulliSpec: survival outside [0,1]");
            if (detect[x] < 0.0 || detect[x] > 1.0)
                throw validation_error("BernoulliSpec: detection outside [0,1]");
        }
        if (local_like.size() > 0 && local_like.minCoeff() <= 0.0)
            throw validation_error("BernoulliSpec: local likelihood must be positive");
        if (clutter.size() > 0 && clutter.minCoeff() <= 0.0)
            throw validation_error("BernoulliSpec: clutter intensity must be positive");
        const double mu1 = birth_mass();
        if (mu1 < 0.0 || mu1 > 1.0) throw validation_error("BernoulliSpec: birth mass outside [0,1]");
        if (mu1 == 0.0 && survival.maxCoeff() == 0.0)
            throw validation_error("BernoulliSpec: s = 0 with mu(1) = 0 kills the flow; rejected");
    }
};

/// Likelihood g(x) = (1 - d(x)) + d(x) * sum_{y in Y} l(x,y) / h(y).
inline Eigen::VectorXd likelihood(const BernoulliSpec& spec, const FiniteObservations& obs) {
    Eigen::VectorXd ratio_sum = Eigen::VectorXd::Zero(spec.num_states());
    for (int y : obs.points) {
        if (y < 0 || y >= spec.num_obs_states()) throw domain_error("likelihood: observation id out of range");
        if (!(spec.clutter[y] > 0.0)) throw domain_error("likelihood: h(y) = 0");
        ratio_sum += spec.local_like.col(y) / spec.clutter[y];
    }
    return (Eigen::VectorXd::Ones(spec.num_states()) - spec.detect) + spec.detect.cwiseProduct(ratio_sum);
}

/// Certified likelihood bounds from declared (d, l, h) bounds and the
/// observation count, never from the realized table. Writing T = Y(1) l/h,
/// g = 1 + d (T - 1) is monotone in d with sign given by T - 1, which picks
/// the effective detection bound on each side.
inline std::pair<double, double> likelihood_bounds_certified(double d_lo, double d_hi, double l_lo,
                                                             double l_hi, double h_lo, double h_hi,
                                                             int obs_count) {
    if (!(h_lo > 0.0)) throw parameter_error("likelihood_bounds_certified: needs h^- > 0");
    const double t_lo = l_lo / h_hi * obs_count;
    const double t_hi = l_hi / h_lo * obs_count;
    const double d_eff_hi = (l_hi * obs_count >= h_lo) ? d_hi : d_lo;
    const double d_eff_lo = (l_lo * obs_count >= h_hi) ? d_lo : d_hi;
    const double g_lo = (1.0 - d_eff_lo) + d_eff_lo * t_lo;
    const double g_hi = (1.0 - d_eff_hi) + d_eff_hi * t_hi;
    return {g_lo, g_hi};
}

/// theta_a(x) = a x / (a x + (1 - x)), increasing in both arguments, with
/// theta_a(theta_b(x)) = theta_{ab}(x). At x = 1 the limit value 1 is
/// returned for a > 0 so the algebra stays total.
inline double theta(double a, double x) {
    if (a < 0.0) throw parameter_error("theta: a < 0");
    if (x < 0.0 || x > 1.0) throw parameter_error("theta: x outside [0,1]");
    if (x >= 1.0) return a > 0.0 ? 1.0 : 0.0;
    return a * x / (a * x + (1.0 - x));
}

/// One mass update in the two-stage form: first the observation update
/// m_hat = theta_{eta(g)}(m), then the survival/birth mixture
/// m' = m_hat Psi_g(eta)(s) + (1 - m_hat) mu(1). Always lands in [0,1].
inline double mass_step(double m, const DiscreteMeasure& eta, const FiniteObservations& obs,
                        const BernoulliSpec& spec) {
    if (m < 0.0 || m > 1.0) throw parameter_error("mass_step: m outside [0,1]");
    const Eigen::VectorXd g = likelihood(spec, obs);
    const double eta_g = integrate(eta, g);
    const double denom = (1.0 - m) + m * eta_g;
    if (!(denom > 0.0)) throw extinction_error("mass_step: (1-m) + m eta(g) = 0");
    const double m_hat = m * eta_g / denom;
    double survived = 0.0;
    if (eta_g > 0.0) survived = integrate(eta, Eigen::VectorXd(g.cwiseProduct(spec.survival))) / eta_g;
    return m_hat * survived + (1.0 - m_hat) * spec.birth_mass();
}

enum class MeasureRoute {
    mckean,  ///< Psi_{g s}(eta) applied to the mixture kernel alpha M + (1-alpha) mu_bar
    hatQ,    ///< Psi_{G_hat}(eta) M_hat with the mass-indexed potential/kernel pair
};

/// One measure update Gamma^2_{n+1}(m, eta); both routes agree.
inline DiscreteMeasure measure_step(double m, const DiscreteMeasure& eta,
                                    const FiniteObservations& obs, const BernoulliSpec& spec,
                                    MeasureRoute route = MeasureRoute::mckean) {
    const int k = spec.num_states();
    const Eigen::VectorXd g = likelihood(spec, obs);
    const Eigen::VectorXd gs = g.cwiseProduct(spec.survival);
    const double mu1 = spec.birth_mass();
    const double gamma_gs = m * integrate(eta, gs);
    const double norm = gamma_gs + (1.0 - m) * mu1;
    if (!(norm > 0.0)) throw extinction_error("measure_step: eta(g s) + (1-m) mu(1) = 0");

    if (route == MeasureRoute::mckean) {
        const double alpha = gamma_gs / norm;
        Eigen::VectorXd moved = Eigen::VectorXd::Zero(k);
        if (alpha > 0.0)
            moved = alpha * (spec.motion.matrix().transpose() * boltzmann_gibbs(gs, eta).weights());
        if (alpha < 1.0) moved += (1.0 - alpha) * spec.birth.normalized().weights();
        return DiscreteMeasure(std::move(moved)).normalized();
    }

    // hatQ route: potential G_hat(x) = m g(x) s(x) + (1-m) mu(1) and kernel
    // M_hat(x,.) = [m g s M(x,.) + (1-m) mu(1) mu_bar] / G_hat(x).
    Eigen::VectorXd g_hat = m * gs;
    g_hat.array() += (1.0 - m) * mu1;
    const DiscreteMeasure selected = boltzmann_gibbs(g_hat, eta);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(k);
    const Eigen::VectorXd mu_bar =
        mu1 > 0.0 ? spec.birth.normalized().weights() : Eigen::VectorXd::Zero(k);
    for (int x = 0; x < k; ++x) {
        const double w = selected.weight(x);
        if (w == 0.0) continue;
        Eigen::VectorXd row = m * gs[x] * spec.motion.row(x) + (1.0 - m) * mu1 * mu_bar;
        out += w * (row / g_hat[x]);
    }
    return DiscreteMeasure(std::move(out)).normalized();
}

/// Hard per-step mass envelope from the convex-combination structure:
/// gamma_{n+1}(1) in [mu(1) ^ s^-, mu(1) v s^+].
inline std::pair<double, double> mass_hard_bounds(const BernoulliSpec& spec) {
    const double mu1 = spec.birth_mass();
    return {std::min(mu1, spec.survival.minCoeff()), std::max(mu1, spec.survival.maxCoeff())};
}

/// Closed-form mass sequence for the alternating spec (s = 0, mu_n(1) = 1):
/// even steps  gamma_{2(n+1)}(1) = theta_{prod_{p<=n} b_{2p}/b_{2p+1}}(gamma_0(1)),
/// odd steps   gamma_{2n+1}(1)  = theta_{b_{2n}^{-1} prod_{p<n} b_{2p+1}/b_{2p}}(1 - gamma_0(1)),
/// with b_n = mu_bar_n(g_n) and the convention mu_bar_0 = eta_0. Both follow
/// from gamma_{k+1}(1) = 1 - theta_{b_k}(gamma_k(1)) and the theta algebra.
inline std::vector<double> alternating_mass_closed_form(const BernoulliSpec& spec,
                                                        const DiscreteMeasure& eta0, double mass0,
                                                        const std::vector<FiniteObservations>& obs,
                                                        int horizon) {
    if (spec.survival.maxCoeff() != 0.0) throw validation_error("alternating_mass: needs s = 0");
    if (std::abs(spec.birth_mass() - 1.0) > kWeightTol)
        throw validation_error("alternating_mass: needs mu(1) = 1");
    if (!(mass0 > 0.0 && mass0 < 1.0)) throw parameter_error("alternating_mass: gamma_0(1) must be in (0,1)");
    if (static_cast<int>(obs.size()) < horizon) throw parameter_error("alternating_mass: missing observations");

    const DiscreteMeasure mu_bar = spec.birth.normalized();
    std::vector<double> b(static_cast<std::size_t>(horizon));
    for (int n = 0; n < horizon; ++n) {
        const Eigen::VectorXd g = likelihood(spec, obs[static_cast<std::size_t>(n)]);
        b[static_cast<std::size_t>(n)] = integrate(n == 0 ? eta0 : mu_bar, g);
    }

    std::vector<double> mass(static_cast<std::size_t>(horizon) + 1);
    mass[0] = mass0;
    for (int n = 1; n <= horizon; ++n) {
        double ratio = 1.0;
        if (n % 2 == 0) {
            for (int p = 0; 2 * p + 1 < n; ++p) ratio *= b[static_cast<std::size_t>(2 * p)] /
                                                         b[static_cast<std::size_t>(2 * p + 1)];
            mass[static_cast<std::size_t>(n)] = theta(ratio, mass0);
        } else {
            for (int p = 0; 2 * p + 1 < n; ++p) ratio *= b[static_cast<std::size_t>(2 * p + 1)] /
                                                         b[static_cast<std::size_t>(2 * p)];
            ratio /= b[static_cast<std::size_t>(n - 1)];
            mass[static_cast<std::size_t>(n)] = theta(ratio, 1.0 - mass0);
        }
    }
    return mass;
}

/// Constant-rate reduction for s = mu(1): the normalized flow becomes the
/// updating-prediction recursion eta' = Psi_{g_s}(eta) M_s with
///   g_s = s g + (1 - s)   and
///   M_s(x,.) = [s g(x) M(x,.) + (1 - s) mu_bar] / (s g(x) + (1 - s)).
inline std::pair<Eigen::VectorXd, StochasticMatrix> constant_rate_reduction(
    const BernoulliSpec& spec, const Eigen::VectorXd& g) {
    const double s = spec.survival[0];
    if ((spec.survival.array() != s).any())
        throw validation_error("constant_rate_reduction: survival must be constant");
    const int k = spec.num_states();
    const Eigen::VectorXd g_s = s * g;
    Eigen::MatrixXd m_s(k, k);
    const Eigen::VectorXd mu_bar = spec.birth.normalized().weights();
    for (int x = 0; x < k; ++x) {
        const double denom = s * g[x] + (1.0 - s);
        m_s.row(x) = ((s * g[x]) * spec.motion.row(x) + (1.0 - s) * mu_bar).transpose() / denom;
    }
    return {Eigen::VectorXd(g_s.array() + (1.0 - s)), StochasticMatrix(std::move(m_s))};
}

/// Certified Lipschitz constants (c, c') such that for all masses in
/// [m_lo, m_hi] and f with uniform norm <= 1,
///   |Q_{n, m eta}(f)(x) - Q_{n, m' eta'}(f)(x)| <= c |m - m'| + c' |[eta - eta'](g)|.
struct H2Constants {
    double c = 0.0;
    double c_prime = 0.0;
};

inline H2Constants h2_constants(const BernoulliSpec& spec, const Eigen::VectorXd& g, double m_lo,
                                double m_hi) {
    if (!(m_lo > 0.0 && m_lo <= m_hi && m_hi <= 1.0))
        throw parameter_error("h2_constants: need 0 < m_lo <= m_hi <= 1");
    const double g_lo = g.minCoeff();
    const double g_hi = g.maxCoeff();
    const double sg_hi = g.cwiseProduct(spec.survival).maxCoeff();
    const double mu1 = spec.birth_mass();
    const double d_lo = std::min((1.0 - m_lo) + m_lo * g_lo, (1.0 - m_hi) + m_hi * g_lo);
    if (!(d_lo > 0.0)) throw parameter_error("h2_constants: normalizer can vanish on the mass range");
    const double b_hi = mu1 * (1.0 - m_lo) / m_lo;
    H2Constants out;
    out.c_prime = (sg_hi + b_hi) / (d_lo * d_lo);
    out.c = (sg_hi + b_hi) * (1.0 + g_hi) / (d_lo * d_lo) + mu1 / (m_lo * m_lo * d_lo);
    return out;
}

/// Finite-state flow model adapter: the Bernoulli operator
/// Q_{n+1,gamma}(x,.) = [s g M(x,.) + (1/m - 1) mu] / [(1-m) + m eta(g)].
class BernoulliFlowModel {
public:
    BernoulliFlowModel(BernoulliSpec spec, std::vector<FiniteObservations> observations)
        : spec_(std::move(spec)), obs_(std::move(observations)) {
        spec_.validate();
    }

    const BernoulliSpec& spec() const { return spec_; }
    const std::vector<FiniteObservations>& observations() const { return obs_; }
    int num_states() const { return spec_.num_states(); }
    int horizon() const { return static_cast<int>(obs_.size()); }

    Eigen::VectorXd likelihood_at(int n) const { return likelihood(spec_, obs_at(n)); }

    Eigen::MatrixXd unnorm_operator(int n, double m, const DiscreteMeasure& eta) const {
        if (!(m > 0.0 && m <= 1.0)) throw parameter_error("Bernoulli: mass outside (0,1]");
        const int k = spec_.num_states();
        const Eigen::VectorXd g = likelihood_at(n);
        const double denom = (1.0 - m) + m * integrate(eta, g);
        if (!(denom > 0.0)) throw extinction_error("Bernoulli: (1-m) + m eta(g) = 0");
        Eigen::MatrixXd Q(k, k);
        const Eigen::VectorXd birth_part = (1.0 / m - 1.0) * spec_.birth.weights();
        for (int x = 0; x < k; ++x)
            Q.row(x) = (spec_.survival[x] * g[x] * spec_.motion.row(x) + birth_part).transpose() / denom;
        return Q;
    }

    McKeanStep mckean_step(int n, double m, const DiscreteMeasure& eta) const {
        if (!(m > 0.0 && m <= 1.0)) throw parameter_error("Bernoulli: mass outside (0,1]");
        const int k = spec_.num_states();
        const Eigen::VectorXd g = likelihood_at(n);
        const double denom = (1.0 - m) + m * integrate(eta, g);
        if (!(denom > 0.0)) throw extinction_error("Bernoulli: (1-m) + m eta(g) = 0");
        const double mu1 = spec_.birth_mass();

        McKeanStep step;
        step.mass_potential = (spec_.survival.cwiseProduct(g).array() + (1.0 / m - 1.0) * mu1) / denom;
        step.selection_potential = g.cwiseProduct(spec_.survival);
        const double gamma_gs = m * integrate(eta, step.selection_potential);
        const double norm = gamma_gs + (1.0 - m) * mu1;
        if (!(norm > 0.0)) throw extinction_error("Bernoulli: eta(g s) + (1-m) mu(1) = 0");
        step.alpha = gamma_gs / norm;
        if (step.alpha == 0.0)
            step.selection_potential = Eigen::VectorXd::Ones(k);  // selection unused, keep Psi defined
        step.base = spec_.motion.matrix();
        step.reset = mu1 > 0.0 ? spec_.birth.normalized().weights() : Eigen::VectorXd::Zero(k);
        return step;
    }

    /// Output masses are convex combinations, so they live in the hard
    /// interval [mu(1) ^ s^-, mu(1) v s^+] regardless of the step.
    std::pair<double, double> mass_domain() const { return mass_hard_bounds(spec_); }

    /// Declared (H1)-style bounds on eta(G_{n, m eta}) via certified
    /// extremes of the realized likelihood table.
    double theta_minus(int n, double m) const {
        const Eigen::VectorXd g = likelihood_at(n);
        const double sg_lo = g.cwiseProduct(spec_.survival).minCoeff();
        return (m * sg_lo + (1.0 - m) * spec_.birth_mass()) / (m * ((1.0 - m) + m * g.maxCoeff()));
    }
    double theta_plus(int n, double m) const {
        const Eigen::VectorXd g = likelihood_at(n);
        const double sg_hi = g.cwiseProduct(spec_.survival).maxCoeff();
        return (m * sg_hi + (1.0 - m) * spec_.birth_mass()) / (m * ((1.0 - m) + m * g.minCoeff()));
    }

private:
    const FiniteObservations& obs_at(int n) const {
        if (n < 0 || n >= static_cast<int>(obs_.size()))
            throw parameter_error("Bernoulli: no observations for step " + std::to_string(n));
        return obs_[static_cast<std::size_t>(n)];
    }

    BernoulliSpec spec_;
    std::vector<FiniteObservations> obs_;
};

}  // namespace mvflow::bernoulli
