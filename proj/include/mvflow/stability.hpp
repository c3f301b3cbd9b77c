#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mvflow/errors.hpp"
#include "mvflow/flow.hpp"
#include "mvflow/measure.hpp"
#include "mvflow/observation.hpp"
#include "mvflow/phd.hpp"

namespace mvflow::stability {

/// Dobrushin contraction coefficient: the largest total variation distance
/// between two rows, computed by brute force over state pairs.
inline double dobrushin_beta(const StochasticMatrix& P) {
    const int n = P.from_states();
    double beta = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            beta = std::max(beta, 0.5 * (P.matrix().row(i) - P.matrix().row(j)).cwiseAbs().sum());
    return beta;
}

/// Largest eps with M_{p,p+m}(x,.) >= eps M_{p,p+m}(x',.) entrywise for all
/// state pairs, per starting index p (0 if no positive eps exists).
/// kernels[t] maps level t to level t+1.
inline std::vector<double> check_mixing(const std::vector<StochasticMatrix>& kernels, int m) {
    if (m < 1) throw parameter_error("check_mixing: m must be >= 1");
    const int horizon = static_cast<int>(kernels.size());
    std::vector<double> eps;
    for (int p = 0; p + m <= horizon; ++p) {
        Eigen::MatrixXd prod = kernels[static_cast<std::size_t>(p)].matrix();
        for (int k = 1; k < m; ++k) prod *= kernels[static_cast<std::size_t>(p + k)].matrix();
        double e = 1.0;
        for (Eigen::Index y = 0; y < prod.cols(); ++y) {
            const double hi = prod.col(y).maxCoeff();
            if (hi <= 0.0) continue;
            e = std::min(e, prod.col(y).minCoeff() / hi);
        }
        eps.push_back(e);
    }
    return eps;
}

/// Exact Feynman-Kac semigroup quantities and their mixing-condition upper
/// bounds. G[t] is the potential at level t, M[t] the Markov transition from
/// level t to t+1, so the semigroup operator is Q_{t+1} = diag(G[t]) M[t].
struct FeynmanKacBounds {
    double r_exact = 1.0;      ///< sup_{x,x'} G_{p,n}(x)/G_{p,n}(x')
    double beta_exact = 0.0;   ///< Dobrushin coefficient of P_{p,n}
    double r_bound = 1.0;      ///< mixing-condition bound on r_{p,n}
    double beta_bound = 1.0;   ///< product bound on beta(P_{p,n})
    int m = 1;
    double eps_m = 0.0;        ///< mixing constant used at index p
};

inline FeynmanKacBounds fk_semigroup_quantities(const std::vector<Potential>& G,
                                                const std::vector<StochasticMatrix>& M, int p,
                                                int n, int m, const std::vector<double>& eps_m) {
    if (p < 0 || p > n) throw parameter_error("fk_semigroup_quantities: need 0 <= p <= n");
    if (n - p > 50) throw parameter_error("fk_semigroup_quantities: n - p > 50");
    if (n > static_cast<int>(M.size()) || n > static_cast<int>(G.size()))
        throw parameter_error("fk_semigroup_quantities: sequences too short");

    const int k = M.empty() ? 0 : M.front().from_states();
    Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(k, k);
    for (int t = p; t < n; ++t) {
        const Eigen::MatrixXd step =
            G[static_cast<std::size_t>(t)].values().asDiagonal() * M[static_cast<std::size_t>(t)].matrix();
        Q = Q * step;
    }
    const Eigen::VectorXd g_pn = Q.rowwise().sum();
    if (!(g_pn.minCoeff() > 0.0))
        throw extinction_error("fk_semigroup_quantities: Q_{p,n}(1) vanishes at some state");

    FeynmanKacBounds out;
    out.m = m;
    out.r_exact = g_pn.maxCoeff() / g_pn.minCoeff();
    Eigen::MatrixXd P = Q;
    for (int i = 0; i < k; ++i) P.row(i) /= g_pn[i];
    out.beta_exact = dobrushin_beta(StochasticMatrix(P));

    // Bounds from declared data: per-step potential oscillations r_t and the
    // m-step mixing constants of the Markov semigroup.
    auto r_step = [&](int t) {
        const auto& pot = G[static_cast<std::size_t>(t)];
        if (!(pot.lower() > 0.0)) throw parameter_error("fk bounds need positive potential lower bounds");
        return pot.upper() / pot.lower();
    };
    if (p < static_cast<int>(eps_m.size()) && n > p) {
        out.eps_m = eps_m[static_cast<std::size_t>(p)];
        double r_prod = 1.0;
        for (int t = p; t < std::min(p + m, n); ++t) r_prod *= r_step(t);
        out.r_bound = r_prod / out.eps_m;
        double beta = 1.0;
        for (int km = 0; p + (km + 1) * m <= n; ++km) {
            const int q = p + km * m;
            if (q >= static_cast<int>(eps_m.size())) break;
            double r_inner = 1.0;
            for (int t = q + 1; t < q + m; ++t) r_inner *= r_step(t);
            const double eps_eff =
                eps_m[static_cast<std::size_t>(q)] * eps_m[static_cast<std::size_t>(q)] / r_inner;
            beta *= (1.0 - eps_eff);
        }
        out.beta_bound = beta;
    } else if (n == p) {
        out.r_bound = 1.0;
        out.beta_bound = 1.0;
    }

    if (out.r_exact > out.r_bound * (1.0 + 1e-9) || out.beta_exact > out.beta_bound + 1e-9)
        throw validation_error("fk_semigroup_quantities: exact value exceeded its declared bound");
    return out;
}

// ---------------------------------------------------------------------------
// Filter contraction constants
// ---------------------------------------------------------------------------

/// Homogeneous contraction data: geometric Lipschitz envelopes
/// a^i_{p,n} <= c_i exp(-lambda_i (n-p)) plus the continuity constants.
struct ContractionParameters {
    double c1 = 0.0, lambda1 = 0.0;
    double c2 = 0.0, lambda2 = 0.0;
    double tau1 = 0.0, tau2 = 0.0;
    double eps = 0.0;       ///< two-point mixing floor of the mass chain
    double eps_eff = 0.0;   ///< effective m-step selection/mutation mixing
    double rho_m = 0.0;
    double delta_g = 0.0, delta_g_prime = 0.0, delta_sg = 0.0;
    int m = 1;

    double a1(int p, int n) const { return c1 * std::exp(-lambda1 * (n - p)); }
    double a2(int p, int n) const { return c2 * std::exp(-lambda2 * (n - p)); }
};

/// Contraction constants of the Bernoulli filter with homogeneous declared
/// bounds, all computed from certified inputs (never from data): survival
/// bounds, birth mass, likelihood bounds and the m-step mixing constant of
/// the motion semigroup.
inline ContractionParameters bernoulli_contraction_constants(double s_lo, double s_hi, double mu1,
                                                         double g_lo, double g_hi, int m,
                                                         double eps_m) {
    if (!(mu1 > 0.0 && mu1 < 1.0)) throw parameter_error("bernoulli constants: need mu(1) in (0,1)");
    if (!(0.0 < s_lo && s_lo <= s_hi && s_hi < 1.0))
        throw parameter_error("bernoulli constants: need 0 < s^- <= s^+ < 1");
    if (!(eps_m > 0.0 && eps_m <= 1.0)) throw parameter_error("bernoulli constants: need eps(m) in (0,1]");
    if (!(g_lo > 0.0)) throw parameter_error("bernoulli constants: need g^- > 0");

    ContractionParameters out;
    out.m = m;
    out.delta_g = g_hi / g_lo;
    out.delta_g_prime = std::min(1.0 / g_lo, g_hi);
    out.delta_sg = (g_hi * s_hi) / (g_lo * s_lo);
    out.eps = std::min(std::min(s_lo / mu1, mu1 / s_hi),
                       std::min((1.0 - s_hi) / (1.0 - mu1), (1.0 - mu1) / (1.0 - s_lo)));

    out.c1 = 2.0 * out.delta_g_prime / out.eps;
    out.lambda1 = -std::log1p(-out.eps * out.eps);

    out.eps_eff = eps_m * eps_m * std::pow(out.delta_sg, 1.0 - 5.0 * m);
    if (!(out.eps_eff > 0.0 && out.eps_eff < 1.0))
        throw parameter_error("bernoulli constants: effective mixing outside (0,1)");
    out.rho_m = std::pow(out.delta_sg, 3.0 * m) / eps_m;
    out.c2 = 2.0 * out.rho_m / (1.0 - out.eps_eff);
    out.lambda2 = -std::log1p(-out.eps_eff) / m;

    out.tau1 = out.delta_g * ((s_hi - s_lo) + std::max(std::abs(s_hi - mu1), std::abs(s_lo - mu1)));
    out.tau2 = out.delta_g_prime * std::max(mu1 / s_lo, s_hi / mu1);
    return out;
}

/// Mixing transfer to the constant-rate Bernoulli kernel M^(s): a certified
/// lower bound on its m-step mixing constant, given the motion mixing eps(m)
/// and the per-step oscillation ratios r_k(s) = (s g^+ + 1-s)/(s g^- + 1-s)
/// and r_k(1) = g^+/g^- over the window.
inline double survival_mixing_transfer(double eps_m, const std::vector<double>& r_s,
                                       const std::vector<double>& r_unit) {
    if (r_s.size() != r_unit.size()) throw parameter_error("survival_mixing_transfer: window mismatch");
    double denom = 1.0;
    for (std::size_t k = 0; k < r_s.size(); ++k) denom *= r_s[k] * r_unit[k];
    return eps_m / denom;
}

/// Per-step Lipschitz/continuity constants of the homogeneous PHD filter,
/// evaluated from the declared mass envelope [m_lo, m_hi], the Dobrushin
/// coefficient of the merged motion kernel, and each step's observation set.
/// Index n holds the constants of the step n -> n+1 map.
struct PhdStepConstants {
    std::vector<double> a1, a2, tau1, tau2;
};

inline PhdStepConstants phd_step_constants(const phd::PhdSpec& spec, double m_lo, double m_hi,
                                              double beta_merged,
                                              const std::vector<FiniteObservations>& obs) {
    spec.validate(true);
    const double r = spec.branch_rate()[0];
    const double d = spec.detect[0];
    const double h = spec.clutter.size() ? spec.clutter[0] : 0.0;
    const double mu1 = spec.birth_mass();

    PhdStepConstants out;
    for (const auto& o : obs) {
        double y_a1 = 0.0, y_gap = 0.0, y_glo = 0.0, y_ghi_ratio = 0.0;
        for (int y : o.points) {
            const double g_hi = spec.sensor.col(y).maxCoeff();
            const double g_lo = spec.sensor.col(y).minCoeff();
            if (!(g_lo > 0.0)) throw parameter_error("phd constants: need g^-(y) > 0");
            const double den_lo = h + d * m_lo * g_lo;
            y_a1 += g_hi / (den_lo * den_lo);
            y_gap += (g_hi - g_lo) / (den_lo * den_lo);
            y_glo += g_lo / (h + d * m_lo * g_lo);
            y_ghi_ratio += (g_hi / (h + d * m_hi * g_hi)) * (g_hi / g_lo);
        }
        const double denom = (1.0 - d) * m_lo + d * m_lo * y_glo + mu1 / r;
        out.a1.push_back(r * (1.0 - d) + r * d * h * y_a1);
        out.a2.push_back(m_hi * (beta_merged * ((1.0 - d) + d * y_ghi_ratio) + h * d * y_gap) / denom);
        out.tau1.push_back(r * d * h * m_hi * y_gap);
        out.tau2.push_back(((1.0 - d) + h * d * y_a1) / denom);
    }
    return out;
}

/// Crude geometric envelope for the homogeneous PHD filter under the
/// normalization r(1-d) <= 1/2 <= d, mu(1) >= 1 >= h, with the declared
/// observation-count cap. c_1 = c_2 = 1 and lambda_i = -log of the per-step
/// bound; admissibility must then be checked through compose_rates.
inline ContractionParameters phd_geometric_constants(const phd::PhdSpec& spec, double gamma0_mass,
                                                     int y_count_cap, double beta_merged) {
    spec.validate(true);
    const double r = spec.branch_rate()[0];
    const double d = spec.detect[0];
    const double h = spec.clutter.size() ? spec.clutter[0] : 0.0;
    const double mu1 = spec.birth_mass();
    if (!(r * (1.0 - d) <= 0.5 && d >= 0.5))
        throw parameter_error("phd geometric envelope: needs r (1-d) <= 1/2 <= d");
    if (!(mu1 >= 1.0 && h <= 1.0)) throw parameter_error("phd geometric envelope: needs mu(1) >= 1 >= h");

    double y_ratio = 0.0, y_ratio_sq = 0.0;
    for (Eigen::Index y = 0; y < spec.sensor.cols(); ++y) {
        const double g_hi = spec.sensor.col(y).maxCoeff();
        const double g_lo = spec.sensor.col(y).minCoeff();
        if (!(g_lo > 0.0)) throw parameter_error("phd geometric envelope: need g^-(y) > 0");
        y_ratio = std::max(y_ratio, g_hi / g_lo);
        y_ratio_sq = std::max(y_ratio_sq, g_hi / (g_lo * g_lo));
    }
    const double rho = 2.0 + gamma0_mass + 2.0 * r * y_count_cap;
    const double delta_g =
        std::max(rho, y_count_cap * std::max(y_ratio, y_ratio_sq));

    ContractionParameters out;
    out.m = 1;
    out.delta_g = delta_g;
    out.c1 = 1.0;
    out.c2 = 1.0;
    const double step1 = r * ((1.0 - d) + 2.0 / (mu1 * mu1)) * delta_g;
    const double step2 = r * ((1.0 - d) + 3.0 / mu1) * delta_g;
    if (!(step1 < 1.0 && step2 < 1.0))
        throw parameter_error("phd geometric envelope: per-step bounds not contracting (>= 1)");
    out.lambda1 = -std::log(step1);
    out.lambda2 = -std::log(step2);
    out.tau1 = r * (2.0 * h / mu1) * delta_g * delta_g;
    out.tau2 = (r / mu1) * ((1.0 - d) + 2.0 * h / (mu1 * mu1) * delta_g);
    return out;
}

// ---------------------------------------------------------------------------
// Rate composition
// ---------------------------------------------------------------------------

struct ComposedRates {
    double lambda = 0.0;
    double c11 = 0.0, c12 = 0.0, c21 = 0.0, c22 = 0.0;
};

/// Composes the two semigroup envelopes into a single uniform contraction
/// rate. Requires lambda1 != lambda2 and the coupling admissibility
/// inequality c1 c2 tau1 tau2 <= (1 - e^-l^)(e^-l^ - e^-l_v); throws
/// parameter_error naming the violated hypothesis otherwise.
inline ComposedRates compose_rates(double c1, double lambda1, double c2, double lambda2, double tau1,
                                   double tau2) {
    if (!(lambda1 > 0.0 && lambda2 > 0.0)) throw parameter_error("compose_rates: lambdas must be positive");
    if (lambda1 == lambda2) throw parameter_error("compose_rates: requires lambda1 != lambda2");
    const double lo = std::min(lambda1, lambda2);
    const double hi = std::max(lambda1, lambda2);
    const double gap = std::exp(-lo) - std::exp(-hi);
    const double budget = (1.0 - std::exp(-lo)) * gap;
    const double coupling = c1 * c2 * tau1 * tau2;
    if (coupling > budget)
        throw parameter_error("compose_rates: admissibility violated: c1 c2 tau1 tau2 = " +
                              std::to_string(coupling) + " > " + std::to_string(budget));

    ComposedRates out;
    out.lambda = lo - std::log1p(coupling * std::exp(lo) / gap);
    out.c22 = c2;
    out.c21 = tau2 == 0.0 ? 0.0 : c1 * c2 * tau2 / gap;
    if (tau1 == 0.0) {
        out.c12 = 0.0;
        out.c11 = c1;
    } else {
        const double denom = std::exp(-out.lambda) - std::exp(-lambda1);
        if (!(denom > 0.0))
            throw parameter_error("compose_rates: composed rate reaches lambda1; constants degenerate");
        out.c12 = c1 * c2 * tau1 / denom;
        out.c11 = c1 * (1.0 + out.c21 * tau1 / denom);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Finite-horizon sums
// ---------------------------------------------------------------------------

struct HorizonSums {
    double c11 = 0.0, c12 = 0.0, c21 = 0.0, c22 = 0.0;
};

/// Direct evaluation of the composed finite-horizon Lipschitz constants from
/// per-step data. a1/a2 give the semigroup envelopes a^i_{p,n}; tau arrays
/// are indexed by step (tau[k] is the step-k continuity constant, k >= 1).
/// The chained multi-index sums are evaluated by dynamic programming over
/// the last chain index, which reproduces the literal enumeration exactly.
inline HorizonSums finite_horizon_sums(const std::function<double(int, int)>& a1,
                                       const std::function<double(int, int)>& a2,
                                       const std::vector<double>& tau1,
                                       const std::vector<double>& tau2, int p, int n) {
    if (p > n) throw parameter_error("finite_horizon_sums: p > n");
    auto abar1 = [&](int q, int r) { return tau1.at(static_cast<std::size_t>(q + 1)) * a1(q + 1, r); };
    auto abar2 = [&](int q, int r) { return tau2.at(static_cast<std::size_t>(q + 1)) * a2(q + 1, r); };
    auto b = [&](int q, int r) {
        double acc = 0.0;
        for (int t = q + 1; t < r; ++t) acc += abar1(q, t) * abar2(t, r);
        return acc;
    };
    auto bprime = [&](int q, int r) {
        double acc = 0.0;
        for (int t = q; t < r; ++t) acc += a1(q, t) * abar2(t, r);
        return acc;
    };

    // c22_{p,r} = a2(p,r) + sum_{p <= t < r} c22_{p,t} b(t,r); same shape for c21.
    std::vector<double> c22(static_cast<std::size_t>(n - p) + 1);
    std::vector<double> c21(static_cast<std::size_t>(n - p) + 1);
    for (int r = p; r <= n; ++r) {
        double acc22 = a2(p, r);
        double acc21 = bprime(p, r);
        for (int t = p; t < r; ++t) {
            acc22 += c22[static_cast<std::size_t>(t - p)] * b(t, r);
            acc21 += c21[static_cast<std::size_t>(t - p)] * b(t, r);
        }
        c22[static_cast<std::size_t>(r - p)] = acc22;
        c21[static_cast<std::size_t>(r - p)] = acc21;
    }

    HorizonSums out;
    out.c22 = c22.back();
    out.c21 = c21.back();
    out.c11 = a1(p, n);
    out.c12 = 0.0;
    for (int q = p; q < n; ++q) {
        out.c11 += c21[static_cast<std::size_t>(q - p)] * abar1(q, n);
        out.c12 += c22[static_cast<std::size_t>(q - p)] * abar1(q, n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Empirical decay
// ---------------------------------------------------------------------------

struct DecayFit {
    bool degenerate = false;   ///< gaps identically ~0; no rate defined
    double lambda_hat = 0.0;
    std::vector<double> gaps;  ///< per-step gap, index 0 = initial
};

struct DecayReport {
    DecayFit mass;
    DecayFit tv;
};

namespace detail {

inline DecayFit fit_decay(std::vector<double> gaps, int burn_in) {
    DecayFit fit;
    fit.gaps = std::move(gaps);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = static_cast<std::size_t>(burn_in); i < fit.gaps.size(); ++i) {
        if (fit.gaps[i] < 1e-14) break;  // underflow truncates the window
        pts.emplace_back(static_cast<double>(i), std::log(fit.gaps[i]));
    }
    if (pts.size() < 2) {
        fit.degenerate = true;
        return fit;
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (auto [x, y] : pts) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double count = static_cast<double>(pts.size());
    const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
    fit.lambda_hat = -slope;
    return fit;
}

}  // namespace detail

/// Runs two exact flows from different initial conditions and fits the
/// exponential decay rate of their mass gap and total-variation gap. The
/// first `burn_in` steps are excluded from the least-squares window.
template <flow::FiniteFlowModel M>
DecayReport empirical_decay_rate(const M& model, const flow::MassMeasurePair& init_a,
                                 const flow::MassMeasurePair& init_b, int horizon, int burn_in = 3) {
    const auto ta = flow::exact_reference_flow(model, horizon, init_a);
    const auto tb = flow::exact_reference_flow(model, horizon, init_b);
    std::vector<double> mass_gaps, tv_gaps;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        mass_gaps.push_back(std::abs(ta[i].mass - tb[i].mass));
        tv_gaps.push_back(total_variation(ta[i].eta, tb[i].eta));
    }
    DecayReport report;
    report.mass = detail::fit_decay(std::move(mass_gaps), burn_in);
    report.tv = detail::fit_decay(std::move(tv_gaps), burn_in);
    return report;
}

}  // namespace mvflow::stability
