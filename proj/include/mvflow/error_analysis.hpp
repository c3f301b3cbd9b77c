#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mvflow/errors.hpp"
#include "mvflow/flow.hpp"
#include "mvflow/meanfield.hpp"
#include "mvflow/parallel.hpp"

namespace mvflow::analysis {

/// Khintchine-type moment constant a_r (unit scale): the L_r norms of the
/// local sampling fields satisfy E(|W(f)|^r)^{1/r} <= a_r, with
///   a_{2k}^{2k} = (2k)! 2^{-k} / k!   and   a_{2k+1}^{2k+1} = (2k+1)! 2^{-k} / k!.
inline double khintchine_constant(int r) {
    if (r < 1) throw parameter_error("khintchine_constant: r >= 1");
    const int k = r / 2;
    double value = 1.0;
    for (int i = 2; i <= r; ++i) value *= i;  // r!
    for (int i = 2; i <= k; ++i) value /= i;  // / k!
    value *= std::pow(2.0, -k);
    return std::pow(value, 1.0 / r);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Non-asymptotic Gaussian tail: radius b/sqrt(N) and the exceedance bound
/// P(|error| >= b/sqrt(N) + eps) <= exp(-N eps^2 / (2 b^2)).
struct ConcentrationBound {
    double radius = 0.0;
    double probability = 1.0;
};

inline ConcentrationBound concentration_radius(double b, int num_particles, double eps) {
    if (!(b > 0.0)) throw parameter_error("concentration_radius: b must be positive");
    ConcentrationBound out;
    out.radius = b / std::sqrt(static_cast<double>(num_particles));
    out.probability = std::exp(-static_cast<double>(num_particles) * eps * eps / (2.0 * b * b));
    return out;
}

/// One-sided Mann-Kendall p-value against the "increasing trend"
/// alternative. Large p = no evidence of growth.
inline double mann_kendall_pvalue_increasing(const std::vector<double>& series) {
    const int n = static_cast<int>(series.size());
    if (n < 3) throw parameter_error("mann_kendall: need at least 3 points");
    long long s = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double diff = series[static_cast<std::size_t>(j)] - series[static_cast<std::size_t>(i)];
            s += diff > 0.0 ? 1 : (diff < 0.0 ? -1 : 0);
        }
    const double var = static_cast<double>(n) * (n - 1.0) * (2.0 * n + 5.0) / 18.0;
    double z = 0.0;
    if (s > 0) z = (static_cast<double>(s) - 1.0) / std::sqrt(var);
    else if (s < 0) z = (static_cast<double>(s) + 1.0) / std::sqrt(var);
    return 1.0 - normal_cdf(z);
}

/// Least-squares slope of log y against log x.
inline double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw parameter_error("fit_loglog_slope: bad inputs");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double n = static_cast<double>(x.size());
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Monte Carlo error table for one particle algorithm against the exact
/// finite-state reference. moments indexed [N][n]: L1 <= L2 <= L4 by
/// construction (power-mean inequality), checked downstream.
struct ErrorCell {
    double mass_l1 = 0.0, mass_l2 = 0.0, mass_l4 = 0.0;
    double eta_l1 = 0.0, eta_l2 = 0.0, eta_l4 = 0.0;
};

struct ErrorReport {
    std::vector<int> particle_counts;
    int horizon = 0;
    int trials = 0;
    std::vector<std::vector<ErrorCell>> cells;  ///< [N index][step]
    double slope_mass = 0.0;                    ///< log-log RMSE slope at final step
    double slope_eta = 0.0;

    /// Per-trial absolute errors, kept only on request: [N index][trial][step].
    std::vector<std::vector<std::vector<double>>> raw_mass;
    std::vector<std::vector<std::vector<double>>> raw_eta;

    const ErrorCell& at(int n_index, int step) const {
        return cells[static_cast<std::size_t>(n_index)][static_cast<std::size_t>(step)];
    }
};

/// Runs `trials` independent mean-field trajectories per particle count and
/// accumulates L_r errors of the mass and of eta^N(f) against the exact
/// reference flow. Deterministic given the seed: trial t uses the substream
/// (seed, N index, t), and reductions are index-ordered.
template <flow::FiniteFlowModel M>
ErrorReport run_trials(const M& model, const DiscreteMeasure& eta0, double mass0,
                       const std::vector<int>& particle_counts, int trials, int horizon,
                       std::uint64_t seed, const Eigen::VectorXd& f, int threads = 1,
                       meanfield::SelectionScheme scheme = {}, bool keep_raw = false) {
    const auto exact = flow::exact_reference_flow(model, horizon, {mass0, eta0, 0});
    std::vector<double> exact_eta_f(static_cast<std::size_t>(horizon) + 1);
    for (int n = 0; n <= horizon; ++n)
        exact_eta_f[static_cast<std::size_t>(n)] = integrate(exact[static_cast<std::size_t>(n)].eta, f);

    ErrorReport report;
    report.particle_counts = particle_counts;
    report.horizon = horizon;
    report.trials = trials;

    for (std::size_t ni = 0; ni < particle_counts.size(); ++ni) {
        const int count = particle_counts[ni];
        std::vector<std::vector<double>> mass_err(static_cast<std::size_t>(trials));
        std::vector<std::vector<double>> eta_err(static_cast<std::size_t>(trials));
        parallel_for(trials, threads, [&](int t) {
            RngStream stream = RngStream(seed).derive(ni, t);
            auto& me = mass_err[static_cast<std::size_t>(t)];
            auto& ee = eta_err[static_cast<std::size_t>(t)];
            me.resize(static_cast<std::size_t>(horizon) + 1);
            ee.resize(static_cast<std::size_t>(horizon) + 1);
            auto ens = meanfield::init_ensemble(eta0, mass0, count, stream);
            for (int n = 0; n <= horizon; ++n) {
                const auto empirical = meanfield::empirical_measure(ens, model.num_states());
                me[static_cast<std::size_t>(n)] =
                    std::abs(ens.mass - exact[static_cast<std::size_t>(n)].mass);
                ee[static_cast<std::size_t>(n)] =
                    std::abs(integrate(empirical, f) - exact_eta_f[static_cast<std::size_t>(n)]);
                if (n < horizon) ens = meanfield::mf_step(ens, model, scheme);
            }
        });

        std::vector<ErrorCell> row(static_cast<std::size_t>(horizon) + 1);
        for (int n = 0; n <= horizon; ++n) {
            double m1 = 0, m2 = 0, m4 = 0, e1 = 0, e2 = 0, e4 = 0;
            for (int t = 0; t < trials; ++t) {
                const double em = mass_err[static_cast<std::size_t>(t)][static_cast<std::size_t>(n)];
                const double ef = eta_err[static_cast<std::size_t>(t)][static_cast<std::size_t>(n)];
                m1 += em;
                m2 += em * em;
                m4 += em * em * em * em;
                e1 += ef;
                e2 += ef * ef;
                e4 += ef * ef * ef * ef;
            }
            const double tn = static_cast<double>(trials);
            auto& cell = row[static_cast<std::size_t>(n)];
            cell.mass_l1 = m1 / tn;
            cell.mass_l2 = std::sqrt(m2 / tn);
            cell.mass_l4 = std::pow(m4 / tn, 0.25);
            cell.eta_l1 = e1 / tn;
            cell.eta_l2 = std::sqrt(e2 / tn);
            cell.eta_l4 = std::pow(e4 / tn, 0.25);
        }
        report.cells.push_back(std::move(row));
        if (keep_raw) {
            report.raw_mass.push_back(std::move(mass_err));
            report.raw_eta.push_back(std::move(eta_err));
        }
    }

    if (particle_counts.size() >= 2) {
        std::vector<double> ns, mass_rmse, eta_rmse;
        for (std::size_t ni = 0; ni < particle_counts.size(); ++ni) {
            ns.push_back(static_cast<double>(particle_counts[ni]));
            mass_rmse.push_back(report.cells[ni].back().mass_l2);
            eta_rmse.push_back(report.cells[ni].back().eta_l2);
        }
        report.slope_mass = fit_loglog_slope(ns, mass_rmse);
        report.slope_eta = fit_loglog_slope(ns, eta_rmse);
    }
    return report;
}

}  // namespace mvflow::analysis
