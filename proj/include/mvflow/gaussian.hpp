#pragma once

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "mvflow/errors.hpp"
#include "mvflow/rng.hpp"

namespace mvflow::gaussian {

inline constexpr double kSpdFloor = 1e-10;

/// Multivariate Gaussian state with symmetric positive definite covariance.
struct GaussianState {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    int dim() const { return static_cast<int>(mean.size()); }
};

/// Symmetrize and verify the SPD floor; covariance updates go through this
/// after every algebraic step.
inline Eigen::MatrixXd ensure_spd(Eigen::MatrixXd m) {
    m = 0.5 * (m + m.transpose()).eval();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= kSpdFloor)
        throw validation_error("ensure_spd: covariance lost positive definiteness");
    return m;
}

inline double density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                      const Eigen::MatrixXd& cov) {
    const Eigen::Index d = x.size();
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw validation_error("gaussian::density: covariance not SPD");
    const Eigen::VectorXd diff = x - mean;
    const Eigen::VectorXd sol = llt.solve(diff);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) log_det += std::log(llt.matrixL()(i, i));
    const double quad = diff.dot(sol);
    return std::exp(-0.5 * quad - log_det - 0.5 * static_cast<double>(d) * std::log(2.0 * M_PI));
}

inline double density(const Eigen::VectorXd& x, const GaussianState& g) {
    return density(x, g.mean, g.cov);
}

/// Linear-Gaussian Markov kernel x' = F x + shift + w, w ~ N(0, Q).
struct LinearGaussianKernel {
    Eigen::MatrixXd transition;  ///< F
    Eigen::VectorXd shift;
    Eigen::MatrixXd noise;       ///< Q (positive semidefinite)

    GaussianState predict(const GaussianState& g) const {
        GaussianState out;
        out.mean = transition * g.mean + shift;
        out.cov = ensure_spd(transition * g.cov * transition.transpose() + noise);
        return out;
    }

    Eigen::VectorXd sample(const Eigen::VectorXd& x, RngStream& rng) const {
        Eigen::VectorXd out = transition * x + shift;
        if (noise.size() > 0 && noise.norm() > 0.0) {
            const Eigen::LLT<Eigen::MatrixXd> llt(noise);
            Eigen::VectorXd z(out.size());
            for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
            out += llt.matrixL() * z;
        }
        return out;
    }
};

/// Linear-Gaussian observation y = H x + v, v ~ N(0, R).
struct LinearGaussianSensor {
    Eigen::MatrixXd observation;  ///< H
    Eigen::MatrixXd noise;        ///< R (SPD)

    /// Predictive likelihood of y under the state law N(mean, cov):
    /// N(y; H mean, H cov H^T + R).
    double predictive_likelihood(const GaussianState& g, const Eigen::VectorXd& y) const {
        const Eigen::MatrixXd s = observation * g.cov * observation.transpose() + noise;
        return density(y, Eigen::VectorXd(observation * g.mean), s);
    }

    /// Conjugate Bayes update in Joseph form (numerically symmetric).
    GaussianState update(const GaussianState& g, const Eigen::VectorXd& y) const {
        const Eigen::MatrixXd s = observation * g.cov * observation.transpose() + noise;
        const Eigen::LLT<Eigen::MatrixXd> llt(s);
        if (llt.info() != Eigen::Success) throw validation_error("kalman update: innovation not SPD");
        const Eigen::MatrixXd gain = llt.solve(observation * g.cov).transpose();
        const Eigen::MatrixXd identity =
            Eigen::MatrixXd::Identity(g.dim(), g.dim());
        const Eigen::MatrixXd post = identity - gain * observation;
        GaussianState out;
        out.mean = g.mean + gain * (y - observation * g.mean);
        out.cov = ensure_spd(post * g.cov * post.transpose() + gain * noise * gain.transpose());
        return out;
    }

    Eigen::VectorXd sample(const Eigen::VectorXd& x, RngStream& rng) const {
        const Eigen::LLT<Eigen::MatrixXd> llt(noise);
        Eigen::VectorXd z(noise.rows());
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
        return observation * x + llt.matrixL() * z;
    }
};

inline Eigen::VectorXd sample_state(const GaussianState& g, RngStream& rng) {
    const Eigen::LLT<Eigen::MatrixXd> llt(g.cov);
    if (llt.info() != Eigen::Success) throw validation_error("sample_state: covariance not SPD");
    Eigen::VectorXd z(g.dim());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    return g.mean + llt.matrixL() * z;
}

}  // namespace mvflow::gaussian
