#pragma once

#include <cmath>
#include <concepts>
#include <vector>

#include <Eigen/Dense>

#include "mvflow/errors.hpp"

namespace mvflow {

/// Absolute tolerance for weight normalization. Probability weights whose
/// sum drifts by less than this are renormalized silently; larger drift is
/// treated as a bug in the caller.
inline constexpr double kWeightTol = 1e-12;

/// A finite positive measure on the state space {0, ..., K-1}, stored as a
/// dense weight vector. Zero weights are allowed, so the support may be any
/// subset of the space.
class DiscreteMeasure {
public:
    DiscreteMeasure() = default;

    explicit DiscreteMeasure(Eigen::VectorXd weights) : w_(std::move(weights)) {
        for (Eigen::Index i = 0; i < w_.size(); ++i)
            if (!(w_[i] >= 0.0)) throw validation_error("DiscreteMeasure: negative or NaN weight");
    }

    static DiscreteMeasure dirac(int num_states, int state) {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(num_states);
        w[state] = 1.0;
        return DiscreteMeasure(std::move(w));
    }

    static DiscreteMeasure uniform(int num_states) {
        return DiscreteMeasure(Eigen::VectorXd::Constant(num_states, 1.0 / num_states));
    }

    /// Construct a probability measure. Accepts weights whose sum drifts
    /// from 1 by at most kWeightTol and renormalizes them silently.
    static DiscreteMeasure probability(Eigen::VectorXd weights) {
        DiscreteMeasure m(std::move(weights));
        const double s = m.total_mass();
        if (std::abs(s - 1.0) > kWeightTol)
            throw validation_error("DiscreteMeasure::probability: weights sum to " + std::to_string(s));
        m.w_ /= s;
        return m;
    }

    int num_states() const { return static_cast<int>(w_.size()); }
    const Eigen::VectorXd& weights() const { return w_; }
    double weight(int i) const { return w_[i]; }
    double total_mass() const { return w_.sum(); }
    bool is_probability() const { return std::abs(total_mass() - 1.0) <= kWeightTol; }

    /// Normalized copy; errors on a null measure.
    DiscreteMeasure normalized() const {
        const double s = total_mass();
        if (!(s > 0.0)) throw extinction_error("normalized: null measure");
        return DiscreteMeasure(w_ / s);
    }

    DiscreteMeasure scaled(double c) const {
        if (!(c >= 0.0)) throw parameter_error("scaled: negative factor");
        return DiscreteMeasure(w_ * c);
    }

private:
    Eigen::VectorXd w_;
};

/// A Markov kernel on finite spaces: a row-stochastic matrix, row = source
/// state. Rows must sum to 1 within kWeightTol; they are rescaled exactly to
/// guard long semigroup products against drift.
class StochasticMatrix {
public:
    StochasticMatrix() = default;

    explicit StochasticMatrix(Eigen::MatrixXd rows) : m_(std::move(rows)) {
        for (Eigen::Index i = 0; i < m_.rows(); ++i) {
            double s = 0.0;
            for (Eigen::Index j = 0; j < m_.cols(); ++j) {
                if (!(m_(i, j) >= 0.0)) throw validation_error("StochasticMatrix: negative entry");
                s += m_(i, j);
            }
            if (std::abs(s - 1.0) > kWeightTol)
                throw validation_error("StochasticMatrix: row " + std::to_string(i) +
                                       " sums to " + std::to_string(s));
            m_.row(i) /= s;
        }
    }

    static StochasticMatrix identity(int n) { return StochasticMatrix(Eigen::MatrixXd::Identity(n, n)); }

    /// Kernel whose every row equals the given probability vector.
    static StochasticMatrix constant_rows(const Eigen::VectorXd& row, int from_states) {
        Eigen::MatrixXd m(from_states, row.size());
        for (int i = 0; i < from_states; ++i) m.row(i) = row.transpose();
        return StochasticMatrix(std::move(m));
    }

    int from_states() const { return static_cast<int>(m_.rows()); }
    int to_states() const { return static_cast<int>(m_.cols()); }
    const Eigen::MatrixXd& matrix() const { return m_; }
    Eigen::VectorXd row(int i) const { return m_.row(i).transpose(); }

private:
    Eigen::MatrixXd m_;
};

/// A bounded positive potential on a finite space: a value table together
/// with declared bounds. The declared bounds are certified inputs for the
/// stability analysis, so construction checks the table against them.
class Potential {
public:
    Potential() = default;

    Potential(Eigen::VectorXd values, double lower, double upper)
        : v_(std::move(values)), lo_(lower), hi_(upper) {
        if (!(0.0 <= lo_ && lo_ <= hi_)) throw validation_error("Potential: invalid declared bounds");
        for (Eigen::Index i = 0; i < v_.size(); ++i)
            if (v_[i] < lo_ - kWeightTol || v_[i] > hi_ + kWeightTol)
                throw validation_error("Potential: value outside declared bounds");
    }

    /// Bounds taken from the table itself.
    explicit Potential(Eigen::VectorXd values)
        : Potential(Eigen::VectorXd(values), values.size() ? values.minCoeff() : 0.0,
                    values.size() ? values.maxCoeff() : 0.0) {}

    const Eigen::VectorXd& values() const { return v_; }
    double operator()(int state) const { return v_[state]; }
    double lower() const { return lo_; }
    double upper() const { return hi_; }

private:
    Eigen::VectorXd v_;
    double lo_ = 0.0, hi_ = 0.0;
};

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

/// mu(f) = sum_i w_i f(x_i), exact on finite support.
inline double integrate(const DiscreteMeasure& mu, const Eigen::VectorXd& f) {
    if (f.size() != mu.num_states()) throw dimension_error("integrate: size mismatch");
    return mu.weights().dot(f);
}

inline double integrate(const DiscreteMeasure& mu, const Potential& f) {
    return integrate(mu, f.values());
}

template <std::invocable<int> F>
    requires(!std::is_base_of_v<Eigen::EigenBase<std::decay_t<F>>, std::decay_t<F>>)
double integrate(const DiscreteMeasure& mu, F&& f) {
    double acc = 0.0;
    for (int i = 0; i < mu.num_states(); ++i)
        if (mu.weight(i) != 0.0) acc += mu.weight(i) * f(i);
    return acc;
}

/// Boltzmann-Gibbs transform Psi_G(eta)(dx) = G(x) eta(dx) / eta(G).
/// Requires eta(G) > 0; a vanishing normalizer signals extinction.
inline DiscreteMeasure boltzmann_gibbs(const Eigen::VectorXd& G, const DiscreteMeasure& eta) {
    if (G.size() != eta.num_states()) throw dimension_error("boltzmann_gibbs: size mismatch");
    Eigen::VectorXd w = eta.weights().cwiseProduct(G);
    const double z = w.sum();
    if (!(z > 0.0)) throw extinction_error("boltzmann_gibbs: eta(G) = 0");
    return DiscreteMeasure(w / z);
}

inline DiscreteMeasure boltzmann_gibbs(const Potential& G, const DiscreteMeasure& eta) {
    return boltzmann_gibbs(G.values(), eta);
}

/// Dual kernel action (mu Q)(dy) = sum_x mu(x) Q(x, dy). Exact matrix
/// product on finite spaces; preserves total mass for Markov kernels.
inline DiscreteMeasure apply_kernel(const DiscreteMeasure& mu, const StochasticMatrix& Q) {
    if (Q.from_states() != mu.num_states()) throw dimension_error("apply_kernel: size mismatch");
    return DiscreteMeasure(Q.matrix().transpose() * mu.weights());
}

enum class SelectionVariant { additive, multiplicative };

/// Selection transition S_eta with eta S_eta = Psi_G(eta).
///
/// additive:        S(x,.) = (eps/eta(G)) delta_x + (1 - eps/eta(G)) Psi_{G-eps}(eta),
///                  admissible when 0 <= eps <= min G.
/// multiplicative:  S(x,.) = eps G(x) delta_x + (1 - eps G(x)) Psi_G(eta),
///                  admissible when eps >= 0 and eps * max G <= 1.
/// eps = 0 collapses both to rows all equal to Psi_G(eta).
inline StochasticMatrix selection_kernel(const Eigen::VectorXd& G, const DiscreteMeasure& eta,
                                         double eps, SelectionVariant variant) {
    if (G.size() != eta.num_states()) throw dimension_error("selection_kernel: size mismatch");
    const int n = eta.num_states();
    const double etaG = eta.weights().dot(G);
    if (!(etaG > 0.0)) throw extinction_error("selection_kernel: eta(G) = 0");
    Eigen::MatrixXd S(n, n);
    if (variant == SelectionVariant::additive) {
        if (eps < 0.0 || eps > G.minCoeff() + kWeightTol)
            throw parameter_error("selection_kernel: additive variant needs 0 <= eps <= min G");
        const double keep = eps / etaG;
        Eigen::VectorXd target;
        if (1.0 - keep <= kWeightTol) {
            target = Eigen::VectorXd::Zero(n);  // coefficient vanishes; G is constant = eps
        } else {
            target = boltzmann_gibbs(Eigen::VectorXd(G.array() - eps), eta).weights();
        }
        for (int i = 0; i < n; ++i) {
            S.row(i) = ((1.0 - keep) * target).transpose();
            S(i, i) += keep;
        }
    } else {
        if (eps < 0.0 || eps * G.maxCoeff() > 1.0 + kWeightTol)
            throw parameter_error("selection_kernel: multiplicative variant needs eps * max G <= 1");
        const Eigen::VectorXd target = boltzmann_gibbs(G, eta).weights();
        for (int i = 0; i < n; ++i) {
            const double keep = std::min(eps * G[i], 1.0);
            S.row(i) = ((1.0 - keep) * target).transpose();
            S(i, i) += keep;
        }
    }
    return StochasticMatrix(std::move(S));
}

/// Total variation distance between probability measures on a common finite
/// space: (1/2) sum_i |w_i - w'_i|, in [0, 1].
inline double total_variation(const DiscreteMeasure& a, const DiscreteMeasure& b) {
    if (a.num_states() != b.num_states()) throw dimension_error("total_variation: size mismatch");
    if (!a.is_probability() || !b.is_probability())
        throw validation_error("total_variation: inputs must be probability measures");
    return 0.5 * (a.weights() - b.weights()).cwiseAbs().sum();
}

inline double total_variation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return 0.5 * (a - b).cwiseAbs().sum();
}

// ---------------------------------------------------------------------------
// Weighted sample clouds on general state spaces
// ---------------------------------------------------------------------------

/// A weighted point set on an arbitrary state space (Euclidean vectors or
/// integer states). This is the particle-side measure representation;
/// densities never appear here, only inside kernels and potentials.
template <class State>
struct WeightedPoints {
    std::vector<State> points;
    Eigen::VectorXd weights;

    double total_mass() const { return weights.sum(); }

    template <std::invocable<const State&> F>
    double integrate(F&& f) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i)
            acc += weights[static_cast<Eigen::Index>(i)] * f(points[i]);
        return acc;
    }
};

/// Project a Euclidean sample cloud onto a caller-supplied finite grid
/// (bin function state -> cell id) so total variation is well defined.
template <class State, std::invocable<const State&> BinFn>
DiscreteMeasure project_to_grid(const WeightedPoints<State>& mu, int num_cells, BinFn&& bin) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(num_cells);
    for (std::size_t i = 0; i < mu.points.size(); ++i) {
        const int cell = bin(mu.points[i]);
        if (cell < 0 || cell >= num_cells) throw domain_error("project_to_grid: bin out of range");
        w[cell] += mu.weights[static_cast<Eigen::Index>(i)];
    }
    return DiscreteMeasure(std::move(w));
}

}  // namespace mvflow
