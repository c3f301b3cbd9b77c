#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mvflow/errors.hpp"

namespace mvflow {

/// 64-bit finalizer (splitmix64). Used both as the stream generator and as
/// the key-derivation hash for substreams.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Counter-based random stream. A stream is identified by a key derived from
/// (master seed, trial, step, particle, ...); the sequence is splitmix64
/// started at that key. Substreams derived from distinct id tuples are
/// independent for simulation purposes, so per-particle work can be
/// parallelized without changing any drawn value.
class RngStream {
public:
    RngStream() : state_(0) {}
    explicit RngStream(std::uint64_t key) : state_(key) {}

    /// Derive a substream key by folding ids into the current key.
    template <class... Ids>
    [[nodiscard]] RngStream derive(Ids... ids) const {
        std::uint64_t k = state_;
        ((k = mix64(k ^ (0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(ids)))), ...);
        return RngStream(k);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1]; safe as a log() argument.
    double uniform_pos() { return 1.0 - uniform(); }

    /// Standard normal (Box-Muller, cached spare).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u = uniform_pos();
        const double v = uniform();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double c = std::cos(6.283185307179586476925286766559 * v);
        const double s = std::sin(6.283185307179586476925286766559 * v);
        spare_ = r * s;
        has_spare_ = true;
        return r * c;
    }

    /// Poisson draw. Knuth's product method on chunks of mean <= 30, using
    /// the fact that independent Poisson counts add.
    int poisson(double mean) {
        if (mean < 0.0) throw parameter_error("poisson: negative mean");
        int total = 0;
        while (mean > 30.0) {
            total += poisson_knuth(30.0);
            mean -= 30.0;
        }
        return total + poisson_knuth(mean);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Index draw from unnormalized non-negative weights (linear scan).
    int categorical(const Eigen::VectorXd& weights) {
        const double total = weights.sum();
        if (!(total > 0.0)) throw extinction_error("categorical: all weights zero");
        double u = uniform() * total;
        const Eigen::Index n = weights.size();
        for (Eigen::Index i = 0; i + 1 < n; ++i) {
            u -= weights[i];
            if (u < 0.0) return static_cast<int>(i);
        }
        return static_cast<int>(n - 1);
    }

private:
    int poisson_knuth(double mean) {
        if (mean <= 0.0) return 0;
        const double limit = std::exp(-mean);
        int k = 0;
        double prod = uniform_pos();
        while (prod > limit) {
            ++k;
            prod *= uniform_pos();
        }
        return k;
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Walker alias table for repeated draws from one discrete distribution.
/// O(n) deterministic build, O(1) per draw; the workhorse for resampling
/// large ensembles.
class AliasTable {
public:
    explicit AliasTable(const Eigen::VectorXd& weights)
        : prob_(static_cast<std::size_t>(weights.size())),
          alias_(static_cast<std::size_t>(weights.size())) {
        const std::size_t n = prob_.size();
        const double total = weights.sum();
        if (!(total > 0.0)) throw extinction_error("AliasTable: all weights zero");
        std::vector<double> scaled(n);
        std::vector<std::size_t> small, large;
        small.reserve(n);
        large.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (!(weights[static_cast<Eigen::Index>(i)] >= 0.0))
                throw parameter_error("AliasTable: negative weight");
            scaled[i] = weights[static_cast<Eigen::Index>(i)] * static_cast<double>(n) / total;
            (scaled[i] < 1.0 ? small : large).push_back(i);
        }
        while (!small.empty() && !large.empty()) {
            const std::size_t s = small.back();
            small.pop_back();
            const std::size_t l = large.back();
            prob_[s] = scaled[s];
            alias_[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if (scaled[l] < 1.0) {
                large.pop_back();
                small.push_back(l);
            }
        }
        for (std::size_t s : small) {
            prob_[s] = 1.0;
            alias_[s] = s;
        }
        for (std::size_t l : large) {
            prob_[l] = 1.0;
            alias_[l] = l;
        }
    }

    int draw(RngStream& rng) const {
        const std::size_t n = prob_.size();
        const std::size_t i =
            std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)), n - 1);
        return static_cast<int>(rng.uniform() < prob_[i] ? i : alias_[i]);
    }

private:
    std::vector<double> prob_;
    std::vector<std::size_t> alias_;
};

/// Cumulative table for repeated draws from one discrete distribution.
/// Build once per step (O(n)), then each draw is a binary search.
class CategoricalTable {
public:
    explicit CategoricalTable(const Eigen::VectorXd& weights) : cum_(weights.size()) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < weights.size(); ++i) {
            const double w = weights[i];
            if (w < 0.0) throw parameter_error("CategoricalTable: negative weight");
            acc += w;
            cum_[static_cast<std::size_t>(i)] = acc;
        }
        if (!(acc > 0.0)) throw extinction_error("CategoricalTable: all weights zero");
        total_ = acc;
    }

    int draw(RngStream& rng) const {
        const double u = rng.uniform() * total_;
        const auto it = std::lower_bound(cum_.begin(), cum_.end(), u);
        const std::size_t idx = static_cast<std::size_t>(it - cum_.begin());
        return static_cast<int>(idx < cum_.size() ? idx : cum_.size() - 1);
    }

    double total() const { return total_; }

private:
    std::vector<double> cum_;
    double total_ = 0.0;
};

}  // namespace mvflow
