#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Dense>

#include "mvflow/benchmarks.hpp"
#include "mvflow/bernoulli.hpp"
#include "mvflow/error_analysis.hpp"
#include "mvflow/meanfield.hpp"
#include "test_support.hpp"

using namespace mvflow;
using namespace mvflow::meanfield;
namespace mt = mvflow::testing;

namespace {

bernoulli::BernoulliFlowModel standard_model(int horizon) {
    return {benchmarks::standard_bernoulli_spec(), benchmarks::standard_bernoulli_observations(horizon)};
}

/// Model whose McKean transition sends every particle to state 0.
struct AbsorbingModel {
    int k = 3;
    int num_states() const { return k; }
    Eigen::MatrixXd unnorm_operator(int, double, const DiscreteMeasure&) const {
        Eigen::MatrixXd q = Eigen::MatrixXd::Zero(k, k);
        q.col(0).setOnes();
        return q;
    }
    flow::McKeanStep mckean_step(int, double, const DiscreteMeasure&) const {
        flow::McKeanStep s;
        s.mass_potential = Eigen::VectorXd::Ones(k);
        s.selection_potential = Eigen::VectorXd::Ones(k);
        s.alpha = 1.0;
        s.base = Eigen::MatrixXd::Zero(k, k);
        s.base.col(0).setOnes();
        s.reset = Eigen::VectorXd::Zero(k);
        return s;
    }
};

}  // namespace

TEST(InitEnsemble, DiracPutsAllParticlesAtAtom) {
    const auto ens = init_ensemble(DiscreteMeasure::dirac(4, 2), 0.8, 500, RngStream(1));
    for (int x : ens.particles) EXPECT_EQ(x, 2);
    EXPECT_DOUBLE_EQ(ens.mass, 0.8);
}

TEST(InitEnsemble, EmpiricalWeightsWithinMultinomialTail) {
    const int count = 100000;
    const auto eta0 = DiscreteMeasure(Eigen::Vector3d(0.2, 0.3, 0.5));
    const auto ens = init_ensemble(eta0, 1.0, count, RngStream(2));
    const auto emp = empirical_measure(ens, 3);
    for (int x = 0; x < 3; ++x) {
        const double p = eta0.weight(x);
        const double sigma = std::sqrt(p * (1.0 - p) / count);
        EXPECT_NEAR(emp.weight(x), p, 4.0 * sigma);
    }
}

TEST(InitEnsemble, SameSeedReproduces) {
    const auto eta0 = DiscreteMeasure(Eigen::Vector3d(0.2, 0.3, 0.5));
    const auto a = init_ensemble(eta0, 1.0, 1000, RngStream(77));
    const auto b = init_ensemble(eta0, 1.0, 1000, RngStream(77));
    EXPECT_EQ(a.particles, b.particles);
}

TEST(InitEnsemble, RejectsEmptyEnsemble) {
    EXPECT_THROW(init_ensemble(DiscreteMeasure::uniform(2), 1.0, 0, RngStream(1)), parameter_error);
}

TEST(MfStep, UnitPotentialKeepsMass) {
    const AbsorbingModel model;
    auto ens = init_ensemble(DiscreteMeasure::uniform(3), 0.37, 200, RngStream(5));
    ens = mf_step(ens, model);
    EXPECT_DOUBLE_EQ(ens.mass, 0.37);
    EXPECT_EQ(ens.step, 1);
}

TEST(MfStep, ConstantRowKernelGivesIidTargetSamples) {
    // Selection potential constant and base rows all equal nu: next particles
    // are i.i.d. nu-distributed.
    struct ConstantRowModel {
        Eigen::VectorXd nu = (Eigen::VectorXd(3) << 0.5, 0.3, 0.2).finished();
        int num_states() const { return 3; }
        Eigen::MatrixXd unnorm_operator(int, double, const DiscreteMeasure&) const {
            Eigen::MatrixXd q(3, 3);
            for (int i = 0; i < 3; ++i) q.row(i) = nu.transpose();
            return q;
        }
        flow::McKeanStep mckean_step(int, double, const DiscreteMeasure&) const {
            flow::McKeanStep s;
            s.mass_potential = Eigen::VectorXd::Ones(3);
            s.selection_potential = Eigen::VectorXd::Ones(3);
            s.alpha = 1.0;
            s.base = unnorm_operator(0, 0.0, DiscreteMeasure());
            s.reset = Eigen::VectorXd::Zero(3);
            return s;
        }
    };
    const ConstantRowModel model;
    const int count = 100000;
    auto ens = init_ensemble(DiscreteMeasure::dirac(3, 1), 1.0, count, RngStream(6));
    ens = mf_step(ens, model);
    const auto emp = empirical_measure(ens, 3);
    for (int x = 0; x < 3; ++x) {
        const double p = model.nu[x];
        EXPECT_NEAR(emp.weight(x), p, 4.0 * std::sqrt(p * (1.0 - p) / count));
    }
}

TEST(MfStep, LargeEnsembleTracksExactFlow) {
    const auto model = standard_model(1);
    const auto eta0 = DiscreteMeasure::uniform(3);
    const flow::MassMeasurePair init{0.4, eta0, 0};
    const auto exact = flow::flow_step(init, model);
    auto ens = init_ensemble(eta0, 0.4, 100000, RngStream(7));
    ens = mf_step(ens, model);
    EXPECT_LE(total_variation(empirical_measure(ens, 3), exact.eta), 0.02);
    EXPECT_NEAR(ens.mass, exact.mass, 0.02);
}

TEST(MfStep, MassRecursionDeterministicGivenTrajectory) {
    const auto model = standard_model(3);
    auto a = init_ensemble(DiscreteMeasure::uniform(3), 0.4, 500, RngStream(8));
    auto b = a;
    for (int n = 0; n < 3; ++n) {
        a = mf_step(a, model);
        b = mf_step(b, model);
        EXPECT_EQ(a.particles, b.particles);
        EXPECT_DOUBLE_EQ(a.mass, b.mass);
    }
}

TEST(MfStep, EpsilonVariantsStayConsistentWithExactFlow) {
    const auto model = standard_model(1);
    const auto eta0 = DiscreteMeasure::uniform(3);
    const auto exact = flow::flow_step({0.4, eta0, 0}, model);
    std::vector<double> masses;
    for (SelectionScheme scheme :
         {SelectionScheme{SelectionScheme::additive, 0.05},
          SelectionScheme{SelectionScheme::multiplicative, 0.3}}) {
        auto ens = init_ensemble(eta0, 0.4, 100000, RngStream(9));
        ens = mf_step(ens, model, scheme);
        EXPECT_LE(total_variation(empirical_measure(ens, 3), exact.eta), 0.02);
        EXPECT_NEAR(ens.mass, exact.mass, 0.02);
        masses.push_back(ens.mass);
    }
    // The mass map never sees the selection scheme: identical ensembles give
    // identical masses.
    EXPECT_DOUBLE_EQ(masses[0], masses[1]);
}

TEST(MfStep, RejectsInadmissibleEpsilon) {
    const auto model = standard_model(1);
    auto ens = init_ensemble(DiscreteMeasure::uniform(3), 0.4, 100, RngStream(10));
    EXPECT_THROW(mf_step(ens, model, {SelectionScheme::additive, 100.0}), parameter_error);
    EXPECT_THROW(mf_step(ens, model, {SelectionScheme::multiplicative, 1e9}), parameter_error);
}

TEST(LocalField, DeterministicKernelHasZeroField) {
    const AbsorbingModel model;
    auto before = init_ensemble(DiscreteMeasure::uniform(3), 1.0, 300, RngStream(11));
    auto after = mf_step(before, model);
    const auto fs = indicator_functions(3);
    const auto field = local_field(before, after, model, fs);
    EXPECT_LT(field.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LocalField, ConditionallyCenteredOverTrials) {
    const auto model = standard_model(1);
    const auto before = init_ensemble(DiscreteMeasure::uniform(3), 0.4, 64, RngStream(12));
    const Eigen::VectorXd f = Eigen::VectorXd::Unit(3, 0);
    const int trials = 10000;
    double sum = 0.0, sum_sq = 0.0;
    for (int t = 0; t < trials; ++t) {
        auto draw = before;
        draw.stream = RngStream(12).derive(1000, t);
        const auto after = mf_step(draw, model);
        const double w = local_field(draw, after, model, {f})[0];
        sum += w;
        sum_sq += w * w;
    }
    const double mean = sum / trials;
    const double sd = std::sqrt(sum_sq / trials - mean * mean);
    EXPECT_LE(std::abs(mean), 4.0 * sd / std::sqrt(static_cast<double>(trials)));

    // Khintchine r = 2 bound: sqrt(N) L2 of W(f) <= a_2 = 1 for osc(f) <= 1.
    const double l2_scaled = std::sqrt(sum_sq / trials * 64.0);
    EXPECT_LE(l2_scaled, 1.0 + 3.0 * sd / std::sqrt(static_cast<double>(trials)));
}

TEST(LocalField, RejectsNonConsecutiveEnsembles) {
    const auto model = standard_model(3);
    auto e0 = init_ensemble(DiscreteMeasure::uniform(3), 0.4, 50, RngStream(13));
    auto e1 = mf_step(e0, model);
    auto e2 = mf_step(e1, model);
    EXPECT_THROW(local_field(e0, e2, model, indicator_functions(3)), parameter_error);
}

TEST(Trajectory, ConvergenceRateIsRootN) {
    const auto model = standard_model(6);
    const auto eta0 = DiscreteMeasure::uniform(3);
    const auto exact = flow::exact_reference_flow(model, 6, {0.4, eta0, 0});
    const Eigen::VectorXd f = Eigen::VectorXd::Unit(3, 0);
    const std::vector<int> counts = {100, 1000, 10000};
    std::vector<double> rmse;
    const int trials = 300;
    for (std::size_t ci = 0; ci < counts.size(); ++ci) {
        double acc = 0.0;
        for (int t = 0; t < trials; ++t) {
            auto traj = mf_trajectory(eta0, 0.4, counts[ci], RngStream(14).derive(ci, t), model, 6);
            const double err =
                integrate(empirical_measure(traj.back(), 3), f) - integrate(exact.back().eta, f);
            acc += err * err;
        }
        rmse.push_back(std::sqrt(acc / trials));
    }
    std::vector<double> ns(counts.begin(), counts.end());
    const double slope = analysis::fit_loglog_slope(ns, rmse);
    EXPECT_NEAR(slope, -0.5, 0.15);
}
