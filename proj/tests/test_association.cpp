#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include <Eigen/Dense>

#include "mvflow/association.hpp"
#include "mvflow/error_analysis.hpp"
#include "mvflow/phd.hpp"
#include "test_support.hpp"

using namespace mvflow;
using namespace mvflow::assoc;
namespace mt = mvflow::testing;

namespace {

/// 1D linear-Gaussian spec used throughout.
LinearGaussianPhdSpec scalar_spec(double s = 0.8, double b = 0.0, double d = 0.9, double h = 0.2) {
    LinearGaussianPhdSpec spec;
    spec.survival = s;
    spec.spawn = b;
    spec.detect = d;
    spec.clutter = h;
    spec.motion.transition = Eigen::MatrixXd::Constant(1, 1, 0.9);
    spec.motion.shift = Eigen::VectorXd::Zero(1);
    spec.motion.noise = Eigen::MatrixXd::Constant(1, 1, 0.25);
    spec.sensor.observation = Eigen::MatrixXd::Constant(1, 1, 1.0);
    spec.sensor.noise = Eigen::MatrixXd::Constant(1, 1, 0.5);
    spec.birth.mean = Eigen::VectorXd::Zero(1);
    spec.birth.cov = Eigen::MatrixXd::Constant(1, 1, 2.0);
    spec.birth_mass = 0.7;
    spec.validate();
    return spec;
}

gaussian::GaussianState scalar_state(double mean, double var) {
    gaussian::GaussianState g;
    g.mean = Eigen::VectorXd::Constant(1, mean);
    g.cov = Eigen::MatrixXd::Constant(1, 1, var);
    return g;
}

Eigen::VectorXd obs1(double y) { return Eigen::VectorXd::Constant(1, y); }

/// Posterior moments of N(x; m, p) * N(y; x, r) by Simpson quadrature.
std::pair<double, double> quadrature_posterior(double m, double p, double y, double r) {
    const int cells = 8000;
    const double lo = -12.0, hi = 12.0;
    const double dx = (hi - lo) / cells;
    double z = 0, mean = 0, second = 0;
    for (int i = 0; i <= cells; ++i) {
        const double x = lo + i * dx;
        const double simpson = (i == 0 || i == cells) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double w = simpson * std::exp(-0.5 * (x - m) * (x - m) / p) *
                         std::exp(-0.5 * (y - x) * (y - x) / r);
        z += w;
        mean += w * x;
        second += w * x * x;
    }
    mean /= z;
    second /= z;
    return {mean, second - mean * mean};
}

}  // namespace

TEST(SubFilterStep, BirthSymbolResetsToBirthLaw) {
    const GaussianSubModel sm{scalar_spec()};
    EuclideanObservations obs;
    const auto out = sub_filter_step(sm, scalar_state(3.0, 1.0), kBirth, obs);
    EXPECT_DOUBLE_EQ(out.mean[0], sm.spec.birth.mean[0]);
    EXPECT_DOUBLE_EQ(out.cov(0, 0), sm.spec.birth.cov(0, 0));
}

TEST(SubFilterStep, KalmanUpdateMatchesQuadrature) {
    auto spec = scalar_spec();
    spec.motion.transition = Eigen::MatrixXd::Identity(1, 1);
    spec.motion.noise = Eigen::MatrixXd::Zero(1, 1);
    spec.sensor.noise = Eigen::MatrixXd::Constant(1, 1, 1.0);
    const GaussianSubModel sm{spec};
    EuclideanObservations obs;
    obs.points = {obs1(1.0)};
    const auto out = sub_filter_step(sm, scalar_state(0.0, 1.0), 0, obs);
    EXPECT_NEAR(out.mean[0], 0.5, 1e-12);
    EXPECT_NEAR(out.cov(0, 0), 0.5, 1e-12);
    const auto [qm, qv] = quadrature_posterior(0.0, 1.0, 1.0, 1.0);
    EXPECT_NEAR(out.mean[0], qm, 1e-6);
    EXPECT_NEAR(out.cov(0, 0), qv, 1e-6);
}

TEST(SubFilterStep, UndetectedWithIdentityMotionKeepsMean) {
    auto spec = scalar_spec();
    spec.motion.transition = Eigen::MatrixXd::Identity(1, 1);
    spec.motion.noise = Eigen::MatrixXd::Zero(1, 1);
    const GaussianSubModel sm{spec};
    EuclideanObservations obs;
    const auto out = sub_filter_step(sm, scalar_state(-1.7, 0.8), kUndetected, obs);
    EXPECT_DOUBLE_EQ(out.mean[0], -1.7);
    EXPECT_DOUBLE_EQ(out.cov(0, 0), 0.8);
}

TEST(PredictiveWeight, VirtualSymbols) {
    const GaussianSubModel sm{scalar_spec(0.8, 0.0, 0.25, 0.2)};
    auto state = init_association<GaussianSubModel>(scalar_state(0.0, 1.0), 2.0);
    state.mass = 2.0;
    EuclideanObservations obs;
    const std::vector<double> normalizers;
    const double pw_c = predictive_weight(sm, state.hypotheses[0], kUndetected, obs, normalizers, 2.0);
    EXPECT_NEAR(pw_c, 0.8 * 0.75, 1e-15);
    // gamma(1) = 2, mu(1) = 0.7: the birth weight is mu(1)/gamma(1).
    const double pw_b = predictive_weight(sm, state.hypotheses[0], kBirth, obs, normalizers, 2.0);
    EXPECT_NEAR(pw_b, 0.35, 1e-15);
}

TEST(PredictiveWeight, GaussianLikelihoodMatchesQuadrature) {
    const GaussianSubModel sm{scalar_spec()};
    const auto state = scalar_state(0.4, 1.3);
    const double y = 1.1;
    // integral of N(x; 0.4, 1.3) N(y; x, 0.5) dx by quadrature
    const int cells = 8000;
    const double lo = -12.0, hi = 12.0;
    const double dx = (hi - lo) / cells;
    double acc = 0;
    for (int i = 0; i <= cells; ++i) {
        const double x = lo + i * dx;
        const double simpson = (i == 0 || i == cells) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += simpson * gaussian::density(obs1(x), Eigen::VectorXd::Constant(1, 0.4),
                                           Eigen::MatrixXd::Constant(1, 1, 1.3)) *
               gaussian::density(obs1(y), obs1(x), Eigen::MatrixXd::Constant(1, 1, 0.5));
    }
    acc *= dx / 3.0;
    EXPECT_NEAR(sm.sensor_integral(state, obs1(y)), acc, 1e-6);
}

TEST(OmegaStep, SingleSurvivingSymbolGivesDirac) {
    // d = 1 and no observations: only the birth symbol keeps positive weight.
    const GaussianSubModel sm{scalar_spec(0.8, 0.0, 1.0, 0.2)};
    auto state = init_association<GaussianSubModel>(scalar_state(0.0, 1.0), 1.5);
    EuclideanObservations obs;
    const auto out = omega_step(sm, state, obs);
    ASSERT_EQ(out.next.hypotheses.size(), 1u);
    EXPECT_EQ(out.next.hypotheses[0].symbols.back(), kBirth);
    EXPECT_DOUBLE_EQ(out.next.hypotheses[0].weight, 1.0);
}

TEST(OmegaStep, EqualPredictiveWeightsGiveUniformProducts) {
    // Two atoms with identical states: every (a, b) pair has the same weight.
    const GaussianSubModel sm{scalar_spec()};
    AssociationState<GaussianSubModel> state;
    state.mass = 1.0;
    state.hypotheses.push_back({{kUndetected}, 0.5, scalar_state(0.0, 1.0)});
    state.hypotheses.push_back({{kBirth}, 0.5, scalar_state(0.0, 1.0)});
    EuclideanObservations obs;
    obs.points = {obs1(0.3), obs1(-0.4)};
    const auto out = omega_step(sm, state, obs);
    ASSERT_EQ(out.next.hypotheses.size(), 8u);
    std::map<int, double> by_symbol;
    for (const auto& hyp : out.next.hypotheses) by_symbol[hyp.symbols.back()] += hyp.weight;
    for (const auto& hyp : out.next.hypotheses) {
        const double expected = by_symbol[hyp.symbols.back()] / 2.0;
        EXPECT_NEAR(hyp.weight, expected, 1e-14);
    }
}

TEST(OmegaStep, HypothesisCountGrowsByAlphabetSize) {
    const GaussianSubModel sm{scalar_spec()};
    auto state = init_association<GaussianSubModel>(scalar_state(0.0, 1.0), 1.0);
    PruneConfig no_prune;
    no_prune.min_relative_weight = 0.0;
    std::size_t expected = 1;
    RngStream rng(601);
    for (int n = 0; n < 3; ++n) {
        EuclideanObservations obs;
        const int count = static_cast<int>(rng.next_u64() % 3);
        for (int i = 0; i < count; ++i) obs.points.push_back(obs1(rng.normal()));
        obs.step = n;
        state = omega_step(sm, state, obs, no_prune).next;
        expected *= static_cast<std::size_t>(count) + 2;
        EXPECT_EQ(state.hypotheses.size(), expected);
        double total = 0.0;
        for (const auto& hyp : state.hypotheses) total += hyp.weight;
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(OmegaStep, PruningNeverRemovesMoreThanTailMass) {
    const GaussianSubModel sm{scalar_spec()};
    auto state = init_association<GaussianSubModel>(scalar_state(0.0, 1.0), 1.0);
    EuclideanObservations obs;
    obs.points = {obs1(0.5), obs1(5.0)};
    PruneConfig prune;
    prune.min_relative_weight = 1e-3;
    const auto pruned = omega_step(sm, state, obs, prune);
    PruneConfig keep;
    keep.min_relative_weight = 0.0;
    const auto full = omega_step(sm, state, obs, keep);
    double kept = 0.0;
    for (const auto& hyp : full.next.hypotheses)
        if (hyp.weight > prune.min_relative_weight) kept += hyp.weight;
    // Pruning drops at most the sub-threshold tail: alphabet size * threshold.
    EXPECT_GE(kept, 1.0 - 4 * prune.min_relative_weight);
    EXPECT_LE(pruned.next.hypotheses.size(), full.next.hypotheses.size());
    EXPECT_DOUBLE_EQ(pruned.next.mass, full.next.mass);
}

TEST(OmegaStep, FiniteEnumerationMatchesDirectPhdRecursion) {
    RngStream rng(607);
    for (int rep = 0; rep < 10; ++rep) {
        auto sub = rng.derive(rep);
        const auto spec = mt::random_phd_spec(sub, 3, 3, /*homogeneous=*/true);
        const FiniteSubModel sm(spec);
        const auto obs_seq = mt::random_observations(sub, 3, 3, 2);

        auto eta0 = mt::random_probability(sub, 3);
        double mass = 1.2;
        auto state = init_association<FiniteSubModel>(eta0, mass);
        PruneConfig no_prune;
        no_prune.min_relative_weight = 0.0;
        DiscreteMeasure eta = eta0;
        for (int n = 0; n < 3; ++n) {
            state = omega_step(sm, state, obs_seq[static_cast<std::size_t>(n)], no_prune).next;
            const auto direct = phd::flow_step(mass, eta, obs_seq[static_cast<std::size_t>(n)], spec, n);
            mass = direct.mass;
            eta = direct.eta;
            EXPECT_NEAR(state.mass, mass, 1e-10 * std::max(1.0, mass));
            EXPECT_LT(total_variation(reconstruct_measure(state, 3), eta), 1e-10);
        }
    }
}

TEST(SampleAssociation, DeterministicOmegaGivesIdenticalSamples) {
    const GaussianSubModel sm{scalar_spec(0.8, 0.0, 1.0, 0.2)};  // only birth survives
    auto state = init_association<GaussianSubModel>(scalar_state(0.0, 1.0), 1.0);
    EuclideanObservations obs;
    const auto out = sample_association_ensemble(sm, state, obs, 500, RngStream(11));
    ASSERT_EQ(out.hypotheses.size(), 1u);
    EXPECT_DOUBLE_EQ(out.hypotheses[0].weight, 1.0);
    EXPECT_EQ(out.hypotheses[0].symbols.back(), kBirth);
}

TEST(SampleAssociation, ConvergesToExactOmega) {
    const GaussianSubModel sm{scalar_spec()};
    auto state = init_association<GaussianSubModel>(scalar_state(0.2, 1.5), 1.0);
    EuclideanObservations obs;
    obs.points = {obs1(0.0), obs1(1.0), obs1(-1.5)};
    const auto exact = omega_step(sm, state, obs);
    const auto sampled = sample_association_ensemble(sm, state, obs, 100000, RngStream(13));
    EXPECT_LE(association_total_variation(exact.next, sampled), 0.02);
    EXPECT_DOUBLE_EQ(sampled.mass, exact.next.mass);  // mass recursion is exact
}

TEST(SampleAssociation, SameSeedReproduces) {
    const GaussianSubModel sm{scalar_spec()};
    auto state = init_association<GaussianSubModel>(scalar_state(0.2, 1.5), 1.0);
    EuclideanObservations obs;
    obs.points = {obs1(0.4)};
    const auto a = sample_association_ensemble(sm, state, obs, 300, RngStream(17));
    const auto b = sample_association_ensemble(sm, state, obs, 300, RngStream(17));
    ASSERT_EQ(a.hypotheses.size(), b.hypotheses.size());
    for (std::size_t i = 0; i < a.hypotheses.size(); ++i) {
        EXPECT_EQ(a.hypotheses[i].symbols, b.hypotheses[i].symbols);
        EXPECT_DOUBLE_EQ(a.hypotheses[i].weight, b.hypotheses[i].weight);
    }
}

TEST(GaussianPhdFlow, MatchesAssociationEnumeration) {
    const auto spec = scalar_spec();
    const GaussianSubModel sm{spec};
    auto assoc_state = init_association<GaussianSubModel>(spec.birth, spec.birth_mass);
    GaussianMixturePair direct;
    direct.mass = spec.birth_mass;
    direct.weights = {1.0};
    direct.components = {spec.birth};

    RngStream rng(19);
    PruneConfig no_prune;
    no_prune.min_relative_weight = 0.0;
    for (int n = 0; n < 4; ++n) {
        EuclideanObservations obs;
        const int count = static_cast<int>(rng.next_u64() % 3);
        for (int i = 0; i < count; ++i) obs.points.push_back(obs1(2.0 * rng.normal()));
        obs.step = n;
        assoc_state = omega_step(sm, assoc_state, obs, no_prune).next;
        direct = gaussian_phd_flow_step(spec, direct, obs);
        EXPECT_NEAR(assoc_state.mass, direct.mass, 1e-8 * std::max(1.0, direct.mass));
        EXPECT_NEAR(mixture_mean(assoc_state)[0], mixture_mean(direct)[0], 1e-8);
        for (double z : {-1.0, 0.0, 1.4}) {
            const auto zz = obs1(z);
            const auto bump = Eigen::MatrixXd::Constant(1, 1, 0.7);
            EXPECT_NEAR(mixture_bump_integral(assoc_state, zz, bump),
                        mixture_bump_integral(direct, zz, bump), 1e-8);
        }
    }
}

TEST(MixedStep, MinimalSizesRunAndNormalize) {
    const auto spec = scalar_spec();
    auto state = init_mixed(spec, spec.birth_mass, 1, RngStream(23));
    EuclideanObservations obs;
    obs.points = {obs1(0.2)};
    const auto out = mixed_step(spec, state, obs, 1, RngStream(29));
    double total = 0.0;
    for (const auto& hyp : out.hypotheses) total += hyp.weight;
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_GT(out.mass, 0.0);
}

TEST(MixedStep, DegenerateInnerNoiseReducesToSampledAssociation) {
    // d = 0 makes the predictive weights observation-free, so the association
    // draws coincide with the closed-form sampled scheme stream for stream.
    auto spec = scalar_spec(0.8, 0.0, 0.0, 0.2);
    const GaussianSubModel sm{spec};
    auto closed = init_association<GaussianSubModel>(spec.birth, 1.0);
    auto mixed = init_mixed(spec, 1.0, 8, RngStream(31));
    EuclideanObservations obs;
    obs.points = {obs1(0.1)};
    const auto sampled = sample_association_ensemble(sm, closed, obs, 400, RngStream(37));
    const auto stepped = mixed_step(spec, mixed, obs, 400, RngStream(37));
    std::map<std::vector<int>, double> wa, wb;
    for (const auto& hyp : sampled.hypotheses) wa[hyp.symbols] += hyp.weight;
    for (const auto& hyp : stepped.hypotheses) wb[hyp.symbols] += hyp.weight;
    EXPECT_EQ(wa.size(), wb.size());
    for (const auto& [sym, weight] : wa) EXPECT_DOUBLE_EQ(weight, wb[sym]);
    EXPECT_DOUBLE_EQ(sampled.mass, stepped.mass);
}

TEST(MixedStep, ErrorDecaysInBothPopulationSizes) {
    const auto spec = scalar_spec();
    EuclideanObservations obs;
    obs.points = {obs1(0.6), obs1(-0.8)};

    const GaussianSubModel sm{spec};
    auto exact0 = init_association<GaussianSubModel>(spec.birth, spec.birth_mass);
    const auto exact = omega_step(sm, exact0, obs).next;
    const double exact_mean = mixture_mean(exact)[0];

    const int trials = 100;
    auto rmse_at = [&](int count, int inner) {
        double acc = 0.0;
        for (int t = 0; t < trials; ++t) {
            auto st = init_mixed(spec, spec.birth_mass, inner, RngStream(41).derive(count, inner, t));
            const auto out =
                mixed_step(spec, st, obs, count, RngStream(43).derive(count, inner, t));
            const double err = mixture_mean(out)[0] - exact_mean;
            acc += err * err;
        }
        return std::sqrt(acc / trials);
    };

    // Inner ensembles are shared across association draws, so each leg needs
    // the other population large enough to sit below the probed error range.
    {
        std::vector<double> ns = {50, 200, 800};
        std::vector<double> err = {rmse_at(50, 32000), rmse_at(200, 32000), rmse_at(800, 32000)};
        EXPECT_NEAR(analysis::fit_loglog_slope(ns, err), -0.5, 0.15);
    }
    {
        std::vector<double> ns = {25, 100, 400};
        std::vector<double> err = {rmse_at(20000, 25), rmse_at(20000, 100), rmse_at(20000, 400)};
        EXPECT_NEAR(analysis::fit_loglog_slope(ns, err), -0.5, 0.15);
    }
}

TEST(AssociationLipschitz, AlphaBoundOnRandomPerturbations) {
    // |alpha^(y)(B) - alpha^(y)(B')| <= (1/h^2) |[B - B'](phi_y)| with
    // phi_y(a) = eta^(a)(d g(., y)), for clutter bounded below.
    RngStream rng(617);
    for (int rep = 0; rep < 100; ++rep) {
        auto sub = rng.derive(rep);
        const auto spec = mt::random_phd_spec(sub, 3, 2, true);
        const FiniteSubModel sm(spec);
        const double h = spec.clutter[0];
        const double d = spec.detect[0];

        AssociationState<FiniteSubModel> a, b;
        a.mass = 0.5 + 2.0 * sub.uniform();
        b.mass = 0.5 + 2.0 * sub.uniform();
        const int atoms = 3;
        Eigen::VectorXd wa(atoms), wb(atoms);
        std::vector<DiscreteMeasure> states;
        for (int i = 0; i < atoms; ++i) {
            states.push_back(mt::random_probability(sub, 3));
            wa[i] = sub.uniform_pos();
            wb[i] = sub.uniform_pos();
        }
        wa /= wa.sum();
        wb /= wb.sum();
        for (int i = 0; i < atoms; ++i) {
            a.hypotheses.push_back({{}, wa[i], states[static_cast<std::size_t>(i)]});
            b.hypotheses.push_back({{}, wb[i], states[static_cast<std::size_t>(i)]});
        }
        const int y = static_cast<int>(sub.next_u64() % 2);
        auto phi = [&](const AssociationState<FiniteSubModel>& st) {
            double acc = 0.0;
            for (const auto& hyp : st.hypotheses)
                acc += hyp.weight * d * sm.sensor_integral(hyp.state, y);
            return st.mass * acc;
        };
        const double alpha_a = 1.0 / (h + phi(a));
        const double alpha_b = 1.0 / (h + phi(b));
        EXPECT_LE(std::abs(alpha_a - alpha_b), std::abs(phi(a) - phi(b)) / (h * h) + 1e-15);
    }
}
