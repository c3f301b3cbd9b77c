#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvflow/association.hpp"
#include "mvflow/benchmarks.hpp"
#include "mvflow/bernoulli.hpp"
#include "mvflow/config.hpp"
#include "mvflow/error_analysis.hpp"
#include "mvflow/flow.hpp"
#include "mvflow/io.hpp"
#include "mvflow/meanfield.hpp"
#include "mvflow/phd.hpp"
#include "mvflow/sim.hpp"
#include "mvflow/stability.hpp"
#include "mvflow/version.hpp"

namespace mvflow::harness {

struct Options {
    std::filesystem::path out_dir = ".";
    std::optional<std::uint64_t> seed_override;
    int threads = 1;
};

/// A fully resolved run: effective config (seed applied), model objects and
/// the shared run parameters. The config hash embedded in every output is
/// the hash of the effective config, so a snapshot re-run reproduces the
/// outputs byte for byte.
struct Resolved {
    config::Config effective;
    std::uint64_t hash = 0;
    std::uint64_t seed = 0;
    std::string kind;  // bernoulli | phd | gaussian-phd
    int horizon = 0;
    int obs_cap = std::numeric_limits<int>::max();

    std::optional<bernoulli::BernoulliSpec> bernoulli_spec;
    std::optional<phd::PhdSpec> phd_spec;
    std::optional<assoc::LinearGaussianPhdSpec> gaussian_spec;

    double mass0 = 1.0;
    DiscreteMeasure eta0;           // finite kinds
    Eigen::VectorXd window_lo, window_hi;  // gaussian scenario window
};

namespace detail {

inline bernoulli::BernoulliSpec bernoulli_from_config(const config::Config& cfg) {
    const std::string preset = cfg.get_string_or("model.preset", "");
    if (preset == "bernoulli-std") return benchmarks::standard_bernoulli_spec();
    if (preset == "bernoulli-mixing") return benchmarks::mixing_bernoulli_spec();
    if (preset == "bernoulli-identity") return benchmarks::identity_bernoulli_spec();
    if (!preset.empty()) throw validation_error("unknown bernoulli preset: " + preset);
    bernoulli::BernoulliSpec spec;
    const int k = static_cast<int>(cfg.get_int("model.states"));
    spec.survival = cfg.get_vector_expanded("model.survival", k);
    spec.detect = cfg.get_vector_expanded("model.detect", k);
    spec.local_like = cfg.get_matrix("model.local_like");
    spec.clutter = cfg.get_vector_expanded("model.clutter",
                                           static_cast<int>(spec.local_like.cols()));
    spec.birth = DiscreteMeasure(cfg.get_vector_expanded("model.birth", k));
    spec.motion = StochasticMatrix(cfg.get_matrix("model.motion"));
    spec.validate();
    return spec;
}

inline phd::PhdSpec phd_from_config(const config::Config& cfg) {
    const std::string preset = cfg.get_string_or("model.preset", "");
    if (preset == "phd-std") return benchmarks::standard_phd_spec();
    if (!preset.empty()) throw validation_error("unknown phd preset: " + preset);
    phd::PhdSpec spec;
    const int k = static_cast<int>(cfg.get_int("model.states"));
    spec.survival = cfg.get_vector_expanded("model.survival", k);
    spec.spawn_rate = cfg.get_vector_expanded("model.spawn_rate", k);
    spec.spawn_kernel = cfg.has("model.spawn_kernel")
                            ? StochasticMatrix(cfg.get_matrix("model.spawn_kernel"))
                            : StochasticMatrix(cfg.get_matrix("model.motion"));
    spec.detect = cfg.get_vector_expanded("model.detect", k);
    spec.sensor = cfg.get_matrix("model.sensor");
    spec.clutter = cfg.get_vector_expanded("model.clutter", static_cast<int>(spec.sensor.cols()));
    spec.birth = DiscreteMeasure(cfg.get_vector_expanded("model.birth", k));
    spec.base_motion = StochasticMatrix(cfg.get_matrix("model.motion"));
    spec.validate();
    return spec;
}

inline assoc::LinearGaussianPhdSpec gaussian_from_config(const config::Config& cfg) {
    assoc::LinearGaussianPhdSpec spec;
    spec.survival = cfg.get_double("model.survival");
    spec.spawn = cfg.get_double_or("model.spawn_rate", 0.0);
    spec.detect = cfg.get_double("model.detect");
    spec.clutter = cfg.get_double("model.clutter");
    spec.motion.transition = cfg.get_matrix("model.motion_f");
    spec.motion.noise = cfg.get_matrix("model.motion_q");
    spec.motion.shift = cfg.has("model.motion_shift")
                            ? cfg.get_vector("model.motion_shift")
                            : Eigen::VectorXd::Zero(spec.motion.transition.rows());
    spec.sensor.observation = cfg.get_matrix("model.sensor_h");
    spec.sensor.noise = cfg.get_matrix("model.sensor_r");
    spec.birth.mean = cfg.get_vector("model.birth_mean");
    spec.birth.cov = cfg.get_matrix("model.birth_cov");
    spec.birth_mass = cfg.get_double("model.birth_mass");
    spec.validate();
    return spec;
}

inline nlohmann::json json_number(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : "-inf";
}

}  // namespace detail

inline Resolved resolve(config::Config cfg, const Options& opts) {
    if (opts.seed_override) cfg.set("run.seed", std::to_string(*opts.seed_override));
    Resolved r;
    r.seed = cfg.get_u64_or("run.seed", 0);
    cfg.set("run.seed", std::to_string(r.seed));
    r.effective = cfg;
    r.hash = cfg.hash();
    r.kind = cfg.get_string("run.kind");
    r.horizon = static_cast<int>(cfg.get_int_or("run.horizon", 50));
    r.obs_cap = static_cast<int>(cfg.get_int_or("scenario.obs_cap",
                                                std::numeric_limits<int>::max()));

    if (r.kind == "bernoulli") {
        r.bernoulli_spec = detail::bernoulli_from_config(cfg);
        const int k = r.bernoulli_spec->num_states();
        r.eta0 = cfg.has("init.eta") ? DiscreteMeasure(cfg.get_vector_expanded("init.eta", k)).normalized()
                                     : DiscreteMeasure::uniform(k);
        r.mass0 = cfg.get_double_or("init.mass", r.bernoulli_spec->birth_mass());
    } else if (r.kind == "phd") {
        r.phd_spec = detail::phd_from_config(cfg);
        const int k = r.phd_spec->num_states();
        r.eta0 = cfg.has("init.eta") ? DiscreteMeasure(cfg.get_vector_expanded("init.eta", k)).normalized()
                                     : DiscreteMeasure::uniform(k);
        r.mass0 = cfg.get_double_or("init.mass", std::max(1.0, r.phd_spec->birth_mass()));
    } else if (r.kind == "gaussian-phd") {
        r.gaussian_spec = detail::gaussian_from_config(cfg);
        r.mass0 = cfg.get_double_or("init.mass", r.gaussian_spec->birth_mass);
        const int dy = static_cast<int>(r.gaussian_spec->sensor.observation.rows());
        r.window_lo = cfg.has("scenario.window_lo") ? cfg.get_vector("scenario.window_lo")
                                                    : Eigen::VectorXd::Constant(dy, -10.0);
        r.window_hi = cfg.has("scenario.window_hi") ? cfg.get_vector("scenario.window_hi")
                                                    : Eigen::VectorXd::Constant(dy, 10.0);
    } else {
        throw validation_error("run.kind must be bernoulli | phd | gaussian-phd");
    }
    return r;
}

namespace detail {

inline void write_snapshot(const Resolved& r, const Options& opts) {
    const std::string header = "# config_hash=" + std::to_string(r.hash) + "\n# seed=" +
                               std::to_string(r.seed) + "\n# mvflow_version=" + kVersion + "\n";
    io::write_file_atomic(opts.out_dir / "config.snapshot", header + r.effective.canonical());
}

template <class State, class Obs, class StateFmt, class ObsFmt>
void write_scenario(const sim::Scenario<State, Obs>& scenario, const Resolved& r,
                    const Options& opts, StateFmt&& state_cells, ObsFmt&& obs_cells,
                    const std::vector<std::string>& state_cols,
                    const std::vector<std::string>& obs_cols) {
    std::vector<std::string> truth_cols = {"step", "kind", "id", "detected"};
    truth_cols.insert(truth_cols.end(), state_cols.begin(), state_cols.end());
    io::CsvWriter truth(truth_cols, r.hash, r.seed, kVersion);
    for (std::size_t n = 0; n < scenario.truth.size(); ++n) {
        for (const auto& target : scenario.truth[n].targets) {
            std::vector<std::string> row = {std::to_string(n), "target", std::to_string(target.id),
                                            target.detected ? "1" : "0"};
            for (const auto& cell : state_cells(target.state)) row.push_back(cell);
            truth.add_row(row);
        }
        for (const auto& point : scenario.truth[n].clutter) {
            std::vector<std::string> row = {std::to_string(n), "clutter", "-1", "0"};
            for (const auto& cell : obs_cells(point)) row.push_back(cell);
            truth.add_row(row);
        }
    }
    truth.write(opts.out_dir / "truth.csv");

    std::vector<std::string> cols = {"step"};
    cols.insert(cols.end(), obs_cols.begin(), obs_cols.end());
    io::CsvWriter obs(cols, r.hash, r.seed, kVersion);
    for (std::size_t n = 0; n < scenario.observations.size(); ++n)
        for (const auto& point : scenario.observations[n].points) {
            std::vector<std::string> row = {std::to_string(n)};
            for (const auto& cell : obs_cells(point)) row.push_back(cell);
            obs.add_row(row);
        }
    obs.write(opts.out_dir / "obs.csv");
}

inline sim::FiniteScenario finite_scenario(const Resolved& r) {
    RngStream stream = RngStream(r.seed).derive(0x5ce);
    if (r.kind == "bernoulli")
        return sim::simulate_bernoulli(*r.bernoulli_spec, r.mass0, r.eta0, r.horizon, stream,
                                       r.obs_cap);
    return sim::simulate_phd(*r.phd_spec, r.mass0, r.eta0, r.horizon, stream, r.obs_cap);
}

inline sim::EuclideanScenario gaussian_scenario(const Resolved& r) {
    RngStream stream = RngStream(r.seed).derive(0x5ce);
    return sim::simulate_gaussian_phd(*r.gaussian_spec, r.mass0, r.horizon, r.window_lo,
                                      r.window_hi, stream, r.obs_cap);
}

inline std::vector<std::string> int_state_cells(const int& x) { return {std::to_string(x)}; }

inline std::vector<std::string> vec_cells(const Eigen::VectorXd& v) {
    std::vector<std::string> out;
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(io::format_double(v[i]));
    return out;
}

}  // namespace detail

/// `simulate`: generate ground truth and observations for the configured
/// model; writes truth.csv, obs.csv and config.snapshot.
inline void cmd_simulate(const config::Config& cfg, const Options& opts) {
    const Resolved r = resolve(cfg, opts);
    detail::write_snapshot(r, opts);
    if (r.kind == "gaussian-phd") {
        const auto scenario = detail::gaussian_scenario(r);
        const int dy = static_cast<int>(r.gaussian_spec->sensor.observation.rows());
        const int dx = static_cast<int>(r.gaussian_spec->motion.transition.rows());
        std::vector<std::string> state_cols, obs_cols;
        for (int i = 0; i < dx; ++i) state_cols.push_back("x" + std::to_string(i));
        for (int i = 0; i < dy; ++i) obs_cols.push_back("y" + std::to_string(i));
        detail::write_scenario(scenario, r, opts, detail::vec_cells, detail::vec_cells, state_cols,
                               obs_cols);
    } else {
        const auto scenario = detail::finite_scenario(r);
        detail::write_scenario(scenario, r, opts, detail::int_state_cells, detail::int_state_cells,
                               {"x0"}, {"y0"});
    }
}

/// `run-filter`: run the configured algorithm on the scenario generated from
/// the same config and seed; writes filter.csv (one row per trial and step)
/// plus hypotheses.json for the association algorithms.
inline void cmd_run_filter(const config::Config& cfg, const Options& opts) {
    const Resolved r = resolve(cfg, opts);
    const std::string algorithm = cfg.get_string_or("run.algorithm", "exact");
    detail::write_snapshot(r, opts);

    if (r.kind == "gaussian-phd") {
        const auto scenario = detail::gaussian_scenario(r);
        const auto& spec = *r.gaussian_spec;
        const int dx = static_cast<int>(spec.motion.transition.rows());
        std::vector<std::string> cols = {"trial", "step", "mass"};
        for (int i = 0; i < dx; ++i) cols.push_back("mean" + std::to_string(i));
        io::CsvWriter csv(cols, r.hash, r.seed, kVersion);
        nlohmann::json dumps = nlohmann::json::array();
        const int top_k = static_cast<int>(cfg.get_int_or("run.dump_top_hypotheses", 10));

        auto dump_state = [&](const assoc::AssociationState<assoc::GaussianSubModel>& state) {
            auto hyps = state.hypotheses;
            std::sort(hyps.begin(), hyps.end(),
                      [](const auto& a, const auto& b) { return a.weight > b.weight; });
            nlohmann::json step_dump;
            step_dump["step"] = state.step;
            step_dump["mass"] = state.mass;
            auto list = nlohmann::json::array();
            for (int i = 0; i < std::min<int>(top_k, static_cast<int>(hyps.size())); ++i) {
                nlohmann::json h;
                h["weight"] = hyps[static_cast<std::size_t>(i)].weight;
                h["symbols"] = hyps[static_cast<std::size_t>(i)].symbols;
                h["mean"] = std::vector<double>(
                    hyps[static_cast<std::size_t>(i)].state.mean.data(),
                    hyps[static_cast<std::size_t>(i)].state.mean.data() + dx);
                std::vector<double> cov;
                for (int a = 0; a < dx; ++a)
                    for (int b = 0; b < dx; ++b)
                        cov.push_back(hyps[static_cast<std::size_t>(i)].state.cov(a, b));
                h["cov"] = cov;
                list.push_back(h);
            }
            step_dump["hypotheses"] = list;
            dumps.push_back(step_dump);
        };

        if (algorithm == "association") {
            const int count = static_cast<int>(cfg.get_int_or("run.particles", 0));
            assoc::GaussianSubModel sm{spec};
            auto state = assoc::init_association<assoc::GaussianSubModel>(spec.birth, r.mass0);
            assoc::PruneConfig prune;
            prune.max_hypotheses =
                static_cast<std::size_t>(cfg.get_int_or("run.max_hypotheses", 100000));
            prune.min_relative_weight = cfg.get_double_or("run.prune_threshold", 1e-12);
            for (int n = 0; n < r.horizon; ++n) {
                const auto& obs = scenario.observations[static_cast<std::size_t>(n)];
                if (count > 0)
                    state = assoc::sample_association_ensemble(sm, state, obs, count,
                                                               RngStream(r.seed).derive(0xa550c));
                else
                    state = assoc::omega_step(sm, state, obs, prune).next;
                const auto mean = assoc::mixture_mean(state);
                std::vector<std::string> row = {"0", std::to_string(n + 1),
                                                io::format_double(state.mass)};
                for (int i = 0; i < dx; ++i) row.push_back(io::format_double(mean[i]));
                csv.add_row(row);
                dump_state(state);
            }
        } else if (algorithm == "mixed") {
            const int count = static_cast<int>(cfg.get_int_or("run.particles", 1000));
            const int inner = static_cast<int>(cfg.get_int_or("run.inner_particles", 100));
            auto state = assoc::init_mixed(spec, r.mass0, inner, RngStream(r.seed).derive(0x310));
            for (int n = 0; n < r.horizon; ++n) {
                state = assoc::mixed_step(spec, state,
                                          scenario.observations[static_cast<std::size_t>(n)], count,
                                          RngStream(r.seed).derive(0x311, n));
                const auto mean = assoc::mixture_mean(state);
                std::vector<std::string> row = {"0", std::to_string(n + 1),
                                                io::format_double(state.mass)};
                for (int i = 0; i < dx; ++i) row.push_back(io::format_double(mean[i]));
                csv.add_row(row);
            }
        } else {
            throw validation_error("gaussian-phd supports algorithm = association | mixed");
        }
        csv.write(opts.out_dir / "filter.csv");
        io::write_file_atomic(opts.out_dir / "hypotheses.json", dumps.dump(2) + "\n");
        return;
    }

    // Finite kinds.
    const auto scenario = detail::finite_scenario(r);
    const int k = r.kind == "bernoulli" ? r.bernoulli_spec->num_states() : r.phd_spec->num_states();
    std::vector<std::string> cols = {"trial", "step", "mass"};
    for (int i = 0; i < k; ++i) cols.push_back("eta" + std::to_string(i));
    io::CsvWriter csv(cols, r.hash, r.seed, kVersion);

    auto add_row = [&](int trial, int step, double mass, const Eigen::VectorXd& eta) {
        std::vector<std::string> row = {std::to_string(trial), std::to_string(step),
                                        io::format_double(mass)};
        for (int i = 0; i < k; ++i) row.push_back(io::format_double(eta[i]));
        csv.add_row(row);
    };

    auto run_finite = [&](const auto& model) {
        if (algorithm == "exact") {
            const auto traj = flow::exact_reference_flow(model, r.horizon, {r.mass0, r.eta0, 0});
            for (int n = 0; n <= r.horizon; ++n)
                add_row(0, n, traj[static_cast<std::size_t>(n)].mass,
                        traj[static_cast<std::size_t>(n)].eta.weights());
        } else if (algorithm == "meanfield") {
            const int count = static_cast<int>(cfg.get_int_or("run.particles", 1000));
            const int trials = static_cast<int>(cfg.get_int_or("run.trials", 1));
            std::vector<std::vector<std::pair<double, Eigen::VectorXd>>> results(
                static_cast<std::size_t>(trials));
            parallel_for(trials, opts.threads, [&](int t) {
                auto traj = meanfield::mf_trajectory(r.eta0, r.mass0, count,
                                                     RngStream(r.seed).derive(0x3f, t), model,
                                                     r.horizon);
                auto& rows = results[static_cast<std::size_t>(t)];
                for (const auto& ens : traj)
                    rows.emplace_back(ens.mass,
                                      meanfield::empirical_measure(ens, k).weights());
            });
            for (int t = 0; t < trials; ++t)
                for (std::size_t n = 0; n < results[static_cast<std::size_t>(t)].size(); ++n)
                    add_row(t, static_cast<int>(n), results[static_cast<std::size_t>(t)][n].first,
                            results[static_cast<std::size_t>(t)][n].second);
        } else {
            throw validation_error("algorithm '" + algorithm +
                                   "' is not available for this model kind");
        }
    };

    if (r.kind == "bernoulli") {
        run_finite(bernoulli::BernoulliFlowModel(*r.bernoulli_spec, scenario.observations));
    } else if (algorithm == "association") {
        // Exact or sampled association recursion over the finite sub-model.
        assoc::FiniteSubModel sm(*r.phd_spec);
        auto state = assoc::init_association<assoc::FiniteSubModel>(r.eta0, r.mass0);
        const int count = static_cast<int>(cfg.get_int_or("run.particles", 0));
        assoc::PruneConfig prune;
        prune.max_hypotheses = static_cast<std::size_t>(cfg.get_int_or("run.max_hypotheses", 100000));
        prune.min_relative_weight = cfg.get_double_or("run.prune_threshold", 1e-12);
        for (int n = 0; n < r.horizon; ++n) {
            const auto& obs = scenario.observations[static_cast<std::size_t>(n)];
            if (count > 0)
                state = assoc::sample_association_ensemble(sm, state, obs, count,
                                                           RngStream(r.seed).derive(0xa550c));
            else
                state = assoc::omega_step(sm, state, obs, prune).next;
            add_row(0, n + 1, state.mass, assoc::reconstruct_measure(state, k).weights());
        }
    } else {
        run_finite(phd::PhdFlowModel(*r.phd_spec, scenario.observations));
    }
    csv.write(opts.out_dir / "filter.csv");
}

/// `convergence-study`: Monte Carlo error sweep against the exact reference;
/// writes errors.csv (one row per N, trial, step and statistic) and
/// errors_summary.json with the fitted slopes.
inline void cmd_convergence_study(const config::Config& cfg, const Options& opts) {
    const Resolved r = resolve(cfg, opts);
    if (r.kind == "gaussian-phd")
        throw validation_error("convergence-study needs a finite model (exact oracle)");
    detail::write_snapshot(r, opts);
    const auto scenario = detail::finite_scenario(r);

    std::vector<int> counts;
    if (cfg.has("study.particle_counts")) {
        const Eigen::VectorXd v = cfg.get_vector("study.particle_counts");
        for (Eigen::Index i = 0; i < v.size(); ++i) counts.push_back(static_cast<int>(v[i]));
    } else {
        counts = {100, 1000, 10000};
    }
    const int trials = static_cast<int>(cfg.get_int_or("study.trials", 1000));

    analysis::ErrorReport report;
    std::string model_name;
    if (r.kind == "bernoulli") {
        bernoulli::BernoulliFlowModel model(*r.bernoulli_spec, scenario.observations);
        report = analysis::run_trials(model, r.eta0, r.mass0, counts, trials, r.horizon, r.seed,
                                      Eigen::VectorXd::Unit(model.num_states(), 0), opts.threads,
                                      {}, /*keep_raw=*/true);
        model_name = "bernoulli";
    } else {
        phd::PhdFlowModel model(*r.phd_spec, scenario.observations);
        report = analysis::run_trials(model, r.eta0, r.mass0, counts, trials, r.horizon, r.seed,
                                      Eigen::VectorXd::Unit(model.num_states(), 0), opts.threads,
                                      {}, /*keep_raw=*/true);
        model_name = "phd";
    }

    io::CsvWriter csv({"algorithm", "model", "N", "trial", "n", "statistic", "value"}, r.hash,
                      r.seed, kVersion);
    for (std::size_t ni = 0; ni < counts.size(); ++ni) {
        for (int t = 0; t < trials; ++t)
            for (int n = 0; n <= r.horizon; ++n) {
                const auto add = [&](const char* stat, double value) {
                    csv.add_row({"meanfield", model_name, std::to_string(counts[ni]),
                                 std::to_string(t), std::to_string(n), stat,
                                 io::format_double(value)});
                };
                add("abs_err_mass", report.raw_mass[ni][static_cast<std::size_t>(t)]
                                                  [static_cast<std::size_t>(n)]);
                add("abs_err_eta", report.raw_eta[ni][static_cast<std::size_t>(t)]
                                                 [static_cast<std::size_t>(n)]);
            }
        for (int n = 0; n <= r.horizon; ++n) {
            const auto& cell = report.at(static_cast<int>(ni), n);
            const auto add = [&](const char* stat, double value) {
                csv.add_row({"meanfield", model_name, std::to_string(counts[ni]), "-1",
                             std::to_string(n), stat, io::format_double(value)});
            };
            add("mass_l1", cell.mass_l1);
            add("mass_l2", cell.mass_l2);
            add("mass_l4", cell.mass_l4);
            add("eta_l1", cell.eta_l1);
            add("eta_l2", cell.eta_l2);
            add("eta_l4", cell.eta_l4);
        }
    }
    csv.write(opts.out_dir / "errors.csv");

    nlohmann::json summary;
    summary["config_hash"] = r.hash;
    summary["seed"] = r.seed;
    summary["mvflow_version"] = kVersion;
    summary["model"] = model_name;
    summary["particle_counts"] = counts;
    summary["trials"] = trials;
    summary["slope_mass_rmse"] = detail::json_number(report.slope_mass);
    summary["slope_eta_rmse"] = detail::json_number(report.slope_eta);
    auto concentration = nlohmann::json::array();
    const double eps_ref = cfg.get_double_or("study.concentration_eps", 0.1);
    for (int count : counts) {
        const auto bound = analysis::concentration_radius(1.0, count, eps_ref);
        concentration.push_back({{"N", count},
                                 {"radius", bound.radius},
                                 {"eps", eps_ref},
                                 {"exceedance_bound", bound.probability}});
    }
    summary["concentration"] = concentration;
    io::write_file_atomic(opts.out_dir / "errors_summary.json", summary.dump(2) + "\n");
}

/// `stability-report`: computes the contraction constants of the configured
/// model from certified bounds, checks the composition admissibility, and
/// compares the composed rate against the empirically fitted decay.
inline void cmd_stability_report(const config::Config& cfg, const Options& opts) {
    const Resolved r = resolve(cfg, opts);
    detail::write_snapshot(r, opts);
    nlohmann::json out;
    out["config_hash"] = r.hash;
    out["seed"] = r.seed;
    out["mvflow_version"] = kVersion;
    out["kind"] = r.kind;

    if (r.kind == "bernoulli") {
        const auto& spec = *r.bernoulli_spec;
        const auto scenario = detail::finite_scenario(r);
        const int m = static_cast<int>(cfg.get_int_or("stability.mixing_window", 1));
        const auto eps =
            stability::check_mixing(std::vector<StochasticMatrix>(static_cast<std::size_t>(m), spec.motion), m);
        const int obs_cap = r.obs_cap == std::numeric_limits<int>::max()
                                ? 4
                                : r.obs_cap;
        const auto [g_lo, g_hi] = benchmarks::bernoulli_likelihood_envelope(spec, obs_cap);
        out["inputs"] = {{"s_lo", spec.survival.minCoeff()},
                         {"s_hi", spec.survival.maxCoeff()},
                         {"mu1", spec.birth_mass()},
                         {"g_lo", g_lo},
                         {"g_hi", g_hi},
                         {"mixing_window", m},
                         {"eps_m", eps.front()},
                         {"obs_cap", obs_cap}};
        try {
            const auto p = stability::bernoulli_contraction_constants(
                spec.survival.minCoeff(), spec.survival.maxCoeff(), spec.birth_mass(), g_lo, g_hi,
                m, eps.front());
            out["constants"] = {{"c1", detail::json_number(p.c1)},
                                {"lambda1", detail::json_number(p.lambda1)},
                                {"c2", detail::json_number(p.c2)},
                                {"lambda2", detail::json_number(p.lambda2)},
                                {"tau1", detail::json_number(p.tau1)},
                                {"tau2", detail::json_number(p.tau2)},
                                {"eps", detail::json_number(p.eps)},
                                {"eps_eff", detail::json_number(p.eps_eff)},
                                {"rho_m", detail::json_number(p.rho_m)},
                                {"delta_g", detail::json_number(p.delta_g)},
                                {"delta_g_prime", detail::json_number(p.delta_g_prime)},
                                {"delta_sg", detail::json_number(p.delta_sg)}};
            const auto rates = stability::compose_rates(p.c1, p.lambda1, p.c2, p.lambda2, p.tau1,
                                                        p.tau2);
            out["admissible"] = true;
            out["composed"] = {{"lambda", detail::json_number(rates.lambda)},
                               {"c11", detail::json_number(rates.c11)},
                               {"c12", detail::json_number(rates.c12)},
                               {"c21", detail::json_number(rates.c21)},
                               {"c22", detail::json_number(rates.c22)}};
        } catch (const parameter_error& err) {
            out["admissible"] = false;
            out["admissibility_failure"] = err.what();
        }

        const bernoulli::BernoulliFlowModel model(spec, scenario.observations);
        const flow::MassMeasurePair a{r.mass0, DiscreteMeasure::dirac(spec.num_states(), 0), 0};
        const flow::MassMeasurePair b{std::min(0.95, r.mass0 + 0.3),
                                      DiscreteMeasure::dirac(spec.num_states(), spec.num_states() - 1),
                                      0};
        const auto decay = stability::empirical_decay_rate(model, a, b, r.horizon);
        out["empirical"] = {{"tv_degenerate", decay.tv.degenerate},
                            {"lambda_hat_tv", detail::json_number(decay.tv.lambda_hat)},
                            {"mass_degenerate", decay.mass.degenerate},
                            {"lambda_hat_mass", detail::json_number(decay.mass.lambda_hat)}};
    } else if (r.kind == "phd") {
        const auto& spec = *r.phd_spec;
        const auto scenario = detail::finite_scenario(r);
        const int y_cap = r.obs_cap == std::numeric_limits<int>::max() ? 4 : r.obs_cap;
        const auto [m_lo, m_hi] = phd::mass_bounds(spec, r.mass0, {}, y_cap);
        const double beta = stability::dobrushin_beta(StochasticMatrix(spec.merged_motion()));
        out["inputs"] = {{"m_lo", m_lo}, {"m_hi", m_hi}, {"beta_merged", beta}, {"obs_cap", y_cap}};
        const auto c = stability::phd_step_constants(spec, m_lo, m_hi, beta,
                                                        scenario.observations);
        double a1 = 0, a2 = 0, t1 = 0, t2 = 0;
        for (std::size_t i = 0; i < c.a1.size(); ++i) {
            a1 = std::max(a1, c.a1[i]);
            a2 = std::max(a2, c.a2[i]);
            t1 = std::max(t1, c.tau1[i]);
            t2 = std::max(t2, c.tau2[i]);
        }
        out["constants"] = {{"a1_step_max", detail::json_number(a1)},
                            {"a2_step_max", detail::json_number(a2)},
                            {"tau1_step_max", detail::json_number(t1)},
                            {"tau2_step_max", detail::json_number(t2)}};
        try {
            const auto p = stability::phd_geometric_constants(spec, r.mass0, y_cap, beta);
            const auto rates =
                stability::compose_rates(p.c1, p.lambda1, p.c2, p.lambda2, p.tau1, p.tau2);
            out["admissible"] = true;
            out["composed"] = {{"lambda", detail::json_number(rates.lambda)},
                               {"c11", detail::json_number(rates.c11)},
                               {"c12", detail::json_number(rates.c12)},
                               {"c21", detail::json_number(rates.c21)},
                               {"c22", detail::json_number(rates.c22)}};
        } catch (const parameter_error& err) {
            out["admissible"] = false;
            out["admissibility_failure"] = err.what();
        }
        const phd::PhdFlowModel model(spec, scenario.observations);
        const flow::MassMeasurePair a{std::max(m_lo, r.mass0), DiscreteMeasure::dirac(spec.num_states(), 0), 0};
        const flow::MassMeasurePair b{std::max(m_lo, r.mass0) + 0.5,
                                      DiscreteMeasure::dirac(spec.num_states(), spec.num_states() - 1), 0};
        const auto decay = stability::empirical_decay_rate(model, a, b, r.horizon);
        out["empirical"] = {{"tv_degenerate", decay.tv.degenerate},
                            {"lambda_hat_tv", detail::json_number(decay.tv.lambda_hat)},
                            {"mass_degenerate", decay.mass.degenerate},
                            {"lambda_hat_mass", detail::json_number(decay.mass.lambda_hat)}};
    } else {
        throw validation_error("stability-report needs kind = bernoulli | phd");
    }
    io::write_file_atomic(opts.out_dir / "stability.json", out.dump(2) + "\n");
}

/// `compare-exact`: one mean-field run against the exact oracle; writes
/// filter.csv with the per-step mass gap and total variation to the oracle.
inline void cmd_compare_exact(const config::Config& cfg, const Options& opts) {
    const Resolved r = resolve(cfg, opts);
    if (r.kind == "gaussian-phd") throw validation_error("compare-exact needs a finite model");
    detail::write_snapshot(r, opts);
    const auto scenario = detail::finite_scenario(r);
    const int count = static_cast<int>(cfg.get_int_or("run.particles", 1000));

    auto run = [&](const auto& model) {
        const int k = model.num_states();
        const auto exact = flow::exact_reference_flow(model, r.horizon, {r.mass0, r.eta0, 0});
        auto traj = meanfield::mf_trajectory(r.eta0, r.mass0, count,
                                             RngStream(r.seed).derive(0x3f, 0), model, r.horizon);
        std::vector<std::string> cols = {"trial", "step", "mass", "mass_exact", "mass_gap",
                                         "tv_to_oracle"};
        io::CsvWriter csv(cols, r.hash, r.seed, kVersion);
        for (int n = 0; n <= r.horizon; ++n) {
            const auto& ens = traj[static_cast<std::size_t>(n)];
            const auto emp = meanfield::empirical_measure(ens, k);
            csv.add_row({"0", std::to_string(n), io::format_double(ens.mass),
                         io::format_double(exact[static_cast<std::size_t>(n)].mass),
                         io::format_double(std::abs(ens.mass - exact[static_cast<std::size_t>(n)].mass)),
                         io::format_double(total_variation(emp, exact[static_cast<std::size_t>(n)].eta))});
        }
        csv.write(opts.out_dir / "filter.csv");
    };
    if (r.kind == "bernoulli")
        run(bernoulli::BernoulliFlowModel(*r.bernoulli_spec, scenario.observations));
    else
        run(phd::PhdFlowModel(*r.phd_spec, scenario.observations));
}

}  // namespace mvflow::harness
