#pragma once

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pathsamp/config.hpp"
#include "pathsamp/drift.hpp"
#include "pathsamp/eot.hpp"
#include "pathsamp/eulerian.hpp"
#include "pathsamp/functionals.hpp"
#include "pathsamp/ips.hpp"
#include "pathsamp/jko.hpp"
#include "pathsamp/oracles.hpp"
#include "pathsamp/sde.hpp"
#include "pathsamp/spde.hpp"
#include "pathsamp/transport.hpp"
#include "pathsamp/transport_krr.hpp"

#ifndef PATHSAMP_VERSION
#define PATHSAMP_VERSION "0.1.0"
#endif

namespace pathsamp::cli {

namespace fs = std::filesystem;

inline const std::vector<std::string>& commands() {
    static const std::vector<std::string> c = {"simulate", "transport-nn", "transport-krr", "spde", "jko",
                                               "ips",      "eulerian",     "eot",           "oracle", "compare"};
    return c;
}

inline std::string version_string() { return std::string("pathsamp ") + PATHSAMP_VERSION; }

// ---------------------------------------------------------------- model setup

inline PotentialPtr make_potential(const RunConfig& cfg) {
    const std::string& kind = cfg.str("prior.drift");
    if (kind == "zero") return std::make_shared<FlatPotential>();
    if (kind == "ou") return std::make_shared<QuadraticPotential>(cfg.positive("prior.beta"));
    if (kind == "doublewell") return std::make_shared<DoubleWellPotential>(cfg.positive("prior.height"));
    if (kind == "separable_doublewell") return std::make_shared<SeparableDoubleWellPotential>(cfg.positive("prior.height"));
    throw ConfigError("prior.drift: unknown kind '" + kind + "'");
}

inline DriftPtr make_drift(const RunConfig& cfg) {
    const std::string& kind = cfg.str("prior.drift");
    if (kind == "zero") return std::make_shared<ZeroDrift>();
    if (kind == "ou") return std::make_shared<OUDrift>(cfg.positive("prior.beta"));
    return std::make_shared<GradientDrift>(make_potential(cfg));
}

inline InitialSampler make_initial(const RunConfig& cfg) {
    const Vec x0 = cfg.vec("prior.x0");
    const double sd = cfg.num("prior.init_std");
    if (sd < 0.0) throw ConfigError("prior.init_std must be nonnegative");
    return sd > 0.0 ? gaussian_initial(x0, sd) : point_initial(x0);
}

/// Initial particle cloud (d x n), particle k drawn from stream k.
inline Mat initial_cloud(const RunConfig& cfg, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("particle count must be positive");
    const InitialSampler s = make_initial(cfg);
    const Eigen::Index d = cfg.vec("prior.x0").size();
    Mat X(d, static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) X.col(static_cast<Eigen::Index>(k)) = s(path_rng(seed, k));
    return X;
}

inline bool linear_gaussian(const RunConfig& cfg) {
    const std::string& kind = cfg.str("prior.drift");
    return kind == "zero" || kind == "ou";
}

/// Exact per-node marginals (d x nodes) for linear-Gaussian priors; the
/// initial law is kept as in the prior, as every sampler here does.
inline std::optional<std::pair<Mat, Mat>> oracle_moments(const RunConfig& cfg, const TimeGrid& grid, bool posterior) {
    if (!linear_gaussian(cfg)) return std::nullopt;
    const Vec x0 = cfg.vec("prior.x0");
    const double sd = cfg.num("prior.init_std");
    const double beta = cfg.str("prior.drift") == "ou" ? cfg.positive("prior.beta") : 0.0;
    const ObservationSet obs = posterior ? cfg.observations(grid) : ObservationSet(grid, {}, 1.0);
    const auto n = static_cast<Eigen::Index>(grid.n_nodes());
    Mat M(x0.size(), n), V(x0.size(), n);
    for (Eigen::Index c = 0; c < x0.size(); ++c) {
        const auto post = lg_smoother_fixed_initial({beta, x0(c), sd * sd}, obs, grid, c);
        M.row(c) = post.mean.transpose();
        V.row(c) = post.var.transpose();
    }
    return std::make_pair(M, V);
}

// ---------------------------------------------------------------- artifacts

struct Track {
    std::vector<double> times;
    std::vector<Mat> clouds;  // d x n per time, particle identity preserved
    Vec weights;              // empty: equal weights
};

inline Track track_from(const Ensemble& ens) {
    Track t;
    for (std::size_t j = 0; j < ens.grid.n_nodes(); ++j) {
        t.times.push_back(ens.grid.time(j));
        t.clouds.push_back(ens.slice(j));
    }
    return t;
}

inline Track track_from(const std::vector<double>& times, const std::vector<Mat>& clouds) { return {times, clouds, Vec()}; }

inline Vec normalized_weights(const Track& t) {
    const Eigen::Index n = t.clouds.front().cols();
    if (t.weights.size() == 0) return Vec::Constant(n, 1.0 / static_cast<double>(n));
    return t.weights / t.weights.sum();
}

inline double effective_sample_size(const Vec& w) { return w.sum() * w.sum() / w.squaredNorm(); }

/// Weighted per-time means and variances (unbiased for equal weights).
inline std::pair<Mat, Mat> track_moments(const Track& t) {
    const Vec w = normalized_weights(t);
    const Eigen::Index d = t.clouds.front().rows(), T = static_cast<Eigen::Index>(t.clouds.size());
    Mat M(d, T), V(d, T);
    const double ess_corr = 1.0 - w.squaredNorm();
    for (Eigen::Index j = 0; j < T; ++j) {
        const Mat& X = t.clouds[static_cast<std::size_t>(j)];
        M.col(j) = X * w;
        const Mat C = X.colwise() - M.col(j);
        V.col(j) = C.array().square().matrix() * w / std::max(ess_corr, 1e-300);
    }
    return {M, V};
}

inline void write_samples(const fs::path& file, const Track& t) {
    std::ofstream os(file);
    if (!os) throw ConfigError("cannot write " + file.string());
    const Eigen::Index d = t.clouds.front().rows();
    os << "path_id,t";
    for (Eigen::Index c = 0; c < d; ++c) os << ",x_" << c;
    os << '\n';
    const Eigen::Index n = t.clouds.front().cols();
    for (Eigen::Index k = 0; k < n; ++k)
        for (std::size_t j = 0; j < t.times.size(); ++j) {
            os << k << ',' << format_double(t.times[j]);
            for (Eigen::Index c = 0; c < d; ++c) os << ',' << format_double(t.clouds[j](c, k));
            os << '\n';
        }
}

inline void write_moments(const fs::path& file, const std::vector<double>& times, const Mat& M, const Mat& V) {
    std::ofstream os(file);
    if (!os) throw ConfigError("cannot write " + file.string());
    os << "t";
    for (Eigen::Index c = 0; c < M.rows(); ++c) os << ",mean_" << c;
    for (Eigen::Index c = 0; c < M.rows(); ++c) os << ",var_" << c;
    os << '\n';
    for (std::size_t j = 0; j < times.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        os << format_double(times[j]);
        for (Eigen::Index c = 0; c < M.rows(); ++c) os << ',' << format_double(M(c, jj));
        for (Eigen::Index c = 0; c < M.rows(); ++c) os << ',' << format_double(V(c, jj));
        os << '\n';
    }
}

inline void write_json(const fs::path& file, const nlohmann::json& j) {
    std::ofstream os(file);
    if (!os) throw ConfigError("cannot write " + file.string());
    os << j.dump(2) << '\n';
}

/// Writes samples.csv and moments.csv, and returns oracle deltas where a
/// closed-form oracle exists for the scenario.
inline nlohmann::json emit_track(const fs::path& dir, const Track& t, const RunConfig& cfg, const TimeGrid& oracle_grid) {
    write_samples(dir / "samples.csv", t);
    const auto [M, V] = track_moments(t);
    write_moments(dir / "moments.csv", t.times, M, V);
    nlohmann::json m;
    m["n_samples"] = t.clouds.front().cols();
    if (t.weights.size()) m["ess"] = effective_sample_size(t.weights);
    const auto oracle = oracle_moments(cfg, oracle_grid, true);
    if (!oracle) return m;
    double worst_mean = 0.0, worst_var = 0.0;
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t j = 0; j < t.times.size(); ++j) {
        const auto node = static_cast<Eigen::Index>(oracle_grid.snap(t.times[j]));
        const auto jj = static_cast<Eigen::Index>(j);
        for (Eigen::Index c = 0; c < M.rows(); ++c) {
            const double dm = M(c, jj) - oracle->first(c, node);
            const double ov = oracle->second(c, node);
            const double dv = ov > 0.0 ? (V(c, jj) - ov) / ov : 0.0;
            worst_mean = std::max(worst_mean, std::abs(dm));
            if (ov > 0.0) worst_var = std::max(worst_var, std::abs(dv));
            nodes.push_back({{"t", t.times[j]}, {"component", c}, {"mean_delta", dm}, {"var_rel_delta", dv}});
        }
    }
    m["oracle"] = {{"max_abs_mean_delta", worst_mean}, {"max_rel_var_delta", worst_var}, {"nodes", nodes}};
    return m;
}

// ---------------------------------------------------------------- commands

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline nlohmann::json cmd_simulate(const RunConfig& cfg, const fs::path& dir) {
    const TimeGrid grid = cfg.grid();
    const Ensemble ens = simulate_sde(*make_drift(cfg), make_initial(cfg), grid, cfg.count("simulate.n_paths"), cfg.seed());
    const Track t = track_from(ens);
    write_samples(dir / "samples.csv", t);
    const auto [M, V] = track_moments(t);
    write_moments(dir / "moments.csv", t.times, M, V);
    nlohmann::json m{{"n_samples", ens.size()}};
    if (const auto o = oracle_moments(cfg, grid, false)) {
        m["prior_oracle"] = {{"max_abs_mean_delta", (M - o->first).cwiseAbs().maxCoeff()},
                             {"max_abs_var_delta", (V - o->second).cwiseAbs().maxCoeff()}};
    }
    return m;
}

inline nlohmann::json cmd_transport(const RunConfig& cfg, const fs::path& dir, bool krr) {
    const TimeGrid grid = cfg.grid();
    const ObservationSet obs = cfg.observations(grid);
    if (obs.empty()) throw ConfigError("transport: obs.points is empty");
    TransportConfig tc;
    tc.ds = cfg.positive("transport.ds");
    tc.n_paths = cfg.count("transport.n_paths");
    tc.train_iters = cfg.count("transport.train_iters");
    tc.learning_rate = cfg.positive("transport.learning_rate");
    tc.hidden = cfg.ints("transport.hidden");
    tc.init_out_scale = cfg.num("transport.init_out_scale");
    tc.n_steps();
    if (tc.n_paths < 2) throw ConfigError("transport.n_paths must be at least 2");
    TransportProblem prob{make_drift(cfg), make_initial(cfg), grid, [obs](const Path& p) { return likelihood_J(p, obs); }};
    IncrementLearner learner;
    if (krr) {
        KernelSpec ks;
        ks.ridge_per_path = cfg.positive("krr.ridge_per_path");
        ks.bandwidth = cfg.num("krr.bandwidth");
        const std::string& c = cfg.str("krr.coupling");
        if (c == "joint") ks.coupling = KrrCoupling::Joint;
        else if (c == "per_node") ks.coupling = KrrCoupling::PerNode;
        else throw ConfigError("krr.coupling must be joint or per_node");
        learner = krr_learner(ks);
    } else {
        learner = mlp_learner(tc);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = run_transport(tc, prob, learner, cfg.seed());
    const double secs = seconds_since(t0);
    {
        std::ofstream os(dir / "anneal.csv");
        os << "s,mean_J,loss_initial,loss_final,A\n";
        for (const auto& h : res.state.history)
            os << format_double(h.s) << ',' << format_double(h.mean_J) << ',' << format_double(h.loss_initial) << ','
               << format_double(h.loss_final) << ',' << format_double(h.A) << '\n';
    }
    const Ensemble ens = simulate_sde(*res.state.drift, prob.initial, grid, cfg.count("transport.output_paths"),
                                      step_seed(cfg.seed(), 0xFFFFull));
    nlohmann::json m = emit_track(dir, track_from(ens), cfg, grid);
    m["log_z"] = res.log_z();
    m["train_seconds"] = secs;
    const auto& e = obs.entries();
    if (cfg.str("prior.drift") == "zero" && cfg.num("prior.init_std") == 0.0 && e.size() == 1 && e[0].value.size() == 1 &&
        e[0].node == grid.n_steps())
        m["log_z_exact"] = soft_pin_log_z_ratio(cfg.vec("prior.x0")(0), e[0].value(0), e[0].sigma, grid.horizon());
    return m;
}

inline nlohmann::json cmd_spde(const RunConfig& cfg, const fs::path& dir) {
    const TimeGrid grid = cfg.grid();
    const Vec A = cfg.vec("spde.start"), B = cfg.vec("spde.end");
    const auto tgt = std::make_shared<TpsTarget>(make_potential(cfg), A, B, grid);
    JarzynskiConfig jc;
    jc.ds = cfg.positive("spde.ds");
    jc.n_walkers = cfg.count("spde.walkers");
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = jarzynski_run(*tgt, jc, cfg.seed());
    const double secs = seconds_since(t0);
    Ensemble ens;
    ens.grid = grid;
    for (const auto& x : r.finals) ens.paths.push_back(tgt->full(x));
    Track t = track_from(ens);
    Vec lw = Eigen::Map<const Vec>(r.log_weights.data(), static_cast<Eigen::Index>(r.log_weights.size()));
    t.weights = (lw.array() - lw.maxCoeff()).exp().matrix();
    {
        std::ofstream os(dir / "weights.csv");
        os << "path_id,log_weight,acceptance\n";
        for (std::size_t k = 0; k < r.log_weights.size(); ++k)
            os << k << ',' << format_double(r.log_weights[k]) << ',' << format_double(r.acceptance[k]) << '\n';
    }
    nlohmann::json m = emit_track(dir, t, cfg, grid);
    m.erase("oracle");  // pinned-endpoint target: no linear-Gaussian oracle applies
    const std::size_t mid = grid.n_steps() / 2;
    m["log_z"] = r.log_z;
    m["z_ratio"] = r.z_ratio;
    m["z_std_error"] = r.z_std_error;
    m["ess"] = r.ess;
    m["low_ess"] = r.low_ess;
    m["weighted_mean_midpoint"] = r.weighted_mean([&](const Mat& x) { return x(0, static_cast<Eigen::Index>(mid) - 1); });
    double acc = 0.0;
    for (double a : r.acceptance) acc += a;
    m["mean_acceptance"] = acc / static_cast<double>(r.acceptance.size());
    m["seconds"] = secs;
    return m;
}

inline FiConfig fi_from(const RunConfig& cfg, const std::string& sec) {
    FiConfig fi;
    fi.sigma = cfg.positive(sec + ".fi_sigma");
    fi.m = cfg.count(sec + ".fi_m");
    fi.validate();
    return fi;
}

inline nlohmann::json cmd_jko(const RunConfig& cfg, const fs::path& dir) {
    JkoConfig jc;
    jc.h = cfg.positive("jko.h");
    jc.horizon = cfg.positive("grid.horizon");
    jc.fi = fi_from(cfg, "jko");
    jc.potential = make_potential(cfg);
    jc.hidden = cfg.ints("jko.hidden");
    jc.train_iters = cfg.count("jko.train_iters");
    jc.learning_rate = cfg.positive("jko.learning_rate");
    jc.terminal_term = cfg.flag("jko.terminal_term");
    jc.validate();
    const TimeGrid grid = jc.grid();
    const ObservationSet obs = cfg.observations(grid);
    const auto t0 = std::chrono::steady_clock::now();
    const auto tr = run_jko(jc, initial_cloud(cfg, cfg.count("jko.n"), cfg.seed()), obs, cfg.seed());
    const double secs = seconds_since(t0);
    {
        std::ofstream os(dir / "loss.csv");
        os << "step,iteration,loss\n";
        for (std::size_t k = 0; k < tr.loss_traces.size(); ++k)
            for (std::size_t i = 0; i < tr.loss_traces[k].size(); ++i)
                os << k << ',' << i << ',' << format_double(tr.loss_traces[k][i]) << '\n';
    }
    nlohmann::json m = emit_track(dir, track_from(tr.times, tr.clouds), cfg, grid);
    m["seconds"] = secs;
    return m;
}

inline nlohmann::json cmd_ips(const RunConfig& cfg, const fs::path& dir) {
    IpsConfig ic;
    ic.h = cfg.positive("ips.h");
    ic.horizon = cfg.positive("grid.horizon");
    ic.fi = fi_from(cfg, "ips");
    ic.potential = make_potential(cfg);
    ic.bandwidth = cfg.num("ips.bandwidth");
    const std::string& nt = cfg.str("ips.nu_term");
    if (nt == "kernelized") ic.nu_term = NuTerm::Kernelized;
    else if (nt == "pointwise") ic.nu_term = NuTerm::Pointwise;
    else throw ConfigError("ips.nu_term must be kernelized or pointwise");
    ic.terminal_kl = cfg.flag("ips.terminal_kl");
    ic.validate();
    const TimeGrid grid = ic.grid();
    const ObservationSet obs = cfg.observations(grid);
    const Mat X0 = initial_cloud(cfg, cfg.count("ips.n"), cfg.seed());
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_ips(ic, X0, obs, cfg.seed());
    nlohmann::json m = emit_track(dir, track_from(r.track.times, r.track.clouds), cfg, grid);
    m["seconds"] = seconds_since(t0);
    m["mean_displacement"] = (r.final.X - X0).colwise().norm().mean();
    return m;
}

inline nlohmann::json cmd_eulerian(const RunConfig& cfg, const fs::path& dir) {
    if (cfg.str("prior.drift") != "zero")
        throw ConfigError("eulerian: only the Brownian reference (prior.drift = zero) has a closed-form log P_t");
    const Vec A = cfg.vec("prior.x0");
    if (A.size() > 2) throw ConfigError("eulerian: grids are limited to 1 or 2 dimensions");
    const double t0 = cfg.positive("eulerian.t0"), h = cfg.positive("eulerian.h");
    const std::size_t steps = cfg.count("eulerian.steps");
    const auto grid = SpatialGrid::box(Vec::Constant(A.size(), cfg.num("eulerian.lo")),
                                       Vec::Constant(A.size(), cfg.num("eulerian.hi")), cfg.positive("eulerian.tau"));
    EulerianScenario sc = brownian_scenario(A);
    std::vector<ObservationSet::Input> obs = cfg.observation_inputs();
    const double sig = cfg.positive("obs.sigma");
    for (const auto& o : obs) {
        const double k = (o.time - t0) / h;
        if (k < 0.5 || std::abs(k - std::round(k)) > 1e-9) throw ConfigError("eulerian: observation times must be t0 + k h");
        if (o.value.size() != A.size()) throw ConfigError("eulerian: observation dimension differs from prior.x0");
    }
    sc.J = [obs, sig](const Vec& x, double t) {
        double j = 0.0;
        for (const auto& o : obs) {
            const double s = o.sigma > 0.0 ? o.sigma : sig;
            if (std::abs(t - o.time) < 1e-9) j += (o.value - x).squaredNorm() / (2.0 * s * s);
        }
        return j;
    };
    CpOptions opt;
    opt.density_tol = cfg.num("eulerian.density_tol");
    opt.max_iters = cfg.count("eulerian.max_iters");
    const auto start = std::chrono::steady_clock::now();
    const auto tr = run_eulerian(grid, gaussian_grid_density(grid, A, 2.0 * t0), sc, t0, h, steps, opt);
    {
        std::ofstream os(dir / "density.csv");
        os << "t";
        for (Eigen::Index c = 0; c < A.size(); ++c) os << ",x_" << c;
        os << ",q\n";
        for (std::size_t k = 0; k < tr.times.size(); ++k)
            for (Eigen::Index i = 0; i < grid.size(); ++i) {
                os << format_double(tr.times[k]);
                const Vec x = grid.point(i);
                for (Eigen::Index c = 0; c < A.size(); ++c) os << ',' << format_double(x(c));
                os << ',' << format_double(tr.densities[k].q(i)) << '\n';
            }
    }
    nlohmann::json m;
    double drift = 0.0, clipped = 0.0;
    std::size_t iters = 0;
    bool converged = true;
    for (const auto& s : tr.steps) {
        drift = std::max(drift, s.mass_drift);
        clipped = std::max(clipped, s.clipped_mass);
        iters += s.cp.iterations;
        converged = converged && (s.cp.converged || s.cp.density_converged);
    }
    m["max_mass_drift"] = drift;
    m["max_clipped_mass"] = clipped;
    m["cp_iterations"] = iters;
    m["all_steps_converged"] = converged;
    m["seconds"] = seconds_since(start);
    if (obs.empty()) {
        nlohmann::json l1 = nlohmann::json::array();
        for (std::size_t k = 0; k < tr.times.size(); ++k)
            l1.push_back({{"t", tr.times[k]},
                          {"l1_vs_exact", l1_distance(grid, tr.densities[k], gaussian_grid_density(grid, A, 2.0 * tr.times[k]))}});
        m["brownian_l1"] = l1;
    }
    return m;
}

inline nlohmann::json cmd_eot(const RunConfig& cfg, const fs::path& dir) {
    EotConfig ec;
    ec.eta_factor = cfg.positive("eot.eta_factor");
    ec.inner_iters = cfg.count("eot.inner_iters");
    ec.sinkhorn_tol = cfg.positive("eot.sinkhorn_tol");
    ec.potential = make_potential(cfg);
    ec.validate();
    const TimeGrid grid = cfg.grid();
    const ObservationSet obs = cfg.observations(grid);
    const auto t0 = std::chrono::steady_clock::now();
    const auto tr = run_eot(ec, initial_cloud(cfg, cfg.count("eot.n"), cfg.seed()), obs);
    nlohmann::json m = emit_track(dir, track_from(tr.times, tr.clouds), cfg, grid);
    double worst = 0.0;
    for (const auto& s : tr.steps) worst = std::max(worst, s.worst_violation);
    m["max_marginal_violation"] = worst;
    m["seconds"] = seconds_since(t0);
    return m;
}

inline nlohmann::json cmd_oracle(const RunConfig& cfg, const fs::path& dir) {
    const TimeGrid grid = cfg.grid();
    const std::string& target = cfg.str("oracle.target");
    if (target != "posterior" && target != "prior") throw ConfigError("oracle.target must be posterior or prior");
    const auto o = oracle_moments(cfg, grid, target == "posterior");
    if (!o) throw ConfigError("oracle: no closed-form oracle for prior.drift = " + cfg.str("prior.drift"));
    std::vector<double> times;
    for (std::size_t j = 0; j < grid.n_nodes(); ++j) times.push_back(grid.time(j));
    write_moments(dir / "moments.csv", times, o->first, o->second);
    const std::size_t n = cfg.count("oracle.samples");
    if (n > 0) {
        // Independent draws from each node's exact marginal.
        Track t;
        t.times = times;
        const CounterRng rng(cfg.seed(), 0x6f7261636c65ull);
        for (std::size_t j = 0; j < times.size(); ++j) {
            Mat X(o->first.rows(), static_cast<Eigen::Index>(n));
            for (Eigen::Index k = 0; k < X.cols(); ++k)
                for (Eigen::Index c = 0; c < X.rows(); ++c)
                    X(c, k) = o->first(c, static_cast<Eigen::Index>(j)) +
                              std::sqrt(o->second(c, static_cast<Eigen::Index>(j))) *
                                  rng.normal(j, static_cast<std::uint64_t>(k * X.rows() + c));
            t.clouds.push_back(std::move(X));
        }
        write_samples(dir / "samples.csv", t);
    }
    return {{"target", target}, {"nodes", times.size()}};
}

// ---------------------------------------------------------------- compare

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(const fs::path& file) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot read " + file.string());
    CsvTable t;
    std::string line;
    if (!std::getline(is, line)) throw ConfigError(file.string() + ": empty file");
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.header.push_back(cell);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> r;
        std::stringstream ls(line);
        while (std::getline(ls, cell, ',')) {
            try {
                r.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError(file.string() + ": bad number '" + cell + "'");
            }
        }
        if (r.size() != t.header.size()) throw ConfigError(file.string() + ": ragged row");
        t.rows.push_back(std::move(r));
    }
    return t;
}

/// samples.csv back into a track (times in file order).
inline Track read_samples(const fs::path& file) {
    const CsvTable t = read_csv(file);
    if (t.header.size() < 3 || t.header[0] != "path_id" || t.header[1] != "t")
        throw ConfigError(file.string() + ": not a samples file");
    const auto d = static_cast<Eigen::Index>(t.header.size() - 2);
    std::vector<double> times;
    std::map<double, std::size_t> slot;
    std::size_t n_paths = 0;
    for (const auto& r : t.rows) {
        if (!slot.count(r[1])) {
            slot[r[1]] = times.size();
            times.push_back(r[1]);
        }
        n_paths = std::max(n_paths, static_cast<std::size_t>(r[0]) + 1);
    }
    Track tr;
    tr.times = times;
    tr.clouds.assign(times.size(), Mat::Constant(d, static_cast<Eigen::Index>(n_paths), std::nan("")));
    for (const auto& r : t.rows)
        for (Eigen::Index c = 0; c < d; ++c)
            tr.clouds[slot[r[1]]](c, static_cast<Eigen::Index>(r[0])) = r[static_cast<std::size_t>(c) + 2];
    for (const auto& X : tr.clouds)
        if (!X.allFinite()) throw ConfigError(file.string() + ": missing samples for some (path, t)");
    return tr;
}

/// Two-sample energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'| (V-statistic).
inline double energy_distance(const Mat& X, const Mat& Y) {
    auto mean_dist = [](const Mat& A, const Mat& B) {
        return detail::sq_dists(A, B).cwiseMax(0.0).cwiseSqrt().mean();
    };
    return 2.0 * mean_dist(X, Y) - mean_dist(X, X) - mean_dist(Y, Y);
}

/// Permutation p-value of the energy distance under exchangeability.
inline double energy_permutation_pvalue(const Mat& X, const Mat& Y, std::size_t permutations, std::uint64_t seed) {
    const double stat = energy_distance(X, Y);
    Mat pool(X.rows(), X.cols() + Y.cols());
    pool << X, Y;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(pool.cols()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
    RngStream rng(seed, 0x7065726dull);
    std::size_t ge = 0;
    for (std::size_t p = 0; p < permutations; ++p) {
        for (std::size_t i = idx.size() - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i + 1));
            std::swap(idx[i], idx[std::min(j, i)]);
        }
        Mat A(X.rows(), X.cols()), B(X.rows(), Y.cols());
        for (Eigen::Index i = 0; i < X.cols(); ++i) A.col(i) = pool.col(idx[static_cast<std::size_t>(i)]);
        for (Eigen::Index i = 0; i < Y.cols(); ++i) B.col(i) = pool.col(idx[static_cast<std::size_t>(X.cols() + i)]);
        if (energy_distance(A, B) >= stat) ++ge;
    }
    return (1.0 + static_cast<double>(ge)) / (1.0 + static_cast<double>(permutations));
}

inline Mat subsample(const Mat& X, Eigen::Index cap) {
    if (X.cols() <= cap) return X;
    Mat out(X.rows(), cap);
    for (Eigen::Index i = 0; i < cap; ++i) out.col(i) = X.col(i * X.cols() / cap);
    return out;
}

/// Moment deltas of a run against an oracle directory (or another run), plus
/// energy distances when both sides have samples and ESS for weighted runs.
inline nlohmann::json compare_dirs(const fs::path& run, const fs::path& oracle, std::size_t permutations,
                                   std::uint64_t seed) {
    const CsvTable rm = read_csv(run / "moments.csv"), om = read_csv(oracle / "moments.csv");
    if (rm.header != om.header) throw ConfigError("compare: moment columns differ (dimension mismatch)");
    if (rm.rows.size() != om.rows.size()) throw ConfigError("compare: grids differ in node count");
    const std::size_t d = (rm.header.size() - 1) / 2;
    nlohmann::json nodes = nlohmann::json::array();
    double worst_mean = 0.0, worst_var = 0.0;
    for (std::size_t j = 0; j < rm.rows.size(); ++j) {
        if (std::abs(rm.rows[j][0] - om.rows[j][0]) > 1e-9) throw ConfigError("compare: grid times differ");
        for (std::size_t c = 0; c < d; ++c) {
            const double dm = rm.rows[j][1 + c] - om.rows[j][1 + c];
            const double dv = rm.rows[j][1 + d + c] - om.rows[j][1 + d + c];
            worst_mean = std::max(worst_mean, std::abs(dm));
            worst_var = std::max(worst_var, std::abs(dv));
            nodes.push_back({{"t", rm.rows[j][0]}, {"component", c}, {"mean_delta", dm}, {"var_delta", dv}});
        }
    }
    nlohmann::json m{{"max_abs_mean_delta", worst_mean}, {"max_abs_var_delta", worst_var}, {"nodes", nodes}};
    const bool weighted = fs::exists(run / "weights.csv");
    if (weighted) {
        const CsvTable w = read_csv(run / "weights.csv");
        Vec lw(static_cast<Eigen::Index>(w.rows.size()));
        for (std::size_t k = 0; k < w.rows.size(); ++k) lw(static_cast<Eigen::Index>(k)) = w.rows[k][1];
        m["ess"] = effective_sample_size((lw.array() - lw.maxCoeff()).exp().matrix());
    }
    if (fs::exists(run / "samples.csv") && fs::exists(oracle / "samples.csv")) {
        const Track a = read_samples(run / "samples.csv"), b = read_samples(oracle / "samples.csv");
        if (a.times.size() != b.times.size()) throw ConfigError("compare: sample grids differ");
        nlohmann::json ed = nlohmann::json::array();
        // Ten evenly spaced nodes keep the permutation test affordable.
        const std::size_t T = a.times.size(), picks = std::min<std::size_t>(10, T);
        for (std::size_t q = 1; q <= picks; ++q) {
            const std::size_t j = q * (T - 1) / picks;
            const Mat X = subsample(a.clouds[j], 300), Y = subsample(b.clouds[j], 300);
            nlohmann::json e{{"t", a.times[j]}, {"energy_distance", energy_distance(X, Y)}};
            if (!weighted && permutations > 0) e["p_value"] = energy_permutation_pvalue(X, Y, permutations, seed + j);
            ed.push_back(e);
        }
        m["energy"] = ed;
    }
    return m;
}

// ---------------------------------------------------------------- dispatch

inline nlohmann::json metadata(const RunConfig& cfg, const std::string& command) {
    return {{"version", version_string()}, {"command", command}, {"config", cfg.to_json()}};
}

/// Runs one method subcommand, writing metadata.json, CSVs and metrics.json under `out`.
inline nlohmann::json run_command(const std::string& command, const RunConfig& cfg, const fs::path& out) {
    if (std::find(commands().begin(), commands().end(), command) == commands().end() || command == "compare")
        throw ConfigError("unknown command '" + command + "'");
    fs::create_directories(out);
    write_json(out / "metadata.json", metadata(cfg, command));
    nlohmann::json m;
    if (command == "simulate") m = cmd_simulate(cfg, out);
    else if (command == "transport-nn") m = cmd_transport(cfg, out, false);
    else if (command == "transport-krr") m = cmd_transport(cfg, out, true);
    else if (command == "spde") m = cmd_spde(cfg, out);
    else if (command == "jko") m = cmd_jko(cfg, out);
    else if (command == "ips") m = cmd_ips(cfg, out);
    else if (command == "eulerian") m = cmd_eulerian(cfg, out);
    else if (command == "eot") m = cmd_eot(cfg, out);
    else m = cmd_oracle(cfg, out);
    m["command"] = command;
    write_json(out / "metrics.json", m);
    return m;
}

}  // namespace pathsamp::cli
