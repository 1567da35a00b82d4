#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pathsamp/errors.hpp"
#include "pathsamp/observations.hpp"
#include "pathsamp/paths.hpp"

namespace pathsamp::cli {

/// Every accepted key with its default, as "section.key".
inline const std::vector<std::pair<std::string, std::string>>& config_defaults() {
    static const std::vector<std::pair<std::string, std::string>> d = {
        {"run.scenario", "custom"},
        {"run.seed", "1"},
        {"grid.horizon", "1"},
        {"grid.dt", "0.01"},
        {"prior.drift", "zero"},  // zero | ou | doublewell | separable_doublewell
        {"prior.beta", "0.25"},
        {"prior.height", "5"},
        {"prior.x0", "0"},
        {"prior.init_std", "0"},
        {"obs.sigma", "0.1"},
        {"obs.points", ""},  // t:v[,v..][:sigma]; separated by ';'
        {"simulate.n_paths", "500"},
        {"transport.ds", "0.1"},
        {"transport.n_paths", "500"},
        {"transport.train_iters", "200"},
        {"transport.learning_rate", "0.001"},
        {"transport.hidden", "20,30"},
        {"transport.init_out_scale", "1"},
        {"transport.output_paths", "500"},
        {"krr.ridge_per_path", "0.001"},
        {"krr.bandwidth", "0"},
        {"krr.coupling", "joint"},
        {"spde.ds", "0.01"},
        {"spde.walkers", "100"},
        {"spde.start", "-1"},
        {"spde.end", "1"},
        {"jko.h", "0.2"},
        {"jko.n", "200"},
        {"jko.fi_sigma", "0.4"},
        {"jko.fi_m", "30"},
        {"jko.train_iters", "1500"},
        {"jko.learning_rate", "0.01"},
        {"jko.hidden", "32,32,32,32,32"},
        {"jko.terminal_term", "true"},
        {"ips.h", "0.02"},
        {"ips.n", "500"},
        {"ips.fi_sigma", "0.4"},
        {"ips.fi_m", "30"},
        {"ips.bandwidth", "0"},
        {"ips.nu_term", "kernelized"},
        {"ips.terminal_kl", "false"},
        {"eulerian.lo", "-5"},
        {"eulerian.hi", "5"},
        {"eulerian.tau", "0.02"},
        {"eulerian.h", "0.01"},
        {"eulerian.steps", "10"},
        {"eulerian.t0", "0.5"},
        {"eulerian.density_tol", "1e-6"},
        {"eulerian.max_iters", "50000"},
        {"eot.n", "200"},
        {"eot.eta_factor", "0.5"},
        {"eot.inner_iters", "50"},
        {"eot.sinkhorn_tol", "1e-9"},
        {"oracle.target", "posterior"},  // posterior | prior
        {"oracle.samples", "0"},
        {"compare.permutations", "200"},
    };
    return d;
}

inline const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> s = {"custom", "brownian_bridge", "doublewell_tps", "ou_posterior",
                                               "doublewell_2d"};
    return s;
}

/// Resolved key/value configuration: defaults, then the scenario preset, then
/// the config file, then command-line overrides.
class RunConfig {
public:
    RunConfig() {
        for (const auto& [k, v] : config_defaults()) values_[k] = v;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    void set(const std::string& key, const std::string& value) {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second = value;
    }

    void apply_scenario(const std::string& name) {
        const auto& names = scenario_names();
        if (std::find(names.begin(), names.end(), name) == names.end())
            throw ConfigError("unknown scenario '" + name + "'");
        values_["run.scenario"] = name;
        if (name == "brownian_bridge") {
            set("prior.drift", "zero");
            set("prior.x0", "-2");
            set("obs.points", "1:2");
            set("obs.sigma", "0.1");
            set("grid.dt", "0.01");
            set("transport.train_iters", "200");
        } else if (name == "doublewell_tps") {
            set("prior.drift", "doublewell");
            set("prior.height", "5");
            set("prior.x0", "-1");
            set("obs.points", "1:1");
            set("obs.sigma", "0.1");
            set("grid.dt", "0.01");
            set("transport.train_iters", "250");
            set("spde.start", "-1");
            set("spde.end", "1");
            set("spde.ds", "0.01");
        } else if (name == "ou_posterior") {
            set("prior.drift", "ou");
            set("prior.beta", "0.25");
            set("prior.x0", "0");
            set("prior.init_std", "2");
            set("obs.points", "0.5:-1:1; 1:1:0.1");
            set("obs.sigma", "1");
            set("grid.dt", "0.2");
        } else if (name == "doublewell_2d") {
            set("prior.drift", "separable_doublewell");
            set("prior.height", "5");
            set("prior.x0", "-1,-1");
            set("obs.points", "0.5:1,-1; 1:1,1");
            set("obs.sigma", "0.1");
            set("grid.dt", "0.01");
        }
    }

    /// Reads key = value lines grouped under [section] headers; '#' starts a comment.
    void load_ini(std::istream& is, const std::string& origin = "config") {
        const std::string text{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
        reject_duplicates(text, origin);
        std::istringstream body(text);
        CLI::ConfigBase parser;
        parser.comment('#');
        std::vector<CLI::ConfigItem> items;
        try {
            items = parser.from_config(body);
        } catch (const CLI::Error& e) {
            throw ConfigError(origin + ": " + e.what());
        }
        std::vector<std::pair<std::string, std::string>> kv;
        for (const auto& it : items) {
            if (it.name == "++" || it.name == "--") continue;
            if (it.parents.size() != 1)
                throw ConfigError(origin + ": key '" + it.name + "' must sit in exactly one [section]");
            std::string joined;
            for (std::size_t i = 0; i < it.inputs.size(); ++i) joined += (i ? "," : "") + it.inputs[i];
            kv.emplace_back(it.parents[0] + "." + it.name, joined);
        }
        for (const auto& [k, v] : kv) {
            if (!has(k)) throw ConfigError(origin + ": unknown key '" + k + "'");
            if (k == "run.scenario") apply_scenario(v);
        }
        for (const auto& [k, v] : kv)
            if (k != "run.scenario") set(k, v);
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        return it->second;
    }

    double num(const std::string& key) const {
        const std::string& s = str(key);
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != s.size() || !std::isfinite(v)) throw ConfigError(key + ": expected a number, got '" + s + "'");
        return v;
    }

    double positive(const std::string& key) const {
        const double v = num(key);
        if (!(v > 0.0)) throw ConfigError(key + " must be positive");
        return v;
    }

    std::size_t count(const std::string& key) const {
        const double v = num(key);
        if (v < 0.0 || v != std::floor(v) || v > 1e15) throw ConfigError(key + ": expected a nonnegative integer");
        return static_cast<std::size_t>(v);
    }

    std::uint64_t seed() const { return static_cast<std::uint64_t>(count("run.seed")); }

    bool flag(const std::string& key) const {
        const std::string& s = str(key);
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw ConfigError(key + ": expected true or false, got '" + s + "'");
    }

    Vec vec(const std::string& key) const {
        std::vector<double> xs;
        std::stringstream ss(str(key));
        std::string tok;
        while (std::getline(ss, tok, ',')) xs.push_back(parse_number(tok, key));
        if (xs.empty()) throw ConfigError(key + ": expected a comma-separated vector");
        return Eigen::Map<Vec>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    }

    std::vector<int> ints(const std::string& key) const {
        std::vector<int> out;
        for (double v : vec(key)) {
            if (v < 1.0 || v != std::floor(v)) throw ConfigError(key + ": expected positive integers");
            out.push_back(static_cast<int>(v));
        }
        return out;
    }

    /// Entries of obs.points; each is t:value[:sigma] with value comma-separated.
    std::vector<ObservationSet::Input> observation_inputs() const {
        std::vector<ObservationSet::Input> out;
        std::stringstream ss(str("obs.points"));
        std::string entry;
        while (std::getline(ss, entry, ';')) {
            entry = trim(entry);
            if (entry.empty()) continue;
            std::vector<std::string> parts;
            std::stringstream es(entry);
            std::string p;
            while (std::getline(es, p, ':')) parts.push_back(trim(p));
            if (parts.size() < 2 || parts.size() > 3) throw ConfigError("obs.points: malformed entry '" + entry + "'");
            ObservationSet::Input in;
            in.time = parse_number(parts[0], "obs.points");
            std::vector<double> xs;
            std::stringstream vs(parts[1]);
            while (std::getline(vs, p, ',')) xs.push_back(parse_number(p, "obs.points"));
            in.value = Eigen::Map<Vec>(xs.data(), static_cast<Eigen::Index>(xs.size()));
            if (parts.size() == 3) {
                in.sigma = parse_number(parts[2], "obs.points");
                if (!(in.sigma > 0.0)) throw ConfigError("obs.points: sigma must be positive");
            }
            out.push_back(std::move(in));
        }
        return out;
    }

    ObservationSet observations(const TimeGrid& grid) const {
        auto in = observation_inputs();
        const Eigen::Index d = vec("prior.x0").size();
        for (const auto& e : in) {
            if (e.value.size() != d) throw ConfigError("obs.points: observation dimension differs from prior.x0");
            if (e.time <= 0.0 || e.time > grid.horizon() + 1e-12)
                throw ConfigError("obs.points: observation times must lie in (0, horizon]");
        }
        return ObservationSet(grid, std::move(in), positive("obs.sigma"));
    }

    TimeGrid grid() const { return TimeGrid(positive("grid.horizon"), positive("grid.dt")); }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : values_) {
            const auto dot = k.find('.');
            j[k.substr(0, dot)][k.substr(dot + 1)] = v;
        }
        return j;
    }

private:
    // CLI11 folds a repeated key into one multi-valued item, so check the raw lines.
    static void reject_duplicates(const std::string& text, const std::string& origin) {
        std::istringstream ls(text);
        std::string line, section;
        std::map<std::string, int> seen;
        while (std::getline(ls, line)) {
            line = trim(line.substr(0, line.find('#')));
            if (!line.empty() && line.back() == '\r') line = trim(line.substr(0, line.size() - 1));
            if (line.empty()) continue;
            if (line.front() == '[' && line.back() == ']') {
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string k = section + "." + trim(line.substr(0, eq));
            if (seen[k]++) throw ConfigError(origin + ": duplicate key '" + k + "'");
        }
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t");
        if (b == std::string::npos) return "";
        return s.substr(b, s.find_last_not_of(" \t") - b + 1);
    }

    static double parse_number(const std::string& raw, const std::string& key) {
        const std::string s = trim(raw);
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != s.size() || !std::isfinite(v)) throw ConfigError(key + ": bad number '" + s + "'");
        return v;
    }

    std::map<std::string, std::string> values_;
};

}  // namespace pathsamp::cli
