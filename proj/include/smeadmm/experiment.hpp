/*
   Copyright 2026 The smeadmm Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

// Declarative experiments: configuration, presets, and artifact output.
//
// A configuration is a flat JSON object. Layers are applied in this order,
// later layers overriding earlier ones:
//
//     built-in defaults < preset < config file < SME_ADMM_SEED < command-line flags
//
// A manifest written by run() can itself be passed back as a config file.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "admm.hpp"
#include "errors.hpp"
#include "montecarlo.hpp"
#include "problem.hpp"
#include "sme.hpp"
#include "smallmat.hpp"

namespace smeadmm {

using Json = nlohmann::ordered_json;

inline constexpr const char* kToolName = "smeadmm";
inline constexpr const char* kToolVersion = "1.0.0";

/// Trajectory files keep at most this many time points unless full_resolution is set.
inline constexpr std::size_t kMaxPathPoints = 512;

struct ExperimentConfig {
    std::string experiment = "compare-mean-std";
    std::string problem = "quartic1d-l2";

    double epsilon = 1.0 / 128.0;
    double alpha = 1.0;
    double omega = 0.0;
    double omega1 = 0.0;
    double c = 0.0;
    std::size_t batch = 1;
    std::size_t substeps = 8;
    double newton_tol = 1e-12;
    std::size_t newton_max_iter = 50;

    double T = 0.5;
    std::size_t n_runs = 10000;
    std::vector<int> m_range{4, 5, 6, 7, 8, 9};
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    std::size_t threads = 0;

    std::vector<double> x0; // empty: 1 for quartic1d, 0 for regression
    std::string observable = "sum";

    // ridge / lasso
    std::size_t d = 3;
    double beta = 0.2;
    double noise_var = 0.1;
    double hilbert_scale = 0.5;

    // run-admm
    bool with_sme = false;
    bool full_resolution = false;
};

namespace detail {

template <class T>
T json_get(const Json& j, const std::string& key)
{
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("field '" + key + "' has the wrong type: " + j.dump());
    }
}

inline std::size_t json_count(const Json& j, const std::string& key)
{
    if (!j.is_number_integer() || j.get<std::int64_t>() < 0) {
        throw ConfigError("field '" + key + "' must be a non-negative integer, got " + j.dump());
    }
    return j.get<std::size_t>();
}

inline double json_real(const Json& j, const std::string& key)
{
    if (!j.is_number()) throw ConfigError("field '" + key + "' must be a number, got " + j.dump());
    return j.get<double>();
}

} // namespace detail

/// Overrides the fields present in `j`; unknown keys are rejected.
inline void apply_json(ExperimentConfig& cfg, const Json& j)
{
    using detail::json_count;
    using detail::json_get;
    using detail::json_real;
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        if (key == "experiment") cfg.experiment = json_get<std::string>(v, key);
        else if (key == "problem") cfg.problem = json_get<std::string>(v, key);
        else if (key == "epsilon") cfg.epsilon = json_real(v, key);
        else if (key == "alpha") cfg.alpha = json_real(v, key);
        else if (key == "omega") cfg.omega = json_real(v, key);
        else if (key == "omega1") cfg.omega1 = json_real(v, key);
        else if (key == "c") cfg.c = json_real(v, key);
        else if (key == "batch") cfg.batch = json_count(v, key);
        else if (key == "substeps") cfg.substeps = json_count(v, key);
        else if (key == "newton_tol") cfg.newton_tol = json_real(v, key);
        else if (key == "newton_max_iter") cfg.newton_max_iter = json_count(v, key);
        else if (key == "T") cfg.T = json_real(v, key);
        else if (key == "n_runs") cfg.n_runs = json_count(v, key);
        else if (key == "m_range") {
            if (!v.is_array()) throw ConfigError("field 'm_range' must be an array of integers");
            cfg.m_range.clear();
            for (const auto& m : v) {
                if (!m.is_number_integer()) throw ConfigError("field 'm_range' must be an array of integers");
                cfg.m_range.push_back(m.get<int>());
            }
        }
        else if (key == "seed") cfg.seed = json_count(v, key);
        else if (key == "output_dir") cfg.output_dir = json_get<std::string>(v, key);
        else if (key == "threads") cfg.threads = json_count(v, key);
        else if (key == "x0") {
            cfg.x0.clear();
            if (v.is_number()) cfg.x0.push_back(v.get<double>());
            else if (v.is_array()) {
                for (const auto& e : v) cfg.x0.push_back(json_real(e, key));
            }
            else throw ConfigError("field 'x0' must be a number or an array of numbers");
        }
        else if (key == "observable") cfg.observable = json_get<std::string>(v, key);
        else if (key == "d") cfg.d = json_count(v, key);
        else if (key == "beta") cfg.beta = json_real(v, key);
        else if (key == "noise_var") cfg.noise_var = json_real(v, key);
        else if (key == "hilbert_scale") cfg.hilbert_scale = json_real(v, key);
        else if (key == "with_sme") cfg.with_sme = json_get<bool>(v, key);
        else if (key == "full_resolution") cfg.full_resolution = json_get<bool>(v, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

inline Json to_json(const ExperimentConfig& cfg)
{
    Json j;
    j["experiment"] = cfg.experiment;
    j["problem"] = cfg.problem;
    j["epsilon"] = cfg.epsilon;
    j["alpha"] = cfg.alpha;
    j["omega"] = cfg.omega;
    j["omega1"] = cfg.omega1;
    j["c"] = cfg.c;
    j["batch"] = cfg.batch;
    j["substeps"] = cfg.substeps;
    j["newton_tol"] = cfg.newton_tol;
    j["newton_max_iter"] = cfg.newton_max_iter;
    j["T"] = cfg.T;
    j["n_runs"] = cfg.n_runs;
    j["m_range"] = cfg.m_range;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["threads"] = cfg.threads;
    j["x0"] = cfg.x0;
    j["observable"] = cfg.observable;
    j["d"] = cfg.d;
    j["beta"] = cfg.beta;
    j["noise_var"] = cfg.noise_var;
    j["hilbert_scale"] = cfg.hilbert_scale;
    j["with_sme"] = cfg.with_sme;
    j["full_resolution"] = cfg.full_resolution;
    return j;
}

inline const std::vector<std::string>& experiment_names()
{
    static const std::vector<std::string> names{"run-admm",   "run-sme",   "compare-mean-std", "weak-error",
                                                "fluctuation", "residuals", "moments"};
    return names;
}

inline const std::vector<std::string>& problem_names()
{
    static const std::vector<std::string> names{"quartic1d-l2", "quartic1d-l1", "ridge", "lasso"};
    return names;
}

inline bool is_regression(const ExperimentConfig& cfg) { return cfg.problem == "ridge" || cfg.problem == "lasso"; }

inline std::size_t problem_dim(const ExperimentConfig& cfg) { return is_regression(cfg) ? cfg.d : 1; }

inline ProblemPtr make_problem(const ExperimentConfig& cfg)
{
    if (cfg.problem == "quartic1d-l2") return make_quartic1d(Quartic1dReg::l2);
    if (cfg.problem == "quartic1d-l1") return make_quartic1d(Quartic1dReg::l1);
    if (cfg.problem == "ridge" || cfg.problem == "lasso") {
        const auto reg = cfg.problem == "ridge" ? RegressionReg::ridge : RegressionReg::lasso;
        return make_regression(cfg.d, reg, cfg.beta, cfg.noise_var, cfg.hilbert_scale);
    }
    throw ConfigError("unknown problem '" + cfg.problem + "'");
}

inline AdmmParams admm_params(const ExperimentConfig& cfg, double epsilon)
{
    AdmmParams p;
    p.epsilon = epsilon;
    p.alpha = cfg.alpha;
    p.omega = cfg.omega;
    p.omega1 = cfg.omega1;
    p.c = cfg.c;
    p.batch = cfg.batch;
    p.newton_tol = cfg.newton_tol;
    p.newton_max_iter = cfg.newton_max_iter;
    return p;
}

inline SmeParams sme_params(const ExperimentConfig& cfg, double epsilon)
{
    return SmeParams::matching(admm_params(cfg, epsilon), cfg.substeps);
}

inline Vec initial_point(const ExperimentConfig& cfg)
{
    const std::size_t d = problem_dim(cfg);
    if (cfg.x0.empty()) return Vec(d, is_regression(cfg) ? 0.0 : 1.0);
    if (cfg.x0.size() == 1) return Vec(d, cfg.x0[0]);
    if (cfg.x0.size() != d) {
        throw ConfigError("field 'x0' has " + std::to_string(cfg.x0.size()) + " entries, expected " +
                          std::to_string(d));
    }
    return Vec(std::span<const double>(cfg.x0));
}

/// "sum", "component(i)" (0-based) or "x+x2" (sum of x_i + x_i^2).
inline Observable parse_observable(const std::string& name, std::size_t d)
{
    if (name == "sum") return [](const Vec& x) { return component_sum(x); };
    if (name == "x+x2") {
        return [](const Vec& x) {
            double s = 0.0;
            for (double v : x) s += v + v * v;
            return s;
        };
    }
    const std::string prefix = "component(";
    if (name.rfind(prefix, 0) == 0) {
        std::size_t i = 0;
        std::size_t used = 0;
        try {
            i = std::stoul(name.substr(prefix.size()), &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || prefix.size() + used + 1 != name.size() || name.back() != ')') {
            throw ConfigError("field 'observable': malformed component index in '" + name + "'");
        }
        if (i >= d) {
            throw ConfigError("field 'observable': component " + std::to_string(i) + " is outside [0, " +
                              std::to_string(d) + ")");
        }
        return [i](const Vec& x) { return x[i]; };
    }
    throw ConfigError("field 'observable' = '" + name + "' is not one of sum, component(i), x+x2");
}

inline double level_epsilon(const ExperimentConfig& cfg, int m) { return cfg.T * std::ldexp(1.0, -m); }

inline bool uses_levels(const ExperimentConfig& cfg)
{
    return cfg.experiment == "weak-error" || cfg.experiment == "fluctuation" || cfg.experiment == "residuals" ||
           cfg.experiment == "moments";
}

inline bool uses_sme(const ExperimentConfig& cfg)
{
    return cfg.experiment == "run-sme" || cfg.experiment == "compare-mean-std" || cfg.experiment == "weak-error" ||
           cfg.experiment == "fluctuation" || cfg.experiment == "moments" ||
           (cfg.experiment == "run-admm" && cfg.with_sme);
}

/// Throws ConfigError naming the offending field.
inline void validate(const ExperimentConfig& cfg)
{
    auto one_of = [](const std::string& field, const std::string& v, const std::vector<std::string>& allowed) {
        for (const auto& a : allowed)
            if (a == v) return;
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        throw ConfigError("field '" + field + "' = '" + v + "' is not one of " + list);
    };
    one_of("experiment", cfg.experiment, experiment_names());
    one_of("problem", cfg.problem, problem_names());
    if (!(cfg.T > 0.0 && std::isfinite(cfg.T))) throw ConfigError("field 'T' must be positive and finite");
    if (cfg.substeps < 1) throw ConfigError("field 'substeps' = 0 is outside the legal range [1, inf)");
    if (is_regression(cfg)) {
        if (cfg.d < 1 || cfg.d > kMaxDim) {
            throw ConfigError("field 'd' = " + std::to_string(cfg.d) + " is outside the legal range [1, " +
                              std::to_string(kMaxDim) + "]");
        }
        if (!(cfg.beta > 0.0)) throw ConfigError("field 'beta' must be positive");
        if (!(cfg.noise_var >= 0.0)) throw ConfigError("field 'noise_var' must be non-negative");
        if (!(cfg.hilbert_scale > 0.0)) throw ConfigError("field 'hilbert_scale' must be positive");
    }
    const std::size_t min_runs = cfg.experiment == "moments" ? 10000 : 2;
    if (cfg.n_runs < min_runs) {
        throw ConfigError("field 'n_runs' = " + std::to_string(cfg.n_runs) + " is below the minimum " +
                          std::to_string(min_runs));
    }

    std::vector<double> epsilons;
    if (uses_levels(cfg)) {
        if (cfg.m_range.empty()) throw ConfigError("field 'm_range' must not be empty");
        for (int m : cfg.m_range) {
            if (m < 0 || m > 24) throw ConfigError("field 'm_range' entry " + std::to_string(m) + " is outside [0, 24]");
            epsilons.push_back(level_epsilon(cfg, m));
        }
        if ((cfg.experiment == "fluctuation" || cfg.experiment == "residuals") && cfg.m_range.size() < 3) {
            throw ConfigError("field 'm_range' needs at least three levels for a scaling fit");
        }
    } else {
        epsilons.push_back(cfg.epsilon);
    }
    for (double eps : epsilons) {
        try {
            admm_params(cfg, eps).validate();
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
        if (cfg.experiment != "moments" && window_count(cfg.T, eps) < 1) {
            throw ConfigError("field 'T' is shorter than one step of epsilon = " + std::to_string(eps));
        }
    }
    const ProblemPtr problem = make_problem(cfg);
    initial_point(cfg);
    parse_observable(cfg.observable, problem_dim(cfg));
    if (uses_sme(cfg)) {
        try {
            mhat(cfg.alpha, cfg.omega, cfg.c, problem->constraint());
        } catch (const Error& e) {
            throw ConfigError("alpha, omega, c give a modified-equation matrix that is not positive definite: " +
                              std::string(e.what()));
        }
    }
}

struct Preset {
    std::string name;
    std::string description;
    Json config;
};

inline const std::vector<Preset>& presets()
{
    // Example 1 uses c = omega = 1 with omega1 = 0, so Mhat = 1 / alpha for A = 1.
    static const std::vector<Preset> list = [] {
        const Json ex1 = {{"problem", "quartic1d-l2"}, {"alpha", 1.5}, {"omega", 1.0}, {"omega1", 0.0},
                          {"c", 1.0},                  {"T", 0.5},     {"x0", 1.0}};
        const Json ex2 = {{"problem", "ridge"}, {"d", 3},      {"beta", 0.2},   {"noise_var", 0.1},
                          {"batch", 9},         {"alpha", 1.5}, {"omega", 1.0}, {"omega1", 1.0},
                          {"c", 1.0},           {"T", 40.0},   {"x0", 0.0},     {"observable", "sum"}};
        auto with = [](Json base, const Json& extra) {
            for (const auto& [k, v] : extra.items()) base[k] = v;
            return base;
        };
        const Json alpha1 = {{"alpha", 1.0}, {"omega", 0.0}, {"c", 0.0}};
        std::vector<Preset> p;
        p.push_back({"example1-mean-std", "quartic, l2: mean and std of x_k against the SME, eps = 2^-7",
                     with(ex1, {{"experiment", "compare-mean-std"}, {"epsilon", 0.0078125}, {"n_runs", 10000}})});
        p.push_back({"example1-mean-std-l1", "quartic, l1: mean and std of x_k against the SME, eps = 2^-7",
                     with(ex1, {{"experiment", "compare-mean-std"}, {"problem", "quartic1d-l1"},
                                {"epsilon", 0.0078125}, {"n_runs", 10000}})});
        p.push_back({"example1-traj-fan", "quartic, l2: 400 sample paths of ADMM and SME, eps = 2^-7",
                     with(ex1, {{"experiment", "run-admm"}, {"with_sme", true}, {"epsilon", 0.0078125},
                                {"n_runs", 400}})});
        p.push_back({"example1-weak-error", "quartic, l2: weak error err_m, alpha = 1.5, phi = x + x^2",
                     with(ex1, {{"experiment", "weak-error"}, {"observable", "x+x2"}, {"n_runs", 100000},
                                {"m_range", {4, 5, 6, 7, 8, 9}}})});
        p.push_back({"example1-weak-error-alpha1", "quartic, l2: weak error err_m, alpha = 1, c = omega = 0",
                     with(with(ex1, alpha1), {{"experiment", "weak-error"}, {"observable", "x+x2"},
                                              {"n_runs", 100000}, {"m_range", {4, 5, 6, 7, 8, 9}}})});
        p.push_back({"example1-weak-error-l1", "quartic, l1: weak error err_m, alpha = 1.5, phi = x + x^2",
                     with(ex1, {{"experiment", "weak-error"}, {"problem", "quartic1d-l1"}, {"observable", "x+x2"},
                                {"n_runs", 100000}, {"m_range", {4, 5, 6, 7, 8, 9}}})});
        p.push_back({"example1-weak-error-l1-alpha1", "quartic, l1: weak error err_m, alpha = 1, c = omega = 0",
                     with(with(ex1, alpha1), {{"experiment", "weak-error"}, {"problem", "quartic1d-l1"},
                                              {"observable", "x+x2"}, {"n_runs", 100000},
                                              {"m_range", {4, 5, 6, 7, 8, 9}}})});
        p.push_back({"example1-std-scaling", "quartic, l2: std of x_k and z_k for eps = 2^-6..2^-8 T",
                     with(ex1, {{"experiment", "fluctuation"}, {"n_runs", 10000}, {"m_range", {6, 7, 8}}})});
        p.push_back({"example1-residuals-alpha1", "quartic, l2: residual mean and std, alpha = 1",
                     with(with(ex1, alpha1),
                          {{"experiment", "residuals"}, {"n_runs", 10000}, {"m_range", {5, 6, 7, 8, 9}}})});
        p.push_back({"example1-residuals-alpha1.5", "quartic, l2: residual and alpha-residual, alpha = 1.5",
                     with(ex1, {{"experiment", "residuals"}, {"n_runs", 10000}, {"m_range", {5, 6, 7, 8, 9}}})});
        p.push_back({"example1-moments", "quartic, l2: one-step moments at x = 1, standard scheme, eps = 2^-6, 2^-7",
                     with(with(ex1, alpha1), {{"experiment", "moments"}, {"T", 1.0}, {"n_runs", 1000000},
                                              {"m_range", {6, 7}}})});
        p.push_back({"example1-moments-gradient",
                     "quartic, l2: one-step moments at x = 1, gradient-based scheme, eps = 2^-6, 2^-7",
                     with(ex1, {{"experiment", "moments"}, {"alpha", 1.0}, {"omega1", 1.0}, {"T", 1.0},
                                {"n_runs", 1000000}, {"m_range", {6, 7}}})});
        p.push_back({"example2-ridge", "ridge regression: mean of sum_i x_i against the SME, eps = T 2^-8",
                     with(ex2, {{"experiment", "compare-mean-std"}, {"epsilon", 0.15625}, {"n_runs", 400}})});
        p.push_back({"example2-ridge-std", "ridge regression: rescaled std for eps = T 2^-6..2^-8",
                     with(ex2, {{"experiment", "fluctuation"}, {"n_runs", 400}, {"m_range", {6, 7, 8}}})});
        p.push_back({"example2-lasso", "lasso regression: mean of sum_i x_i against the SME, eps = T 2^-8",
                     with(ex2, {{"experiment", "compare-mean-std"}, {"problem", "lasso"}, {"epsilon", 0.15625},
                                {"n_runs", 400}})});
        p.push_back({"example2-lasso-std", "lasso regression: rescaled std for eps = T 2^-6..2^-8",
                     with(ex2, {{"experiment", "fluctuation"}, {"problem", "lasso"}, {"n_runs", 400},
                                {"m_range", {6, 7, 8}}})});
        return p;
    }();
    return list;
}

inline const Preset& find_preset(const std::string& name)
{
    for (const auto& p : presets())
        if (p.name == name) return p;
    throw ConfigError("unknown preset '" + name + "' (see list-presets)");
}

/// One line per preset whose name contains `filter`.
inline std::string list_presets(const std::string& filter = "")
{
    std::ostringstream out;
    for (const auto& p : presets()) {
        if (!filter.empty() && p.name.find(filter) == std::string::npos) continue;
        out << p.name << "  " << p.description << "\n";
    }
    return out.str();
}

inline Json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

/// A manifest carries the resolved config under "config".
inline Json config_section(const Json& j)
{
    if (j.is_object() && j.contains("manifest_version")) {
        if (!j.contains("config")) throw ConfigError("manifest has no 'config' section");
        return j.at("config");
    }
    return j;
}

struct ConfigSources {
    std::optional<std::string> preset;
    std::optional<std::string> config_path;
    std::optional<std::string> env_seed; // value of SME_ADMM_SEED
    Json overrides = Json::object();     // command-line flags as config keys
};

inline ExperimentConfig resolve_config(const ConfigSources& src)
{
    ExperimentConfig cfg;
    if (src.preset) apply_json(cfg, find_preset(*src.preset).config);
    if (src.config_path) apply_json(cfg, config_section(read_json_file(*src.config_path)));
    if (src.env_seed) {
        try {
            const std::string& text = *src.env_seed;
            if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
                throw std::invalid_argument("not a decimal integer");
            }
            const unsigned long long s = std::stoull(text);
            cfg.seed = s;
        } catch (const std::exception&) {
            throw ConfigError("SME_ADMM_SEED = '" + *src.env_seed + "' is not a non-negative integer");
        }
    }
    apply_json(cfg, src.overrides);
    validate(cfg);
    return cfg;
}

/// CSV table with a mandatory header, 17 significant digits and '\n' line ends.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    void add_row(const std::vector<double>& row)
    {
        if (row.size() != header_.size()) throw InvalidArgument("CSV row width does not match the header");
        rows_.push_back(row);
    }

    std::size_t rows() const { return rows_.size(); }
    const std::vector<std::string>& header() const { return header_; }
    const std::vector<double>& row(std::size_t i) const { return rows_.at(i); }

    std::size_t column(const std::string& name) const
    {
        for (std::size_t i = 0; i < header_.size(); ++i)
            if (header_[i] == name) return i;
        throw InvalidArgument("CSV table has no column '" + name + "'");
    }

    std::string str() const
    {
        std::string out;
        for (std::size_t i = 0; i < header_.size(); ++i) out += (i ? "," : "") + header_[i];
        out += '\n';
        char buf[40];
        for (const auto& row : rows_) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%.17g", row[i]);
                if (i) out += ',';
                out += buf;
            }
            out += '\n';
        }
        return out;
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<double>> rows_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    out.flush();
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

struct RunOutput {
    std::map<std::string, CsvTable> tables; // file name -> table
    Json results = Json::object();
};

/// Indices of the kept time points: all of 0..last, or kMaxPathPoints of them
/// spread evenly with both endpoints.
inline std::vector<std::size_t> path_indices(std::size_t last, bool full_resolution)
{
    std::vector<std::size_t> idx;
    if (full_resolution || last + 1 <= kMaxPathPoints) {
        for (std::size_t k = 0; k <= last; ++k) idx.push_back(k);
        return idx;
    }
    for (std::size_t j = 0; j < kMaxPathPoints; ++j) {
        idx.push_back(static_cast<std::size_t>(std::llround(static_cast<double>(j) * static_cast<double>(last) /
                                                            static_cast<double>(kMaxPathPoints - 1))));
    }
    return idx;
}

namespace detail {

inline std::vector<std::string> indexed(const std::string& prefix, std::size_t d)
{
    std::vector<std::string> names;
    for (std::size_t i = 0; i < d; ++i) names.push_back(prefix + std::to_string(i));
    return names;
}

inline void append(std::vector<std::string>& a, const std::vector<std::string>& b) { a.insert(a.end(), b.begin(), b.end()); }

inline void append(std::vector<double>& a, const Vec& v) { a.insert(a.end(), v.begin(), v.end()); }

inline RunOutput run_paths(const ExperimentConfig& cfg, bool admm_side, bool sme_side)
{
    RunOutput out;
    const ProblemPtr problem = make_problem(cfg);
    const std::size_t d = problem->dim_x();
    const std::size_t dz = problem->dim_z();
    const std::size_t steps = window_count(cfg.T, cfg.epsilon);
    const std::vector<std::size_t> keep = path_indices(steps, cfg.full_resolution);
    const Vec x0 = initial_point(cfg);

    if (admm_side) {
        std::vector<std::string> header{"run", "k", "t"};
        append(header, indexed("x", d));
        append(header, indexed("z", dz));
        append(header, indexed("u", dz));
        append(header, indexed("r", dz));
        CsvTable table(header);
        const AdmmSolver solver(problem, admm_params(cfg, cfg.epsilon));
        std::vector<Trajectory> paths(cfg.n_runs);
        parallel_for(cfg.n_runs, cfg.threads, [&](std::size_t r) {
            RandomStream rng(cfg.seed, r, stream_tag(StreamKind::admm));
            paths[r] = solver.run(x0, steps, rng);
        });
        for (std::size_t r = 0; r < cfg.n_runs; ++r) {
            for (std::size_t k : keep) {
                std::vector<double> row{static_cast<double>(r), static_cast<double>(k), paths[r].times[k]};
                append(row, paths[r].xs[k]);
                append(row, paths[r].zs[k]);
                append(row, paths[r].us[k]);
                append(row, paths[r].residuals[k]);
                table.add_row(row);
            }
        }
        out.tables.emplace("paths_admm.csv", std::move(table));
    }
    if (sme_side) {
        std::vector<std::string> header{"run", "k", "t"};
        append(header, indexed("x", d));
        append(header, indexed("z", dz));
        CsvTable table(header);
        const SmeIntegrator sme(problem, sme_params(cfg, cfg.epsilon));
        std::vector<SmePath> paths(cfg.n_runs);
        std::vector<char> failed(cfg.n_runs, 0);
        parallel_for(cfg.n_runs, cfg.threads, [&](std::size_t r) {
            RandomStream rng(cfg.seed, r, stream_tag(StreamKind::sme));
            try {
                paths[r] = sme.simulate(x0, cfg.T, rng);
            } catch (const NoConvergence&) {
                failed[r] = 1;
            }
        });
        Json failed_runs = Json::array();
        for (std::size_t r = 0; r < cfg.n_runs; ++r) {
            if (failed[r]) {
                failed_runs.push_back(r);
                continue;
            }
            for (std::size_t k : keep) {
                std::vector<double> row{static_cast<double>(r), static_cast<double>(k), paths[r].times[k]};
                append(row, paths[r].xs[k]);
                append(row, paths[r].zs[k]);
                table.add_row(row);
            }
        }
        out.tables.emplace("paths_sme.csv", std::move(table));
        out.results["sme_failed_runs"] = failed_runs;
    }
    out.results["n_paths"] = cfg.n_runs;
    out.results["steps"] = steps;
    out.results["time_points_written"] = keep.size();
    return out;
}

/// Pointwise overlay check: mean gap within 3 combined stderr, std gap within
/// max(3 combined stderr, 5% of the SME std).
struct OverlayCheck {
    std::size_t points = 0;
    std::size_t mean_ok = 0;
    std::size_t std_ok = 0;
    double max_mean_z = 0.0;
};

inline OverlayCheck overlay_check(const StatSeries& admm, const StatSeries& sme)
{
    OverlayCheck c;
    for (std::size_t k = 1; k < admm.mean.size(); ++k) {
        ++c.points;
        const double se_mean = std::hypot(admm.stderr_mean[k], sme.stderr_mean[k]);
        const double gap = std::abs(admm.mean[k] - sme.mean[k]);
        if (gap <= 3.0 * se_mean) ++c.mean_ok;
        if (se_mean > 0.0) c.max_mean_z = std::max(c.max_mean_z, gap / se_mean);
        const double se_std = std::hypot(admm.stderr_std[k], sme.stderr_std[k]);
        if (std::abs(admm.std[k] - sme.std[k]) <= std::max(3.0 * se_std, 0.05 * sme.std[k])) ++c.std_ok;
    }
    return c;
}

inline RunOutput run_compare(const ExperimentConfig& cfg)
{
    const ProblemPtr problem = make_problem(cfg);
    const PairedSetup setup{problem, admm_params(cfg, cfg.epsilon), sme_params(cfg, cfg.epsilon),
                            initial_point(cfg), cfg.T};
    const Observable phi = parse_observable(cfg.observable, problem->dim_x());
    const PairedStats s = paired_ensemble(setup, phi, cfg.n_runs, cfg.seed, cfg.threads);

    RunOutput out;
    CsvTable table({"t", "mean_admm", "std_admm", "mean_sme", "std_sme", "stderr_admm", "stderr_sme"});
    for (std::size_t k = 0; k < s.admm_x.times.size(); ++k) {
        table.add_row({s.admm_x.times[k], s.admm_x.mean[k], s.admm_x.std[k], s.sme_x.mean[k], s.sme_x.std[k],
                       s.admm_x.stderr_mean[k], s.sme_x.stderr_mean[k]});
    }
    out.tables.emplace("mean_std.csv", std::move(table));
    CsvTable ztable({"t", "mean_admm", "std_admm", "mean_sme", "std_sme", "stderr_admm", "stderr_sme"});
    for (std::size_t k = 0; k < s.admm_z.times.size(); ++k) {
        ztable.add_row({s.admm_z.times[k], s.admm_z.mean[k], s.admm_z.std[k], s.sme_z.mean[k], s.sme_z.std[k],
                        s.admm_z.stderr_mean[k], s.sme_z.stderr_mean[k]});
    }
    out.tables.emplace("mean_std_z.csv", std::move(ztable));

    const OverlayCheck c = overlay_check(s.admm_x, s.sme_x);
    out.results["time_points"] = c.points;
    out.results["mean_within_3se"] = c.mean_ok;
    out.results["std_within_tolerance"] = c.std_ok;
    out.results["max_mean_gap_in_se"] = c.max_mean_z;
    out.results["sme_failed_runs"] = s.sme_x.n_failed;
    return out;
}

inline RunOutput run_weak_error(const ExperimentConfig& cfg)
{
    const ProblemPtr problem = make_problem(cfg);
    const Observable phi = parse_observable(cfg.observable, problem->dim_x());
    const WeakErrorTable t = weak_error(problem, admm_params(cfg, cfg.epsilon), sme_params(cfg, cfg.epsilon), phi,
                                        initial_point(cfg), cfg.T, cfg.m_range, cfg.n_runs, cfg.seed, cfg.threads);
    RunOutput out;
    CsvTable table({"m", "epsilon", "err", "stderr", "failed_runs"});
    Json used = Json::array();
    for (std::size_t i = 0; i < t.m_values.size(); ++i) {
        table.add_row({static_cast<double>(t.m_values[i]), t.epsilons[i], t.errors[i], t.stderrs[i],
                       static_cast<double>(t.failed_runs[i])});
        if (t.used_in_fit[i]) used.push_back(t.m_values[i]);
    }
    out.tables.emplace("weak_error.csv", std::move(table));
    out.results["fitted_order"] = std::isfinite(t.fitted_order) ? Json(t.fitted_order) : Json(nullptr);
    out.results["m_used_in_fit"] = used;
    out.results["noise_bound_ok"] = t.noise_bound_ok;
    return out;
}

inline Json order_json(double p) { return std::isfinite(p) ? Json(p) : Json(nullptr); }

inline RunOutput run_fluctuation(const ExperimentConfig& cfg)
{
    const ProblemPtr problem = make_problem(cfg);
    const Observable phi = parse_observable(cfg.observable, problem->dim_x());
    RunOutput out;
    CsvTable table({"m", "epsilon", "t", "std_x", "std_z", "std_x_sme", "scaled_std_x", "scaled_std_z",
                    "scaled_std_x_sme", "stderr_std_x", "stderr_std_z", "stderr_std_x_sme", "mean_x", "mean_x_sme",
                    "stderr_mean_x", "stderr_mean_x_sme"});
    std::map<double, TimeSeries> sx, sz;
    std::size_t failed = 0;
    for (int m : cfg.m_range) {
        const double eps = level_epsilon(cfg, m);
        const PairedSetup setup{problem, admm_params(cfg, eps), sme_params(cfg, eps), initial_point(cfg), cfg.T};
        const PairedStats s =
            paired_ensemble(setup, phi, cfg.n_runs, cfg.seed, cfg.threads, static_cast<std::uint32_t>(m));
        const double root = std::sqrt(eps);
        for (std::size_t k = 0; k < s.admm_x.times.size(); ++k) {
            table.add_row({static_cast<double>(m), eps, s.admm_x.times[k], s.admm_x.std[k], s.admm_z.std[k],
                           s.sme_x.std[k], s.admm_x.std[k] / root, s.admm_z.std[k] / root, s.sme_x.std[k] / root,
                           s.admm_x.stderr_std[k], s.admm_z.stderr_std[k], s.sme_x.stderr_std[k], s.admm_x.mean[k],
                           s.sme_x.mean[k], s.admm_x.stderr_mean[k], s.sme_x.stderr_mean[k]});
        }
        sx[eps] = std_curve(s.admm_x);
        sz[eps] = std_curve(s.admm_z);
        failed += s.sme_x.n_failed;
    }
    out.tables.emplace("fluctuation.csv", std::move(table));
    out.results["sme_failed_runs"] = failed;
    if (sx.size() >= 3) {
        out.results["order_std_x"] = order_json(scaling_order(sx, ScalingMode::sup_ratio));
        out.results["order_std_z"] = order_json(scaling_order(sz, ScalingMode::sup_ratio));
        out.results["order_std_x_loglog"] = order_json(scaling_order(sx, ScalingMode::loglog_fit));
        out.results["order_std_z_loglog"] = order_json(scaling_order(sz, ScalingMode::loglog_fit));
    }
    return out;
}

inline RunOutput run_residuals(const ExperimentConfig& cfg)
{
    const ProblemPtr problem = make_problem(cfg);
    RunOutput out;
    CsvTable rtable({"m", "epsilon", "t", "mean_r", "std_r", "scaled_mean_r", "scaled_std_r"});
    CsvTable atable({"m", "epsilon", "t", "mean_rhat", "std_rhat", "scaled_mean_rhat", "scaled_std_rhat",
                     "mean_ralpha", "std_ralpha"});
    std::map<double, TimeSeries> rm, rs, hm, hs, am, as;
    int power = 1;
    for (int m : cfg.m_range) {
        const double eps = level_epsilon(cfg, m);
        const ResidualStats st = residual_ensemble(problem, admm_params(cfg, eps), initial_point(cfg), cfg.T,
                                                   cfg.n_runs, cfg.seed, cfg.threads, static_cast<std::uint32_t>(m));
        const ResidualReport rep = residual_report(st, cfg.alpha, eps);
        power = rep.scale_power;
        for (std::size_t k = 0; k < rep.times.size(); ++k) {
            rtable.add_row({static_cast<double>(m), eps, rep.times[k], st.residual.mean[k], st.residual.std[k],
                            rep.scaled_mean[k], rep.scaled_std[k]});
        }
        for (std::size_t k = 0; k < rep.alpha_times.size(); ++k) {
            atable.add_row({static_cast<double>(m), eps, rep.alpha_times[k], st.alpha_residual.mean[k],
                            st.alpha_residual.std[k], rep.alpha_scaled_mean[k], rep.alpha_scaled_std[k],
                            st.relaxed_residual.mean[k], st.relaxed_residual.std[k]});
        }
        rm[eps] = mean_curve(st.residual);
        rs[eps] = std_curve(st.residual);
        hm[eps] = mean_curve(st.alpha_residual);
        hs[eps] = std_curve(st.alpha_residual);
        am[eps] = mean_curve(st.relaxed_residual);
        as[eps] = std_curve(st.relaxed_residual);
    }
    out.tables.emplace("residuals.csv", std::move(rtable));
    out.tables.emplace("alpha_residuals.csv", std::move(atable));
    out.results["scale_power"] = power;
    auto order = [](const std::map<double, TimeSeries>& s) -> Json {
        try {
            return order_json(scaling_order(s, ScalingMode::sup_ratio));
        } catch (const InsufficientData&) {
            return Json(nullptr);
        }
    };
    out.results["order_mean_r"] = order(rm);
    out.results["order_std_r"] = order(rs);
    out.results["order_mean_rhat"] = order(hm);
    out.results["order_std_rhat"] = order(hs);
    out.results["order_mean_ralpha"] = order(am);
    out.results["order_std_ralpha"] = order(as);
    return out;
}

inline RunOutput run_moments(const ExperimentConfig& cfg)
{
    const ProblemPtr problem = make_problem(cfg);
    const std::size_t d = problem->dim_x();
    const Vec x = initial_point(cfg);
    RunOutput out;
    CsvTable table({"m", "epsilon", "i", "j", "mean_delta_i", "predicted_mean_i", "mean_stderr_i", "second_moment",
                    "covariance", "predicted_covariance", "covariance_stderr", "third_moment_max"});
    Json levels = Json::array();
    std::vector<double> remainders;
    for (int m : cfg.m_range) {
        const double eps = level_epsilon(cfg, m);
        const OneStepMoments mo = one_step_moments(problem, admm_params(cfg, eps), x, cfg.n_runs, cfg.seed, cfg.threads);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                table.add_row({static_cast<double>(m), eps, static_cast<double>(i), static_cast<double>(j),
                               mo.mean_delta[i], mo.predicted_mean[i], mo.mean_stderr[i], mo.second_moment(i, j),
                               mo.covariance(i, j), mo.predicted_covariance(i, j), mo.covariance_stderr(i, j),
                               mo.third_moment_max});
            }
        }
        const double rem = norm(mo.mean_delta - mo.predicted_mean);
        remainders.push_back(rem);
        double max_cov_z = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double gap = std::abs(mo.covariance(i, j) - mo.predicted_covariance(i, j));
                const double se = mo.covariance_stderr(i, j);
                max_cov_z = std::max(max_cov_z, se > 0.0 ? gap / se : (gap > 0.0 ? INFINITY : 0.0));
            }
        levels.push_back({{"m", m},
                          {"epsilon", eps},
                          {"mean_remainder", rem},
                          {"mean_remainder_over_eps2", rem / (eps * eps)},
                          {"max_covariance_gap_in_se", order_json(max_cov_z)},
                          {"third_moment_max_over_eps3", mo.third_moment_max / (eps * eps * eps)}});
    }
    out.tables.emplace("moments.csv", std::move(table));
    out.results["levels"] = levels;
    Json ratios = Json::array();
    for (std::size_t i = 1; i < remainders.size(); ++i) {
        ratios.push_back(remainders[i] > 0.0 ? Json(remainders[i - 1] / remainders[i]) : Json(nullptr));
    }
    out.results["remainder_ratios"] = ratios;
    return out;
}

} // namespace detail

/// Runs the experiment in memory.
inline RunOutput execute(const ExperimentConfig& cfg)
{
    validate(cfg);
    if (cfg.experiment == "run-admm") return detail::run_paths(cfg, true, cfg.with_sme);
    if (cfg.experiment == "run-sme") return detail::run_paths(cfg, false, true);
    if (cfg.experiment == "compare-mean-std") return detail::run_compare(cfg);
    if (cfg.experiment == "weak-error") return detail::run_weak_error(cfg);
    if (cfg.experiment == "fluctuation") return detail::run_fluctuation(cfg);
    if (cfg.experiment == "residuals") return detail::run_residuals(cfg);
    return detail::run_moments(cfg);
}

inline Json make_manifest(const ExperimentConfig& cfg, const RunOutput& out)
{
    Json m;
    m["manifest_version"] = 1;
    m["tool"] = kToolName;
    m["version"] = kToolVersion;
    m["seed"] = cfg.seed;
    m["config"] = to_json(cfg);
    Json files = Json::array();
    for (const auto& [name, table] : out.tables) files.push_back(name);
    m["files"] = files;
    m["results"] = out.results;
    return m;
}

/// Runs the experiment and writes {output_dir}/manifest.json and the CSVs.
inline Json run(const ExperimentConfig& cfg)
{
    const RunOutput out = execute(cfg);
    const std::filesystem::path dir(cfg.output_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + cfg.output_dir + "': " + ec.message());
    for (const auto& [name, table] : out.tables) write_text(dir / name, table.str());
    const Json manifest = make_manifest(cfg, out);
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
}

} // namespace smeadmm
