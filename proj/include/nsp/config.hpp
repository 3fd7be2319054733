#pragma once

// Tool configuration. INI-style text: `[section]` headers, `key = value`
// lines, `#` comments. Every key can be overridden on the command line with
// `--set section.key=value`. Rational-valued keys take `p/q` or integer
// literals; real-valued keys additionally take decimals.

#include <nsp/logic.hpp>
#include <nsp/simulate.hpp>
#include <nsp/train.hpp>
#include <nsp/verifier.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nsp {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// every module seed derives from [run] seed by a fixed offset, one knob total
inline constexpr std::uint64_t kSweepSeedOffset = 500000;    // falsification sweep
inline constexpr std::uint64_t kDistillSeedOffset = 700000;  // distillation dataset
inline constexpr std::uint64_t kSatSeedOffset = 900000;      // satisfaction sampling

struct ToolConfig {
    // [paths]
    std::string spec_path;
    std::string network_path;
    std::string embedding_path;
    std::string output_dir = "out";
    bool trust_floats = false;  // adopt exact binary values of float literals

    // [logic]
    LogicConfig logic;

    // [train]
    TrainConfig train;
    std::vector<int> hidden = {8};  // widths between the declared in/out dims

    // [verifier]
    BnbLimits verifier;

    // [sim]
    SimConfig sim;

    // [run]
    std::uint64_t seed = 0;
    int sweep_runs = 100;
    int satisfaction_samples = 10000;
    std::string property;          // verified network-space property
    std::string train_property;    // trained property; empty = same as `property`
    std::string problem_property;  // bridged problem-space property
    bool distill = false;          // add a regression pull toward distill_target
    Rat distill_target;
    int distill_samples = 256;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline Rat as_rat(const std::string& key, const std::string& v) {
    try {
        return parse_rational(v);  // same literal forms as the spec language
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a rational like 3, 0.5, or -1/2, got '" + v + "'");
    }
}

inline double as_double(const std::string& key, const std::string& v) {
    try {
        if (v.find('/') != std::string::npos) return to_double(parse_rational(v));
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

inline long as_long(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long n = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

inline bool as_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::uint64_t as_seed(const std::string& key, const std::string& v) {
    // stoull silently wraps negative input, so insist on digits up front
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
    }
}

inline std::vector<int> as_widths(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        long w = as_long(key, part);
        if (w < 1 || w > 1024) throw ConfigError(key + ": width out of range: " + part);
        out.push_back((int)w);
    }
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated width list");
    return out;
}

}  // namespace config_detail

// applies one key; shared by the file parser and --set overrides
inline void config_set(ToolConfig& cfg, const std::string& section, const std::string& key,
                       const std::string& value) {
    using namespace config_detail;
    std::string full = section + "." + key;
    if (section == "paths") {
        if (key == "spec") cfg.spec_path = value;
        else if (key == "network") cfg.network_path = value;
        else if (key == "embedding") cfg.embedding_path = value;
        else if (key == "output") cfg.output_dir = value;
        else if (key == "trust_floats") cfg.trust_floats = as_bool(full, value);
        else throw ConfigError("unknown key " + full);
    } else if (section == "logic") {
        if (key == "logic") {
            if (value == "godel") cfg.logic.logic = Logic::Godel;
            else if (value == "lukasiewicz") cfg.logic.logic = Logic::Lukasiewicz;
            else if (value == "lawvere") cfg.logic.logic = Logic::LawvereLoss;
            else throw ConfigError(full + ": expected godel, lukasiewicz, or lawvere");
        } else if (key == "quant") {
            if (value == "minmax") cfg.logic.quant = QuantMode::MinMax;
            else if (value == "pmean") cfg.logic.quant = QuantMode::PMean;
            else throw ConfigError(full + ": expected minmax or pmean");
        } else if (key == "p") cfg.logic.p = as_double(full, value);
        else if (key == "tau") cfg.logic.tau = as_rat(full, value);
        else if (key == "samples") cfg.logic.sample_count = (int)as_long(full, value);
        else if (key == "mul_and") cfg.logic.lawvere_mul_and = as_bool(full, value);
        else throw ConfigError("unknown key " + full);
    } else if (section == "train") {
        if (key == "learning_rate") cfg.train.learning_rate = as_double(full, value);
        else if (key == "epochs") cfg.train.epochs = (int)as_long(full, value);
        else if (key == "batch") cfg.train.batch = (int)as_long(full, value);
        else if (key == "regression_weight") cfg.train.regression_weight = as_double(full, value);
        else if (key == "init_scale") cfg.train.init_scale = as_double(full, value);
        else if (key == "hidden") cfg.hidden = as_widths(full, value);
        else throw ConfigError("unknown key " + full);
    } else if (section == "verifier") {
        if (key == "max_splits") cfg.verifier.max_splits = as_long(full, value);
        else if (key == "timeout") cfg.verifier.timeout_sec = as_double(full, value);
        else throw ConfigError("unknown key " + full);
    } else if (section == "sim") {
        if (key == "B") cfg.sim.B = as_rat(full, value);
        else if (key == "control_period") cfg.sim.control_period = as_rat(full, value);
        else if (key == "step") cfg.sim.step = as_rat(full, value);
        else if (key == "horizon") cfg.sim.horizon = as_rat(full, value);
        else if (key == "p0") cfg.sim.p0 = as_rat(full, value);
        else if (key == "v0") cfg.sim.v0 = as_rat(full, value);
        else if (key == "v_min") cfg.sim.v_min = as_rat(full, value);
        else if (key == "v_max") cfg.sim.v_max = as_rat(full, value);
        else if (key == "p_min") cfg.sim.p_min = as_rat(full, value);
        else if (key == "p_max") cfg.sim.p_max = as_rat(full, value);
        else if (key == "stop_braking_at_zero")
            cfg.sim.stop_braking_at_zero = as_bool(full, value);
        else throw ConfigError("unknown key " + full);
    } else if (section == "run") {
        if (key == "seed") cfg.seed = as_seed(full, value);
        else if (key == "sweep_runs") cfg.sweep_runs = (int)as_long(full, value);
        else if (key == "satisfaction_samples")
            cfg.satisfaction_samples = (int)as_long(full, value);
        else if (key == "property") cfg.property = value;
        else if (key == "train_property") cfg.train_property = value;
        else if (key == "problem_property") cfg.problem_property = value;
        else if (key == "distill_target") {
            cfg.distill = true;
            cfg.distill_target = as_rat(full, value);
        } else if (key == "distill_samples") cfg.distill_samples = (int)as_long(full, value);
        else throw ConfigError("unknown key " + full);
    } else {
        throw ConfigError("unknown section [" + section + "]");
    }
}

inline ToolConfig parse_config(const std::string& text) {
    using namespace config_detail;
    ToolConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (section.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        config_set(cfg, section, key, value);
    }
    return cfg;
}

inline ToolConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// `--set section.key=value`
inline void apply_override(ToolConfig& cfg, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    std::string path = config_detail::trim(assignment.substr(0, eq));
    std::string value = config_detail::trim(assignment.substr(eq + 1));
    size_t dot = path.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == path.size())
        throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    config_set(cfg, path.substr(0, dot), path.substr(dot + 1), value);
}

}  // namespace nsp
