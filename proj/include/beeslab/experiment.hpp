#pragma once

// Experiment configuration (strict JSON schema: unknown keys fatal, all
// violations reported at once), orchestration of the other modules, and
// manifest emission.  All randomness flows from the config's seed list.

#include "beeslab/brw.hpp"
#include "beeslab/couplings.hpp"
#include "beeslab/csv.hpp"
#include "beeslab/engine.hpp"
#include "beeslab/errors.hpp"
#include "beeslab/fbp.hpp"
#include "beeslab/statistics.hpp"
#include "beeslab/version.hpp"

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace beeslab::experiment {

using nlohmann::json;

enum class Command { Simulate, Couple, Velocity, Regimes, Critical, Brw, Fbp, Sweep };

inline const std::map<std::string, Command>& command_names() {
    static const std::map<std::string, Command> names = {
        {"simulate", Command::Simulate}, {"couple", Command::Couple},
        {"velocity", Command::Velocity}, {"regimes", Command::Regimes},
        {"critical", Command::Critical}, {"brw", Command::Brw},
        {"fbp", Command::Fbp},           {"sweep", Command::Sweep},
    };
    return names;
}

struct ExperimentConfig {
    Command command = Command::Simulate;
    std::string command_name = "simulate";
    std::vector<std::uint64_t> seeds;
    std::string output_dir = "out";
    json params; // command block with defaults filled
};

// ---------------------------------------------------------------------------
// Schema checking: every accessor records the key as known, pushes one issue
// per violation, and fills the echoed/defaulted value into `out`.

namespace detail {

struct Schema {
    const json& src;
    std::string scope;
    std::vector<std::string>& issues;
    json out = json::object();
    std::set<std::string> seen;

    void issue(const std::string& key, const std::string& what) {
        issues.push_back(scope + "." + key + ": " + what);
    }

    bool present(const std::string& key, bool required) {
        seen.insert(key);
        if (src.contains(key)) return true;
        if (required) issue(key, "required key missing");
        return false;
    }

    double num(const std::string& key, bool required, double def, const char* constraint,
               const std::function<bool(double)>& ok) {
        if (!present(key, required)) {
            if (!required) out[key] = def;
            return def;
        }
        if (!src.at(key).is_number()) {
            issue(key, "must be a number");
            return def;
        }
        const double v = src.at(key).get<double>();
        if (ok && !ok(v)) {
            issue(key, constraint);
            return def;
        }
        out[key] = v;
        return v;
    }

    long long integer(const std::string& key, bool required, long long def,
                      const char* constraint, const std::function<bool(long long)>& ok) {
        if (!present(key, required)) {
            if (!required) out[key] = def;
            return def;
        }
        if (!src.at(key).is_number_integer()) {
            issue(key, "must be an integer");
            return def;
        }
        const long long v = src.at(key).get<long long>();
        if (ok && !ok(v)) {
            issue(key, constraint);
            return def;
        }
        out[key] = v;
        return v;
    }

    std::string choice(const std::string& key, bool required, const std::string& def,
                       const std::set<std::string>& allowed) {
        if (!present(key, required)) {
            if (!required) out[key] = def;
            return def;
        }
        if (!src.at(key).is_string()) {
            issue(key, "must be a string");
            return def;
        }
        const std::string v = src.at(key).get<std::string>();
        if (!allowed.count(v)) {
            std::string what = "must be one of {";
            for (const auto& a : allowed) what += a + ",";
            what.back() = '}';
            issue(key, what);
            return def;
        }
        out[key] = v;
        return v;
    }

    std::vector<double> num_array(const std::string& key, bool required,
                                  std::vector<double> def, const char* constraint,
                                  const std::function<bool(double)>& ok) {
        if (!present(key, required)) {
            if (!required) out[key] = def;
            return def;
        }
        if (!src.at(key).is_array()) {
            issue(key, "must be an array of numbers");
            return def;
        }
        std::vector<double> v;
        for (const auto& e : src.at(key)) {
            if (!e.is_number()) {
                issue(key, "must be an array of numbers");
                return def;
            }
            v.push_back(e.get<double>());
            if (ok && !ok(v.back())) {
                issue(key, constraint);
                return def;
            }
        }
        if (v.empty()) {
            issue(key, "must be nonempty");
            return def;
        }
        out[key] = v;
        return v;
    }

    void finish() {
        for (const auto& item : src.items())
            if (!seen.count(item.key())) issue(item.key(), "unknown key");
    }
};

inline const auto positive = [](double v) { return v > 0; };
inline const auto finite = [](double v) { return std::isfinite(v); };

inline json validate_params(Command cmd, const json& p, std::vector<std::string>& issues) {
    Schema s{p, "params", issues};
    switch (cmd) {
        case Command::Simulate: {
            s.choice("kind", false, "nbbm", {"nbbm", "bees"});
            const auto n = s.integer("n", true, 1, "must be >= 1",
                                     [](long long v) { return v >= 1; });
            s.num("mu", true, 0.0, "must be finite", finite);
            s.num("horizon", true, 1.0, "must be > 0", positive);
            s.num("sub_step", false, 0.01, "must be > 0", positive);
            s.choice("record", false, "grid", {"track", "grid", "full"});
            auto initial = s.num_array("initial", false,
                                       std::vector<double>(static_cast<std::size_t>(n), 0.0),
                                       "entries must be finite", finite);
            if (p.contains("initial") && initial.size() != static_cast<std::size_t>(n))
                s.issue("initial", "must have exactly n entries");
            s.out["initial"] = initial;
            break;
        }
        case Command::Couple: {
            const auto coupling = s.choice("coupling", true, "monotone", {"monotone", "abs"});
            const double mu = s.num("mu", true, 0.0, "must be finite", finite);
            s.num("horizon", true, 1.0, "must be > 0", positive);
            s.num("sub_step", false, 0.01, "must be > 0", positive);
            s.num_array("nu", true, {}, "entries must be finite", finite);
            if (coupling == "monotone")
                s.num_array("nu_prime", true, {}, "entries must be finite", finite);
            else {
                s.num_array("nu_tilde", true, {}, "entries must be finite", finite);
                if (mu > 0) s.issue("mu", "abs coupling requires mu <= 0");
            }
            break;
        }
        case Command::Velocity: {
            s.choice("kind", false, "nbbm", {"nbbm", "bees"});
            auto ns = s.num_array("n_list", true, {}, "entries must be integers >= 2",
                                  [](double v) { return v >= 2 && v == std::floor(v); });
            (void)ns;
            s.num("mu", false, 0.0, "must be finite", finite);
            const double horizon = s.num("horizon", true, 1.0, "must be > 0", positive);
            s.num("sub_step", false, 0.01, "must be > 0", positive);
            const double tb = s.num("t_burn", false, 0.1 * horizon, "must be >= 0",
                                    [](double v) { return v >= 0; });
            if (!(tb < horizon)) s.issue("t_burn", "must be < horizon");
            break;
        }
        case Command::Regimes:
        case Command::Sweep: {
            if (cmd == Command::Regimes)
                s.integer("n", true, 2, "must be >= 2", [](long long v) { return v >= 2; });
            else
                s.num_array("n_list", true, {}, "entries must be integers >= 2",
                            [](double v) { return v >= 2 && v == std::floor(v); });
            const double horizon = s.num("horizon", true, 1.0, "must be > 0", positive);
            s.num("sub_step", false, 0.01, "must be > 0", positive);
            const double tb = s.num("t_burn", false, 0.1 * horizon, "must be >= 0",
                                    [](double v) { return v >= 0; });
            if (!(tb < horizon)) s.issue("t_burn", "must be < horizon");
            s.num_array("mu_factors", false, {0.0, 0.5, -0.5, 1.5, -1.5},
                        "entries must be finite", finite);
            // No default: absence means "calibrate mu_c from the N-BBM runs".
            if (p.contains("mu_c_hat"))
                s.num("mu_c_hat", true, 0.0, "must be > 0", [](double v) { return v > 0; });
            break;
        }
        case Command::Critical: {
            s.integer("n", true, 2, "must be >= 2", [](long long v) { return v >= 2; });
            s.num("m", true, 100.0, "must be > 0", positive);
            s.num("sub_step", false, 0.01, "must be > 0", positive);
            s.num_array("mu_signs", false, {1.0, -1.0}, "entries must be +1 or -1",
                        [](double v) { return v == 1.0 || v == -1.0; });
            if (p.contains("mu_c_hat"))
                s.num("mu_c_hat", true, 0.0, "must be > 0", [](double v) { return v > 0; });
            s.num("calibration_horizon", false, 200.0, "must be > 0", positive);
            break;
        }
        case Command::Brw: {
            s.integer("n", true, 2, "must be >= 2", [](long long v) { return v >= 2; });
            s.num("mu", false, 0.0, "must be finite", finite);
            s.num("delta", false, 0.5, "must be > 0", positive);
            const double horizon = s.num("horizon", false, 300.0, "must be > 0", positive);
            s.num("sub_step", false, 0.01, "must be > 0", positive);
            const double tb = s.num("t_burn", false, 0.1 * horizon, "must be >= 0",
                                    [](double v) { return v >= 0; });
            if (!(tb < horizon)) s.issue("t_burn", "must be < horizon");
            break;
        }
        case Command::Fbp: {
            const double L = s.num("L", false, 4.0, "must be > 0", positive);
            const double h = s.num("h", true, 0.005, "must be > 0", positive);
            s.num("dt", false, h * h, "must be > 0", positive);
            s.num("mu", false, 0.0, "must be finite", finite);
            s.num("T", true, 1.0, "must be > 0", positive);
            const double ihw = s.num("initial_half_width", false, 0.5, "must be > 0", positive);
            if (!(ihw < L)) s.issue("initial_half_width", "must be < L");
            s.integer("snapshot_stride", false, 0, "must be >= 0",
                      [](long long v) { return v >= 0; });
            s.integer("n", false, 0, "must be >= 0", [](long long v) { return v >= 0; });
            s.num("particle_horizon", false, 50.0, "must be > 0", positive);
            s.num("particle_sub_step", false, 0.01, "must be > 0", positive);
            break;
        }
    }
    s.finish();
    return s.out;
}

} // namespace detail

// Parse and validate a JSON config document.  Reports every violation, not
// just the first.
inline ExperimentConfig parse_config(const std::string& source) {
    json j;
    try {
        j = json::parse(source);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: document must be a JSON object");

    std::vector<std::string> issues;
    ExperimentConfig cfg;
    const std::set<std::string> top_known = {"command", "seeds", "output_dir", "params"};
    for (const auto& item : j.items())
        if (!top_known.count(item.key())) issues.push_back(item.key() + ": unknown key");

    if (!j.contains("command") || !j.at("command").is_string() ||
        !command_names().count(j.at("command").get<std::string>())) {
        issues.push_back("command: required, one of {simulate, couple, velocity, regimes, "
                         "critical, brw, fbp, sweep}");
    } else {
        cfg.command_name = j.at("command").get<std::string>();
        cfg.command = command_names().at(cfg.command_name);
    }

    if (!j.contains("seeds") || !j.at("seeds").is_array() || j.at("seeds").empty()) {
        issues.push_back("seeds: required nonempty array of unsigned 64-bit integers");
    } else {
        for (const auto& e : j.at("seeds")) {
            if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<long long>() >= 0)) {
                issues.push_back("seeds: entries must be nonnegative integers");
                break;
            }
            cfg.seeds.push_back(e.get<std::uint64_t>());
        }
    }

    if (j.contains("output_dir")) {
        if (!j.at("output_dir").is_string())
            issues.push_back("output_dir: must be a string");
        else
            cfg.output_dir = j.at("output_dir").get<std::string>();
    }

    if (!j.contains("params") || !j.at("params").is_object())
        issues.push_back("params: required object");
    else if (issues.empty() || j.contains("command"))
        cfg.params = detail::validate_params(cfg.command, j.at("params"), issues);

    if (!issues.empty()) {
        std::string msg = "config validation failed:";
        for (const auto& s : issues) msg += "\n  - " + s;
        throw ConfigError(msg);
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Execution

struct RunManifest {
    json doc;
};

namespace detail {

// Bounded worker pool; results must go into preallocated index slots so the
// outcome is independent of scheduling.
template <class Fn>
inline void for_each_index(int jobs, std::size_t count, const Fn& fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mtx;
    std::exception_ptr first_error;
    const auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mtx);
                if (!first_error) first_error = std::current_exception();
                next.store(count);
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
    pool.reserve(k);
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

struct OutputSink {
    std::filesystem::path dir;
    json outputs = json::array();

    void write(const std::string& name, const std::string& content) {
        const auto p = dir / name;
        std::ofstream os(p, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write output file: " + p.string());
        os << content;
        if (!os) throw std::runtime_error("write failed: " + p.string());
        os.close();
        char hex[20];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(csv::fnv1a64(content)));
        outputs.push_back(json{{"file", name}, {"fnv1a64", hex}});
    }
};

inline engine::Kind kind_from(const std::string& name) {
    return name == "bees" ? engine::Kind::Bees : engine::Kind::NBBM;
}

inline engine::SimParams sim_params(int n, double mu, double horizon, double sub_step,
                                    std::uint64_t seed) {
    engine::SimParams sp;
    sp.n_particles = n;
    sp.drift = mu;
    sp.horizon = horizon;
    sp.sub_step = sub_step;
    sp.seed = seed;
    sp.replica = 0;
    return sp;
}

// Pooled velocity of `kind` at the given drift across all seeds.
inline stats::PooledVelocity pooled_velocity(engine::Kind kind, int n, double mu,
                                             double horizon, double sub_step, double t_burn,
                                             const std::vector<std::uint64_t>& seeds,
                                             int jobs) {
    std::vector<stats::VelocityEstimate> per(seeds.size());
    for_each_index(jobs, seeds.size(), [&](std::size_t i) {
        const auto params = sim_params(n, mu, horizon, sub_step, seeds[i]);
        const Configuration initial(static_cast<std::size_t>(n), 0.0);
        const auto traj =
            engine::simulate(kind, params, initial, engine::RecordLevel::Track);
        per[i] = stats::estimate_velocity(traj, t_burn);
    });
    return stats::pool_velocities(per);
}

} // namespace detail

namespace handlers {

inline json cmd_simulate(const ExperimentConfig& cfg, detail::OutputSink& sink, int jobs) {
    const auto& p = cfg.params;
    const auto kind = detail::kind_from(p.at("kind").get<std::string>());
    const int n = p.at("n").get<int>();
    const auto level = p.at("record").get<std::string>() == "track"
                           ? engine::RecordLevel::Track
                           : (p.at("record").get<std::string>() == "full"
                                  ? engine::RecordLevel::Full
                                  : engine::RecordLevel::Grid);
    const Configuration initial = p.at("initial").get<Configuration>();
    std::vector<std::string> files(cfg.seeds.size());
    std::vector<json> rows(cfg.seeds.size());
    std::vector<std::string> bodies(cfg.seeds.size());
    detail::for_each_index(jobs, cfg.seeds.size(), [&](std::size_t i) {
        const auto params = detail::sim_params(n, p.at("mu").get<double>(),
                                               p.at("horizon").get<double>(),
                                               p.at("sub_step").get<double>(), cfg.seeds[i]);
        const auto traj = engine::simulate(kind, params, initial, level);
        std::ostringstream os;
        csv::write_trajectory_csv(os, traj);
        bodies[i] = os.str();
        files[i] = "traj_" + std::to_string(cfg.seeds[i]) + ".csv";
        rows[i] = json{{"seed", cfg.seeds[i]},
                       {"events", traj.events.size()},
                       {"final_min", traj.final_config.front()},
                       {"final_max", traj.final_config.back()}};
    });
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) sink.write(files[i], bodies[i]);
    return json{{"replicas", rows}};
}

inline json cmd_couple(const ExperimentConfig& cfg, detail::OutputSink& sink, int jobs) {
    const auto& p = cfg.params;
    const bool monotone = p.at("coupling").get<std::string>() == "monotone";
    const double mu = p.at("mu").get<double>();
    const double horizon = p.at("horizon").get<double>();
    const double sub_step = p.at("sub_step").get<double>();
    const Configuration nu = p.at("nu").get<Configuration>();

    struct Item {
        std::vector<std::pair<std::string, std::string>> files;
        std::size_t violations = 0;
        json row;
    };
    std::vector<Item> items(cfg.seeds.size());
    detail::for_each_index(jobs, cfg.seeds.size(), [&](std::size_t i) {
        const auto seed = cfg.seeds[i];
        const auto tag = std::to_string(seed);
        auto& item = items[i];
        const auto dump = [&item](const std::string& name, const engine::Trajectory& tr) {
            std::ostringstream os;
            csv::write_trajectory_csv(os, tr);
            item.files.emplace_back(name, os.str());
        };
        if (monotone) {
            const Configuration nup = p.at("nu_prime").get<Configuration>();
            const auto drivers =
                engine::make_driver_bundle(seed, static_cast<int>(nup.size()));
            const auto run = couplings::coupled_simulate_monotone(nu, nup, mu, horizon,
                                                                  drivers, sub_step,
                                                                  engine::RecordLevel::Grid);
            dump("bees_" + tag + ".csv", run.bees);
            dump("bbm_low_" + tag + ".csv", run.bbm_low);
            dump("bbm_high_" + tag + ".csv", run.bbm_high);
            std::ostringstream vs;
            csv::write_violations_csv(vs, run.violations);
            item.files.emplace_back("violations_" + tag + ".csv", vs.str());
            item.violations = run.violations.size();
            item.row = json{{"seed", seed}, {"violations", run.violations.size()}};
        } else {
            const Configuration nut = p.at("nu_tilde").get<Configuration>();
            const auto drivers = engine::make_driver_bundle(seed, static_cast<int>(nu.size()));
            const auto run = couplings::coupled_simulate_abs(nu, nut, mu, horizon, drivers,
                                                             sub_step,
                                                             engine::RecordLevel::Grid);
            dump("bees_" + tag + ".csv", run.bees);
            dump("bbm_" + tag + ".csv", run.bbm);
            std::ostringstream vs;
            csv::write_violations_csv(vs, run.violations);
            item.files.emplace_back("violations_" + tag + ".csv", vs.str());
            item.violations = run.violations.size();
            item.row = json{{"seed", seed},
                            {"violations", run.violations.size()},
                            {"T", run.T ? json(*run.T) : json()}};
        }
    });
    std::size_t total = 0;
    json rows = json::array();
    for (auto& item : items) {
        for (auto& [name, body] : item.files) sink.write(name, body);
        total += item.violations;
        rows.push_back(item.row);
    }
    return json{{"replicas", rows}, {"total_violations", total}};
}

inline json cmd_velocity(const ExperimentConfig& cfg, detail::OutputSink& sink, int jobs) {
    const auto& p = cfg.params;
    const auto kind = detail::kind_from(p.at("kind").get<std::string>());
    const double mu = p.at("mu").get<double>();
    const double horizon = p.at("horizon").get<double>();
    const double sub_step = p.at("sub_step").get<double>();
    const double t_burn = p.at("t_burn").get<double>();
    json rows = json::array();
    std::ostringstream table;
    table << "N,mu,v_hat,stderr,v_formula\n";
    for (const auto& ne : p.at("n_list")) {
        const int n = static_cast<int>(ne.get<double>());
        const auto pooled =
            detail::pooled_velocity(kind, n, mu, horizon, sub_step, t_burn, cfg.seeds, jobs);
        const double formula = n >= 2 ? stats::velocity_formula(n) : 0.0;
        rows.push_back(json{{"n", n},
                            {"v_hat", pooled.v_hat},
                            {"stderr", pooled.stderr_},
                            {"v_min_hat", pooled.v_min_hat},
                            {"v_max_hat", pooled.v_max_hat},
                            {"replicas", pooled.n_replicas},
                            {"velocity_formula", formula}});
        table << n << ',' << csv::g17(mu) << ',' << csv::g17(pooled.v_hat) << ','
              << csv::g17(pooled.stderr_) << ',' << csv::g17(formula) << "\n";
    }
    sink.write("velocity.csv", table.str());
    const json report{{"estimates", rows}};
    sink.write("velocity.json", report.dump(2) + "\n");
    return report;
}

// Shared by regimes and sweep: one drift cell at mu = factor * mu_c_hat.
inline json regime_cell(engine::Kind kind, int n, double factor, double mu_c_hat,
                        double mu_c_se, double horizon, double sub_step, double t_burn,
                        const std::vector<std::uint64_t>& seeds, int jobs) {
    const double mu = factor * mu_c_hat;
    const auto pooled =
        detail::pooled_velocity(kind, n, mu, horizon, sub_step, t_burn, seeds, jobs);
    std::map<std::string, double> diag{{"slope", pooled.v_hat},
                                       {"slope_se", pooled.stderr_},
                                       {"slope_gap", pooled.v_max_hat - pooled.v_min_hat}};
    const auto report = stats::classify_regime(mu, mu_c_hat, mu_c_se, diag);
    json evidence = json::object();
    for (const auto& [k, v] : report.evidence) evidence[k] = v;
    return json{{"n", n},
                {"mu", mu},
                {"mu_factor", factor},
                {"regime", stats::regime_name(report.regime)},
                {"slope", pooled.v_hat},
                {"stderr", pooled.stderr_},
                {"evidence", evidence}};
}

inline json cmd_regimes(const ExperimentConfig& cfg, detail::OutputSink& sink, int jobs) {
    const auto& p = cfg.params;
    const int n = p.at("n").get<int>();
    const double horizon = p.at("horizon").get<double>();
    const double sub_step = p.at("sub_step").get<double>();
    const double t_burn = p.at("t_burn").get<double>();

    double mu_c_hat, mu_c_se = 0.0;
    if (p.contains("mu_c_hat")) {
        mu_c_hat = p.at("mu_c_hat").get<double>();
    } else {
        const auto cal = detail::pooled_velocity(engine::Kind::NBBM, n, 0.0, horizon,
                                                 sub_step, t_burn, cfg.seeds, jobs);
        mu_c_hat = cal.v_hat;
        mu_c_se = cal.stderr_;
    }

    json cells = json::array();
    std::ostringstream table;
    table << "N,mu,v_hat,stderr,regime,d_eff\n";
    for (const auto& fe : p.at("mu_factors")) {
        const auto cell = regime_cell(engine::Kind::Bees, n, fe.get<double>(), mu_c_hat,
                                      mu_c_se, horizon, sub_step, t_burn, cfg.seeds, jobs);
        cells.push_back(cell);
        table << n << ',' << csv::g17(cell.at("mu").get<double>()) << ','
              << csv::g17(cell.at("slope").get<double>()) << ','
              << csv::g17(cell.at("stderr").get<double>()) << ','
              << cell.at("regime").get<std::string>() << ",\n";
    }
    sink.write("regimes.csv", table.str());
    const json report{{"mu_c_hat", mu_c_hat}, {"mu_c_se", mu_c_se}, {"cells", cells}};
    sink.write("regimes.json", report.dump(2) + "\n");
    return report;
}

inline json cmd_critical(const ExperimentConfig& cfg, detail::OutputSink& sink, int jobs) {
    const auto& p = cfg.params;
    const int n = p.at("n").get<int>();
    const double m = p.at("m").get<double>();
    const double sub_step = p.at("sub_step").get<double>();

    double mu_c_hat, mu_c_se = 0.0;
    if (p.contains("mu_c_hat")) {
        mu_c_hat = p.at("mu_c_hat").get<double>();
    } else {
        const double ch = p.at("calibration_horizon").get<double>();
        const auto cal = detail::pooled_velocity(engine::Kind::NBBM, n, 0.0, ch, sub_step,
                                                 0.1 * ch, cfg.seeds, jobs);
        mu_c_hat = cal.v_hat;
        mu_c_se = cal.stderr_;
    }

    // Diffusivity from the stalled N-BBM at critical drift.
    std::vector<engine::Trajectory> nbbm(cfg.seeds.size());
    detail::for_each_index(jobs, cfg.seeds.size(), [&](std::size_t i) {
        const auto params = detail::sim_params(n, -mu_c_hat, m, sub_step, cfg.seeds[i]);
        nbbm[i] = engine::simulate(engine::Kind::NBBM, params,
                                   Configuration(static_cast<std::size_t>(n), 0.0),
                                   engine::RecordLevel::Track);
    });
    const auto diff = stats::estimate_diffusivity(nbbm, m);
    nbbm.clear();

    json signs_out = json::array();
    for (const auto& se : p.at("mu_signs")) {
        const double sign = se.get<double>();
        const double mu = sign * mu_c_hat;
        std::vector<double> rescaled(cfg.seeds.size());
        std::vector<double> radius(cfg.seeds.size());
        detail::for_each_index(jobs, cfg.seeds.size(), [&](std::size_t i) {
            const auto params = detail::sim_params(n, mu, m, sub_step, cfg.seeds[i]);
            const auto traj = engine::simulate(engine::Kind::Bees, params,
                                               Configuration(static_cast<std::size_t>(n), 0.0),
                                               engine::RecordLevel::Track);
            rescaled[i] = sign * traj.final_config.front() / std::sqrt(m);
            radius[i] = (traj.final_config.back() - traj.final_config.front()) / std::sqrt(m);
        });
        const double scale = std::sqrt(diff.d_eff);
        const auto ks = stats::ks_statistic(
            rescaled, [scale](double x) { return stats::half_normal_cdf(x, scale); });
        double mean_radius = 0;
        for (double r : radius) mean_radius += r;
        mean_radius /= static_cast<double>(radius.size());
        signs_out.push_back(json{{"sign", sign},
                                 {"mu", mu},
                                 {"ks_statistic", ks.statistic},
                                 {"ks_p_value", ks.p_value},
                                 {"mean_rescaled_radius", mean_radius}});
    }
    const json report{{"mu_c_hat", mu_c_hat},
                      {"mu_c_se", mu_c_se},
                      {"d_eff", diff.d_eff},
                      {"d_eff_stderr", diff.stderr_},
                      {"signs", signs_out}};
    sink.write("critical.json", report.dump(2) + "\n");
    return report;
}

inline json cmd_brw(const ExperimentConfig& cfg, detail::OutputSink& sink, int jobs) {
    const auto& p = cfg.params;
    const int n = p.at("n").get<int>();
    const double mu = p.at("mu").get<double>();
    const double delta = p.at("delta").get<double>();
    const double horizon = p.at("horizon").get<double>();
    const double sub_step = p.at("sub_step").get<double>();
    const double t_burn = p.at("t_burn").get<double>();
    const int gen_upper = static_cast<int>(std::llround(horizon));
    const int gen_lower = static_cast<int>(std::llround(horizon / delta));

    std::vector<stats::VelocityEstimate> upper(cfg.seeds.size()), lower(cfg.seeds.size());
    detail::for_each_index(jobs, cfg.seeds.size(), [&](std::size_t i) {
        const auto drivers = engine::make_driver_bundle(cfg.seeds[i], n);
        upper[i] = stats::estimate_velocity(
            brw::simulate_nbrw_upper(n, mu, gen_upper, drivers), t_burn);
        lower[i] = stats::estimate_velocity(
            brw::simulate_nbrw_lower(n, delta, mu, gen_lower, drivers), t_burn);
    });
    const auto pu = stats::pool_velocities(upper);
    const auto pl = stats::pool_velocities(lower);
    const auto pn = detail::pooled_velocity(engine::Kind::NBBM, n, mu, horizon, sub_step,
                                            t_burn, cfg.seeds, jobs);

    std::ostringstream table;
    table << "kind,N,delta,speed_hat,stderr,speed_formula\n";
    table << "upper," << n << ",1," << csv::g17(pu.v_hat) << ',' << csv::g17(pu.stderr_)
          << ',' << csv::g17(brw::speed_second_order(brw::bbm_cumulant(), n)) << "\n";
    table << "nbbm," << n << ",," << csv::g17(pn.v_hat) << ',' << csv::g17(pn.stderr_) << ','
          << csv::g17(stats::velocity_formula(n)) << "\n";
    table << "lower," << n << ',' << csv::g17(delta) << ',' << csv::g17(pl.v_hat) << ','
          << csv::g17(pl.stderr_) << ','
          << csv::g17(brw::speed_second_order(brw::hat_delta_cumulant(delta), n)) << "\n";
    sink.write("speed_sweep.csv", table.str());

    const json report{
        {"n", n},
        {"upper", json{{"speed_hat", pu.v_hat}, {"stderr", pu.stderr_}}},
        {"nbbm", json{{"speed_hat", pn.v_hat}, {"stderr", pn.stderr_}}},
        {"lower", json{{"speed_hat", pl.v_hat}, {"stderr", pl.stderr_}}},
    };
    sink.write("brw.json", report.dump(2) + "\n");
    return report;
}

inline json cmd_fbp(const ExperimentConfig& cfg, detail::OutputSink& sink, int jobs) {
    const auto& p = cfg.params;
    fbp::PDEParams params;
    params.L = p.at("L").get<double>();
    params.h = p.at("h").get<double>();
    params.dt = p.at("dt").get<double>();
    params.mu = p.at("mu").get<double>();
    params.T = p.at("T").get<double>();
    params.validate();

    const auto initial = fbp::make_uniform_state(params, p.at("initial_half_width").get<double>());
    const auto sol = fbp::solve_fbp(initial, params, p.at("snapshot_stride").get<long long>());
    std::ostringstream snaps, boundary;
    csv::write_fbp_snapshots_csv(snaps, sol.snapshots);
    csv::write_fbp_boundary_csv(boundary, sol.boundary);
    sink.write("fbp_snapshots.csv", snaps.str());
    sink.write("fbp_boundary.csv", boundary.str());

    json report{{"final_radius", sol.snapshots.back().radius},
                {"final_mass", sol.snapshots.back().mass()},
                {"l1_to_steady", fbp::l1_distance_to_steady(sol.snapshots.back())}};

    const int n = p.at("n").get<int>();
    if (n > 0) {
        const double ph = p.at("particle_horizon").get<double>();
        const double ps = p.at("particle_sub_step").get<double>();
        std::vector<double> dists(cfg.seeds.size());
        const auto& final_state = sol.snapshots.back();
        detail::for_each_index(jobs, cfg.seeds.size(), [&](std::size_t i) {
            const auto sp = detail::sim_params(n, params.mu, ph, ps, cfg.seeds[i]);
            const auto traj = engine::simulate(engine::Kind::Bees, sp,
                                               Configuration(static_cast<std::size_t>(n), 0.0),
                                               engine::RecordLevel::Track);
            dists[i] = fbp::distance_empirical_pde(traj.final_config, final_state);
        });
        double mean = 0;
        for (double d : dists) mean += d;
        mean /= static_cast<double>(dists.size());
        report["w1_mean"] = mean;
        report["w1_per_seed"] = dists;
    }
    sink.write("fbp.json", report.dump(2) + "\n");
    return report;
}

inline json cmd_sweep(const ExperimentConfig& cfg, detail::OutputSink& sink, int jobs) {
    const auto& p = cfg.params;
    const double horizon = p.at("horizon").get<double>();
    const double sub_step = p.at("sub_step").get<double>();
    const double t_burn = p.at("t_burn").get<double>();

    json cells = json::array();
    std::ostringstream table;
    table << "N,mu,v_hat,stderr,regime,d_eff\n";
    bool any_failed = false;
    for (const auto& ne : p.at("n_list")) {
        const int n = static_cast<int>(ne.get<double>());
        double mu_c_hat = 0.0, mu_c_se = 0.0;
        if (p.contains("mu_c_hat")) {
            mu_c_hat = p.at("mu_c_hat").get<double>();
        } else {
            const auto cal = detail::pooled_velocity(engine::Kind::NBBM, n, 0.0, horizon,
                                                     sub_step, t_burn, cfg.seeds, jobs);
            mu_c_hat = cal.v_hat;
            mu_c_se = cal.stderr_;
        }
        for (const auto& fe : p.at("mu_factors")) {
            json cell;
            try {
                cell = regime_cell(engine::Kind::Bees, n, fe.get<double>(), mu_c_hat, mu_c_se,
                                   horizon, sub_step, t_burn, cfg.seeds, jobs);
                cell["status"] = "ok";
                table << n << ',' << csv::g17(cell.at("mu").get<double>()) << ','
                      << csv::g17(cell.at("slope").get<double>()) << ','
                      << csv::g17(cell.at("stderr").get<double>()) << ','
                      << cell.at("regime").get<std::string>() << ",\n";
            } catch (const std::exception& e) {
                any_failed = true;
                cell = json{{"n", n}, {"mu_factor", fe.get<double>()}, {"status", "failed"},
                            {"error", e.what()}};
            }
            cells.push_back(cell);
        }
    }
    sink.write("sweep.csv", table.str());
    const json report{{"cells", cells}, {"any_failed", any_failed}};
    sink.write("sweep.json", report.dump(2) + "\n");
    return report;
}

} // namespace handlers

inline RunManifest run_experiment(const ExperimentConfig& cfg, int jobs = 1) {
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    std::filesystem::create_directories(cfg.output_dir);
    detail::OutputSink sink{cfg.output_dir, json::array()};
    const auto t0 = std::chrono::steady_clock::now();

    json results;
    std::string status = "ok";
    switch (cfg.command) {
        case Command::Simulate: results = handlers::cmd_simulate(cfg, sink, jobs); break;
        case Command::Couple: results = handlers::cmd_couple(cfg, sink, jobs); break;
        case Command::Velocity: results = handlers::cmd_velocity(cfg, sink, jobs); break;
        case Command::Regimes: results = handlers::cmd_regimes(cfg, sink, jobs); break;
        case Command::Critical: results = handlers::cmd_critical(cfg, sink, jobs); break;
        case Command::Brw: results = handlers::cmd_brw(cfg, sink, jobs); break;
        case Command::Fbp: results = handlers::cmd_fbp(cfg, sink, jobs); break;
        case Command::Sweep: results = handlers::cmd_sweep(cfg, sink, jobs); break;
    }

    std::size_t violations = 0;
    if (cfg.command == Command::Couple)
        violations = results.at("total_violations").get<std::size_t>();
    if (violations > 0) status = "invariant_violation";

    const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
    RunManifest manifest;
    manifest.doc = json{{"artifact_version", kVersion},
                        {"command", cfg.command_name},
                        {"config", json{{"command", cfg.command_name},
                                        {"seeds", cfg.seeds},
                                        {"output_dir", cfg.output_dir},
                                        {"params", cfg.params}}},
                        {"wall_clock_seconds", dt.count()},
                        {"outputs", sink.outputs},
                        {"results", results},
                        {"status", status}};
    {
        const auto p = std::filesystem::path(cfg.output_dir) / "manifest.json";
        std::ofstream os(p, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write manifest: " + p.string());
        os << manifest.doc.dump(2) << "\n";
    }
    if (violations > 0)
        throw InvariantError("coupling order violated " + std::to_string(violations) +
                             " time(s); see violations CSVs in " + cfg.output_dir);
    return manifest;
}

} // namespace beeslab::experiment
