// beeslab: driver for the branching-selection particle laboratory.  Reads a
// JSON experiment config, runs the requested command, writes outputs plus a
// manifest with checksums.  Exit codes: 0 success, 2 config error,
// 3 invariant violation, 4 runtime error.

#include "beeslab/errors.hpp"
#include "beeslab/experiment.hpp"
#include "beeslab/version.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace {

int default_jobs() {
    if (const char* env = std::getenv("BEESLAB_JOBS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"beeslab: one-dimensional branching-selection particle systems "
                 "(N-BBM and Brownian bees with drift)"};
    app.set_version_flag("--version", beeslab::kVersion);
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    int jobs = default_jobs();

    const struct {
        const char* name;
        const char* help;
    } commands[] = {
        {"simulate", "run replicated N-BBM / bees trajectories"},
        {"couple", "run the monotone or abs coupling and report violations"},
        {"velocity", "estimate front velocities against the asymptotic formula"},
        {"regimes", "classify drift regimes around the estimated critical drift"},
        {"critical", "diffusive rescaling checks at the critical drift"},
        {"brw", "discrete-generation bounding processes and the speed sandwich"},
        {"fbp", "free-boundary PDE solve and empirical comparison"},
        {"sweep", "N x drift-factor sweep table"},
    };
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", config_path, "JSON experiment config")->required();
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        sub->add_option("--jobs", jobs, "worker threads (default: $BEESLAB_JOBS or 1)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        std::ifstream in(config_path);
        if (!in) throw beeslab::ConfigError("cannot read config file: " + config_path);
        std::ostringstream ss;
        ss << in.rdbuf();
        auto cfg = beeslab::experiment::parse_config(ss.str());
        if (cfg.command_name != cmd)
            throw beeslab::ConfigError("config command '" + cfg.command_name +
                                       "' does not match subcommand '" + cmd + "'");
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        const auto manifest = beeslab::experiment::run_experiment(cfg, jobs);
        std::cout << "ok: " << manifest.doc.at("outputs").size()
                  << " output file(s) + manifest.json in " << cfg.output_dir << "\n";
        return 0;
    } catch (const beeslab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const beeslab::InvariantError& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 4;
    }
}
