// Command line front end: solve equilibria, run scenarios, verify the
// structural properties of a configured microgrid.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mgsim/scenario.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitViolation = 4;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw mgsim::IoError("cannot read config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

mgsim::ScenarioConfig load_config(const std::string& path, double dt_override) {
    mgsim::ScenarioConfig cfg = mgsim::parse_config(read_file(path));
    if (dt_override > 0.0) {
        cfg.solver.dt = dt_override;
        // Keep the default sampling rate of ~10 samples/s.
        cfg.output.decimation = std::max(1, static_cast<int>(std::lround(0.1 / dt_override)));
    }
    return cfg;
}

void print_report(const char* label, const mgsim::PropositionReport& rep) {
    std::printf("%s: max|rhs|=%.3e  max|omega|=%.3e  price spread=%.3e  sharing spread=%.3e  "
                "balance=%.3e  -> %s\n",
                label, rep.max_rhs_residual, rep.max_abs_omega, rep.marginal_price_spread,
                rep.sharing_spread, rep.balance_residual, rep.pass() ? "ok" : "VIOLATED");
}

int run_command(const std::string& config_path, const std::string& out_dir, double dt_override) {
    const mgsim::ScenarioConfig cfg = load_config(config_path, dt_override);
    const mgsim::ResultBundle bundle = mgsim::run_scenario(cfg);
    mgsim::write_outputs(bundle, out_dir);

    std::printf("scenario '%s': %zu samples, horizon %.9g s\n", cfg.name.c_str(),
                bundle.trajectory.samples.size(), cfg.output.horizon);
    print_report("initial equilibrium", bundle.initial_report);
    print_report("final equilibrium", bundle.final_report);
    std::printf("max transient |df| = %.6g Hz\n", bundle.summary.max_transient_df_hz);
    for (std::size_t k = 0; k < bundle.summary.settling_times.size(); ++k)
        std::printf("settling time after event %zu = %.6g s\n", k + 1,
                    bundle.summary.settling_times[k]);
    std::printf("outputs written to %s\n", out_dir.c_str());

    if (!bundle.initial_report.pass() || !bundle.final_report.pass())
        return kExitViolation;
    return kExitOk;
}

int equilibrium_command(const std::string& config_path, double dt_override) {
    const mgsim::ScenarioConfig cfg = load_config(config_path, dt_override);
    mgsim::BuiltScenario built = mgsim::build_scenario(cfg);
    const mgsim::Equilibrium eq = built.system.solveEquilibrium(built.p_demand, built.q_demand);
    const mgsim::PropositionReport rep = built.system.verifyPropositions(eq);

    std::printf("lambda_bar = %.9g\n", eq.lambda_bar);
    std::printf("losses = %.9g p.u.\n", eq.losses);
    std::printf("total generation = %.9g p.u., total demand = %.9g p.u.\n",
                eq.state.controller.p_g.sum(), eq.inputs.p_demand.sum());
    const auto& model = built.system.model();
    for (int k = 0; k < model.controllableCount(); ++k)
        std::printf("  pg_%d = %.9g\n", model.nodeId(k), eq.state.controller.p_g[k]);
    print_report("equilibrium", rep);
    return rep.pass() ? kExitOk : kExitViolation;
}

int verify_command(const std::string& config_path, unsigned seed) {
    const mgsim::ScenarioConfig cfg = mgsim::parse_config(read_file(config_path));
    const mgsim::StructureReport rep = mgsim::verify_structure(cfg, seed);
    std::fputs(mgsim::format_structure_report(rep).c_str(), stdout);
    return rep.all_pass() ? kExitOk : kExitViolation;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Microgrid frequency regulation simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    double dt_override = 0.0;
    int seed = 0;

    auto* run = app.add_subcommand("run", "Solve, simulate and write CSV outputs");
    run->add_option("--config", config_path, "Scenario config file")->required();
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--dt", dt_override, "Override the integration step [s]");
    run->add_option("--seed", seed, "Reserved for future noise models");

    auto* eq = app.add_subcommand("equilibrium", "Solve and print the base equilibrium");
    eq->add_option("--config", config_path, "Scenario config file")->required();
    eq->add_option("--dt", dt_override, "Override the integration step [s]");
    eq->add_option("--seed", seed, "Reserved for future noise models");

    auto* verify = app.add_subcommand("verify", "Run the structure checks");
    verify->add_option("--config", config_path, "Scenario config file")->required();
    verify->add_option("--seed", seed, "Seed for the randomized checks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return run_command(config_path, out_dir, dt_override);
        if (eq->parsed())
            return equilibrium_command(config_path, dt_override);
        if (verify->parsed())
            return verify_command(config_path, seed == 0 ? 2027u : static_cast<unsigned>(seed));
    } catch (const mgsim::ParseError& e) {
        std::fprintf(stderr, "config parse error (line %d): %s\n", e.line, e.what());
        return kExitValidation;
    } catch (const mgsim::SchemaError& e) {
        std::fprintf(stderr, "config schema error: %s\n", e.what());
        return kExitValidation;
    } catch (const mgsim::ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const mgsim::DuplicateNodeError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const mgsim::UnknownEndpointError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const mgsim::UnknownNodeError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const mgsim::DisconnectedGraphError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const mgsim::NonpositiveSusceptanceError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const mgsim::NonpositiveParameterError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const mgsim::SizeMismatchError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const mgsim::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitValidation;
    } catch (const mgsim::PropositionViolatedError& e) {
        std::fprintf(stderr, "proposition violated: %s\n", e.what());
        return kExitViolation;
    } catch (const mgsim::Error& e) {
        // Solver failures: no convergence, singular Jacobians, rejected steps.
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumerical;
    }
    return kExitOk;
}
