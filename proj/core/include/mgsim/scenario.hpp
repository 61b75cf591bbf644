#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "mgsim/integrator.hpp"

namespace mgsim {

/// One node as configured, parameters resolved.
struct NodeConfig {
    int id = 0;
    NodeKind kind = NodeKind::Load;
    double b_self = 0.0;
    double inertia = 0.0;      // generator, inverter
    double damping = 0.0;      // all kinds
    double xd = 0.0;           // generator
    double xd_transient = 0.0; // generator
    double tau_voltage = 0.0;  // generator

    bool operator==(const NodeConfig&) const = default;
};

struct OutputConfig {
    double horizon = 500.0;
    int decimation = 50;
    std::string trajectory_csv = "trajectory.csv";
    std::string summary = "summary.txt";
    std::string verification = "verification.txt";

    bool operator==(const OutputConfig&) const = default;
};

/// Fully resolved scenario: parsing applies all documented defaults, so
/// two configs compare equal iff they describe the same run.
struct ScenarioConfig {
    std::string name = "scenario";
    double gamma = 0.0;
    std::vector<NodeConfig> nodes; // sorted by id
    std::vector<LineSpec> lines;

    std::vector<double> weights;    // controllable nodes, ascending id
    std::vector<double> tau_g;      // controllable nodes, ascending id
    std::vector<double> tau_lambda; // all nodes, ascending id
    std::vector<double> tau_nu;     // one per communication edge
    std::vector<std::pair<int, int>> comm_edges; // node ids

    std::map<int, double> p_demand; // by node id, absent = 0
    std::map<int, double> q_demand; // by load node id, absent = 0
    std::vector<Event> events;

    SolverSettings solver;
    OutputConfig output;

    bool operator==(const ScenarioConfig&) const = default;
};

ScenarioConfig parse_config(const std::string& text);
std::string serialize_config(const ScenarioConfig& cfg);

/// Instantiates the closed loop and the demand vectors for a config.
struct BuiltScenario {
    ClosedLoop system;
    VectorXd p_demand; // internal node order
    VectorXd q_demand; // load nodes, internal order
};
BuiltScenario build_scenario(const ScenarioConfig& cfg);

struct SummaryMetrics {
    double max_transient_df_hz = 0.0;
    std::vector<double> settling_times; // seconds, one per event
    double final_lambda = 0.0;
    double final_losses = 0.0;
    double final_sharing_spread = 0.0;
    double final_max_df_hz = 0.0;
    double min_passivity = 0.0;
    double final_shifted_hamiltonian = 0.0;
};

struct ResultBundle {
    ScenarioConfig config;
    Equilibrium initial_equilibrium;
    TrajectoryRecord trajectory;
    PropositionReport initial_report;
    PropositionReport final_report;
    SummaryMetrics summary;
};

/// Solves the base equilibrium, simulates the event schedule, and
/// re-verifies the equilibrium properties at the initial and final load
/// levels.
ResultBundle run_scenario(const ScenarioConfig& cfg);

SummaryMetrics summarize(const ScenarioConfig& cfg, const TrajectoryRecord& rec);

void emit_csv(const TrajectoryRecord& rec, const std::filesystem::path& path);
void emit_summary(const ResultBundle& bundle, const std::filesystem::path& path);
void emit_verification(const ResultBundle& bundle, const std::filesystem::path& path);
/// Writes all three files into a directory (atomically, via temp+rename).
void write_outputs(const ResultBundle& bundle, const std::filesystem::path& out_dir);

struct StructureCheck {
    std::string name;
    bool pass = false;
    double metric = 0.0;
    std::string detail;
};

struct StructureReport {
    std::vector<StructureCheck> checks;
    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass)
                return false;
        return true;
    }
};

/// Structure suite: skew-symmetry of J, positive semidefiniteness of R,
/// the descriptor mask, the analytic-vs-finite-difference gradient check,
/// and the dual-formulation comparison between the compact and the
/// port-Hamiltonian evaluation paths.
StructureReport verify_structure(const ScenarioConfig& cfg, unsigned seed = 2027u);
std::string format_structure_report(const StructureReport& rep);

} // namespace mgsim
