#pragma once

#include "mgsim/closed_loop.hpp"

namespace mgsim {

enum class IntegrationMethod { Rk4WithInnerSolve, ImplicitTrapezoid };

struct SolverSettings {
    double dt = 0.002;
    double algebraic_tol = 1e-10;
    int newton_max_iter = 50;
    IntegrationMethod method = IntegrationMethod::Rk4WithInnerSolve;

    bool operator==(const SolverSettings&) const = default;
};

/// Stepwise change of demand at one node.
struct Event {
    double time = 0.0;
    int node_id = 0;
    double delta_p = 0.0;
    double delta_q = 0.0;

    bool operator==(const Event&) const = default;
};

struct TrajectorySample {
    double t = 0.0;
    VectorXd freq_dev_hz; // per node
    VectorXd p_g;         // per controllable node
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    double hamiltonian = 0.0;
    double shifted_hamiltonian = 0.0; // w.r.t. the active window's equilibrium
    double losses = 0.0;
    double passivity = 0.0; // shifted passivity residual at this sample
};

struct TrajectoryRecord {
    std::vector<int> node_ids;
    std::vector<int> controllable_ids;
    std::vector<TrajectorySample> samples;
    /// Start time and equilibrium of each constant-demand window.
    std::vector<std::pair<double, Equilibrium>> window_equilibria;
};

/// Advances the semi-explicit DAE by one step. The entering state must be
/// algebraically consistent; the returned state is.
ClosedLoopState step(const ClosedLoop& system, const ClosedLoopState& state, const Exogenous& exo,
                     const SolverSettings& settings);

/// Integrates from an equilibrium over [0, horizon], applying demand
/// events at their (step-aligned) times and re-solving the window
/// equilibrium after each event with the excitation held fixed.
TrajectoryRecord simulate(const ClosedLoop& system, const Equilibrium& initial,
                          std::vector<Event> events, double horizon,
                          const SolverSettings& settings, int decimation);

} // namespace mgsim
