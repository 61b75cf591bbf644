#pragma once

#include "mgsim/controller.hpp"
#include "mgsim/plant.hpp"

namespace mgsim {

struct ClosedLoopState {
    PlantState plant;
    ControllerState controller;
};

/// Exogenous (uncontrolled) inputs: excitation voltages and demand.
struct Exogenous {
    VectorXd u_field;  // n_gen
    VectorXd p_demand; // n
    VectorXd q_demand; // n_load
};

struct ClosedLoopRhs {
    PlantRhs plant;
    ControllerState controller; // derivative, same shape as the state
};

/// Dense structure matrices of the closed-loop descriptor system in the
/// ordering col{p_g, lambda, nu, vartheta, L_G, L_I, U_g, omega_l, U_l}.
struct StructureMatrices {
    Eigen::MatrixXd J; // skew-symmetric interconnection
    Eigen::MatrixXd R; // positive semidefinite dissipation
    Eigen::MatrixXd F; // input matrix for u = col{U_f, q_l, p_l}
    Eigen::VectorXd E_diag; // 0/1 descriptor mask

    int offset_pg = 0, offset_lambda = 0, offset_nu = 0, offset_vartheta = 0, offset_momenta = 0,
        offset_voltage = 0, offset_omega_load = 0, offset_voltage_load = 0;
    int size = 0;
};

struct Equilibrium {
    ClosedLoopState state;
    Exogenous inputs;
    double lambda_bar = 0.0;
    double losses = 0.0;
};

struct PropositionReport {
    double max_rhs_residual = 0.0;
    double max_abs_omega = 0.0;
    double marginal_price_spread = 0.0;
    double sharing_spread = 0.0;
    double lambda_spread = 0.0;
    double balance_residual = 0.0;
    double tolerance = 1e-9;

    bool pass() const {
        return max_rhs_residual <= tolerance && max_abs_omega <= tolerance &&
               marginal_price_spread <= tolerance && sharing_spread <= tolerance &&
               lambda_spread <= tolerance && balance_residual <= tolerance;
    }
};

/// Plant and price controller in feedback through u_c = -col{omega_G,
/// omega_I}, with the energy machinery used for monitoring.
class ClosedLoop {
public:
    ClosedLoop(Plant plant, CostModel cost, CommunicationGraph comm, ControllerGains gains);

    const Plant& plant() const { return plant_; }
    const NetworkModel& model() const { return plant_.model(); }
    const CostModel& costModel() const { return cost_; }
    const CommunicationGraph& comm() const { return comm_; }
    const ControllerGains& gains() const { return gains_; }

    ClosedLoopRhs rhs(const ClosedLoopState& s, const Exogenous& exo) const;
    double hamiltonian(const ClosedLoopState& s) const;

    /// Full-coordinate vector col{tau_g p_g, tau_l lambda, tau_nu nu,
    /// vartheta, L, U_g, omega_l, U_l} used by the energy functions.
    VectorXd flatten(const ClosedLoopState& s) const;
    VectorXd hamiltonianGradient(const ClosedLoopState& s) const;
    /// Dissipation relation R(x) grad H(x) + r(x).
    VectorXd dissipation(const ClosedLoopState& s) const;

    double shiftedHamiltonian(const ClosedLoopState& s, const Equilibrium& eq) const;
    double passivityResidual(const ClosedLoopState& s, const Equilibrium& eq) const;

    /// Assembles J, R, F, E. The load-voltage dissipation block is
    /// evaluated at the given state (flat voltages when absent).
    StructureMatrices assembleStructure(const ClosedLoopState* at = nullptr) const;

    struct EquilibriumOptions {
        /// Pin U_g = 1 and back-compute the excitation, or keep a given
        /// excitation fixed and let U_g settle.
        enum class Mode { HoldUnitVoltage, FixedField };
        Mode mode = Mode::HoldUnitVoltage;
        VectorXd u_field; // required for FixedField
        double tolerance = 1e-10;
        int max_iterations = 50;
    };

    Equilibrium solveEquilibrium(const VectorXd& p_demand, const VectorXd& q_demand,
                                 const EquilibriumOptions& options) const;
    /// Default options: pin U_g = 1 and back-compute the excitation.
    Equilibrium solveEquilibrium(const VectorXd& p_demand, const VectorXd& q_demand) const;

    PropositionReport verifyPropositions(const Equilibrium& eq) const;

    // Packing helpers for time integration: differential states are
    // col{theta, L, U_g, p_g, lambda, nu}; algebraic states live in the
    // PlantState and are re-solved via refreshAlgebraic().
    int differentialSize() const;
    VectorXd packDifferential(const ClosedLoopState& s) const;
    void unpackDifferential(const VectorXd& y, ClosedLoopState& s) const;
    VectorXd packedRhs(const ClosedLoopState& s, const Exogenous& exo) const;
    /// Re-solves the load-node algebraic constraints in place, warm-started
    /// from the current values. Returns the Newton iteration count.
    int refreshAlgebraic(ClosedLoopState& s, const Exogenous& exo, double tol = 1e-10,
                         int max_iter = 50) const;

    ClosedLoopState zeroState() const;

private:
    VectorXd edgeAngleGradient(const PlantState& s) const;

    Plant plant_;
    CostModel cost_;
    CommunicationGraph comm_;
    ControllerGains gains_;
};

} // namespace mgsim
