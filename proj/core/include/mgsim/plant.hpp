#pragma once

#include <Eigen/Dense>

#include "mgsim/network.hpp"

namespace mgsim {

using Eigen::VectorXd;

struct GeneratorParams {
    double M = 0.0;    // inertia
    double A = 0.0;    // damping
    double Xd = 0.0;   // d-axis synchronous reactance
    double Xdp = 0.0;  // d-axis transient reactance
    double tauU = 0.0; // open-circuit transient time constant [s]
};

struct InverterParams {
    double M = 0.0; // virtual inertia
    double A = 0.0; // virtual damping
};

/// DC-side quantities of a matched inverter.
struct InverterPhysical {
    double C_dc = 0.0;
    double G_dc = 0.0;
    double eta = 0.0;
    double omega_n = 0.0; // nominal frequency [rad/s]
};

struct LoadParams {
    double A = 0.0; // damping, >= 0
};

/// Maps the matching-control DC circuit onto swing-equation coefficients:
/// M = (C_dc/eta^2)*omega_n, A = (G_dc/eta^2)*omega_n.
InverterParams inverter_matching(const InverterPhysical& phys);

/// Matching-control DC current command, eta*A_star*omega_n + eta*p_g/omega.
/// Diagnostic only; omega is the absolute virtual frequency.
double dc_current_command(double a_virtual_star, double eta, double omega_n, double p_g,
                          double omega_abs);

/// Per-kind parameter arrays aligned with the model's internal order.
struct PlantParams {
    std::vector<GeneratorParams> generators;
    std::vector<InverterParams> inverters;
    std::vector<LoadParams> loads;
};

/// Differential states (theta, L, Ug) plus algebraic states (omega_load,
/// voltage_load). Angles are stored per node; edge differences are formed
/// on demand through the incidence matrix.
struct PlantState {
    VectorXd theta;        // n
    VectorXd momenta;      // n_gen + n_inv (angular momentum deviation L)
    VectorXd voltage_gen;  // n_gen (transient internal voltage)
    VectorXd omega_load;   // n_load (algebraic)
    VectorXd voltage_load; // n_load (algebraic)
};

struct PlantInputs {
    VectorXd p_gen;    // n_gen + n_inv, controllable injections
    VectorXd u_field;  // n_gen, excitation voltages
    VectorXd p_demand; // n, active demand per node
    VectorXd q_demand; // n_load, reactive demand at load nodes
};

struct PowerFlows {
    VectorXd p; // sending-end active injection per node
    VectorXd q; // sending-end reactive injection per node
};

struct ConductanceTerms {
    VectorXd phi; // per node; sums to the resistive losses
    VectorXd rho; // per node; generator rows scaled by (Xd-Xdp)/tauU
};

/// Time derivatives of the differential states and the load-node
/// algebraic residuals.
struct PlantRhs {
    VectorXd theta_dot;   // n
    VectorXd momenta_dot; // n_gen + n_inv
    VectorXd voltage_dot; // n_gen
    VectorXd residual_p;  // n_load
    VectorXd residual_q;  // n_load
};

/// The same dynamics in the descriptor-state coordinates
/// col{edge angles, L_G, L_I, U_g, omega_l, U_l}.
struct DescriptorRhs {
    VectorXd vartheta_dot; // m (edge angle differences)
    VectorXd momenta_dot;
    VectorXd voltage_dot;
    VectorXd residual_p;
    VectorXd residual_q;
};

/// Gradient of the plant Hamiltonian, in state shape.
struct PlantGradient {
    VectorXd d_theta;
    VectorXd d_momenta;
    VectorXd d_voltage_gen;
    VectorXd d_omega_load;
    VectorXd d_voltage_load;
};

struct AlgebraicSolveResult {
    VectorXd omega_load;
    VectorXd voltage_load;
    int iterations = 0;
};

/// Lossy power flows, energies and dynamics of the physical microgrid.
///
/// All evaluators are pure functions of (state, inputs); a Plant can be
/// shared read-only across threads.
class Plant {
public:
    Plant(NetworkModel model, PlantParams params);

    const NetworkModel& model() const { return model_; }
    const PlantParams& params() const { return params_; }

    /// Node voltage magnitudes: generator internal voltages, 1 p.u. at
    /// inverter terminals, load voltages.
    VectorXd nodeVoltages(const PlantState& s) const;
    /// Frequency deviation per node, L/M at controllable nodes and the
    /// algebraic value at load nodes.
    VectorXd nodeFrequencies(const PlantState& s) const;

    PowerFlows powerFlows(const VectorXd& theta, const VectorXd& voltage) const;
    double resistiveLosses(const VectorXd& theta, const VectorXd& voltage) const;
    ConductanceTerms conductanceTerms(const VectorXd& theta, const VectorXd& voltage) const;

    double hamiltonian(const PlantState& s) const;
    PlantGradient gradient(const PlantState& s) const;

    /// Compact (normative) dynamics.
    PlantRhs rhs(const PlantState& s, const PlantInputs& in) const;

    /// Port-Hamiltonian block evaluation (J_p - R_p) grad H_p - r_p + B u,
    /// used as a structural cross-check of rhs().
    DescriptorRhs phsFormRhs(const PlantState& s, const PlantInputs& in) const;
    /// rhs() mapped into descriptor-state coordinates for comparison
    /// against phsFormRhs().
    DescriptorRhs rhsInDescriptorCoords(const PlantState& s, const PlantInputs& in) const;

    /// Newton solve of the load-node algebraic constraints for
    /// (omega_load, voltage_load) at fixed differential states.
    AlgebraicSolveResult solveAlgebraic(const PlantState& differential, const PlantInputs& in,
                                        const VectorXd& omega_guess, const VectorXd& voltage_guess,
                                        double tol = 1e-10, int max_iter = 50) const;

    PlantState zeroState() const;

    int genOffset() const { return 0; }
    int invOffset() const { return model_.generatorCount(); }
    int loadOffset() const { return model_.controllableCount(); }

    double inertia(int controllable_index) const;
    double damping(int node_index) const; // any node kind

private:
    void checkVoltages(const VectorXd& voltage) const;

    NetworkModel model_;
    PlantParams params_;
};

} // namespace mgsim
