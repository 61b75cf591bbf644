#pragma once

#include <Eigen/Dense>

#include "mgsim/network.hpp"

namespace mgsim {

/// Strictly convex generation cost C(p_g) = 1/2 sum (1/w_i} p_{g,i}^2.
struct CostModel {
    VectorXd weights; // one positive weight per controllable node

    double cost(const VectorXd& p_g) const;
    VectorXd gradient(const VectorXd& p_g) const;
};

/// Returns the default weight ladder 1, 1.1, 1.2, ... for n entries.
VectorXd default_cost_weights(int n);

/// Connected communication graph over all n nodes, kept as a signed
/// incidence matrix. May differ from the physical topology.
class CommunicationGraph {
public:
    /// Edges as pairs of internal node indices.
    static CommunicationGraph build(int node_count, const std::vector<std::pair<int, int>>& edges);
    /// Communication graph mirroring the physical lines.
    static CommunicationGraph fromPhysical(const NetworkModel& model);

    int nodeCount() const { return n_; }
    int edgeCount() const { return static_cast<int>(edges_.size()); }
    const std::pair<int, int>& edge(int e) const { return edges_[e]; }

    const Eigen::MatrixXd& incidence() const { return incidence_; }

    /// x -> D_c x (edge flows scattered to nodes).
    VectorXd applyIncidence(const VectorXd& edge_values) const;
    /// x -> D_c^T x (node potentials differenced along edges).
    VectorXd applyIncidenceTransposed(const VectorXd& node_values) const;

    /// Minimum-norm solution of D_c nu = rhs; requires 1^T rhs = 0.
    VectorXd minimumNormFlow(const VectorXd& rhs) const;

private:
    int n_ = 0;
    std::vector<std::pair<int, int>> edges_; // (from, to), +1/-1 incidence signs
    Eigen::MatrixXd incidence_;
};

struct ControllerState {
    VectorXd p_g;    // setpoints per controllable node
    VectorXd lambda; // price per node
    VectorXd nu;     // auxiliary flow per communication edge
};

struct ControllerGains {
    VectorXd tau_g;
    VectorXd tau_lambda;
    VectorXd tau_nu;

    static ControllerGains uniform(int n_controllable, int n_nodes, int n_edges, double tau);
    void validate() const;
};

/// Local measurements feeding the controller: the interconnection input
/// u_c, the active demand per node, and the conductance term phi per node.
struct ControllerMeasurements {
    VectorXd u_c;      // n_controllable
    VectorXd p_demand; // n
    VectorXd phi;      // n
};

/// Primal-dual gradient dynamics of the dispatch problem. Each row only
/// reads its own node's measurement and incident lambda/nu entries.
ControllerState controller_rhs(const ControllerState& s, const ControllerGains& gains,
                               const CostModel& cost, const CommunicationGraph& comm,
                               const ControllerMeasurements& meas);

/// H_c = 1/2 (p_g' tau_g p_g + lambda' tau_lambda lambda + nu' tau_nu nu).
double controller_hamiltonian(const ControllerState& s, const ControllerGains& gains);

struct BalanceResult {
    bool feasible = false;
    VectorXd nu;
};

/// Checks whether generation minus demand minus conductance terms lies in
/// the range of D_c (equivalently sums to zero) and returns the
/// minimum-norm flow when it does.
BalanceResult check_balance_feasibility(const CommunicationGraph& comm, const VectorXd& p_g,
                                        const VectorXd& p_demand, const VectorXd& phi);

} // namespace mgsim
