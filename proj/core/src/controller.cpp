#include "mgsim/controller.hpp"

#include <string>

namespace mgsim {

double CostModel::cost(const VectorXd& p_g) const {
    if (p_g.size() != weights.size())
        throw SizeMismatchError("cost: setpoint vector does not match weight count");
    double c = 0.0;
    for (int i = 0; i < p_g.size(); ++i)
        c += 0.5 * p_g[i] * p_g[i] / weights[i];
    return c;
}

VectorXd CostModel::gradient(const VectorXd& p_g) const {
    if (p_g.size() != weights.size())
        throw SizeMismatchError("cost gradient: setpoint vector does not match weight count");
    return p_g.cwiseQuotient(weights);
}

VectorXd default_cost_weights(int n) {
    VectorXd w(n);
    for (int i = 0; i < n; ++i)
        w[i] = 1.0 + 0.1 * i;
    return w;
}

CommunicationGraph CommunicationGraph::build(int node_count,
                                             const std::vector<std::pair<int, int>>& edges) {
    CommunicationGraph g;
    g.n_ = node_count;
    g.edges_ = edges;
    g.incidence_ = Eigen::MatrixXd::Zero(node_count, static_cast<int>(edges.size()));
    std::vector<std::vector<int>> adj(node_count);
    for (int e = 0; e < g.edgeCount(); ++e) {
        auto [i, j] = edges[e];
        if (i < 0 || i >= node_count || j < 0 || j >= node_count || i == j)
            throw ValidationError("communication edge " + std::to_string(e) + " is malformed");
        g.incidence_(i, e) = 1.0;
        g.incidence_(j, e) = -1.0;
        adj[i].push_back(j);
        adj[j].push_back(i);
    }
    std::vector<bool> visited(node_count, false);
    std::vector<int> stack{0};
    visited[0] = true;
    int count = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int w : adj[v])
            if (!visited[w]) {
                visited[w] = true;
                ++count;
                stack.push_back(w);
            }
    }
    if (count != node_count)
        throw DisconnectedGraphError("communication graph is not connected", {});
    return g;
}

CommunicationGraph CommunicationGraph::fromPhysical(const NetworkModel& model) {
    std::vector<std::pair<int, int>> edges;
    edges.reserve(model.lineCount());
    for (int e = 0; e < model.lineCount(); ++e)
        edges.push_back({model.line(e).from, model.line(e).to});
    return build(model.nodeCount(), edges);
}

VectorXd CommunicationGraph::applyIncidence(const VectorXd& edge_values) const {
    VectorXd out = VectorXd::Zero(n_);
    for (int e = 0; e < edgeCount(); ++e) {
        out[edges_[e].first] += edge_values[e];
        out[edges_[e].second] -= edge_values[e];
    }
    return out;
}

VectorXd CommunicationGraph::applyIncidenceTransposed(const VectorXd& node_values) const {
    VectorXd out(edgeCount());
    for (int e = 0; e < edgeCount(); ++e)
        out[e] = node_values[edges_[e].first] - node_values[edges_[e].second];
    return out;
}

VectorXd CommunicationGraph::minimumNormFlow(const VectorXd& rhs) const {
    // Solve L y = rhs on the complement of ones, then nu = D_c^T y; the
    // ones-component of y does not enter nu.
    Eigen::MatrixXd laplacian = incidence_ * incidence_.transpose();
    laplacian.array() += 1.0 / n_; // shift the null space away from zero
    Eigen::LLT<Eigen::MatrixXd> llt(laplacian);
    if (llt.info() != Eigen::Success)
        throw SingularJacobianError("communication Laplacian factorization failed");
    const VectorXd y = llt.solve(rhs);
    return applyIncidenceTransposed(y);
}

ControllerGains ControllerGains::uniform(int n_controllable, int n_nodes, int n_edges,
                                         double tau) {
    ControllerGains g;
    g.tau_g = VectorXd::Constant(n_controllable, tau);
    g.tau_lambda = VectorXd::Constant(n_nodes, tau);
    g.tau_nu = VectorXd::Constant(n_edges, tau);
    g.validate();
    return g;
}

void ControllerGains::validate() const {
    if ((tau_g.size() && tau_g.minCoeff() <= 0.0) ||
        (tau_lambda.size() && tau_lambda.minCoeff() <= 0.0) ||
        (tau_nu.size() && tau_nu.minCoeff() <= 0.0))
        throw NonpositiveParameterError("controller time constants must be positive");
}

ControllerState controller_rhs(const ControllerState& s, const ControllerGains& gains,
                               const CostModel& cost, const CommunicationGraph& comm,
                               const ControllerMeasurements& meas) {
    const int nc = static_cast<int>(s.p_g.size());
    const int n = comm.nodeCount();
    if (s.lambda.size() != n || meas.p_demand.size() != n || meas.phi.size() != n ||
        meas.u_c.size() != nc || s.nu.size() != comm.edgeCount())
        throw SizeMismatchError("controller_rhs: vector sizes do not match the graphs");

    ControllerState d;
    // Controllable nodes occupy the first nc rows of the node ordering.
    const VectorXd grad_c = cost.gradient(s.p_g);
    d.p_g = (-grad_c + s.lambda.head(nc) + meas.u_c).cwiseQuotient(gains.tau_g);

    VectorXd lam = comm.applyIncidence(s.nu) + meas.p_demand + meas.phi;
    lam.head(nc) -= s.p_g;
    d.lambda = lam.cwiseQuotient(gains.tau_lambda);

    d.nu = (-comm.applyIncidenceTransposed(s.lambda)).cwiseQuotient(gains.tau_nu);
    return d;
}

double controller_hamiltonian(const ControllerState& s, const ControllerGains& gains) {
    return 0.5 * (s.p_g.dot(gains.tau_g.cwiseProduct(s.p_g)) +
                  s.lambda.dot(gains.tau_lambda.cwiseProduct(s.lambda)) +
                  s.nu.dot(gains.tau_nu.cwiseProduct(s.nu)));
}

BalanceResult check_balance_feasibility(const CommunicationGraph& comm, const VectorXd& p_g,
                                        const VectorXd& p_demand, const VectorXd& phi) {
    const int n = comm.nodeCount();
    const int nc = static_cast<int>(p_g.size());
    if (p_demand.size() != n || phi.size() != n)
        throw SizeMismatchError("balance check: per-node vectors must have length n");

    VectorXd rhs = -p_demand - phi;
    rhs.head(nc) += p_g;

    BalanceResult out;
    const double imbalance = rhs.sum();
    const double scale = std::max(1.0, rhs.lpNorm<Eigen::Infinity>());
    out.feasible = std::abs(imbalance) <= 1e-9 * scale;
    if (out.feasible)
        out.nu = comm.minimumNormFlow(rhs);
    return out;
}

} // namespace mgsim
