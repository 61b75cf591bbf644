#include "mgsim/closed_loop.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

namespace mgsim {

ClosedLoop::ClosedLoop(Plant plant, CostModel cost, CommunicationGraph comm,
                       ControllerGains gains)
    : plant_(std::move(plant)), cost_(std::move(cost)), comm_(std::move(comm)),
      gains_(std::move(gains)) {
    const auto& m = plant_.model();
    if (cost_.weights.size() != m.controllableCount())
        throw SizeMismatchError("cost weights must cover the controllable nodes");
    if (cost_.weights.minCoeff() <= 0.0)
        throw NonpositiveParameterError("cost weights must be positive");
    if (comm_.nodeCount() != m.nodeCount())
        throw SizeMismatchError("communication graph node count differs from the network");
    if (gains_.tau_g.size() != m.controllableCount() || gains_.tau_lambda.size() != m.nodeCount() ||
        gains_.tau_nu.size() != comm_.edgeCount())
        throw SizeMismatchError("controller gain sizes do not match the graphs");
    gains_.validate();
}

ClosedLoopState ClosedLoop::zeroState() const {
    ClosedLoopState s;
    s.plant = plant_.zeroState();
    s.controller.p_g = VectorXd::Zero(model().controllableCount());
    s.controller.lambda = VectorXd::Zero(model().nodeCount());
    s.controller.nu = VectorXd::Zero(comm_.edgeCount());
    return s;
}

ClosedLoopRhs ClosedLoop::rhs(const ClosedLoopState& s, const Exogenous& exo) const {
    const int nc = model().controllableCount();

    PlantInputs pin;
    pin.p_gen = s.controller.p_g;
    pin.u_field = exo.u_field;
    pin.p_demand = exo.p_demand;
    pin.q_demand = exo.q_demand;

    ClosedLoopRhs out;
    out.plant = plant_.rhs(s.plant, pin);

    const VectorXd omega = plant_.nodeFrequencies(s.plant);
    ControllerMeasurements meas;
    meas.u_c = -omega.head(nc);
    meas.p_demand = exo.p_demand;
    meas.phi = plant_.conductanceTerms(s.plant.theta, plant_.nodeVoltages(s.plant)).phi;
    out.controller = controller_rhs(s.controller, gains_, cost_, comm_, meas);
    return out;
}

double ClosedLoop::hamiltonian(const ClosedLoopState& s) const {
    return plant_.hamiltonian(s.plant) + controller_hamiltonian(s.controller, gains_);
}

VectorXd ClosedLoop::edgeAngleGradient(const PlantState& s) const {
    const auto& m = model();
    const VectorXd u = plant_.nodeVoltages(s);
    VectorXd g(m.lineCount());
    for (int e = 0; e < m.lineCount(); ++e) {
        const auto& l = m.line(e);
        g[e] = m.bLine(e) * u[l.from] * u[l.to] * std::sin(s.theta[l.from] - s.theta[l.to]);
    }
    return g;
}

VectorXd ClosedLoop::flatten(const ClosedLoopState& s) const {
    const auto& m = model();
    const int nc = m.controllableCount();
    const int n = m.nodeCount();
    const int mc = comm_.edgeCount();
    const int mp = m.lineCount();
    const int ng = m.generatorCount();
    const int nl = m.loadCount();

    VectorXd x(nc + n + mc + mp + nc + ng + 2 * nl);
    int at = 0;
    x.segment(at, nc) = gains_.tau_g.cwiseProduct(s.controller.p_g);
    at += nc;
    x.segment(at, n) = gains_.tau_lambda.cwiseProduct(s.controller.lambda);
    at += n;
    x.segment(at, mc) = gains_.tau_nu.cwiseProduct(s.controller.nu);
    at += mc;
    for (int e = 0; e < mp; ++e) {
        const auto& l = m.line(e);
        x[at + e] = s.plant.theta[l.from] - s.plant.theta[l.to];
    }
    at += mp;
    x.segment(at, nc) = s.plant.momenta;
    at += nc;
    x.segment(at, ng) = s.plant.voltage_gen;
    at += ng;
    x.segment(at, nl) = s.plant.omega_load;
    at += nl;
    x.segment(at, nl) = s.plant.voltage_load;
    return x;
}

VectorXd ClosedLoop::hamiltonianGradient(const ClosedLoopState& s) const {
    const auto& m = model();
    const int nc = m.controllableCount();
    const int n = m.nodeCount();
    const int mc = comm_.edgeCount();
    const int mp = m.lineCount();
    const int ng = m.generatorCount();
    const int nl = m.loadCount();

    const PlantGradient pg = plant_.gradient(s.plant);

    VectorXd g(nc + n + mc + mp + nc + ng + 2 * nl);
    int at = 0;
    g.segment(at, nc) = s.controller.p_g;
    at += nc;
    g.segment(at, n) = s.controller.lambda;
    at += n;
    g.segment(at, mc) = s.controller.nu;
    at += mc;
    g.segment(at, mp) = edgeAngleGradient(s.plant);
    at += mp;
    g.segment(at, nc) = pg.d_momenta;
    at += nc;
    g.segment(at, ng) = pg.d_voltage_gen;
    at += ng;
    g.segment(at, nl) = pg.d_omega_load;
    at += nl;
    g.segment(at, nl) = pg.d_voltage_load;
    return g;
}

VectorXd ClosedLoop::dissipation(const ClosedLoopState& s) const {
    const auto& m = model();
    const int nc = m.controllableCount();
    const int n = m.nodeCount();
    const int mc = comm_.edgeCount();
    const int mp = m.lineCount();
    const int ng = m.generatorCount();
    const int nl = m.loadCount();

    const VectorXd u = plant_.nodeVoltages(s.plant);
    const ConductanceTerms ct = plant_.conductanceTerms(s.plant.theta, u);
    const PlantGradient pg = plant_.gradient(s.plant);
    const VectorXd omega = plant_.nodeFrequencies(s.plant);

    VectorXd r = VectorXd::Zero(nc + n + mc + mp + nc + ng + 2 * nl);
    int at = 0;
    r.segment(at, nc) = cost_.gradient(s.controller.p_g);
    at += nc;
    r.segment(at, n) = -ct.phi;
    at += n;
    at += mc; // nu rows carry no dissipation
    at += mp; // neither do the edge-angle rows
    for (int k = 0; k < nc; ++k)
        r[at + k] = plant_.damping(k) * omega[k] + ct.phi[k];
    at += nc;
    for (int g = 0; g < ng; ++g) {
        const auto& gp = plant_.params().generators[g];
        r[at + g] = (gp.Xd - gp.Xdp) / gp.tauU * pg.d_voltage_gen[g] + ct.rho[g];
    }
    at += ng;
    for (int l = 0; l < nl; ++l)
        r[at + l] = plant_.params().loads[l].A * s.plant.omega_load[l] + ct.phi[nc + l];
    at += nl;
    for (int l = 0; l < nl; ++l)
        r[at + l] = s.plant.voltage_load[l] * pg.d_voltage_load[l] + ct.rho[nc + l];
    return r;
}

double ClosedLoop::shiftedHamiltonian(const ClosedLoopState& s, const Equilibrium& eq) const {
    const VectorXd dx = flatten(s) - flatten(eq.state);
    return hamiltonian(s) - dx.dot(hamiltonianGradient(eq.state)) - hamiltonian(eq.state);
}

double ClosedLoop::passivityResidual(const ClosedLoopState& s, const Equilibrium& eq) const {
    const VectorXd dg = hamiltonianGradient(s) - hamiltonianGradient(eq.state);
    const VectorXd dr = dissipation(s) - dissipation(eq.state);
    return dg.dot(dr);
}

StructureMatrices ClosedLoop::assembleStructure(const ClosedLoopState* at) const {
    const auto& m = model();
    const int nc = m.controllableCount();
    const int n = m.nodeCount();
    const int mc = comm_.edgeCount();
    const int mp = m.lineCount();
    const int ng = m.generatorCount();
    const int nl = m.loadCount();

    StructureMatrices sm;
    sm.size = nc + n + mc + mp + nc + ng + 2 * nl;
    sm.offset_pg = 0;
    sm.offset_lambda = nc;
    sm.offset_nu = nc + n;
    sm.offset_vartheta = nc + n + mc;
    sm.offset_momenta = sm.offset_vartheta + mp;
    sm.offset_voltage = sm.offset_momenta + nc;
    sm.offset_omega_load = sm.offset_voltage + ng;
    sm.offset_voltage_load = sm.offset_omega_load + nl;

    sm.J = Eigen::MatrixXd::Zero(sm.size, sm.size);
    sm.R = Eigen::MatrixXd::Zero(sm.size, sm.size);
    sm.F = Eigen::MatrixXd::Zero(sm.size, ng + nl + n);
    sm.E_diag = Eigen::VectorXd::Ones(sm.size);

    // J: price coupling I_g between p_g and lambda.
    for (int k = 0; k < nc; ++k) {
        sm.J(sm.offset_pg + k, sm.offset_lambda + k) = 1.0;
        sm.J(sm.offset_lambda + k, sm.offset_pg + k) = -1.0;
    }
    // J: communication incidence between lambda and nu.
    for (int e = 0; e < mc; ++e) {
        auto [i, j] = comm_.edge(e);
        sm.J(sm.offset_lambda + i, sm.offset_nu + e) = 1.0;
        sm.J(sm.offset_nu + e, sm.offset_lambda + i) = -1.0;
        sm.J(sm.offset_lambda + j, sm.offset_nu + e) = -1.0;
        sm.J(sm.offset_nu + e, sm.offset_lambda + j) = 1.0;
    }
    // J: power-preserving interconnection u_c = -omega.
    for (int k = 0; k < nc; ++k) {
        sm.J(sm.offset_pg + k, sm.offset_momenta + k) = -1.0;
        sm.J(sm.offset_momenta + k, sm.offset_pg + k) = 1.0;
    }
    // J: physical incidence between edge angles and frequencies.
    for (int e = 0; e < mp; ++e) {
        const auto& l = m.line(e);
        for (auto [v, sign] : {std::pair{l.from, 1.0}, std::pair{l.to, -1.0}}) {
            const int row = v < nc ? sm.offset_momenta + v : sm.offset_omega_load + (v - nc);
            sm.J(sm.offset_vartheta + e, row) = sign;
            sm.J(row, sm.offset_vartheta + e) = -sign;
        }
    }

    // R: damping, voltage dissipation, load-voltage weights.
    for (int k = 0; k < nc; ++k)
        sm.R(sm.offset_momenta + k, sm.offset_momenta + k) = plant_.damping(k);
    for (int g = 0; g < ng; ++g) {
        const auto& gp = plant_.params().generators[g];
        sm.R(sm.offset_voltage + g, sm.offset_voltage + g) = (gp.Xd - gp.Xdp) / gp.tauU;
    }
    for (int l = 0; l < nl; ++l) {
        sm.R(sm.offset_omega_load + l, sm.offset_omega_load + l) = plant_.params().loads[l].A;
        const double u_l = at ? at->plant.voltage_load[l] : 1.0;
        sm.R(sm.offset_voltage_load + l, sm.offset_voltage_load + l) = u_l;
    }

    // F for u = col{U_f, q_l, p_l}.
    const int col_uf = 0, col_ql = ng, col_pl = ng + nl;
    for (int g = 0; g < ng; ++g)
        sm.F(sm.offset_voltage + g, col_uf + g) = 1.0 / plant_.params().generators[g].tauU;
    for (int l = 0; l < nl; ++l)
        sm.F(sm.offset_voltage_load + l, col_ql + l) = -1.0;
    for (int i = 0; i < n; ++i)
        sm.F(sm.offset_lambda + i, col_pl + i) = 1.0;
    for (int k = 0; k < nc; ++k)
        sm.F(sm.offset_momenta + k, col_pl + k) = -1.0;
    for (int l = 0; l < nl; ++l)
        sm.F(sm.offset_omega_load + l, col_pl + nc + l) = -1.0;

    for (int l = 0; l < 2 * nl; ++l)
        sm.E_diag[sm.offset_omega_load + l] = 0.0;
    return sm;
}

namespace {

/// Damped Newton with a forward-difference Jacobian on a small system.
VectorXd newton_solve(const std::function<VectorXd(const VectorXd&)>& residual, VectorXd v,
                      double tol, int max_iter, const char* what) {
    VectorXd res = residual(v);
    for (int it = 0; it < max_iter; ++it) {
        const double norm = res.lpNorm<Eigen::Infinity>();
        if (norm <= tol)
            return v;
        const int dim = static_cast<int>(v.size());
        Eigen::MatrixXd jac(res.size(), dim);
        for (int k = 0; k < dim; ++k) {
            const double h = 1e-7 * std::max(1.0, std::abs(v[k]));
            VectorXd vk = v;
            vk[k] += h;
            jac.col(k) = (residual(vk) - res) / h;
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
        if (!lu.isInvertible())
            throw SingularJacobianError(std::string(what) +
                                        ": Jacobian is singular (infeasible loading?)");
        const VectorXd step = lu.solve(-res);
        double alpha = 1.0;
        for (int half = 0; half < 40; ++half) {
            VectorXd trial = v + alpha * step;
            VectorXd trial_res;
            bool ok = true;
            try {
                trial_res = residual(trial);
            } catch (const Error&) {
                ok = false; // e.g. a voltage went nonpositive, backtrack
            }
            if (ok && (trial_res.lpNorm<Eigen::Infinity>() < norm || alpha < 1e-4)) {
                v = trial;
                res = trial_res;
                break;
            }
            alpha *= 0.5;
            if (half == 39)
                throw NoConvergenceError(std::string(what) + ": line search failed");
        }
    }
    if (res.lpNorm<Eigen::Infinity>() <= tol)
        return v;
    char msg[160];
    std::snprintf(msg, sizeof(msg), "%s: no convergence to %.3g, residual %.3g", what, tol,
                  res.lpNorm<Eigen::Infinity>());
    throw NoConvergenceError(msg);
}

} // namespace

Equilibrium ClosedLoop::solveEquilibrium(const VectorXd& p_demand,
                                         const VectorXd& q_demand) const {
    return solveEquilibrium(p_demand, q_demand, EquilibriumOptions{});
}

Equilibrium ClosedLoop::solveEquilibrium(const VectorXd& p_demand, const VectorXd& q_demand,
                                         const EquilibriumOptions& options) const {
    const auto& m = model();
    const int n = m.nodeCount();
    const int nc = m.controllableCount();
    const int ng = m.generatorCount();
    const int nl = m.loadCount();
    if (p_demand.size() != n || q_demand.size() != nl)
        throw SizeMismatchError("equilibrium: demand vectors must be sized (n, n_load)");
    const bool fixed_field = options.mode == EquilibriumOptions::Mode::FixedField;
    if (fixed_field && options.u_field.size() != ng)
        throw SizeMismatchError("equilibrium: FixedField mode needs an excitation vector");

    // Unknowns: theta (all but the reference node), [U_g], U_l, lambda_bar.
    const int n_theta = n - 1;
    const int n_ug = fixed_field ? ng : 0;
    const int dim = n_theta + n_ug + nl + 1;

    auto unpack = [&](const VectorXd& v, PlantState& ps, double& lambda_bar) {
        ps.theta[0] = 0.0;
        ps.theta.tail(n_theta) = v.head(n_theta);
        if (fixed_field)
            ps.voltage_gen = v.segment(n_theta, ng);
        ps.voltage_load = v.segment(n_theta + n_ug, nl);
        lambda_bar = v[dim - 1];
    };

    auto residual = [&](const VectorXd& v) {
        PlantState ps = plant_.zeroState();
        double lambda_bar = 0.0;
        unpack(v, ps, lambda_bar);
        const VectorXd u = plant_.nodeVoltages(ps);
        const PowerFlows f = plant_.powerFlows(ps.theta, u);
        VectorXd res(nc + n_ug + 2 * nl);
        for (int k = 0; k < nc; ++k)
            res[k] = cost_.weights[k] * lambda_bar - p_demand[k] - f.p[k];
        if (fixed_field)
            for (int g = 0; g < ng; ++g) {
                const auto& gp = plant_.params().generators[g];
                res[nc + g] = options.u_field[g] - ps.voltage_gen[g] -
                              (gp.Xd - gp.Xdp) / ps.voltage_gen[g] * f.q[g];
            }
        for (int l = 0; l < nl; ++l) {
            res[nc + n_ug + l] = -p_demand[nc + l] - f.p[nc + l];
            res[nc + n_ug + nl + l] = -q_demand[l] - f.q[nc + l];
        }
        return res;
    };

    VectorXd v0 = VectorXd::Zero(dim);
    if (fixed_field)
        v0.segment(n_theta, ng).setOnes();
    v0.segment(n_theta + n_ug, nl).setOnes();
    v0[dim - 1] = p_demand.sum() / cost_.weights.sum();

    const VectorXd v =
        newton_solve(residual, v0, options.tolerance, options.max_iterations, "equilibrium solve");

    Equilibrium eq;
    eq.state = zeroState();
    unpack(v, eq.state.plant, eq.lambda_bar);

    const VectorXd u = plant_.nodeVoltages(eq.state.plant);
    const PowerFlows f = plant_.powerFlows(eq.state.plant.theta, u);
    eq.inputs.p_demand = p_demand;
    eq.inputs.q_demand = q_demand;
    if (fixed_field) {
        eq.inputs.u_field = options.u_field;
    } else {
        eq.inputs.u_field = VectorXd(ng);
        for (int g = 0; g < ng; ++g) {
            const auto& gp = plant_.params().generators[g];
            eq.inputs.u_field[g] = eq.state.plant.voltage_gen[g] +
                                   (gp.Xd - gp.Xdp) / eq.state.plant.voltage_gen[g] * f.q[g];
        }
    }

    eq.state.controller.p_g = cost_.weights * eq.lambda_bar;
    eq.state.controller.lambda = VectorXd::Constant(n, eq.lambda_bar);
    const ConductanceTerms ct = plant_.conductanceTerms(eq.state.plant.theta, u);
    VectorXd balance_rhs = -p_demand - ct.phi;
    balance_rhs.head(nc) += eq.state.controller.p_g;
    eq.state.controller.nu = comm_.minimumNormFlow(balance_rhs);
    eq.losses = plant_.resistiveLosses(eq.state.plant.theta, u);
    return eq;
}

PropositionReport ClosedLoop::verifyPropositions(const Equilibrium& eq) const {
    PropositionReport rep;
    const ClosedLoopRhs r = rhs(eq.state, eq.inputs);
    double rmax = 0.0;
    for (const VectorXd* part :
         {&r.plant.theta_dot, &r.plant.momenta_dot, &r.plant.voltage_dot, &r.plant.residual_p,
          &r.plant.residual_q, &r.controller.p_g, &r.controller.lambda, &r.controller.nu})
        if (part->size())
            rmax = std::max(rmax, part->lpNorm<Eigen::Infinity>());
    rep.max_rhs_residual = rmax;

    const VectorXd omega = plant_.nodeFrequencies(eq.state.plant);
    rep.max_abs_omega = omega.lpNorm<Eigen::Infinity>();

    const VectorXd marginal = cost_.gradient(eq.state.controller.p_g);
    rep.marginal_price_spread = marginal.maxCoeff() - marginal.minCoeff();
    const VectorXd share = eq.state.controller.p_g.cwiseQuotient(cost_.weights);
    rep.sharing_spread = share.maxCoeff() - share.minCoeff();
    rep.lambda_spread =
        eq.state.controller.lambda.maxCoeff() - eq.state.controller.lambda.minCoeff();
    rep.balance_residual =
        std::abs(eq.state.controller.p_g.sum() - eq.inputs.p_demand.sum() - eq.losses);
    return rep;
}

int ClosedLoop::differentialSize() const {
    const auto& m = model();
    return m.nodeCount() * 2 + m.controllableCount() * 2 + m.generatorCount() + comm_.edgeCount();
}

VectorXd ClosedLoop::packDifferential(const ClosedLoopState& s) const {
    VectorXd y(differentialSize());
    int at = 0;
    auto put = [&](const VectorXd& v) {
        y.segment(at, v.size()) = v;
        at += static_cast<int>(v.size());
    };
    put(s.plant.theta);
    put(s.plant.momenta);
    put(s.plant.voltage_gen);
    put(s.controller.p_g);
    put(s.controller.lambda);
    put(s.controller.nu);
    return y;
}

void ClosedLoop::unpackDifferential(const VectorXd& y, ClosedLoopState& s) const {
    int at = 0;
    auto take = [&](VectorXd& v) {
        v = y.segment(at, v.size());
        at += static_cast<int>(v.size());
    };
    take(s.plant.theta);
    take(s.plant.momenta);
    take(s.plant.voltage_gen);
    take(s.controller.p_g);
    take(s.controller.lambda);
    take(s.controller.nu);
}

VectorXd ClosedLoop::packedRhs(const ClosedLoopState& s, const Exogenous& exo) const {
    const ClosedLoopRhs r = rhs(s, exo);
    VectorXd y(differentialSize());
    int at = 0;
    auto put = [&](const VectorXd& v) {
        y.segment(at, v.size()) = v;
        at += static_cast<int>(v.size());
    };
    put(r.plant.theta_dot);
    put(r.plant.momenta_dot);
    put(r.plant.voltage_dot);
    put(r.controller.p_g);
    put(r.controller.lambda);
    put(r.controller.nu);
    return y;
}

int ClosedLoop::refreshAlgebraic(ClosedLoopState& s, const Exogenous& exo, double tol,
                                 int max_iter) const {
    PlantInputs pin;
    pin.p_gen = s.controller.p_g;
    pin.u_field = exo.u_field;
    pin.p_demand = exo.p_demand;
    pin.q_demand = exo.q_demand;
    const AlgebraicSolveResult r =
        plant_.solveAlgebraic(s.plant, pin, s.plant.omega_load, s.plant.voltage_load, tol, max_iter);
    s.plant.omega_load = r.omega_load;
    s.plant.voltage_load = r.voltage_load;
    return r.iterations;
}

} // namespace mgsim
