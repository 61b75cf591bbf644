#include "mgsim/plant.hpp"

#include <cmath>
#include <cstdio>
#include <string>

namespace mgsim {

InverterParams inverter_matching(const InverterPhysical& phys) {
    if (!(phys.C_dc > 0.0) || !(phys.G_dc > 0.0) || !(phys.eta > 0.0) || !(phys.omega_n > 0.0))
        throw NonpositiveParameterError("matching transform needs positive C_dc, G_dc, eta, omega_n");
    const double eta2 = phys.eta * phys.eta;
    InverterParams out;
    out.M = phys.C_dc / eta2 * phys.omega_n;
    out.A = phys.G_dc / eta2 * phys.omega_n;
    return out;
}

double dc_current_command(double a_virtual_star, double eta, double omega_n, double p_g,
                          double omega_abs) {
    if (omega_abs == 0.0)
        throw ZeroFrequencyError("DC current command undefined at zero virtual frequency");
    return eta * a_virtual_star * omega_n + eta * p_g / omega_abs;
}

Plant::Plant(NetworkModel model, PlantParams params)
    : model_(std::move(model)), params_(std::move(params)) {
    const auto sz = [](auto& v) { return static_cast<int>(v.size()); };
    if (sz(params_.generators) != model_.generatorCount() ||
        sz(params_.inverters) != model_.inverterCount() || sz(params_.loads) != model_.loadCount())
        throw SizeMismatchError("parameter arrays do not match the node partition");
    for (const auto& g : params_.generators) {
        if (!(g.M > 0.0) || !(g.A > 0.0) || !(g.tauU > 0.0))
            throw NonpositiveParameterError("generator M, A, tauU must be positive");
        if (!(g.Xd > g.Xdp) || !(g.Xdp > 0.0))
            throw NonpositiveParameterError("generator reactances must satisfy Xd > Xdp > 0");
    }
    for (const auto& i : params_.inverters)
        if (!(i.M > 0.0) || !(i.A > 0.0))
            throw NonpositiveParameterError("inverter M, A must be positive");
    for (const auto& l : params_.loads)
        if (l.A < 0.0)
            throw NonpositiveParameterError("load damping must be nonnegative");
}

double Plant::inertia(int k) const {
    const int ng = model_.generatorCount();
    return k < ng ? params_.generators[k].M : params_.inverters[k - ng].M;
}

double Plant::damping(int v) const {
    const int ng = model_.generatorCount();
    const int nc = model_.controllableCount();
    if (v < ng) return params_.generators[v].A;
    if (v < nc) return params_.inverters[v - ng].A;
    return params_.loads[v - nc].A;
}

PlantState Plant::zeroState() const {
    PlantState s;
    s.theta = VectorXd::Zero(model_.nodeCount());
    s.momenta = VectorXd::Zero(model_.controllableCount());
    s.voltage_gen = VectorXd::Ones(model_.generatorCount());
    s.omega_load = VectorXd::Zero(model_.loadCount());
    s.voltage_load = VectorXd::Ones(model_.loadCount());
    return s;
}

VectorXd Plant::nodeVoltages(const PlantState& s) const {
    VectorXd u(model_.nodeCount());
    const int ng = model_.generatorCount();
    const int nc = model_.controllableCount();
    for (int v = 0; v < model_.nodeCount(); ++v) {
        if (v < ng)
            u[v] = s.voltage_gen[v];
        else if (v < nc)
            u[v] = 1.0; // inverter terminals are held at 1 p.u.
        else
            u[v] = s.voltage_load[v - nc];
    }
    return u;
}

VectorXd Plant::nodeFrequencies(const PlantState& s) const {
    VectorXd w(model_.nodeCount());
    const int nc = model_.controllableCount();
    for (int v = 0; v < model_.nodeCount(); ++v)
        w[v] = v < nc ? s.momenta[v] / inertia(v) : s.omega_load[v - nc];
    return w;
}

void Plant::checkVoltages(const VectorXd& u) const {
    for (int v = 0; v < u.size(); ++v)
        if (!(u[v] > 0.0))
            throw NonpositiveVoltageError("voltage at node " +
                                          std::to_string(model_.nodeId(static_cast<int>(v))) +
                                          " is not positive");
}

PowerFlows Plant::powerFlows(const VectorXd& theta, const VectorXd& u) const {
    checkVoltages(u);
    const int n = model_.nodeCount();
    PowerFlows f;
    f.p = VectorXd::Zero(n);
    f.q = VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        const double ui = u[i];
        double p = model_.gSelf(i) * ui * ui;
        // The self term enters q with the sign that makes q_i equal
        // U_i * dH/dU_i on lossless lines.
        double q = -model_.bSelf(i) * ui * ui;
        for (auto [e, j] : model_.incident(i)) {
            const double uij = ui * u[j];
            const double d = theta[i] - theta[j];
            const double b = model_.bLine(e);
            const double g = model_.gLine(e);
            p += b * uij * std::sin(d) + g * uij * std::cos(d);
            q += -b * uij * std::cos(d) + g * uij * std::sin(d);
        }
        f.p[i] = p;
        f.q[i] = q;
    }
    return f;
}

double Plant::resistiveLosses(const VectorXd& theta, const VectorXd& u) const {
    checkVoltages(u);
    double phi = 0.0;
    for (int i = 0; i < model_.nodeCount(); ++i)
        phi += model_.gSelf(i) * u[i] * u[i];
    for (int e = 0; e < model_.lineCount(); ++e) {
        const auto& l = model_.line(e);
        phi += 2.0 * model_.gLine(e) * u[l.from] * u[l.to] *
               std::cos(theta[l.from] - theta[l.to]);
    }
    return phi;
}

ConductanceTerms Plant::conductanceTerms(const VectorXd& theta, const VectorXd& u) const {
    checkVoltages(u);
    const int n = model_.nodeCount();
    ConductanceTerms t;
    t.phi = VectorXd::Zero(n);
    t.rho = VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        const double ui = u[i];
        double phi = model_.gSelf(i) * ui * ui;
        double rho = 0.0;
        for (auto [e, j] : model_.incident(i)) {
            const double guij = model_.gLine(e) * ui * u[j];
            const double d = theta[i] - theta[j];
            phi += guij * std::cos(d);
            rho += guij * std::sin(d);
        }
        t.phi[i] = phi;
        t.rho[i] = rho;
    }
    for (int g = 0; g < model_.generatorCount(); ++g) {
        const auto& gp = params_.generators[g];
        t.rho[g] *= (gp.Xd - gp.Xdp) / gp.tauU;
    }
    return t;
}

double Plant::hamiltonian(const PlantState& s) const {
    const VectorXd u = nodeVoltages(s);
    double h = 0.0;
    for (int g = 0; g < model_.generatorCount(); ++g) {
        const auto& gp = params_.generators[g];
        h += 0.5 * (s.momenta[g] * s.momenta[g] / gp.M +
                    s.voltage_gen[g] * s.voltage_gen[g] / (gp.Xd - gp.Xdp));
    }
    for (int i = 0; i < model_.inverterCount(); ++i) {
        const int k = model_.generatorCount() + i;
        h += 0.5 * s.momenta[k] * s.momenta[k] / params_.inverters[i].M;
    }
    for (int v = 0; v < model_.nodeCount(); ++v)
        h -= 0.5 * model_.bSelf(v) * u[v] * u[v];
    for (int e = 0; e < model_.lineCount(); ++e) {
        const auto& l = model_.line(e);
        h -= model_.bLine(e) * u[l.from] * u[l.to] * std::cos(s.theta[l.from] - s.theta[l.to]);
    }
    h += 0.5 * s.omega_load.squaredNorm();
    return h;
}

PlantGradient Plant::gradient(const PlantState& s) const {
    const VectorXd u = nodeVoltages(s);
    const int n = model_.nodeCount();
    const int ng = model_.generatorCount();
    const int nc = model_.controllableCount();

    PlantGradient g;
    g.d_theta = VectorXd::Zero(n);
    g.d_momenta = VectorXd::Zero(nc);
    g.d_voltage_gen = VectorXd::Zero(ng);
    g.d_omega_load = s.omega_load;
    g.d_voltage_load = VectorXd::Zero(model_.loadCount());

    for (int i = 0; i < n; ++i) {
        double dtheta = 0.0;
        double du = -model_.bSelf(i) * u[i];
        for (auto [e, j] : model_.incident(i)) {
            const double b = model_.bLine(e);
            const double d = s.theta[i] - s.theta[j];
            dtheta += b * u[i] * u[j] * std::sin(d);
            du -= b * u[j] * std::cos(d);
        }
        g.d_theta[i] = dtheta;
        if (i < ng)
            g.d_voltage_gen[i] = du + s.voltage_gen[i] / (params_.generators[i].Xd -
                                                          params_.generators[i].Xdp);
        else if (i >= nc)
            g.d_voltage_load[i - nc] = du;
    }
    for (int k = 0; k < nc; ++k)
        g.d_momenta[k] = s.momenta[k] / inertia(k);
    return g;
}

PlantRhs Plant::rhs(const PlantState& s, const PlantInputs& in) const {
    const VectorXd u = nodeVoltages(s);
    const PowerFlows f = powerFlows(s.theta, u);
    const VectorXd omega = nodeFrequencies(s);
    const int ng = model_.generatorCount();
    const int nc = model_.controllableCount();
    const int nl = model_.loadCount();

    PlantRhs r;
    r.theta_dot = omega;
    r.momenta_dot = VectorXd::Zero(nc);
    for (int k = 0; k < nc; ++k)
        r.momenta_dot[k] = -damping(k) * omega[k] + in.p_gen[k] - in.p_demand[k] - f.p[k];
    r.voltage_dot = VectorXd::Zero(ng);
    for (int g = 0; g < ng; ++g) {
        const auto& gp = params_.generators[g];
        r.voltage_dot[g] = (in.u_field[g] - s.voltage_gen[g] -
                            (gp.Xd - gp.Xdp) / s.voltage_gen[g] * f.q[g]) /
                           gp.tauU;
    }
    r.residual_p = VectorXd::Zero(nl);
    r.residual_q = VectorXd::Zero(nl);
    for (int l = 0; l < nl; ++l) {
        const int v = nc + l;
        r.residual_p[l] = -params_.loads[l].A * s.omega_load[l] - in.p_demand[v] - f.p[v];
        r.residual_q[l] = -in.q_demand[l] - f.q[v];
    }
    return r;
}

DescriptorRhs Plant::rhsInDescriptorCoords(const PlantState& s, const PlantInputs& in) const {
    const PlantRhs r = rhs(s, in);
    DescriptorRhs d;
    d.vartheta_dot = VectorXd::Zero(model_.lineCount());
    for (int e = 0; e < model_.lineCount(); ++e) {
        const auto& l = model_.line(e);
        d.vartheta_dot[e] = r.theta_dot[l.from] - r.theta_dot[l.to];
    }
    d.momenta_dot = r.momenta_dot;
    d.voltage_dot = r.voltage_dot;
    d.residual_p = r.residual_p;
    d.residual_q = r.residual_q;
    return d;
}

DescriptorRhs Plant::phsFormRhs(const PlantState& s, const PlantInputs& in) const {
    const VectorXd u = nodeVoltages(s);
    const PlantGradient grad = gradient(s);
    const ConductanceTerms ct = conductanceTerms(s.theta, u);
    const VectorXd omega = nodeFrequencies(s);
    const int ng = model_.generatorCount();
    const int nc = model_.controllableCount();
    const int nl = model_.loadCount();

    DescriptorRhs d;
    // Edge-angle rows: D_p^T * (frequencies read off grad H).
    d.vartheta_dot = VectorXd::Zero(model_.lineCount());
    for (int e = 0; e < model_.lineCount(); ++e) {
        const auto& l = model_.line(e);
        const double wi = l.from < nc ? grad.d_momenta[l.from] : grad.d_omega_load[l.from - nc];
        const double wj = l.to < nc ? grad.d_momenta[l.to] : grad.d_omega_load[l.to - nc];
        d.vartheta_dot[e] = wi - wj;
    }
    // Momentum rows: -D_p grad_vartheta H - A grad_L H - phi + p_gen - p_demand.
    // The incidence-weighted edge gradient collapses to grad.d_theta.
    d.momenta_dot = VectorXd::Zero(nc);
    for (int k = 0; k < nc; ++k)
        d.momenta_dot[k] = -grad.d_theta[k] - damping(k) * omega[k] - ct.phi[k] + in.p_gen[k] -
                           in.p_demand[k];
    // Voltage rows: -R_g grad_U H - rho_G + u_field / tauU.
    d.voltage_dot = VectorXd::Zero(ng);
    for (int g = 0; g < ng; ++g) {
        const auto& gp = params_.generators[g];
        const double r_g = (gp.Xd - gp.Xdp) / gp.tauU;
        d.voltage_dot[g] = -r_g * grad.d_voltage_gen[g] - ct.rho[g] + in.u_field[g] / gp.tauU;
    }
    // Load rows.
    d.residual_p = VectorXd::Zero(nl);
    d.residual_q = VectorXd::Zero(nl);
    for (int l = 0; l < nl; ++l) {
        const int v = nc + l;
        d.residual_p[l] = -grad.d_theta[v] - params_.loads[l].A * s.omega_load[l] - ct.phi[v] -
                          in.p_demand[v];
        d.residual_q[l] = -u[v] * grad.d_voltage_load[l] - ct.rho[v] - in.q_demand[l];
    }
    return d;
}

AlgebraicSolveResult Plant::solveAlgebraic(const PlantState& differential, const PlantInputs& in,
                                           const VectorXd& omega_guess,
                                           const VectorXd& voltage_guess, double tol,
                                           int max_iter) const {
    const int nl = model_.loadCount();
    AlgebraicSolveResult out;
    out.omega_load = omega_guess;
    out.voltage_load = voltage_guess;
    if (nl == 0)
        return out;

    const int nc = model_.controllableCount();
    PlantState s = differential;
    s.omega_load = omega_guess;
    s.voltage_load = voltage_guess;

    auto residual = [&](const PlantState& st) {
        const PlantRhs r = rhs(st, in);
        VectorXd res(2 * nl);
        res.head(nl) = r.residual_p;
        res.tail(nl) = r.residual_q;
        return res;
    };

    VectorXd res = residual(s);
    for (int it = 1; it <= max_iter; ++it) {
        if (res.lpNorm<Eigen::Infinity>() <= tol) {
            out.omega_load = s.omega_load;
            out.voltage_load = s.voltage_load;
            out.iterations = it - 1;
            return out;
        }
        // Jacobian of (residual_p, residual_q) w.r.t. (omega_load, voltage_load).
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * nl, 2 * nl);
        const VectorXd u = nodeVoltages(s);
        for (int l = 0; l < nl; ++l) {
            const int i = nc + l;
            jac(l, l) = -params_.loads[l].A;
            double dp_dui = 2.0 * model_.gSelf(i) * u[i];
            double dq_dui = -2.0 * model_.bSelf(i) * u[i];
            for (auto [e, j] : model_.incident(i)) {
                const double b = model_.bLine(e);
                const double g = model_.gLine(e);
                const double d = s.theta[i] - s.theta[j];
                dp_dui += b * u[j] * std::sin(d) + g * u[j] * std::cos(d);
                dq_dui += -b * u[j] * std::cos(d) + g * u[j] * std::sin(d);
                if (j >= nc) { // neighbor is also a load node
                    const int lj = j - nc;
                    jac(l, nl + lj) -= b * u[i] * std::sin(d) + g * u[i] * std::cos(d);
                    jac(nl + l, nl + lj) -= -b * u[i] * std::cos(d) + g * u[i] * std::sin(d);
                }
            }
            jac(l, nl + l) -= dp_dui;
            jac(nl + l, nl + l) -= dq_dui;
        }

        Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
        if (!lu.isInvertible())
            throw SingularJacobianError("algebraic constraint Jacobian is singular");
        const VectorXd step = lu.solve(-res);

        // Damped update; keep voltages positive.
        double alpha = 1.0;
        const double res_norm = res.lpNorm<Eigen::Infinity>();
        for (int half = 0; half < 30; ++half) {
            PlantState trial = s;
            trial.omega_load = s.omega_load + alpha * step.head(nl);
            trial.voltage_load = s.voltage_load + alpha * step.tail(nl);
            if (trial.voltage_load.minCoeff() > 0.0) {
                const VectorXd trial_res = residual(trial);
                if (trial_res.lpNorm<Eigen::Infinity>() < res_norm || alpha < 1e-3) {
                    s = trial;
                    res = trial_res;
                    break;
                }
            }
            alpha *= 0.5;
        }
    }
    if (res.lpNorm<Eigen::Infinity>() <= tol) {
        out.omega_load = s.omega_load;
        out.voltage_load = s.voltage_load;
        out.iterations = max_iter;
        return out;
    }
    char msg[128];
    std::snprintf(msg, sizeof(msg), "algebraic solve did not reach tolerance %.3g within %d iterations",
                  tol, max_iter);
    throw NoConvergenceError(msg);
}

} // namespace mgsim
