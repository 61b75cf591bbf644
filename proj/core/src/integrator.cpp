#include "mgsim/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace mgsim {

namespace {

ClosedLoopState advance_rk4(const ClosedLoop& sys, const ClosedLoopState& s0, const Exogenous& exo,
                            const SolverSettings& st) {
    const VectorXd y0 = sys.packDifferential(s0);
    ClosedLoopState work = s0;

    const VectorXd k1 = sys.packedRhs(s0, exo);

    sys.unpackDifferential(y0 + 0.5 * st.dt * k1, work);
    sys.refreshAlgebraic(work, exo, st.algebraic_tol, st.newton_max_iter);
    const VectorXd k2 = sys.packedRhs(work, exo);

    sys.unpackDifferential(y0 + 0.5 * st.dt * k2, work);
    sys.refreshAlgebraic(work, exo, st.algebraic_tol, st.newton_max_iter);
    const VectorXd k3 = sys.packedRhs(work, exo);

    sys.unpackDifferential(y0 + st.dt * k3, work);
    sys.refreshAlgebraic(work, exo, st.algebraic_tol, st.newton_max_iter);
    const VectorXd k4 = sys.packedRhs(work, exo);

    sys.unpackDifferential(y0 + st.dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), work);
    sys.refreshAlgebraic(work, exo, st.algebraic_tol, st.newton_max_iter);
    return work;
}

ClosedLoopState advance_trapezoid(const ClosedLoop& sys, const ClosedLoopState& s0,
                                  const Exogenous& exo, const SolverSettings& st) {
    const VectorXd y0 = sys.packDifferential(s0);
    const VectorXd f0 = sys.packedRhs(s0, exo);

    ClosedLoopState work = s0;
    auto residual = [&](const VectorXd& y) {
        sys.unpackDifferential(y, work);
        sys.refreshAlgebraic(work, exo, st.algebraic_tol, st.newton_max_iter);
        return VectorXd(y - y0 - 0.5 * st.dt * (f0 + sys.packedRhs(work, exo)));
    };

    VectorXd y = y0 + st.dt * f0; // explicit Euler predictor
    VectorXd res = residual(y);
    for (int it = 0; it < st.newton_max_iter; ++it) {
        if (res.lpNorm<Eigen::Infinity>() <= std::max(st.algebraic_tol, 1e-12))
            break;
        const int dim = static_cast<int>(y.size());
        Eigen::MatrixXd jac(dim, dim);
        for (int k = 0; k < dim; ++k) {
            const double h = 1e-7 * std::max(1.0, std::abs(y[k]));
            VectorXd yk = y;
            yk[k] += h;
            jac.col(k) = (residual(yk) - res) / h;
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
        y += lu.solve(-res);
        res = residual(y);
        if (it + 1 == st.newton_max_iter && res.lpNorm<Eigen::Infinity>() > 1e-8)
            throw StepRejectedError("implicit trapezoid stage did not converge");
    }
    sys.unpackDifferential(y, work);
    sys.refreshAlgebraic(work, exo, st.algebraic_tol, st.newton_max_iter);
    return work;
}

void check_finite(const TrajectorySample& s) {
    const bool ok = std::isfinite(s.hamiltonian) && std::isfinite(s.losses) &&
                    std::isfinite(s.shifted_hamiltonian) && std::isfinite(s.passivity) &&
                    s.freq_dev_hz.allFinite() && s.p_g.allFinite();
    if (!ok)
        throw StepRejectedError("non-finite value in trajectory at t = " + std::to_string(s.t));
}

} // namespace

ClosedLoopState step(const ClosedLoop& sys, const ClosedLoopState& state, const Exogenous& exo,
                     const SolverSettings& settings) {
    if (!(settings.dt > 0.0) || !(settings.algebraic_tol > 0.0))
        throw ValidationError("solver settings need dt > 0 and algebraic_tol > 0");
    try {
        switch (settings.method) {
        case IntegrationMethod::Rk4WithInnerSolve:
            return advance_rk4(sys, state, exo, settings);
        case IntegrationMethod::ImplicitTrapezoid:
            return advance_trapezoid(sys, state, exo, settings);
        }
    } catch (const NoConvergenceError& e) {
        throw AlgebraicSolveFailedError(e.what());
    }
    throw ValidationError("unknown integration method");
}

TrajectoryRecord simulate(const ClosedLoop& sys, const Equilibrium& initial,
                          std::vector<Event> events, double horizon,
                          const SolverSettings& settings, int decimation) {
    const auto& model = sys.model();
    if (decimation < 1)
        throw ValidationError("decimation must be >= 1");
    if (!(horizon > 0.0))
        throw ValidationError("horizon must be positive");

    std::sort(events.begin(), events.end(),
              [](const Event& a, const Event& b) { return a.time < b.time; });

    const double dt = settings.dt;
    const auto to_step = [&](double t, const char* what) {
        const double k = t / dt;
        const long long rounded = std::llround(k);
        if (std::abs(k - static_cast<double>(rounded)) > 1e-6 || rounded < 0)
            throw ValidationError(std::string(what) + " time " + std::to_string(t) +
                                  " is not an integer multiple of dt");
        return rounded;
    };
    const long long n_steps = to_step(horizon, "horizon");

    struct PendingEvent {
        long long step;
        int node_index;
        Event raw;
    };
    std::vector<PendingEvent> pending;
    for (const Event& ev : events) {
        PendingEvent pe;
        pe.step = to_step(ev.time, "event");
        if (pe.step > n_steps)
            throw ValidationError("event at t = " + std::to_string(ev.time) +
                                  " lies beyond the horizon");
        pe.node_index = model.indexOf(ev.node_id);
        if (ev.delta_q != 0.0 && pe.node_index < model.controllableCount())
            throw ValidationError("reactive demand steps are only defined at load nodes");
        pe.raw = ev;
        pending.push_back(pe);
    }

    TrajectoryRecord rec;
    for (int v = 0; v < model.nodeCount(); ++v)
        rec.node_ids.push_back(model.nodeId(v));
    for (int k = 0; k < model.controllableCount(); ++k)
        rec.controllable_ids.push_back(model.nodeId(k));
    rec.window_equilibria.reserve(pending.size() + 1);
    rec.window_equilibria.push_back({0.0, initial});

    ClosedLoopState state = initial.state;
    Exogenous exo = initial.inputs;
    const Equilibrium* window_eq = &rec.window_equilibria.back().second;

    const double twopi = 2.0 * std::numbers::pi;
    auto emit = [&](double t) {
        TrajectorySample s;
        s.t = t;
        s.freq_dev_hz = sys.plant().nodeFrequencies(state.plant) / twopi;
        s.p_g = state.controller.p_g;
        s.lambda_min = state.controller.lambda.minCoeff();
        s.lambda_max = state.controller.lambda.maxCoeff();
        s.hamiltonian = sys.hamiltonian(state);
        s.shifted_hamiltonian = sys.shiftedHamiltonian(state, *window_eq);
        s.losses = sys.plant().resistiveLosses(state.plant.theta,
                                               sys.plant().nodeVoltages(state.plant));
        s.passivity = sys.passivityResidual(state, *window_eq);
        check_finite(s);
        rec.samples.push_back(std::move(s));
    };

    std::size_t next_event = 0;
    for (long long k = 0; k <= n_steps; ++k) {
        while (next_event < pending.size() && pending[next_event].step == k) {
            const PendingEvent& pe = pending[next_event];
            exo.p_demand[pe.node_index] += pe.raw.delta_p;
            if (pe.raw.delta_q != 0.0)
                exo.q_demand[pe.node_index - model.controllableCount()] += pe.raw.delta_q;
            sys.refreshAlgebraic(state, exo, settings.algebraic_tol, settings.newton_max_iter);

            ClosedLoop::EquilibriumOptions opt;
            opt.mode = ClosedLoop::EquilibriumOptions::Mode::FixedField;
            opt.u_field = exo.u_field;
            rec.window_equilibria.push_back(
                {static_cast<double>(k) * dt,
                 sys.solveEquilibrium(exo.p_demand, exo.q_demand, opt)});
            window_eq = &rec.window_equilibria.back().second;
            ++next_event;
        }
        if (k % decimation == 0 || k == n_steps)
            emit(static_cast<double>(k) * dt);
        if (k < n_steps)
            state = step(sys, state, exo, settings);
    }
    return rec;
}

} // namespace mgsim
