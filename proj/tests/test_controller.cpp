#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "mgsim/controller.hpp"

using namespace mgsim;

namespace {

CommunicationGraph paper18_comm() {
    const BuiltScenario built = build_scenario(mgsim::test::load_paper18());
    return built.system.comm();
}

} // namespace

TEST_CASE("cost model") {
    CostModel c;
    c.weights = VectorXd::Ones(2);
    c.weights[1] = 1.1;

    CHECK(c.cost(VectorXd::Zero(2)) == 0.0);
    CHECK(c.gradient(VectorXd::Zero(2)).cwiseAbs().maxCoeff() == 0.0);

    VectorXd pg(2);
    pg << 1.0, 1.1;
    const VectorXd g = c.gradient(pg);
    CHECK(g[0] == doctest::Approx(1.0));
    CHECK(g[1] == doctest::Approx(1.0)); // equal marginal prices at proportional setpoints

    CostModel single;
    single.weights = VectorXd::Ones(1);
    CHECK(single.cost(VectorXd::Constant(1, 2.0)) == doctest::Approx(2.0));
    CHECK(single.gradient(VectorXd::Constant(1, 2.0))[0] == doctest::Approx(2.0));

    CHECK_THROWS_AS(c.cost(VectorXd::Zero(3)), SizeMismatchError);
    CHECK_THROWS_AS(c.gradient(VectorXd::Zero(1)), SizeMismatchError);
}

TEST_CASE("default weight ladder") {
    const VectorXd w = default_cost_weights(4);
    CHECK(w[0] == doctest::Approx(1.0));
    CHECK(w[1] == doctest::Approx(1.1));
    CHECK(w[2] == doctest::Approx(1.2));
    CHECK(w[3] == doctest::Approx(1.3));
}

TEST_CASE("cost gradient is strongly monotone") {
    CostModel c;
    c.weights = default_cost_weights(5);
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        VectorXd a(5), b(5);
        for (int i = 0; i < 5; ++i) {
            a[i] = uni(rng);
            b[i] = uni(rng);
        }
        const double lhs = (c.gradient(a) - c.gradient(b)).dot(a - b);
        const double bound = (1.0 / c.weights.maxCoeff()) * (a - b).squaredNorm();
        CHECK(lhs >= bound - 1e-12);
    }
}

TEST_CASE("communication graph") {
    CHECK_THROWS_AS(CommunicationGraph::build(3, {{0, 1}}), DisconnectedGraphError);
    CHECK_THROWS_AS(CommunicationGraph::build(2, {{0, 0}}), ValidationError);

    const CommunicationGraph g = CommunicationGraph::build(3, {{0, 1}, {1, 2}, {0, 2}});
    CHECK(g.edgeCount() == 3);
    // Column sums of the incidence are zero.
    CHECK(g.incidence().colwise().sum().cwiseAbs().maxCoeff() == 0.0);

    SUBCASE("minimum-norm flow matches a least-squares oracle") {
        std::mt19937 rng(5);
        std::uniform_real_distribution<double> uni(-1.0, 1.0);
        for (int trial = 0; trial < 20; ++trial) {
            VectorXd rhs(3);
            rhs << uni(rng), uni(rng), 0.0;
            rhs[2] = -rhs[0] - rhs[1]; // balanced
            const VectorXd nu = g.minimumNormFlow(rhs);
            CHECK((g.applyIncidence(nu) - rhs).cwiseAbs().maxCoeff() <= 1e-12);
            const VectorXd oracle =
                g.incidence().completeOrthogonalDecomposition().solve(rhs);
            CHECK((nu - oracle).cwiseAbs().maxCoeff() <= 1e-10);
        }
    }
}

TEST_CASE("controller dynamics") {
    SUBCASE("single node without communication edges") {
        CostModel c;
        c.weights = VectorXd::Ones(1);
        const CommunicationGraph comm = CommunicationGraph::build(1, {});
        const ControllerGains gains = ControllerGains::uniform(1, 1, 0, 0.01);
        ControllerState s;
        s.p_g = VectorXd::Constant(1, 0.4);
        s.lambda = VectorXd::Constant(1, 0.7);
        s.nu = VectorXd::Zero(0);
        ControllerMeasurements meas;
        meas.u_c = VectorXd::Constant(1, -0.2); // -omega
        meas.p_demand = VectorXd::Zero(1);
        meas.phi = VectorXd::Zero(1);
        const ControllerState d = controller_rhs(s, gains, c, comm, meas);
        CHECK(d.p_g[0] == doctest::Approx((-0.4 + 0.7 - 0.2) / 0.01).epsilon(1e-12));
    }

    SUBCASE("uniform price freezes the flow variable") {
        const CommunicationGraph comm = paper18_comm();
        CostModel c;
        c.weights = default_cost_weights(14);
        const ControllerGains gains = ControllerGains::uniform(14, 18, comm.edgeCount(), 0.01);
        ControllerState s;
        s.p_g = VectorXd::Random(14);
        s.lambda = VectorXd::Constant(18, 0.37);
        s.nu = VectorXd::Random(comm.edgeCount());
        ControllerMeasurements meas;
        meas.u_c = VectorXd::Random(14);
        meas.p_demand = VectorXd::Random(18);
        meas.phi = VectorXd::Random(18);
        const ControllerState d = controller_rhs(s, gains, c, comm, meas);
        CHECK(d.nu.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("aggregate price dynamics integrate the imbalance") {
        const CommunicationGraph comm = paper18_comm();
        CostModel c;
        c.weights = default_cost_weights(14);
        const ControllerGains gains = ControllerGains::uniform(14, 18, comm.edgeCount(), 0.01);
        std::mt19937 rng(19);
        std::uniform_real_distribution<double> uni(-1.0, 1.0);
        for (int trial = 0; trial < 10; ++trial) {
            ControllerState s;
            s.p_g = VectorXd::NullaryExpr(14, [&](int) { return uni(rng); });
            s.lambda = VectorXd::NullaryExpr(18, [&](int) { return uni(rng); });
            s.nu = VectorXd::NullaryExpr(comm.edgeCount(), [&](int) { return uni(rng); });
            ControllerMeasurements meas;
            meas.u_c = VectorXd::NullaryExpr(14, [&](int) { return uni(rng); });
            meas.p_demand = VectorXd::NullaryExpr(18, [&](int) { return uni(rng); });
            meas.phi = VectorXd::NullaryExpr(18, [&](int) { return uni(rng); });
            const ControllerState d = controller_rhs(s, gains, c, comm, meas);
            const double lhs = gains.tau_lambda.cwiseProduct(d.lambda).sum();
            const double rhs = -s.p_g.sum() + meas.p_demand.sum() + meas.phi.sum();
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
        }
    }
}

TEST_CASE("controller Hamiltonian") {
    const ControllerGains gains = ControllerGains::uniform(2, 3, 1, 0.01);
    ControllerState zero;
    zero.p_g = VectorXd::Zero(2);
    zero.lambda = VectorXd::Zero(3);
    zero.nu = VectorXd::Zero(1);
    CHECK(controller_hamiltonian(zero, gains) == 0.0);

    ControllerState s = zero;
    s.p_g[0] = 1.0;
    CHECK(controller_hamiltonian(s, gains) == doctest::Approx(0.005).epsilon(1e-15));

    ControllerState twice = s;
    twice.p_g *= 2.0;
    CHECK(controller_hamiltonian(twice, gains) ==
          doctest::Approx(4.0 * controller_hamiltonian(s, gains)).epsilon(1e-12));
}

TEST_CASE("energy decays along the isolated controller") {
    const CommunicationGraph comm = CommunicationGraph::build(4, {{0, 1}, {1, 2}, {2, 3}});
    CostModel c;
    c.weights = default_cost_weights(2);
    const ControllerGains gains = ControllerGains::uniform(2, 4, 3, 0.01);
    ControllerMeasurements meas;
    meas.u_c = VectorXd::Zero(2);
    meas.p_demand = VectorXd::Zero(4);
    meas.phi = VectorXd::Zero(4);

    std::mt19937 rng(31);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        ControllerState s;
        s.p_g = VectorXd::NullaryExpr(2, [&](int) { return uni(rng); });
        s.lambda = VectorXd::NullaryExpr(4, [&](int) { return uni(rng); });
        s.nu = VectorXd::NullaryExpr(3, [&](int) { return uni(rng); });

        const double dt = 1e-4;
        const double h_start = controller_hamiltonian(s, gains);
        double h_prev = h_start;
        for (int k = 0; k < 2000; ++k) {
            auto f = [&](const ControllerState& x) { return controller_rhs(x, gains, c, comm, meas); };
            auto axpy = [](const ControllerState& x, double a, const ControllerState& d) {
                ControllerState y;
                y.p_g = x.p_g + a * d.p_g;
                y.lambda = x.lambda + a * d.lambda;
                y.nu = x.nu + a * d.nu;
                return y;
            };
            const ControllerState k1 = f(s);
            const ControllerState k2 = f(axpy(s, dt / 2, k1));
            const ControllerState k3 = f(axpy(s, dt / 2, k2));
            const ControllerState k4 = f(axpy(s, dt, k3));
            ControllerState sum = k1;
            sum.p_g += 2 * k2.p_g + 2 * k3.p_g + k4.p_g;
            sum.lambda += 2 * k2.lambda + 2 * k3.lambda + k4.lambda;
            sum.nu += 2 * k2.nu + 2 * k3.nu + k4.nu;
            s = axpy(s, dt / 6, sum);
            if (k % 100 == 0) {
                const double h = controller_hamiltonian(s, gains);
                CHECK(h <= h_prev * (1.0 + 1e-9) + 1e-15);
                h_prev = h;
            }
        }
        CHECK(controller_hamiltonian(s, gains) < 0.1 * h_start + 1e-12);
    }
}

TEST_CASE("balance feasibility") {
    const CommunicationGraph comm = CommunicationGraph::build(2, {{0, 1}});

    SUBCASE("balanced case returns a matching flow") {
        VectorXd pg(1), pl(2), phi(2);
        pg << 1.0;
        pl << 0.0, 1.0;
        phi.setZero();
        const BalanceResult r = check_balance_feasibility(comm, pg, pl, phi);
        REQUIRE(r.feasible);
        VectorXd rhs(2);
        rhs << 1.0, -1.0;
        CHECK((comm.applyIncidence(r.nu) - rhs).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("imbalance is infeasible") {
        VectorXd pg(1), pl(2), phi(2);
        pg << 1.0;
        pl << 0.0, 0.5;
        phi.setZero();
        CHECK_FALSE(check_balance_feasibility(comm, pg, pl, phi).feasible);
    }
    SUBCASE("all zeros") {
        const BalanceResult r = check_balance_feasibility(comm, VectorXd::Zero(1),
                                                          VectorXd::Zero(2), VectorXd::Zero(2));
        REQUIRE(r.feasible);
        CHECK(r.nu.cwiseAbs().maxCoeff() <= 1e-14);
    }
}

TEST_CASE("controller rows only read incident quantities") {
    const CommunicationGraph comm = paper18_comm();
    CostModel c;
    c.weights = default_cost_weights(14);
    const ControllerGains gains = ControllerGains::uniform(14, 18, comm.edgeCount(), 0.01);

    std::mt19937 rng(41);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    ControllerState s;
    s.p_g = VectorXd::NullaryExpr(14, [&](int) { return uni(rng); });
    s.lambda = VectorXd::NullaryExpr(18, [&](int) { return uni(rng); });
    s.nu = VectorXd::NullaryExpr(comm.edgeCount(), [&](int) { return uni(rng); });
    ControllerMeasurements meas;
    meas.u_c = VectorXd::NullaryExpr(14, [&](int) { return uni(rng); });
    meas.p_demand = VectorXd::NullaryExpr(18, [&](int) { return uni(rng); });
    meas.phi = VectorXd::NullaryExpr(18, [&](int) { return uni(rng); });

    const ControllerState base = controller_rhs(s, gains, c, comm, meas);

    // Setpoint rows depend only on their own node's state and measurement.
    for (int i = 0; i < 14; ++i) {
        ControllerState sp = s;
        ControllerMeasurements mp = meas;
        for (int j = 0; j < 14; ++j)
            if (j != i) {
                sp.p_g[j] += 1.0;
                mp.u_c[j] -= 2.0;
            }
        for (int j = 0; j < 18; ++j)
            if (j != i)
                sp.lambda[j] += 0.5;
        const ControllerState d = controller_rhs(sp, gains, c, comm, mp);
        CHECK(d.p_g[i] == base.p_g[i]);
    }

    // Price rows read the node's own setpoint/demand and incident flows.
    for (int i = 0; i < 18; ++i) {
        ControllerState sp = s;
        ControllerMeasurements mp = meas;
        for (int j = 0; j < 18; ++j)
            if (j != i) {
                mp.p_demand[j] += 1.0;
                mp.phi[j] -= 0.3;
            }
        for (int j = 0; j < 14; ++j)
            if (j != i)
                sp.p_g[j] += 1.0;
        for (int e = 0; e < comm.edgeCount(); ++e)
            if (comm.edge(e).first != i && comm.edge(e).second != i)
                sp.nu[e] += 1.0;
        const ControllerState d = controller_rhs(sp, gains, c, comm, mp);
        CHECK(d.lambda[i] == base.lambda[i]);
    }

    // Flow rows read only their two endpoint prices.
    for (int e = 0; e < comm.edgeCount(); ++e) {
        ControllerState sp = s;
        for (int j = 0; j < 18; ++j)
            if (j != comm.edge(e).first && j != comm.edge(e).second)
                sp.lambda[j] += 1.0;
        const ControllerState d = controller_rhs(sp, gains, c, comm, meas);
        CHECK(d.nu[e] == base.nu[e]);
    }
}
