#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "mgsim/plant.hpp"

using namespace mgsim;

namespace {

PlantState random_state(const Plant& plant, std::mt19937& rng) {
    auto uni = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    PlantState s = plant.zeroState();
    for (int i = 0; i < s.theta.size(); ++i)
        s.theta[i] = uni(-0.3, 0.3);
    for (int i = 0; i < s.momenta.size(); ++i)
        s.momenta[i] = uni(-0.5, 0.5);
    for (int i = 0; i < s.voltage_gen.size(); ++i)
        s.voltage_gen[i] = uni(0.9, 1.1);
    for (int i = 0; i < s.omega_load.size(); ++i)
        s.omega_load[i] = uni(-0.3, 0.3);
    for (int i = 0; i < s.voltage_load.size(); ++i)
        s.voltage_load[i] = uni(0.9, 1.1);
    return s;
}

PlantInputs zero_inputs(const Plant& plant) {
    const auto& m = plant.model();
    PlantInputs in;
    in.p_gen = VectorXd::Zero(m.controllableCount());
    in.u_field = VectorXd::Ones(m.generatorCount());
    in.p_demand = VectorXd::Zero(m.nodeCount());
    in.q_demand = VectorXd::Zero(m.loadCount());
    return in;
}

} // namespace

TEST_CASE("matching transform") {
    SUBCASE("identity scaling") {
        const double wn = 100.0 * M_PI;
        const double eta = 2.0;
        const InverterParams p = inverter_matching({eta * eta / wn, eta * eta / wn, eta, wn});
        CHECK(p.M == doctest::Approx(1.0));
        CHECK(p.A == doctest::Approx(1.0));
    }
    SUBCASE("numeric case") {
        const double wn = 100.0 * M_PI;
        const InverterPhysical phys{0.008, 0.00255, wn / 1000.0, wn};
        const InverterParams p = inverter_matching(phys);
        // M = C * 1e6 / wn, A = G * 1e6 / wn by direct evaluation.
        CHECK(p.M == doctest::Approx(8000.0 / wn).epsilon(1e-12));
        CHECK(p.M == doctest::Approx(25.465).epsilon(1e-3));
        CHECK(p.A == doctest::Approx(2550.0 / wn).epsilon(1e-12));
    }
    SUBCASE("doubling the gain quarters both coefficients") {
        const InverterPhysical base{0.01, 0.002, 0.5, 100.0 * M_PI};
        InverterPhysical twice = base;
        twice.eta *= 2.0;
        const InverterParams p0 = inverter_matching(base);
        const InverterParams p1 = inverter_matching(twice);
        CHECK(p1.M == doctest::Approx(p0.M / 4.0));
        CHECK(p1.A == doctest::Approx(p0.A / 4.0));
    }
    CHECK_THROWS_AS(inverter_matching({0.0, 1.0, 1.0, 1.0}), NonpositiveParameterError);
    CHECK_THROWS_AS(inverter_matching({1.0, 1.0, -1.0, 1.0}), NonpositiveParameterError);
}

TEST_CASE("dc current command") {
    CHECK(dc_current_command(2.0, 3.0, 5.0, 0.0, 7.0) == doctest::Approx(30.0));
    CHECK(dc_current_command(1.0, 1.0, 1.0, 1.0, 1.0) == doctest::Approx(2.0));
    const double base = dc_current_command(1.0, 2.0, 5.0, 1.0, 4.0);
    CHECK(dc_current_command(1.0, 2.0, 5.0, 2.0, 4.0) - base == doctest::Approx(2.0 * 1.0 / 4.0));
    CHECK_THROWS_AS(dc_current_command(1.0, 1.0, 1.0, 1.0, 0.0), ZeroFrequencyError);
}

TEST_CASE("power flows on two nodes") {
    SUBCASE("flat lossy state has zero flows") {
        // b = 1, gamma = 1, b_self = -1 at both ends: self and mutual
        // reactive terms cancel at the flat point.
        const Plant plant = test::two_node_plant(1.0, 1.0);
        const VectorXd theta = VectorXd::Zero(2);
        const VectorXd u = VectorXd::Ones(2);
        const PowerFlows f = plant.powerFlows(theta, u);
        CHECK(f.p[0] == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(f.p[1] == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(f.q[0] == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(f.q[1] == doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("lossless antisymmetry") {
        const Plant plant = test::two_node_plant(1.0, 0.0);
        VectorXd theta(2);
        theta << 0.1, 0.0;
        const PowerFlows f = plant.powerFlows(theta, VectorXd::Ones(2));
        CHECK(f.p[0] == doctest::Approx(std::sin(0.1)).epsilon(1e-12));
        CHECK(f.p[1] == doctest::Approx(-std::sin(0.1)).epsilon(1e-12));
    }
    SUBCASE("lossy sending end") {
        const Plant plant = test::two_node_plant(1.0, 1.0);
        VectorXd theta(2);
        theta << 0.1, 0.0;
        const PowerFlows f = plant.powerFlows(theta, VectorXd::Ones(2));
        CHECK(f.p[0] == doctest::Approx(std::sin(0.1) + 1.0 - std::cos(0.1)).epsilon(1e-12));
    }
    SUBCASE("voltages must be positive") {
        const Plant plant = test::two_node_plant(1.0, 0.0);
        VectorXd u(2);
        u << 1.0, 0.0;
        CHECK_THROWS_AS(plant.powerFlows(VectorXd::Zero(2), u), NonpositiveVoltageError);
    }
}

TEST_CASE("resistive losses") {
    SUBCASE("lossless network has none") {
        const Plant plant = test::two_node_plant(1.0, 0.0);
        VectorXd theta(2);
        theta << 0.3, -0.2;
        CHECK(plant.resistiveLosses(theta, VectorXd::Ones(2)) == 0.0);
    }
    SUBCASE("zero angle difference carries no current") {
        const Plant plant = test::two_node_plant(1.0, 1.0);
        CHECK(plant.resistiveLosses(VectorXd::Zero(2), VectorXd::Ones(2)) ==
              doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("matches the sum of injections") {
        const Plant plant = test::two_node_plant(1.0, 1.0);
        VectorXd theta(2);
        theta << 0.1, 0.0;
        const double phi = plant.resistiveLosses(theta, VectorXd::Ones(2));
        CHECK(phi == doctest::Approx(2.0 - 2.0 * std::cos(0.1)).epsilon(1e-12));
        const PowerFlows f = plant.powerFlows(theta, VectorXd::Ones(2));
        CHECK(phi == doctest::Approx(f.p.sum()).epsilon(1e-12));
    }
}

TEST_CASE("injections sum to the losses at random states") {
    const BuiltScenario built = build_scenario(test::load_paper18());
    const Plant& plant = built.system.plant();
    std::mt19937 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const PlantState s = random_state(plant, rng);
        const VectorXd u = plant.nodeVoltages(s);
        const PowerFlows f = plant.powerFlows(s.theta, u);
        const double phi = plant.resistiveLosses(s.theta, u);
        CHECK(std::abs(f.p.sum() - phi) <= 1e-13 * std::max(1.0, std::abs(phi)) * 1e3);
    }
}

TEST_CASE("lossless injections cancel per line") {
    ScenarioConfig cfg = test::load_paper18();
    cfg.gamma = 0.0;
    const BuiltScenario built = build_scenario(cfg);
    const Plant& plant = built.system.plant();
    const auto& m = plant.model();
    std::mt19937 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const PlantState s = random_state(plant, rng);
        const VectorXd u = plant.nodeVoltages(s);
        const PowerFlows f = plant.powerFlows(s.theta, u);
        CHECK(std::abs(f.p.sum()) <= 1e-12);
        // Each line's two end contributions are opposite without losses.
        for (int e = 0; e < m.lineCount(); ++e) {
            const auto& l = m.line(e);
            const double send =
                m.bLine(e) * u[l.from] * u[l.to] * std::sin(s.theta[l.from] - s.theta[l.to]);
            const double recv =
                m.bLine(e) * u[l.to] * u[l.from] * std::sin(s.theta[l.to] - s.theta[l.from]);
            CHECK(send + recv == doctest::Approx(0.0).epsilon(1e-15));
        }
    }
}

TEST_CASE("conductance terms") {
    SUBCASE("vanish without losses") {
        const Plant plant = test::two_node_plant(1.0, 0.0);
        VectorXd theta(2);
        theta << 0.4, 0.0;
        const ConductanceTerms t = plant.conductanceTerms(theta, VectorXd::Ones(2));
        CHECK(t.phi.cwiseAbs().maxCoeff() == 0.0);
        CHECK(t.rho.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("two-node values and the losses identity") {
        const Plant plant = test::two_node_plant(1.0, 1.0);
        VectorXd theta(2);
        theta << 0.1, 0.0;
        const ConductanceTerms t = plant.conductanceTerms(theta, VectorXd::Ones(2));
        CHECK(t.phi[0] == doctest::Approx(1.0 - std::cos(0.1)).epsilon(1e-12));
        CHECK(t.phi.sum() ==
              doctest::Approx(plant.resistiveLosses(theta, VectorXd::Ones(2))).epsilon(1e-12));
    }
    SUBCASE("flat 18-node start has zero conductance terms") {
        const BuiltScenario built = build_scenario(test::load_paper18());
        const Plant& plant = built.system.plant();
        const ConductanceTerms t = plant.conductanceTerms(
            VectorXd::Zero(18), VectorXd::Ones(18));
        CHECK(t.phi.cwiseAbs().maxCoeff() <= 1e-15);
    }
    SUBCASE("generator rows are scaled by the voltage dissipation factor") {
        const Plant plant = test::two_node_plant(1.0, 1.0);
        VectorXd theta(2);
        theta << 0.1, 0.0;
        const ConductanceTerms t = plant.conductanceTerms(theta, VectorXd::Ones(2));
        const double r_g = (0.02 - 0.004) / 6.45;
        const double raw = -1.0 * std::sin(0.1); // G_12 U1 U2 sin
        CHECK(t.rho[0] == doctest::Approx(r_g * raw).epsilon(1e-12));
        CHECK(t.rho[1] == doctest::Approx(-raw).epsilon(1e-12));
    }
}

TEST_CASE("plant Hamiltonian") {
    SUBCASE("single generator node") {
        NetworkModel m = NetworkModel::build({{1, NodeKind::Generator, -2.67}}, {}, 0.0);
        PlantParams params;
        params.generators.push_back({5.2, 1.6, 0.02, 0.004, 6.45});
        const Plant plant(std::move(m), std::move(params));
        PlantState s = plant.zeroState();
        CHECK(plant.hamiltonian(s) == doctest::Approx(0.5 / 0.016 + 0.5 * 2.67).epsilon(1e-12));

        SUBCASE("kinetic part") {
            PlantState k = s;
            k.momenta[0] = 1.0;
            CHECK(plant.hamiltonian(k) - plant.hamiltonian(s) ==
                  doctest::Approx(1.0 / (2.0 * 5.2)).epsilon(1e-12));
        }
    }
    SUBCASE("doubling momenta quadruples the kinetic part") {
        const BuiltScenario built = build_scenario(test::load_paper18());
        const Plant& plant = built.system.plant();
        std::mt19937 rng(3);
        PlantState s = random_state(plant, rng);
        PlantState s0 = s, s2 = s;
        s0.momenta.setZero();
        s2.momenta = 2.0 * s.momenta;
        const double k1 = plant.hamiltonian(s) - plant.hamiltonian(s0);
        const double k2 = plant.hamiltonian(s2) - plant.hamiltonian(s0);
        CHECK(k2 == doctest::Approx(4.0 * k1).epsilon(1e-10));
    }
    SUBCASE("invariant under a uniform angle shift") {
        const BuiltScenario built = build_scenario(test::load_paper18());
        const Plant& plant = built.system.plant();
        std::mt19937 rng(4);
        PlantState s = random_state(plant, rng);
        const double h0 = plant.hamiltonian(s);
        s.theta.array() += 1.2345;
        CHECK(plant.hamiltonian(s) == doctest::Approx(h0).epsilon(1e-12));
    }
}

TEST_CASE("plant gradient") {
    const BuiltScenario built = build_scenario(test::load_paper18());
    const Plant& plant = built.system.plant();

    SUBCASE("momentum rows are frequencies") {
        PlantState s = plant.zeroState();
        s.momenta[0] = 5.2; // M_1 = 5.2
        const PlantGradient g = plant.gradient(s);
        CHECK(g.d_momenta[0] == doctest::Approx(1.0));
        s.omega_load[2] = 0.25;
        CHECK(plant.gradient(s).d_omega_load[2] == doctest::Approx(0.25));
    }
    SUBCASE("matches central finite differences") {
        std::mt19937 rng(11);
        for (int trial = 0; trial < 5; ++trial) {
            PlantState s = random_state(plant, rng);
            const PlantGradient g = plant.gradient(s);
            auto fd = [&](double* slot, double analytic) {
                const double save = *slot;
                const double h = 1e-6 * std::max(1.0, std::abs(save));
                *slot = save + h;
                const double hp = plant.hamiltonian(s);
                *slot = save - h;
                const double hm = plant.hamiltonian(s);
                *slot = save;
                CHECK(std::abs((hp - hm) / (2 * h) - analytic) /
                          std::max(1.0, std::abs(analytic)) <=
                      1e-6);
            };
            for (int i = 0; i < s.theta.size(); ++i)
                fd(&s.theta[i], g.d_theta[i]);
            for (int i = 0; i < s.voltage_gen.size(); ++i)
                fd(&s.voltage_gen[i], g.d_voltage_gen[i]);
            for (int i = 0; i < s.voltage_load.size(); ++i)
                fd(&s.voltage_load[i], g.d_voltage_load[i]);
        }
    }
}

TEST_CASE("compact dynamics") {
    SUBCASE("isolated generator damps its momentum") {
        NetworkModel m = NetworkModel::build({{1, NodeKind::Generator, 0.0}}, {}, 0.0);
        PlantParams params;
        params.generators.push_back({5.2, 1.6, 0.02, 0.004, 6.45});
        const Plant plant(std::move(m), std::move(params));
        PlantState s = plant.zeroState();
        s.momenta[0] = 0.1;
        const PlantRhs r = plant.rhs(s, zero_inputs(plant));
        CHECK(r.momenta_dot[0] == doctest::Approx(-1.6 * 0.1 / 5.2).epsilon(1e-12));
        CHECK(r.theta_dot[0] == doctest::Approx(0.1 / 5.2));
    }
    SUBCASE("load residual root reproduces the lossless flow") {
        const Plant plant = test::two_node_plant(1.0, 0.0);
        PlantState s = plant.zeroState();
        s.theta << 0.1, 0.0;
        PlantInputs in = zero_inputs(plant);
        // Reactive demand consistent with unit load voltage at this angle.
        const PowerFlows f0 = plant.powerFlows(s.theta, VectorXd::Ones(2));
        in.q_demand[0] = -f0.q[1];

        s.omega_load[0] = 0.0;
        const PlantRhs r = plant.rhs(s, in);
        CHECK(r.residual_p[0] == doctest::Approx(std::sin(0.1)).epsilon(1e-12));

        const AlgebraicSolveResult sol =
            plant.solveAlgebraic(s, in, VectorXd::Zero(1), VectorXd::Ones(1));
        CHECK(sol.omega_load[0] == doctest::Approx(0.0998334166).epsilon(1e-8));
        CHECK(sol.voltage_load[0] == doctest::Approx(1.0).epsilon(1e-10));

        // Plugging the solution back yields vanishing residuals.
        PlantState solved = s;
        solved.omega_load = sol.omega_load;
        solved.voltage_load = sol.voltage_load;
        const PlantRhs rs = plant.rhs(solved, in);
        CHECK(rs.residual_p.cwiseAbs().maxCoeff() <= 1e-10);
        CHECK(rs.residual_q.cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("algebraic solve") {
    SUBCASE("no load nodes") {
        NetworkModel m = NetworkModel::build(
            {{1, NodeKind::Generator, 0.0}, {2, NodeKind::Inverter, 0.0}}, {{1, 2, 1.0}}, 0.0);
        PlantParams params;
        params.generators.push_back({5.2, 1.6, 0.02, 0.004, 6.45});
        params.inverters.push_back({4.0, 1.5});
        const Plant plant(std::move(m), std::move(params));
        const AlgebraicSolveResult r =
            plant.solveAlgebraic(plant.zeroState(), zero_inputs(plant), VectorXd{}, VectorXd{});
        CHECK(r.iterations == 0);
        CHECK(r.omega_load.size() == 0);
    }
    SUBCASE("18-node flat start converges quickly") {
        const BuiltScenario built = build_scenario(test::load_paper18());
        const Plant& plant = built.system.plant();
        PlantInputs in = zero_inputs(plant);
        in.p_demand = built.p_demand;
        in.q_demand = built.q_demand;
        const AlgebraicSolveResult r = plant.solveAlgebraic(
            plant.zeroState(), in, VectorXd::Zero(4), VectorXd::Ones(4));
        CHECK(r.iterations <= 10);
        CHECK(r.voltage_load.minCoeff() > 0.8);
    }
    SUBCASE("unservable reactive demand fails with a diagnosis") {
        // The load frequency absorbs any active imbalance, but the reactive
        // equation has a bounded range in the load voltage.
        const Plant plant = test::two_node_plant(1.0, 0.0);
        PlantInputs in = zero_inputs(plant);
        in.q_demand[0] = 10.0;
        CHECK_THROWS_AS(
            plant.solveAlgebraic(plant.zeroState(), in, VectorXd::Zero(1), VectorXd::Ones(1)),
            NoConvergenceError);
    }
}

TEST_CASE("descriptor evaluation agrees with the compact form") {
    const BuiltScenario built = build_scenario(test::load_paper18());
    const Plant& plant = built.system.plant();
    std::mt19937 rng(23);

    for (int trial = 0; trial < 10; ++trial) {
        const PlantState s = random_state(plant, rng);
        PlantInputs in = zero_inputs(plant);
        for (int i = 0; i < in.p_gen.size(); ++i)
            in.p_gen[i] = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
        const DescriptorRhs a = plant.rhsInDescriptorCoords(s, in);
        const DescriptorRhs b = plant.phsFormRhs(s, in);
        CHECK((a.vartheta_dot - b.vartheta_dot).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((a.momenta_dot - b.momenta_dot).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((a.residual_p - b.residual_p).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((a.residual_q - b.residual_q).cwiseAbs().maxCoeff() <= 1e-12);

        // Voltage rows differ exactly by the conductance scaling term.
        const VectorXd u = plant.nodeVoltages(s);
        const auto& m = plant.model();
        for (int g = 0; g < m.generatorCount(); ++g) {
            const auto& gp = plant.params().generators[g];
            double gsin = 0.0;
            for (auto [e, j] : m.incident(g))
                gsin += m.gLine(e) * u[j] * std::sin(s.theta[g] - s.theta[j]);
            const double predicted = (gp.Xd - gp.Xdp) / gp.tauU * (u[g] - 1.0) * gsin;
            CHECK(a.voltage_dot[g] - b.voltage_dot[g] == doctest::Approx(predicted).epsilon(1e-9));
        }
    }
}

TEST_CASE("descriptor evaluation matches on every row without losses") {
    ScenarioConfig cfg = test::load_paper18();
    cfg.gamma = 0.0;
    const BuiltScenario built = build_scenario(cfg);
    const Plant& plant = built.system.plant();
    std::mt19937 rng(29);
    for (int trial = 0; trial < 10; ++trial) {
        const PlantState s = random_state(plant, rng);
        const PlantInputs in = zero_inputs(plant);
        const DescriptorRhs a = plant.rhsInDescriptorCoords(s, in);
        const DescriptorRhs b = plant.phsFormRhs(s, in);
        CHECK((a.vartheta_dot - b.vartheta_dot).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((a.momenta_dot - b.momenta_dot).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((a.voltage_dot - b.voltage_dot).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((a.residual_p - b.residual_p).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((a.residual_q - b.residual_q).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("parameter validation") {
    NetworkModel m = NetworkModel::build({{1, NodeKind::Generator, 0.0}}, {}, 0.0);
    PlantParams bad;
    bad.generators.push_back({5.2, -1.0, 0.02, 0.004, 6.45});
    CHECK_THROWS_AS(Plant(m, bad), NonpositiveParameterError);
    PlantParams wrong_x;
    wrong_x.generators.push_back({5.2, 1.6, 0.004, 0.02, 6.45});
    CHECK_THROWS_AS(Plant(m, wrong_x), NonpositiveParameterError);
    CHECK_THROWS_AS(Plant(m, PlantParams{}), SizeMismatchError);
}
