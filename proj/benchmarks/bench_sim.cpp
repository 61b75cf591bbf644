#include <benchmark/benchmark.h>

#include <fstream>
#include <sstream>

#include "mgsim/integrator.hpp"
#include "mgsim/scenario.hpp"

namespace {

using namespace mgsim;

struct Fixture {
    BuiltScenario built;
    Equilibrium eq;
    ClosedLoopState off_eq;

    Fixture()
        : built([] {
              std::ifstream in(std::string(MGSIM_DATA_DIR) + "/paper18.cfg", std::ios::binary);
              std::ostringstream ss;
              ss << in.rdbuf();
              return build_scenario(parse_config(ss.str()));
          }()),
          eq(built.system.solveEquilibrium(built.p_demand, built.q_demand)) {
        off_eq = eq.state;
        off_eq.controller.lambda.array() += 0.02;
        off_eq.plant.momenta.array() += 0.05;
        built.system.refreshAlgebraic(off_eq, eq.inputs, 1e-10, 50);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

void BM_PowerFlows(benchmark::State& state) {
    auto& f = fixture();
    const Plant& plant = f.built.system.plant();
    const VectorXd u = plant.nodeVoltages(f.off_eq.plant);
    for (auto _ : state) {
        auto flows = plant.powerFlows(f.off_eq.plant.theta, u);
        benchmark::DoNotOptimize(flows);
    }
}
BENCHMARK(BM_PowerFlows);

void BM_ClosedLoopRhs(benchmark::State& state) {
    auto& f = fixture();
    for (auto _ : state) {
        auto rhs = f.built.system.rhs(f.off_eq, f.eq.inputs);
        benchmark::DoNotOptimize(rhs);
    }
}
BENCHMARK(BM_ClosedLoopRhs);

void BM_AlgebraicRefresh(benchmark::State& state) {
    auto& f = fixture();
    ClosedLoopState s = f.off_eq;
    for (auto _ : state) {
        s.plant.omega_load = f.off_eq.plant.omega_load;
        s.plant.voltage_load = f.off_eq.plant.voltage_load;
        benchmark::DoNotOptimize(f.built.system.refreshAlgebraic(s, f.eq.inputs, 1e-10, 50));
    }
}
BENCHMARK(BM_AlgebraicRefresh);

void BM_Rk4Step(benchmark::State& state) {
    auto& f = fixture();
    SolverSettings st;
    for (auto _ : state) {
        auto next = step(f.built.system, f.off_eq, f.eq.inputs, st);
        benchmark::DoNotOptimize(next);
    }
}
BENCHMARK(BM_Rk4Step);

void BM_Hamiltonian(benchmark::State& state) {
    auto& f = fixture();
    for (auto _ : state)
        benchmark::DoNotOptimize(f.built.system.hamiltonian(f.off_eq));
}
BENCHMARK(BM_Hamiltonian);

void BM_EquilibriumSolve(benchmark::State& state) {
    auto& f = fixture();
    for (auto _ : state) {
        auto eq = f.built.system.solveEquilibrium(f.built.p_demand, f.built.q_demand);
        benchmark::DoNotOptimize(eq);
    }
}
BENCHMARK(BM_EquilibriumSolve);

} // namespace

BENCHMARK_MAIN();
