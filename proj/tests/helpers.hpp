#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "mgsim/scenario.hpp"

namespace mgsim::test {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline ScenarioConfig load_paper18() {
    return parse_config(read_file(std::string(MGSIM_DATA_DIR) + "/paper18.cfg"));
}

/// Generator at node 1, load at node 2, one line of susceptance b.
inline Plant two_node_plant(double b, double gamma, double b_self_1 = -1.0,
                            double b_self_2 = -1.0, double load_damping = 1.0) {
    NetworkModel model = NetworkModel::build(
        {{1, NodeKind::Generator, b_self_1}, {2, NodeKind::Load, b_self_2}}, {{1, 2, b}}, gamma);
    PlantParams params;
    params.generators.push_back({5.2, 1.6, 0.02, 0.004, 6.45});
    params.loads.push_back({load_damping});
    return Plant(std::move(model), std::move(params));
}

inline ClosedLoop two_node_system(double b, double gamma, double load_damping = 1.0) {
    Plant plant = two_node_plant(b, gamma, -1.0, -1.0, load_damping);
    CostModel cost;
    cost.weights = VectorXd::Ones(1);
    CommunicationGraph comm = CommunicationGraph::fromPhysical(plant.model());
    ControllerGains gains = ControllerGains::uniform(1, 2, 1, 0.01);
    return ClosedLoop(std::move(plant), std::move(cost), std::move(comm), std::move(gains));
}

/// The 18-node line table exactly as printed (node 16 has no line).
inline std::vector<LineSpec> printed_line_table() {
    return {{1, 2, 1.27}, {1, 14, 1.4}, {2, 3, 1.4},   {2, 14, 2.25}, {2, 15, 2.05},
            {3, 4, 1.1},  {4, 5, 1.0},  {5, 6, 2.5},   {6, 7, 3.0},   {7, 8, 2.7},
            {7, 9, 1.5},  {7, 17, 3.0}, {8, 9, 3.5},   {9, 10, 1.5},  {9, 18, 2.1},
            {10, 11, 3.0}, {11, 12, 1.2}, {12, 13, 3.3}, {13, 14, 1.25}, {14, 15, 2.2}};
}

inline std::vector<NodeSpec> paper18_node_specs() {
    std::vector<NodeSpec> nodes;
    const double b_gen[] = {-2.67, -6.97, -4.0, -2.1, -3.5, -5.5, -7.2};
    const double b_inv[] = {-6.2, -7.1, -4.5, -4.2, -4.5, -6.05, -7.1};
    const double b_load[] = {-2.05, -2.2, -1.5, -2.1};
    for (int i = 0; i < 7; ++i)
        nodes.push_back({i + 1, NodeKind::Generator, b_gen[i]});
    for (int i = 0; i < 7; ++i)
        nodes.push_back({i + 8, NodeKind::Inverter, b_inv[i]});
    for (int i = 0; i < 4; ++i)
        nodes.push_back({i + 15, NodeKind::Load, b_load[i]});
    return nodes;
}

} // namespace mgsim::test
