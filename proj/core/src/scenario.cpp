#include "mgsim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

namespace mgsim {

using nlohmann::json;

namespace {

int line_of_byte(const std::string& text, std::size_t byte) {
    int line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n')
            ++line;
    return line;
}

const json& require_field(const json& j, const char* field, const std::string& scope) {
    auto it = j.find(field);
    if (it == j.end())
        throw SchemaError("missing field '" + scope + field + "'", scope + field);
    return *it;
}

double require_number(const json& j, const char* field, const std::string& scope) {
    const json& v = require_field(j, field, scope);
    if (!v.is_number())
        throw SchemaError("field '" + scope + field + "' must be a number", scope + field);
    return v.get<double>();
}

int require_int(const json& j, const char* field, const std::string& scope) {
    const json& v = require_field(j, field, scope);
    if (!v.is_number_integer())
        throw SchemaError("field '" + scope + field + "' must be an integer", scope + field);
    return v.get<int>();
}

double number_or(const json& j, const char* field, double def) {
    auto it = j.find(field);
    if (it == j.end())
        return def;
    if (!it->is_number())
        throw SchemaError(std::string("field '") + field + "' must be a number", field);
    return it->get<double>();
}

NodeKind parse_kind(const std::string& s, const std::string& scope) {
    if (s == "generator")
        return NodeKind::Generator;
    if (s == "inverter")
        return NodeKind::Inverter;
    if (s == "load")
        return NodeKind::Load;
    throw SchemaError("unknown node kind '" + s + "'", scope + "kind");
}

std::string kind_name(NodeKind k) {
    switch (k) {
    case NodeKind::Generator: return "generator";
    case NodeKind::Inverter: return "inverter";
    case NodeKind::Load: return "load";
    }
    return "?";
}

/// Scalar or array option resolved to a fixed-length vector.
std::vector<double> resolve_taus(const json& controller, const char* field, int count,
                                 double fallback) {
    auto it = controller.find(field);
    if (it == controller.end())
        return std::vector<double>(count, fallback);
    if (it->is_number())
        return std::vector<double>(count, it->get<double>());
    if (it->is_array()) {
        if (static_cast<int>(it->size()) != count)
            throw ValidationError(std::string("'") + field + "' must have " +
                                  std::to_string(count) + " entries");
        std::vector<double> out;
        for (const auto& v : *it) {
            if (!v.is_number())
                throw SchemaError(std::string("entries of '") + field + "' must be numbers",
                                  field);
            out.push_back(v.get<double>());
        }
        return out;
    }
    throw SchemaError(std::string("'") + field + "' must be a number or an array", field);
}

std::map<int, double> parse_demand_map(const json& loads, const char* field) {
    std::map<int, double> out;
    auto it = loads.find(field);
    if (it == loads.end())
        return out;
    if (!it->is_object())
        throw SchemaError(std::string("'loads.") + field + "' must map node ids to numbers",
                          field);
    for (auto& [key, value] : it->items()) {
        int id = 0;
        try {
            id = std::stoi(key);
        } catch (...) {
            throw SchemaError(std::string("'loads.") + field + "' key '" + key +
                                  "' is not a node id",
                              field);
        }
        if (!value.is_number())
            throw SchemaError(std::string("'loads.") + field + "' values must be numbers", field);
        out[id] = value.get<double>();
    }
    return out;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (path.has_parent_path())
        fs::create_directories(path.parent_path(), ec);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        out << content;
        if (!out.flush())
            throw IoError("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, path, ec);
    if (ec)
        throw IoError("rename to '" + path.string() + "' failed: " + ec.message());
}

} // namespace

ScenarioConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(e.what(), line_of_byte(text, e.byte));
    }
    if (!j.is_object())
        throw SchemaError("top level must be an object", "");

    ScenarioConfig cfg;
    cfg.name = j.value("name", "scenario");

    const json& net = require_field(j, "network", "");
    cfg.gamma = require_number(net, "gamma", "network.");
    if (cfg.gamma < 0.0)
        throw ValidationError("network.gamma must be nonnegative");

    const json& nodes = require_field(net, "nodes", "network.");
    if (!nodes.is_array() || nodes.empty())
        throw SchemaError("'network.nodes' must be a non-empty array", "network.nodes");
    std::set<int> ids;
    for (const auto& nj : nodes) {
        NodeConfig nc;
        nc.id = require_int(nj, "id", "node.");
        nc.kind = parse_kind(require_field(nj, "kind", "node.").get<std::string>(), "node.");
        nc.b_self = require_number(nj, "b_self", "node.");
        switch (nc.kind) {
        case NodeKind::Generator:
            nc.inertia = require_number(nj, "inertia", "node.");
            nc.damping = require_number(nj, "damping", "node.");
            nc.xd = require_number(nj, "xd", "node.");
            nc.xd_transient = require_number(nj, "xd_transient", "node.");
            nc.tau_voltage = require_number(nj, "tau_voltage", "node.");
            if (!(nc.inertia > 0) || !(nc.damping > 0) || !(nc.tau_voltage > 0))
                throw ValidationError("generator node " + std::to_string(nc.id) +
                                      ": inertia, damping, tau_voltage must be positive");
            if (!(nc.xd > nc.xd_transient) || !(nc.xd_transient > 0))
                throw ValidationError("generator node " + std::to_string(nc.id) +
                                      ": needs xd > xd_transient > 0");
            break;
        case NodeKind::Inverter:
            if (nj.contains("dc")) {
                const json& dc = nj["dc"];
                InverterPhysical phys;
                phys.C_dc = require_number(dc, "capacitance", "node.dc.");
                phys.G_dc = require_number(dc, "conductance", "node.dc.");
                phys.eta = require_number(dc, "gain", "node.dc.");
                phys.omega_n = require_number(dc, "nominal_frequency", "node.dc.");
                const InverterParams ip = inverter_matching(phys);
                nc.inertia = ip.M;
                nc.damping = ip.A;
            } else {
                nc.inertia = require_number(nj, "inertia", "node.");
                nc.damping = require_number(nj, "damping", "node.");
            }
            if (!(nc.inertia > 0) || !(nc.damping > 0))
                throw ValidationError("inverter node " + std::to_string(nc.id) +
                                      ": inertia and damping must be positive");
            break;
        case NodeKind::Load:
            nc.damping = require_number(nj, "damping", "node.");
            if (nc.damping < 0)
                throw ValidationError("load node " + std::to_string(nc.id) +
                                      ": damping must be nonnegative");
            break;
        }
        if (!ids.insert(nc.id).second)
            throw ValidationError("duplicate node id " + std::to_string(nc.id));
        cfg.nodes.push_back(nc);
    }
    std::sort(cfg.nodes.begin(), cfg.nodes.end(),
              [](const NodeConfig& a, const NodeConfig& b) { return a.id < b.id; });

    const json& lines = require_field(net, "lines", "network.");
    if (!lines.is_array())
        throw SchemaError("'network.lines' must be an array", "network.lines");
    for (const auto& lj : lines) {
        LineSpec l;
        l.from = require_int(lj, "from", "line.");
        l.to = require_int(lj, "to", "line.");
        l.b = require_number(lj, "b", "line.");
        cfg.lines.push_back(l);
    }

    std::vector<int> controllable_ids, all_ids;
    for (const auto& nc : cfg.nodes) {
        all_ids.push_back(nc.id);
        if (nc.kind != NodeKind::Load)
            controllable_ids.push_back(nc.id);
    }
    const int n_ctrl = static_cast<int>(controllable_ids.size());

    const json controller = j.value("controller", json::object());
    const double tau_c = number_or(controller, "tau_c", 0.01);
    cfg.tau_g = resolve_taus(controller, "tau_g", n_ctrl, tau_c);
    cfg.tau_lambda = resolve_taus(controller, "tau_lambda",
                                  static_cast<int>(cfg.nodes.size()), tau_c);

    if (controller.contains("communication_edges")) {
        for (const auto& ej : controller["communication_edges"]) {
            if (!ej.is_array() || ej.size() != 2)
                throw SchemaError("communication edges must be [from,to] pairs",
                                  "controller.communication_edges");
            cfg.comm_edges.push_back({ej[0].get<int>(), ej[1].get<int>()});
        }
    } else {
        for (const auto& l : cfg.lines)
            cfg.comm_edges.push_back({l.from, l.to});
    }
    cfg.tau_nu =
        resolve_taus(controller, "tau_nu", static_cast<int>(cfg.comm_edges.size()), tau_c);
    for (const auto& taus : {cfg.tau_g, cfg.tau_lambda, cfg.tau_nu})
        for (double t : taus)
            if (!(t > 0.0))
                throw ValidationError("controller time constants must be positive");

    if (controller.contains("weights")) {
        const json& wj = controller["weights"];
        if (!wj.is_array() || static_cast<int>(wj.size()) != n_ctrl)
            throw ValidationError("'controller.weights' must list one weight per controllable "
                                  "node in ascending id order");
        for (const auto& w : wj)
            cfg.weights.push_back(w.get<double>());
    } else {
        for (int i = 0; i < n_ctrl; ++i)
            cfg.weights.push_back(1.0 + 0.1 * i);
    }
    for (double w : cfg.weights)
        if (!(w > 0.0))
            throw ValidationError("cost weights must be positive");

    const json loads = j.value("loads", json::object());
    cfg.p_demand = parse_demand_map(loads, "active");
    cfg.q_demand = parse_demand_map(loads, "reactive");
    auto id_known = [&](int id) { return ids.count(id) > 0; };
    for (const auto& [id, v] : cfg.p_demand) {
        (void)v;
        if (!id_known(id))
            throw ValidationError("loads.active references unknown node " + std::to_string(id));
    }
    for (const auto& [id, v] : cfg.q_demand) {
        (void)v;
        const auto it = std::find_if(cfg.nodes.begin(), cfg.nodes.end(),
                                     [&](const NodeConfig& nc) { return nc.id == id; });
        if (it == cfg.nodes.end() || it->kind != NodeKind::Load)
            throw ValidationError("loads.reactive entries must name load nodes, got " +
                                  std::to_string(id));
    }

    if (j.contains("events")) {
        for (const auto& ej : j["events"]) {
            Event ev;
            ev.time = require_number(ej, "time", "event.");
            ev.node_id = require_int(ej, "node", "event.");
            ev.delta_p = number_or(ej, "delta_p", 0.0);
            ev.delta_q = number_or(ej, "delta_q", 0.0);
            if (ev.time < 0.0)
                throw ValidationError("event times must be nonnegative");
            if (!id_known(ev.node_id))
                throw ValidationError("event references unknown node " +
                                      std::to_string(ev.node_id));
            cfg.events.push_back(ev);
        }
    }

    const json solver = j.value("solver", json::object());
    cfg.solver.dt = number_or(solver, "dt", 0.002);
    cfg.solver.algebraic_tol = number_or(solver, "algebraic_tol", 1e-10);
    cfg.solver.newton_max_iter = static_cast<int>(number_or(solver, "newton_max_iter", 50));
    const std::string method = solver.value("method", "rk4_with_inner_solve");
    if (method == "rk4_with_inner_solve" || method == "rk4")
        cfg.solver.method = IntegrationMethod::Rk4WithInnerSolve;
    else if (method == "implicit_trapezoid")
        cfg.solver.method = IntegrationMethod::ImplicitTrapezoid;
    else
        throw ValidationError("unknown solver.method '" + method + "'");
    if (!(cfg.solver.dt > 0.0) || !(cfg.solver.algebraic_tol > 0.0) ||
        cfg.solver.newton_max_iter < 1)
        throw ValidationError("solver.dt and solver.algebraic_tol must be positive, "
                              "newton_max_iter at least 1");

    const json output = j.value("output", json::object());
    cfg.output.horizon = number_or(output, "horizon", 500.0);
    cfg.output.decimation = static_cast<int>(
        number_or(output, "decimation", std::max(1.0, std::round(0.1 / cfg.solver.dt))));
    cfg.output.trajectory_csv = output.value("trajectory_csv", "trajectory.csv");
    cfg.output.summary = output.value("summary", "summary.txt");
    cfg.output.verification = output.value("verification", "verification.txt");
    if (!(cfg.output.horizon > 0.0) || cfg.output.decimation < 1)
        throw ValidationError("output.horizon must be positive and decimation at least 1");

    // Event times must land on the step grid.
    for (const Event& ev : cfg.events) {
        const double k = ev.time / cfg.solver.dt;
        if (std::abs(k - std::round(k)) > 1e-6)
            throw ValidationError("event time " + std::to_string(ev.time) +
                                  " is not an integer multiple of dt");
        if (ev.time > cfg.output.horizon)
            throw ValidationError("event at t = " + std::to_string(ev.time) +
                                  " lies beyond the horizon");
    }
    return cfg;
}

std::string serialize_config(const ScenarioConfig& cfg) {
    json j;
    j["name"] = cfg.name;

    json nodes = json::array();
    for (const auto& nc : cfg.nodes) {
        json nj;
        nj["id"] = nc.id;
        nj["kind"] = kind_name(nc.kind);
        nj["b_self"] = nc.b_self;
        switch (nc.kind) {
        case NodeKind::Generator:
            nj["inertia"] = nc.inertia;
            nj["damping"] = nc.damping;
            nj["xd"] = nc.xd;
            nj["xd_transient"] = nc.xd_transient;
            nj["tau_voltage"] = nc.tau_voltage;
            break;
        case NodeKind::Inverter:
            nj["inertia"] = nc.inertia;
            nj["damping"] = nc.damping;
            break;
        case NodeKind::Load:
            nj["damping"] = nc.damping;
            break;
        }
        nodes.push_back(nj);
    }
    json lines = json::array();
    for (const auto& l : cfg.lines)
        lines.push_back({{"from", l.from}, {"to", l.to}, {"b", l.b}});
    j["network"] = {{"gamma", cfg.gamma}, {"nodes", nodes}, {"lines", lines}};

    json comm = json::array();
    for (auto [a, b] : cfg.comm_edges)
        comm.push_back(json::array({a, b}));
    j["controller"] = {{"weights", cfg.weights},
                       {"tau_g", cfg.tau_g},
                       {"tau_lambda", cfg.tau_lambda},
                       {"tau_nu", cfg.tau_nu},
                       {"communication_edges", comm}};

    json active = json::object(), reactive = json::object();
    for (const auto& [id, v] : cfg.p_demand)
        active[std::to_string(id)] = v;
    for (const auto& [id, v] : cfg.q_demand)
        reactive[std::to_string(id)] = v;
    j["loads"] = {{"active", active}, {"reactive", reactive}};

    json events = json::array();
    for (const auto& ev : cfg.events)
        events.push_back({{"time", ev.time},
                          {"node", ev.node_id},
                          {"delta_p", ev.delta_p},
                          {"delta_q", ev.delta_q}});
    j["events"] = events;

    j["solver"] = {{"dt", cfg.solver.dt},
                   {"method", cfg.solver.method == IntegrationMethod::Rk4WithInnerSolve
                                  ? "rk4_with_inner_solve"
                                  : "implicit_trapezoid"},
                   {"algebraic_tol", cfg.solver.algebraic_tol},
                   {"newton_max_iter", cfg.solver.newton_max_iter}};
    j["output"] = {{"horizon", cfg.output.horizon},
                   {"decimation", cfg.output.decimation},
                   {"trajectory_csv", cfg.output.trajectory_csv},
                   {"summary", cfg.output.summary},
                   {"verification", cfg.output.verification}};
    return j.dump(2) + "\n";
}

BuiltScenario build_scenario(const ScenarioConfig& cfg) {
    std::vector<NodeSpec> nodes;
    std::vector<LineSpec> lines = cfg.lines;
    for (const auto& nc : cfg.nodes)
        nodes.push_back({nc.id, nc.kind, nc.b_self});
    NetworkModel model = NetworkModel::build(nodes, lines, cfg.gamma);

    PlantParams params;
    std::map<int, const NodeConfig*> by_id;
    for (const auto& nc : cfg.nodes)
        by_id[nc.id] = &nc;
    for (int v = 0; v < model.nodeCount(); ++v) {
        const NodeConfig& nc = *by_id.at(model.nodeId(v));
        switch (nc.kind) {
        case NodeKind::Generator:
            params.generators.push_back(
                {nc.inertia, nc.damping, nc.xd, nc.xd_transient, nc.tau_voltage});
            break;
        case NodeKind::Inverter:
            params.inverters.push_back({nc.inertia, nc.damping});
            break;
        case NodeKind::Load:
            params.loads.push_back({nc.damping});
            break;
        }
    }

    // Config vectors are keyed by ascending node id; remap to internal order.
    std::vector<int> controllable_ids, all_node_ids;
    for (const auto& nc : cfg.nodes) {
        all_node_ids.push_back(nc.id);
        if (nc.kind != NodeKind::Load)
            controllable_ids.push_back(nc.id);
    }
    std::map<int, double> weight_by_id, tau_g_by_id, tau_l_by_id;
    for (std::size_t i = 0; i < controllable_ids.size(); ++i) {
        weight_by_id[controllable_ids[i]] = cfg.weights[i];
        tau_g_by_id[controllable_ids[i]] = cfg.tau_g[i];
    }
    for (std::size_t i = 0; i < all_node_ids.size(); ++i)
        tau_l_by_id[all_node_ids[i]] = cfg.tau_lambda[i];

    CostModel cost;
    cost.weights = VectorXd(model.controllableCount());
    ControllerGains gains;
    gains.tau_g = VectorXd(model.controllableCount());
    gains.tau_lambda = VectorXd(model.nodeCount());
    gains.tau_nu = Eigen::Map<const VectorXd>(cfg.tau_nu.data(),
                                              static_cast<long>(cfg.tau_nu.size()));
    for (int k = 0; k < model.controllableCount(); ++k) {
        cost.weights[k] = weight_by_id.at(model.nodeId(k));
        gains.tau_g[k] = tau_g_by_id.at(model.nodeId(k));
    }
    for (int v = 0; v < model.nodeCount(); ++v)
        gains.tau_lambda[v] = tau_l_by_id.at(model.nodeId(v));

    std::vector<std::pair<int, int>> comm_edges;
    for (auto [a, b] : cfg.comm_edges)
        comm_edges.push_back({model.indexOf(a), model.indexOf(b)});
    CommunicationGraph comm = CommunicationGraph::build(model.nodeCount(), comm_edges);

    VectorXd p_demand = VectorXd::Zero(model.nodeCount());
    for (const auto& [id, v] : cfg.p_demand)
        p_demand[model.indexOf(id)] = v;
    VectorXd q_demand = VectorXd::Zero(model.loadCount());
    for (const auto& [id, v] : cfg.q_demand)
        q_demand[model.indexOf(id) - model.controllableCount()] = v;

    return BuiltScenario{ClosedLoop(Plant(std::move(model), std::move(params)), std::move(cost),
                                    std::move(comm), std::move(gains)),
                         std::move(p_demand), std::move(q_demand)};
}

SummaryMetrics summarize(const ScenarioConfig& cfg, const TrajectoryRecord& rec) {
    SummaryMetrics m;
    for (const auto& s : rec.samples)
        m.max_transient_df_hz =
            std::max(m.max_transient_df_hz, s.freq_dev_hz.lpNorm<Eigen::Infinity>());

    // Settling per event: last time inside the window where any node is
    // outside the +-0.01 Hz band.
    std::vector<double> event_times;
    for (const auto& ev : cfg.events)
        event_times.push_back(ev.time);
    std::sort(event_times.begin(), event_times.end());
    event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());
    for (std::size_t k = 0; k < event_times.size(); ++k) {
        const double t0 = event_times[k];
        const double t1 = k + 1 < event_times.size() ? event_times[k + 1] : cfg.output.horizon;
        double settle = 0.0;
        for (const auto& s : rec.samples) {
            if (s.t < t0 || s.t >= t1)
                continue;
            if (s.freq_dev_hz.lpNorm<Eigen::Infinity>() > 0.01)
                settle = s.t - t0;
        }
        m.settling_times.push_back(settle);
    }

    const Equilibrium& final_eq = rec.window_equilibria.back().second;
    m.final_lambda = final_eq.lambda_bar;
    m.final_losses = final_eq.losses;
    if (!rec.samples.empty()) {
        m.final_max_df_hz = rec.samples.back().freq_dev_hz.lpNorm<Eigen::Infinity>();
        m.final_shifted_hamiltonian = rec.samples.back().shifted_hamiltonian;
        m.min_passivity = rec.samples.front().passivity;
        for (const auto& s : rec.samples)
            m.min_passivity = std::min(m.min_passivity, s.passivity);
    }
    return m;
}

ResultBundle run_scenario(const ScenarioConfig& cfg) {
    BuiltScenario built = build_scenario(cfg);

    ResultBundle bundle;
    bundle.config = cfg;
    bundle.initial_equilibrium = built.system.solveEquilibrium(built.p_demand, built.q_demand);
    bundle.initial_report = built.system.verifyPropositions(bundle.initial_equilibrium);

    bundle.trajectory = simulate(built.system, bundle.initial_equilibrium, cfg.events,
                                 cfg.output.horizon, cfg.solver, cfg.output.decimation);
    const Equilibrium& final_eq = bundle.trajectory.window_equilibria.back().second;
    bundle.final_report = built.system.verifyPropositions(final_eq);

    bundle.summary = summarize(cfg, bundle.trajectory);
    const VectorXd share =
        final_eq.state.controller.p_g.cwiseQuotient(built.system.costModel().weights);
    bundle.summary.final_sharing_spread = share.maxCoeff() - share.minCoeff();
    return bundle;
}

void emit_csv(const TrajectoryRecord& rec, const std::filesystem::path& path) {
    std::string out;
    out.reserve(rec.samples.size() * 64 + 256);
    out += "t";
    for (int id : rec.node_ids)
        out += ",f_" + std::to_string(id);
    for (int id : rec.controllable_ids)
        out += ",pg_" + std::to_string(id);
    out += ",lambda_min,lambda_max,H,Hbar,Phi,passivity_min\n";

    double passivity_min = rec.samples.empty() ? 0.0 : rec.samples.front().passivity;
    for (const auto& s : rec.samples) {
        passivity_min = std::min(passivity_min, s.passivity);
        out += format_double(s.t);
        for (int i = 0; i < s.freq_dev_hz.size(); ++i)
            out += "," + format_double(50.0 + s.freq_dev_hz[i]);
        for (int i = 0; i < s.p_g.size(); ++i)
            out += "," + format_double(s.p_g[i]);
        out += "," + format_double(s.lambda_min);
        out += "," + format_double(s.lambda_max);
        out += "," + format_double(s.hamiltonian);
        out += "," + format_double(s.shifted_hamiltonian);
        out += "," + format_double(s.losses);
        out += "," + format_double(passivity_min);
        out += "\n";
    }
    atomic_write(path, out);
}

void emit_summary(const ResultBundle& bundle, const std::filesystem::path& path) {
    std::string out;
    out += "name: " + bundle.config.name + "\n";
    out += "horizon_s: " + format_double(bundle.config.output.horizon) + "\n";
    out += "events: " + std::to_string(bundle.config.events.size()) + "\n";
    out += "initial_lambda_bar: " + format_double(bundle.initial_equilibrium.lambda_bar) + "\n";
    out += "initial_losses_pu: " + format_double(bundle.initial_equilibrium.losses) + "\n";
    out += "max_transient_abs_df_hz: " + format_double(bundle.summary.max_transient_df_hz) + "\n";
    for (std::size_t k = 0; k < bundle.summary.settling_times.size(); ++k)
        out += "settling_time_s_event_" + std::to_string(k + 1) + ": " +
               format_double(bundle.summary.settling_times[k]) + "\n";
    out += "final_lambda_bar: " + format_double(bundle.summary.final_lambda) + "\n";
    out += "final_losses_pu: " + format_double(bundle.summary.final_losses) + "\n";
    out += "final_sharing_spread_pu: " + format_double(bundle.summary.final_sharing_spread) + "\n";
    out += "final_max_abs_df_hz: " + format_double(bundle.summary.final_max_df_hz) + "\n";
    out += "min_passivity_residual: " + format_double(bundle.summary.min_passivity) + "\n";
    out += "final_shifted_hamiltonian: " +
           format_double(bundle.summary.final_shifted_hamiltonian) + "\n";
    atomic_write(path, out);
}

namespace {

void report_lines(std::string& out, const std::string& prefix, const PropositionReport& rep) {
    out += prefix + ".max_rhs_residual: " + format_double(rep.max_rhs_residual) + "\n";
    out += prefix + ".max_abs_omega: " + format_double(rep.max_abs_omega) + "\n";
    out += prefix + ".marginal_price_spread: " + format_double(rep.marginal_price_spread) + "\n";
    out += prefix + ".sharing_spread: " + format_double(rep.sharing_spread) + "\n";
    out += prefix + ".lambda_spread: " + format_double(rep.lambda_spread) + "\n";
    out += prefix + ".balance_residual: " + format_double(rep.balance_residual) + "\n";
    out += prefix + ".pass: " + (rep.pass() ? std::string("yes") : std::string("no")) + "\n";
}

} // namespace

void emit_verification(const ResultBundle& bundle, const std::filesystem::path& path) {
    std::string out;
    report_lines(out, "initial", bundle.initial_report);
    report_lines(out, "final", bundle.final_report);
    out += std::string("all_pass: ") +
           (bundle.initial_report.pass() && bundle.final_report.pass() ? "yes" : "no") + "\n";
    atomic_write(path, out);
}

void write_outputs(const ResultBundle& bundle, const std::filesystem::path& out_dir) {
    emit_csv(bundle.trajectory, out_dir / bundle.config.output.trajectory_csv);
    emit_summary(bundle, out_dir / bundle.config.output.summary);
    emit_verification(bundle, out_dir / bundle.config.output.verification);
}

namespace {

PlantState random_plant_state(const Plant& plant, std::mt19937& rng) {
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

PlantInputs random_plant_inputs(const Plant& plant, std::mt19937& rng) {
    auto uni = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    const auto& m = plant.model();
    PlantInputs in;
    in.p_gen = VectorXd::Zero(m.controllableCount());
    in.u_field = VectorXd::Zero(m.generatorCount());
    in.p_demand = VectorXd::Zero(m.nodeCount());
    in.q_demand = VectorXd::Zero(m.loadCount());
    for (int i = 0; i < in.p_gen.size(); ++i)
        in.p_gen[i] = uni(-0.5, 0.5);
    for (int i = 0; i < in.u_field.size(); ++i)
        in.u_field[i] = uni(0.8, 1.2);
    for (int i = 0; i < in.p_demand.size(); ++i)
        in.p_demand[i] = uni(-0.5, 0.5);
    for (int i = 0; i < in.q_demand.size(); ++i)
        in.q_demand[i] = uni(-0.3, 0.3);
    return in;
}

/// Max relative error between the analytic gradient and central finite
/// differences of the Hamiltonian at one state.
double gradient_fd_error(const Plant& plant, const PlantState& s) {
    const PlantGradient g = plant.gradient(s);
    double worst = 0.0;
    auto probe = [&](PlantState& st, double* slot, double analytic) {
        const double save = *slot;
        const double h = 1e-6 * std::max(1.0, std::abs(save));
        *slot = save + h;
        const double hp = plant.hamiltonian(st);
        *slot = save - h;
        const double hm = plant.hamiltonian(st);
        *slot = save;
        const double fd = (hp - hm) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - analytic) / std::max(1.0, std::abs(analytic)));
    };
    PlantState st = s;
    for (int i = 0; i < st.theta.size(); ++i)
        probe(st, &st.theta[i], g.d_theta[i]);
    for (int i = 0; i < st.momenta.size(); ++i)
        probe(st, &st.momenta[i], g.d_momenta[i]);
    for (int i = 0; i < st.voltage_gen.size(); ++i)
        probe(st, &st.voltage_gen[i], g.d_voltage_gen[i]);
    for (int i = 0; i < st.omega_load.size(); ++i)
        probe(st, &st.omega_load[i], g.d_omega_load[i]);
    for (int i = 0; i < st.voltage_load.size(); ++i)
        probe(st, &st.voltage_load[i], g.d_voltage_load[i]);
    return worst;
}

} // namespace

StructureReport verify_structure(const ScenarioConfig& cfg, unsigned seed) {
    BuiltScenario built = build_scenario(cfg);
    const ClosedLoop& sys = built.system;
    const Plant& plant = sys.plant();
    const auto& model = plant.model();

    StructureReport rep;
    auto add = [&](std::string name, bool pass, double metric, std::string detail = "") {
        rep.checks.push_back({std::move(name), pass, metric, std::move(detail)});
    };

    const StructureMatrices sm = sys.assembleStructure();
    const double skew = (sm.J + sm.J.transpose()).cwiseAbs().maxCoeff();
    add("J_skew_symmetry", skew == 0.0, skew, "max |J + J^T| entry");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sm.R);
    const double min_eig = es.eigenvalues().minCoeff();
    add("R_positive_semidefinite", min_eig >= -1e-12, min_eig, "minimum eigenvalue of R");

    int zero_count = 0;
    bool mask_binary = true;
    for (int i = 0; i < sm.E_diag.size(); ++i) {
        if (sm.E_diag[i] == 0.0)
            ++zero_count;
        else if (sm.E_diag[i] != 1.0)
            mask_binary = false;
    }
    add("E_descriptor_mask", mask_binary && zero_count == 2 * model.loadCount(),
        static_cast<double>(zero_count), "algebraic rows marked by zeros");

    std::mt19937 rng(seed);
    double worst_grad = 0.0;
    for (int trial = 0; trial < 100; ++trial)
        worst_grad = std::max(worst_grad, gradient_fd_error(plant, random_plant_state(plant, rng)));
    add("gradient_finite_difference", worst_grad <= 1e-6, worst_grad,
        "max relative error over 100 random states");

    double worst_shared = 0.0, worst_voltage_model = 0.0, worst_voltage_direct = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const PlantState s = random_plant_state(plant, rng);
        const PlantInputs in = random_plant_inputs(plant, rng);
        const DescriptorRhs a = plant.rhsInDescriptorCoords(s, in);
        const DescriptorRhs b = plant.phsFormRhs(s, in);
        worst_shared = std::max({worst_shared,
                                 (a.vartheta_dot - b.vartheta_dot).lpNorm<Eigen::Infinity>(),
                                 (a.momenta_dot - b.momenta_dot).lpNorm<Eigen::Infinity>(),
                                 (a.residual_p - b.residual_p).lpNorm<Eigen::Infinity>(),
                                 (a.residual_q - b.residual_q).lpNorm<Eigen::Infinity>()});
        // The voltage rows differ by R_g (U_i - 1) sum_j G_ij U_j sin.
        const VectorXd u = plant.nodeVoltages(s);
        for (int g = 0; g < model.generatorCount(); ++g) {
            const auto& gp = plant.params().generators[g];
            double gsin = 0.0;
            for (auto [e, jn] : model.incident(g))
                gsin += model.gLine(e) * u[jn] * std::sin(s.theta[g] - s.theta[jn]);
            const double predicted = (gp.Xd - gp.Xdp) / gp.tauU * (u[g] - 1.0) * gsin;
            const double diff = a.voltage_dot[g] - b.voltage_dot[g];
            worst_voltage_model = std::max(worst_voltage_model, std::abs(diff - predicted));
            worst_voltage_direct = std::max(worst_voltage_direct, std::abs(diff));
        }
    }
    add("dual_form_shared_rows", worst_shared <= 1e-12, worst_shared,
        "angle, momentum and load rows of compact vs PHS evaluation");
    add("dual_form_voltage_rows_closed_form", worst_voltage_model <= 1e-12, worst_voltage_model,
        "voltage-row difference matches the conductance scaling term");
    if (cfg.gamma == 0.0)
        add("dual_form_all_rows_lossless", std::max(worst_shared, worst_voltage_direct) <= 1e-12,
            std::max(worst_shared, worst_voltage_direct), "every row agrees when gamma = 0");

    return rep;
}

std::string format_structure_report(const StructureReport& rep) {
    std::string out;
    for (const auto& c : rep.checks) {
        out += std::string(c.pass ? "PASS" : "FAIL") + "  " + c.name + "  metric=" +
               format_double(c.metric);
        if (!c.detail.empty())
            out += "  (" + c.detail + ")";
        out += "\n";
    }
    out += rep.all_pass() ? "structure checks: all passed\n" : "structure checks: FAILURES\n";
    return out;
}

} // namespace mgsim
