#include "mgsim/network.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>

namespace mgsim {

NetworkModel NetworkModel::build(const std::vector<NodeSpec>& nodes,
                                 const std::vector<LineSpec>& lines, double gamma) {
    if (gamma < 0.0)
        throw ValidationError("R/X ratio gamma must be nonnegative, got " + std::to_string(gamma));
    if (nodes.empty())
        throw ValidationError("network needs at least one node");

    NetworkModel m;
    m.gamma_ = gamma;

    // Kind-major, id-ascending internal order.
    std::vector<NodeSpec> sorted = nodes;
    std::stable_sort(sorted.begin(), sorted.end(), [](const NodeSpec& a, const NodeSpec& b) {
        if (a.kind != b.kind)
            return static_cast<int>(a.kind) < static_cast<int>(b.kind);
        return a.id < b.id;
    });

    std::map<int, int> index_of;
    for (const NodeSpec& s : sorted) {
        if (index_of.count(s.id))
            throw DuplicateNodeError("duplicate node id " + std::to_string(s.id));
        index_of[s.id] = static_cast<int>(m.nodes_.size());
        m.nodes_.push_back({s.id, s.kind, s.b_self});
        switch (s.kind) {
        case NodeKind::Generator: ++m.n_gen_; break;
        case NodeKind::Inverter: ++m.n_inv_; break;
        case NodeKind::Load: ++m.n_load_; break;
        }
    }

    std::set<std::pair<int, int>> seen;
    m.incident_.resize(m.nodes_.size());
    for (const LineSpec& l : lines) {
        if (!index_of.count(l.from))
            throw UnknownEndpointError("line endpoint " + std::to_string(l.from) + " is not a node");
        if (!index_of.count(l.to))
            throw UnknownEndpointError("line endpoint " + std::to_string(l.to) + " is not a node");
        if (l.from == l.to)
            throw UnknownEndpointError("self-loop at node " + std::to_string(l.from));
        if (!(l.b > 0.0))
            throw NonpositiveSusceptanceError("line (" + std::to_string(l.from) + "," +
                                              std::to_string(l.to) + ") needs B_ij > 0, got " +
                                              std::to_string(l.b));
        // Orient from lower to higher id so the incidence matrix is deterministic.
        int id_lo = std::min(l.from, l.to);
        int id_hi = std::max(l.from, l.to);
        if (!seen.insert({id_lo, id_hi}).second)
            throw ValidationError("duplicate line between nodes " + std::to_string(id_lo) +
                                  " and " + std::to_string(id_hi));
        int e = static_cast<int>(m.lines_.size());
        int i = index_of[id_lo];
        int j = index_of[id_hi];
        m.lines_.push_back({i, j, l.b});
        m.incident_[i].push_back({e, j});
        m.incident_[j].push_back({e, i});
    }

    // Connectivity check (required by the equilibrium analysis).
    {
        const int n = m.nodeCount();
        std::vector<int> stack{0};
        std::vector<bool> visited(n, false);
        visited[0] = true;
        int count = 1;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            for (auto [e, w] : m.incident_[v]) {
                (void)e;
                if (!visited[w]) {
                    visited[w] = true;
                    ++count;
                    stack.push_back(w);
                }
            }
        }
        if (count != n) {
            std::vector<int> isolated;
            std::string unreachable;
            for (int v = 0; v < n; ++v) {
                if (!visited[v]) {
                    if (m.incident_[v].empty())
                        isolated.push_back(m.nodes_[v].id);
                    unreachable += (unreachable.empty() ? "" : ",") + std::to_string(m.nodes_[v].id);
                }
            }
            throw DisconnectedGraphError("physical graph is not connected; unreachable nodes: " +
                                             unreachable,
                                         isolated);
        }
    }

    m.g_self_.resize(m.nodes_.size(), 0.0);
    for (int v = 0; v < m.nodeCount(); ++v) {
        double sum = 0.0;
        for (auto [e, w] : m.incident_[v]) {
            (void)w;
            sum += m.gLine(e);
        }
        m.g_self_[v] = -sum;
    }

    return m;
}

int NetworkModel::indexOf(int id) const {
    for (int v = 0; v < nodeCount(); ++v)
        if (nodes_[v].id == id)
            return v;
    throw UnknownNodeError("unknown node id " + std::to_string(id));
}

std::vector<int> NetworkModel::neighbors(int id) const {
    int v = indexOf(id);
    std::vector<int> out;
    out.reserve(incident_[v].size());
    for (auto [e, w] : incident_[v]) {
        (void)e;
        out.push_back(nodes_[w].id);
    }
    std::sort(out.begin(), out.end());
    return out;
}

IncidenceMatrix NetworkModel::incidence() const {
    IncidenceMatrix D;
    D.full = Eigen::MatrixXd::Zero(nodeCount(), lineCount());
    for (int e = 0; e < lineCount(); ++e) {
        D.full(lines_[e].from, e) = 1.0;
        D.full(lines_[e].to, e) = -1.0;
    }
    D.n_gen = n_gen_;
    D.n_inv = n_inv_;
    D.n_load = n_load_;
    return D;
}

} // namespace mgsim
