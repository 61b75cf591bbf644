#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mgsim/errors.hpp"

namespace mgsim {

using Eigen::VectorXd;

enum class NodeKind { Generator, Inverter, Load };

/// External description of a node: user-facing id, kind, and the
/// self-susceptance coefficient B_ii as tabulated (negative for an
/// inductive network).
struct NodeSpec {
    int id = 0;
    NodeKind kind = NodeKind::Load;
    double b_self = 0.0;
};

/// A resistive-inductive line between two nodes, given by the magnitude
/// of its susceptance coefficient B_ij > 0.
struct LineSpec {
    int from = 0;
    int to = 0;
    double b = 0.0;

    bool operator==(const LineSpec&) const = default;
};

/// Signed node-edge incidence matrix with the generator/inverter/load
/// row partition.
struct IncidenceMatrix {
    Eigen::MatrixXd full; // n x m, entries in {-1, 0, +1}

    int n_gen = 0;
    int n_inv = 0;
    int n_load = 0;

    Eigen::MatrixXd generatorRows() const { return full.topRows(n_gen); }
    Eigen::MatrixXd inverterRows() const { return full.middleRows(n_gen, n_inv); }
    Eigen::MatrixXd loadRows() const { return full.bottomRows(n_load); }
};

/// Validated physical graph with admittance data.
///
/// Nodes are stored kind-major (generators, then inverters, then loads),
/// id-ascending within a kind; all vector quantities elsewhere in the
/// library follow this internal ordering. Lines are oriented from the
/// lower to the higher node id. Conductances are derived from the R/X
/// ratio gamma as G_ij = -gamma * B_ij with G_ii = -sum_j G_ij (no shunt
/// conductance). Immutable after construction.
class NetworkModel {
public:
    struct Line {
        int from = 0; // internal index, tail (+1 in the incidence column)
        int to = 0;   // internal index, head (-1)
        double b = 0.0;
    };

    static NetworkModel build(const std::vector<NodeSpec>& nodes,
                              const std::vector<LineSpec>& lines, double gamma);

    int nodeCount() const { return static_cast<int>(nodes_.size()); }
    int lineCount() const { return static_cast<int>(lines_.size()); }
    double gamma() const { return gamma_; }

    int generatorCount() const { return n_gen_; }
    int inverterCount() const { return n_inv_; }
    int loadCount() const { return n_load_; }
    int controllableCount() const { return n_gen_ + n_inv_; }

    NodeKind kind(int index) const { return nodes_[index].kind; }
    int nodeId(int index) const { return nodes_[index].id; }
    /// Internal index for a user-facing node id; throws UnknownNodeError.
    int indexOf(int id) const;

    /// B_ii as given (not recomputed from the line list).
    double bSelf(int index) const { return nodes_[index].b_self; }
    /// Derived conductance self term, G_ii = gamma * sum of incident B_ij.
    double gSelf(int index) const { return g_self_[index]; }

    const Line& line(int e) const { return lines_[e]; }
    double bLine(int e) const { return lines_[e].b; }
    /// G_ij = -gamma * B_ij for line e.
    double gLine(int e) const { return -gamma_ * lines_[e].b; }

    /// Incident (edge index, neighbor index) pairs for a node.
    const std::vector<std::pair<int, int>>& incident(int index) const {
        return incident_[index];
    }
    /// Neighbor ids of the node with the given user-facing id.
    std::vector<int> neighbors(int id) const;

    IncidenceMatrix incidence() const;

private:
    struct Node {
        int id;
        NodeKind kind;
        double b_self;
    };

    std::vector<Node> nodes_;
    std::vector<Line> lines_;
    std::vector<std::vector<std::pair<int, int>>> incident_; // per node: (edge, other)
    std::vector<double> g_self_;
    double gamma_ = 0.0;
    int n_gen_ = 0, n_inv_ = 0, n_load_ = 0;
};

} // namespace mgsim
