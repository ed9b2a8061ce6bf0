#pragma once

// Communication topology: directed graphs over nodes 0..N where node 0 is the
// leader, plus the piecewise-constant switching signal that selects the active
// graph over time.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "agentsync/errors.hpp"

namespace agentsync {

/// Directed graph on nodes 0..node_count-1. An edge (j, i) means node i
/// receives information from node j. Unit weights. Edges into node 0 are
/// stored but never influence the dynamics (the leader listens to nobody).
class DiGraph {
public:
    DiGraph(int node_count, std::vector<std::pair<int, int>> edges)
        : node_count_(node_count), edges_(std::move(edges)) {
        if (node_count_ < 1) throw ConfigError("graph needs at least the leader node");
        for (const auto& [j, i] : edges_) {
            if (j < 0 || j >= node_count_ || i < 0 || i >= node_count_)
                throw ConfigError("edge (" + std::to_string(j) + ", " + std::to_string(i) +
                                  ") references a node outside 0.." + std::to_string(node_count_ - 1));
            if (j == i)
                throw ConfigError("self-loop on node " + std::to_string(i) + " is not allowed");
        }
        std::sort(edges_.begin(), edges_.end());
        edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
        in_neighbors_.assign(static_cast<std::size_t>(node_count_), {});
        for (const auto& [j, i] : edges_) in_neighbors_[static_cast<std::size_t>(i)].push_back(j);
    }

    int node_count() const { return node_count_; }
    int follower_count() const { return node_count_ - 1; }
    const std::vector<std::pair<int, int>>& edges() const { return edges_; }

    bool has_edge(int from, int to) const {
        return std::binary_search(edges_.begin(), edges_.end(), std::make_pair(from, to));
    }

    const std::vector<int>& in_neighbors(int node) const {
        if (node < 0 || node >= node_count_) throw DomainError("in_neighbors: node out of range");
        return in_neighbors_[static_cast<std::size_t>(node)];
    }

    /// Graph Laplacian; row i holds the in-degree on the diagonal and -1 for
    /// each in-neighbor. Row 0 reflects stored leader in-edges if any exist.
    Eigen::MatrixXd laplacian() const {
        Eigen::MatrixXd L = Eigen::MatrixXd::Zero(node_count_, node_count_);
        for (const auto& [j, i] : edges_) {
            L(i, j) -= 1.0;
            L(i, i) += 1.0;
        }
        return L;
    }

    /// Follower block of the Laplacian: the Laplacian with the leader row and
    /// column removed.
    Eigen::MatrixXd h_matrix() const {
        if (node_count_ < 2) throw DomainError("h_matrix requires at least one follower");
        const Eigen::MatrixXd L = laplacian();
        return L.block(1, 1, node_count_ - 1, node_count_ - 1);
    }

    /// True when every edge between followers has its reverse edge present.
    /// Leader edges are exempt.
    bool followers_undirected() const {
        for (const auto& [j, i] : edges_)
            if (j >= 1 && i >= 1 && !has_edge(i, j)) return false;
        return true;
    }

    /// Followers with no directed path from the leader.
    std::vector<int> unreachable_from_leader() const {
        std::vector<std::vector<int>> out(static_cast<std::size_t>(node_count_));
        for (const auto& [j, i] : edges_) out[static_cast<std::size_t>(j)].push_back(i);
        std::vector<char> seen(static_cast<std::size_t>(node_count_), 0);
        std::queue<int> q;
        q.push(0);
        seen[0] = 1;
        while (!q.empty()) {
            const int u = q.front();
            q.pop();
            for (int w : out[static_cast<std::size_t>(u)])
                if (!seen[static_cast<std::size_t>(w)]) {
                    seen[static_cast<std::size_t>(w)] = 1;
                    q.push(w);
                }
        }
        std::vector<int> missing;
        for (int i = 1; i < node_count_; ++i)
            if (!seen[static_cast<std::size_t>(i)]) missing.push_back(i);
        return missing;
    }

    friend DiGraph union_of(const DiGraph& a, const DiGraph& b) {
        if (a.node_count_ != b.node_count_)
            throw DomainError("graph union requires matching node counts");
        std::vector<std::pair<int, int>> edges = a.edges_;
        edges.insert(edges.end(), b.edges_.begin(), b.edges_.end());
        return DiGraph(a.node_count_, std::move(edges));
    }

private:
    int node_count_;
    std::vector<std::pair<int, int>> edges_;
    std::vector<std::vector<int>> in_neighbors_;
};

struct ScheduleEntry {
    double start = 0.0;
    int graph_index = 1;  // 1-based index into the graph list
};

/// Right-continuous piecewise-constant selection of the active graph.
/// Periodic schedules repeat the entry pattern with the given period;
/// aperiodic ones hold the last graph forever.
class SwitchingSchedule {
public:
    SwitchingSchedule(std::vector<DiGraph> graphs, std::vector<ScheduleEntry> entries,
                      double dwell, double period = 0.0)
        : graphs_(std::move(graphs)), entries_(std::move(entries)), dwell_(dwell), period_(period) {
        if (graphs_.empty()) throw ConfigError("schedule needs at least one graph");
        const int nodes = graphs_.front().node_count();
        for (const auto& g : graphs_)
            if (g.node_count() != nodes)
                throw ConfigError("all graphs in a schedule must share the node count");
        if (entries_.empty()) throw ConfigError("schedule needs at least one entry");
        if (entries_.front().start != 0.0)
            throw ConfigError("the first schedule entry must start at time 0");
        if (!(dwell_ > 0.0)) throw ConfigError("dwell time must be positive");
        for (std::size_t k = 0; k < entries_.size(); ++k) {
            const int gi = entries_[k].graph_index;
            if (gi < 1 || static_cast<std::size_t>(gi) > graphs_.size())
                throw ConfigError("schedule entry " + std::to_string(k) + " references graph " +
                                  std::to_string(gi) + " outside 1.." + std::to_string(graphs_.size()));
            if (k > 0) {
                const double gap = entries_[k].start - entries_[k - 1].start;
                if (!(gap > 0.0)) throw ConfigError("schedule entry starts must strictly increase");
                if (gap < dwell_ - 1e-12)
                    throw ConfigError("interval starting at " + std::to_string(entries_[k - 1].start) +
                                      " is shorter than the dwell time");
            }
        }
        if (period_ != 0.0) {
            if (!(period_ > entries_.back().start))
                throw ConfigError("period must exceed the last entry start");
            if (period_ - entries_.back().start < dwell_ - 1e-12)
                throw ConfigError("the final interval of the cycle is shorter than the dwell time");
        }
    }

    bool periodic() const { return period_ != 0.0; }
    double period() const { return period_; }
    double dwell() const { return dwell_; }
    int node_count() const { return graphs_.front().node_count(); }
    int follower_count() const { return node_count() - 1; }
    std::size_t graph_count() const { return graphs_.size(); }
    std::size_t entry_count() const { return entries_.size(); }
    const std::vector<ScheduleEntry>& entries() const { return entries_; }

    const DiGraph& graph(int index) const {  // 1-based
        if (index < 1 || static_cast<std::size_t>(index) > graphs_.size())
            throw DomainError("graph index out of range");
        return graphs_[static_cast<std::size_t>(index) - 1];
    }

    /// Index of the active graph at time t (right-continuous).
    int sigma_at(double t) const {
        if (t < 0.0) throw DomainError("switching signal queried at negative time");
        double tau = t;
        if (periodic()) {
            tau = std::fmod(t, period_);
        } else if (tau >= entries_.back().start) {
            return entries_.back().graph_index;
        }
        auto it = std::upper_bound(entries_.begin(), entries_.end(), tau,
                                   [](double v, const ScheduleEntry& e) { return v < e.start; });
        --it;
        return it->graph_index;
    }

    const DiGraph& graph_at(double t) const { return graph(sigma_at(t)); }

    /// Smallest switching instant strictly greater than t; +inf when none.
    double next_switch_after(double t) const {
        if (t < 0.0) throw DomainError("switching signal queried at negative time");
        if (periodic()) {
            const double base = std::floor(t / period_) * period_;
            for (const auto& e : entries_) {
                const double cand = base + e.start;
                if (cand > t) return cand;
            }
            return base + period_;
        }
        auto it = std::upper_bound(entries_.begin(), entries_.end(), t,
                                   [](double v, const ScheduleEntry& e) { return v < e.start; });
        if (it == entries_.end()) return std::numeric_limits<double>::infinity();
        return it->start;
    }

    /// Union of every graph active at some point of [a, b).
    DiGraph union_over(double a, double b) const {
        if (!(b > a) || a < 0.0) throw DomainError("union_over requires 0 <= a < b");
        if (periodic() && b - a >= period_) {
            DiGraph u = graph(entries_.front().graph_index);
            for (std::size_t k = 1; k < entries_.size(); ++k)
                u = union_of(u, graph(entries_[k].graph_index));
            return u;
        }
        DiGraph u = graph_at(a);
        double t = next_switch_after(a);
        while (t < b) {
            u = union_of(u, graph_at(t));
            t = next_switch_after(t);
        }
        return u;
    }

    /// Time of the k-th switching instant (k = 0 is time 0). For an aperiodic
    /// schedule, k equal to the entry count addresses the notional end of the
    /// recorded horizon, one dwell after the last start.
    double instant_time(std::size_t k) const {
        if (periodic()) {
            const std::size_t L = entries_.size();
            return static_cast<double>(k / L) * period_ + entries_[k % L].start;
        }
        if (k < entries_.size()) return entries_[k].start;
        if (k == entries_.size()) return entries_.back().start + dwell_;
        throw DomainError("switching instant index out of range");
    }

private:
    std::vector<DiGraph> graphs_;
    std::vector<ScheduleEntry> entries_;
    double dwell_;
    double period_;
};

/// Partition of time into contiguous windows [t_{i_k}, t_{i_{k+1}}) whose
/// union graphs are each expected to connect every follower to the leader.
/// Instants index the schedule's switching sequence; every window must be
/// shorter than the horizon bound nu.
struct JointWindow {
    double nu = 0.0;
    std::vector<std::size_t> instants;
};

inline JointWindow make_joint_window(const SwitchingSchedule& s, double nu,
                                     std::vector<std::size_t> instants) {
    if (!(nu > 0.0)) throw ConfigError("window horizon nu must be positive");
    if (instants.size() < 2) throw ConfigError("a window partition needs at least two instants");
    for (std::size_t k = 0; k + 1 < instants.size(); ++k) {
        if (instants[k + 1] <= instants[k])
            throw ConfigError("window instants must strictly increase");
        const double len = s.instant_time(instants[k + 1]) - s.instant_time(instants[k]);
        if (!(len < nu))
            throw ConfigError("window " + std::to_string(k) + " has length " + std::to_string(len) +
                              ", not below the horizon bound " + std::to_string(nu));
    }
    return JointWindow{nu, std::move(instants)};
}

/// Default partition: one full cycle for periodic schedules, the whole
/// recorded horizon for aperiodic ones.
inline JointWindow default_joint_window(const SwitchingSchedule& s) {
    if (s.periodic())
        return make_joint_window(s, s.period() + s.dwell(), {0, s.entry_count()});
    const std::size_t end = s.entry_count();
    const double len = s.instant_time(end) - s.instant_time(0);
    return make_joint_window(s, len + s.dwell(), {0, end});
}

struct ConnectivityReport {
    bool satisfied = true;
    std::size_t failing_window = 0;
    double window_start = 0.0;
    double window_end = 0.0;
    std::vector<int> unreachable;
    std::string message;
};

/// Checks that the union graph of every window reaches all followers from the
/// leader (a leader-rooted spanning tree exists in each union).
inline ConnectivityReport check_joint_connectivity(const SwitchingSchedule& s,
                                                   const JointWindow& w) {
    ConnectivityReport rep;
    for (std::size_t k = 0; k + 1 < w.instants.size(); ++k) {
        const double a = s.instant_time(w.instants[k]);
        const double b = s.instant_time(w.instants[k + 1]);
        const DiGraph u = s.union_over(a, b);
        std::vector<int> missing = u.unreachable_from_leader();
        if (!missing.empty()) {
            rep.satisfied = false;
            rep.failing_window = k;
            rep.window_start = a;
            rep.window_end = b;
            rep.unreachable = std::move(missing);
            std::string nodes;
            for (std::size_t q = 0; q < rep.unreachable.size(); ++q)
                nodes += (q ? ", " : "") + std::to_string(rep.unreachable[q]);
            rep.message = "window " + std::to_string(k) + " covering [" + std::to_string(a) +
                          ", " + std::to_string(b) + ") leaves node" +
                          (rep.unreachable.size() == 1 ? " " : "s ") + nodes +
                          " unreachable from the leader";
            return rep;
        }
    }
    rep.message = "every window's union graph reaches all followers from the leader";
    return rep;
}

/// True when every graph of the schedule has an undirected follower subgraph.
inline bool check_followers_undirected(const SwitchingSchedule& s) {
    for (std::size_t g = 1; g <= s.graph_count(); ++g)
        if (!s.graph(static_cast<int>(g)).followers_undirected()) return false;
    return true;
}

}  // namespace agentsync
