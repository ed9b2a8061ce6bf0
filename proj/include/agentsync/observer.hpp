#pragma once

// Adaptive distributed observer. Each follower carries estimates (v_i, S_i,
// L_i) of the leader state, dynamics, and injection gain, driven by neighbor
// disagreement over the active graph:
//   v_i' = S_i v_i + e_v,i
//   S_i' = e_S,i = mu1 * sum_j (S_j - S_i)
//   L_i' = mu2 * sum_j (L_j - L_i)
// with e_v,i = L_i * sum_j F (v_j - v_i) in the output-coupled mode. The
// state-coupled variant uses e_v,i = mu_v * sum_j (v_j - v_i) and freezes L_i.
// Index 0 of a field holds the leader boundary data (v0, S, L0).

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "agentsync/errors.hpp"
#include "agentsync/graph.hpp"
#include "agentsync/linalg.hpp"

namespace agentsync {

struct ObserverGains {
    enum class Mode { output_coupled, state_coupled };
    double mu1 = 1.0;
    double mu2 = 1.0;
    Mode mode = Mode::output_coupled;
    double mu_v = 1.0;  // state-coupled consensus gain
};

/// Non-owning view of every node's observer data; index 0 is the leader.
struct ObserverField {
    std::vector<Eigen::Ref<const Eigen::VectorXd>> v;
    std::vector<Eigen::Ref<const Eigen::MatrixXd>> S;
    std::vector<Eigen::Ref<const Eigen::VectorXd>> L;

    std::size_t size() const { return v.size(); }
};

/// Neighbor-disagreement terms entering the estimate dynamics.
struct CouplingErrors {
    Eigen::VectorXd e_v;  // innovation entering v_i'
    Eigen::MatrixXd e_S;  // right-hand side of S_i'
};

inline CouplingErrors coupling_errors(const ObserverField& field, const Eigen::RowVectorXd& F,
                                      const DiGraph& graph, const ObserverGains& gains,
                                      int agent) {
    if (agent < 1 || static_cast<std::size_t>(agent) >= field.size())
        throw DomainError("coupling_errors: agent index out of range");
    const auto ai = static_cast<std::size_t>(agent);
    const Eigen::Index n = field.v[ai].size();

    CouplingErrors ce;
    ce.e_v = Eigen::VectorXd::Zero(n);
    ce.e_S = Eigen::MatrixXd::Zero(n, n);

    double output_gap = 0.0;
    for (int j : graph.in_neighbors(agent)) {
        const auto js = static_cast<std::size_t>(j);
        if (gains.mode == ObserverGains::Mode::output_coupled)
            output_gap += (F * (field.v[js] - field.v[ai])).value();
        else
            ce.e_v += field.v[js] - field.v[ai];
        ce.e_S += field.S[js] - field.S[ai];
    }
    if (gains.mode == ObserverGains::Mode::output_coupled)
        ce.e_v = field.L[ai] * output_gap;
    else
        ce.e_v *= gains.mu_v;
    ce.e_S *= gains.mu1;
    return ce;
}

struct ObserverDeriv {
    Eigen::VectorXd v_dot;
    Eigen::MatrixXd S_dot;
    Eigen::VectorXd L_dot;
};

inline ObserverDeriv observer_rhs(const ObserverField& field, const DiGraph& graph,
                                  const ObserverGains& gains, int agent,
                                  const CouplingErrors& ce) {
    const auto ai = static_cast<std::size_t>(agent);
    ObserverDeriv d;
    d.v_dot = field.S[ai] * field.v[ai] + ce.e_v;
    d.S_dot = ce.e_S;
    d.L_dot = Eigen::VectorXd::Zero(field.L[ai].size());
    if (gains.mode == ObserverGains::Mode::output_coupled) {
        for (int j : graph.in_neighbors(agent))
            d.L_dot += field.L[static_cast<std::size_t>(j)] - field.L[ai];
        d.L_dot *= gains.mu2;
    }
    return d;
}

inline ObserverDeriv observer_rhs(const ObserverField& field, const Eigen::RowVectorXd& F,
                                  const DiGraph& graph, const ObserverGains& gains, int agent) {
    return observer_rhs(field, graph, gains, agent,
                        coupling_errors(field, F, graph, gains, agent));
}

/// Innovation of the k-th predicted output derivative: the derivative of
/// S_i^k v_i along the estimate dynamics minus its drift S_i^{k+1} v_i,
///   k = 0:  e_v
///   k >= 1: k S_i^{k-1} e_S v_i + S_i^k e_v.
inline Eigen::VectorXd innovation_term(const Eigen::MatrixXd& S_i, const Eigen::VectorXd& v_i,
                                       const CouplingErrors& ce, int k) {
    if (k < 0) throw DomainError("innovation_term requires k >= 0");
    if (k == 0) return ce.e_v;
    const Eigen::MatrixXd P = matrix_power(S_i, k - 1);
    return static_cast<double>(k) * P * (ce.e_S * v_i) + P * (S_i * ce.e_v);
}

struct ObserverErrors {
    double v_err = 0.0;
    double S_err = 0.0;
    double L_err = 0.0;
};

inline ObserverErrors observer_error_metrics(const Eigen::VectorXd& v_i,
                                             const Eigen::MatrixXd& S_i,
                                             const Eigen::VectorXd& L_i,
                                             const Eigen::VectorXd& v0,
                                             const Eigen::MatrixXd& S,
                                             const Eigen::VectorXd& L0) {
    ObserverErrors e;
    e.v_err = (v_i - v0).norm();
    e.S_err = (S_i - S).norm();
    e.L_err = (L_i - L0).norm();
    return e;
}

}  // namespace agentsync
