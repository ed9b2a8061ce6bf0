#pragma once

// Per-agent control algebra. The filtered reference
//   p_i = F S_i^{r-1} v_i - sum_{q=1}^{r-1} beta_q (x_{r-q} - F S_i^{r-1-q} v_i)
// turns tracking into keeping the sliding variable s_i = x_r - p_i at zero.
// Its analytic rate never reads the leader output or its derivatives; the
// observer innovations supply the time dependence of the estimates.

#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agentsync/errors.hpp"
#include "agentsync/linalg.hpp"
#include "agentsync/observer.hpp"
#include "agentsync/plant.hpp"

namespace agentsync {

/// Companion realization of the error chain: eigenvalues of A are the roots of
/// lambda^{r-1} + beta_1 lambda^{r-2} + ... + beta_{r-1}.
struct CompanionForm {
    Eigen::MatrixXd A;
    Eigen::VectorXd B;

    int dim() const { return static_cast<int>(A.rows()); }
};

inline CompanionForm companion_from_beta(const Eigen::VectorXd& beta) {
    const Eigen::Index p = beta.size();
    CompanionForm c;
    c.A = Eigen::MatrixXd::Zero(p, p);
    c.B = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i + 1 < p; ++i) c.A(i, i + 1) = 1.0;
    for (Eigen::Index j = 0; j < p; ++j) c.A(p - 1, j) = -beta(p - 1 - j);
    if (p > 0) c.B(p - 1) = 1.0;
    return c;
}

/// Companion form, rejecting coefficient vectors whose polynomial is not
/// Hurwitz. An empty beta (order 1) is trivially accepted.
inline CompanionForm require_hurwitz_beta(const Eigen::VectorXd& beta) {
    CompanionForm c = companion_from_beta(beta);
    if (c.dim() == 0) return c;
    Eigen::EigenSolver<Eigen::MatrixXd> es(c.A);
    if (es.info() != Eigen::Success) throw NumericError("eigenvalue computation failed");
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const std::complex<double> root = es.eigenvalues()(i);
        if (root.real() >= -1e-9)
            throw ConfigError("beta polynomial not Hurwitz; root " + std::to_string(root.real()) +
                              (root.imag() < 0 ? " - " : " + ") +
                              std::to_string(std::fabs(root.imag())) +
                              "i has non-negative real part");
    }
    return c;
}

inline double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// Boundary-layer smoothing of sgn: s / max(|s|, eps). eps <= 0 selects the
/// exact sign function.
inline double sat(double s, double eps) {
    if (eps <= 0.0) return sgn(s);
    return s / std::max(std::fabs(s), eps);
}

namespace detail {

// w[k] = S_i^k v_i for k = 0..kmax.
inline void predicted_states(const Eigen::MatrixXd& S_i, const Eigen::VectorXd& v_i, int kmax,
                             std::vector<Eigen::VectorXd>& w) {
    w.resize(static_cast<std::size_t>(kmax) + 1);
    w[0] = v_i;
    for (int k = 1; k <= kmax; ++k)
        w[static_cast<std::size_t>(k)] = S_i * w[static_cast<std::size_t>(k) - 1];
}

}  // namespace detail

/// Filtered reference p_i for the top chain state. For order 1 it reduces to
/// the predicted output F v_i.
inline double filtered_reference(const FollowerSpec& spec, const Eigen::RowVectorXd& F,
                                 const Eigen::VectorXd& x, const Eigen::VectorXd& v_i,
                                 const Eigen::MatrixXd& S_i) {
    const int r = spec.order;
    std::vector<Eigen::VectorXd> w;
    detail::predicted_states(S_i, v_i, r - 1, w);
    double p = (F * w[static_cast<std::size_t>(r) - 1]).value();
    for (int q = 1; q <= r - 1; ++q)
        p -= spec.beta(q - 1) *
             (x(r - 1 - q) - (F * w[static_cast<std::size_t>(r - 1 - q)]).value());
    return p;
}

inline double sliding_variable(const FollowerSpec& spec, const Eigen::VectorXd& x,
                               double p_ref) {
    return x(spec.order - 1) - p_ref;
}

/// Analytic time derivative of the filtered reference along the closed loop.
/// Consumes only local quantities: the chain states, the estimates, and the
/// observer innovations (never the leader output or its derivatives).
inline double filtered_reference_rate(const FollowerSpec& spec, const Eigen::RowVectorXd& F,
                                      const Eigen::VectorXd& x, const Eigen::VectorXd& v_i,
                                      const Eigen::MatrixXd& S_i, const CouplingErrors& ce) {
    const int r = spec.order;
    std::vector<Eigen::VectorXd> w;
    detail::predicted_states(S_i, v_i, r, w);
    double pd = (F * w[static_cast<std::size_t>(r)]).value();
    for (int q = 1; q <= r - 1; ++q)
        pd -= spec.beta(q - 1) * (x(r - q) - (F * w[static_cast<std::size_t>(r - q)]).value());
    for (int k = 0; k <= r - 1; ++k) {
        const double beta_k = k == 0 ? 1.0 : spec.beta(k - 1);
        pd += beta_k * (F * innovation_term(S_i, v_i, ce, r - 1 - k)).value();
    }
    return pd;
}

/// Certainty-equivalence control u = f^T theta_hat - k s + p_ref_rate.
inline double baseline_control(const FollowerSpec& spec, const Eigen::VectorXd& f_vals,
                               const Eigen::VectorXd& theta_hat, double s,
                               double p_ref_rate) {
    return f_vals.dot(theta_hat) - spec.k_gain * s + p_ref_rate;
}

/// Adds the switching disturbance compensation -sat(s) * D_hat.
inline double rejection_control(const FollowerSpec& spec, const Eigen::VectorXd& f_vals,
                                const Eigen::VectorXd& theta_hat, double D_hat, double s,
                                double p_ref_rate, double epsilon) {
    return f_vals.dot(theta_hat) - sat(s, epsilon) * D_hat - spec.k_gain * s + p_ref_rate;
}

struct AdaptationRates {
    Eigen::VectorXd theta_hat_dot;
    double D_hat_dot = 0.0;
};

/// Gradient adaptation theta_hat' = -Lambda^{-1} f s; with the disturbance
/// estimator active, D_hat' = sat(s) * s (equal to |s| for the exact sign).
inline AdaptationRates adaptation_rates(const Eigen::LLT<Eigen::MatrixXd>& Lambda_llt,
                                        const Eigen::VectorXd& f_vals, double s,
                                        bool estimate_disturbance, double epsilon) {
    AdaptationRates rates;
    rates.theta_hat_dot = f_vals.size() > 0
                              ? Eigen::VectorXd(-Lambda_llt.solve(f_vals * s))
                              : Eigen::VectorXd(0);
    rates.D_hat_dot = estimate_disturbance ? sat(s, epsilon) * s : 0.0;
    return rates;
}

/// Diagnostic forcing of the tracking-error chain,
///   u_bar = s - sum_{q=0}^{r-1} beta_q (y0^{(r-1-q)} - F S_i^{r-1-q} v_i),
/// with beta_0 = 1. Unlike the control path this consumes true leader output
/// derivatives, so it never feeds back into the loop.
inline double error_chain_forcing(const FollowerSpec& spec, const Eigen::RowVectorXd& F,
                                  double s, const Eigen::VectorXd& v_i,
                                  const Eigen::MatrixXd& S_i,
                                  std::span<const double> y0_derivs) {
    const int r = spec.order;
    if (y0_derivs.size() < static_cast<std::size_t>(r))
        throw DomainError("error_chain_forcing needs leader derivatives up to order r-1");
    std::vector<Eigen::VectorXd> w;
    detail::predicted_states(S_i, v_i, r - 1, w);
    double ub = s;
    for (int q = 0; q <= r - 1; ++q) {
        const double beta_q = q == 0 ? 1.0 : spec.beta(q - 1);
        ub -= beta_q * (y0_derivs[static_cast<std::size_t>(r - 1 - q)] -
                        (F * w[static_cast<std::size_t>(r - 1 - q)]).value());
    }
    return ub;
}

/// One agent's contribution to the composite energy
///   1/2 (s^2 + theta_tilde^T Lambda theta_tilde [+ D_tilde^2]).
inline double lyapunov_term(double s, const Eigen::VectorXd& theta_tilde,
                            const Eigen::MatrixXd& Lambda, double D_tilde, bool with_D) {
    double v = s * s + theta_tilde.dot(Lambda * theta_tilde);
    if (with_D) v += D_tilde * D_tilde;
    return 0.5 * v;
}

/// Cumulative trapezoidal integral of the weighted squared sliding values;
/// element j approximates the integral up to the j-th sample. A bounded total
/// with vanishing tail increments is the discrete signature of s -> 0.
inline std::vector<double> dissipation_integral(std::span<const double> weighted_s_sq,
                                                double dt) {
    if (!(dt > 0.0)) throw DomainError("dissipation integral requires a positive sample spacing");
    std::vector<double> W(weighted_s_sq.size(), 0.0);
    for (std::size_t j = 1; j < weighted_s_sq.size(); ++j)
        W[j] = W[j - 1] + 0.5 * dt * (weighted_s_sq[j - 1] + weighted_s_sq[j]);
    return W;
}

}  // namespace agentsync
