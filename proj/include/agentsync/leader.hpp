#pragma once

// Leader (exosystem) v0' = S v0, y0 = F v0, plus the spectral analysis and
// observer gain design built on it. The designed gain L0 = mu0 * R * F^T uses
// a positive definite R solving R S + S^T R = 0, which exists exactly when S
// is neutrally stable: every eigenvalue on the imaginary axis and semi-simple.

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agentsync/errors.hpp"
#include "agentsync/linalg.hpp"

namespace agentsync {

struct LeaderSystem {
    Eigen::MatrixXd S;
    Eigen::RowVectorXd F;
    Eigen::VectorXd v0_init;

    int n() const { return static_cast<int>(S.rows()); }

    void validate() const {
        if (S.rows() < 1 || S.rows() != S.cols())
            throw ConfigError("leader dynamics matrix must be square and non-empty");
        if (F.cols() != S.rows())
            throw ConfigError("leader output row must match the state dimension " +
                              std::to_string(S.rows()));
        if (v0_init.size() != S.rows())
            throw ConfigError("leader initial state must match the state dimension " +
                              std::to_string(S.rows()));
    }
};

/// Shared tolerance for spectral decisions, relative to the matrix scale.
inline double spectrum_tolerance(const Eigen::MatrixXd& S) {
    return 1e-9 * (1.0 + S.norm());
}

namespace detail {

inline Eigen::Index rank_with_tolerance(const Eigen::MatrixXcd& M, double tol) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
    const auto& sv = svd.singularValues();
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > tol) ++rank;
    return rank;
}

}  // namespace detail

struct StabilityReport {
    std::vector<std::complex<double>> eigenvalues;
    bool marginally_stable = false;  // no eigenvalue in the open right half plane,
                                     // imaginary-axis eigenvalues semi-simple
    bool neutrally_stable = false;   // marginally stable with the whole spectrum on the axis
    bool detectable = false;         // filled by analyze_leader
};

/// Spectral classification of the leader dynamics.
inline StabilityReport check_marginal_stability(const Eigen::MatrixXd& S) {
    if (S.rows() != S.cols() || S.rows() < 1)
        throw DomainError("stability check requires a square non-empty matrix");
    Eigen::EigenSolver<Eigen::MatrixXd> es(S);
    if (es.info() != Eigen::Success) throw NumericError("eigenvalue computation failed");

    StabilityReport rep;
    const auto eigs = es.eigenvalues();
    rep.eigenvalues.assign(eigs.data(), eigs.data() + eigs.size());

    const double tol = spectrum_tolerance(S);
    const Eigen::Index n = S.rows();
    bool semi_simple_axis = true;
    bool any_right = false;
    bool all_on_axis = true;

    // Eigenvalues within this radius count as one cluster; it absorbs the
    // solver's splitting of repeated roots.
    const double cluster_radius = 1e-6 * (1.0 + S.norm());
    std::vector<char> done(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::complex<double> lam = eigs(i);
        if (lam.real() > tol) any_right = true;
        if (std::abs(lam.real()) > tol) all_on_axis = false;
        if (done[static_cast<std::size_t>(i)] || std::abs(lam.real()) > tol) continue;
        int alg = 0;
        std::complex<double> centroid(0.0, 0.0);
        for (Eigen::Index j = 0; j < n; ++j) {
            if (std::abs(eigs(j) - lam) <= cluster_radius) {
                done[static_cast<std::size_t>(j)] = 1;
                centroid += eigs(j);
                ++alg;
            }
        }
        centroid /= static_cast<double>(alg);
        Eigen::MatrixXcd shifted = S.cast<std::complex<double>>();
        shifted.diagonal().array() -= centroid;
        const Eigen::Index geo = n - detail::rank_with_tolerance(shifted, tol);
        if (geo < alg) semi_simple_axis = false;
    }

    rep.marginally_stable = !any_right && semi_simple_axis;
    rep.neutrally_stable = rep.marginally_stable && all_on_axis;
    return rep;
}

/// Rank test for detectability of (F, S): for every eigenvalue with
/// non-negative real part, [S - lambda I; F] must have full column rank.
inline bool check_detectability(const Eigen::RowVectorXd& F, const Eigen::MatrixXd& S) {
    if (S.rows() != S.cols() || F.cols() != S.rows())
        throw DomainError("detectability check requires F matching a square S");
    Eigen::EigenSolver<Eigen::MatrixXd> es(S);
    if (es.info() != Eigen::Success) throw NumericError("eigenvalue computation failed");
    const double tol = spectrum_tolerance(S);
    const Eigen::Index n = S.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::complex<double> lam = es.eigenvalues()(i);
        if (lam.real() < -tol) continue;
        Eigen::MatrixXcd M(n + 1, n);
        M.topRows(n) = S.cast<std::complex<double>>();
        M.topRows(n).diagonal().array() -= lam;
        M.bottomRows(1) = F.cast<std::complex<double>>();
        if (detail::rank_with_tolerance(M, tol) < n) return false;
    }
    return true;
}

inline StabilityReport analyze_leader(const LeaderSystem& leader) {
    leader.validate();
    StabilityReport rep = check_marginal_stability(leader.S);
    rep.detectable = check_detectability(leader.F, leader.S);
    return rep;
}

/// Positive definite solution of R S + S^T R = 0, normalized so the largest
/// diagonal entry is 1. Requires a neutrally stable S.
inline Eigen::MatrixXd solve_neutral_lyapunov(const Eigen::MatrixXd& S) {
    const StabilityReport rep = check_marginal_stability(S);
    if (!rep.neutrally_stable)
        throw NumericError("the neutral Lyapunov equation needs a neutrally stable matrix");

    const Eigen::Index n = S.rows();
    // Seed: for S = V D V^{-1} with D on the axis, Re((V V^H)^{-1}) solves the
    // equation and is positive definite.
    Eigen::EigenSolver<Eigen::MatrixXd> es(S);
    if (es.info() != Eigen::Success) throw NumericError("eigenvalue computation failed");
    const Eigen::MatrixXcd V = es.eigenvectors();
    Eigen::MatrixXd seed = (V * V.adjoint()).inverse().real();
    seed = 0.5 * (seed + seed.transpose()).eval();

    // Project the seed onto the nullspace of the symmetric-coefficient
    // operator E -> E S + S^T E to clean up rounding in the eigenbasis.
    const Eigen::Index dim = n * (n + 1) / 2;
    Eigen::MatrixXd A(n * n, dim);
    Eigen::VectorXd seed_vec(dim);
    {
        Eigen::Index col = 0;
        Eigen::MatrixXd E(n, n);
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p; q < n; ++q, ++col) {
                E.setZero();
                E(p, q) = 1.0;
                E(q, p) = 1.0;
                const Eigen::MatrixXd img = E * S + S.transpose() * E;
                A.col(col) = Eigen::Map<const Eigen::VectorXd>(img.data(), n * n);
                seed_vec(col) = seed(p, q);
            }
        }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double null_tol = 1e-10 * (sv.size() > 0 ? sv(0) : 1.0) + 1e-14;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > null_tol) ++rank;
    if (rank >= dim)
        throw NumericError("the neutral Lyapunov equation has no nonzero solution");
    const Eigen::MatrixXd basis = svd.matrixV().rightCols(dim - rank);
    const Eigen::VectorXd proj = basis * (basis.transpose() * seed_vec);

    Eigen::MatrixXd R(n, n);
    {
        Eigen::Index col = 0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p; q < n; ++q, ++col) {
                R(p, q) = proj(col);
                R(q, p) = proj(col);
            }
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> sa(R);
    if (sa.info() != Eigen::Success) throw NumericError("eigenvalue computation failed");
    const double max_eig = sa.eigenvalues().maxCoeff();
    if (!(max_eig > 0.0) || sa.eigenvalues().minCoeff() <= 1e-9 * max_eig)
        throw NumericError("no positive definite solution of the neutral Lyapunov equation");
    const double residual = (R * S + S.transpose() * R).norm();
    if (residual > 1e-8 * (1.0 + S.norm()) * R.norm())
        throw NumericError("neutral Lyapunov residual too large: " + std::to_string(residual));
    R /= R.diagonal().maxCoeff();
    return R;
}

/// Observer output-injection gain L0 = mu0 * R * F^T for a neutrally stable
/// leader. Requires mu0 > 0.
inline Eigen::VectorXd design_gain(const LeaderSystem& leader, double mu0) {
    leader.validate();
    if (!(mu0 > 0.0)) throw ConfigError("gain scale mu0 must be positive");
    const Eigen::MatrixXd R = solve_neutral_lyapunov(leader.S);
    return mu0 * R * leader.F.transpose();
}

struct LeaderSample {
    Eigen::VectorXd v0;
    double y0 = 0.0;
    std::vector<double> derivatives;  // derivatives[k] = k-th derivative of y0
};

/// Leader state and output derivatives at time t, integrated on a fixed grid
/// of width h with a fourth-order Runge-Kutta scheme.
inline LeaderSample leader_flow(const LeaderSystem& leader, double t, double h, int max_deriv) {
    leader.validate();
    if (t < 0.0) throw DomainError("leader flow queried at negative time");
    if (!(h > 0.0)) throw DomainError("leader flow requires a positive step");
    if (max_deriv < 0) throw DomainError("leader flow requires a non-negative derivative order");

    const Eigen::MatrixXd& S = leader.S;
    Eigen::VectorXd v = leader.v0_init;
    auto rk4 = [&S](Eigen::VectorXd& state, double dt) {
        const Eigen::VectorXd k1 = S * state;
        const Eigen::VectorXd k2 = S * (state + 0.5 * dt * k1);
        const Eigen::VectorXd k3 = S * (state + 0.5 * dt * k2);
        const Eigen::VectorXd k4 = S * (state + dt * k3);
        state += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    };
    const long full = static_cast<long>(std::floor(t / h));
    for (long i = 0; i < full; ++i) rk4(v, h);
    const double rem = t - static_cast<double>(full) * h;
    if (rem > 1e-12 * (1.0 + t)) rk4(v, rem);

    LeaderSample out;
    out.v0 = v;
    out.y0 = (leader.F * v).value();
    out.derivatives.resize(static_cast<std::size_t>(max_deriv) + 1);
    Eigen::VectorXd w = v;
    for (int k = 0; k <= max_deriv; ++k) {
        out.derivatives[static_cast<std::size_t>(k)] = (leader.F * w).value();
        w = S * w;
    }
    return out;
}

}  // namespace agentsync
