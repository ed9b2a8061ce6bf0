#pragma once

#include <Eigen/Dense>

#include "agentsync/errors.hpp"

namespace agentsync {

/// M^k by repeated multiplication. Requires a square M and k >= 0.
inline Eigen::MatrixXd matrix_power(const Eigen::MatrixXd& M, int k) {
    if (M.rows() != M.cols()) throw DomainError("matrix_power: matrix must be square");
    if (k < 0) throw DomainError("matrix_power: negative exponent");
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(M.rows(), M.cols());
    for (int i = 0; i < k; ++i) P = P * M;
    return P;
}

/// Kronecker product A (x) B.
inline Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    Eigen::MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return K;
}

}  // namespace agentsync
