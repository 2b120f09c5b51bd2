#pragma once

// Closed-form label propagation Z = Y (I - beta*𝒲)^{-1} and the conversion of
// manifold class similarities to per-example probability distributions.

#include <Eigen/Dense>
#include <Eigen/LU>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "am/errors.hpp"

namespace am {

/// Y = (I_N | 0_{N x L} | 0_{N x M}): one-hot columns for the class centroids,
/// zero for support and query embeddings.
inline Eigen::MatrixXd label_matrix(int n, int l, int m) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, n + l + m);
    y.leftCols(n).setIdentity();
    return y;
}

/// Solve of the propagation system. The LU factorization of M = I - beta*𝒲 is
/// retained for the adjoint pass.
struct Propagation {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;  // factors M
    Eigen::MatrixXd z;                        // N x T
    double beta = 0.0;
};

inline Propagation label_propagate(const Eigen::MatrixXd& y, const Eigen::MatrixXd& w_norm,
                                   double beta) {
    if (beta < 0.0 || beta >= 1.0)
        throw std::invalid_argument("label_propagate: beta must lie in [0,1)");
    const Eigen::Index t = w_norm.rows();
    Propagation p;
    p.beta = beta;
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(t, t) - beta * w_norm;
    p.lu.compute(m);
    if ((p.lu.matrixLU().diagonal().array().abs() < 1e-300).any())
        throw NumericError("label_propagate: singular system (I - beta*W)");
    // Z M = Y  <=>  M^T Z^T = Y^T.
    const Eigen::MatrixXd zt = p.lu.transpose().solve(y.transpose());
    p.z = zt.transpose();
    if (!p.z.allFinite()) throw NumericError("label_propagate: non-finite solution");
    return p;
}

/// P split into centroid / support / query blocks; z kept for the adjoint.
struct ProbTriplet {
    Eigen::MatrixXd p_c;  // N x N
    Eigen::MatrixXd p_s;  // N x L
    Eigen::MatrixXd p_q;  // N x M
    Eigen::MatrixXd z;    // N x T
};

/// Column-wise softmax of tau * z, stabilized by max subtraction.
inline ProbTriplet class_softmax(const Eigen::MatrixXd& z, double tau, int n, int l, int m) {
    if (tau <= 0.0) throw std::invalid_argument("class_softmax: tau must be positive");
    if (!z.allFinite()) throw NumericError("class_softmax: non-finite input");
    Eigen::MatrixXd p(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const Eigen::VectorXd col = tau * z.col(j);
        const Eigen::VectorXd e = (col.array() - col.maxCoeff()).exp();
        p.col(j) = e / e.sum();
    }
    ProbTriplet out;
    out.p_c = p.leftCols(n);
    out.p_s = p.middleCols(n, l);
    out.p_q = p.rightCols(m);
    out.z = z;
    return out;
}

/// Argmax per query column; ties go to the lower class index.
inline std::vector<int> predict_labels(const Eigen::MatrixXd& p_q) {
    std::vector<int> labels(static_cast<std::size_t>(p_q.cols()));
    for (Eigen::Index j = 0; j < p_q.cols(); ++j) {
        int best = 0;
        for (Eigen::Index i = 1; i < p_q.rows(); ++i)
            if (p_q(i, j) > p_q(best, j)) best = static_cast<int>(i);
        labels[static_cast<std::size_t>(j)] = best;
    }
    return labels;
}

}  // namespace am
