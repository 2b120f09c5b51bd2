#pragma once

// Objective terms over the propagated probabilities. Each operation returns an
// entropy-like quantity with the sign stated on it; only total_loss assembles
// the minimized objective:
//   balanced:   lambda3*CE + lambda2*Hcond(P^q)  - lambda1*H(pbar)
//   imbalanced: lambda3*CE + lambda2*Halpha(P^q) - lambda1*Halpha(pbar)
// Natural logarithms throughout; logs floored at log(1e-12).

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "am/propagate.hpp"

namespace am {

constexpr double kProbFloor = 1e-12;

enum class LossMode { Balanced, Imbalanced };

struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda3 = 1.0;
    double alpha = 2.0;  // imbalanced only; > 0, != 1
    LossMode mode = LossMode::Imbalanced;
};

namespace detail {
inline double floored_log(double p) { return std::log(p < kProbFloor ? kProbFloor : p); }
}

/// Average cross-entropy over labeled support columns.
inline double cross_entropy_support(const Eigen::MatrixXd& p_s, const Eigen::MatrixXd& y_s) {
    if (p_s.rows() != y_s.rows() || p_s.cols() != y_s.cols())
        throw std::invalid_argument("cross_entropy_support: shape mismatch");
    double sum = 0.0;
    for (Eigen::Index j = 0; j < p_s.cols(); ++j)
        for (Eigen::Index i = 0; i < p_s.rows(); ++i)
            if (y_s(i, j) != 0.0) sum += y_s(i, j) * detail::floored_log(p_s(i, j));
    return -sum / static_cast<double>(p_s.cols());
}

/// Mean per-query Shannon entropy, >= 0. 0*log(0) is 0.
inline double conditional_entropy(const Eigen::MatrixXd& p_q) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < p_q.cols(); ++j)
        for (Eigen::Index i = 0; i < p_q.rows(); ++i)
            sum += p_q(i, j) * detail::floored_log(p_q(i, j));
    return -sum / static_cast<double>(p_q.cols());
}

/// Shannon entropy H(pbar) of the mean query distribution, >= 0.
inline double marginal_entropy(const Eigen::MatrixXd& p_q) {
    const Eigen::VectorXd pbar = p_q.rowwise().mean();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pbar.size(); ++i) sum += pbar[i] * detail::floored_log(pbar[i]);
    return -sum;
}

/// Mean per-query alpha-entropy: -(1/(alpha-1)) * mean_i sum_j p_ji^alpha.
/// Negative for alpha > 1; differences converge to Shannon differences as
/// alpha -> 1.
inline double alpha_conditional(const Eigen::MatrixXd& p_q, double alpha) {
    if (alpha <= 0.0 || alpha == 1.0)
        throw std::invalid_argument("alpha entropies need alpha > 0, alpha != 1");
    const double sum = p_q.array().pow(alpha).sum() / static_cast<double>(p_q.cols());
    return -sum / (alpha - 1.0);
}

/// Alpha-entropy of the mean query distribution: -(1/(alpha-1)) * sum_j pbar_j^alpha.
inline double alpha_marginal(const Eigen::MatrixXd& p_q, double alpha) {
    if (alpha <= 0.0 || alpha == 1.0)
        throw std::invalid_argument("alpha entropies need alpha > 0, alpha != 1");
    const Eigen::VectorXd pbar = p_q.rowwise().mean();
    return -pbar.array().pow(alpha).sum() / (alpha - 1.0);
}

inline double total_loss(const Eigen::MatrixXd& p_s, const Eigen::MatrixXd& p_q,
                         const Eigen::MatrixXd& y_s, const LossWeights& w) {
    const double ce = cross_entropy_support(p_s, y_s);
    if (w.mode == LossMode::Balanced)
        return w.lambda3 * ce + w.lambda2 * conditional_entropy(p_q) -
               w.lambda1 * marginal_entropy(p_q);
    return w.lambda3 * ce + w.lambda2 * alpha_conditional(p_q, w.alpha) -
           w.lambda1 * alpha_marginal(p_q, w.alpha);
}

inline double total_loss(const ProbTriplet& p, const Eigen::MatrixXd& y_s, const LossWeights& w) {
    return total_loss(p.p_s, p.p_q, y_s, w);
}

/// One-hot encode a label vector into an N x L matrix.
inline Eigen::MatrixXd one_hot(const std::vector<int>& labels, int n_classes) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n_classes, static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes)
            throw std::invalid_argument("one_hot: label out of range");
        y(labels[i], static_cast<Eigen::Index>(i)) = 1.0;
    }
    return y;
}

}  // namespace am
