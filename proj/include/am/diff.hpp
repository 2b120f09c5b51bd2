#pragma once

// Reverse-mode differentiation of the episode loss with respect to
// Phi = {C, g_raw, b_raw}, through the softmax, the propagation solve, degree
// normalization, gating, affinity, and the centroid columns of V.
//
// The adjoint of the linear solve follows d(M^{-1}) = -M^{-1} dM M^{-1} with
// M = I - beta*𝒲 and Z = Y M^{-1}:
//   𝒲adj = beta * Z^T (Zadj M^{-T}) = beta * Z^T (lu.solve(Zadj^T))^T,
// reusing the forward LU factors. The kNN edge set and sigma2 are treated as
// constants: the edge set is piecewise constant in Phi, and sigma2 is a
// recorded statistic, not a parameter.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "am/graph.hpp"
#include "am/losses.hpp"
#include "am/propagate.hpp"

namespace am {

struct GradPhi {
    Eigen::MatrixXd d_centroids;  // d x N
    Eigen::MatrixXd d_g_raw;      // T x T, zero off the edge set
    Eigen::MatrixXd d_b_raw;      // T x T, zero off the symmetrized edge support
};

/// All intermediates of one forward pipeline pass, retained for backward().
struct Tape {
    int n = 0, l = 0, m = 0;
    Eigen::MatrixXd v;          // d x T vertex matrix
    GraphState graph;
    Eigen::MatrixXd y_label;    // N x T propagation labels
    Propagation prop;
    ProbTriplet probs;
    Eigen::MatrixXd y_support;  // N x L one-hot
    LossWeights weights;
    double tau = 15.0;
    double beta = 0.8;
    double loss = 0.0;
};

/// Forward pipeline for one episode: graph, propagation, softmax, loss.
/// sigma2_override pins the affinity bandwidth (used by the solver to reuse a
/// statistic and by the FD oracle to differentiate the same function the
/// analytic gradient is of).
inline Tape forward_episode(const Eigen::MatrixXd& support, const Eigen::MatrixXd& query,
                            const Eigen::MatrixXd& y_support, const ManifoldParams& params,
                            const LossWeights& weights,
                            std::optional<double> sigma2_override = {}) {
    Tape tape;
    tape.n = static_cast<int>(params.centroids.cols());
    tape.l = static_cast<int>(support.cols());
    tape.m = static_cast<int>(query.cols());
    tape.weights = weights;
    tape.tau = params.tau;
    tape.beta = params.beta;
    tape.y_support = y_support;

    tape.v = assemble_vertices(params.centroids, support, query);
    tape.graph = build_graph(tape.v, params, tape.n, sigma2_override);
    tape.y_label = label_matrix(tape.n, tape.l, tape.m);
    tape.prop = label_propagate(tape.y_label, tape.graph.normalized, params.beta);
    tape.probs = class_softmax(tape.prop.z, params.tau, tape.n, tape.l, tape.m);
    tape.loss = total_loss(tape.probs, y_support, weights);
    return tape;
}

namespace detail {

/// dLoss/dP for the support and query blocks; centroid block gets none.
/// Matches the floored-log forward exactly so FD agrees.
inline Eigen::MatrixXd loss_grad_p(const Tape& tape) {
    const int n = tape.n, l = tape.l, m = tape.m;
    const LossWeights& w = tape.weights;
    Eigen::MatrixXd dp = Eigen::MatrixXd::Zero(n, n + l + m);

    // Cross-entropy over support: -(1/L) sum y*log(max(p, floor)).
    for (int j = 0; j < l; ++j)
        for (int i = 0; i < n; ++i) {
            const double y = tape.y_support(i, j);
            if (y == 0.0) continue;
            const double p = tape.probs.p_s(i, j);
            if (p > kProbFloor) dp(i, n + j) -= w.lambda3 * y / (p * l);
        }

    const auto& pq = tape.probs.p_q;
    if (w.mode == LossMode::Balanced) {
        for (int j = 0; j < m; ++j)
            for (int i = 0; i < n; ++i) {
                const double p = pq(i, j);
                const double d = p > kProbFloor ? std::log(p) + 1.0 : std::log(kProbFloor);
                dp(i, n + l + j) += -w.lambda2 * d / m;
            }
        const Eigen::VectorXd pbar = pq.rowwise().mean();
        for (int i = 0; i < n; ++i) {
            const double pb = pbar[i];
            const double d = pb > kProbFloor ? std::log(pb) + 1.0 : std::log(kProbFloor);
            // -lambda1 * H(pbar) contributes +lambda1 * (log pbar + 1) / M.
            for (int j = 0; j < m; ++j) dp(i, n + l + j) += w.lambda1 * d / m;
        }
    } else {
        const double a = w.alpha;
        const double c = a / (a - 1.0);
        for (int j = 0; j < m; ++j)
            for (int i = 0; i < n; ++i)
                dp(i, n + l + j) += -w.lambda2 * c * std::pow(pq(i, j), a - 1.0) / m;
        const Eigen::VectorXd pbar = pq.rowwise().mean();
        for (int i = 0; i < n; ++i) {
            const double d = c * std::pow(pbar[i], a - 1.0);
            for (int j = 0; j < m; ++j) dp(i, n + l + j) += w.lambda1 * d / m;
        }
    }
    return dp;
}

}  // namespace detail

inline GradPhi backward(const Tape& tape) {
    const int n = tape.n;
    const int t = n + tape.l + tape.m;
    const GraphState& g = tape.graph;
    if (g.normalized.rows() != t) throw std::invalid_argument("backward: incomplete tape");

    // (a) loss -> P.
    const Eigen::MatrixXd dp = detail::loss_grad_p(tape);

    // (b) P -> Z: softmax Jacobian per column, scaled by tau.
    Eigen::MatrixXd dz(n, t);
    for (int j = 0; j < t; ++j) {
        const Eigen::VectorXd p = (j < n)            ? tape.probs.p_c.col(j)
                                  : (j < n + tape.l) ? tape.probs.p_s.col(j - n)
                                                     : tape.probs.p_q.col(j - n - tape.l);
        const Eigen::VectorXd dpj = dp.col(j);
        const double inner = dpj.dot(p);
        dz.col(j) = tape.tau * p.cwiseProduct(dpj - Eigen::VectorXd::Constant(n, inner));
    }

    // (c) Z -> 𝒲 through Z = Y M^{-1}: 𝒲adj = beta * Z^T (lu.solve(dz^T))^T.
    const Eigen::MatrixXd s = tape.prop.lu.solve(dz.transpose());  // T x N = M^{-1} dz^T
    const Eigen::MatrixXd dwn = tape.beta * tape.prop.z.transpose() * s.transpose();

    // (d) 𝒲 = D^{-1/2} W_B D^{-1/2}, including the degree dependence on W_B.
    const Eigen::VectorXd inv_sqrt = g.degrees.array().rsqrt();
    Eigen::VectorXd ddeg = Eigen::VectorXd::Zero(t);
    for (int u = 0; u < t; ++u) {
        if (g.raw_degrees[u] < kDegreeFloor) continue;  // floor is flat
        double acc = 0.0;
        for (int v = 0; v < t; ++v)
            acc += dwn(u, v) * g.normalized(u, v) + dwn(v, u) * g.normalized(v, u);
        ddeg[u] = -0.5 * acc / g.degrees[u];
    }
    Eigen::MatrixXd dwb(t, t);
    for (int u = 0; u < t; ++u)
        for (int v = 0; v < t; ++v) dwb(u, v) = dwn(u, v) * inv_sqrt[u] * inv_sqrt[v] + ddeg[u];

    // (e) W_B = W ∘ B; B = logistic(sym(b_raw)).
    const Eigen::MatrixXd dw = dwb.cwiseProduct(g.gate);
    const Eigen::MatrixXd dgate = dwb.cwiseProduct(g.adjacency);
    const Eigen::MatrixXd dsym =
        dgate.cwiseProduct(g.gate.cwiseProduct(Eigen::MatrixXd::Ones(t, t) - g.gate));
    GradPhi grads;
    grads.d_b_raw = 0.5 * (dsym + dsym.transpose());

    // (f) W = (A + A^T)/2, restricted to the edge set.
    // (g) a_ij = exp(-s_ij / (g_ij sigma2)); G = exp(g_raw).
    // (h) squared distances back to the centroid columns of V.
    grads.d_g_raw = Eigen::MatrixXd::Zero(t, t);
    Eigen::MatrixXd dvert = Eigen::MatrixXd::Zero(tape.v.rows(), t);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) {
            if (!g.edges.contains(i, j)) continue;
            const double da = 0.5 * (dw(i, j) + dw(j, i));
            const double a = g.affinity(i, j);
            const double denom = g.scale(i, j) * g.sigma2;
            grads.d_g_raw(i, j) = da * a * g.sq_dists(i, j) / denom;
            const double ds = -da * a / denom;
            if (i < n || j < n) {
                const Eigen::VectorXd diff = 2.0 * ds * (tape.v.col(i) - tape.v.col(j));
                if (i < n) dvert.col(i) += diff;
                if (j < n) dvert.col(j) -= diff;
            }
        }
    grads.d_centroids = dvert.leftCols(n);
    if (!grads.d_centroids.allFinite() || !grads.d_g_raw.allFinite() ||
        !grads.d_b_raw.allFinite())
        throw NumericError("backward: non-finite gradient");
    return grads;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle.

/// Flat coordinate layout over Phi: centroids (column-major), then g_raw, then
/// b_raw (both column-major).
inline Eigen::Index param_count(const ManifoldParams& p) {
    return p.centroids.size() + p.g_raw.size() + p.b_raw.size();
}

inline double get_param(const ManifoldParams& p, Eigen::Index idx) {
    if (idx < p.centroids.size()) return p.centroids(idx);
    idx -= p.centroids.size();
    if (idx < p.g_raw.size()) return p.g_raw(idx);
    return p.b_raw(idx - p.g_raw.size());
}

inline void set_param(ManifoldParams& p, Eigen::Index idx, double value) {
    if (idx < p.centroids.size()) {
        p.centroids(idx) = value;
        return;
    }
    idx -= p.centroids.size();
    if (idx < p.g_raw.size())
        p.g_raw(idx) = value;
    else
        p.b_raw(idx - p.g_raw.size()) = value;
}

inline double grad_param(const GradPhi& g, Eigen::Index idx) {
    if (idx < g.d_centroids.size()) return g.d_centroids(idx);
    idx -= g.d_centroids.size();
    if (idx < g.d_g_raw.size()) return g.d_g_raw(idx);
    return g.d_b_raw(idx - g.d_g_raw.size());
}

/// Generic central difference (f(x+h) - f(x-h)) / (2h).
template <typename F>
double central_diff(F&& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

struct FiniteDiffResult {
    double value = 0.0;
    bool edge_flip = false;  // kNN membership changed at theta +/- h
};

/// Central FD of the episode loss along one parameter coordinate, with full
/// forward recomputation (edges re-selected; sigma2 held at the base value,
/// matching the analytic treatment). Flags coordinates whose perturbation
/// flips a kNN membership.
inline FiniteDiffResult finite_diff_oracle(const Eigen::MatrixXd& support,
                                           const Eigen::MatrixXd& query,
                                           const Eigen::MatrixXd& y_support,
                                           const ManifoldParams& params,
                                           const LossWeights& weights, double base_sigma2,
                                           const EdgeSet& base_edges, Eigen::Index idx,
                                           double h) {
    if (h == 0.0) throw std::invalid_argument("finite_diff_oracle: h must be nonzero");
    const double x0 = get_param(params, idx);
    ManifoldParams p = params;
    set_param(p, idx, x0 + h);
    Tape plus = forward_episode(support, query, y_support, p, weights, base_sigma2);
    set_param(p, idx, x0 - h);
    Tape minus = forward_episode(support, query, y_support, p, weights, base_sigma2);
    FiniteDiffResult r;
    r.edge_flip = !(plus.graph.edges == base_edges) || !(minus.graph.edges == base_edges);
    r.value = (plus.loss - minus.loss) / (2.0 * h);
    return r;
}

// ---------------------------------------------------------------------------
// Gradient check harness (shared by tests, acceptance, and the CLI).

struct GradCheckStats {
    double max_rel_centroids = 0.0;
    double max_rel_g = 0.0;
    double max_rel_b = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // kNN flips

    double max_rel() const { return std::max({max_rel_centroids, max_rel_g, max_rel_b}); }
    double skip_rate() const {
        const std::size_t total = checked + skipped;
        return total == 0 ? 0.0 : static_cast<double>(skipped) / static_cast<double>(total);
    }
};

/// Compare backward() against the FD oracle on every coordinate of Phi.
/// Relative error uses denominator max(|fd|, 1e-8).
inline GradCheckStats grad_check_episode(const Eigen::MatrixXd& support,
                                         const Eigen::MatrixXd& query,
                                         const Eigen::MatrixXd& y_support,
                                         const ManifoldParams& params, const LossWeights& weights,
                                         double h = 1e-5, bool flip_b_sign = false) {
    Tape tape = forward_episode(support, query, y_support, params, weights);
    GradPhi grads = backward(tape);
    if (flip_b_sign) grads.d_b_raw = -grads.d_b_raw;  // fault injection for sentinel tests

    GradCheckStats stats;
    const Eigen::Index nc = params.centroids.size();
    const Eigen::Index ng = params.g_raw.size();
    for (Eigen::Index idx = 0; idx < param_count(params); ++idx) {
        const FiniteDiffResult fd =
            finite_diff_oracle(support, query, y_support, params, weights, tape.graph.sigma2,
                               tape.graph.edges, idx, h);
        if (fd.edge_flip) {
            ++stats.skipped;
            continue;
        }
        ++stats.checked;
        const double analytic = grad_param(grads, idx);
        const double rel =
            std::abs(analytic - fd.value) / std::max(std::abs(fd.value), 1e-8);
        if (idx < nc)
            stats.max_rel_centroids = std::max(stats.max_rel_centroids, rel);
        else if (idx < nc + ng)
            stats.max_rel_g = std::max(stats.max_rel_g, rel);
        else
            stats.max_rel_b = std::max(stats.max_rel_b, rel);
    }
    return stats;
}

}  // namespace am
