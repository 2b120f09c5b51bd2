#pragma once

// Affinity graph over centroids, support, and query embeddings.
//
// Vertices V = (C | V^s | V^q), T = N + L + M. Edges run between distinct
// k-nearest neighbours, never between two centroids. Affinities
// a_ij = exp(-||v_i - v_j||^2 / (g_ij * sigma2)) are symmetrized into W,
// gated by B in (0,1), and degree-normalized into the propagation matrix
// 𝒲 = D^{-1/2} (W ∘ B) D^{-1/2}, whose eigenvalues lie in [-1, 1].

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "am/errors.hpp"

namespace am {

constexpr double kDegreeFloor = 1e-12;

/// Learnable manifold parameters Phi = {C, g_raw, b_raw} plus the fixed
/// propagation hyperparameters. Effective values: G = exp(g_raw) > 0 and
/// B = logistic((b_raw + b_raw^T)/2) in (0,1); the symmetrization keeps the
/// gated adjacency exactly symmetric for any raw value.
struct ManifoldParams {
    Eigen::MatrixXd centroids;  // d x N
    Eigen::MatrixXd g_raw;      // T x T, unconstrained
    Eigen::MatrixXd b_raw;      // T x T, unconstrained
    double beta = 0.8;          // label-propagation damping, in [0,1)
    std::optional<int> k_neighbors;  // nullopt = complete graph
    double tau = 15.0;          // softmax scale
};

inline Eigen::MatrixXd effective_scale(const Eigen::MatrixXd& g_raw) {
    return g_raw.array().exp();
}

inline Eigen::MatrixXd effective_gate(const Eigen::MatrixXd& b_raw) {
    Eigen::MatrixXd sym = 0.5 * (b_raw + b_raw.transpose());
    return sym.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

/// Ordered edge set over T vertices, stored as a dense membership mask.
struct EdgeSet {
    int t = 0;
    int n_centroids = 0;
    std::vector<std::uint8_t> mask;  // row-major, mask[i*t + j] <=> (i,j) in E

    bool contains(int i, int j) const { return mask[static_cast<std::size_t>(i) * t + j] != 0; }
    std::size_t count() const {
        std::size_t c = 0;
        for (auto m : mask) c += m;
        return c;
    }
    bool operator==(const EdgeSet& other) const = default;
};

/// Squared Euclidean distances between all column pairs; exactly symmetric.
inline Eigen::MatrixXd pairwise_sq_dists(const Eigen::MatrixXd& v) {
    const Eigen::Index t = v.cols();
    Eigen::MatrixXd d2 = Eigen::MatrixXd::Zero(t, t);
    for (Eigen::Index i = 0; i < t; ++i)
        for (Eigen::Index j = i + 1; j < t; ++j) {
            const double s = (v.col(i) - v.col(j)).squaredNorm();
            d2(i, j) = s;
            d2(j, i) = s;
        }
    return d2;
}

namespace detail {

/// (i,j) in E iff v_i is among the k nearest neighbours of v_j (ties to lower
/// index), i != j, and not both are centroids. k = nullopt keeps every pair
/// except self-pairs and centroid-centroid pairs.
inline EdgeSet knn_edges_from(const Eigen::MatrixXd& d2, std::optional<int> k, int n_centroids) {
    const int t = static_cast<int>(d2.rows());
    EdgeSet edges;
    edges.t = t;
    edges.n_centroids = n_centroids;
    edges.mask.assign(static_cast<std::size_t>(t) * t, 0);

    auto admit = [&](int i, int j) {
        if (i < n_centroids && j < n_centroids) return;
        edges.mask[static_cast<std::size_t>(i) * t + j] = 1;
    };

    if (!k) {
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < t; ++j)
                if (i != j) admit(i, j);
        return edges;
    }

    std::vector<int> order(static_cast<std::size_t>(t) - 1);
    for (int j = 0; j < t; ++j) {
        int w = 0;
        for (int i = 0; i < t; ++i)
            if (i != j) order[static_cast<std::size_t>(w++)] = i;
        const int kk = std::min(*k, t - 1);
        std::partial_sort(order.begin(), order.begin() + kk, order.end(), [&](int a, int b) {
            if (d2(a, j) != d2(b, j)) return d2(a, j) < d2(b, j);
            return a < b;
        });
        for (int r = 0; r < kk; ++r) admit(order[static_cast<std::size_t>(r)], j);
    }
    return edges;
}

}  // namespace detail

inline EdgeSet knn_edges(const Eigen::MatrixXd& v, std::optional<int> k, int n_centroids) {
    if (k && *k >= v.cols())
        throw std::invalid_argument("knn_edges: k must be smaller than the vertex count");
    return detail::knn_edges_from(pairwise_sq_dists(v), k, n_centroids);
}

namespace detail {

/// Population std of the off-diagonal squared distances; 1.0 when degenerate.
inline double sigma2_from_dists(const Eigen::MatrixXd& d2) {
    const Eigen::Index t = d2.rows();
    const double pairs = static_cast<double>(t) * (t - 1) / 2.0;
    double mean = 0.0;
    for (Eigen::Index i = 0; i < t; ++i)
        for (Eigen::Index j = i + 1; j < t; ++j) mean += d2(i, j);
    mean /= pairs;
    double var = 0.0;
    for (Eigen::Index i = 0; i < t; ++i)
        for (Eigen::Index j = i + 1; j < t; ++j) {
            const double dev = d2(i, j) - mean;
            var += dev * dev;
        }
    var /= pairs;
    const double sd = std::sqrt(var);
    return sd > 0.0 ? sd : 1.0;
}

}  // namespace detail

inline double global_sigma2(const Eigen::MatrixXd& v) {
    if (v.cols() < 2) throw std::invalid_argument("global_sigma2: need at least two vertices");
    return detail::sigma2_from_dists(pairwise_sq_dists(v));
}

/// One forward graph build. Everything downstream of the edge selection is a
/// smooth function of (V, g_raw, b_raw); sigma2 is a recorded statistic and
/// carries no gradient.
struct GraphState {
    EdgeSet edges;
    Eigen::MatrixXd sq_dists;   // T x T
    Eigen::MatrixXd scale;      // G = exp(g_raw)
    Eigen::MatrixXd gate;       // B = logistic(sym(b_raw))
    Eigen::MatrixXd affinity;   // A, zero off E
    Eigen::MatrixXd adjacency;  // W = (A + A^T)/2
    Eigen::MatrixXd gated;      // W_B = W ∘ B
    Eigen::VectorXd raw_degrees;  // row sums of W_B, before the floor
    Eigen::VectorXd degrees;      // max(raw, kDegreeFloor)
    Eigen::MatrixXd normalized;   // 𝒲 = D^{-1/2} W_B D^{-1/2}
    double sigma2 = 1.0;
};

inline GraphState build_graph(const Eigen::MatrixXd& v, const ManifoldParams& params,
                              int n_centroids, std::optional<double> sigma2_override = {}) {
    const int t = static_cast<int>(v.cols());
    GraphState g;
    g.sq_dists = pairwise_sq_dists(v);
    g.sigma2 = sigma2_override ? *sigma2_override : detail::sigma2_from_dists(g.sq_dists);
    g.edges = detail::knn_edges_from(g.sq_dists, params.k_neighbors, n_centroids);
    g.scale = effective_scale(params.g_raw);
    g.gate = effective_gate(params.b_raw);

    g.affinity = Eigen::MatrixXd::Zero(t, t);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) {
            if (!g.edges.contains(i, j)) continue;
            const double a = std::exp(-g.sq_dists(i, j) / (g.scale(i, j) * g.sigma2));
            if (!std::isfinite(a))
                throw NumericError("build_graph: non-finite affinity at pair (" +
                                   std::to_string(i) + "," + std::to_string(j) + ")");
            g.affinity(i, j) = a;
        }

    // Fill upper triangles and mirror so W, W_B, 𝒲 are bitwise symmetric.
    g.adjacency = Eigen::MatrixXd::Zero(t, t);
    g.gated = Eigen::MatrixXd::Zero(t, t);
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) {
            const double w = 0.5 * (g.affinity(i, j) + g.affinity(j, i));
            g.adjacency(i, j) = w;
            g.adjacency(j, i) = w;
            const double wb = w * g.gate(i, j);
            g.gated(i, j) = wb;
            g.gated(j, i) = wb;
        }

    g.raw_degrees = g.gated.rowwise().sum();
    g.degrees = g.raw_degrees.cwiseMax(kDegreeFloor);
    const Eigen::VectorXd inv_sqrt = g.degrees.array().rsqrt();
    g.normalized = Eigen::MatrixXd::Zero(t, t);
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) {
            const double wn = g.gated(i, j) * inv_sqrt[i] * inv_sqrt[j];
            g.normalized(i, j) = wn;
            g.normalized(j, i) = wn;
        }
    return g;
}

/// V = (C | V^s | V^q), column order fixed.
inline Eigen::MatrixXd assemble_vertices(const Eigen::MatrixXd& centroids,
                                         const Eigen::MatrixXd& support,
                                         const Eigen::MatrixXd& query) {
    if (centroids.rows() != support.rows() || support.rows() != query.rows())
        throw std::invalid_argument("assemble_vertices: dimension mismatch");
    Eigen::MatrixXd v(centroids.rows(), centroids.cols() + support.cols() + query.cols());
    v << centroids, support, query;
    return v;
}

}  // namespace am
