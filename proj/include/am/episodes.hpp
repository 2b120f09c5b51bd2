#pragma once

// Episode sampling: balanced and Dirichlet-imbalanced N-way K-shot tasks.
// Every task draws from its own RNG substream keyed by (seed, task_index), so
// task t is the same whether sampled alone or as part of a batch.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "am/embeddings.hpp"
#include "am/rng.hpp"

namespace am {

enum class Imbalance { Balanced, Dirichlet };

struct TaskConfig {
    int n_way = 5;
    int k_shot = 1;
    int m_query = 75;
    Imbalance imbalance = Imbalance::Dirichlet;
    double gamma = 2.0;  // Dirichlet concentration
    std::uint64_t seed = 0;
    int num_tasks = 1000;
};

struct Episode {
    Eigen::MatrixXd support_vectors;      // d x L
    std::vector<int> support_labels;      // in [0, N)
    Eigen::MatrixXd query_vectors;        // d x M
    std::vector<int> query_labels_hidden; // in [0, N), scoring only
    std::vector<std::uint32_t> class_map; // episode class -> dataset class id

    int n_way() const { return static_cast<int>(class_map.size()); }
};

/// Draw pi ~ Dir(gamma * 1_N) via N gamma variates normalized by their sum.
inline Eigen::VectorXd sample_proportions(int n_way, double gamma, std::mt19937_64& rng) {
    if (gamma <= 0) throw std::invalid_argument("sample_proportions: gamma must be positive");
    std::gamma_distribution<double> g(gamma, 1.0);
    Eigen::VectorXd pi(n_way);
    for (int j = 0; j < n_way; ++j) pi[j] = std::max(g(rng), 1e-300);
    pi /= pi.sum();
    return pi;
}

/// Largest-remainder rounding of pi * m_query; ties broken by lower class index.
/// Always sums exactly to m_query. Zero counts are allowed.
inline std::vector<int> proportions_to_counts(const Eigen::VectorXd& pi, int m_query) {
    const int n = static_cast<int>(pi.size());
    std::vector<int> counts(n);
    std::vector<std::pair<double, int>> remainders(n);
    int assigned = 0;
    for (int j = 0; j < n; ++j) {
        const double exact = pi[j] * m_query;
        counts[j] = static_cast<int>(std::floor(exact));
        remainders[j] = {exact - counts[j], j};
        assigned += counts[j];
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int r = 0; assigned < m_query; ++r, ++assigned) counts[remainders[static_cast<std::size_t>(r)].second] += 1;
    return counts;
}

/// Sample one episode. Deterministic given (set, cfg.seed, task_index); support
/// and query sets are disjoint by construction.
inline Episode sample_episode(const EmbeddingSet& set, const TaskConfig& cfg,
                              std::uint64_t task_index) {
    if (cfg.n_way <= 0 || cfg.k_shot <= 0 || cfg.m_query <= 0)
        throw std::invalid_argument("sample_episode: n_way, k_shot, m_query must be positive");
    if (cfg.imbalance == Imbalance::Balanced && cfg.m_query % cfg.n_way != 0)
        throw std::invalid_argument("sample_episode: balanced tasks need n_way to divide m_query");
    if (static_cast<std::uint32_t>(cfg.n_way) > set.num_classes)
        throw std::invalid_argument("sample_episode: set has " + std::to_string(set.num_classes) +
                                    " classes, need " + std::to_string(cfg.n_way));

    auto rng = task_rng(cfg.seed, task_index);

    // Classes, uniform without replacement (partial Fisher-Yates).
    std::vector<std::uint32_t> class_ids(set.num_classes);
    std::iota(class_ids.begin(), class_ids.end(), 0u);
    for (int j = 0; j < cfg.n_way; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, class_ids.size() - 1);
        std::swap(class_ids[static_cast<std::size_t>(j)], class_ids[pick(rng)]);
    }
    class_ids.resize(static_cast<std::size_t>(cfg.n_way));

    // Per-class query counts.
    std::vector<int> query_counts;
    if (cfg.imbalance == Imbalance::Balanced) {
        query_counts.assign(static_cast<std::size_t>(cfg.n_way), cfg.m_query / cfg.n_way);
    } else {
        const Eigen::VectorXd pi = sample_proportions(cfg.n_way, cfg.gamma, rng);
        query_counts = proportions_to_counts(pi, cfg.m_query);
    }

    // Index examples by class once.
    std::vector<std::vector<Eigen::Index>> by_class(set.num_classes);
    for (Eigen::Index i = 0; i < set.count(); ++i)
        by_class[set.labels[static_cast<std::size_t>(i)]].push_back(i);

    const int L = cfg.n_way * cfg.k_shot;
    Episode ep;
    ep.support_vectors.resize(set.dim, L);
    ep.query_vectors.resize(set.dim, cfg.m_query);
    ep.support_labels.reserve(static_cast<std::size_t>(L));
    ep.query_labels_hidden.reserve(static_cast<std::size_t>(cfg.m_query));
    ep.class_map = class_ids;

    Eigen::Index s_col = 0, q_col = 0;
    for (int j = 0; j < cfg.n_way; ++j) {
        auto pool = by_class[class_ids[static_cast<std::size_t>(j)]];
        const int need = cfg.k_shot + query_counts[static_cast<std::size_t>(j)];
        if (static_cast<int>(pool.size()) < need)
            throw std::invalid_argument("sample_episode: class " +
                                        std::to_string(class_ids[static_cast<std::size_t>(j)]) + " has " +
                                        std::to_string(pool.size()) + " examples, need " +
                                        std::to_string(need));
        for (int t = 0; t < need; ++t) {
            std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(t), pool.size() - 1);
            std::swap(pool[static_cast<std::size_t>(t)], pool[pick(rng)]);
        }
        for (int t = 0; t < cfg.k_shot; ++t, ++s_col) {
            ep.support_vectors.col(s_col) = set.vectors.col(pool[static_cast<std::size_t>(t)]);
            ep.support_labels.push_back(j);
        }
        for (int t = 0; t < query_counts[static_cast<std::size_t>(j)]; ++t, ++q_col) {
            ep.query_vectors.col(q_col) =
                set.vectors.col(pool[static_cast<std::size_t>(cfg.k_shot + t)]);
            ep.query_labels_hidden.push_back(j);
        }
    }
    return ep;
}

}  // namespace am
