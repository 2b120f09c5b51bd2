#pragma once

// Many-episode evaluation: per-task accuracies, mean and 95% confidence
// interval, CSV persistence, and the nearest-centroid baseline. Episode-level
// parallelism; results are aggregated by task index, so the per-task vector is
// bit-identical for any worker count.

#include <Eigen/Dense>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "am/episodes.hpp"
#include "am/solver.hpp"

namespace am {

inline double task_accuracy(const std::vector<int>& predictions, const std::vector<int>& truth) {
    if (predictions.size() != truth.size())
        throw std::invalid_argument("task_accuracy: length mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

struct TaskRecord {
    int task_index = 0;
    double accuracy = 0.0;
    double loss_final = 0.0;
    std::vector<int> query_counts;  // true per-class query counts of the episode
};

struct EvalReport {
    std::vector<TaskRecord> tasks;            // ordered by task index
    std::vector<double> per_task_accuracy;
    double mean_accuracy = 0.0;
    double ci95 = 0.0;  // 1.96 * sample std / sqrt(n); 0 when n < 2
    std::string config_snapshot;  // key=value lines
    double wall_time_seconds = 0.0;
};

inline std::string describe_configs(const TaskConfig& tc, const SolverConfig& sc) {
    std::ostringstream out;
    out << "n_way=" << tc.n_way << "\nk_shot=" << tc.k_shot << "\nm_query=" << tc.m_query
        << "\nimbalance=" << (tc.imbalance == Imbalance::Balanced ? "balanced" : "dirichlet")
        << "\ngamma=" << tc.gamma << "\nseed=" << tc.seed << "\nnum_tasks=" << tc.num_tasks
        << "\nr_steps=" << sc.r_steps << "\nlr=" << sc.lr
        << "\nloss=" << (sc.loss.mode == LossMode::Balanced ? "balanced" : "alpha")
        << "\nalpha=" << sc.loss.alpha << "\nlambda1=" << sc.loss.lambda1
        << "\nlambda2=" << sc.loss.lambda2 << "\nlambda3=" << sc.loss.lambda3
        << "\nk_neighbors=" << (sc.k_neighbors ? std::to_string(*sc.k_neighbors) : "none")
        << "\nbeta=" << sc.beta << "\ntau=" << sc.tau
        << "\npreprocessing=" << (sc.preprocessing == Preprocessing::L2 ? "l2" : "plc")
        << "\nlearn_centroids=" << sc.ablation.learn_centroids
        << "\nlearn_g=" << sc.ablation.learn_g << "\nlearn_b=" << sc.ablation.learn_b << "\n";
    return out.str();
}

/// Solve num_tasks episodes and aggregate. Deterministic per seed for any
/// worker count: tasks are keyed by index, not by completion order.
inline EvalReport run_eval(const EmbeddingSet& set, const TaskConfig& task_cfg,
                           const SolverConfig& solver_cfg, int threads = 1) {
    const auto start = std::chrono::steady_clock::now();
    const int num_tasks = task_cfg.num_tasks;
    if (num_tasks < 1) throw std::invalid_argument("run_eval: num_tasks must be positive");
    EvalReport report;
    report.tasks.resize(static_cast<std::size_t>(num_tasks));
    report.config_snapshot = describe_configs(task_cfg, solver_cfg);

    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= num_tasks || failed.load()) return;
            try {
                const Episode ep = sample_episode(set, task_cfg, static_cast<std::uint64_t>(i));
                const SolveResult res = solve_episode(ep, solver_cfg);
                TaskRecord rec;
                rec.task_index = i;
                rec.accuracy = task_accuracy(res.predictions, ep.query_labels_hidden);
                rec.loss_final = res.loss_final;
                rec.query_counts.assign(static_cast<std::size_t>(ep.n_way()), 0);
                for (int y : ep.query_labels_hidden) rec.query_counts[static_cast<std::size_t>(y)] += 1;
                report.tasks[static_cast<std::size_t>(i)] = std::move(rec);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };

    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);

    report.per_task_accuracy.reserve(static_cast<std::size_t>(num_tasks));
    double sum = 0.0;
    for (const auto& rec : report.tasks) {
        report.per_task_accuracy.push_back(rec.accuracy);
        sum += rec.accuracy;
    }
    report.mean_accuracy = sum / num_tasks;
    if (num_tasks > 1) {
        double ss = 0.0;
        for (double a : report.per_task_accuracy) {
            const double d = a - report.mean_accuracy;
            ss += d * d;
        }
        const double sample_std = std::sqrt(ss / (num_tasks - 1));
        report.ci95 = 1.96 * sample_std / std::sqrt(static_cast<double>(num_tasks));
    }
    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

namespace detail {
inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

/// CSV schema: task_index,accuracy,loss_final,num_queries_per_class with the
/// class counts semicolon-joined. The summary row uses task_index = -1 and
/// carries mean accuracy, ci95 (loss_final column), and num_tasks (last
/// column). Numeric fields are written at 17 significant digits.
inline void write_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << "task_index,accuracy,loss_final,num_queries_per_class\n";
    for (const auto& rec : report.tasks) {
        out << rec.task_index << ',' << detail::format_g17(rec.accuracy) << ','
            << detail::format_g17(rec.loss_final) << ',';
        for (std::size_t j = 0; j < rec.query_counts.size(); ++j)
            out << (j ? ";" : "") << rec.query_counts[j];
        out << '\n';
    }
    out << "-1," << detail::format_g17(report.mean_accuracy) << ','
        << detail::format_g17(report.ci95) << ',' << report.tasks.size() << '\n';
    if (!out.good()) throw DataError(path + ": write failure");
}

/// Config snapshot next to the CSV (same stem, .cfg extension).
inline std::filesystem::path snapshot_path(const std::string& csv_path) {
    std::filesystem::path p(csv_path);
    p.replace_extension(".cfg");
    return p;
}

inline void write_config_snapshot(const EvalReport& report, const std::string& csv_path) {
    const auto path = snapshot_path(csv_path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out << report.config_snapshot;
    out << "mean_accuracy=" << detail::format_g17(report.mean_accuracy) << "\n";
    out << "ci95=" << detail::format_g17(report.ci95) << "\n";
    out << "wall_time_seconds=" << detail::format_g17(report.wall_time_seconds) << "\n";
    if (!out.good()) throw DataError(path.string() + ": write failure");
}

/// Graph-free reference: assign each query to the class of the nearest
/// prototype. Ties go to the lower class index.
inline std::vector<int> baseline_nearest_centroid(const Episode& episode, Preprocessing prep) {
    auto [support, query] =
        apply_preprocessing(episode.support_vectors, episode.query_vectors, prep);
    const Eigen::MatrixXd y = one_hot(episode.support_labels, episode.n_way());
    const Eigen::MatrixXd centroids = init_centroids(support, y);
    std::vector<int> out(static_cast<std::size_t>(query.cols()));
    for (Eigen::Index j = 0; j < query.cols(); ++j) {
        int best = 0;
        double best_d = (query.col(j) - centroids.col(0)).squaredNorm();
        for (Eigen::Index c = 1; c < centroids.cols(); ++c) {
            const double d = (query.col(j) - centroids.col(c)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        out[static_cast<std::size_t>(j)] = best;
    }
    return out;
}

}  // namespace am
