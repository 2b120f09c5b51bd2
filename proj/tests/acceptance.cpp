// Acceptance suite: one check per criterion, one PASS/FAIL line each.
// Exit status is nonzero if any criterion fails.
//
// The full-fidelity check needs real backbone features; point AM_REAL_FEATURES
// at an AMEB file extracted from the reference checkpoint to enable it.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "am/diff.hpp"
#include "am/embeddings.hpp"
#include "am/episodes.hpp"
#include "am/harness.hpp"
#include "am/solver.hpp"

namespace {

int failures = 0;
int skips = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %-22s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    if (!pass) ++failures;
}

void report_skip(const std::string& name, const std::string& why) {
    std::printf("[SKIP] %-22s %s\n", name.c_str(), why.c_str());
    ++skips;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --------------------------------------------------------------------------
// Gradient correctness: 20 random 5-way 1-shot episodes, T <= 20, complete and
// k=3 graphs, both loss modes, alpha in {2, 5}; every coordinate within 1e-4
// relative of central FD (h = 1e-5), kNN flips excluded (< 5%); under 2 min.
void check_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    am::SynthConfig synth;
    synth.num_classes = 7;
    synth.dim = 8;
    synth.per_class = 40;
    synth.class_sep = 2.0;
    synth.noise_sigma = 1.0;
    synth.seed = 5;
    const am::EmbeddingSet set = am::synth_gaussian(synth);

    std::mt19937_64 rng(am::splitmix64(2));
    std::uniform_real_distribution<double> u(-1.0, 1.0);

    am::GradCheckStats total;
    std::size_t episodes = 0;
    for (int e = 0; e < 20; ++e, ++episodes) {
        am::TaskConfig tc;
        tc.n_way = 5;
        tc.k_shot = 1;
        tc.m_query = 10;  // T = 5 + 5 + 10 = 20
        tc.seed = 41;
        const am::Episode ep = am::sample_episode(set, tc, static_cast<std::uint64_t>(e));

        // Full cross of loss mode x graph mode x alpha over every 8 episodes.
        const am::LossMode mode = e % 2 == 0 ? am::LossMode::Imbalanced : am::LossMode::Balanced;
        am::SolverConfig sc = am::default_solver_config(1, mode);
        sc.k_neighbors = (e >> 1) % 2 == 0 ? std::optional<int>(3) : std::nullopt;
        sc.loss.alpha = (e >> 2) % 2 == 0 ? 2.0 : 5.0;

        auto [support, query] =
            am::apply_preprocessing(ep.support_vectors, ep.query_vectors, sc.preprocessing);
        const Eigen::MatrixXd y = am::one_hot(ep.support_labels, tc.n_way);
        am::ManifoldParams phi = am::init_manifold_params(support, y, query, sc);
        for (Eigen::Index i = 0; i < phi.centroids.size(); ++i) phi.centroids(i) += 0.1 * u(rng);
        for (Eigen::Index i = 0; i < phi.g_raw.size(); ++i) phi.g_raw(i) = 0.4 * u(rng);
        for (Eigen::Index i = 0; i < phi.b_raw.size(); ++i) phi.b_raw(i) = 1.0 + 0.8 * u(rng);

        const am::GradCheckStats stats = am::grad_check_episode(support, query, y, phi, sc.loss, 1e-5);
        total.max_rel_centroids = std::max(total.max_rel_centroids, stats.max_rel_centroids);
        total.max_rel_g = std::max(total.max_rel_g, stats.max_rel_g);
        total.max_rel_b = std::max(total.max_rel_b, stats.max_rel_b);
        total.checked += stats.checked;
        total.skipped += stats.skipped;
    }
    const double secs = elapsed_s(t0);
    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "episodes=%zu coords=%zu max_rel=%.2e skip=%.2f%% time=%.0fs", episodes,
                  total.checked, total.max_rel(), 100.0 * total.skip_rate(), secs);
    report("gradient-correctness",
           total.max_rel() < 1e-4 && total.skip_rate() < 0.05 && secs < 120.0, detail);
}

// --------------------------------------------------------------------------
// Propagation oracle: closed form vs 400-term Neumann series, 100 random
// graphs, T <= 30, beta in {0.8, 0.9}, inf-norm < 1e-8; under 30 s.
void check_propagation_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(am::splitmix64(7));
    std::normal_distribution<double> gauss;
    std::uniform_int_distribution<int> t_pick(8, 30);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int t = t_pick(rng);
        const int n = 3, l = 3;
        Eigen::MatrixXd v(4, t);
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = gauss(rng);
        am::ManifoldParams p;
        p.g_raw = Eigen::MatrixXd::Zero(t, t);
        p.b_raw = Eigen::MatrixXd::Constant(t, t, 2.0);
        for (Eigen::Index i = 0; i < p.g_raw.size(); ++i) p.g_raw(i) = 0.2 * gauss(rng);
        p.k_neighbors = trial % 2 == 0 ? std::optional<int>(5) : std::nullopt;
        const am::GraphState g = am::build_graph(v, p, n);
        const double beta = trial % 2 == 0 ? 0.8 : 0.9;

        const Eigen::MatrixXd y = am::label_matrix(n, l, t - n - l);
        const Eigen::MatrixXd z = am::label_propagate(y, g.normalized, beta).z;
        Eigen::MatrixXd acc = y, term = y;
        for (int s = 1; s <= 400; ++s) {
            term = beta * (term * g.normalized);
            acc += term;
        }
        worst = std::max(worst, (z - acc).lpNorm<Eigen::Infinity>());
    }
    const double secs = elapsed_s(t0);
    char detail[128];
    std::snprintf(detail, sizeof(detail), "graphs=100 worst=%.2e time=%.1fs", worst, secs);
    report("propagation-oracle", worst < 1e-8 && secs < 30.0, detail);
}

// --------------------------------------------------------------------------
// Analytic loss values, exact to 1e-12.
void check_loss_values() {
    bool ok = true;
    const Eigen::MatrixXd y5 = Eigen::MatrixXd::Identity(5, 5);
    const Eigen::MatrixXd uniform5 = Eigen::MatrixXd::Constant(5, 5, 0.2);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(5, 4);
    onehot.row(0).setOnes();

    ok &= std::abs(am::cross_entropy_support(uniform5, y5) - std::log(5.0)) < 1e-12;
    ok &= std::abs(am::conditional_entropy(uniform5) - std::log(5.0)) < 1e-12;
    ok &= std::abs(am::alpha_conditional(uniform5, 2.0) - (-0.2)) < 1e-12;
    ok &= std::abs(am::alpha_marginal(uniform5, 2.0) - (-0.2)) < 1e-12;
    ok &= std::abs(am::alpha_conditional(onehot, 2.0) - (-1.0)) < 1e-12;
    ok &= std::abs(am::alpha_marginal(onehot, 2.0) - (-1.0)) < 1e-12;

    // Assembled losses: uniform-everything balanced = log 5; imbalanced with
    // perfect support and uniform queries = 0.
    am::LossWeights bal{1.0, 1.0, 1.0, 2.0, am::LossMode::Balanced};
    ok &= std::abs(am::total_loss(uniform5, uniform5, y5, bal) - std::log(5.0)) < 1e-12;
    am::LossWeights imb{1.0, 1.0, 1.0, 2.0, am::LossMode::Imbalanced};
    ok &= std::abs(am::total_loss(y5, uniform5, y5, imb) - 0.0) < 1e-9;

    report("analytic-loss-values", ok, "log5 / -0.2 / -1 / 0 cases");
}

// --------------------------------------------------------------------------
// Tsallis limit: alpha-entropy differences vs Shannon differences at
// alpha = 1.001 over 1000 random simplex pairs, absolute error < 1e-2.
void check_tsallis_limit() {
    std::mt19937_64 rng(am::splitmix64(15));
    std::uniform_real_distribution<double> u(0.01, 1.0);
    auto simplex = [&]() {
        Eigen::MatrixXd p(5, 1);
        for (int i = 0; i < 5; ++i) p(i, 0) = u(rng);
        p /= p.sum();
        return p;
    };
    auto shannon = [](const Eigen::MatrixXd& p) {
        double h = 0.0;
        for (int i = 0; i < 5; ++i) h -= p(i, 0) * std::log(p(i, 0));
        return h;
    };
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const Eigen::MatrixXd p = simplex(), q = simplex();
        const double alpha_diff = am::alpha_conditional(p, 1.001) - am::alpha_conditional(q, 1.001);
        worst = std::max(worst, std::abs(alpha_diff - (shannon(p) - shannon(q))));
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "pairs=1000 worst=%.2e", worst);
    report("tsallis-limit", worst < 1e-2, detail);
}

// --------------------------------------------------------------------------
// Dirichlet protocol: gamma=2, N=5, M=75, 10000 tasks; per-class mean count in
// [14.5, 15.5]; every task sums to exactly 75.
void check_dirichlet_protocol() {
    am::SynthConfig synth;
    synth.num_classes = 8;
    synth.dim = 8;
    synth.per_class = 80;
    synth.class_sep = 3.0;
    synth.noise_sigma = 1.0;
    synth.seed = 3;
    const am::EmbeddingSet set = am::synth_gaussian(synth);
    am::TaskConfig tc;
    tc.imbalance = am::Imbalance::Dirichlet;
    tc.gamma = 2.0;
    tc.seed = 71;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(5);
    bool sums_ok = true;
    const int tasks = 10000;
    for (int t = 0; t < tasks; ++t) {
        const am::Episode ep = am::sample_episode(set, tc, static_cast<std::uint64_t>(t));
        sums_ok &= static_cast<int>(ep.query_labels_hidden.size()) == 75;
        for (int y : ep.query_labels_hidden) mean[y] += 1.0;
    }
    mean /= tasks;
    const bool mean_ok = mean.minCoeff() >= 14.5 && mean.maxCoeff() <= 15.5;
    char detail[160];
    std::snprintf(detail, sizeof(detail), "tasks=%d per-class mean=[%.2f, %.2f] sums_exact=%s",
                  tasks, mean.minCoeff(), mean.maxCoeff(), sums_ok ? "yes" : "no");
    report("dirichlet-protocol", mean_ok && sums_ok, detail);
}

// --------------------------------------------------------------------------
// Directional ablation on tuned synthetic data: (i) kNN beats the complete
// graph and (ii) learning C beats frozen C, each beyond the paired standard
// error, over >= 500 shared-seed tasks at r = 200; under 20 min.
struct PairedDiff {
    double mean = 0.0;
    double se = 0.0;
};

PairedDiff paired_diff(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    PairedDiff out;
    for (std::size_t i = 0; i < n; ++i) out.mean += a[i] - b[i];
    out.mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - out.mean;
        ss += d * d;
    }
    out.se = std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
    return out;
}

void check_directional_ablation(int threads) {
    const auto t0 = std::chrono::steady_clock::now();
    // Tuned so the frozen kNN variant lands in the 60-75% band.
    am::SynthConfig synth;
    synth.num_classes = 20;
    synth.dim = 32;
    synth.per_class = 90;
    synth.class_sep = 3.0;
    synth.noise_sigma = 1.0;
    synth.seed = 12;
    const am::EmbeddingSet set = am::synth_gaussian(synth);

    am::TaskConfig tc;
    tc.imbalance = am::Imbalance::Dirichlet;
    tc.gamma = 2.0;
    tc.seed = 2024;
    tc.num_tasks = 500;

    am::SolverConfig dense_frozen = am::default_solver_config(1, am::LossMode::Imbalanced);
    dense_frozen.k_neighbors = std::nullopt;
    dense_frozen.ablation = {false, false, false};
    am::SolverConfig knn_frozen = dense_frozen;
    knn_frozen.k_neighbors = 20;
    am::SolverConfig knn_learn_c = knn_frozen;
    knn_learn_c.ablation = {true, false, false};
    knn_learn_c.r_steps = 200;

    const am::EvalReport dense = am::run_eval(set, tc, dense_frozen, threads);
    const am::EvalReport frozen = am::run_eval(set, tc, knn_frozen, threads);
    const am::EvalReport learned = am::run_eval(set, tc, knn_learn_c, threads);

    const PairedDiff knn_vs_dense = paired_diff(frozen.per_task_accuracy, dense.per_task_accuracy);
    const PairedDiff learn_vs_frozen =
        paired_diff(learned.per_task_accuracy, frozen.per_task_accuracy);
    const double secs = elapsed_s(t0);

    const bool band_ok = frozen.mean_accuracy >= 0.60 && frozen.mean_accuracy <= 0.75;
    const bool knn_ok = knn_vs_dense.mean > knn_vs_dense.se;
    const bool learn_ok = learn_vs_frozen.mean > learn_vs_frozen.se;
    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "frozen=%.3f dense=%.3f learned=%.3f knn-dense=%.4f(se %.4f) "
                  "learn-frozen=%.4f(se %.4f) time=%.0fs",
                  frozen.mean_accuracy, dense.mean_accuracy, learned.mean_accuracy,
                  knn_vs_dense.mean, knn_vs_dense.se, learn_vs_frozen.mean, learn_vs_frozen.se,
                  secs);
    report("directional-ablation", band_ok && knn_ok && learn_ok && secs < 1200.0, detail);
}

// --------------------------------------------------------------------------
// Determinism: identical per-task accuracy vectors with 1 and 8 workers.
void check_determinism() {
    am::SynthConfig synth;
    synth.num_classes = 10;
    synth.dim = 16;
    synth.per_class = 85;
    synth.class_sep = 3.0;
    synth.noise_sigma = 1.0;
    synth.seed = 8;
    const am::EmbeddingSet set = am::synth_gaussian(synth);
    am::TaskConfig tc;
    tc.num_tasks = 100;
    tc.seed = 55;
    am::SolverConfig sc = am::default_solver_config(1, am::LossMode::Imbalanced);
    sc.r_steps = 20;
    const am::EvalReport serial = am::run_eval(set, tc, sc, 1);
    const am::EvalReport parallel = am::run_eval(set, tc, sc, 8);
    const bool identical = serial.per_task_accuracy == parallel.per_task_accuracy;
    char detail[96];
    std::snprintf(detail, sizeof(detail), "tasks=100 identical=%s mean=%.3f",
                  identical ? "yes" : "no", serial.mean_accuracy);
    report("determinism", identical, detail);
}

// --------------------------------------------------------------------------
// Optional full-fidelity run against user-supplied real features.
void check_full_fidelity(int threads) {
    const char* path = std::getenv("AM_REAL_FEATURES");
    if (path == nullptr) {
        report_skip("full-fidelity", "set AM_REAL_FEATURES to an AMEB feature file to enable");
        return;
    }
    const am::EmbeddingSet set = am::load_embeddings(path);
    am::TaskConfig tc;
    tc.imbalance = am::Imbalance::Dirichlet;
    tc.gamma = 2.0;
    tc.num_tasks = 10000;
    tc.seed = 1;
    const am::SolverConfig sc = am::default_solver_config(1, am::LossMode::Imbalanced);
    const am::EvalReport report_eval = am::run_eval(set, tc, sc, threads);
    const double acc = 100.0 * report_eval.mean_accuracy;
    char detail[96];
    std::snprintf(detail, sizeof(detail), "mean=%.2f%% target=70.24 +/- 0.7", acc);
    report("full-fidelity", std::abs(acc - 70.24) <= 0.7, detail);
}

}  // namespace

int main() {
    const unsigned hw = std::thread::hardware_concurrency();
    const int threads = hw == 0 ? 2 : static_cast<int>(hw);

    check_gradients();
    check_propagation_oracle();
    check_loss_values();
    check_tsallis_limit();
    check_dirichlet_protocol();
    check_directional_ablation(threads);
    check_determinism();
    check_full_fidelity(threads);

    std::printf("%d failed, %d skipped\n", failures, skips);
    return failures == 0 ? 0 : 1;
}
