// Command-line front end: synthetic data generation, episodic evaluation,
// component ablation sweeps, and gradient checking.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "am/diff.hpp"
#include "am/embeddings.hpp"
#include "am/episodes.hpp"
#include "am/harness.hpp"
#include "am/solver.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct EvalOptions {
    std::string config_path;
    std::string data_path;
    std::string out_path = "eval.csv";
    int shots = 1;
    int ways = 5;
    int queries = 75;
    int tasks = 1000;
    std::string imbalance = "dirichlet:2";
    std::string loss = "auto";
    std::string preprocessing = "l2";
    int r_steps = 1000;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    int threads = 0;
    std::optional<int> k_override;
    std::optional<double> beta_override;
    std::optional<double> tau_override;
    std::optional<double> lambda1, lambda2, lambda3;
};

am::TaskConfig parse_task_config(const EvalOptions& opt) {
    am::TaskConfig tc;
    tc.n_way = opt.ways;
    tc.k_shot = opt.shots;
    tc.m_query = opt.queries;
    tc.seed = opt.seed;
    tc.num_tasks = opt.tasks;
    if (opt.imbalance == "balanced") {
        tc.imbalance = am::Imbalance::Balanced;
    } else if (opt.imbalance.rfind("dirichlet", 0) == 0) {
        tc.imbalance = am::Imbalance::Dirichlet;
        const auto colon = opt.imbalance.find(':');
        if (colon != std::string::npos) tc.gamma = std::stod(opt.imbalance.substr(colon + 1));
        if (tc.gamma <= 0) throw CLI::ValidationError("--imbalance", "gamma must be positive");
    } else {
        throw CLI::ValidationError("--imbalance", "expected 'balanced' or 'dirichlet:<gamma>'");
    }
    return tc;
}

am::SolverConfig parse_solver_config(const EvalOptions& opt, const am::TaskConfig& tc) {
    // Loss mode defaults to the task distribution: alpha-entropies for
    // Dirichlet tasks, Shannon terms for balanced ones.
    am::LossMode mode = tc.imbalance == am::Imbalance::Balanced ? am::LossMode::Balanced
                                                                : am::LossMode::Imbalanced;
    std::optional<double> alpha_override;
    if (opt.loss != "auto") {
        if (opt.loss == "balanced") {
            mode = am::LossMode::Balanced;
        } else if (opt.loss.rfind("alpha", 0) == 0) {
            mode = am::LossMode::Imbalanced;
            const auto colon = opt.loss.find(':');
            if (colon != std::string::npos) alpha_override = std::stod(opt.loss.substr(colon + 1));
        } else {
            throw CLI::ValidationError("--loss", "expected 'balanced' or 'alpha[:<alpha>]'");
        }
    }
    am::SolverConfig sc = am::default_solver_config(opt.shots, mode);
    if (alpha_override) sc.loss.alpha = *alpha_override;
    if (sc.loss.mode == am::LossMode::Imbalanced && (sc.loss.alpha <= 0 || sc.loss.alpha == 1.0))
        throw CLI::ValidationError("--loss", "alpha must be positive and != 1");
    sc.r_steps = opt.r_steps;
    sc.lr = opt.lr;
    if (opt.preprocessing == "l2")
        sc.preprocessing = am::Preprocessing::L2;
    else if (opt.preprocessing == "plc")
        sc.preprocessing = am::Preprocessing::PLC;
    else
        throw CLI::ValidationError("--preprocessing", "expected 'l2' or 'plc'");
    if (opt.k_override) sc.k_neighbors = *opt.k_override >= 1 ? std::optional<int>(*opt.k_override)
                                                              : std::nullopt;
    if (opt.beta_override) sc.beta = *opt.beta_override;
    if (opt.tau_override) sc.tau = *opt.tau_override;
    if (opt.lambda1) sc.loss.lambda1 = *opt.lambda1;
    if (opt.lambda2) sc.loss.lambda2 = *opt.lambda2;
    if (opt.lambda3) sc.loss.lambda3 = *opt.lambda3;
    return sc;
}

int effective_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Plain `key = value` config files, `#` comments, no nesting. Keys are flag
/// names without the leading dashes. Precedence: CLI flag > config > default.
std::vector<std::pair<std::string, std::string>> parse_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw am::DataError(path + ": cannot open config file");
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    auto trim = [](std::string s) {
        const auto from = s.find_first_not_of(" \t\r");
        const auto to = s.find_last_not_of(" \t\r");
        return from == std::string::npos ? std::string() : s.substr(from, to - from + 1);
    };
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw CLI::ValidationError("--config", path + ":" + std::to_string(lineno) +
                                                       ": expected key = value");
        entries.emplace_back(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
    return entries;
}

void apply_config_overlay(CLI::App* cmd, const std::string& path) {
    if (path.empty()) return;
    for (const auto& [key, value] : parse_kv_file(path)) {
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (opt == nullptr || key == "config")
            throw CLI::ValidationError("--config", "unknown key '" + key + "'");
        if (opt->count() > 0) continue;  // explicit flag wins
        opt->add_result(value);
        opt->run_callback();
    }
}

void add_eval_flags(CLI::App* cmd, EvalOptions& opt) {
    cmd->add_option("--config", opt.config_path, "key=value config file (CLI flags take precedence)");
    cmd->add_option("--data", opt.data_path, "AMEB embedding file");
    cmd->add_option("--out", opt.out_path, "output CSV path")->capture_default_str();
    cmd->add_option("--shots", opt.shots, "support examples per class; sets k=20,beta=0.8,alpha=2 (1-shot) or k=10,beta=0.9,alpha=5 (5-shot)")
        ->check(CLI::IsMember({1, 5}))
        ->capture_default_str();
    cmd->add_option("--ways", opt.ways, "classes per task")->capture_default_str();
    cmd->add_option("--queries", opt.queries, "total query examples per task")->capture_default_str();
    cmd->add_option("--tasks", opt.tasks, "number of tasks")->capture_default_str();
    cmd->add_option("--imbalance", opt.imbalance, "'balanced' or 'dirichlet:<gamma>'")
        ->capture_default_str();
    cmd->add_option("--loss", opt.loss, "'balanced' or 'alpha[:<alpha>]'; default follows --imbalance")
        ->capture_default_str();
    cmd->add_option("--preprocessing", opt.preprocessing, "'l2' or 'plc'")->capture_default_str();
    cmd->add_option("--r", opt.r_steps, "optimization steps per task")->capture_default_str();
    cmd->add_option("--lr", opt.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--seed", opt.seed, "RNG seed")->capture_default_str();
    cmd->add_option("--threads", opt.threads, "worker threads (0 = all cores)")
        ->envname("AM_THREADS")
        ->capture_default_str();
    cmd->add_option("--k", opt.k_override,
                    "override kNN size (default 20 for 1-shot, 10 for 5-shot; 0 = complete graph)");
    cmd->add_option("--beta", opt.beta_override,
                    "override propagation damping (default 0.8 for 1-shot, 0.9 for 5-shot)");
    cmd->add_option("--tau", opt.tau_override, "override softmax scale (default 15)");
    cmd->add_option("--lambda1", opt.lambda1, "override marginal-entropy weight (default 1)");
    cmd->add_option("--lambda2", opt.lambda2,
                    "override conditional-entropy weight (default 1; 10 for the balanced loss)");
    cmd->add_option("--lambda3", opt.lambda3, "override cross-entropy weight (default 1)");
}

int run_synth(const am::SynthConfig& cfg, const std::string& out_path) {
    const am::EmbeddingSet set = am::synth_gaussian(cfg);
    am::save_embeddings(set, out_path);
    std::cout << out_path << ": " << set.count() << " records (d=" << set.dim
              << ", classes=" << set.num_classes << ")\n";
    return 0;
}

int run_eval(const EvalOptions& opt) {
    if (opt.data_path.empty()) throw CLI::ValidationError("--data", "an AMEB file is required");
    const am::TaskConfig tc = parse_task_config(opt);
    const am::SolverConfig sc = parse_solver_config(opt, tc);
    const am::EmbeddingSet set = am::load_embeddings(opt.data_path);
    const am::EvalReport report = am::run_eval(set, tc, sc, effective_threads(opt.threads));
    am::write_report_csv(report, opt.out_path);
    am::write_config_snapshot(report, opt.out_path);
    std::printf("tasks=%d mean_accuracy=%.4f ci95=%.4f time=%.1fs -> %s\n", tc.num_tasks,
                report.mean_accuracy, report.ci95, report.wall_time_seconds, opt.out_path.c_str());
    return 0;
}

struct AblationVariant {
    const char* name;
    bool knn;
    am::AblationFlags flags;
    am::Preprocessing prep;
};

int run_ablate(const EvalOptions& opt) {
    if (opt.data_path.empty()) throw CLI::ValidationError("--data", "an AMEB file is required");
    const am::TaskConfig tc = parse_task_config(opt);
    const am::SolverConfig base = parse_solver_config(opt, tc);
    const am::EmbeddingSet set = am::load_embeddings(opt.data_path);
    const int threads = effective_threads(opt.threads);

    const am::AblationFlags frozen{false, false, false};
    const am::AblationFlags c_only{true, false, false};
    const am::AblationFlags cg{true, true, false};
    const am::AblationFlags cb{true, false, true};
    const am::AblationFlags cgb{true, true, true};
    const std::vector<AblationVariant> variants = {
        {"dense", false, frozen, am::Preprocessing::L2},
        {"nn_k", true, frozen, am::Preprocessing::L2},
        {"nn_k+C", true, c_only, am::Preprocessing::L2},
        {"nn_k+C+G", true, cg, am::Preprocessing::L2},
        {"nn_k+C+B", true, cb, am::Preprocessing::L2},
        {"nn_k+C+G+B", true, cgb, am::Preprocessing::L2},
        {"nn_k+C+G+B+PLC", true, cgb, am::Preprocessing::PLC},
    };

    std::ofstream out(opt.out_path, std::ios::trunc);
    if (!out) throw am::DataError(opt.out_path + ": cannot open for writing");
    out << "variant,mean_accuracy,ci95,num_tasks,seed,wall_time_seconds\n";
    for (const auto& var : variants) {
        am::SolverConfig sc = base;
        sc.ablation = var.flags;
        sc.preprocessing = var.prep;
        if (!var.knn) sc.k_neighbors = std::nullopt;
        const am::EvalReport report = am::run_eval(set, tc, sc, threads);
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%.17g,%.17g,%d,%llu,%.3f\n", var.name,
                      report.mean_accuracy, report.ci95, tc.num_tasks,
                      static_cast<unsigned long long>(tc.seed), report.wall_time_seconds);
        out << line;
        std::printf("%-16s mean_accuracy=%.4f ci95=%.4f\n", var.name, report.mean_accuracy,
                    report.ci95);
    }
    if (!out.good()) throw am::DataError(opt.out_path + ": write failure");
    std::cout << "wrote " << opt.out_path << "\n";
    return 0;
}

struct GradCheckOptions {
    int episodes = 20;
    std::uint64_t seed = 7;
    double h = 1e-5;
    double tol = 1e-4;
    bool inject_bug = false;
};

int run_gradcheck(const GradCheckOptions& opt) {
    std::mt19937_64 rng(am::splitmix64(opt.seed));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    am::SynthConfig synth;
    synth.num_classes = 7;
    synth.dim = 8;
    synth.per_class = 40;
    synth.class_sep = 2.0;
    synth.noise_sigma = 1.0;
    synth.seed = opt.seed;
    const am::EmbeddingSet set = am::synth_gaussian(synth);

    am::GradCheckStats total;
    for (int e = 0; e < opt.episodes; ++e) {
        am::TaskConfig tc;
        tc.n_way = 5;
        tc.k_shot = 1;
        tc.m_query = 6;
        tc.imbalance = am::Imbalance::Dirichlet;
        tc.gamma = 2.0;
        tc.seed = opt.seed;
        const am::Episode ep = am::sample_episode(set, tc, static_cast<std::uint64_t>(e));

        am::SolverConfig sc = am::default_solver_config(1, e % 2 == 0 ? am::LossMode::Imbalanced
                                                                      : am::LossMode::Balanced);
        sc.k_neighbors = (e >> 1) % 2 == 0 ? std::optional<int>(3) : std::nullopt;
        sc.loss.alpha = (e >> 2) % 2 == 0 ? 2.0 : 5.0;
        sc.preprocessing = am::Preprocessing::L2;

        auto [support, query] =
            am::apply_preprocessing(ep.support_vectors, ep.query_vectors, sc.preprocessing);
        const Eigen::MatrixXd y = am::one_hot(ep.support_labels, tc.n_way);
        am::ManifoldParams phi = am::init_manifold_params(support, y, query, sc);
        // Perturb all parameter groups away from their stationary-ish init so
        // the check exercises generic points.
        for (Eigen::Index i = 0; i < phi.centroids.size(); ++i) phi.centroids(i) += 0.1 * unit(rng);
        for (Eigen::Index i = 0; i < phi.g_raw.size(); ++i) phi.g_raw(i) = 0.4 * unit(rng);
        for (Eigen::Index i = 0; i < phi.b_raw.size(); ++i) phi.b_raw(i) = 1.0 + 0.8 * unit(rng);

        const am::GradCheckStats stats =
            am::grad_check_episode(support, query, y, phi, sc.loss, opt.h, opt.inject_bug);
        total.max_rel_centroids = std::max(total.max_rel_centroids, stats.max_rel_centroids);
        total.max_rel_g = std::max(total.max_rel_g, stats.max_rel_g);
        total.max_rel_b = std::max(total.max_rel_b, stats.max_rel_b);
        total.checked += stats.checked;
        total.skipped += stats.skipped;
    }

    const bool pass = total.max_rel() < opt.tol && total.skip_rate() < 0.05;
    std::printf("episodes=%d coords=%zu skipped=%zu (%.2f%%)\n", opt.episodes, total.checked,
                total.skipped, 100.0 * total.skip_rate());
    std::printf("max_rel_err centroids=%.3e g_raw=%.3e b_raw=%.3e (tol %.1e)\n",
                total.max_rel_centroids, total.max_rel_g, total.max_rel_b, opt.tol);
    std::printf("%s\n", pass ? "PASS" : "FAIL");
    return pass ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive-manifold transductive few-shot classification on precomputed embeddings"};
    app.require_subcommand(1);

    am::SynthConfig synth_cfg;
    std::string synth_out;
    std::string synth_config;
    auto* synth = app.add_subcommand("synth", "generate a synthetic Gaussian AMEB file");
    synth->add_option("--config", synth_config, "key=value config file (CLI flags take precedence)");
    synth->add_option("--classes", synth_cfg.num_classes, "number of classes")->capture_default_str();
    synth->add_option("--dim", synth_cfg.dim, "embedding dimension")->capture_default_str();
    synth->add_option("--per-class", synth_cfg.per_class, "examples per class")->capture_default_str();
    synth->add_option("--sep", synth_cfg.class_sep, "distance scale between class means")
        ->capture_default_str();
    synth->add_option("--sigma", synth_cfg.noise_sigma, "within-class std")->capture_default_str();
    synth->add_option("--seed", synth_cfg.seed, "RNG seed")->capture_default_str();
    synth->add_option("--out", synth_out, "output AMEB path");

    EvalOptions eval_opt;
    auto* eval = app.add_subcommand("eval", "evaluate over sampled episodes, write per-task CSV");
    add_eval_flags(eval, eval_opt);

    EvalOptions ablate_opt;
    ablate_opt.out_path = "ablate.csv";
    auto* ablate = app.add_subcommand(
        "ablate", "run the 7-variant component grid (shared task stream) and write a summary CSV");
    add_eval_flags(ablate, ablate_opt);

    GradCheckOptions gc_opt;
    std::string gc_config;
    auto* gradcheck =
        app.add_subcommand("gradcheck", "compare analytic gradients against central differences");
    gradcheck->set_help_flag("--help", "print help");  // frees -h; the FD step flag is --h
    gradcheck->add_option("--config", gc_config, "key=value config file (CLI flags take precedence)");
    gradcheck->add_option("--episodes", gc_opt.episodes, "episodes to check")->capture_default_str();
    gradcheck->add_option("--seed", gc_opt.seed, "RNG seed")->capture_default_str();
    gradcheck->add_option("--h", gc_opt.h, "FD step size")->capture_default_str();
    gradcheck->add_option("--tol", gc_opt.tol, "max relative error")->capture_default_str();
    gradcheck->add_flag("--inject-sign-flip", gc_opt.inject_bug)->group("");  // test fixture

    try {
        app.parse(argc, argv);
        if (synth->parsed()) {
            apply_config_overlay(synth, synth_config);
            if (synth_out.empty()) throw CLI::ValidationError("--out", "an output path is required");
            return run_synth(synth_cfg, synth_out);
        }
        if (eval->parsed()) {
            apply_config_overlay(eval, eval_opt.config_path);
            return run_eval(eval_opt);
        }
        if (ablate->parsed()) {
            apply_config_overlay(ablate, ablate_opt.config_path);
            return run_ablate(ablate_opt);
        }
        if (gradcheck->parsed()) {
            apply_config_overlay(gradcheck, gc_config);
            return run_gradcheck(gc_opt);
        }
        return kExitUsage;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const am::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const am::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid arguments: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
