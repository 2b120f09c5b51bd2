#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return AM_CLI_PATH; }

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "am_cli_tests";
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = std::string(cli_path()) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string run_capture(const std::string& args) {
    const fs::path out = work_dir() / "stdout.txt";
    const std::string cmd =
        std::string(cli_path()) + " " + args + " >" + out.string() + " 2>&1";
    [[maybe_unused]] const int status = std::system(cmd.c_str());
    std::ifstream in(out);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    return lines;
}

fs::path make_data(const std::string& name, const std::string& extra = "") {
    const fs::path data = work_dir() / name;
    REQUIRE(run("synth --classes 12 --dim 16 --per-class 90 --sep 4.0 --sigma 1.0 --seed 7 --out " +
                data.string() + extra) == 0);
    return data;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("synth writes the expected record count deterministically") {
    const fs::path a = work_dir() / "a.ameb";
    const fs::path b = work_dir() / "b.ameb";
    CHECK(run("synth --classes 20 --dim 64 --per-class 600 --sep 4.0 --sigma 1.0 --seed 7 --out " +
              a.string()) == 0);
    CHECK(fs::file_size(a) == 24 + 12000ull * (4 + 4 * 64));
    CHECK(run("synth --classes 20 --dim 64 --per-class 600 --sep 4.0 --sigma 1.0 --seed 7 --out " +
              b.string()) == 0);
    CHECK(slurp(a) == slurp(b));

    SUBCASE("missing --out is a usage error") {
        CHECK(run("synth --classes 4 --dim 8") == 1);
    }
}

TEST_CASE("eval writes one row per task plus a summary") {
    const fs::path data = make_data("eval_data.ameb");
    const fs::path csv = work_dir() / "eval.csv";
    CHECK(run("eval --data " + data.string() +
              " --shots 1 --imbalance dirichlet:2 --tasks 20 --r 3 --seed 1 --threads 2 --out " +
              csv.string()) == 0);
    CHECK(count_lines(csv) == 22);  // header + 20 tasks + summary

    SUBCASE("defaults follow the shot count") {
        const std::string cfg = slurp(work_dir() / "eval.cfg");
        CHECK(cfg.find("k_neighbors=20") != std::string::npos);
        CHECK(cfg.find("beta=0.8") != std::string::npos);
        CHECK(cfg.find("alpha=2") != std::string::npos);
        CHECK(cfg.find("tau=15") != std::string::npos);
        CHECK(cfg.find("lambda2=1\n") != std::string::npos);
    }
    SUBCASE("5-shot defaults") {
        const fs::path csv5 = work_dir() / "eval5.csv";
        CHECK(run("eval --data " + data.string() +
                  " --shots 5 --tasks 2 --r 1 --seed 1 --out " + csv5.string()) == 0);
        const std::string cfg = slurp(work_dir() / "eval5.cfg");
        CHECK(cfg.find("k_neighbors=10") != std::string::npos);
        CHECK(cfg.find("beta=0.9") != std::string::npos);
        CHECK(cfg.find("alpha=5") != std::string::npos);
    }
    SUBCASE("balanced imbalance defaults to the balanced loss with lambda2=10") {
        const fs::path csvb = work_dir() / "evalb.csv";
        CHECK(run("eval --data " + data.string() +
                  " --imbalance balanced --queries 75 --tasks 2 --r 1 --seed 1 --out " +
                  csvb.string()) == 0);
        const std::string cfg = slurp(work_dir() / "evalb.cfg");
        CHECK(cfg.find("loss=balanced") != std::string::npos);
        CHECK(cfg.find("lambda2=10") != std::string::npos);
    }
}

TEST_CASE("k = 0 selects the complete graph") {
    const fs::path data = make_data("kzero_data.ameb");
    const fs::path csv = work_dir() / "kzero.csv";
    CHECK(run("eval --data " + data.string() + " --k 0 --tasks 2 --r 1 --seed 1 --out " +
              csv.string()) == 0);
    const std::string cfg = slurp(work_dir() / "kzero.cfg");
    CHECK(cfg.find("k_neighbors=none") != std::string::npos);
}

TEST_CASE("eval rejects invalid flags") {
    const fs::path data = make_data("reject_data.ameb");
    CHECK(run("eval --data " + data.string() + " --loss alpha:1.0 --tasks 1 --r 1") == 1);
    CHECK(run("eval --data " + data.string() + " --shots 3 --tasks 1") == 1);
    CHECK(run("eval --data " + data.string() + " --imbalance nonsense --tasks 1") == 1);
    CHECK(run("eval --data /no/such/file.ameb --tasks 1") == 2);

    SUBCASE("corrupt data file is a data error") {
        const fs::path bad = work_dir() / "bad.ameb";
        std::ofstream(bad) << "XXXXnope";
        CHECK(run("eval --data " + bad.string() + " --tasks 1") == 2);
    }
}

TEST_CASE("config file overlays flags with CLI precedence") {
    const fs::path data = make_data("cfg_data.ameb");
    const fs::path cfg = work_dir() / "run.cfg";
    {
        std::ofstream out(cfg);
        out << "# config overlay\n";
        out << "tasks=4\n";
        out << "r=2\n";
        out << "seed=9\n";
    }
    const fs::path csv = work_dir() / "cfg_eval.csv";
    CHECK(run("eval --config " + cfg.string() + " --data " + data.string() + " --tasks 3 --out " +
              csv.string()) == 0);
    CHECK(count_lines(csv) == 5);  // CLI --tasks 3 wins over config tasks=4

    SUBCASE("unknown config keys are rejected by name") {
        {
            std::ofstream out(cfg, std::ios::app);
            out << "bogus_key=1\n";
        }
        const std::string msg = run_capture("eval --config " + cfg.string() + " --data " +
                                            data.string() + " --out " + csv.string());
        CHECK(run("eval --config " + cfg.string() + " --data " + data.string() + " --out " +
                  csv.string()) == 1);
        CHECK(msg.find("bogus_key") != std::string::npos);
    }
}

TEST_CASE("ablate emits the seven-variant grid on a shared seed") {
    const fs::path data = make_data("ablate_data.ameb");
    const fs::path csv = work_dir() / "ablate.csv";
    CHECK(run("ablate --data " + data.string() + " --tasks 3 --r 2 --seed 5 --threads 2 --out " +
              csv.string()) == 0);
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "variant,mean_accuracy,ci95,num_tasks,seed,wall_time_seconds");
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::istringstream ss(line);
        for (std::string tok; std::getline(ss, tok, ',');) fields.push_back(tok);
        REQUIRE(fields.size() == 6);
        names.push_back(fields[0]);
        CHECK(fields[3] == "3");
        CHECK(fields[4] == "5");  // every variant ran on the same task seed
    }
    CHECK(names == std::vector<std::string>{"dense", "nn_k", "nn_k+C", "nn_k+C+G", "nn_k+C+B",
                                            "nn_k+C+G+B", "nn_k+C+G+B+PLC"});
}

TEST_CASE("help lists every flag with its default") {
    CHECK(run("--help") == 0);
    for (const std::string sub : {"synth", "eval", "ablate", "gradcheck"})
        CHECK(run(sub + " --help") == 0);
    const std::string eval_help = run_capture("eval --help");
    for (const std::string flag :
         {"--data", "--shots", "--imbalance", "--loss", "--preprocessing", "--r", "--seed",
          "--threads", "--tasks", "--k", "--beta", "--tau", "--config"})
        CHECK(eval_help.find(flag) != std::string::npos);
    CHECK(eval_help.find("1000") != std::string::npos);   // r default
    CHECK(eval_help.find("0.0001") != std::string::npos); // lr default
    const std::string gc_help = run_capture("gradcheck --help");
    CHECK(gc_help.find("--h") != std::string::npos);
    CHECK(gc_help.find("1e-05") != std::string::npos);
}

TEST_CASE("gradcheck passes by default and catches an injected sign flip") {
    CHECK(run("gradcheck --episodes 3 --seed 5") == 0);
    const std::string out = run_capture("gradcheck --episodes 3 --seed 5");
    CHECK(out.find("PASS") != std::string::npos);

    SUBCASE("sign flip fails with exit 3") {
        CHECK(run("gradcheck --episodes 2 --seed 5 --inject-sign-flip") == 3);
        const std::string bad = run_capture("gradcheck --episodes 2 --seed 5 --inject-sign-flip");
        CHECK(bad.find("FAIL") != std::string::npos);
    }
    SUBCASE("larger h loosens agreement but passes at 1e-2") {
        CHECK(run("gradcheck --episodes 2 --seed 5 --h 1e-3 --tol 1e-2") == 0);
    }
}

TEST_SUITE_END();
