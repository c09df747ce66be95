#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("s2vgd_cli_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(S2VGD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json without_wall_time(const fs::path& p) {
    auto j = nlohmann::json::parse(slurp(p));
    j.erase("wall_time_seconds");
    return j;
}

} // namespace

TEST_CASE("regress synthetic writes deterministic artifacts") {
    TempDir a("regress_rerun");
    const std::string cmd =
        "regress --dataset synthetic --hidden 10 --M 3 --epochs 5 --seed 7 --workers 1 --out " +
        a.path.string();
    REQUIRE(run_cli(cmd) == 0);
    for (const char* f : {"metrics.csv", "trace.csv", "summary.json", "checkpoint.json"})
        REQUIRE(fs::exists(a.path / f));
    const std::string metrics1 = slurp(a.path / "metrics.csv");
    const std::string trace1 = slurp(a.path / "trace.csv");
    const auto summary1 = without_wall_time(a.path / "summary.json");

    REQUIRE(run_cli(cmd) == 0); // identical rerun into the same directory
    REQUIRE(slurp(a.path / "metrics.csv") == metrics1);
    REQUIRE(slurp(a.path / "trace.csv") == trace1);
    REQUIRE(without_wall_time(a.path / "summary.json") == summary1);

    const auto summary = nlohmann::json::parse(slurp(a.path / "summary.json"));
    REQUIRE(summary["config"]["K"] == 1);   // documented defaults
    REQUIRE(summary["config"]["M"] == 3);
}

TEST_CASE("regress defaults to K=1 and M=20") {
    TempDir d("regress_defaults");
    REQUIRE(run_cli("regress --dataset synthetic --hidden 5 --epochs 1 --seed 1 --out " +
                    d.path.string()) == 0);
    const auto summary = nlohmann::json::parse(slurp(d.path / "summary.json"));
    REQUIRE(summary["config"]["K"] == 1);
    REQUIRE(summary["config"]["M"] == 20);
}

TEST_CASE("classify emits a normalized probability grid") {
    TempDir d("classify");
    REQUIRE(run_cli("classify --dataset synthetic --hidden 8 --M 4 --epochs 10 --seed 3 "
                    "--grid-res 9 --out " +
                    d.path.string()) == 0);
    REQUIRE(fs::exists(d.path / "grid.csv"));
    std::ifstream grid(d.path / "grid.csv");
    std::string line;
    std::getline(grid, line);
    REQUIRE(line == "x1,x2,p0,p1");
    int rows = 0;
    while (std::getline(grid, line)) {
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        REQUIRE(vals.size() == 4);
        REQUIRE_THAT(vals[2] + vals[3], Catch::Matchers::WithinAbs(1.0, 1e-9));
        ++rows;
    }
    REQUIRE(rows == 81);
}

TEST_CASE("bandit run artifacts and greedy equivalence") {
    TempDir a("bandit_a"), b("bandit_b");
    const std::string common =
        " --env mushroom_synthetic --steps 12 --M 3 --synth-items 100 --synth-dim 6 "
        "--n-update 2 --batch 8 --seed 5 --workers 1 --out ";
    REQUIRE(run_cli("bandit --method greedy" + common + a.path.string()) == 0);
    REQUIRE(run_cli("bandit --method eps_greedy:0" + common + b.path.string()) == 0);
    REQUIRE(slurp(a.path / "run.csv") == slurp(b.path / "run.csv"));

    std::ifstream run(a.path / "run.csv");
    std::string line;
    std::getline(run, line);
    REQUIRE(line == "step,action,reward,cumulative_reward,cumulative_regret");
    double prev = 0.0;
    while (std::getline(run, line)) {
        const auto last_comma = line.rfind(',');
        const double regret = std::stod(line.substr(last_comma + 1));
        REQUIRE(regret >= prev);
        prev = regret;
    }
}

TEST_CASE("rl smoke run") {
    TempDir d("rl");
    REQUIRE(run_cli("rl --M 2 --iters 3 --episodes 2 --seed 11 --workers 1 --out " +
                    d.path.string()) == 0);
    std::ifstream run(d.path / "run.csv");
    std::string line;
    std::getline(run, line);
    REQUIRE(line == "iteration,mean_return,std_return,ksd,alpha");
    int rows = 0;
    while (std::getline(run, line)) ++rows;
    REQUIRE(rows == 3);
    const auto summary = nlohmann::json::parse(slurp(d.path / "summary.json"));
    REQUIRE(summary["config"]["alpha"] == 10.0);
    REQUIRE(summary["config"]["hidden"] == nlohmann::json::array({25, 10}));
}

TEST_CASE("json config file merges under explicit flags") {
    TempDir d("config");
    const fs::path cfg_path = d.path / "cfg.json";
    {
        std::ofstream out(cfg_path);
        out << R"({"hidden": [6], "M": 2, "epochs": 3})";
    }
    REQUIRE(run_cli("regress --dataset synthetic --seed 2 --config " + cfg_path.string() +
                    " --M 4 --out " + d.path.string()) == 0);
    const auto summary = nlohmann::json::parse(slurp(d.path / "summary.json"));
    REQUIRE(summary["config"]["hidden"] == nlohmann::json::array({6}));
    REQUIRE(summary["config"]["M"] == 4); // flag wins over file
    REQUIRE(summary["config"]["epochs"] == 3);

    const fs::path bad_path = d.path / "bad.json";
    {
        std::ofstream out(bad_path);
        out << R"({"no_such_key": 1})";
    }
    REQUIRE(run_cli("regress --dataset synthetic --seed 2 --config " + bad_path.string() +
                    " --out " + d.path.string()) == 2);
}

TEST_CASE("exit codes distinguish config and data errors") {
    TempDir d("exit_codes");
    REQUIRE(run_cli("regress --dataset synthetic --seed 1 --definitely-not-a-flag --out " +
                    d.path.string()) == 2);
    REQUIRE(run_cli("regress --dataset /no/such/file.csv --seed 1 --out " + d.path.string()) ==
            3);
    REQUIRE(run_cli("bandit --env nope --steps 2 --seed 1 --out " + d.path.string()) == 2);
    REQUIRE(run_cli("regress --dataset synthetic --out " + d.path.string()) == 2); // seed required
}

TEST_CASE("diag passes within its time budget") {
    const auto start = std::chrono::steady_clock::now();
    REQUIRE(run_cli("diag") == 0);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    REQUIRE(seconds < 60.0);
}
