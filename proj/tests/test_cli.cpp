#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include <httplib.h>

#include "centaur/serialize.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string output;  // stdout and stderr
};

Outcome cli(const std::string& args, const std::string& env = {}) {
    const std::string cmd = env + (env.empty() ? "" : " ") + CENTAUR_CLI_PATH + " " + args + " 2>&1";
    Outcome o;
    FILE* p = popen(cmd.c_str(), "r");
    std::array<char, 512> buf{};
    while (fgets(buf.data(), buf.size(), p)) o.output += buf.data();
    const int st = pclose(p);
    o.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("centaur_cli_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_config(const fs::path& dir, const std::string& body) {
    const auto p = dir / "config.json";
    std::ofstream(p) << body;
    return p;
}

const char* kConfig = R"({
  "schema_version": 1,
  "master_seed": 11,
  "generator": {"n_records": 240, "d_shared": 2, "d_private": 1, "true_weights": [1.0, -1.0, 1.5]},
  "human": {"view": "shared", "anchor_strength": 0.5, "bias_anchor": 0.9},
  "replications": 2,
  "arms": [{"name": "machine_only", "kind": "machine_only"},
           {"name": "cost", "kind": "centaur", "centaur": {"technique": "constrained_cost", "lambda": 1.0}}]
})";

}  // namespace

TEST(CliRun, WritesParseableOutputs) {
    const auto d = scratch("run");
    const auto o = cli("run " + write_config(d, kConfig).string() + " --out " + (d / "out").string());
    ASSERT_EQ(o.code, 0) << o.output;
    const auto report = centaur::Json::parse(slurp(d / "out" / "report.json"));
    EXPECT_EQ(report["arms"].size(), 2u);
    const auto manifest = centaur::Json::parse(slurp(d / "out" / "manifest.json"));
    EXPECT_EQ(manifest["master_seed"], 11);
    EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), 16u);
    EXPECT_EQ(slurp(d / "out" / "summary.csv").rfind("arm,metric,mean,stdev,n\n", 0), 0u);
}

TEST(CliRun, RerunIsByteIdentical) {
    const auto d = scratch("rerun");
    const auto cfg = write_config(d, kConfig).string();
    ASSERT_EQ(cli("run " + cfg + " --out " + (d / "a").string()).code, 0);
    ASSERT_EQ(cli("run " + cfg + " --out " + (d / "b").string()).code, 0);
    EXPECT_EQ(slurp(d / "a" / "report.json"), slurp(d / "b" / "report.json"));
    EXPECT_EQ(slurp(d / "a" / "summary.csv"), slurp(d / "b" / "summary.csv"));
}

TEST(CliRun, SeedEnvironmentOverride) {
    const auto d = scratch("seed");
    const auto cfg = write_config(d, kConfig).string();
    ASSERT_EQ(cli("run " + cfg + " --out " + (d / "a").string(), "CENTAUR_SEED=99").code, 0);
    const auto manifest = centaur::Json::parse(slurp(d / "a" / "manifest.json"));
    EXPECT_EQ(manifest["master_seed"], 99);
    EXPECT_EQ(manifest["seed_source"], "CENTAUR_SEED");
    ASSERT_EQ(cli("run " + cfg + " --out " + (d / "b").string()).code, 0);
    EXPECT_NE(slurp(d / "a" / "report.json"), slurp(d / "b" / "report.json"));
    EXPECT_EQ(cli("run " + cfg + " --out " + (d / "c").string(), "CENTAUR_SEED=abc").code, 2);
}

TEST(CliRun, ConfigurationErrorsExitTwo) {
    const auto d = scratch("errors");
    auto o = cli("run " + (d / "missing.json").string() + " --out " + (d / "o").string());
    EXPECT_EQ(o.code, 2);
    EXPECT_NE(o.output.find("missing.json"), std::string::npos);
    std::string bad = kConfig;
    bad.replace(bad.find("\"replications\""), 14, "\"replicationz\"");
    o = cli("run " + write_config(d, bad).string() + " --out " + (d / "o").string());
    EXPECT_EQ(o.code, 2);
    EXPECT_NE(o.output.find("replicationz"), std::string::npos);
    EXPECT_EQ(cli("run").code, 2);
    EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST(CliRun, RuntimeFailureExitsOne) {
    const auto d = scratch("runtime");
    const auto cfg = write_config(d, R"({
      "schema_version": 1,
      "generator": {"n_records": 100, "d_shared": 2, "d_private": 1, "true_weights": [1, 1, 1]},
      "arms": [{"name": "bad", "kind": "centaur", "centaur": {"technique": "finetune", "tuning_mask": ["nope"]}}]
    })");
    const auto o = cli("run " + cfg.string() + " --out " + (d / "o").string());
    EXPECT_EQ(o.code, 1) << o.output;
}

TEST(CliSweep, FivePointGridGivesFiveRows) {
    const auto d = scratch("sweep");
    const auto o = cli("sweep " + write_config(d, kConfig).string() +
                       " --knob lambda --grid 0,0.5,1,2,4 --out " + (d / "o").string());
    ASSERT_EQ(o.code, 0) << o.output;
    std::istringstream csv(slurp(d / "o" / "frontier.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "knob,phi_p_mean,phi_b_mean");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 5);
    EXPECT_TRUE(fs::exists(d / "o" / "report.json"));
    EXPECT_TRUE(fs::exists(d / "o" / "manifest.json"));
}

TEST(CliSweep, SinglePointMatchesRun) {
    const auto d = scratch("single");
    const auto cfg = write_config(d, kConfig).string();
    ASSERT_EQ(cli("sweep " + cfg + " --knob lambda --grid 1 --out " + (d / "s").string()).code, 0);
    ASSERT_EQ(cli("run " + cfg + " --out " + (d / "r").string()).code, 0);
    const auto run = centaur::Json::parse(slurp(d / "r" / "report.json"));
    const auto sweep = centaur::Json::parse(slurp(d / "s" / "report.json"));
    EXPECT_EQ(sweep["points"][0]["report"], run);
    std::istringstream csv(slurp(d / "s" / "frontier.csv"));
    std::string header, row;
    std::getline(csv, header);
    std::getline(csv, row);
    const auto& cost = run["arms"][1];
    char expect[128];
    std::snprintf(expect, sizeof expect, "1,%.17g,%.17g", cost["phi_p"]["mean"].get<double>(),
                  cost["phi_b"]["mean"].get<double>());
    EXPECT_EQ(row, expect);
}

TEST(CliSweep, GridErrorsExitTwo) {
    const auto d = scratch("sweeperr");
    const auto cfg = write_config(d, kConfig).string();
    EXPECT_EQ(cli("sweep " + cfg + " --knob lambda --grid '' --out " + (d / "o").string()).code, 2);
    EXPECT_EQ(cli("sweep " + cfg + " --knob lambda --grid 2,1 --out " + (d / "o").string()).code, 2);
    EXPECT_EQ(cli("sweep " + cfg + " --knob gamma --grid 1 --out " + (d / "o").string()).code, 2);
    EXPECT_EQ(cli("sweep " + cfg + " --knob beta --grid 1 --out " + (d / "o").string()).code, 2);
    EXPECT_EQ(cli("sweep " + cfg + " --knob lambda --grid 1,x --out " + (d / "o").string()).code, 2);
}

TEST(CliGradcheck, PristineBuildPasses) {
    const auto o = cli("gradcheck");
    EXPECT_EQ(o.code, 0) << o.output;
    for (const char* name : {"logistic", "squared", "mlp_logistic", "reward_triplet_loss", "policy_objective"})
        EXPECT_NE(o.output.find(name), std::string::npos) << name;
}

TEST(CliGradcheck, SignFlippedDoubleFails) {
    const auto o = cli("gradcheck --with-sign-flip-double");
    EXPECT_EQ(o.code, 1);
    EXPECT_NE(o.output.find("sign_flipped_logistic"), std::string::npos);
}

TEST(CliServe, BadBindAddressExitsOne) {
    EXPECT_EQ(cli("serve --bind nonsense").code, 1);
    EXPECT_EQ(cli("serve --bind 127.0.0.1:99999").code, 1);
    EXPECT_EQ(cli("serve --bind 203.0.113.77:8080").code, 1);  // not a local address
}

TEST(CliServe, HealthEndpointAnswersQuickly) {
    const auto d = scratch("serve");
    const int port = 18000 + static_cast<int>(::getpid() % 1000);
    const auto pidfile = d / "pid";
    const auto start = std::chrono::steady_clock::now();
    ASSERT_EQ(std::system((std::string(CENTAUR_CLI_PATH) + " serve --bind 127.0.0.1:" + std::to_string(port) + " > " +
                           (d / "log").string() + " 2>&1 & echo $! > " + pidfile.string())
                              .c_str()),
              0);
    httplib::Client client("127.0.0.1", port);
    int status = 0;
    while (std::chrono::steady_clock::now() - start < std::chrono::seconds(5)) {
        if (auto r = client.Get("/healthz")) {
            status = r->status;
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    auto created = client.Post("/sessions", "", "application/json");
    const int killed = std::system(("kill $(cat " + pidfile.string() + ")").c_str());
    EXPECT_EQ(killed, 0);
    EXPECT_EQ(status, 200);
    EXPECT_LT(elapsed, 2.0);
    ASSERT_TRUE(created);
    EXPECT_EQ(created->status, 201);
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    EXPECT_NE(slurp(d / "log").find("GET /healthz 200"), std::string::npos);
}
