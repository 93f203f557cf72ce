#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "splitsim.h"
#include "splitsim/pipeline.hpp"

#ifndef SPLITSIM_CLI
#define SPLITSIM_CLI "splitsim"
#endif
#ifndef SPLITSIM_SOURCE_DIR
#define SPLITSIM_SOURCE_DIR "."
#endif

namespace {

namespace fs = std::filesystem;

std::string tiny_config(const std::string& out_dir) {
    nlohmann::json j{
        {"seed", 7},
        {"threads", 2},
        {"out_dir", out_dir},
        {"corpus", std::string(SPLITSIM_SOURCE_DIR) + "/data/corpus.txt"},
        {"lm",
         {{"layers", 3},
          {"d_in", 16},
          {"d_mid", 16},
          {"heads", 2},
          {"d_ff", 32},
          {"train", {{"steps", 60}, {"batch", 8}, {"lr", 3e-3}}}}},
        {"reward", {{"sequences", 3}, {"trials", 1}, {"pool", 8}}},
        {"agent", {{"total_steps", 200}, {"ppo", {{"n_step", 100}, {"batch", 50}}}}},
        {"surrogate",
         {{"collect", {{"n", 60}}}, {"epochs", 30}, {"k_folds", 3}, {"switch_records", 150}}},
        {"sweep",
         {{"p_list", {1, 2}}, {"loss_list", {0.0, 0.2}}, {"sequences", 4}, {"trials", 2}}},
        {"eval", {{"episodes", 12}}},
    };
    return j.dump();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SPLITSIM_CLI) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("stateless c api helpers") {
    CHECK(std::string(ss_version()) == "0.1.0");

    double out = 0.0;
    REQUIRE(ss_packet_loss_prob(1.0, 1.0, 0.3, &out) == SS_OK);
    CHECK(out == doctest::Approx(1.0 - std::exp(-0.09)).epsilon(1e-6));

    REQUIRE(ss_calibrate_m(0.2, 1.0, 0.5, &out) == SS_OK);
    double back = 0.0;
    REQUIRE(ss_packet_loss_prob(out, 1.0, 0.5, &back) == SS_OK);
    CHECK(back == doctest::Approx(0.2).epsilon(1e-5));

    REQUIRE(ss_snr_to_sigma(20.0, 1.0, &out) == SS_OK);
    CHECK(out == doctest::Approx(0.1));

    std::uint64_t flops = 0;
    REQUIRE(ss_flops_per_layer(16, 64, 4, &flops) == SS_OK);
    CHECK(flops == 647168);
    REQUIRE(ss_c_ue(16, 64, 4, 8, 8, &flops) == SS_OK);
    CHECK(flops == 5177344);

    CHECK(ss_packet_loss_prob(-1.0, 1.0, 0.3, &out) != SS_OK);
    CHECK(std::string(ss_last_error()).find("positive") != std::string::npos);
    CHECK(ss_c_ue(16, 64, 4, 8, 9, &flops) != SS_OK);
}

TEST_CASE("session validation errors") {
    ss_session* s = nullptr;
    CHECK(ss_session_open("{ not json", nullptr, 0, &s) == SS_INVALID_CONFIG);
    CHECK(ss_session_open("{}", nullptr, 0, &s) == SS_INVALID_CONFIG);  // no seed
    CHECK(ss_session_open(R"({"seed": 1, "agent": {"kind": "bogus"}})", nullptr, 0, &s) ==
          SS_INVALID_CONFIG);

    REQUIRE(ss_session_open(R"({"seed": 1, "corpus": "/nope/missing.txt"})", nullptr, 0,
                            &s) == SS_OK);
    CHECK(ss_run_train_lm(s) == SS_MISSING_INPUT);
    ss_session_close(s);

    // structurally malformed sections are configuration errors too
    CHECK(ss_session_open(R"({"seed": 1, "lm": 5})", nullptr, 0, &s) == SS_INVALID_CONFIG);
    CHECK(ss_session_open(R"({"seed": 1, "case": {"loss_range": [0.4]}})", nullptr, 0, &s) ==
          SS_OK);  // short arrays fall back to the builtin case
    ss_session_close(s);

    // dot-keyed overrides reach nested fields and are type-checked
    const char* bad[] = {"agent.ppo.gamma=7"};
    CHECK(ss_session_open(R"({"seed": 1})", bad, 1, &s) == SS_INVALID_CONFIG);
    const char* good[] = {"agent.ppo.gamma=0.5", "out_dir=/tmp/ss_ovr"};
    REQUIRE(ss_session_open(R"({"seed": 1})", good, 2, &s) == SS_OK);
    ss_session_close(s);
}

TEST_CASE("pipeline through the c api") {
    const std::string out_dir = "pipe_api_out";
    fs::remove_all(out_dir);
    const std::string cfg = tiny_config(out_dir);

    ss_session* s = nullptr;
    REQUIRE(ss_session_open(cfg.c_str(), nullptr, 0, &s) == SS_OK);
    CHECK(ss_session_config_hash(s) != 0);

    REQUIRE_MESSAGE(ss_run_train_lm(s) == SS_OK, ss_last_error());
    auto summary = nlohmann::json::parse(ss_session_summary(s));
    CHECK(summary.at("vocab_size").get<int>() > 10);
    const double v = summary.at("vocab_size").get<double>();
    CHECK(summary.at("clean_eval_ppl").get<double>() < 0.5 * v);
    CHECK(fs::exists(out_dir + "/lm.json"));

    REQUIRE_MESSAGE(ss_run_sweep(s) == SS_OK, ss_last_error());
    CHECK(fs::exists(out_dir + "/sweep.csv"));

    SUBCASE("loss-mode sweep: ideal rows equal the clean ppl; ppl rises with loss") {
        ss_session* sw = nullptr;
        const char* ovr[] = {"sweep.sigma=0.0", "out_dir=pipe_api_out/sweep0",
                             "lm.checkpoint=pipe_api_out/lm.json"};
        REQUIRE(ss_session_open(cfg.c_str(), ovr, 3, &sw) == SS_OK);
        REQUIRE_MESSAGE(ss_run_sweep(sw) == SS_OK, ss_last_error());
        ss_session_close(sw);

        std::istringstream in(slurp("pipe_api_out/sweep0/sweep.csv"));
        std::string line;
        std::getline(in, line);  // header
        // columns: p,mode,point,sigma,m,loss_prob,ppl,ppl_stderr
        std::map<int, std::map<double, double>> ppl_by_p;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            std::string f;
            std::vector<std::string> fields;
            while (std::getline(row, f, ',')) fields.push_back(f);
            ppl_by_p[std::stoi(fields[0])][std::stod(fields[2])] = std::stod(fields[6]);
        }
        // corruption must not help a trained model: ppl rises with loss
        for (auto& [p, cells] : ppl_by_p) {
            CHECK(cells.at(0.2) > cells.at(0.0));
            CHECK(cells.at(0.0) > 1.0);
        }
        // the sigma=0, loss=0 rows are the clean forward: identical across p
        // (split transparency), so every p shares one clean ppl
        double lo = 1e300, hi = -1e300;
        for (auto& [p, cells] : ppl_by_p) {
            lo = std::min(lo, cells.at(0.0));
            hi = std::max(hi, cells.at(0.0));
        }
        CHECK(hi - lo <= 1e-9);
    }

    REQUIRE_MESSAGE(ss_run_collect(s) == SS_OK, ss_last_error());
    REQUIRE_MESSAGE(ss_run_fit_surrogate(s) == SS_OK, ss_last_error());
    summary = nlohmann::json::parse(ss_session_summary(s));
    CHECK(summary.at("cv").at("k").get<int>() == 3);

    REQUIRE_MESSAGE(ss_run_train_agent(s) == SS_OK, ss_last_error());
    summary = nlohmann::json::parse(ss_session_summary(s));
    CHECK(summary.at("steps").get<int>() == 200);
    CHECK(summary.at("updates").get<int>() == 2);

    REQUIRE_MESSAGE(ss_run_eval(s) == SS_OK, ss_last_error());
    summary = nlohmann::json::parse(ss_session_summary(s));
    CHECK(summary.at("episodes").get<int>() == 12);
    // one row per episode plus the header
    std::istringstream eval_csv(slurp(out_dir + "/eval.csv"));
    std::string line;
    int rows = -1;
    while (std::getline(eval_csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 12);

    REQUIRE_MESSAGE(ss_run_analyze(s) == SS_OK, ss_last_error());
    CHECK(fs::exists(out_dir + "/eval.reward_distribution.json"));
    CHECK(fs::exists(out_dir + "/curves.csv"));
    ss_session_close(s);

    SUBCASE("re-running is byte identical modulo the manifest timestamp") {
        const std::string before = slurp(out_dir + "/runlog.csv");
        const std::string eval_before = slurp(out_dir + "/eval.csv");
        const std::string curves_before = slurp(out_dir + "/curves.csv");
        ss_session* s2 = nullptr;
        REQUIRE(ss_session_open(cfg.c_str(), nullptr, 0, &s2) == SS_OK);
        REQUIRE(ss_run_train_agent(s2) == SS_OK);
        REQUIRE(ss_run_eval(s2) == SS_OK);
        REQUIRE(ss_run_analyze(s2) == SS_OK);
        ss_session_close(s2);
        CHECK(slurp(out_dir + "/runlog.csv") == before);
        CHECK(slurp(out_dir + "/eval.csv") == eval_before);
        CHECK(slurp(out_dir + "/curves.csv") == curves_before);
    }

    SUBCASE("a corrupt upstream artifact is a runtime failure") {
        std::ofstream(out_dir + "/agent.json") << "{\"format\": \"wrong\"}";
        ss_session* s3 = nullptr;
        REQUIRE(ss_session_open(cfg.c_str(), nullptr, 0, &s3) == SS_OK);
        CHECK(ss_run_eval(s3) == SS_RUNTIME);
        ss_session_close(s3);
    }
}

TEST_CASE("cli exit codes and overrides") {
    CHECK(run_cli("train-lm") == 3);                                   // seed missing
    CHECK(run_cli("train-lm --set seed=1 --set corpus=/nope.txt") == 2);
    CHECK(run_cli("bogus-command") != 0);

    const std::string out_dir = "pipe_cli_out";
    fs::remove_all(out_dir);
    std::ofstream("pipe_cli_cfg.json") << tiny_config(out_dir);
    CHECK(run_cli("train-lm -c pipe_cli_cfg.json") == 0);
    CHECK(run_cli("train-agent -c pipe_cli_cfg.json --agent random") == 0);
    CHECK(run_cli("eval -c pipe_cli_cfg.json --episodes 5") == 0);

    std::istringstream eval_csv(slurp(out_dir + "/eval.csv"));
    std::string line;
    int rows = -1;
    while (std::getline(eval_csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 5);

    // eval before its upstream artifact exists -> missing input
    const std::string out2 = "pipe_cli_out2";
    fs::remove_all(out2);
    CHECK(run_cli("eval -c pipe_cli_cfg.json --set out_dir=" + out2) == 2);
}
