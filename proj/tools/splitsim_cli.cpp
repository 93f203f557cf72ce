// splitsim command-line front end. Thin shell over the shared library's C
// interface: parse arguments, run one pipeline command, print its summary.
//
// Exit codes: 0 success, 2 missing input, 3 invalid config, 4 runtime
// failure (1 for anything else).

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splitsim.h"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
};

int finish(ss_status status, ss_session* session) {
    if (status == SS_OK) {
        std::printf("%s\n", ss_session_summary(session));
    } else {
        std::fprintf(stderr, "error: %s\n", ss_last_error());
    }
    ss_session_close(session);
    return static_cast<int>(status);
}

int run(const CommonArgs& args, ss_status (*command)(ss_session*)) {
    std::vector<const char*> overrides;
    overrides.reserve(args.sets.size());
    for (const std::string& s : args.sets) overrides.push_back(s.c_str());

    ss_session* session = nullptr;
    ss_status status;
    if (args.config_path.empty()) {
        status = ss_session_open("{}", overrides.data(), overrides.size(), &session);
    } else {
        status = ss_session_open_file(args.config_path.c_str(), overrides.data(),
                                      overrides.size(), &session);
    }
    if (status != SS_OK) {
        std::fprintf(stderr, "error: %s\n", ss_last_error());
        return static_cast<int>(status);
    }
    return finish(command(session), session);
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "experiment config (json)");
    cmd->add_option("--set", args.sets,
                    "dot-keyed config override, e.g. --set reward.lambda=0.5");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"split-inference simulator and split-point optimizer"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(ss_version()));

    CommonArgs args;

    auto* train_lm = app.add_subcommand("train-lm", "train the character-level model");
    add_common(train_lm, args);

    auto* sweep = app.add_subcommand("sweep", "perplexity vs split point over a channel grid");
    add_common(sweep, args);

    auto* collect = app.add_subcommand("collect", "gather (p, sigma, m) -> ppl records");
    add_common(collect, args);

    auto* fit = app.add_subcommand("fit-surrogate", "cross-validate and fit the reward model");
    add_common(fit, args);

    auto* train_agent = app.add_subcommand("train-agent", "train an rl agent on the env");
    add_common(train_agent, args);
    std::string agent_kind, reward_source;
    train_agent->add_option("--agent", agent_kind, "ppo | a2c | dqn | random");
    train_agent->add_option("--reward-source", reward_source, "true | surrogate | algorithm1");

    auto* eval = app.add_subcommand("eval", "greedy evaluation episodes of a trained agent");
    add_common(eval, args);
    int episodes = -1;
    eval->add_option("--episodes", episodes, "number of evaluation episodes");

    auto* analyze = app.add_subcommand("analyze", "summaries: distributions, trends, curves");
    add_common(analyze, args);

    CLI11_PARSE(app, argc, argv);

    if (train_lm->parsed()) return run(args, &ss_run_train_lm);
    if (sweep->parsed()) return run(args, &ss_run_sweep);
    if (collect->parsed()) return run(args, &ss_run_collect);
    if (fit->parsed()) return run(args, &ss_run_fit_surrogate);
    if (train_agent->parsed()) {
        if (!agent_kind.empty()) args.sets.push_back("agent.kind=" + agent_kind);
        if (!reward_source.empty())
            args.sets.push_back("agent.reward_source=" + reward_source);
        return run(args, &ss_run_train_agent);
    }
    if (eval->parsed()) {
        if (episodes >= 0) args.sets.push_back("eval.episodes=" + std::to_string(episodes));
        return run(args, &ss_run_eval);
    }
    if (analyze->parsed()) return run(args, &ss_run_analyze);
    return 1;
}
