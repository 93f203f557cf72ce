#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitsim/agents.hpp"
#include "splitsim/env.hpp"
#include "splitsim/surrogate.hpp"
#include "splitsim/transformer.hpp"

namespace splitsim {

// Experiment configuration: one JSON document drives every command. Defaults
// fill any missing key; "seed" is the only mandatory field.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    unsigned threads = 4;
    std::string out_dir = "runs/out";
    std::string corpus_path = "data/corpus.txt";

    // language model
    LmConfig lm;                    // vocab filled from the corpus at train time
    std::string lm_checkpoint = "";  // defaults to <out_dir>/lm.json
    LmTrainOptions lm_train;

    // channel defaults (sweep + direct evaluation)
    ChannelParams channel;

    // environment
    CaseSpec scenario;
    bool scenario_explicit_ranges = false;  // ranges given, skip builtin lookup
    RewardWeights weights;
    EnvOptions env;  // holds omega/h_th/sampling knobs; scenario/weights copied in

    // agent
    AgentKind agent_kind = AgentKind::Ppo;
    std::string reward_source = "true";  // true | surrogate | algorithm1
    std::size_t total_steps = 24000;
    PpoHyper ppo;
    DqnHyper dqn;

    // surrogate
    SurrogateFitOptions surrogate_fit;
    Algorithm1Options algorithm1;
    CollectOptions collect;
    std::string dataset_path = "";        // defaults to <out_dir>/records.csv
    std::string surrogate_checkpoint = ""; // defaults to <out_dir>/surrogate.json
    std::string agent_checkpoint = "";     // defaults to <out_dir>/agent.json

    // sweep
    struct Sweep {
        std::string mode = "loss";  // loss | snr
        std::vector<int> p_list;    // empty = all split points
        std::vector<double> loss_list = {0.0, 0.05, 0.1, 0.2, 0.3};
        std::vector<double> snr_db_list = {20.0, 10.0, 5.0, 0.0};
        double sigma = 0.1;         // fixed noise for loss mode
        std::size_t sequences = 16;
        std::size_t trials = 4;
    } sweep;

    // evaluation
    struct Eval {
        std::size_t episodes = 500;
        std::string mode = "greedy";  // greedy | sample
        std::size_t sequences = 2;    // reward sampling during evaluation
        std::size_t trials = 1;
    } eval;

    // analysis
    struct Analysis {
        double loess_frac = 0.3;
        int loess_degree = 1;
        std::size_t window = 20;
        double reward_affine_scale = 1.0;   // reporting transform, logs stay raw
        double reward_affine_offset = 0.0;
        std::vector<std::string> inputs;    // run log CSVs for curve aggregation
    } analysis;

    nlohmann::json raw;  // the fully-merged document (defaults + file + overrides)

    std::string resolved_lm_checkpoint() const;
    std::string resolved_dataset() const;
    std::string resolved_surrogate_checkpoint() const;
    std::string resolved_agent_checkpoint() const;
};

// Parses and validates a config document. Overrides are dot-keyed
// "path.to.key=json-value" pairs applied before validation.
ExperimentConfig parse_config(const nlohmann::json& doc,
                              const std::vector<std::string>& overrides = {});
ExperimentConfig load_config_file(const std::string& path,
                                  const std::vector<std::string>& overrides = {});

// Canonical FNV-1a hash of the merged document (nlohmann orders keys).
std::uint64_t config_hash(const ExperimentConfig& config);

// The merged document with every default materialized.
nlohmann::json default_config_json();

}  // namespace splitsim
