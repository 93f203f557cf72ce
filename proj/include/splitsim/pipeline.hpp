#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "splitsim/config.hpp"

namespace splitsim {

// Each pipeline command reads its inputs, writes its artifacts under
// config.out_dir plus a manifest, and returns a machine-readable summary
// (what the CLI prints). Artifacts are byte-reproducible for a fixed
// config+seed; the manifest's "written_at" field is the one exception, and
// wall-clock timing figures only appear in summaries, never in artifacts.

nlohmann::json run_train_lm(const ExperimentConfig& config);
nlohmann::json run_sweep(const ExperimentConfig& config);
nlohmann::json run_collect(const ExperimentConfig& config);
nlohmann::json run_fit_surrogate(const ExperimentConfig& config);
nlohmann::json run_train_agent(const ExperimentConfig& config);
nlohmann::json run_eval(const ExperimentConfig& config);
nlohmann::json run_analyze(const ExperimentConfig& config);

// Loads the LM checkpoint and builds the evaluation environment the way
// train/eval commands do. Shared with the acceptance suite.
struct EnvBundle {
    std::shared_ptr<LmParams> lm;
    Vocabulary vocab;
    std::vector<TokenSeq> sequences;  // non-overlapping d_in-token windows
    std::unique_ptr<SplitEnv> env;
};
EnvBundle make_env_bundle(const ExperimentConfig& config, RngStream rng);

// Chops a token stream into non-overlapping windows of length d_in.
std::vector<TokenSeq> make_eval_sequences(const TokenSeq& tokens, std::size_t d_in,
                                          std::size_t max_count = 0);

std::string read_text_file(const std::string& path);  // MissingInput if absent
void write_text_file(const std::string& path, const std::string& text);

}  // namespace splitsim
