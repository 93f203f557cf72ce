#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "splitsim/agents.hpp"
#include "splitsim/env.hpp"
#include "splitsim/rng.hpp"
#include "splitsim/surrogate_model.hpp"

namespace splitsim {

struct SurrogateRecord {
    int p = 1;
    double sigma = 0.0;
    double m = 1.0;
    double ppl = 1.0;  // channel-averaged, stored post-clamp
};

struct CvReport {
    std::size_t k = 0;
    std::vector<double> fold_mse;
    std::vector<double> fold_mae;
    double mean_mse = 0.0;
    double mean_mae = 0.0;
    double target_variance = 0.0;
    double normalized_mse = 0.0;  // mean_mse / target_variance
};

enum class SamplingPlan { Random, Lattice };

struct CollectOptions {
    SamplingPlan plan = SamplingPlan::Random;
    std::size_t n = 2000;        // total records for the random plan
    std::size_t lattice_p = 0;   // 0 = every split point
    std::size_t lattice_sigma = 8;
    std::size_t lattice_m = 8;
    std::size_t trials = 2;      // channel draws averaged per record
};

// Gathers (p, sigma, m) -> PPL records by running the environment's true
// reward evaluator over either a uniform random plan or a full lattice over
// the scenario ranges.
std::vector<SurrogateRecord> collect_records(SplitEnv& env, const CollectOptions& opts,
                                             RngStream& rng);

struct SurrogateFitOptions {
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t epochs = 300;
    std::size_t batch = 64;
    double lr = 1e-2;  // cosine-decayed to zero across the epochs
    std::size_t k_folds = 5;
};

// k-fold cross validation for the report, then a final fit on all records.
// Inputs and targets are standardized internally; the report's MSE/MAE are
// on the raw PPL scale.
std::pair<SurrogateModel, CvReport> fit_surrogate(const std::vector<SurrogateRecord>& records,
                                                  const SurrogateFitOptions& opts,
                                                  RngStream& rng);

// CSV dataset format: header "p,sigma,m,ppl".
std::string records_to_csv(const std::vector<SurrogateRecord>& records);
std::vector<SurrogateRecord> records_from_csv(const std::string& text);

// ---------------------------------------------------------------------------
// Surrogate-accelerated PPO schedule: train on true rewards while recording
// (p, sigma, m, PPL) observations; once the switch threshold is reached, fit
// the surrogate and finish training against its predictions.

struct Algorithm1Options {
    std::size_t switch_epoch = 0;       // 0 = automatic, by record count
    std::size_t switch_records = 2000;  // automatic threshold
    double gate_normalized_mse = 0.25;  // refuse the switch above this
    SurrogateFitOptions fit;
};

struct Algorithm1Result {
    TrainResult train;
    std::optional<SurrogateModel> surrogate;
    CvReport cv;
    std::vector<SurrogateRecord> records;
    std::optional<std::size_t> switch_epoch;
    bool switch_refused = false;        // gate rejected at least one fit attempt
    double pre_switch_step_ms = 0.0;    // mean env-step wall clock before/after
    double post_switch_step_ms = 0.0;
    std::uint64_t lm_calls_pre_switch = 0;
    std::uint64_t lm_calls_total = 0;
};

Algorithm1Result algorithm1_train(SplitEnv& env, const PpoHyper& hyper,
                                  const Algorithm1Options& opts, std::size_t total_steps,
                                  RngStream& rng, const StepCallback& on_step = nullptr);

}  // namespace splitsim
