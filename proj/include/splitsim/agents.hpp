#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "splitsim/env.hpp"
#include "splitsim/mlp.hpp"
#include "splitsim/rng.hpp"

namespace splitsim {

struct PpoHyper {
    double alpha = 3e-4;
    double gamma = 0.99;
    double epsilon_clip = 0.2;
    std::size_t n_step = 400;          // steps per update round
    std::size_t batch = 100;           // minibatch size
    std::size_t steps_per_episode = 5;
    double xi_gae = 0.95;
    std::size_t ppo_epochs = 4;
    double entropy_coef = 0.01;
    double value_coef = 0.5;
    std::vector<std::size_t> hidden = {64, 64};
    double clip_grad_norm = 0.5;

    void validate() const;
};

struct DqnHyper {
    std::size_t replay_capacity = 10000;
    std::size_t target_sync = 500;
    double eps_start = 1.0;
    double eps_end = 0.05;
    double eps_decay_fraction = 0.5;  // of total steps
    std::size_t learn_start = 200;    // steps before updates begin
    double gamma = -1.0;              // < 0 mirrors the shared discount factor
};

enum class AgentKind { Ppo, A2c, Dqn, Random };
AgentKind agent_kind_from_name(const std::string& name);
std::string agent_kind_name(AgentKind kind);

// Policy: tanh hidden stack, softmax over 2u+1 actions (gradients run
// against the logits). Value/Q nets share the hidden shape.
MlpParams make_policy_net(std::size_t state_dim, std::size_t n_actions,
                          const std::vector<std::size_t>& hidden, RngStream& rng);
MlpParams make_value_net(std::size_t state_dim, std::size_t out_dim,
                         const std::vector<std::size_t>& hidden, RngStream& rng);

enum class ActMode { Sample, Greedy };

struct ActResult {
    std::size_t action = 0;
    double log_prob = 0.0;
};

ActResult policy_act(const MlpParams& policy, const std::vector<double>& state,
                     RngStream& rng, ActMode mode);

// ---------------------------------------------------------------------------
// Rollout storage + GAE

struct RolloutBuffer {
    Matrix states;                      // n x state_dim
    std::vector<std::size_t> actions;
    std::vector<double> rewards;
    std::vector<double> log_probs;
    std::vector<double> values;
    std::vector<std::uint8_t> episode_end;  // 1 on the last step of an episode
    std::vector<double> advantages;         // raw GAE values
    std::vector<double> returns;            // advantage + value
    std::vector<EnvInfo> infos;

    std::size_t size = 0;
    void reserve(std::size_t n, std::size_t state_dim);
    void clear();
};

RolloutBuffer collect_rollout(RlEnv& env, const MlpParams& policy, const MlpParams& value,
                              const PpoHyper& hyper, RngStream& rng);

// Fills buffer.advantages (raw, un-normalized) and buffer.returns. Sums are
// truncated at episode boundaries: the terminal step bootstraps nothing.
void compute_gae(RolloutBuffer& buffer, double gamma, double xi);

struct UpdateMetrics {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double approx_kl = 0.0;
    double clip_fraction = 0.0;
    bool aborted = false;  // non-finite loss encountered
    // diagnostics from the first minibatch of the round, before any step
    double first_policy_loss = 0.0;
    double first_ratio_max_dev = 0.0;  // max |ratio - 1|
    std::vector<double> epoch_kl;      // mean approx KL per pass
};

// Per-sample clipped objective: min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv).
inline double clipped_objective_term(double ratio, double adv, double eps) {
    const double lo = 1.0 - eps, hi = 1.0 + eps;
    const double clipped = (ratio < lo ? lo : ratio > hi ? hi : ratio) * adv;
    const double raw = ratio * adv;
    return raw < clipped ? raw : clipped;
}

struct AgentNets {
    MlpParams policy;
    MlpParams value;
    AdamState policy_adam;
    AdamState value_adam;
};

// Clipped-objective PPO round over the buffer: ppo_epochs shuffled passes in
// minibatches of hyper.batch, advantages re-normalized per minibatch.
UpdateMetrics ppo_update(AgentNets& nets, RolloutBuffer& buffer, const PpoHyper& hyper,
                         RngStream& rng);

// Single-pass advantage actor-critic on the same buffer layout.
UpdateMetrics a2c_update(AgentNets& nets, RolloutBuffer& buffer, const PpoHyper& hyper);

// ---------------------------------------------------------------------------
// DQN pieces

struct DqnTransition {
    std::vector<double> s;
    std::size_t a = 0;
    double r = 0.0;
    std::vector<double> s2;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}
    void push(DqnTransition t);
    std::size_t size() const { return data_.size(); }
    const DqnTransition& sample(RngStream& rng) const;

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<DqnTransition> data_;
};

struct DqnState {
    MlpParams qnet;
    MlpParams target;
    AdamState adam;
    ReplayBuffer replay;
};

UpdateMetrics dqn_update(DqnState& dqn, const PpoHyper& hyper, const DqnHyper& dhyper,
                         RngStream& rng);

// ---------------------------------------------------------------------------
// Training loop + logs

struct RunLogRow {
    std::size_t step = 0;
    std::size_t episode = 0;
    int action_delta = 0;
    double reward = 0.0;
    double ppl = 0.0;
    double cost = 0.0;
    int p = 0;
    double sigma = 0.0;
    double m = 0.0;
    double loss_prob = 0.0;
    int source = 0;  // 0 true, 1 surrogate
};

struct RunLog {
    std::vector<RunLogRow> rows;
    std::vector<UpdateMetrics> updates;
    std::optional<std::size_t> switch_epoch;  // set by the surrogate schedule
};

struct TrainResult {
    AgentNets nets;      // policy/value (ppo, a2c); qnet in policy for dqn
    RunLog log;
    double mean_step_ms = 0.0;
};

using StepCallback = std::function<void(const RunLogRow&)>;

// Full training loop for one agent kind. For Random the nets stay untouched
// and actions are uniform draws. total_steps must be a multiple of n_step
// for the on-policy agents.
TrainResult train_agent(AgentKind kind, RlEnv& env, const PpoHyper& hyper,
                        const DqnHyper& dhyper, std::size_t total_steps, RngStream& rng,
                        const StepCallback& on_step = nullptr);

// ---------------------------------------------------------------------------
// Evaluation

struct EpisodeResult {
    double mean_reward = 0.0;
    EnvInfo last_info;  // terminal sigma / m / p live here
};

// Runs greedy (or uniform-random, for AgentKind::Random) episodes and
// reports per-episode mean rewards plus the terminal state.
std::vector<EpisodeResult> evaluate_policy(RlEnv& env, const MlpParams* policy,
                                           std::size_t episodes,
                                           std::size_t steps_per_episode, RngStream& rng,
                                           ActMode mode = ActMode::Greedy);

}  // namespace splitsim
