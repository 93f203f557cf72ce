#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "splitsim/channel.hpp"
#include "splitsim/rng.hpp"
#include "splitsim/surrogate_model.hpp"
#include "splitsim/transformer.hpp"

namespace splitsim {

// MDP state: noise level, fading shape, current splitting point.
struct EnvState {
    double sigma = 0.0;
    double m = 1.0;
    int p = 1;
};

enum class CaseDynamics { Iid, Walk };

// Scenario generator. The loss range is expressed as packet-loss
// probabilities and converted to fading shapes through calibrate_m.
struct CaseSpec {
    std::string name = "A";
    double loss_lo = 0.0, loss_hi = 0.3;
    int init_p_lo = 1, init_p_hi = 7;
    double sigma_lo = 0.01, sigma_hi = 0.5;
    CaseDynamics dynamics = CaseDynamics::Iid;

    void validate(std::size_t layers) const;
    // Built-in scenarios L, H and A for a model with `layers` blocks.
    static CaseSpec builtin(const std::string& name, std::size_t layers);
};

enum class CostNormalizer { Raw, UnitInterval };

struct RewardWeights {
    double lambda = 1.0;
    CostNormalizer normalizer = CostNormalizer::UnitInterval;
};

enum class RewardSource { True, Surrogate };

struct EnvInfo {
    double ppl = 0.0;        // clamped value that entered the reward
    double raw_ppl = 0.0;    // unclamped estimate
    double cost = 0.0;       // normalized device-side cost term
    double loss_prob = 0.0;  // packet-loss probability of the current fading shape
    double sigma = 0.0;
    double m = 0.0;
    int p = 0;
    bool clamped_p = false;       // action hit the [1, L-1] boundary
    bool extrapolated = false;    // surrogate queried outside its training hull
    RewardSource source = RewardSource::True;
};

// Minimal environment interface the agents train against.
class RlEnv {
public:
    virtual ~RlEnv() = default;
    virtual std::size_t state_dim() const = 0;
    virtual std::size_t n_actions() const = 0;
    virtual std::vector<double> reset() = 0;
    struct StepOut {
        std::vector<double> state;
        double reward = 0.0;
    };
    virtual StepOut step(std::size_t action) = 0;
    virtual EnvInfo info() const { return {}; }
};

struct EnvOptions {
    CaseSpec scenario;
    RewardWeights weights;
    ChannelMode channel_mode = ChannelMode::Nakagami;  // awgn = ideal-gain channel
    double omega = 1.0;
    double h_th = 0.5;
    bool per_tensor_gain = false;
    bool equalize = false;
    std::size_t reward_sequences = 8;   // corpus sample per reward evaluation
    std::size_t reward_trials = 2;      // channel draws per sequence
    double ppl_clamp_factor = 10.0;     // reward PPL clamp at factor * vocab
    std::size_t pool_size = 64;         // evaluation sequence pool
    int action_radius = 1;              // u; actions in [-u, +u]
    unsigned threads = 4;
};

// The split-point MDP around a trained language model. Rewards are
// -(PPL(p'; sigma', m') + lambda * normalized C_UE(p')), with the PPL term
// either sampled through the channel (true source) or predicted by an
// attached surrogate model.
class SplitEnv : public RlEnv {
public:
    SplitEnv(std::shared_ptr<const LmParams> lm, const std::vector<TokenSeq>& corpus,
             const EnvOptions& options, RngStream rng);

    std::size_t state_dim() const override { return 3; }
    std::size_t n_actions() const override {
        return 2 * static_cast<std::size_t>(opts_.action_radius) + 1;
    }
    std::vector<double> reset() override;
    StepOut step(std::size_t action) override;
    EnvInfo info() const override { return info_; }

    // Reward evaluation on an explicit state, usable outside the MDP loop.
    double reward_true(const EnvState& state, RngStream& rng, EnvInfo* info = nullptr);
    double reward_surrogate(const EnvState& state, EnvInfo* info = nullptr) const;

    void set_reward_source(RewardSource source);
    RewardSource reward_source() const { return source_; }
    void attach_surrogate(std::shared_ptr<const SurrogateModel> model);
    bool has_surrogate() const { return surrogate_ != nullptr; }

    const EnvState& state() const { return state_; }
    std::vector<double> normalize(const EnvState& s) const;

    // Number of times the language model ran for reward evaluation.
    std::uint64_t lm_call_count() const { return lm_calls_; }
    std::uint64_t step_count() const { return step_counter_; }

    double cost_term(int p) const;  // normalized C_UE before the lambda weight
    double loss_prob_of_m(double m) const;
    double realized_loss_prob(double m) const;   // 0 in awgn mode
    double m_of_loss_prob(double target) const;  // calibrated, clamped to achievable

    const LmConfig& lm_config() const { return lm_->config; }
    const EnvOptions& options() const { return opts_; }

    int max_p() const { return static_cast<int>(lm_->config.layers) - 1; }

private:
    EnvState draw_channel_state(RngStream& rng, const EnvState* previous) const;
    double reward_of(const EnvState& s, RngStream& rng, EnvInfo* info);

    std::shared_ptr<const LmParams> lm_;
    EnvOptions opts_;
    RngStream root_;
    std::vector<TokenSeq> pool_;
    // pool_ue_[s][l] holds the clean intermediate tensor of pool sequence s
    // after block l+1, so true-reward evaluation only runs the edge half.
    std::vector<std::vector<Matrix>> pool_ue_;
    std::shared_ptr<const SurrogateModel> surrogate_;
    RewardSource source_ = RewardSource::True;
    EnvState state_;
    EnvInfo info_;
    double ppl_clamp_ = 0.0;
    double m_lo_bound_ = 0.1, m_hi_bound_ = 50.0;  // from the loss range
    double achievable_lo_ = 0.0, achievable_hi_ = 1.0;
    std::uint64_t lm_calls_ = 0;
    std::uint64_t step_counter_ = 0;
    std::uint64_t episode_counter_ = 0;
};

}  // namespace splitsim
