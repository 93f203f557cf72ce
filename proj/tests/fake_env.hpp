#pragma once

// Cheap deterministic environments for exercising agent mechanics without a
// language model behind the reward.

#include <algorithm>
#include <cmath>
#include <vector>

#include "splitsim/env.hpp"
#include "splitsim/rng.hpp"

namespace testsupport {

// Split-point mechanics with a smooth reward bump at a known best p. The
// channel part of the state is frozen, so the optimum is stationary.
class PeakRewardEnv : public splitsim::RlEnv {
public:
    PeakRewardEnv(int max_p, int best_p, int radius, std::uint64_t seed)
        : max_p_(max_p), best_p_(best_p), radius_(radius), rng_(seed, 555) {}

    std::size_t state_dim() const override { return 3; }
    std::size_t n_actions() const override { return 2 * radius_ + 1; }

    std::vector<double> reset() override {
        p_ = static_cast<int>(rng_.uniform_int(1, max_p_));
        return state();
    }

    StepOut step(std::size_t action) override {
        const int delta = static_cast<int>(action) - radius_;
        p_ = std::clamp(p_ + delta, 1, max_p_);
        const double d = static_cast<double>(p_ - best_p_);
        const double reward = -d * d / static_cast<double>(max_p_);
        info_ = splitsim::EnvInfo{};
        info_.p = p_;
        info_.ppl = -reward;
        return {state(), reward};
    }

    splitsim::EnvInfo info() const override { return info_; }

    int p() const { return p_; }

private:
    std::vector<double> state() const {
        return {0.5, 0.5, static_cast<double>(p_ - 1) / std::max(1, max_p_ - 1)};
    }

    int max_p_;
    int best_p_;
    int radius_;
    splitsim::RngStream rng_;
    int p_ = 1;
    splitsim::EnvInfo info_;
};

// Three-state deterministic chain with a fixed reward table; transitions
// cycle s -> (s + a + 1) mod 3. Used as a tabular oracle for DQN.
class ChainEnv : public splitsim::RlEnv {
public:
    explicit ChainEnv(std::uint64_t seed) : rng_(seed, 999) {}

    std::size_t state_dim() const override { return 3; }
    std::size_t n_actions() const override { return 2; }

    std::vector<double> reset() override {
        s_ = static_cast<int>(rng_.uniform_int(0, 2));
        return one_hot(s_);
    }

    StepOut step(std::size_t action) override {
        const double reward = kReward[s_][action];
        s_ = (s_ + static_cast<int>(action) + 1) % 3;
        return {one_hot(s_), reward};
    }

    static constexpr double kReward[3][2] = {{0.1, -0.4}, {0.7, 0.2}, {-0.3, 0.5}};

private:
    static std::vector<double> one_hot(int s) {
        std::vector<double> v(3, 0.0);
        v[static_cast<std::size_t>(s)] = 1.0;
        return v;
    }
    splitsim::RngStream rng_;
    int s_ = 0;
};

}  // namespace testsupport
