#include "splitsim/env.hpp"

#include <algorithm>
#include <cmath>

#include "splitsim/errors.hpp"
#include "splitsim/parallel.hpp"

namespace splitsim {

void CaseSpec::validate(std::size_t layers) const {
    if (!(loss_lo >= 0.0 && loss_lo <= loss_hi && loss_hi <= 1.0))
        raise(ErrorKind::InvalidConfig, "case: loss range must satisfy 0 <= lo <= hi <= 1");
    const int max_p = static_cast<int>(layers) - 1;
    if (init_p_lo < 1 || init_p_lo > init_p_hi || init_p_hi > max_p)
        raise(ErrorKind::InvalidConfig, "case: init p range must lie within [1, L-1]");
    if (!(sigma_lo >= 0.0 && sigma_lo <= sigma_hi))
        raise(ErrorKind::InvalidConfig, "case: sigma range must satisfy 0 <= lo <= hi");
}

CaseSpec CaseSpec::builtin(const std::string& name, std::size_t layers) {
    const int max_p = static_cast<int>(layers) - 1;
    CaseSpec spec;
    spec.name = name;
    if (name == "L") {
        spec.loss_lo = 0.0;
        spec.loss_hi = 0.1;
        spec.init_p_lo = 1;
        spec.init_p_hi = std::max(1, max_p * 3 / 7);
    } else if (name == "H") {
        spec.loss_lo = 0.1;
        spec.loss_hi = 0.3;
        spec.init_p_lo = std::min(max_p, std::max(1, max_p * 4 / 7));
        spec.init_p_hi = max_p;
    } else if (name == "A") {
        spec.loss_lo = 0.0;
        spec.loss_hi = 0.3;
        spec.init_p_lo = 1;
        spec.init_p_hi = max_p;
    } else {
        raise(ErrorKind::InvalidConfig, "unknown case name: " + name);
    }
    return spec;
}

SplitEnv::SplitEnv(std::shared_ptr<const LmParams> lm, const std::vector<TokenSeq>& corpus,
                   const EnvOptions& options, RngStream rng)
    : lm_(std::move(lm)), opts_(options), root_(rng) {
    if (!lm_) raise(ErrorKind::InvalidParameter, "env: missing language model");
    opts_.scenario.validate(lm_->config.layers);
    if (opts_.action_radius < 1)
        raise(ErrorKind::InvalidConfig, "env: action radius must be >= 1");
    if (corpus.empty()) raise(ErrorKind::InvalidParameter, "env: empty corpus");
    ppl_clamp_ = opts_.ppl_clamp_factor * static_cast<double>(lm_->config.vocab);

    // Achievable loss-probability bounds over the calibration bracket.
    achievable_hi_ = packet_loss_prob(0.1, opts_.omega, opts_.h_th);
    achievable_lo_ = packet_loss_prob(50.0, opts_.omega, opts_.h_th);
    m_hi_bound_ = m_of_loss_prob(opts_.scenario.loss_lo);
    m_lo_bound_ = m_of_loss_prob(opts_.scenario.loss_hi);

    // Evaluation pool: fixed subsample of the corpus with cached device-side
    // activations at every admissible split layer.
    RngStream pool_rng = root_.derive("env.pool");
    const std::size_t n_pool = std::min(opts_.pool_size, corpus.size());
    std::vector<std::size_t> index(corpus.size());
    for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
    for (std::size_t i = 0; i < n_pool; ++i) {
        const std::size_t j = static_cast<std::size_t>(
            pool_rng.uniform_int(static_cast<std::int64_t>(i),
                                 static_cast<std::int64_t>(index.size()) - 1));
        std::swap(index[i], index[j]);
        pool_.push_back(corpus[index[i]]);
    }

    const std::size_t splits = lm_->config.layers - 1;
    pool_ue_.assign(pool_.size(), {});
    parallel_for(pool_.size(), opts_.threads, [&](std::size_t s) {
        std::vector<Matrix>& per_layer = pool_ue_[s];
        per_layer.reserve(splits);
        Matrix x = lm_forward_ue(*lm_, pool_[s], 1);
        per_layer.push_back(x);
        for (std::size_t p = 2; p <= splits; ++p) {
            // extend one block at a time instead of recomputing the prefix
            Matrix next = lm_apply_block(*lm_, per_layer.back(), p - 1);
            per_layer.push_back(std::move(next));
        }
    });

    state_ = draw_channel_state(root_, nullptr);
    state_.p = opts_.scenario.init_p_lo;
}

double SplitEnv::loss_prob_of_m(double m) const {
    return packet_loss_prob(m, opts_.omega, opts_.h_th);
}

double SplitEnv::realized_loss_prob(double m) const {
    // the awgn degenerate mode pins the gain at 1 and never drops elements
    if (opts_.channel_mode == ChannelMode::Awgn) return 0.0;
    return loss_prob_of_m(m);
}

double SplitEnv::m_of_loss_prob(double target) const {
    const double t = std::clamp(target, achievable_lo_ * 1.0000001 + 1e-15,
                                achievable_hi_ * 0.9999999);
    return calibrate_m(t, opts_.omega, opts_.h_th);
}

double SplitEnv::cost_term(int p) const {
    const std::uint64_t raw = c_ue(lm_->config, static_cast<std::size_t>(p));
    switch (opts_.weights.normalizer) {
        case CostNormalizer::Raw:
            return static_cast<double>(raw);
        case CostNormalizer::UnitInterval:
            return static_cast<double>(raw) /
                   static_cast<double>(c_ue(lm_->config, lm_->config.layers - 1));
    }
    return static_cast<double>(raw);
}

EnvState SplitEnv::draw_channel_state(RngStream& rng, const EnvState* previous) const {
    const CaseSpec& cs = opts_.scenario;
    EnvState s;
    if (previous != nullptr && cs.dynamics == CaseDynamics::Walk) {
        // bounded random walk: +-10% per step, clamped to the case ranges
        const double prev_loss = loss_prob_of_m(previous->m);
        const double loss_span = std::max(1e-12, cs.loss_hi - cs.loss_lo);
        double loss = prev_loss + rng.uniform(-0.1, 0.1) * loss_span;
        loss = std::clamp(loss, cs.loss_lo, cs.loss_hi);
        const double sigma_span = std::max(1e-12, cs.sigma_hi - cs.sigma_lo);
        double sigma = previous->sigma + rng.uniform(-0.1, 0.1) * sigma_span;
        s.sigma = std::clamp(sigma, cs.sigma_lo, cs.sigma_hi);
        s.m = m_of_loss_prob(loss);
        s.p = previous->p;
        return s;
    }
    s.sigma = rng.uniform(cs.sigma_lo, cs.sigma_hi);
    s.m = m_of_loss_prob(rng.uniform(cs.loss_lo, cs.loss_hi));
    s.p = 0;  // caller decides
    return s;
}

std::vector<double> SplitEnv::reset() {
    RngStream rng = root_.derive("env.reset", episode_counter_++);
    EnvState s = draw_channel_state(rng, nullptr);
    s.p = static_cast<int>(rng.uniform_int(opts_.scenario.init_p_lo, opts_.scenario.init_p_hi));
    state_ = s;
    info_ = EnvInfo{};
    info_.sigma = s.sigma;
    info_.m = s.m;
    info_.p = s.p;
    info_.loss_prob = realized_loss_prob(s.m);
    return normalize(state_);
}

std::vector<double> SplitEnv::normalize(const EnvState& s) const {
    const CaseSpec& cs = opts_.scenario;
    const double sigma_span = std::max(1e-12, cs.sigma_hi - cs.sigma_lo);
    const double log_lo = std::log(m_lo_bound_);
    const double log_hi = std::log(m_hi_bound_);
    const double m_span = std::max(1e-12, log_hi - log_lo);
    const double p_span = std::max(1, max_p() - 1);
    return {
        std::clamp((s.sigma - cs.sigma_lo) / sigma_span, 0.0, 1.0),
        std::clamp((std::log(s.m) - log_lo) / m_span, 0.0, 1.0),
        (static_cast<double>(s.p) - 1.0) / p_span,
    };
}

SplitEnv::StepOut SplitEnv::step(std::size_t action) {
    if (action >= n_actions()) raise(ErrorKind::InvalidParameter, "env: action out of range");
    const int delta = static_cast<int>(action) - opts_.action_radius;
    RngStream rng = root_.derive("env.step", step_counter_++);

    EnvState next = draw_channel_state(rng, &state_);
    const int raw_p = state_.p + delta;
    next.p = std::clamp(raw_p, 1, max_p());

    EnvInfo info;
    info.clamped_p = (raw_p != next.p);
    const double reward = reward_of(next, rng, &info);
    state_ = next;
    info_ = info;
    return {normalize(state_), reward};
}

double SplitEnv::reward_of(const EnvState& s, RngStream& rng, EnvInfo* info) {
    if (source_ == RewardSource::Surrogate) return reward_surrogate(s, info);
    return reward_true(s, rng, info);
}

double SplitEnv::reward_true(const EnvState& s, RngStream& rng, EnvInfo* info) {
    const std::size_t n_seq = std::min(opts_.reward_sequences, pool_.size());
    const std::size_t n_trials = std::max<std::size_t>(1, opts_.reward_trials);

    ChannelParams chan;
    chan.mode = opts_.channel_mode;
    chan.m = s.m;
    chan.omega = opts_.omega;
    chan.sigma = s.sigma;
    chan.h_th = opts_.h_th;
    chan.per_tensor_gain = opts_.per_tensor_gain;
    chan.equalize = opts_.equalize;

    // sample sequences without replacement
    std::vector<std::size_t> chosen(pool_.size());
    for (std::size_t i = 0; i < chosen.size(); ++i) chosen[i] = i;
    for (std::size_t i = 0; i < n_seq; ++i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(
            static_cast<std::int64_t>(i), static_cast<std::int64_t>(chosen.size()) - 1));
        std::swap(chosen[i], chosen[j]);
    }

    const std::uint64_t noise_key = rng.next_u64();
    std::vector<double> seq_nll(n_seq, 0.0);
    std::vector<std::size_t> seq_pos(n_seq, 0);
    parallel_for(n_seq, opts_.threads, [&](std::size_t i) {
        const std::size_t sidx = chosen[i];
        const TokenSeq& seq = pool_[sidx];
        const Matrix& ue = pool_ue_[sidx][static_cast<std::size_t>(s.p) - 1];
        RngStream seq_rng(root_.seed(), noise_key);
        RngStream chan_rng = seq_rng.derive("reward.seq", i);
        double nll = 0.0;
        for (std::size_t t = 0; t < n_trials; ++t) {
            RngStream trial_rng = chan_rng.derive(t);
            nll += sequence_nll_through_channel(*lm_, seq, ue, static_cast<std::size_t>(s.p),
                                                chan, trial_rng, nullptr);
        }
        seq_nll[i] = nll;
        seq_pos[i] = (seq.size() - 1) * n_trials;
    });
    lm_calls_ += n_seq * n_trials;

    double total_nll = 0.0;
    std::size_t total_pos = 0;
    for (std::size_t i = 0; i < n_seq; ++i) {
        total_nll += seq_nll[i];
        total_pos += seq_pos[i];
    }
    const double raw_ppl = std::exp(total_nll / static_cast<double>(total_pos));
    const double ppl = std::min(raw_ppl, ppl_clamp_);
    const double cost = cost_term(s.p);
    const double reward = -(ppl + opts_.weights.lambda * cost);
    if (info) {
        info->ppl = ppl;
        info->raw_ppl = raw_ppl;
        info->cost = cost;
        info->loss_prob = realized_loss_prob(s.m);
        info->sigma = s.sigma;
        info->m = s.m;
        info->p = s.p;
        info->source = RewardSource::True;
    }
    return reward;
}

double SplitEnv::reward_surrogate(const EnvState& s, EnvInfo* info) const {
    if (!surrogate_)
        raise(ErrorKind::Unavailable, "env: surrogate reward requested before a model was fitted");
    const auto pred = surrogate_->predict(static_cast<double>(s.p), s.sigma, s.m);
    const double ppl = std::clamp(pred.ppl, 1.0, ppl_clamp_);
    const double cost = cost_term(s.p);
    const double reward = -(ppl + opts_.weights.lambda * cost);
    if (info) {
        info->ppl = ppl;
        info->raw_ppl = pred.ppl;
        info->cost = cost;
        info->loss_prob = realized_loss_prob(s.m);
        info->sigma = s.sigma;
        info->m = s.m;
        info->p = s.p;
        info->extrapolated = pred.extrapolating;
        info->source = RewardSource::Surrogate;
    }
    return reward;
}

void SplitEnv::set_reward_source(RewardSource source) {
    if (source == RewardSource::Surrogate && !surrogate_)
        raise(ErrorKind::Unavailable, "env: cannot switch to surrogate rewards without a model");
    source_ = source;
}

void SplitEnv::attach_surrogate(std::shared_ptr<const SurrogateModel> model) {
    surrogate_ = std::move(model);
}

}  // namespace splitsim
