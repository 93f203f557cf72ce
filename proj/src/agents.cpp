#include "splitsim/agents.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "splitsim/errors.hpp"

namespace splitsim {

void PpoHyper::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0))
        raise(ErrorKind::InvalidConfig, "ppo: gamma must lie in (0, 1]");
    if (!(xi_gae >= 0.0 && xi_gae <= 1.0))
        raise(ErrorKind::InvalidConfig, "ppo: xi must lie in [0, 1]");
    if (epsilon_clip <= 0.0) raise(ErrorKind::InvalidConfig, "ppo: epsilon_clip must be > 0");
    if (batch == 0 || batch > n_step)
        raise(ErrorKind::InvalidConfig, "ppo: batch must lie in [1, n_step]");
    if (steps_per_episode == 0 || n_step % steps_per_episode != 0)
        raise(ErrorKind::InvalidConfig, "ppo: n_step must be a multiple of steps_per_episode");
    if (ppo_epochs == 0) raise(ErrorKind::InvalidConfig, "ppo: need at least one epoch");
}

AgentKind agent_kind_from_name(const std::string& name) {
    if (name == "ppo") return AgentKind::Ppo;
    if (name == "a2c") return AgentKind::A2c;
    if (name == "dqn") return AgentKind::Dqn;
    if (name == "random") return AgentKind::Random;
    raise(ErrorKind::InvalidConfig, "unknown agent kind: " + name);
}

std::string agent_kind_name(AgentKind kind) {
    switch (kind) {
        case AgentKind::Ppo: return "ppo";
        case AgentKind::A2c: return "a2c";
        case AgentKind::Dqn: return "dqn";
        case AgentKind::Random: return "random";
    }
    return "ppo";
}

MlpParams make_policy_net(std::size_t state_dim, std::size_t n_actions,
                          const std::vector<std::size_t>& hidden, RngStream& rng) {
    MlpSpec spec;
    spec.layer_sizes.push_back(state_dim);
    for (std::size_t h : hidden) spec.layer_sizes.push_back(h);
    spec.layer_sizes.push_back(n_actions);
    spec.hidden = Activation::Tanh;
    spec.output = Activation::Softmax;
    return mlp_init(spec, rng);
}

MlpParams make_value_net(std::size_t state_dim, std::size_t out_dim,
                         const std::vector<std::size_t>& hidden, RngStream& rng) {
    MlpSpec spec;
    spec.layer_sizes.push_back(state_dim);
    for (std::size_t h : hidden) spec.layer_sizes.push_back(h);
    spec.layer_sizes.push_back(out_dim);
    spec.hidden = Activation::Tanh;
    spec.output = Activation::Identity;
    return mlp_init(spec, rng);
}

namespace {

Matrix row_matrix(const std::vector<double>& v) {
    Matrix m(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = v[i];
    return m;
}

}  // namespace

ActResult policy_act(const MlpParams& policy, const std::vector<double>& state,
                     RngStream& rng, ActMode mode) {
    Matrix logits = mlp_forward_logits(policy, row_matrix(state));
    const std::size_t n = logits.cols;
    std::vector<double> logp(n);
    log_softmax_row(logits.row(0), n, logp.data());

    std::size_t action = 0;
    if (mode == ActMode::Greedy) {
        for (std::size_t a = 1; a < n; ++a)
            if (logp[a] > logp[action]) action = a;
    } else {
        const double u = rng.next_double();
        double cum = 0.0;
        action = n - 1;
        for (std::size_t a = 0; a < n; ++a) {
            cum += std::exp(logp[a]);
            if (u < cum) {
                action = a;
                break;
            }
        }
    }
    return {action, logp[action]};
}

void RolloutBuffer::reserve(std::size_t n, std::size_t state_dim) {
    states.resize(n, state_dim);
    actions.assign(n, 0);
    rewards.assign(n, 0.0);
    log_probs.assign(n, 0.0);
    values.assign(n, 0.0);
    episode_end.assign(n, 0);
    advantages.clear();
    returns.clear();
    infos.assign(n, EnvInfo{});
    size = n;
}

void RolloutBuffer::clear() {
    states = Matrix();
    actions.clear();
    rewards.clear();
    log_probs.clear();
    values.clear();
    episode_end.clear();
    advantages.clear();
    returns.clear();
    infos.clear();
    size = 0;
}

RolloutBuffer collect_rollout(RlEnv& env, const MlpParams& policy, const MlpParams& value,
                              const PpoHyper& hyper, RngStream& rng) {
    hyper.validate();
    RolloutBuffer buf;
    buf.reserve(hyper.n_step, env.state_dim());

    std::vector<double> state;
    for (std::size_t t = 0; t < hyper.n_step; ++t) {
        if (t % hyper.steps_per_episode == 0) state = env.reset();
        ActResult act = policy_act(policy, state, rng, ActMode::Sample);
        Matrix v = mlp_forward(value, row_matrix(state));

        for (std::size_t c = 0; c < state.size(); ++c) buf.states.at(t, c) = state[c];
        buf.actions[t] = act.action;
        buf.log_probs[t] = act.log_prob;
        buf.values[t] = v.data[0];

        RlEnv::StepOut out = env.step(act.action);
        buf.rewards[t] = out.reward;
        buf.infos[t] = env.info();
        buf.episode_end[t] = (t % hyper.steps_per_episode == hyper.steps_per_episode - 1);
        state = std::move(out.state);
    }
    return buf;
}

void compute_gae(RolloutBuffer& buffer, double gamma, double xi) {
    const std::size_t n = buffer.size;
    if (n == 0) raise(ErrorKind::InvalidParameter, "compute_gae: empty buffer");
    buffer.advantages.assign(n, 0.0);
    buffer.returns.assign(n, 0.0);
    double adv = 0.0;
    for (std::size_t t = n; t-- > 0;) {
        double delta;
        if (buffer.episode_end[t]) {
            // terminal cut: no bootstrap beyond the episode
            delta = buffer.rewards[t] - buffer.values[t];
            adv = delta;
        } else {
            delta = buffer.rewards[t] + gamma * buffer.values[t + 1] - buffer.values[t];
            adv = delta + gamma * xi * adv;
        }
        buffer.advantages[t] = adv;
        buffer.returns[t] = adv + buffer.values[t];
    }
}

namespace {

struct MiniBatch {
    Matrix states;
    std::vector<std::size_t> actions;
    std::vector<double> adv_norm;
    std::vector<double> logp_old;
    std::vector<double> returns;
};

MiniBatch gather(const RolloutBuffer& buffer, const std::vector<std::size_t>& idx,
                 std::size_t lo, std::size_t hi) {
    MiniBatch mb;
    const std::size_t n = hi - lo;
    const std::size_t dim = buffer.states.cols;
    mb.states.resize(n, dim);
    mb.actions.resize(n);
    mb.adv_norm.resize(n);
    mb.logp_old.resize(n);
    mb.returns.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = idx[lo + i];
        for (std::size_t c = 0; c < dim; ++c) mb.states.at(i, c) = buffer.states.at(src, c);
        mb.actions[i] = buffer.actions[src];
        mb.adv_norm[i] = buffer.advantages[src];
        mb.logp_old[i] = buffer.log_probs[src];
        mb.returns[i] = buffer.returns[src];
    }
    // normalize advantages within the minibatch
    double mean = 0.0;
    for (double a : mb.adv_norm) mean += a;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double a : mb.adv_norm) var += (a - mean) * (a - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + 1e-8);
    for (double& a : mb.adv_norm) a = (a - mean) * inv;
    return mb;
}

struct PolicyEval {
    Matrix dlogits;        // filled for the PPO / A2C objectives
    double policy_loss = 0.0;
    double entropy = 0.0;
    double approx_kl = 0.0;
    double clip_fraction = 0.0;
    double ratio_max_dev = 0.0;
};

// Shared machinery for the clipped objective (PPO) and the plain policy
// gradient (A2C with epsilon = infinity).
PolicyEval eval_policy_objective(const MlpParams& policy, MlpCache& cache,
                                 const MiniBatch& mb, double epsilon_clip,
                                 double entropy_coef, bool clipped) {
    const std::size_t n = mb.actions.size();
    Matrix logits = mlp_forward_logits(policy, mb.states, &cache);
    const std::size_t n_act = logits.cols;

    PolicyEval ev;
    ev.dlogits.resize(n, n_act);
    std::vector<double> logp(n_act);
    const double inv_n = 1.0 / static_cast<double>(n);

    for (std::size_t i = 0; i < n; ++i) {
        log_softmax_row(logits.row(i), n_act, logp.data());
        const std::size_t a = mb.actions[i];
        const double ratio = std::exp(logp[a] - mb.logp_old[i]);
        const double adv = mb.adv_norm[i];

        const double unclipped = ratio * adv;
        const double clipped_ratio = std::clamp(ratio, 1.0 - epsilon_clip, 1.0 + epsilon_clip);
        const double clipped_term = clipped_ratio * adv;
        const bool use_unclipped = !clipped || unclipped <= clipped_term;
        ev.policy_loss -= (clipped ? std::min(unclipped, clipped_term) : unclipped) * inv_n;
        // non-negative estimator (ratio - 1) - log(ratio)
        ev.approx_kl += ((ratio - 1.0) - (logp[a] - mb.logp_old[i])) * inv_n;
        ev.clip_fraction += (std::abs(ratio - 1.0) > epsilon_clip ? 1.0 : 0.0) * inv_n;
        ev.ratio_max_dev = std::max(ev.ratio_max_dev, std::abs(ratio - 1.0));

        // entropy of the row and its logit gradient
        double h = 0.0;
        for (std::size_t c = 0; c < n_act; ++c) h -= std::exp(logp[c]) * logp[c];
        ev.entropy += h * inv_n;

        double* drow = ev.dlogits.row(i);
        const double coef = use_unclipped ? -ratio * adv * inv_n : 0.0;
        for (std::size_t c = 0; c < n_act; ++c) {
            const double pi_c = std::exp(logp[c]);
            // d(-objective)/dlogits for the ratio term
            drow[c] = coef * ((c == a ? 1.0 : 0.0) - pi_c);
            // d(-entropy_coef * H)/dlogits
            drow[c] += entropy_coef * pi_c * (logp[c] + h) * inv_n;
        }
    }
    return ev;
}

struct ValueEval {
    Matrix dvalue;
    double value_loss = 0.0;
};

ValueEval eval_value_objective(const MlpParams& value, MlpCache& cache, const MiniBatch& mb,
                               double value_coef) {
    const std::size_t n = mb.returns.size();
    Matrix v = mlp_forward(value, mb.states, &cache);
    ValueEval ev;
    ev.dvalue.resize(n, 1);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = v.data[i] - mb.returns[i];
        ev.value_loss += diff * diff * inv_n;
        ev.dvalue.data[i] = 2.0 * value_coef * diff * inv_n;
    }
    return ev;
}

void apply_update(MlpParams& net, AdamState& adam, const MlpCache& cache,
                  const Matrix& dlogits, double clip_norm) {
    MlpBackwardResult back = mlp_backward_logits(net, cache, dlogits);
    auto grad_refs = back.grads.param_refs();
    clip_global_norm(grad_refs, clip_norm);
    adam.step(net.param_refs(), as_const_refs(grad_refs));
}

UpdateMetrics finish_round(UpdateMetrics m, std::size_t batches) {
    if (batches > 0) {
        const double inv = 1.0 / static_cast<double>(batches);
        m.policy_loss *= inv;
        m.value_loss *= inv;
        m.entropy *= inv;
        m.approx_kl *= inv;
        m.clip_fraction *= inv;
    }
    return m;
}

}  // namespace

UpdateMetrics ppo_update(AgentNets& nets, RolloutBuffer& buffer, const PpoHyper& hyper,
                         RngStream& rng) {
    if (buffer.advantages.size() != buffer.size)
        raise(ErrorKind::InvalidParameter, "ppo_update: advantages not computed");
    UpdateMetrics metrics;
    std::size_t batches = 0;
    bool first = true;

    std::vector<std::size_t> idx(buffer.size);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    for (std::size_t epoch = 0; epoch < hyper.ppo_epochs; ++epoch) {
        // Fisher-Yates shuffle from the update stream
        for (std::size_t i = idx.size(); i-- > 1;) {
            const std::size_t j =
                static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(idx[i], idx[j]);
        }
        double epoch_kl = 0.0;
        std::size_t epoch_batches = 0;
        for (std::size_t lo = 0; lo < buffer.size; lo += hyper.batch) {
            const std::size_t hi = std::min(buffer.size, lo + hyper.batch);
            MiniBatch mb = gather(buffer, idx, lo, hi);

            MlpCache pcache;
            PolicyEval pe = eval_policy_objective(nets.policy, pcache, mb,
                                                  hyper.epsilon_clip, hyper.entropy_coef,
                                                  /*clipped=*/true);
            MlpCache vcache;
            ValueEval ve = eval_value_objective(nets.value, vcache, mb, hyper.value_coef);

            const double total = pe.policy_loss - hyper.entropy_coef * pe.entropy +
                                 hyper.value_coef * ve.value_loss;
            if (!std::isfinite(total)) {
                metrics.aborted = true;
                buffer.clear();
                return metrics;
            }
            if (first) {
                metrics.first_policy_loss = pe.policy_loss;
                metrics.first_ratio_max_dev = pe.ratio_max_dev;
                first = false;
            }

            apply_update(nets.policy, nets.policy_adam, pcache, pe.dlogits,
                         hyper.clip_grad_norm);
            apply_update(nets.value, nets.value_adam, vcache, ve.dvalue,
                         hyper.clip_grad_norm);

            metrics.policy_loss += pe.policy_loss;
            metrics.value_loss += ve.value_loss;
            metrics.entropy += pe.entropy;
            metrics.approx_kl += pe.approx_kl;
            metrics.clip_fraction += pe.clip_fraction;
            epoch_kl += pe.approx_kl;
            ++epoch_batches;
            ++batches;
        }
        metrics.epoch_kl.push_back(epoch_kl / static_cast<double>(std::max<std::size_t>(1, epoch_batches)));
    }
    buffer.clear();  // on-policy: every transition is used once per round
    return finish_round(metrics, batches);
}

UpdateMetrics a2c_update(AgentNets& nets, RolloutBuffer& buffer, const PpoHyper& hyper) {
    if (buffer.advantages.size() != buffer.size)
        raise(ErrorKind::InvalidParameter, "a2c_update: advantages not computed");
    std::vector<std::size_t> idx(buffer.size);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    MiniBatch mb = gather(buffer, idx, 0, buffer.size);

    MlpCache pcache;
    PolicyEval pe = eval_policy_objective(nets.policy, pcache, mb,
                                          /*epsilon_clip=*/0.0, hyper.entropy_coef,
                                          /*clipped=*/false);
    MlpCache vcache;
    ValueEval ve = eval_value_objective(nets.value, vcache, mb, hyper.value_coef);

    UpdateMetrics metrics;
    const double total = pe.policy_loss - hyper.entropy_coef * pe.entropy +
                         hyper.value_coef * ve.value_loss;
    if (!std::isfinite(total)) {
        metrics.aborted = true;
        buffer.clear();
        return metrics;
    }
    metrics.first_policy_loss = pe.policy_loss;
    metrics.first_ratio_max_dev = pe.ratio_max_dev;

    apply_update(nets.policy, nets.policy_adam, pcache, pe.dlogits, hyper.clip_grad_norm);
    apply_update(nets.value, nets.value_adam, vcache, ve.dvalue, hyper.clip_grad_norm);

    metrics.policy_loss = pe.policy_loss;
    metrics.value_loss = ve.value_loss;
    metrics.entropy = pe.entropy;
    metrics.approx_kl = pe.approx_kl;
    buffer.clear();
    return metrics;
}

void ReplayBuffer::push(DqnTransition t) {
    if (data_.size() < capacity_) {
        data_.push_back(std::move(t));
    } else {
        data_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
}

const DqnTransition& ReplayBuffer::sample(RngStream& rng) const {
    const std::size_t i = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(data_.size()) - 1));
    return data_[i];
}

UpdateMetrics dqn_update(DqnState& dqn, const PpoHyper& hyper, const DqnHyper& dhyper,
                         RngStream& rng) {
    const double gamma = dhyper.gamma >= 0.0 ? dhyper.gamma : hyper.gamma;
    UpdateMetrics metrics;
    if (dqn.replay.size() < hyper.batch)
        raise(ErrorKind::InvalidParameter, "dqn_update: replay holds fewer than batch transitions");

    const std::size_t n = hyper.batch;
    const std::size_t dim = dqn.qnet.spec.layer_sizes.front();
    const std::size_t n_act = dqn.qnet.spec.layer_sizes.back();

    Matrix states(n, dim), next_states(n, dim);
    std::vector<std::size_t> actions(n);
    std::vector<double> rewards(n);
    std::vector<std::uint8_t> done(n);
    for (std::size_t i = 0; i < n; ++i) {
        const DqnTransition& t = dqn.replay.sample(rng);
        for (std::size_t c = 0; c < dim; ++c) {
            states.at(i, c) = t.s[c];
            next_states.at(i, c) = t.s2[c];
        }
        actions[i] = t.a;
        rewards[i] = t.r;
        done[i] = t.done ? 1 : 0;
    }

    Matrix q_next = mlp_forward(dqn.target, next_states);
    MlpCache cache;
    Matrix q = mlp_forward(dqn.qnet, states, &cache);

    Matrix dq(n, n_act);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double best = q_next.at(i, 0);
        for (std::size_t c = 1; c < n_act; ++c) best = std::max(best, q_next.at(i, c));
        const double target = rewards[i] + (done[i] ? 0.0 : gamma * best);
        const double diff = q.at(i, actions[i]) - target;
        metrics.value_loss += diff * diff * inv_n;
        dq.at(i, actions[i]) = 2.0 * diff * inv_n;
    }
    if (!std::isfinite(metrics.value_loss)) {
        metrics.aborted = true;
        return metrics;
    }
    apply_update(dqn.qnet, dqn.adam, cache, dq, hyper.clip_grad_norm);
    return metrics;
}

namespace {

std::size_t greedy_q_action(const MlpParams& qnet, const std::vector<double>& state) {
    Matrix q = mlp_forward(qnet, row_matrix(state));
    std::size_t best = 0;
    for (std::size_t c = 1; c < q.cols; ++c)
        if (q.data[c] > q.data[best]) best = c;
    return best;
}

RunLogRow make_row(std::size_t step, std::size_t episode, std::size_t action,
                   std::size_t n_actions, double reward, const EnvInfo& info) {
    RunLogRow row;
    row.step = step;
    row.episode = episode;
    row.action_delta = static_cast<int>(action) - static_cast<int>((n_actions - 1) / 2);
    row.reward = reward;
    row.ppl = info.ppl;
    row.cost = info.cost;
    row.p = info.p;
    row.sigma = info.sigma;
    row.m = info.m;
    row.loss_prob = info.loss_prob;
    row.source = info.source == RewardSource::Surrogate ? 1 : 0;
    return row;
}

}  // namespace

TrainResult train_agent(AgentKind kind, RlEnv& env, const PpoHyper& hyper,
                        const DqnHyper& dhyper, std::size_t total_steps, RngStream& rng,
                        const StepCallback& on_step) {
    hyper.validate();
    TrainResult result;
    RngStream init_rng = rng.derive("agent.init");
    RngStream act_rng = rng.derive("agent.act");
    RngStream update_rng = rng.derive("agent.update");

    const std::size_t dim = env.state_dim();
    const std::size_t n_act = env.n_actions();
    result.nets.policy = make_policy_net(dim, n_act, hyper.hidden, init_rng);
    result.nets.value = make_value_net(dim, 1, hyper.hidden, init_rng);
    AdamConfig adam_cfg;
    adam_cfg.alpha = hyper.alpha;
    result.nets.policy_adam = AdamState(adam_cfg, as_const_refs(result.nets.policy.param_refs()));
    result.nets.value_adam = AdamState(adam_cfg, as_const_refs(result.nets.value.param_refs()));

    using Clock = std::chrono::steady_clock;
    double step_ms_total = 0.0;
    std::size_t steps_done = 0;
    std::size_t episode = 0;

    auto log_step = [&](std::size_t action, double reward) {
        RunLogRow row = make_row(steps_done, episode, action, n_act, reward, env.info());
        if (on_step) on_step(row);
        result.log.rows.push_back(row);
    };

    if (kind == AgentKind::Ppo || kind == AgentKind::A2c) {
        const std::size_t rounds = total_steps / hyper.n_step;
        for (std::size_t round = 0; round < rounds; ++round) {
            RolloutBuffer buf;
            buf.reserve(hyper.n_step, dim);
            std::vector<double> state;
            for (std::size_t t = 0; t < hyper.n_step; ++t) {
                if (t % hyper.steps_per_episode == 0) {
                    state = env.reset();
                    if (t > 0 || round > 0) ++episode;
                }
                ActResult act = policy_act(result.nets.policy, state, act_rng, ActMode::Sample);
                Matrix v = mlp_forward(result.nets.value, row_matrix(state));
                for (std::size_t c = 0; c < dim; ++c) buf.states.at(t, c) = state[c];
                buf.actions[t] = act.action;
                buf.log_probs[t] = act.log_prob;
                buf.values[t] = v.data[0];

                const auto t0 = Clock::now();
                RlEnv::StepOut out = env.step(act.action);
                step_ms_total += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
                buf.rewards[t] = out.reward;
                buf.infos[t] = env.info();
                buf.episode_end[t] =
                    (t % hyper.steps_per_episode == hyper.steps_per_episode - 1);
                state = std::move(out.state);
                log_step(act.action, out.reward);
                ++steps_done;
            }
            compute_gae(buf, hyper.gamma, hyper.xi_gae);
            UpdateMetrics m = kind == AgentKind::Ppo
                                  ? ppo_update(result.nets, buf, hyper, update_rng)
                                  : a2c_update(result.nets, buf, hyper);
            result.log.updates.push_back(m);
            if (m.aborted)
                raise(ErrorKind::Runtime, "agent update aborted on a non-finite loss at round " +
                                              std::to_string(round));
        }
    } else if (kind == AgentKind::Random) {
        std::vector<double> state;
        for (std::size_t t = 0; t < total_steps; ++t) {
            if (t % hyper.steps_per_episode == 0) {
                state = env.reset();
                if (t > 0) ++episode;
            }
            const std::size_t action =
                static_cast<std::size_t>(act_rng.uniform_int(0, static_cast<std::int64_t>(n_act) - 1));
            const auto t0 = Clock::now();
            RlEnv::StepOut out = env.step(action);
            step_ms_total += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
            state = std::move(out.state);
            log_step(action, out.reward);
            ++steps_done;
        }
    } else {  // Dqn
        DqnState dqn{make_value_net(dim, n_act, hyper.hidden, init_rng),
                     MlpParams{}, AdamState(adam_cfg, {}), ReplayBuffer(dhyper.replay_capacity)};
        dqn.target = dqn.qnet;
        dqn.adam = AdamState(adam_cfg, as_const_refs(dqn.qnet.param_refs()));

        const std::size_t decay_steps = std::max<std::size_t>(
            1, static_cast<std::size_t>(static_cast<double>(total_steps) * dhyper.eps_decay_fraction));
        std::vector<double> state;
        for (std::size_t t = 0; t < total_steps; ++t) {
            if (t % hyper.steps_per_episode == 0) {
                state = env.reset();
                if (t > 0) ++episode;
            }
            const double frac = std::min(1.0, static_cast<double>(t) / decay_steps);
            const double eps = dhyper.eps_start + (dhyper.eps_end - dhyper.eps_start) * frac;
            std::size_t action;
            if (act_rng.next_double() < eps)
                action = static_cast<std::size_t>(
                    act_rng.uniform_int(0, static_cast<std::int64_t>(n_act) - 1));
            else
                action = greedy_q_action(dqn.qnet, state);

            const auto t0 = Clock::now();
            RlEnv::StepOut out = env.step(action);
            step_ms_total += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();

            DqnTransition tr;
            tr.s = state;
            tr.a = action;
            tr.r = out.reward;
            tr.s2 = out.state;
            tr.done = (t % hyper.steps_per_episode == hyper.steps_per_episode - 1);
            dqn.replay.push(std::move(tr));
            state = std::move(out.state);
            log_step(action, out.reward);
            ++steps_done;

            if (dqn.replay.size() >= std::max(hyper.batch, dhyper.learn_start)) {
                UpdateMetrics m = dqn_update(dqn, hyper, dhyper, update_rng);
                if (m.aborted)
                    raise(ErrorKind::Runtime, "dqn update aborted on a non-finite loss");
                if (result.log.updates.empty() ||
                    (t % 50 == 0))  // keep the update log compact
                    result.log.updates.push_back(m);
            }
            if ((t + 1) % dhyper.target_sync == 0) dqn.target = dqn.qnet;
        }
        result.nets.policy = dqn.qnet;  // exported as the greedy policy
    }

    result.mean_step_ms = steps_done ? step_ms_total / static_cast<double>(steps_done) : 0.0;
    return result;
}

std::vector<EpisodeResult> evaluate_policy(RlEnv& env, const MlpParams* policy,
                                           std::size_t episodes,
                                           std::size_t steps_per_episode, RngStream& rng,
                                           ActMode mode) {
    std::vector<EpisodeResult> results;
    results.reserve(episodes);
    for (std::size_t e = 0; e < episodes; ++e) {
        std::vector<double> state = env.reset();
        double total = 0.0;
        for (std::size_t t = 0; t < steps_per_episode; ++t) {
            std::size_t action;
            if (policy == nullptr) {
                action = static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(env.n_actions()) - 1));
            } else {
                action = policy_act(*policy, state, rng, mode).action;
            }
            RlEnv::StepOut out = env.step(action);
            total += out.reward;
            state = std::move(out.state);
        }
        EpisodeResult er;
        er.mean_reward = total / static_cast<double>(steps_per_episode);
        er.last_info = env.info();
        results.push_back(er);
    }
    return results;
}

}  // namespace splitsim
