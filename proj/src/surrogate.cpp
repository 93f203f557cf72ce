#include "splitsim/surrogate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "splitsim/checkpoint.hpp"
#include "splitsim/errors.hpp"

namespace splitsim {

namespace {

Matrix state_row(const std::vector<double>& v) {
    Matrix m(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = v[i];
    return m;
}

}  // namespace

SurrogateModel::Prediction SurrogateModel::predict(double p, double sigma, double m) const {
    Prediction out;
    const double in[3] = {p, sigma, m};
    Matrix x(1, 3);
    for (int i = 0; i < 3; ++i) {
        x.data[i] = (in[i] - in_mean[i]) / in_std[i];
        if (in[i] < hull_lo[i] || in[i] > hull_hi[i]) out.extrapolating = true;
    }
    Matrix y = mlp_forward(net, x);
    out.ppl = y.data[0] * out_std + out_mean;
    return out;
}

nlohmann::json SurrogateModel::to_json() const {
    nlohmann::json j;
    j["format"] = "splitsim-surrogate-v1";
    j["net"] = mlp_to_json(net);
    j["in_mean"] = in_mean;
    j["in_std"] = in_std;
    j["out_mean"] = out_mean;
    j["out_std"] = out_std;
    j["hull_lo"] = hull_lo;
    j["hull_hi"] = hull_hi;
    return j;
}

SurrogateModel SurrogateModel::from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "splitsim-surrogate-v1")
        raise(ErrorKind::InvalidInput, "not a surrogate checkpoint");
    SurrogateModel m;
    m.net = mlp_from_json(j.at("net"));
    m.in_mean = j.at("in_mean").get<std::array<double, 3>>();
    m.in_std = j.at("in_std").get<std::array<double, 3>>();
    m.out_mean = j.at("out_mean").get<double>();
    m.out_std = j.at("out_std").get<double>();
    m.hull_lo = j.at("hull_lo").get<std::array<double, 3>>();
    m.hull_hi = j.at("hull_hi").get<std::array<double, 3>>();
    return m;
}

std::vector<SurrogateRecord> collect_records(SplitEnv& env, const CollectOptions& opts,
                                             RngStream& rng) {
    std::vector<SurrogateRecord> records;
    const CaseSpec& cs = env.options().scenario;
    const int max_p = env.max_p();
    const std::size_t trials = std::max<std::size_t>(1, opts.trials);

    auto measure = [&](int p, double sigma, double m, RngStream& draw) {
        EnvState s{sigma, m, p};
        // each reward evaluation already averages over the env's sampling
        // plan; extra trials average fresh channel draws on top of that
        double acc = 0.0;
        for (std::size_t t = 0; t < trials; ++t) {
            EnvInfo info;
            RngStream trial = draw.derive(t);
            env.reward_true(s, trial, &info);
            acc += info.ppl;
        }
        SurrogateRecord rec;
        rec.p = p;
        rec.sigma = sigma;
        rec.m = m;
        rec.ppl = acc / static_cast<double>(trials);
        return rec;
    };

    if (opts.plan == SamplingPlan::Random) {
        for (std::size_t i = 0; i < opts.n; ++i) {
            RngStream draw = rng.derive("collect", i);
            const int p = static_cast<int>(draw.uniform_int(1, max_p));
            const double sigma = draw.uniform(cs.sigma_lo, cs.sigma_hi);
            const double m = env.m_of_loss_prob(draw.uniform(cs.loss_lo, cs.loss_hi));
            records.push_back(measure(p, sigma, m, draw));
        }
    } else {
        const std::size_t np = opts.lattice_p == 0 ? static_cast<std::size_t>(max_p)
                                                   : opts.lattice_p;
        std::size_t i = 0;
        for (std::size_t pi = 0; pi < np; ++pi) {
            const int p = 1 + static_cast<int>(pi * (max_p - 1) / std::max<std::size_t>(1, np - 1));
            for (std::size_t si = 0; si < opts.lattice_sigma; ++si) {
                const double sigma =
                    opts.lattice_sigma == 1
                        ? cs.sigma_lo
                        : cs.sigma_lo + (cs.sigma_hi - cs.sigma_lo) * si / (opts.lattice_sigma - 1.0);
                for (std::size_t mi = 0; mi < opts.lattice_m; ++mi) {
                    const double loss =
                        opts.lattice_m == 1
                            ? cs.loss_lo
                            : cs.loss_lo + (cs.loss_hi - cs.loss_lo) * mi / (opts.lattice_m - 1.0);
                    RngStream draw = rng.derive("collect.lattice", i++);
                    records.push_back(measure(p, sigma, env.m_of_loss_prob(loss), draw));
                }
            }
        }
    }
    return records;
}

namespace {

struct Standardizer {
    std::array<double, 3> in_mean{}, in_std{};
    double out_mean = 0.0, out_std = 1.0;
    std::array<double, 3> lo{}, hi{};
};

Standardizer standardize_stats(const std::vector<SurrogateRecord>& records) {
    Standardizer st;
    st.lo = {1e300, 1e300, 1e300};
    st.hi = {-1e300, -1e300, -1e300};
    const double n = static_cast<double>(records.size());
    for (const auto& r : records) {
        const double in[3] = {static_cast<double>(r.p), r.sigma, r.m};
        for (int i = 0; i < 3; ++i) {
            st.in_mean[i] += in[i] / n;
            st.lo[i] = std::min(st.lo[i], in[i]);
            st.hi[i] = std::max(st.hi[i], in[i]);
        }
        st.out_mean += r.ppl / n;
    }
    std::array<double, 3> var{};
    double out_var = 0.0;
    for (const auto& r : records) {
        const double in[3] = {static_cast<double>(r.p), r.sigma, r.m};
        for (int i = 0; i < 3; ++i) var[i] += (in[i] - st.in_mean[i]) * (in[i] - st.in_mean[i]) / n;
        out_var += (r.ppl - st.out_mean) * (r.ppl - st.out_mean) / n;
    }
    for (int i = 0; i < 3; ++i) st.in_std[i] = std::max(1e-9, std::sqrt(var[i]));
    st.out_std = std::max(1e-9, std::sqrt(out_var));
    return st;
}

MlpParams train_regressor(const std::vector<SurrogateRecord>& records,
                          const std::vector<std::size_t>& subset, const Standardizer& st,
                          const SurrogateFitOptions& opts, RngStream& rng) {
    MlpSpec spec;
    spec.layer_sizes.push_back(3);
    for (std::size_t h : opts.hidden) spec.layer_sizes.push_back(h);
    spec.layer_sizes.push_back(1);
    spec.hidden = Activation::Relu;
    spec.output = Activation::Identity;

    RngStream init_rng = rng.derive("init");
    MlpParams net = mlp_init(spec, init_rng);
    AdamConfig cfg;
    cfg.alpha = opts.lr;
    AdamState adam(cfg, as_const_refs(net.param_refs()));

    const std::size_t n = subset.size();
    const std::size_t batch = std::min(opts.batch, n);
    std::vector<std::size_t> order(subset);
    RngStream shuffle_rng = rng.derive("shuffle");

    Matrix x(batch, 3), y(batch, 1);
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        // cosine decay: fine convergence matters more than raw speed here
        const double progress = static_cast<double>(epoch) / static_cast<double>(opts.epochs);
        adam.set_alpha(opts.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress)));
        for (std::size_t i = order.size(); i-- > 1;) {
            const std::size_t j = static_cast<std::size_t>(
                shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(order[i], order[j]);
        }
        for (std::size_t lo = 0; lo + batch <= n; lo += batch) {
            for (std::size_t b = 0; b < batch; ++b) {
                const SurrogateRecord& r = records[order[lo + b]];
                x.at(b, 0) = (static_cast<double>(r.p) - st.in_mean[0]) / st.in_std[0];
                x.at(b, 1) = (r.sigma - st.in_mean[1]) / st.in_std[1];
                x.at(b, 2) = (r.m - st.in_mean[2]) / st.in_std[2];
                y.at(b, 0) = (r.ppl - st.out_mean) / st.out_std;
            }
            MlpCache cache;
            mlp_forward(net, x, &cache);
            MseResult mse = mse_loss(cache.output, y);
            MlpBackwardResult back = mlp_backward(net, cache, mse.grad);
            auto grefs = back.grads.param_refs();
            clip_global_norm(grefs, 1.0);
            adam.step(net.param_refs(), as_const_refs(grefs));
        }
    }
    return net;
}

double evaluate_fold(const MlpParams& net, const Standardizer& st,
                     const std::vector<SurrogateRecord>& records,
                     const std::vector<std::size_t>& fold, double* mae) {
    double mse = 0.0, abs_err = 0.0;
    Matrix x(1, 3);
    for (std::size_t idx : fold) {
        const SurrogateRecord& r = records[idx];
        x.data[0] = (static_cast<double>(r.p) - st.in_mean[0]) / st.in_std[0];
        x.data[1] = (r.sigma - st.in_mean[1]) / st.in_std[1];
        x.data[2] = (r.m - st.in_mean[2]) / st.in_std[2];
        Matrix y = mlp_forward(net, x);
        const double pred = y.data[0] * st.out_std + st.out_mean;
        const double diff = pred - r.ppl;
        mse += diff * diff;
        abs_err += std::abs(diff);
    }
    const double n = static_cast<double>(fold.size());
    if (mae) *mae = abs_err / n;
    return mse / n;
}

}  // namespace

std::pair<SurrogateModel, CvReport> fit_surrogate(const std::vector<SurrogateRecord>& records,
                                                  const SurrogateFitOptions& opts,
                                                  RngStream& rng) {
    if (opts.k_folds < 2)
        raise(ErrorKind::InvalidParameter, "fit_surrogate: need at least 2 folds");
    if (records.size() < 10 * opts.k_folds)
        raise(ErrorKind::InvalidInput, "fit_surrogate: need at least 10 records per fold");

    const Standardizer st = standardize_stats(records);

    // shuffled fold assignment; fold sizes differ by at most one
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngStream fold_rng = rng.derive("folds");
    for (std::size_t i = order.size(); i-- > 1;) {
        const std::size_t j =
            static_cast<std::size_t>(fold_rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(order[i], order[j]);
    }
    std::vector<std::vector<std::size_t>> folds(opts.k_folds);
    for (std::size_t i = 0; i < order.size(); ++i) folds[i % opts.k_folds].push_back(order[i]);

    CvReport report;
    report.k = opts.k_folds;
    report.target_variance = st.out_std * st.out_std;
    for (std::size_t f = 0; f < opts.k_folds; ++f) {
        std::vector<std::size_t> train_idx;
        train_idx.reserve(records.size() - folds[f].size());
        for (std::size_t g = 0; g < opts.k_folds; ++g)
            if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
        RngStream fit_rng = rng.derive("cv", f);
        MlpParams net = train_regressor(records, train_idx, st, opts, fit_rng);
        double mae = 0.0;
        const double mse = evaluate_fold(net, st, records, folds[f], &mae);
        report.fold_mse.push_back(mse);
        report.fold_mae.push_back(mae);
        report.mean_mse += mse / static_cast<double>(opts.k_folds);
        report.mean_mae += mae / static_cast<double>(opts.k_folds);
    }
    report.normalized_mse = report.mean_mse / report.target_variance;

    // final model on all records
    std::vector<std::size_t> all(records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    RngStream final_rng = rng.derive("final");
    SurrogateModel model;
    model.net = train_regressor(records, all, st, opts, final_rng);
    model.in_mean = st.in_mean;
    model.in_std = st.in_std;
    model.out_mean = st.out_mean;
    model.out_std = st.out_std;
    model.hull_lo = st.lo;
    model.hull_hi = st.hi;
    return {std::move(model), std::move(report)};
}

std::string records_to_csv(const std::vector<SurrogateRecord>& records) {
    std::ostringstream out;
    out << "p,sigma,m,ppl\n";
    out.precision(17);
    for (const auto& r : records)
        out << r.p << ',' << r.sigma << ',' << r.m << ',' << r.ppl << '\n';
    return out.str();
}

std::vector<SurrogateRecord> records_from_csv(const std::string& text) {
    std::vector<SurrogateRecord> records;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("p,sigma,m,ppl", 0) != 0)
        raise(ErrorKind::InvalidInput, "dataset csv must start with header p,sigma,m,ppl");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        SurrogateRecord r;
        std::istringstream row(line);
        char comma;
        if (!(row >> r.p >> comma >> r.sigma >> comma >> r.m >> comma >> r.ppl))
            raise(ErrorKind::InvalidInput, "malformed dataset row: " + line);
        records.push_back(r);
    }
    return records;
}

Algorithm1Result algorithm1_train(SplitEnv& env, const PpoHyper& hyper,
                                  const Algorithm1Options& opts, std::size_t total_steps,
                                  RngStream& rng, const StepCallback& on_step) {
    hyper.validate();
    Algorithm1Result result;
    RngStream init_rng = rng.derive("agent.init");
    RngStream act_rng = rng.derive("agent.act");
    RngStream update_rng = rng.derive("agent.update");
    RngStream fit_rng = rng.derive("surrogate.fit");

    const std::size_t dim = env.state_dim();
    const std::size_t n_act = env.n_actions();
    TrainResult& train = result.train;
    train.nets.policy = make_policy_net(dim, n_act, hyper.hidden, init_rng);
    train.nets.value = make_value_net(dim, 1, hyper.hidden, init_rng);
    AdamConfig adam_cfg;
    adam_cfg.alpha = hyper.alpha;
    train.nets.policy_adam = AdamState(adam_cfg, as_const_refs(train.nets.policy.param_refs()));
    train.nets.value_adam = AdamState(adam_cfg, as_const_refs(train.nets.value.param_refs()));

    env.set_reward_source(RewardSource::True);
    bool use_surrogate = false;

    using Clock = std::chrono::steady_clock;
    double pre_ms = 0.0, post_ms = 0.0;
    std::size_t pre_steps = 0, post_steps = 0;
    std::size_t episode = 0;
    std::size_t steps_done = 0;

    const std::size_t rounds = total_steps / hyper.n_step;
    for (std::size_t round = 0; round < rounds; ++round) {
        RolloutBuffer buf;
        buf.reserve(hyper.n_step, dim);
        std::vector<double> state;
        for (std::size_t t = 0; t < hyper.n_step; ++t) {
            if (t % hyper.steps_per_episode == 0) {
                state = env.reset();
                if (steps_done > 0) ++episode;
            }
            ActResult act = policy_act(train.nets.policy, state, act_rng, ActMode::Sample);
            Matrix v = mlp_forward(train.nets.value, state_row(state));
            for (std::size_t c = 0; c < dim; ++c) buf.states.at(t, c) = state[c];
            buf.actions[t] = act.action;
            buf.log_probs[t] = act.log_prob;
            buf.values[t] = v.data[0];

            const auto t0 = Clock::now();
            RlEnv::StepOut out = env.step(act.action);
            const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
            if (use_surrogate) {
                post_ms += ms;
                ++post_steps;
            } else {
                pre_ms += ms;
                ++pre_steps;
            }

            buf.rewards[t] = out.reward;
            EnvInfo info = env.info();
            buf.infos[t] = info;
            buf.episode_end[t] = (t % hyper.steps_per_episode == hyper.steps_per_episode - 1);
            state = std::move(out.state);

            if (!use_surrogate) {
                SurrogateRecord rec;
                rec.p = info.p;
                rec.sigma = info.sigma;
                rec.m = info.m;
                rec.ppl = info.ppl;
                result.records.push_back(rec);
            }

            RunLogRow row;
            row.step = steps_done;
            row.episode = episode;
            row.action_delta = static_cast<int>(act.action) - static_cast<int>((n_act - 1) / 2);
            row.reward = out.reward;
            row.ppl = info.ppl;
            row.cost = info.cost;
            row.p = info.p;
            row.sigma = info.sigma;
            row.m = info.m;
            row.loss_prob = info.loss_prob;
            row.source = info.source == RewardSource::Surrogate ? 1 : 0;
            if (on_step) on_step(row);
            train.log.rows.push_back(row);
            ++steps_done;
        }

        compute_gae(buf, hyper.gamma, hyper.xi_gae);
        UpdateMetrics m = ppo_update(train.nets, buf, hyper, update_rng);
        train.log.updates.push_back(m);
        if (m.aborted)
            raise(ErrorKind::Runtime, "algorithm1: ppo update aborted on a non-finite loss");

        if (!use_surrogate) {
            const std::size_t epoch_index = round + 1;
            const bool by_epoch = opts.switch_epoch > 0 && epoch_index >= opts.switch_epoch;
            const bool by_records =
                opts.switch_epoch == 0 && result.records.size() >= opts.switch_records;
            if (by_epoch || by_records) {
                auto [model, report] = fit_surrogate(result.records, opts.fit, fit_rng);
                result.cv = report;
                if (report.normalized_mse <= opts.gate_normalized_mse) {
                    result.surrogate = std::move(model);
                    env.attach_surrogate(
                        std::make_shared<SurrogateModel>(*result.surrogate));
                    env.set_reward_source(RewardSource::Surrogate);
                    use_surrogate = true;
                    result.switch_epoch = epoch_index;
                    train.log.switch_epoch = epoch_index;
                    result.lm_calls_pre_switch = env.lm_call_count();
                } else {
                    result.switch_refused = true;
                }
            }
        }
    }

    result.pre_switch_step_ms = pre_steps ? pre_ms / static_cast<double>(pre_steps) : 0.0;
    result.post_switch_step_ms = post_steps ? post_ms / static_cast<double>(post_steps) : 0.0;
    result.lm_calls_total = env.lm_call_count();
    if (!result.switch_epoch) result.lm_calls_pre_switch = result.lm_calls_total;
    train.mean_step_ms =
        (pre_ms + post_ms) / std::max<std::size_t>(1, pre_steps + post_steps);
    return result;
}

}  // namespace splitsim
