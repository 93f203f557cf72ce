#include "splitsim/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "splitsim/analysis.hpp"
#include "splitsim/checkpoint.hpp"
#include "splitsim/errors.hpp"
#include "splitsim/parallel.hpp"

namespace splitsim {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest(const ExperimentConfig& cfg, const std::string& command,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs,
                    const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json m;
    m["command"] = command;
    m["seed"] = cfg.seed;
    m["config_hash"] = config_hash(cfg);
    m["config"] = cfg.raw;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["versions"] = {{"splitsim", "0.1.0"}};
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = *it;
    m["written_at"] = timestamp_utc();  // the only field exempt from idempotency
    save_json_file(m, cfg.out_dir + "/manifest-" + command + ".json");
}

}  // namespace

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::MissingInput, "missing file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorKind::Runtime, "cannot open for writing: " + path);
    out << text;
    if (!out) raise(ErrorKind::Runtime, "write failed: " + path);
}

std::vector<TokenSeq> make_eval_sequences(const TokenSeq& tokens, std::size_t d_in,
                                          std::size_t max_count) {
    std::vector<TokenSeq> out;
    for (std::size_t off = 0; off + d_in <= tokens.size(); off += d_in) {
        out.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(off),
                         tokens.begin() + static_cast<std::ptrdiff_t>(off + d_in));
        if (max_count && out.size() >= max_count) break;
    }
    if (out.empty()) raise(ErrorKind::InvalidInput, "corpus shorter than one window");
    return out;
}

EnvBundle make_env_bundle(const ExperimentConfig& cfg, RngStream rng) {
    EnvBundle b;
    auto [lm, vocab] = lm_from_json(load_json_file(cfg.resolved_lm_checkpoint()));
    b.lm = std::make_shared<LmParams>(std::move(lm));
    b.vocab = std::move(vocab);
    const std::string corpus = read_text_file(cfg.corpus_path);
    b.sequences = make_eval_sequences(b.vocab.encode(corpus), b.lm->config.d_in);
    EnvOptions env_opts = cfg.env;
    b.env = std::make_unique<SplitEnv>(b.lm, b.sequences, env_opts, rng);
    return b;
}

nlohmann::json run_train_lm(const ExperimentConfig& cfg) {
    const std::string corpus = read_text_file(cfg.corpus_path);
    RngStream rng(cfg.seed, fnv1a64("cmd.train_lm"));
    LmTrainOptions opts = cfg.lm_train;
    LmTrainResult result = train_lm(corpus, cfg.lm, opts, rng);

    // held-out style evaluation on fixed windows of the corpus
    std::vector<TokenSeq> sample =
        make_eval_sequences(result.vocab.encode(corpus), result.params.config.d_in, 32);
    PplResult clean = perplexity_full(result.params, sample);

    const std::string ckpt_path = cfg.resolved_lm_checkpoint();
    save_json_file(lm_to_json(result.params, result.vocab), ckpt_path);
    const std::string vocab_path = cfg.out_dir + "/vocab.json";
    save_json_file(nlohmann::json(result.vocab.to_map()), vocab_path);

    // loss history as a csv artifact for later curve analysis
    std::ostringstream losses;
    losses << "step,loss\n";
    for (std::size_t i = 0; i < result.loss_history.size(); ++i)
        losses << i << ',' << fmt(result.loss_history[i]) << '\n';
    const std::string loss_path = cfg.out_dir + "/lm_train_loss.csv";
    write_text_file(loss_path, losses.str());

    write_manifest(cfg, "train-lm", {cfg.corpus_path}, {ckpt_path, vocab_path, loss_path});

    return nlohmann::json{{"checkpoint", ckpt_path},
                          {"vocab", vocab_path},
                          {"vocab_size", result.vocab.size()},
                          {"final_train_ppl", result.final_train_ppl},
                          {"clean_eval_ppl", clean.ppl},
                          {"steps", cfg.lm_train.steps}};
}

nlohmann::json run_sweep(const ExperimentConfig& cfg) {
    auto [lm, vocab] = lm_from_json(load_json_file(cfg.resolved_lm_checkpoint()));
    const std::string corpus = read_text_file(cfg.corpus_path);
    std::vector<TokenSeq> all = make_eval_sequences(vocab.encode(corpus), lm.config.d_in);
    RngStream rng(cfg.seed, fnv1a64("cmd.sweep"));

    // fixed evaluation sample
    std::vector<TokenSeq> sample;
    RngStream pick = rng.derive("sample");
    for (std::size_t i = 0; i < std::min(cfg.sweep.sequences, all.size()); ++i)
        sample.push_back(all[static_cast<std::size_t>(
            pick.uniform_int(0, static_cast<std::int64_t>(all.size()) - 1))]);

    std::vector<int> p_list = cfg.sweep.p_list;
    if (p_list.empty())
        for (int p = 1; p <= static_cast<int>(lm.config.layers) - 1; ++p) p_list.push_back(p);

    std::ostringstream csv;
    csv << "p,mode,point,sigma,m,loss_prob,ppl,ppl_stderr\n";
    const bool snr_mode = cfg.sweep.mode == "snr";

    for (int p : p_list) {
        // per-split signal rms for the snr axis
        double rms = 1.0;
        if (snr_mode) {
            double sq = 0.0;
            std::size_t count = 0;
            for (const TokenSeq& seq : sample) {
                Matrix y = lm_forward_ue(lm, seq, static_cast<std::size_t>(p));
                for (double v : y.data) sq += v * v;
                count += y.data.size();
            }
            rms = std::sqrt(sq / static_cast<double>(count));
        }
        const auto& points = snr_mode ? cfg.sweep.snr_db_list : cfg.sweep.loss_list;
        for (double point : points) {
            ChannelParams ch = cfg.channel;
            double m_val = 0.0, loss_prob = 0.0;
            if (snr_mode) {
                ch.mode = ChannelMode::Awgn;
                ch.sigma = snr_to_sigma(point, rms);
            } else {
                ch.sigma = cfg.sweep.sigma;
                if (point <= 0.0) {
                    // loss -> 0 is the m -> inf limit: unit gain, nothing dropped
                    ch.mode = ChannelMode::Awgn;
                } else {
                    ch.mode = ChannelMode::Nakagami;
                    ch.m = calibrate_m(point, ch.omega, ch.h_th);
                    m_val = ch.m;
                    loss_prob = packet_loss_prob(ch.m, ch.omega, ch.h_th);
                }
            }
            RngStream cell = rng.derive("cell").derive(static_cast<std::uint64_t>(p)).derive(
                fnv1a64(fmt(point)));
            PplResult res = perplexity(lm, sample, static_cast<std::size_t>(p), ch, cell,
                                       cfg.sweep.trials, cfg.threads);
            csv << p << ',' << cfg.sweep.mode << ',' << fmt(point) << ',' << fmt(ch.sigma)
                << ',' << fmt(m_val) << ',' << fmt(loss_prob) << ',' << fmt(res.ppl) << ','
                << fmt(res.stderr_ppl) << '\n';
        }
    }
    const std::string sweep_path = cfg.out_dir + "/sweep.csv";
    write_text_file(sweep_path, csv.str());
    write_manifest(cfg, "sweep", {cfg.resolved_lm_checkpoint(), cfg.corpus_path},
                   {sweep_path});
    return nlohmann::json{{"sweep", sweep_path},
                          {"rows", p_list.size() * (snr_mode ? cfg.sweep.snr_db_list.size()
                                                             : cfg.sweep.loss_list.size())}};
}

nlohmann::json run_collect(const ExperimentConfig& cfg) {
    RngStream rng(cfg.seed, fnv1a64("cmd.collect"));
    EnvBundle bundle = make_env_bundle(cfg, rng.derive("env"));
    RngStream draw = rng.derive("records");
    std::vector<SurrogateRecord> records = collect_records(*bundle.env, cfg.collect, draw);
    const std::string path = cfg.resolved_dataset();
    write_text_file(path, records_to_csv(records));
    write_manifest(cfg, "collect", {cfg.resolved_lm_checkpoint(), cfg.corpus_path}, {path});
    return nlohmann::json{{"dataset", path}, {"records", records.size()}};
}

nlohmann::json run_fit_surrogate(const ExperimentConfig& cfg) {
    const std::string dataset = cfg.resolved_dataset();
    std::vector<SurrogateRecord> records = records_from_csv(read_text_file(dataset));
    RngStream rng(cfg.seed, fnv1a64("cmd.fit_surrogate"));
    auto [model, report] = fit_surrogate(records, cfg.surrogate_fit, rng);
    const std::string ckpt = cfg.resolved_surrogate_checkpoint();
    save_json_file(model.to_json(), ckpt);
    nlohmann::json cv{{"k", report.k},
                      {"fold_mse", report.fold_mse},
                      {"fold_mae", report.fold_mae},
                      {"mean_mse", report.mean_mse},
                      {"mean_mae", report.mean_mae},
                      {"target_variance", report.target_variance},
                      {"normalized_mse", report.normalized_mse}};
    write_manifest(cfg, "fit-surrogate", {dataset}, {ckpt}, {{"cv", cv}});
    return nlohmann::json{{"checkpoint", ckpt}, {"records", records.size()}, {"cv", cv}};
}

namespace {

std::string runlog_to_csv(const RunLog& log) {
    std::ostringstream csv;
    csv << "step,episode,action_delta,reward,ppl,cost,p,sigma,m,loss_prob,source\n";
    for (const RunLogRow& r : log.rows) {
        csv << r.step << ',' << r.episode << ',' << r.action_delta << ',' << fmt(r.reward)
            << ',' << fmt(r.ppl) << ',' << fmt(r.cost) << ',' << r.p << ',' << fmt(r.sigma)
            << ',' << fmt(r.m) << ',' << fmt(r.loss_prob) << ',' << r.source << '\n';
    }
    return csv.str();
}

std::string updates_to_csv(const RunLog& log) {
    std::ostringstream csv;
    csv << "round,policy_loss,value_loss,entropy,approx_kl,clip_fraction\n";
    for (std::size_t i = 0; i < log.updates.size(); ++i) {
        const UpdateMetrics& u = log.updates[i];
        csv << i << ',' << fmt(u.policy_loss) << ',' << fmt(u.value_loss) << ','
            << fmt(u.entropy) << ',' << fmt(u.approx_kl) << ',' << fmt(u.clip_fraction)
            << '\n';
    }
    return csv.str();
}

nlohmann::json agent_to_json(const ExperimentConfig& cfg, const AgentNets& nets,
                             AgentKind kind) {
    nlohmann::json j;
    j["format"] = "splitsim-agent-v1";
    j["kind"] = agent_kind_name(kind);
    j["u"] = cfg.env.action_radius;
    j["hyper"] = cfg.raw.at("agent");  // full hyperparameter header
    j["policy"] = mlp_to_json(nets.policy);
    if (!nets.value.weights.empty()) j["value"] = mlp_to_json(nets.value);
    return j;
}

}  // namespace

nlohmann::json run_train_agent(const ExperimentConfig& cfg) {
    RngStream rng(cfg.seed, fnv1a64("cmd.train_agent"));
    EnvBundle bundle = make_env_bundle(cfg, rng.derive("env"));

    nlohmann::json summary;
    RunLog* log = nullptr;
    TrainResult train;
    Algorithm1Result algo1;
    std::vector<std::string> inputs{cfg.resolved_lm_checkpoint(), cfg.corpus_path};
    std::vector<std::string> outputs;

    if (cfg.reward_source == "algorithm1") {
        if (cfg.agent_kind != AgentKind::Ppo)
            raise(ErrorKind::InvalidConfig,
                  "the surrogate-switch schedule drives ppo; use agent.kind=ppo");
        RngStream arng = rng.derive("algorithm1");
        algo1 = algorithm1_train(*bundle.env, cfg.ppo, cfg.algorithm1, cfg.total_steps, arng);
        train = std::move(algo1.train);
        log = &train.log;

        const std::string dataset = cfg.resolved_dataset();
        write_text_file(dataset, records_to_csv(algo1.records));
        outputs.push_back(dataset);
        if (algo1.surrogate) {
            const std::string sckpt = cfg.resolved_surrogate_checkpoint();
            save_json_file(algo1.surrogate->to_json(), sckpt);
            outputs.push_back(sckpt);
        }
        summary["switch_epoch"] =
            algo1.switch_epoch ? nlohmann::json(*algo1.switch_epoch) : nlohmann::json();
        summary["switch_refused"] = algo1.switch_refused;
        summary["cv_normalized_mse"] = algo1.cv.normalized_mse;
        summary["pre_switch_step_ms"] = algo1.pre_switch_step_ms;
        summary["post_switch_step_ms"] = algo1.post_switch_step_ms;
        summary["speedup"] = algo1.post_switch_step_ms > 0.0
                                 ? algo1.pre_switch_step_ms / algo1.post_switch_step_ms
                                 : 0.0;
        summary["lm_calls"] = algo1.lm_calls_total;
    } else {
        if (cfg.reward_source == "surrogate") {
            auto model = std::make_shared<SurrogateModel>(
                SurrogateModel::from_json(load_json_file(cfg.resolved_surrogate_checkpoint())));
            inputs.push_back(cfg.resolved_surrogate_checkpoint());
            bundle.env->attach_surrogate(model);
            bundle.env->set_reward_source(RewardSource::Surrogate);
        }
        RngStream arng = rng.derive("train");
        train = train_agent(cfg.agent_kind, *bundle.env, cfg.ppo, cfg.dqn, cfg.total_steps,
                            arng);
        log = &train.log;
        summary["mean_step_ms"] = train.mean_step_ms;
        summary["lm_calls"] = bundle.env->lm_call_count();
    }

    const std::string runlog_path = cfg.out_dir + "/runlog.csv";
    write_text_file(runlog_path, runlog_to_csv(*log));
    const std::string updates_path = cfg.out_dir + "/updates.csv";
    write_text_file(updates_path, updates_to_csv(*log));
    const std::string agent_path = cfg.resolved_agent_checkpoint();
    save_json_file(agent_to_json(cfg, train.nets, cfg.agent_kind), agent_path);
    outputs.insert(outputs.begin(), {runlog_path, updates_path, agent_path});

    nlohmann::json extra = nlohmann::json::object();
    if (log->switch_epoch) extra["switch_epoch"] = *log->switch_epoch;
    write_manifest(cfg, "train-agent", inputs, outputs, extra);

    summary["agent"] = agent_kind_name(cfg.agent_kind);
    summary["reward_source"] = cfg.reward_source;
    summary["runlog"] = runlog_path;
    summary["checkpoint"] = agent_path;
    summary["steps"] = log->rows.size();
    summary["updates"] = log->updates.size();
    if (!log->rows.empty()) {
        double tail = 0.0;
        const std::size_t n = std::min<std::size_t>(cfg.ppo.n_step, log->rows.size());
        for (std::size_t i = log->rows.size() - n; i < log->rows.size(); ++i)
            tail += log->rows[i].reward;
        summary["final_mean_reward"] = tail / static_cast<double>(n);
    }
    return summary;
}

nlohmann::json run_eval(const ExperimentConfig& cfg) {
    RngStream rng(cfg.seed, fnv1a64("cmd.eval"));
    ExperimentConfig env_cfg = cfg;
    env_cfg.env.reward_sequences = cfg.eval.sequences;
    env_cfg.env.reward_trials = cfg.eval.trials;
    EnvBundle bundle = make_env_bundle(env_cfg, rng.derive("env"));

    nlohmann::json agent = load_json_file(cfg.resolved_agent_checkpoint());
    if (agent.value("format", "") != "splitsim-agent-v1")
        raise(ErrorKind::InvalidInput, "not an agent checkpoint");
    const AgentKind kind = agent_kind_from_name(agent.at("kind").get<std::string>());
    MlpParams policy;
    if (kind != AgentKind::Random) policy = mlp_from_json(agent.at("policy"));

    RngStream erng = rng.derive("episodes");
    const ActMode mode = cfg.eval.mode == "greedy" ? ActMode::Greedy : ActMode::Sample;
    auto episodes = evaluate_policy(*bundle.env,
                                    kind == AgentKind::Random ? nullptr : &policy,
                                    cfg.eval.episodes, cfg.ppo.steps_per_episode, erng, mode);

    std::ostringstream csv;
    csv << "episode,mean_reward,terminal_p,terminal_sigma,terminal_m,terminal_loss_prob,ppl\n";
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const EpisodeResult& ep = episodes[e];
        csv << e << ',' << fmt(ep.mean_reward) << ',' << ep.last_info.p << ','
            << fmt(ep.last_info.sigma) << ',' << fmt(ep.last_info.m) << ','
            << fmt(ep.last_info.loss_prob) << ',' << fmt(ep.last_info.ppl) << '\n';
    }
    const std::string eval_path = cfg.out_dir + "/eval.csv";
    write_text_file(eval_path, csv.str());
    write_manifest(cfg, "eval",
                   {cfg.resolved_agent_checkpoint(), cfg.resolved_lm_checkpoint()},
                   {eval_path});

    std::vector<double> rewards;
    for (const auto& ep : episodes) rewards.push_back(ep.mean_reward);
    RewardDistribution dist = reward_distribution(rewards);
    return nlohmann::json{{"eval", eval_path},
                          {"episodes", episodes.size()},
                          {"median_reward", dist.median},
                          {"q25", dist.q25},
                          {"q75", dist.q75}};
}

nlohmann::json run_analyze(const ExperimentConfig& cfg) {
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    nlohmann::json summary;

    // reward distribution + split-point trend from the eval table
    const std::string eval_path = cfg.out_dir + "/eval.csv";
    if (std::filesystem::exists(eval_path)) {
        inputs.push_back(eval_path);
        std::istringstream in(read_text_file(eval_path));
        std::string line;
        std::getline(in, line);  // header
        std::vector<double> rewards, sigmas, ps;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            std::string field;
            std::vector<std::string> fields;
            while (std::getline(row, field, ',')) fields.push_back(field);
            if (fields.size() < 7) continue;
            rewards.push_back(std::stod(fields[1]));
            ps.push_back(std::stod(fields[2]));
            sigmas.push_back(std::stod(fields[3]));
        }
        if (!rewards.empty()) {
            const double a = cfg.analysis.reward_affine_scale;
            const double b = cfg.analysis.reward_affine_offset;
            std::vector<double> reported = rewards;
            for (double& r : reported) r = a * r + b;

            RewardDistribution dist = reward_distribution(reported);
            nlohmann::json dj{{"median", dist.median}, {"q25", dist.q25},
                              {"q75", dist.q75},       {"iqr", dist.iqr},
                              {"hist_edges", dist.hist_edges},
                              {"hist_counts", dist.hist_counts},
                              {"kde_x", dist.kde_x},
                              {"kde_density", dist.kde_density}};
            const std::string dist_path = cfg.out_dir + "/eval.reward_distribution.json";
            save_json_file(dj, dist_path);
            outputs.push_back(dist_path);
            summary["median_reward"] = dist.median;

            if (sigmas.size() >= 5) {
                TrendFit fit = loess(sigmas, ps, cfg.analysis.loess_frac,
                                     cfg.analysis.loess_degree);
                std::ostringstream csv;
                csv << "sigma,p,fitted,local_slope\n";
                for (std::size_t i = 0; i < sigmas.size(); ++i)
                    csv << fmt(sigmas[i]) << ',' << fmt(ps[i]) << ',' << fmt(fit.fitted[i])
                        << ',' << fmt(fit.local_slope[i]) << '\n';
                const std::string trend_path = cfg.out_dir + "/eval.splitpoint_trend.csv";
                write_text_file(trend_path, csv.str());
                outputs.push_back(trend_path);
                summary["loess_global_slope"] = fit.global_slope;
                summary["loess_r_squared"] = fit.r_squared;
            }
        }
    }

    // cross-run learning curves
    std::vector<std::string> run_inputs = cfg.analysis.inputs;
    if (run_inputs.empty()) {
        const std::string runlog_path = cfg.out_dir + "/runlog.csv";
        if (std::filesystem::exists(runlog_path)) run_inputs.push_back(runlog_path);
    }
    if (!run_inputs.empty()) {
        std::vector<CurveSeries> series;
        for (const std::string& path : run_inputs) {
            inputs.push_back(path);
            std::istringstream in(read_text_file(path));
            std::string line;
            std::getline(in, line);
            CurveSeries s;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                std::istringstream row(line);
                std::string field;
                std::vector<std::string> fields;
                while (std::getline(row, field, ',')) fields.push_back(field);
                if (fields.size() < 4) continue;
                s.steps.push_back(std::stod(fields[0]));
                s.values.push_back(std::stod(fields[3]));
            }
            if (!s.steps.empty()) series.push_back(std::move(s));
        }
        if (!series.empty()) {
            AggregatedCurves agg = aggregate_curves(series, cfg.analysis.window);
            std::ostringstream csv;
            csv << "step,mean_reward,stderr\n";
            for (std::size_t i = 0; i < agg.steps.size(); ++i)
                csv << fmt(agg.steps[i]) << ',' << fmt(agg.mean[i]) << ','
                    << fmt(agg.stderr_[i]) << '\n';
            const std::string curves_path = cfg.out_dir + "/curves.csv";
            write_text_file(curves_path, csv.str());
            outputs.push_back(curves_path);
            summary["curves"] = curves_path;
            summary["series"] = series.size();
            summary["regridded"] = agg.regridded;
        }
    }

    if (outputs.empty())
        raise(ErrorKind::MissingInput,
              "analyze: no eval.csv or runlog.csv found under " + cfg.out_dir);
    write_manifest(cfg, "analyze", inputs, outputs);
    summary["outputs"] = outputs;
    return summary;
}

}  // namespace splitsim
