#include "splitsim/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "splitsim/errors.hpp"
#include "splitsim/rng.hpp"

namespace splitsim {

namespace {

void deep_merge(nlohmann::json& base, const nlohmann::json& overlay) {
    if (!overlay.is_object()) {
        base = overlay;
        return;
    }
    if (!base.is_object()) base = nlohmann::json::object();
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (it->is_object() && base.contains(it.key())) {
            deep_merge(base[it.key()], *it);
        } else {
            base[it.key()] = *it;
        }
    }
}

void apply_override(nlohmann::json& doc, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        raise(ErrorKind::InvalidConfig, "override must look like key.path=value: " + kv);
    const std::string path = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);

    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
        parsed = value;  // bare words become strings
    }

    nlohmann::json* node = &doc;
    std::stringstream keys(path);
    std::string key, next;
    if (!std::getline(keys, key, '.'))
        raise(ErrorKind::InvalidConfig, "empty override path: " + kv);
    while (std::getline(keys, next, '.')) {
        node = &((*node)[key]);
        key = next;
    }
    (*node)[key] = parsed;
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::InvalidConfig, std::string("bad value for \"") + key + "\": " + e.what());
    }
}

}  // namespace

nlohmann::json default_config_json() {
    return nlohmann::json{
        {"seed", nullptr},
        {"threads", 4},
        {"out_dir", "runs/out"},
        {"corpus", "data/corpus.txt"},
        {"lm",
         {{"layers", 8},
          {"d_in", 64},
          {"d_mid", 64},
          {"heads", 4},
          {"d_ff", 256},
          {"checkpoint", ""},
          {"train",
           {{"steps", 800}, {"batch", 16}, {"lr", 1e-3}, {"clip_norm", 0.5}}}}},
        {"channel",
         {{"mode", "nakagami"},
          {"m", 1.0},
          {"omega", 1.0},
          {"sigma", 0.1},
          {"h_th", 0.5},
          {"per_tensor_gain", false},
          {"equalize", false}}},
        {"case",
         {{"name", "A"},
          {"loss_range", nlohmann::json::array()},
          {"init_p_range", nlohmann::json::array()},
          {"sigma_range", {0.01, 0.5}},
          {"dynamics", "iid"}}},
        {"reward",
         {{"lambda", 1.0},
          {"cost_normalizer", "unit-interval"},
          {"sequences", 8},
          {"trials", 2},
          {"ppl_clamp_factor", 10.0},
          {"pool", 64}}},
        {"agent",
         {{"kind", "ppo"},
          {"u", 1},
          {"total_steps", 24000},
          {"reward_source", "true"},
          {"checkpoint", ""},
          {"ppo",
           {{"alpha", 3e-4},
            {"gamma", 0.99},
            {"epsilon_clip", 0.2},
            {"n_step", 400},
            {"batch", 100},
            {"steps_per_episode", 5},
            {"xi_gae", 0.95},
            {"ppo_epochs", 4},
            {"entropy_coef", 0.01},
            {"value_coef", 0.5},
            {"hidden", {64, 64}},
            {"clip_grad_norm", 0.5}}},
          {"dqn",
           {{"replay", 10000},
            {"target_sync", 500},
            {"eps_start", 1.0},
            {"eps_end", 0.05},
            {"eps_decay_fraction", 0.5},
            {"learn_start", 200},
            {"gamma", -1.0}}}}},
        {"surrogate",
         {{"hidden", {64, 64}},
          {"epochs", 300},
          {"batch", 64},
          {"lr", 1e-2},
          {"k_folds", 5},
          {"switch_epoch", 0},
          {"switch_records", 2000},
          {"gate_nmse", 0.25},
          {"dataset", ""},
          {"checkpoint", ""},
          {"collect",
           {{"plan", "random"},
            {"n", 2000},
            {"lattice_p", 0},
            {"lattice_sigma", 8},
            {"lattice_m", 8},
            {"trials", 1}}}}},
        {"sweep",
         {{"mode", "loss"},
          {"p_list", nlohmann::json::array()},
          {"loss_list", {0.0, 0.05, 0.1, 0.2, 0.3}},
          {"snr_db_list", {20.0, 10.0, 5.0, 0.0}},
          {"sigma", 0.1},
          {"sequences", 16},
          {"trials", 4}}},
        {"eval",
         {{"episodes", 500}, {"mode", "greedy"}, {"sequences", 2}, {"trials", 1}}},
        {"analysis",
         {{"loess_frac", 0.3},
          {"loess_degree", 1},
          {"window", 20},
          {"reward_affine", {1.0, 0.0}},
          {"inputs", nlohmann::json::array()}}},
    };
}

namespace {

ExperimentConfig parse_config_impl(const nlohmann::json& doc,
                                   const std::vector<std::string>& overrides) {
    nlohmann::json merged = default_config_json();
    deep_merge(merged, doc);
    for (const std::string& kv : overrides) apply_override(merged, kv);

    ExperimentConfig cfg;
    cfg.raw = merged;

    if (!merged.contains("seed") || merged["seed"].is_null())
        raise(ErrorKind::InvalidConfig, "config: \"seed\" is required (no wall-clock seeding)");
    if (!merged["seed"].is_number_unsigned() && !merged["seed"].is_number_integer())
        raise(ErrorKind::InvalidConfig, "config: \"seed\" must be an integer");
    cfg.seed = merged["seed"].get<std::uint64_t>();
    cfg.threads = get_or<unsigned>(merged, "threads", 4);
    if (cfg.threads == 0) raise(ErrorKind::InvalidConfig, "config: threads must be >= 1");
    cfg.out_dir = get_or<std::string>(merged, "out_dir", "runs/out");
    cfg.corpus_path = get_or<std::string>(merged, "corpus", "data/corpus.txt");

    const auto& lm = merged.at("lm");
    cfg.lm.layers = get_or<std::size_t>(lm, "layers", 8);
    cfg.lm.d_in = get_or<std::size_t>(lm, "d_in", 64);
    cfg.lm.d_mid = get_or<std::size_t>(lm, "d_mid", 64);
    cfg.lm.heads = get_or<std::size_t>(lm, "heads", 4);
    cfg.lm.d_ff = get_or<std::size_t>(lm, "d_ff", 256);
    cfg.lm_checkpoint = get_or<std::string>(lm, "checkpoint", "");
    const auto& lt = lm.at("train");
    cfg.lm_train.steps = get_or<std::size_t>(lt, "steps", 800);
    cfg.lm_train.batch = get_or<std::size_t>(lt, "batch", 16);
    cfg.lm_train.lr = get_or<double>(lt, "lr", 1e-3);
    cfg.lm_train.clip_norm = get_or<double>(lt, "clip_norm", 0.5);
    cfg.lm_train.threads = cfg.threads;
    if (cfg.lm.layers < 2 || cfg.lm.d_mid % cfg.lm.heads != 0)
        raise(ErrorKind::InvalidConfig, "config: lm shape invalid (layers >= 2, heads | d_mid)");

    const auto& ch = merged.at("channel");
    const std::string mode = get_or<std::string>(ch, "mode", "nakagami");
    if (mode == "awgn")
        cfg.channel.mode = ChannelMode::Awgn;
    else if (mode == "nakagami")
        cfg.channel.mode = ChannelMode::Nakagami;
    else
        raise(ErrorKind::InvalidConfig, "config: channel.mode must be awgn or nakagami");
    cfg.channel.m = get_or<double>(ch, "m", 1.0);
    cfg.channel.omega = get_or<double>(ch, "omega", 1.0);
    cfg.channel.sigma = get_or<double>(ch, "sigma", 0.1);
    cfg.channel.h_th = get_or<double>(ch, "h_th", 0.5);
    cfg.channel.per_tensor_gain = get_or<bool>(ch, "per_tensor_gain", false);
    cfg.channel.equalize = get_or<bool>(ch, "equalize", false);
    try {
        cfg.channel.validate();
    } catch (const Error& e) {
        raise(ErrorKind::InvalidConfig, std::string("config: ") + e.what());
    }

    const auto& cs = merged.at("case");
    const std::string case_name = get_or<std::string>(cs, "name", "A");
    cfg.scenario = CaseSpec::builtin(case_name, cfg.lm.layers);
    const auto& lr_range = cs.at("loss_range");
    if (lr_range.is_array() && lr_range.size() == 2) {
        cfg.scenario.loss_lo = lr_range[0].get<double>();
        cfg.scenario.loss_hi = lr_range[1].get<double>();
        cfg.scenario_explicit_ranges = true;
    }
    const auto& ip_range = cs.at("init_p_range");
    if (ip_range.is_array() && ip_range.size() == 2) {
        cfg.scenario.init_p_lo = ip_range[0].get<int>();
        cfg.scenario.init_p_hi = ip_range[1].get<int>();
        cfg.scenario_explicit_ranges = true;
    }
    const auto& sr = cs.at("sigma_range");
    if (sr.is_array() && sr.size() == 2) {
        cfg.scenario.sigma_lo = sr[0].get<double>();
        cfg.scenario.sigma_hi = sr[1].get<double>();
    }
    const std::string dyn = get_or<std::string>(cs, "dynamics", "iid");
    if (dyn == "iid")
        cfg.scenario.dynamics = CaseDynamics::Iid;
    else if (dyn == "walk")
        cfg.scenario.dynamics = CaseDynamics::Walk;
    else
        raise(ErrorKind::InvalidConfig, "config: case.dynamics must be iid or walk");
    try {
        cfg.scenario.validate(cfg.lm.layers);
    } catch (const Error& e) {
        raise(ErrorKind::InvalidConfig, std::string("config: ") + e.what());
    }

    const auto& rw = merged.at("reward");
    cfg.weights.lambda = get_or<double>(rw, "lambda", 1.0);
    const std::string norm = get_or<std::string>(rw, "cost_normalizer", "unit-interval");
    if (norm == "raw")
        cfg.weights.normalizer = CostNormalizer::Raw;
    else if (norm == "unit-interval")
        cfg.weights.normalizer = CostNormalizer::UnitInterval;
    else
        raise(ErrorKind::InvalidConfig, "config: reward.cost_normalizer must be raw or unit-interval");
    if (!(cfg.weights.lambda >= 0.0) || !std::isfinite(cfg.weights.lambda))
        raise(ErrorKind::InvalidConfig, "config: reward.lambda must be finite and >= 0");

    cfg.env.scenario = cfg.scenario;
    cfg.env.weights = cfg.weights;
    cfg.env.channel_mode = cfg.channel.mode;
    cfg.env.omega = cfg.channel.omega;
    cfg.env.h_th = cfg.channel.h_th;
    cfg.env.per_tensor_gain = cfg.channel.per_tensor_gain;
    cfg.env.equalize = cfg.channel.equalize;
    cfg.env.reward_sequences = get_or<std::size_t>(rw, "sequences", 8);
    cfg.env.reward_trials = get_or<std::size_t>(rw, "trials", 2);
    cfg.env.ppl_clamp_factor = get_or<double>(rw, "ppl_clamp_factor", 10.0);
    cfg.env.pool_size = get_or<std::size_t>(rw, "pool", 64);
    cfg.env.threads = cfg.threads;

    const auto& ag = merged.at("agent");
    cfg.agent_kind = agent_kind_from_name(get_or<std::string>(ag, "kind", "ppo"));
    cfg.reward_source = get_or<std::string>(ag, "reward_source", "true");
    if (cfg.reward_source != "true" && cfg.reward_source != "surrogate" &&
        cfg.reward_source != "algorithm1")
        raise(ErrorKind::InvalidConfig,
              "config: agent.reward_source must be true, surrogate or algorithm1");
    cfg.total_steps = get_or<std::size_t>(ag, "total_steps", 24000);
    cfg.env.action_radius = get_or<int>(ag, "u", 1);
    cfg.agent_checkpoint = get_or<std::string>(ag, "checkpoint", "");

    const auto& ppo = ag.at("ppo");
    cfg.ppo.alpha = get_or<double>(ppo, "alpha", 3e-4);
    cfg.ppo.gamma = get_or<double>(ppo, "gamma", 0.99);
    cfg.ppo.epsilon_clip = get_or<double>(ppo, "epsilon_clip", 0.2);
    cfg.ppo.n_step = get_or<std::size_t>(ppo, "n_step", 400);
    cfg.ppo.batch = get_or<std::size_t>(ppo, "batch", 100);
    cfg.ppo.steps_per_episode = get_or<std::size_t>(ppo, "steps_per_episode", 5);
    cfg.ppo.xi_gae = get_or<double>(ppo, "xi_gae", 0.95);
    cfg.ppo.ppo_epochs = get_or<std::size_t>(ppo, "ppo_epochs", 4);
    cfg.ppo.entropy_coef = get_or<double>(ppo, "entropy_coef", 0.01);
    cfg.ppo.value_coef = get_or<double>(ppo, "value_coef", 0.5);
    cfg.ppo.hidden = get_or<std::vector<std::size_t>>(ppo, "hidden", {64, 64});
    cfg.ppo.clip_grad_norm = get_or<double>(ppo, "clip_grad_norm", 0.5);
    try {
        cfg.ppo.validate();
    } catch (const Error& e) {
        raise(ErrorKind::InvalidConfig, std::string("config: ") + e.what());
    }

    const auto& dqn = ag.at("dqn");
    cfg.dqn.replay_capacity = get_or<std::size_t>(dqn, "replay", 10000);
    cfg.dqn.target_sync = get_or<std::size_t>(dqn, "target_sync", 500);
    cfg.dqn.eps_start = get_or<double>(dqn, "eps_start", 1.0);
    cfg.dqn.eps_end = get_or<double>(dqn, "eps_end", 0.05);
    cfg.dqn.eps_decay_fraction = get_or<double>(dqn, "eps_decay_fraction", 0.5);
    cfg.dqn.learn_start = get_or<std::size_t>(dqn, "learn_start", 200);
    cfg.dqn.gamma = get_or<double>(dqn, "gamma", -1.0);

    const auto& su = merged.at("surrogate");
    cfg.surrogate_fit.hidden = get_or<std::vector<std::size_t>>(su, "hidden", {64, 64});
    cfg.surrogate_fit.epochs = get_or<std::size_t>(su, "epochs", 300);
    cfg.surrogate_fit.batch = get_or<std::size_t>(su, "batch", 64);
    cfg.surrogate_fit.lr = get_or<double>(su, "lr", 1e-2);
    cfg.surrogate_fit.k_folds = get_or<std::size_t>(su, "k_folds", 5);
    cfg.algorithm1.fit = cfg.surrogate_fit;
    cfg.algorithm1.switch_epoch = get_or<std::size_t>(su, "switch_epoch", 0);
    cfg.algorithm1.switch_records = get_or<std::size_t>(su, "switch_records", 2000);
    cfg.algorithm1.gate_normalized_mse = get_or<double>(su, "gate_nmse", 0.25);
    cfg.dataset_path = get_or<std::string>(su, "dataset", "");
    cfg.surrogate_checkpoint = get_or<std::string>(su, "checkpoint", "");

    const auto& col = su.at("collect");
    const std::string plan = get_or<std::string>(col, "plan", "random");
    if (plan == "random")
        cfg.collect.plan = SamplingPlan::Random;
    else if (plan == "lattice")
        cfg.collect.plan = SamplingPlan::Lattice;
    else
        raise(ErrorKind::InvalidConfig, "config: surrogate.collect.plan must be random or lattice");
    cfg.collect.n = get_or<std::size_t>(col, "n", 2000);
    cfg.collect.lattice_p = get_or<std::size_t>(col, "lattice_p", 0);
    cfg.collect.lattice_sigma = get_or<std::size_t>(col, "lattice_sigma", 8);
    cfg.collect.lattice_m = get_or<std::size_t>(col, "lattice_m", 8);
    cfg.collect.trials = get_or<std::size_t>(col, "trials", 1);

    const auto& sw = merged.at("sweep");
    cfg.sweep.mode = get_or<std::string>(sw, "mode", "loss");
    if (cfg.sweep.mode != "loss" && cfg.sweep.mode != "snr")
        raise(ErrorKind::InvalidConfig, "config: sweep.mode must be loss or snr");
    cfg.sweep.p_list = get_or<std::vector<int>>(sw, "p_list", {});
    cfg.sweep.loss_list = get_or<std::vector<double>>(sw, "loss_list", {0.0, 0.05, 0.1, 0.2, 0.3});
    cfg.sweep.snr_db_list = get_or<std::vector<double>>(sw, "snr_db_list", {20.0, 10.0, 5.0, 0.0});
    cfg.sweep.sigma = get_or<double>(sw, "sigma", 0.1);
    cfg.sweep.sequences = get_or<std::size_t>(sw, "sequences", 16);
    cfg.sweep.trials = get_or<std::size_t>(sw, "trials", 4);

    const auto& ev = merged.at("eval");
    cfg.eval.episodes = get_or<std::size_t>(ev, "episodes", 500);
    cfg.eval.mode = get_or<std::string>(ev, "mode", "greedy");
    if (cfg.eval.mode != "greedy" && cfg.eval.mode != "sample")
        raise(ErrorKind::InvalidConfig, "config: eval.mode must be greedy or sample");
    cfg.eval.sequences = get_or<std::size_t>(ev, "sequences", 2);
    cfg.eval.trials = get_or<std::size_t>(ev, "trials", 1);

    const auto& an = merged.at("analysis");
    cfg.analysis.loess_frac = get_or<double>(an, "loess_frac", 0.3);
    cfg.analysis.loess_degree = get_or<int>(an, "loess_degree", 1);
    cfg.analysis.window = get_or<std::size_t>(an, "window", 20);
    const auto& affine = an.at("reward_affine");
    if (affine.is_array() && affine.size() == 2) {
        cfg.analysis.reward_affine_scale = affine[0].get<double>();
        cfg.analysis.reward_affine_offset = affine[1].get<double>();
    }
    cfg.analysis.inputs = get_or<std::vector<std::string>>(an, "inputs", {});

    return cfg;
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& doc,
                              const std::vector<std::string>& overrides) {
    try {
        return parse_config_impl(doc, overrides);
    } catch (const Error&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::InvalidConfig, std::string("config: malformed document: ") + e.what());
    }
}

ExperimentConfig load_config_file(const std::string& path,
                                  const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::MissingInput, "missing config file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::InvalidConfig, "config is not valid json: " + std::string(e.what()));
    }
    return parse_config(doc, overrides);
}

std::uint64_t config_hash(const ExperimentConfig& config) {
    return fnv1a64(config.raw.dump());
}

std::string ExperimentConfig::resolved_lm_checkpoint() const {
    return lm_checkpoint.empty() ? out_dir + "/lm.json" : lm_checkpoint;
}
std::string ExperimentConfig::resolved_dataset() const {
    return dataset_path.empty() ? out_dir + "/records.csv" : dataset_path;
}
std::string ExperimentConfig::resolved_surrogate_checkpoint() const {
    return surrogate_checkpoint.empty() ? out_dir + "/surrogate.json" : surrogate_checkpoint;
}
std::string ExperimentConfig::resolved_agent_checkpoint() const {
    return agent_checkpoint.empty() ? out_dir + "/agent.json" : agent_checkpoint;
}

}  // namespace splitsim
