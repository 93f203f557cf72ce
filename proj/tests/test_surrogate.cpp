#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "splitsim/errors.hpp"
#include "splitsim/surrogate.hpp"
#include "support.hpp"

using namespace splitsim;

namespace {

struct Fixture {
    std::shared_ptr<LmParams> lm;
    std::vector<TokenSeq> corpus;
};

Fixture make_fixture() {
    LmConfig cfg;
    cfg.layers = 4;
    cfg.d_in = 10;
    cfg.d_mid = 8;
    cfg.heads = 2;
    cfg.d_ff = 16;
    cfg.vocab = 13;
    RngStream rng(71);
    Fixture f;
    f.lm = std::make_shared<LmParams>(lm_init(cfg, rng));
    for (int s = 0; s < 6; ++s) {
        TokenSeq seq;
        for (int i = 0; i < 9; ++i) seq.push_back(static_cast<TokenId>(rng.uniform_int(0, 12)));
        f.corpus.push_back(seq);
    }
    return f;
}

SplitEnv make_env(const Fixture& f, std::uint64_t seed, ChannelMode mode = ChannelMode::Nakagami) {
    EnvOptions opts;
    opts.scenario = CaseSpec::builtin("A", 4);
    opts.channel_mode = mode;
    opts.pool_size = 6;
    opts.reward_sequences = 3;
    opts.reward_trials = 1;
    opts.threads = 2;
    if (mode == ChannelMode::Awgn) {
        opts.scenario.sigma_lo = 0.0;
        opts.scenario.sigma_hi = 0.0;
    }
    return SplitEnv(f.lm, f.corpus, opts, RngStream(seed));
}

std::vector<SurrogateRecord> linear_records(std::size_t n, std::uint64_t seed, double noise) {
    RngStream rng(seed);
    std::vector<SurrogateRecord> records;
    for (std::size_t i = 0; i < n; ++i) {
        SurrogateRecord r;
        r.p = static_cast<int>(rng.uniform_int(1, 7));
        r.sigma = rng.uniform(0.01, 0.5);
        r.m = rng.uniform(0.5, 10.0);
        r.ppl = 4.0 + 2.0 * r.p + 10.0 * r.sigma - 0.3 * r.m + rng.gaussian(0.0, noise);
        records.push_back(r);
    }
    return records;
}

}  // namespace

TEST_CASE("record collection") {
    Fixture f = make_fixture();

    SUBCASE("random plan yields exactly n records") {
        SplitEnv env = make_env(f, 1);
        CollectOptions opts;
        opts.plan = SamplingPlan::Random;
        opts.n = 40;
        opts.trials = 1;
        RngStream rng(2);
        auto records = collect_records(env, opts, rng);
        CHECK(records.size() == 40);
        for (const auto& r : records) {
            CHECK(r.p >= 1);
            CHECK(r.p <= 3);
            CHECK(r.ppl >= 1.0);
        }
    }

    SUBCASE("lattice plan has the advertised cardinality with unique coordinates") {
        SplitEnv env = make_env(f, 3);
        CollectOptions opts;
        opts.plan = SamplingPlan::Lattice;
        opts.lattice_p = 3;
        opts.lattice_sigma = 4;
        opts.lattice_m = 3;
        opts.trials = 1;
        RngStream rng(4);
        auto records = collect_records(env, opts, rng);
        CHECK(records.size() == 3 * 4 * 3);
        std::set<std::tuple<int, double, double>> coords;
        for (const auto& r : records) coords.insert({r.p, r.sigma, r.m});
        CHECK(coords.size() == records.size());
    }

    SUBCASE("an ideal channel reproduces the clean split ppl") {
        EnvOptions opts;
        opts.scenario = CaseSpec::builtin("A", 4);
        opts.scenario.sigma_lo = 0.0;
        opts.scenario.sigma_hi = 0.0;
        opts.channel_mode = ChannelMode::Awgn;
        opts.pool_size = 6;
        opts.reward_sequences = 6;  // evaluate the whole pool: matches the oracle
        opts.reward_trials = 1;
        opts.threads = 2;
        SplitEnv env(f.lm, f.corpus, opts, RngStream(5));
        CollectOptions copts;
        copts.plan = SamplingPlan::Lattice;
        copts.lattice_p = 3;
        copts.lattice_sigma = 1;
        copts.lattice_m = 1;
        copts.trials = 2;
        RngStream rng(6);
        auto records = collect_records(env, copts, rng);
        ChannelParams ideal;
        ideal.mode = ChannelMode::Awgn;
        ideal.sigma = 0.0;
        for (const auto& r : records) {
            RngStream prng(7);
            PplResult oracle = perplexity(*f.lm, f.corpus, static_cast<std::size_t>(r.p),
                                          ideal, prng, 1);
            CHECK(std::abs(r.ppl - oracle.ppl) < 1e-9);
        }
    }
}

TEST_CASE("surrogate fitting") {
    SUBCASE("linear ground truth fits to a tiny normalized mse") {
        auto records = linear_records(600, 11, 0.0);
        SurrogateFitOptions opts;
        opts.epochs = 800;
        RngStream rng(12);
        auto [model, report] = fit_surrogate(records, opts, rng);
        CHECK(report.k == 5);
        CHECK(report.normalized_mse < 1e-4);

        SUBCASE("training-point predictions sit within 3 rmse of the records") {
            const double rmse = std::sqrt(report.mean_mse);
            for (std::size_t i = 0; i < 20; ++i) {
                const auto& r = records[i * 17];
                auto pred = model.predict(r.p, r.sigma, r.m);
                CHECK(std::abs(pred.ppl - r.ppl) <= 3.0 * std::max(rmse, 1e-3));
                CHECK_FALSE(pred.extrapolating);
            }
        }

        SUBCASE("points far outside the hull are flagged") {
            auto pred = model.predict(4, 50.0, 5.0);  // sigma 100x the training span
            CHECK(pred.extrapolating);
        }
    }

    SUBCASE("constant targets collapse to the constant") {
        auto records = linear_records(200, 13, 0.0);
        for (auto& r : records) r.ppl = 6.25;
        SurrogateFitOptions opts;
        opts.epochs = 50;
        RngStream rng(14);
        auto [model, report] = fit_surrogate(records, opts, rng);
        CHECK(report.mean_mse < 1e-6);
        CHECK(model.predict(3, 0.2, 2.0).ppl == doctest::Approx(6.25).epsilon(1e-3));
    }

    SUBCASE("determinism under a fixed seed") {
        auto records = linear_records(200, 15, 0.1);
        SurrogateFitOptions opts;
        opts.epochs = 60;
        RngStream r1(16), r2(16);
        auto [m1, rep1] = fit_surrogate(records, opts, r1);
        auto [m2, rep2] = fit_surrogate(records, opts, r2);
        CHECK(rep1.mean_mse == rep2.mean_mse);
        CHECK(rep1.mean_mae == rep2.mean_mae);
        auto p1 = m1.net.param_refs();
        auto p2 = m2.net.param_refs();
        for (std::size_t i = 0; i < p1.size(); ++i)
            for (std::size_t k = 0; k < p1[i]->data.size(); ++k)
                CHECK(p1[i]->data[k] == p2[i]->data[k]);
    }

    SUBCASE("too few records is an invalid dataset") {
        auto records = linear_records(30, 17, 0.0);
        SurrogateFitOptions opts;
        RngStream rng(18);
        CHECK_THROWS_AS(fit_surrogate(records, opts, rng), Error);
    }

    SUBCASE("csv round trip") {
        auto records = linear_records(25, 19, 0.05);
        const std::string csv = records_to_csv(records);
        auto loaded = records_from_csv(csv);
        REQUIRE(loaded.size() == records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            CHECK(loaded[i].p == records[i].p);
            CHECK(loaded[i].sigma == records[i].sigma);
            CHECK(loaded[i].ppl == records[i].ppl);
        }
        CHECK_THROWS_AS(records_from_csv("bogus\n1,2,3,4\n"), Error);
    }
}

TEST_CASE("surrogate reward variance vanishes while the true reward fluctuates") {
    Fixture f = make_fixture();
    SplitEnv env = make_env(f, 21);
    auto records = linear_records(200, 22, 0.1);
    SurrogateFitOptions fopts;
    fopts.epochs = 40;
    RngStream rng(23);
    auto [model, report] = fit_surrogate(records, fopts, rng);
    env.attach_surrogate(std::make_shared<SurrogateModel>(model));

    const EnvState s{0.3, 1.5, 2};
    std::vector<double> true_rewards, surr_rewards;
    for (int i = 0; i < 20; ++i) {
        RngStream draw(1000 + i);
        true_rewards.push_back(env.reward_true(s, draw));
        surr_rewards.push_back(env.reward_surrogate(s));
    }
    // zero variance: every repeated surrogate evaluation is the same number
    for (double v : surr_rewards) CHECK(v == surr_rewards.front());
    CHECK(testsupport::variance(true_rewards) > 0.0);
}

TEST_CASE("algorithm1 schedule") {
    Fixture f = make_fixture();
    PpoHyper hyper;
    hyper.n_step = 50;
    hyper.batch = 25;
    hyper.steps_per_episode = 5;

    SUBCASE("a threshold beyond the horizon degenerates to plain ppo") {
        SplitEnv env = make_env(f, 24);
        Algorithm1Options opts;
        opts.switch_epoch = 100;  // never reached in 4 rounds
        RngStream rng(25);
        auto result = algorithm1_train(env, hyper, opts, 200, rng);
        CHECK_FALSE(result.switch_epoch.has_value());
        CHECK_FALSE(result.surrogate.has_value());
        CHECK(env.reward_source() == RewardSource::True);
        CHECK(result.records.size() == 200);
        CHECK(result.train.log.rows.size() == 200);
    }

    SUBCASE("switching freezes the lm call counter and marks the log") {
        SplitEnv env = make_env(f, 26);
        Algorithm1Options opts;
        opts.switch_epoch = 2;
        opts.gate_normalized_mse = 1e9;  // force the switch regardless of fit quality
        opts.fit.epochs = 30;
        opts.fit.k_folds = 2;
        RngStream rng(27);
        auto result = algorithm1_train(env, hyper, opts, 250, rng);
        REQUIRE(result.switch_epoch.has_value());
        CHECK(*result.switch_epoch == 2);
        CHECK(result.train.log.switch_epoch.has_value());
        CHECK(env.reward_source() == RewardSource::Surrogate);
        CHECK(result.lm_calls_total == result.lm_calls_pre_switch);
        CHECK(result.records.size() == 2 * hyper.n_step);
        // post-switch rows are marked as surrogate-sourced
        bool post_marked = true;
        for (std::size_t i = 2 * hyper.n_step; i < result.train.log.rows.size(); ++i)
            post_marked = post_marked && result.train.log.rows[i].source == 1;
        CHECK(post_marked);
    }

    SUBCASE("a failing gate refuses the switch and keeps true rewards") {
        SplitEnv env = make_env(f, 28);
        Algorithm1Options opts;
        opts.switch_epoch = 2;
        opts.gate_normalized_mse = 0.0;  // impossible gate
        opts.fit.epochs = 20;
        opts.fit.k_folds = 2;
        RngStream rng(29);
        auto result = algorithm1_train(env, hyper, opts, 200, rng);
        CHECK(result.switch_refused);
        CHECK_FALSE(result.switch_epoch.has_value());
        CHECK(env.reward_source() == RewardSource::True);
    }
}
