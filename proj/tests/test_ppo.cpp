#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <map>

#include "qnc/errors.hpp"
#include "qnc/mdp.hpp"
#include "qnc/ppo.hpp"

using namespace qnc;

namespace {

NetworkSpec single_station(std::vector<double> arrivals, std::vector<double> services) {
    NetworkSpec s;
    s.name = "single";
    s.num_stations = 1;
    s.num_classes = static_cast<int>(arrivals.size());
    s.station_of_class.assign(arrivals.size(), 0);
    s.arrival_rates = std::move(arrivals);
    s.service_rates = std::move(services);
    s.routing = Eigen::MatrixXd::Zero(s.num_classes, s.num_classes);
    return s;
}

// Two classes at one server with holding costs 5 and 1: serving class 1
// first is optimal.
UniformizedMdp two_class_queue() {
    CostSpec c;
    c.kind = CostKind::WeightedLinear;
    c.weights = {5.0, 1.0};
    return UniformizedMdp::from_network(single_station({0.35, 0.35}, {1.0, 1.0}), c);
}

EpisodeBatch path_batch(const std::vector<int>& path) {
    EpisodeBatch e;
    e.regen_state = {0};
    for (std::size_t t = 0; t + 1 < path.size(); ++t) {
        e.states.push_back({path[t]});
        e.actions.push_back({0});
        e.costs.push_back(path[t]);
        e.behavior_prob.push_back(1.0);
    }
    e.final_state = {path.back()};
    for (std::size_t t = 0; t < path.size(); ++t)
        if (path[t] == 0) e.regenerations.push_back(static_cast<std::int64_t>(t));
    return e;
}

TrainingConfig small_config(Algorithm a) {
    TrainingConfig cfg;
    cfg.algorithm = a;
    cfg.iterations = 4;
    cfg.actors = 2;
    cfg.cycles = 200;
    cfg.horizon = 1000;
    cfg.seed = 11;
    return cfg;
}

std::string temp_path(const char* name) { return std::string("/tmp/qnc_test_") + name; }

}  // namespace

TEST_SUITE("ppo") {

TEST_CASE("algorithm names round trip") {
    for (auto a : {Algorithm::Base, Algorithm::AMP, Algorithm::Discounted}) CHECK(parse_algorithm(to_string(a)) == a);
    CHECK_THROWS_AS(parse_algorithm("trpo"), ConfigError);
}

TEST_CASE("schedule decays linearly with floors") {
    TrainingConfig cfg;
    cfg.iterations = 50;
    auto s0 = schedule(0, cfg);
    CHECK(s0.clip == doctest::Approx(0.2));
    CHECK(s0.lr_policy == doctest::Approx(5e-4));
    CHECK(s0.lr_value == doctest::Approx(2.5e-4));
    auto mid = schedule(25, cfg);
    CHECK(mid.clip == doctest::Approx(0.1));
    CHECK(mid.lr_policy == doctest::Approx(2.5e-4));
    auto last = schedule(49, cfg);
    CHECK(last.clip == doctest::Approx(0.2 * 0.02));
    CHECK(last.lr_policy == doctest::Approx(5e-4 * 0.05));
    CHECK(last.lr_value == doctest::Approx(2.5e-4));
    cfg.iterations = 1000;
    CHECK(schedule(999, cfg).clip == doctest::Approx(0.2 * 0.01));
    CHECK_THROWS_AS(schedule(1000, cfg), InvalidParameter);
    CHECK_THROWS_AS(schedule(-1, cfg), InvalidParameter);
}

TEST_CASE("config validation") {
    auto cfg = small_config(Algorithm::AMP);
    CHECK_NOTHROW(cfg.validate());
    auto bad = cfg;
    bad.iterations = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidParameter);
    bad = cfg;
    bad.actors = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidParameter);
    bad = cfg;
    bad.algorithm = Algorithm::Discounted;
    bad.gamma = 1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidParameter);
    bad = cfg;
    bad.value_scale = -1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidParameter);
    bad = cfg;
    bad.adam.minibatch = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidParameter);
}

TEST_CASE("resumed start states follow visit frequencies") {
    SUBCASE("a single visited state") {
        auto b = path_batch({4, 4, 4, 4});
        b.regenerations.clear();
        auto xs = resume_initial_states({b}, 7, 3);
        REQUIRE(xs.size() == 7);
        for (const auto& x : xs) CHECK(x == State{4});
    }
    SUBCASE("chi-square against the empirical frequencies") {
        // States 0..3 visited 1, 2, 3 and 3 times across two actors; final states do not count.
        auto b1 = path_batch({0, 1, 2, 3, 3});
        auto b2 = path_batch({1, 2, 2, 3, 3, 3});
        const int n = 20000;
        auto xs = resume_initial_states({b1, b2}, n, 99);
        std::map<int, int> count;
        for (const auto& x : xs) ++count[x[0]];
        const double p[] = {1.0 / 9, 2.0 / 9, 3.0 / 9, 3.0 / 9};
        double chi2 = 0.0;
        for (int s = 0; s < 4; ++s) chi2 += std::pow(count[s] - n * p[s], 2) / (n * p[s]);
        CHECK(chi2 < 16.27);  // 0.999 quantile with 3 degrees of freedom
    }
    CHECK_THROWS_AS(resume_initial_states({EpisodeBatch{}}, 3, 1), InvalidParameter);
}

TEST_CASE("batch interval on hand cycles") {
    // Cycles (0,1) and (0,1,2,1): costs 1 and 4, lengths 2 and 4.
    auto b = path_batch({0, 1, 0, 1, 2, 1, 0});
    auto [eta, hw] = batch_ci({b});
    CHECK(eta == doctest::Approx(5.0 / 6.0));
    const double v = (std::pow(1 - eta * 2, 2) + std::pow(4 - eta * 4, 2)) / 1.0;
    CHECK(hw == doctest::Approx(1.959963984540054 * std::sqrt(v / 2) / 3.0));
    b.stop = StopRule::Kind::Steps;
    auto [eta2, hw2] = batch_ci({b});
    CHECK(eta2 == doctest::Approx(5.0 / 6.0));
    CHECK(std::isinf(hw2));
}

TEST_CASE("a policy with one feasible action never moves") {
    // M/M/1 with idling masked: the only feasible action when busy is to serve.
    auto m = UniformizedMdp::from_network(single_station({0.5}, {1.0}));
    PolicyNet init(m);
    init.mlp().xavier_init(5);
    for (auto a : {Algorithm::AMP, Algorithm::Discounted}) {
        CAPTURE(to_string(a));
        Trainer tr(m, small_config(a), init);
        auto recs = tr.run();
        for (const auto& r : recs) {
            CHECK(r.surrogate_before == doctest::Approx(r.surrogate_after).epsilon(1e-12));
            CHECK(r.samples > 0);
        }
        CHECK(tr.policy().mlp() == init.mlp());
    }
}

TEST_CASE("training is deterministic and resumes from a checkpoint") {
    auto m = two_class_queue();
    PolicyNet init(m);
    init.mlp().xavier_init(3);
    for (auto a : {Algorithm::Base, Algorithm::AMP, Algorithm::Discounted}) {
        CAPTURE(to_string(a));
        auto cfg = small_config(a);
        Trainer full(m, cfg, init);
        auto all = full.run();

        Trainer first(m, cfg, init);
        first.step();
        first.step();
        const auto path = temp_path("trainer.ckpt");
        first.save(path);
        Trainer resumed(m, cfg, init);
        resumed.load(path);
        CHECK(resumed.iteration() == 2);
        auto rest = resumed.run();
        std::remove(path.c_str());

        REQUIRE(rest.size() == 2);
        for (std::size_t k = 0; k < 2; ++k) {
            const auto& x = all[k + 2];
            const auto& y = rest[k];
            CHECK(x.iteration == y.iteration);
            CHECK(x.eta == y.eta);
            CHECK(x.half_width == y.half_width);
            CHECK(x.r == y.r);
            CHECK(x.value_loss == y.value_loss);
            CHECK(x.surrogate_before == y.surrogate_before);
            CHECK(x.surrogate_after == y.surrogate_after);
            CHECK(x.samples == y.samples);
        }
        CHECK(full.policy().mlp() == resumed.policy().mlp());
        CHECK(full.value().mlp() == resumed.value().mlp());
        CHECK(full.value().output_scale() == resumed.value().output_scale());
        CHECK_THROWS_AS(full.step(), InvalidParameter);
    }
}

TEST_CASE("worker count does not change the result") {
    auto m = two_class_queue();
    PolicyNet init(m);
    init.mlp().xavier_init(3);
    auto cfg = small_config(Algorithm::AMP);
    cfg.iterations = 2;
    cfg.actors = 3;
    Trainer one(m, cfg, init);
    one.run();
    cfg.threads = 3;
    Trainer three(m, cfg, init);
    three.run();
    CHECK(one.policy().mlp() == three.policy().mlp());
}

TEST_CASE("a corrupt checkpoint is rejected") {
    auto m = two_class_queue();
    PolicyNet init(m);
    Trainer tr(m, small_config(Algorithm::AMP), init);
    const auto path = temp_path("bad.ckpt");
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("qnc-trainer 1\niteration 1\nhave_value 1\nstarts 2 5\n", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(tr.load(path), DataCorruption);
    std::remove(path.c_str());
    CHECK_THROWS_AS(tr.load(temp_path("missing.ckpt")), ConfigError);
}

TEST_CASE("an episode that never regenerates aborts or rolls back") {
    auto m = two_class_queue();
    PolicyNet init(m);
    init.mlp().xavier_init(3);
    auto cfg = small_config(Algorithm::AMP);
    cfg.step_cap = 5;
    Trainer strict(m, cfg, init);
    CHECK_THROWS_AS(strict.step(), NonRegenerativeEpisode);
    cfg.rollback = true;
    Trainer lenient(m, cfg, init);
    auto rec = lenient.step();
    CHECK(rec.aborted);
    CHECK(!rec.note.empty());
    CHECK(lenient.iteration() == 1);
    CHECK(lenient.policy().mlp() == init.mlp());
}

TEST_CASE("both algorithms learn to serve the expensive class first") {
    auto m = two_class_queue();
    PolicyNet init(m);
    init.mlp().xavier_init(7);
    const State x{3, 3};
    std::vector<double> p0;
    init.distribution(x, p0);
    const auto stop = StopRule::regenerations(100000);
    auto before = evaluate_longrun(m, NeuralPolicy(std::make_shared<const PolicyNet>(init)), EvalMode::Version2, stop, 5);
    for (auto a : {Algorithm::AMP, Algorithm::Discounted}) {
        CAPTURE(to_string(a));
        auto cfg = small_config(a);
        cfg.iterations = 15;
        cfg.cycles = 500;
        cfg.horizon = 3000;
        cfg.seed = 2;
        Trainer tr(m, cfg, init);
        tr.run();
        std::vector<double> p;
        tr.policy().distribution(x, p);
        CHECK(p[0] > p0[0] + 0.1);
        auto after = evaluate_longrun(m, NeuralPolicy(tr.snapshot()), EvalMode::Version2, stop, 5);
        CHECK(after.estimate + after.half_width < before.estimate - before.half_width);
    }
}

}  // TEST_SUITE
