#include <doctest.h>

#include <cmath>
#include <sstream>

#include "qnc/errors.hpp"
#include "qnc/mdp.hpp"
#include "qnc/neural.hpp"
#include "qnc/policy.hpp"
#include "qnc/random.hpp"
#include "qnc/simulate.hpp"

using namespace qnc;
using Eigen::VectorXd;

namespace {

const UniformizedMdp& crisscross() {
    static const UniformizedMdp m = mdp_from_preset("crisscross:IL");
    return m;
}

State random_state(Rng& rng, int dim, int maxjobs) {
    State x(dim);
    for (auto& v : x) v = static_cast<int>(rng.below(maxjobs + 1));
    return x;
}

double relative_error(const VectorXd& a, const VectorXd& b) {
    double scale = std::max(a.norm(), b.norm());
    return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

// Central differences of loss(params) with step 1e-5.
template <class F>
VectorXd numeric_gradient(VectorXd& params, F&& loss) {
    const double h = 1e-5;
    VectorXd g(params.size());
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        double keep = params[i];
        params[i] = keep + h;
        double up = loss();
        params[i] = keep - h;
        double down = loss();
        params[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

// Random surrogate data whose ratios stay away from the clip kinks.
PolicyData surrogate_data(const PolicyNet& net, Rng& rng, int n, double eps) {
    const auto& m = net.mdp();
    PolicyData d;
    std::vector<double> p;
    while (static_cast<int>(d.size()) < n) {
        State x = random_state(rng, m.dim(), 6);
        net.distribution(x, p);
        Action a(m.num_groups());
        double pi = 1.0;
        for (int g = 0; g < m.num_groups(); ++g) {
            double u = rng.uniform(), acc = 0.0;
            int o = m.num_options(g) - 1;
            for (int k = 0; k < m.num_options(g); ++k) {
                acc += p[m.group_offset(g) + k];
                if (u < acc && p[m.group_offset(g) + k] > 0) {
                    o = k;
                    break;
                }
            }
            while (p[m.group_offset(g) + o] == 0) --o;
            a[g] = o;
            pi *= p[m.group_offset(g) + o];
        }
        double r = 0.6 + 0.9 * rng.uniform();
        if (std::abs(r - (1 - eps)) < 1e-3 || std::abs(r - (1 + eps)) < 1e-3) continue;
        d.states.push_back(x);
        d.actions.push_back(a);
        d.behavior_prob.push_back(pi / r);
        d.advantages.push_back(4.0 * rng.uniform() - 2.0);
    }
    return d;
}

}  // namespace

TEST_SUITE("neural") {

TEST_CASE("layer widths") {
    CHECK(policy_widths(3, 2, 3) == std::vector<int>{3, 30, 24, 14, 3});
    CHECK(value_widths(3) == std::vector<int>{3, 30, 17, 10, 1});
    PolicyNet net(crisscross());
    // Two stations add one idle logit each.
    CHECK(net.mlp().widths() == std::vector<int>{3, 30, 24, 14, 5});
    // Parameter count for J = 21, L = 7 from the layer-by-layer formula.
    Mlp big(policy_widths(21, 7, 21));
    const long a = 210, b = 121, c = 26;
    CHECK(big.num_params() == (21 * a + a) + (a * b + b) + (b * c + c) + (c * 21 + 21));
    PolicyNet nm(preset_nmodel(0.95));
    CHECK(nm.mlp().widths() == std::vector<int>{2, 20, 20, 14, 2});
}

TEST_CASE("Xavier initialization") {
    Mlp a(policy_widths(6, 2, 8)), b(policy_widths(6, 2, 8));
    a.xavier_init(7);
    b.xavier_init(7);
    CHECK(a == b);
    b.xavier_init(8);
    CHECK(!(a == b));
    for (int l = 0; l < a.layers(); ++l) {
        double lim = std::sqrt(6.0 / (a.widths()[l] + a.widths()[l + 1]));
        CHECK(a.weight(l).cwiseAbs().maxCoeff() <= lim);
        CHECK(a.bias(l).cwiseAbs().maxCoeff() == 0.0);
    }
    // Variance of U(-lim, lim) is 2 / (fan_in + fan_out).
    auto w = a.weight(1);
    double var = w.array().square().mean();
    double want = 2.0 / (a.widths()[1] + a.widths()[2]);
    CHECK(var == doctest::Approx(want).epsilon(0.1));
}

TEST_CASE("fresh policy is close to uniform over feasible options") {
    PolicyNet net(crisscross());
    net.mlp().xavier_init(1);
    std::vector<double> p;
    net.distribution({3, 2, 4}, p);
    // Station 1 options: class 1, class 3, idle (masked). Station 2: class 2, idle (masked).
    CHECK(p[0] == doctest::Approx(0.5).epsilon(0.1));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(0.1));
    CHECK(p[2] == 0.0);
    CHECK(p[3] == 1.0);
    CHECK(p[4] == 0.0);
}

TEST_CASE("empty state idles every station") {
    PolicyNet net(crisscross());
    net.mlp().xavier_init(2);
    std::vector<double> p;
    net.distribution({0, 0, 0}, p);
    CHECK(p == std::vector<double>{0, 0, 1, 0, 1});
}

TEST_CASE("equal logits split evenly between nonempty classes") {
    PolicyNet net(crisscross());
    std::vector<double> p;
    net.distribution({2, 0, 5}, p);  // all parameters zero: every logit is 0
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);
    net.distribution({2, 0, 0}, p);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == 0.0);
}

TEST_CASE("idling allowed when the flag is off") {
    PolicyNet net(crisscross(), NetConfig{50.0, false});
    std::vector<double> p;
    net.distribution({2, 1, 5}, p);
    CHECK(p[0] == doctest::Approx(1.0 / 3));
    CHECK(p[2] == doctest::Approx(1.0 / 3));
    CHECK(p[3] == doctest::Approx(0.5));
}

TEST_CASE("distributions are normalized and respect empty buffers") {
    Rng rng(3);
    std::vector<double> p;
    for (const char* preset : {"crisscross:IL", "ext6:L=2", "nmodel:rho=0.95"}) {
        auto m = mdp_from_preset(preset);
        PolicyNet net(m);
        for (int rep = 0; rep < 2000; ++rep) {
            if (rep % 100 == 0) {
                net.mlp().xavier_init(rng.next());
                net.mlp().params() *= 3.0;
            }
            State x = random_state(rng, m.dim(), 3);
            net.distribution(x, p);
            for (int g = 0; g < m.num_groups(); ++g) {
                double s = 0.0;
                for (int o = 0; o < m.num_options(g); ++o) {
                    double q = p[m.group_offset(g) + o];
                    s += q;
                    if (!m.option_feasible(x, g, o)) CHECK(q == 0.0);
                }
                CHECK(std::abs(s - 1.0) < 1e-12);
            }
        }
    }
}

TEST_CASE("clipped surrogate gradient matches finite differences") {
    Rng rng(11);
    const double eps = 0.2;
    for (int inst = 0; inst < 20; ++inst) {
        PolicyNet net(crisscross());
        net.mlp().xavier_init(1000 + inst);
        net.mlp().params() *= 2.0;
        auto data = surrogate_data(net, rng, 24, eps);
        VectorXd g;
        clipped_surrogate(net, data, eps, &g);
        auto fd = numeric_gradient(net.mlp().params(), [&] { return clipped_surrogate(net, data, eps); });
        CHECK(relative_error(g, fd) < 1e-5);
    }
}

TEST_CASE("value loss gradient matches finite differences") {
    Rng rng(12);
    for (int inst = 0; inst < 20; ++inst) {
        ValueNet net(3);
        net.mlp().xavier_init(2000 + inst);
        // Every other instance uses a large output scale.
        const double scale = inst % 2 ? 300.0 : 1.0;
        net.set_output_scale(scale);
        ValueData d;
        for (int i = 0; i < 32; ++i) {
            d.states.push_back(random_state(rng, 3, 40));
            d.targets.push_back(scale * (10.0 * rng.uniform() - 5.0));
        }
        VectorXd g;
        value_mse(net, d, &g);
        auto fd = numeric_gradient(net.mlp().params(), [&] { return value_mse(net, d); });
        CHECK(relative_error(g, fd) < 1e-5);
    }
}

TEST_CASE("cross-entropy gradient matches finite differences") {
    Rng rng(13);
    auto& m = crisscross();
    auto pr = pr_policy(m);
    PolicyNet net(m);
    net.mlp().xavier_init(5);
    std::vector<State> xs;
    std::vector<std::vector<double>> ex;
    for (int i = 0; i < 30; ++i) {
        xs.push_back(random_state(rng, 3, 5));
        ex.emplace_back();
        pr->probabilities(xs.back(), ex.back());
    }
    VectorXd g;
    cross_entropy(net, xs, ex, &g);
    auto fd = numeric_gradient(net.mlp().params(), [&] { return cross_entropy(net, xs, ex); });
    CHECK(relative_error(g, fd) < 1e-5);
}

TEST_CASE("surrogate on the behaviour policy") {
    Rng rng(14);
    PolicyNet net(crisscross());
    net.mlp().xavier_init(9);
    auto data = surrogate_data(net, rng, 50, 0.2);
    // Make the data on-policy: r = 1 everywhere.
    std::vector<double> p;
    for (std::size_t i = 0; i < data.size(); ++i) {
        net.distribution(data.states[i], p);
        data.behavior_prob[i] = action_probability(net.mdp(), p, data.actions[i]);
    }
    double mean_adv = 0.0;
    for (double a : data.advantages) mean_adv += a / data.size();
    VectorXd g;
    CHECK(clipped_surrogate(net, data, 0.2, &g) == doctest::Approx(mean_adv).epsilon(1e-12));
    // With the clip inactive the gradient is that of mean(r A).
    auto plain = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            net.distribution(data.states[i], p);
            s += action_probability(net.mdp(), p, data.actions[i]) / data.behavior_prob[i] * data.advantages[i];
        }
        return s / data.size();
    };
    CHECK(relative_error(g, numeric_gradient(net.mlp().params(), plain)) < 1e-5);
}

TEST_CASE("clipped branch has zero gradient") {
    // Costs are minimized, so the clip binds for A < 0 with r > 1 + eps and
    // for A > 0 with r < 1 - eps.
    Rng rng(15);
    PolicyNet net(crisscross());
    net.mlp().xavier_init(10);
    auto data = surrogate_data(net, rng, 10, 0.2);
    std::vector<double> p;
    auto set_ratio = [&](double r, double sign) {
        for (std::size_t i = 0; i < data.size(); ++i) {
            net.distribution(data.states[i], p);
            data.behavior_prob[i] = action_probability(net.mdp(), p, data.actions[i]) / r;
            data.advantages[i] = sign * (1.0 + i);
        }
    };
    VectorXd g;
    double mean_abs = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) mean_abs += (1.0 + i) / data.size();

    set_ratio(1.5, -1.0);
    CHECK(clipped_surrogate(net, data, 0.2, &g) == doctest::Approx(-1.2 * mean_abs));
    CHECK(g.cwiseAbs().maxCoeff() == 0.0);

    set_ratio(0.5, 1.0);
    CHECK(clipped_surrogate(net, data, 0.2, &g) == doctest::Approx(0.8 * mean_abs));
    CHECK(g.cwiseAbs().maxCoeff() == 0.0);

    // The other side of each kink keeps the unclipped term and its gradient.
    set_ratio(1.5, 1.0);
    CHECK(clipped_surrogate(net, data, 0.2, &g) == doctest::Approx(1.5 * mean_abs));
    CHECK(g.cwiseAbs().maxCoeff() > 0.0);

    CHECK(clip(1.5, 0.8, 1.2) == 1.2);
    CHECK(clip(0.5, 0.8, 1.2) == 0.8);
    CHECK(clip(1.0, 0.8, 1.2) == 1.0);
}

TEST_CASE("clipped surrogate is pessimistic") {
    Rng rng(16);
    for (int inst = 0; inst < 10; ++inst) {
        PolicyNet net(crisscross());
        net.mlp().xavier_init(3000 + inst);
        auto data = surrogate_data(net, rng, 40, 0.1);
        std::vector<double> p;
        for (std::size_t i = 0; i < data.size(); ++i) {
            PolicyData one;
            one.states = {data.states[i]};
            one.actions = {data.actions[i]};
            one.advantages = {data.advantages[i]};
            one.behavior_prob = {data.behavior_prob[i]};
            net.distribution(data.states[i], p);
            double r = action_probability(net.mdp(), p, data.actions[i]) / data.behavior_prob[i];
            CHECK(clipped_surrogate(net, one, 0.1) >= r * data.advantages[i] - 1e-15);
        }
    }
}

TEST_CASE("empty batch and corrupt data") {
    PolicyNet net(crisscross());
    net.mlp().xavier_init(1);
    PolicyData empty;
    VectorXd g;
    CHECK(clipped_surrogate(net, empty, 0.2, &g) == 0.0);
    CHECK(g.size() == net.mlp().num_params());
    CHECK(g.cwiseAbs().maxCoeff() == 0.0);
    ValueNet v(3);
    CHECK(value_mse(v, ValueData{}, &g) == 0.0);
    CHECK_THROWS_AS(v.set_output_scale(0.0), InvalidParameter);
    CHECK(g.cwiseAbs().maxCoeff() == 0.0);
    PolicyData bad;
    bad.states = {{1, 1, 1}};
    bad.actions = {{0, 0}};
    bad.advantages = {1.0};
    bad.behavior_prob = {0.0};
    CHECK_THROWS_AS(clipped_surrogate(net, bad, 0.2), DataCorruption);
}

TEST_CASE("masked options receive no gradient") {
    Rng rng(17);
    PolicyNet net(crisscross());
    net.mlp().xavier_init(4);
    // Every sample has work at both stations, so both idle logits are masked.
    PolicyData d;
    std::vector<double> p;
    for (int i = 0; i < 20; ++i) {
        State x{1 + static_cast<int>(rng.below(4)), 1 + static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4))};
        net.distribution(x, p);
        Action a{x[2] > 0 ? static_cast<int>(rng.below(2)) : 0, 0};
        d.states.push_back(x);
        d.actions.push_back(a);
        d.behavior_prob.push_back(action_probability(net.mdp(), p, a));
        d.advantages.push_back(rng.uniform() - 0.5);
    }
    VectorXd g;
    clipped_surrogate(net, d, 0.2, &g);
    const auto& mlp = net.mlp();
    const int last = mlp.layers() - 1;
    // Output bias gradient entries for the idle logits (flat options 2 and 4).
    Eigen::Index bias0 = mlp.num_params() - mlp.widths().back();
    CHECK(g[bias0 + 2] == 0.0);
    CHECK(g[bias0 + 4] == 0.0);
    CHECK(g[bias0 + 0] != 0.0);
    // Output weight rows of the idle logits too.
    Eigen::Index w0 = bias0 - static_cast<Eigen::Index>(mlp.widths()[last]) * mlp.widths().back();
    for (int c = 0; c < mlp.widths()[last]; ++c) {
        CHECK(g[w0 + c * mlp.widths().back() + 2] == 0.0);
        CHECK(g[w0 + c * mlp.widths().back() + 4] == 0.0);
    }
}

TEST_CASE("Adam update") {
    AdamConfig cfg;
    cfg.lr = 0.01;
    VectorXd theta = VectorXd::LinSpaced(5, -1, 1), start = theta;
    AdamState s;
    adam_step(theta, VectorXd::Zero(5), s, cfg);
    CHECK(theta == start);
    CHECK(s.t == 1);

    AdamState s2;
    VectorXd t2 = start, g(5);
    g << 0.3, -2.0, 1e-3, 5.0, -0.7;
    adam_step(t2, g, s2, cfg);
    for (int i = 0; i < 5; ++i)
        CHECK(t2[i] - start[i] == doctest::Approx(-cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps)).epsilon(1e-12));

    // Moments carry over between calls.
    VectorXd t3 = t2;
    adam_step(t3, g, s2, cfg);
    CHECK(s2.t == 2);
    double m = (1 - cfg.beta1) * g[0] * (1 + cfg.beta1), v = (1 - cfg.beta2) * g[0] * g[0] * (1 + cfg.beta2);
    double step = cfg.lr * (m / (1 - cfg.beta1 * cfg.beta1)) / (std::sqrt(v / (1 - cfg.beta2 * cfg.beta2)) + cfg.eps);
    CHECK(t3[0] - t2[0] == doctest::Approx(-step).epsilon(1e-12));
}

TEST_CASE("Adam epochs are deterministic and fit a value function") {
    Rng data_rng(18);
    ValueData d;
    for (int i = 0; i < 600; ++i) {
        State x = random_state(data_rng, 3, 30);
        d.states.push_back(x);
        d.targets.push_back(0.2 * x[0] + 0.1 * x[1] * x[1] / 30.0 - 0.05 * x[2]);
    }
    auto run = [&](ValueNet& net, AdamState& st) {
        Rng rng(19);
        AdamConfig cfg;
        cfg.lr = 3e-3;
        cfg.minibatch = 64;
        cfg.epochs = 60;
        MinibatchLoss loss = [&](const std::vector<std::size_t>& idx, VectorXd& g) { return value_mse(net, d, &g, idx); };
        return adam_epochs(d.size(), loss, net.mlp().params(), st, cfg, rng);
    };
    ValueNet a(3), b(3);
    a.mlp().xavier_init(20);
    b.mlp().xavier_init(20);
    double before = value_mse(a, d);
    AdamState sa, sb;
    run(a, sa);
    run(b, sb);
    CHECK(a.mlp() == b.mlp());
    CHECK(sa == sb);
    CHECK(sa.t == 60 * 10);
    CHECK(value_mse(a, d) < 0.05 * before);
}

TEST_CASE("checkpoint round trip is bit exact") {
    PolicyNet net(mdp_from_preset("ext6:L=2"));
    net.mlp().xavier_init(21);
    net.mlp().params() *= std::sqrt(2.0);
    AdamState st;
    VectorXd g = VectorXd::Random(net.mlp().num_params());
    adam_step(net.mlp().params(), g, st, AdamConfig{});
    std::stringstream ss;
    write_mlp(ss, net.mlp(), st);
    Mlp back;
    AdamState st2;
    read_mlp(ss, back, st2);
    CHECK(back == net.mlp());
    CHECK(st2 == st);
    std::stringstream bad("mlp 3 1 2 1\nparams 7\n0x1p+0 zz");
    CHECK_THROWS_AS(read_mlp(bad, back, st2), DataCorruption);
}

TEST_CASE("pretraining on a uniform expert reaches its entropy") {
    auto& m = crisscross();
    UniformPolicy expert(m);
    PolicyNet net(m);
    net.mlp().xavier_init(22);
    PretrainConfig cfg;
    cfg.samples = 20000;
    cfg.adam.epochs = 5;
    auto batch = simulate(m, expert, {0, 0, 0}, StopRule::steps(20000), 23, SimulateOptions{false});
    std::vector<std::vector<double>> ex(batch.states.size());
    double entropy = 0.0;
    for (std::size_t i = 0; i < batch.states.size(); ++i) {
        expert.probabilities(batch.states[i], ex[i]);
        for (double q : ex[i])
            if (q > 0) entropy -= q * std::log(q) / batch.states.size();
    }
    double before = cross_entropy(net, batch.states, ex);
    double after = pretrain_from_expert(net, expert, cfg, 23);
    CHECK(after < before);
    CHECK(after == doctest::Approx(entropy).epsilon(0.01));
}

TEST_CASE("pretraining on the PR expert for the six-class network") {
    auto m = mdp_from_preset("ext6:L=2");
    auto pr = pr_policy(m);
    auto net = std::make_shared<PolicyNet>(m);
    net->mlp().xavier_init(24);
    PretrainConfig cfg;
    cfg.samples = 100000;
    pretrain_from_expert(*net, *pr, cfg, 25);
    // Held-out states from an independent expert run.
    auto held = simulate(m, *pr, State(m.dim(), 0), StopRule::steps(20000), 26, SimulateOptions{false});
    std::vector<double> p, q;
    double tv = 0.0;
    for (const auto& x : held.states) {
        net->distribution(x, p);
        pr->probabilities(x, q);
        double d = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
        tv += 0.5 * d / m.num_groups() / held.states.size();
    }
    CHECK(tv < 0.1);
    // The pretrained policy is stable: it keeps returning to the empty state.
    NeuralPolicy pol(net);
    CHECK(pol.expensive());
    StopRule stop = StopRule::regenerations(200);
    stop.step_cap = 2'000'000;
    CHECK_NOTHROW(simulate(m, pol, State(m.dim(), 0), stop, 27, SimulateOptions{false}));
}

}  // TEST_SUITE
