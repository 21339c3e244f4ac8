#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "qnc/chain.hpp"
#include "qnc/errors.hpp"
#include "qnc/exact.hpp"
#include "qnc/mdp.hpp"
#include "qnc/network.hpp"
#include "qnc/policy.hpp"
#include "qnc/random.hpp"

using namespace qnc;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_chain(int n, std::uint64_t seed) { return random_finite_mdp(n, 1, seed).P[0]; }

VectorXd uniform_start(int n) { return VectorXd::Constant(n, 1.0 / n); }

double max_abs(const MatrixXd& A) { return A.cwiseAbs().maxCoeff(); }

// Mean hitting time of y from x by brute-force simulation.
double simulated_hitting(const MatrixXd& P, int x, int y, int reps, std::uint64_t seed) {
    Rng rng(seed);
    double total = 0.0;
    for (int r = 0; r < reps; ++r) {
        int s = x, steps = 0;
        while (s != y) {
            double u = rng.uniform(), acc = 0.0;
            int next = static_cast<int>(P.cols()) - 1;
            for (int z = 0; z < P.cols(); ++z) {
                acc += P(s, z);
                if (u < acc) {
                    next = z;
                    break;
                }
            }
            s = next;
            ++steps;
        }
        total += steps;
    }
    return total / reps;
}

}  // namespace

TEST_SUITE("chain_analysis") {

TEST_CASE("two-state chain closed forms") {
    const double a = 0.3, b = 0.1;
    MatrixXd P(2, 2);
    P << 1 - a, a, b, 1 - b;
    auto c = analyze(P);
    CHECK(c.d(0) == doctest::Approx(b / (a + b)).epsilon(1e-12));
    CHECK(c.d(1) == doctest::Approx(a / (a + b)).epsilon(1e-12));
    CHECK(c.kappa == doctest::Approx(1.0 / (a + b)).epsilon(1e-12));
    CHECK(c.M(0, 1) == doctest::Approx(1.0 / a).epsilon(1e-12));
    CHECK(c.M(1, 0) == doctest::Approx(1.0 / b).epsilon(1e-12));
    // Brute force: mean hitting times from simulation, 95% level at ~4 sigma margin.
    double m01 = simulated_hitting(P, 0, 1, 40000, 7);
    double m10 = simulated_hitting(P, 1, 0, 40000, 8);
    CHECK(std::abs(m01 - 1.0 / a) < 4.0 * std::sqrt((1 - a) / (a * a) / 40000));
    CHECK(std::abs(m10 - 1.0 / b) < 4.0 * std::sqrt((1 - b) / (b * b) / 40000));
    double kappa_sim = c.d(1) * m01;  // from state 0, M(0,0) = 0
    CHECK(kappa_sim == doctest::Approx(c.kappa).epsilon(0.02));
    CHECK(tau1(c.D) == doctest::Approx(1.0 / (a + b)).epsilon(1e-12));
}

TEST_CASE("rank-one chain has trivial fundamental matrix") {
    VectorXd mu(4);
    mu << 0.1, 0.2, 0.3, 0.4;
    MatrixXd P = VectorXd::Ones(4) * mu.transpose();
    auto c = analyze(P);
    CHECK(max_abs(c.Z - MatrixXd::Identity(4, 4)) < 1e-12);
    CHECK(max_abs(c.D - (MatrixXd::Identity(4, 4) - P)) < 1e-12);
}

TEST_CASE("group inverse axioms and Kemeny constant on random chains") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        MatrixXd P = random_chain(8, 100 + s);
        auto c = analyze(P);
        MatrixXd I = MatrixXd::Identity(8, 8), A = I - P;
        CHECK(max_abs(c.d.transpose() * P - c.d.transpose()) < 1e-12);
        CHECK(std::abs(c.d.sum() - 1.0) < 1e-12);
        CHECK(max_abs(c.D * A * c.D - c.D) < 1e-9);
        CHECK(max_abs(A * c.D * A - A) < 1e-9);
        CHECK(max_abs(c.D * A - A * c.D) < 1e-9);
        VectorXd k = c.M * c.d;
        CHECK(k.maxCoeff() - k.minCoeff() < 1e-8);
        CHECK(k(0) == doctest::Approx(c.kappa).epsilon(1e-10));
        // M solves the first-step equations M(x,y) = 1 + sum_{z != y} P(x,z) M(z,y).
        for (int x = 0; x < 8; ++x)
            for (int y = 0; y < 8; ++y) {
                if (x == y) continue;
                double rhs = 1.0;
                for (int z = 0; z < 8; ++z)
                    if (z != y) rhs += P(x, z) * c.M(z, y);
                CHECK(std::abs(c.M(x, y) - rhs) < 1e-9);
            }
    }
}

TEST_CASE("reducible chain is rejected") {
    MatrixXd P = MatrixXd::Identity(3, 3);
    CHECK_THROWS_AS(analyze(P), ReducibleChain);
}

TEST_CASE("ergodicity coefficient shift invariance and definition") {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        MatrixXd A = MatrixXd::Random(6, 6);
        VectorXd c = VectorXd::Random(6);
        CHECK(tau1(VectorXd::Ones(6) * c.transpose()) == doctest::Approx(0.0));
        CHECK(tau1(A + VectorXd::Ones(6) * c.transpose()) == doctest::Approx(tau1(A)).epsilon(1e-12));
        VectorXd V = (VectorXd::Random(6).array().abs() * 5 + 1).matrix();
        CHECK(tau1_V(A + VectorXd::Ones(6) * c.transpose(), V) == doctest::Approx(tau1_V(A, V)).epsilon(1e-12));
        // The supremum over zero-sum unit vectors never exceeds the pairwise value.
        double tA = tau1(A), tV = tau1_V(A, V);
        for (int r = 0; r < 200; ++r) {
            VectorXd x(6);
            for (int i = 0; i < 6; ++i) x(i) = rng.uniform() - 0.5;
            x.array() -= x.mean();
            CHECK((A.transpose() * x).cwiseAbs().sum() <= tA * x.cwiseAbs().sum() + 1e-12);
            CHECK((A.transpose() * x).cwiseAbs().dot(V) <= tV * x.cwiseAbs().dot(V) + 1e-12);
        }
    }
}

TEST_CASE("condition numbers: equalities and ordering") {
    for (std::uint64_t s = 0; s < 200; ++s) {
        MatrixXd P = random_chain(5, 1000 + s);
        auto c = analyze(P);
        double t = tau1(c.D);
        CHECK(std::abs(t - tau1(c.Z)) < 1e-9);
        CHECK(std::abs(t - tau1(c.M * c.d.asDiagonal())) < 1e-9);
        CHECK(t <= norm_inf(c.Z) + 1e-9);
        CHECK(t <= c.kappa + 1e-9);
        double inner = 1e300;
        for (int x = 0; x < 5; ++x)
            for (int y = 0; y < 5; ++y) {
                double v = 0.0;
                for (int z = 0; z < 5; ++z) v += c.d(z) * std::min(c.M(x, z), c.M(y, z));
                inner = std::min(inner, v);
            }
        CHECK(std::abs(t - (c.kappa - inner)) < 1e-9);
    }
}

TEST_CASE("perturbation bound with tau1 is the tightest of the three") {
    for (std::uint64_t s = 0; s < 100; ++s) {
        MatrixXd P1 = random_chain(6, 2000 + s), P2 = random_chain(6, 3000 + s);
        auto c1 = analyze(P1), c2 = analyze(P2);
        double lhs = (c2.d - c1.d).cwiseAbs().sum();
        double base = ((P1 - P2).transpose() * c1.d).cwiseAbs().sum();
        double by_tau = tau1(c2.D) * base;
        CHECK(lhs <= by_tau + 1e-12);
        CHECK(by_tau <= c2.kappa * base + 1e-12);
        CHECK(by_tau <= norm_inf(c2.Z) * base + 1e-12);
    }
}

TEST_CASE("discounted chain") {
    MatrixXd P = random_chain(6, 41);
    VectorXd mu = random_policy(1, 6, 42).row(0).transpose();
    auto one = discounted_chain(P, 1.0, mu);
    CHECK(max_abs(one.P - P) == 0.0);
    CHECK(max_abs(one.d - stationary_distribution(P)) < 1e-12);
    auto zero = discounted_chain(P, 0.0, mu);
    CHECK(max_abs(zero.d - mu) < 1e-12);

    const double gamma = 0.9;
    auto c = discounted_chain(P, gamma, mu);
    VectorXd series = VectorXd::Zero(6), term = mu;
    for (int t = 0; t < 600; ++t) {
        series += term;
        term = gamma * (P.transpose() * term);
    }
    series *= 1.0 - gamma;
    CHECK(max_abs(c.d - series) < 1e-10);
    CHECK(max_abs(c.d - discounted_occupancy(P, gamma, mu)) < 1e-12);

    // Group inverse of the discounted chain in terms of the resolvent.
    MatrixXd R = (MatrixXd::Identity(6, 6) - gamma * P).inverse();
    MatrixXd e = VectorXd::Ones(6);
    MatrixXd form = R + e * c.d.transpose() * (MatrixXd::Identity(6, 6) - R) - e * c.d.transpose();
    CHECK(max_abs(c.D - form) < 1e-9);
    CHECK(tau1(c.D) == doctest::Approx(tau1(R)).epsilon(1e-9));
}

TEST_CASE("discounted bound: identical policies") {
    auto mdp = random_finite_mdp(5, 3, 11);
    MatrixXd pi = random_policy(5, 3, 12);
    auto r = check_bound_discounted(mdp, pi, pi, 0.9, uniform_start(5));
    CHECK(std::abs(r.lhs) < 1e-12);
    CHECK(std::abs(r.surrogate) < 1e-12);
    CHECK(r.penalty == 0.0);
}

TEST_CASE("discounted bound and identity on random MDPs") {
    for (double gamma : {0.5, 0.9, 0.99}) {
        for (std::uint64_t s = 0; s < 60; ++s) {
            auto mdp = random_finite_mdp(5, 3, 5000 + s);
            MatrixXd p1 = random_policy(5, 3, 6000 + s), p2 = random_policy(5, 3, 7000 + s);
            auto r = check_bound_discounted(mdp, p1, p2, gamma, uniform_start(5));
            CHECK(std::abs(r.lhs - r.identity) < 1e-10);
            CHECK(r.slack >= -1e-9);
            CHECK(r.old_rhs >= r.rhs - 1e-12);
            CHECK(r.old_new_residual < 1e-10);
        }
    }
}

TEST_CASE("discounted quantities approach average ones") {
    auto mdp = random_finite_mdp(5, 3, 77);
    MatrixXd pi = random_policy(5, 3, 78);
    auto av = average_value(mdp, pi);
    double prev_eta = 1e300, prev_adv = 1e300;
    for (double gamma : {0.9, 0.99, 0.999, 0.9999}) {
        auto dv = discounted_values(mdp, pi, gamma, uniform_start(5));
        double e = std::abs(dv.eta - av.eta);
        double a = max_abs(dv.A - av.A);
        CHECK(e < prev_eta);
        CHECK(a < prev_adv);
        prev_eta = e;
        prev_adv = a;
    }
    CHECK(prev_eta < 1e-3);
    CHECK(prev_adv < 1e-3);
}

TEST_CASE("average bound and identity on random MDPs") {
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto mdp = random_finite_mdp(5, 3, 8000 + s);
        MatrixXd p1 = random_policy(5, 3, 9000 + s), p2 = random_policy(5, 3, 9500 + s);
        auto r = check_bound_average(mdp, p1, p2);
        CHECK(std::abs(r.lhs - r.identity) < 1e-10);
        CHECK(r.slack >= -1e-9);
    }
}

TEST_CASE("Ch2 bound: zero at identical policies, valid when D < 1") {
    auto mdp = random_finite_mdp(5, 3, 21, true);
    DriftCertificate cert{VectorXd::Ones(5), 0.5, 1.0, {0, 1, 2, 3, 4}};
    MatrixXd p1 = random_policy(5, 3, 22);
    auto same = check_bound_average(mdp, p1, p1, AverageMode::Ch2, &cert);
    CHECK(std::abs(same.N1) < 1e-12);
    CHECK(same.N2 == 0.0);
    CHECK(same.Dtp == 0.0);

    int used = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto m = random_finite_mdp(5, 3, 300 + s, true);
        MatrixXd a = random_policy(5, 3, 400 + s), b = random_policy(5, 3, 500 + s);
        MatrixXd near = mix_policies(a, b, 0.05 + 0.3 * (s % 4) / 3.0);
        try {
            auto r = check_bound_average(m, a, near, AverageMode::Ch2, &cert);
            CHECK(r.slack >= -1e-9);
            ++used;
        } catch (const HypothesisViolated&) {
        }
    }
    CHECK(used > 20);
    CHECK_THROWS_AS(check_bound_average(random_finite_mdp(5, 3, 1), p1, p1, AverageMode::Ch2, &cert),
                    HypothesisViolated);
}

TEST_CASE("V-weighted average bound") {
    for (std::uint64_t s = 0; s < 60; ++s) {
        auto mdp = random_finite_mdp(5, 3, 1200 + s);
        MatrixXd p1 = random_policy(5, 3, 1300 + s), p2 = random_policy(5, 3, 1400 + s);
        VectorXd V(5);
        V << 1, 1.5, 2, 3, 5;
        // With C the whole space any b >= max P V works.
        DriftCertificate cert{V, 0.5, 5.0, {0, 1, 2, 3, 4}};
        auto r = check_bound_average(mdp, p1, p2, AverageMode::Vnorm, &cert);
        CHECK(r.slack >= -1e-9);
        auto plain = check_bound_average(mdp, p1, p2, AverageMode::Tau1);
        CHECK(r.surrogate == doctest::Approx(plain.surrogate));
    }
    DriftCertificate bad{VectorXd::Ones(5), 0.5, 0.0, {}};
    auto mdp = random_finite_mdp(5, 3, 1);
    MatrixXd p = random_policy(5, 3, 2);
    CHECK_THROWS_AS(check_bound_average(mdp, p, p, AverageMode::Vnorm, &bad), HypothesisViolated);
}

TEST_CASE("SMDP with unit sojourns reduces to the MDP") {
    auto mdp = random_finite_mdp(4, 3, 31);
    auto smdp = mdp;
    smdp.m = MatrixXd::Ones(4, 3);
    MatrixXd p1 = random_policy(4, 3, 32), p2 = random_policy(4, 3, 33);
    auto a = check_bound_average(mdp, p1, p2);
    auto b = check_smdp(smdp, p1, p2);
    CHECK(b.lhs == doctest::Approx(a.lhs).epsilon(1e-12));
    CHECK(b.rhs == doctest::Approx(a.rhs).epsilon(1e-12));
}

TEST_CASE("SMDP identity and bound on random instances") {
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto smdp = random_finite_smdp(4, 3, 1500 + s);
        MatrixXd p1 = random_policy(4, 3, 1600 + s), p2 = random_policy(4, 3, 1700 + s);
        auto r = check_smdp(smdp, p1, p2);
        CHECK(std::abs(r.lhs - r.identity) < 1e-10);
        CHECK(r.slack >= -1e-9);
        // Ratio form of the average cost.
        auto v = average_value(smdp, p1);
        CHECK(v.eta == doctest::Approx(v.d.dot(smdp.policy_cost(p1)) / v.d.dot(smdp.policy_time(p1))));
    }
    auto bad = random_finite_smdp(3, 2, 1);
    bad.m(0, 0) = 0.0;
    MatrixXd p = random_policy(3, 2, 2);
    CHECK_THROWS_AS(check_smdp(bad, p, p), InvalidSojourn);
}

TEST_CASE("criss-cross as a semi-Markov model matches the uniformized chain") {
    auto mdp = mdp_from_preset("crisscross:IL");
    const int cap = 4;
    TruncatedChain chain(mdp, cap);
    const int n = static_cast<int>(chain.size());
    const double B = mdp.uniform_rate();
    // Joint actions over the two stations.
    std::vector<Action> actions;
    for (int a0 = 0; a0 < mdp.num_options(0); ++a0)
        for (int a1 = 0; a1 < mdp.num_options(1); ++a1) actions.push_back({a0, a1});
    const int k = static_cast<int>(actions.size());
    auto capped = mdp.with_cap(cap);
    FiniteMdp smdp;
    smdp.n = n;
    smdp.k = k;
    smdp.P.assign(k, MatrixXd::Zero(n, n));
    smdp.g.resize(n, k);
    smdp.m.resize(n, k);
    for (int i = 0; i < n; ++i) {
        State x = chain.state(i);
        for (int a = 0; a < k; ++a) {
            double stay = 0.0;
            for (auto& s : capped.transitions(x, actions[a]))
                if (s.state == x) stay += s.prob;
                else smdp.P[a](i, chain.index(s.state)) += s.prob;
            if (1.0 - stay < 1e-12) {
                smdp.P[a](i, i) = 1.0;
                smdp.m(i, a) = 1.0 / B;
            } else {
                smdp.P[a].row(i) /= 1.0 - stay;
                smdp.m(i, a) = 1.0 / (B * (1.0 - stay));
            }
            smdp.g(i, a) = chain.costs()[i] * smdp.m(i, a);
        }
    }
    smdp.validate();
    // A randomized policy mixes rates in the uniformized chain but sojourns in
    // the semi-Markov one, so the two agree only for deterministic policies.
    auto pr = baseline_policy(BaselineKind::LBFS, mdp);
    MatrixXd pi = MatrixXd::Zero(n, k);
    std::vector<double> probs;
    for (int i = 0; i < n; ++i) {
        pr->probabilities(chain.state(i), probs);
        for (int a = 0; a < k; ++a) pi(i, a) = action_probability(mdp, probs, actions[a]);
    }
    auto semi = average_value(smdp, pi);
    MatrixXd P = chain.dense_policy_matrix(*pr);
    auto uni = solve_poisson(P, chain.cost_vector());
    CHECK(semi.eta == doctest::Approx(uni.eta).epsilon(1e-10));
}

TEST_CASE("Bernoulli walk constants") {
    for (double rho : {0.3, 0.5, 0.8}) {
        auto r = bernoulli_walk_case(rho);
        CHECK(r.tail_mass < 1e-10);
        CHECK(r.drift_violation <= 1e-12);
        CHECK(r.drift_equality_gap < 1e-12);
        CHECK(std::abs(r.d_norm_V - (1.0 + std::sqrt(rho))) < 1e-8);
        CHECK(r.tau1_V <= r.example_bound);
        CHECK(r.lemma_single.holds());
        CHECK(r.lemma_single_d.holds());
        CHECK(r.lemma_set.applicable);
        CHECK(r.lemma_set.holds());
        for (std::size_t i = 0; i < r.gammas.size(); ++i) {
            CHECK(r.discount_drift_violation_sum[i] <= 1e-12);
            CHECK(r.discounted_tau[i].holds());
            CHECK(r.discounted_d[i].holds());
        }
    }
    CHECK_THROWS_AS(bernoulli_walk_case(0.5, 10), TruncationTooSmall);
    // With the max in place of the sum the drift fails at the origin here.
    auto r = bernoulli_walk_case(0.5, 0, {0.9});
    CHECK(r.discount_drift_violation[0] > 0.02);
    CHECK(r.discount_drift_violation_sum[0] <= 1e-12);
}

TEST_CASE("Bernoulli walk scaled computation agrees with the direct one on a short truncation") {
    const double rho = 0.3;
    auto r = bernoulli_walk_case(rho, 25, {});
    const int n = 25;
    const double lam = rho / (1 + rho), mu = 1 / (1 + rho);
    MatrixXd P = MatrixXd::Zero(n, n);
    for (int x = 0; x < n; ++x) {
        P(x, std::min(x + 1, n - 1)) += lam;
        P(x, std::max(x - 1, 0)) += mu;
    }
    VectorXd V(n);
    for (int x = 0; x < n; ++x) V(x) = std::pow(rho, -0.5 * x);
    auto c = analyze(P);
    CHECK(r.tau1_V == doctest::Approx(tau1_V(c.D, V)).epsilon(1e-6));
    CHECK(r.d_norm_V == doctest::Approx(c.d.dot(V)).epsilon(1e-9));
}

TEST_CASE("second-eigenvalue growth of the discounted condition number") {
    // tau1[D^gamma] (1 - gamma |lambda_2|) stays within a bounded band across gamma.
    for (std::uint64_t s = 0; s < 10; ++s) {
        MatrixXd P = random_chain(6, 4000 + s);
        Eigen::EigenSolver<MatrixXd> es(P);
        std::vector<double> mags;
        for (int i = 0; i < 6; ++i) mags.push_back(std::abs(es.eigenvalues()(i)));
        std::sort(mags.rbegin(), mags.rend());
        const double l2 = mags[1];
        double lo = 1e300, hi = 0.0;
        for (double gamma : {0.5, 0.9, 0.99, 0.999, 1.0}) {
            auto c = discounted_chain(P, gamma, uniform_start(6));
            double v = tau1(c.D) * (1.0 - gamma * l2);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        CHECK(hi / lo < 10.0);
    }
}

}  // TEST_SUITE
