#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace qnc {

// Dense analysis of an irreducible aperiodic transition matrix.
struct ChainAnalysis {
    Eigen::MatrixXd P;
    Eigen::VectorXd d;  // stationary distribution
    Eigen::MatrixXd Z;  // fundamental matrix (I - P + e d^T)^{-1}
    Eigen::MatrixXd D;  // group inverse of I - P, Z - e d^T
    Eigen::MatrixXd M;  // mean first hitting times, zero diagonal
    double kappa = 0.0; // Kemeny's constant
};

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& P);
ChainAnalysis analyze(const Eigen::MatrixXd& P);

// One-norm ergodicity coefficient via the pairwise-rows formula.
double tau1(const Eigen::MatrixXd& A);
// V-weighted version: max over pairs of sum_z |A(x,z) - A(y,z)| V(z) / (V(x) + V(y)).
double tau1_V(const Eigen::MatrixXd& A, const Eigen::VectorXd& V);
// Operator norm induced by the weighted sup norm: max_x sum_y |A(x,y)| V(y) / V(x).
double norm_V(const Eigen::MatrixXd& A, const Eigen::VectorXd& V);
double norm_inf(const Eigen::MatrixXd& A);
// Weighted sup norm of a function: max_x |f(x)| / V(x).
double sup_norm_V(const Eigen::VectorXd& f, const Eigen::VectorXd& V);

struct DiscountedChain {
    Eigen::MatrixXd P;   // gamma P + (1 - gamma) e mu^T
    Eigen::VectorXd d;   // stationary distribution of P, equal to the discounted occupancy
    Eigen::MatrixXd D;   // group inverse of I - P
};

DiscountedChain discounted_chain(const Eigen::MatrixXd& P, double gamma, const Eigen::VectorXd& mu);
// (1 - gamma) mu^T (I - gamma P)^{-1}
Eigen::VectorXd discounted_occupancy(const Eigen::MatrixXd& P, double gamma, const Eigen::VectorXd& mu);

// Finite MDP with dense kernels. When m is non-empty the model is an SMDP:
// m(x,a) is the mean sojourn and g(x,a) the expected cost accrued over it.
struct FiniteMdp {
    int n = 0, k = 0;
    std::vector<Eigen::MatrixXd> P;  // one n x n matrix per action
    Eigen::MatrixXd g;               // n x k
    Eigen::MatrixXd m;               // n x k or empty

    bool smdp() const { return m.size() > 0; }
    bool state_cost() const;
    void validate() const;
    // A policy is an n x k row-stochastic matrix.
    Eigen::MatrixXd policy_matrix(const Eigen::MatrixXd& pi) const;
    Eigen::VectorXd policy_cost(const Eigen::MatrixXd& pi) const;
    Eigen::VectorXd policy_time(const Eigen::MatrixXd& pi) const;
    // Row x of P(.|x,a) applied to f, for every (x,a).
    Eigen::MatrixXd expect(const Eigen::VectorXd& f) const;
};

// Dirichlet(1) rows, costs uniform on [0,1]; with state_cost the cost ignores the action.
FiniteMdp random_finite_mdp(int n, int k, std::uint64_t seed, bool state_cost = false);
// Same, plus sojourn means uniform on [0.5, 2].
FiniteMdp random_finite_smdp(int n, int k, std::uint64_t seed);
Eigen::MatrixXd random_policy(int n, int k, std::uint64_t seed);
// (1 - s) pi + s * other, row by row.
Eigen::MatrixXd mix_policies(const Eigen::MatrixXd& pi, const Eigen::MatrixXd& other, double s);

struct BoundReport {
    double lhs = 0.0;        // actual performance difference
    double identity = 0.0;   // performance difference identity evaluated on the new policy's distribution
    double surrogate = 0.0;
    double penalty = 0.0;
    double rhs = 0.0;
    double slack = 0.0;      // rhs - lhs
    double condition = 0.0;  // tau1, tau1_V, or norm of Z depending on the bound
    double epsilon = 0.0;
    double old_rhs = 0.0;    // discounted only: bound with 1/(1 - gamma) in place of tau1
    double old_new_residual = 0.0;  // discounted only: perturbation identity for the occupancies
    double N1 = 0.0, N2 = 0.0, Dtp = 0.0;  // Ch2 mode only
};

BoundReport check_bound_discounted(const FiniteMdp& mdp, const Eigen::MatrixXd& pi1, const Eigen::MatrixXd& pi2,
                                   double gamma, const Eigen::VectorXd& mu);

// Lyapunov drift certificate: P V <= eps V + b 1_C.
struct DriftCertificate {
    Eigen::VectorXd V;
    double eps = 0.0;
    double b = 0.0;
    std::vector<int> C;
    // Largest violation max_x (P V - eps V - b 1_C)(x); non-positive when the drift holds.
    double violation(const Eigen::MatrixXd& P) const;
};

enum class AverageMode { Tau1, Vnorm, Ch2 };

// Average-cost bounds with pi1 the current policy and pi2 the candidate.
// Vnorm needs a drift certificate for pi2, Ch2 one for pi1 and a state cost.
// Violated hypotheses throw HypothesisViolated.
BoundReport check_bound_average(const FiniteMdp& mdp, const Eigen::MatrixXd& pi1, const Eigen::MatrixXd& pi2,
                                AverageMode mode = AverageMode::Tau1, const DriftCertificate* cert = nullptr);

BoundReport check_smdp(const FiniteMdp& smdp, const Eigen::MatrixXd& pi1, const Eigen::MatrixXd& pi2);

// Average cost and a Poisson solution with d^T h = 0 for a policy of an MDP or SMDP.
struct AverageValue {
    double eta = 0.0;
    double mean_time = 1.0;
    Eigen::VectorXd d, h;
    Eigen::MatrixXd A;  // advantage g - eta m + P h - h, n x k
};
AverageValue average_value(const FiniteMdp& mdp, const Eigen::MatrixXd& pi);

struct DiscountedValues {
    double eta = 0.0;  // (1 - gamma) mu^T V
    Eigen::VectorXd V, d;
    Eigen::MatrixXd A;  // g + gamma P V - V
};
DiscountedValues discounted_values(const FiniteMdp& mdp, const Eigen::MatrixXd& pi, double gamma,
                                   const Eigen::VectorXd& mu);

struct BoundCheck {
    double value = 0.0;
    double bound = 0.0;
    bool applicable = false;  // hypotheses hold
    bool holds() const { return !applicable || value <= bound; }
};

struct BernoulliReport {
    double rho = 0.0;
    int states = 0;
    double tail_mass = 0.0;
    double drift_violation = 0.0;   // max over states, <= 0 when the drift holds
    double drift_equality_gap = 0.0; // max over x >= 1 of |P V - eps V|
    double d_norm_V = 0.0;          // should be 1 + sqrt(rho)
    double tau1_V = 0.0;
    double example_bound = 0.0;     // (1 + rho)(2 + sqrt(rho)) / (1 - sqrt(rho))^2
    BoundCheck lemma_single;        // single-state lemma bound on tau1_V[D]
    BoundCheck lemma_single_d;      // its bound on ||d||_{1,V}
    BoundCheck lemma_set;           // finite-set lemma bound on tau1_V[D]
    std::vector<double> gammas;
    std::vector<double> discount_drift_violation;      // stated constant max(gamma b, (1 - gamma) mu^T V)
    std::vector<double> discount_drift_violation_sum;  // constant gamma b + (1 - gamma) mu^T V
    std::vector<BoundCheck> discounted_tau;  // corollary bound on tau1_V[D^gamma]
    std::vector<BoundCheck> discounted_d;    // corollary bound on ||d^gamma||_{1,V}
};

// Reflected walk on 0..states-1 with up-probability rho/(1+rho). If states is 0
// the truncation is chosen so that the V-weighted tail is below 1e-12.
BernoulliReport bernoulli_walk_case(double rho, int states = 0, std::vector<double> gammas = {0.9, 0.99});

}  // namespace qnc
