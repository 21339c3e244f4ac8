#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <vector>

#include "qnc/mdp.hpp"
#include "qnc/policy.hpp"

namespace qnc {

// Buffer-capped copy of an MDP with every state indexed densely and the
// per-option transition rows stored in compressed form.
class TruncatedChain {
public:
    TruncatedChain(const UniformizedMdp& mdp, int cap);

    std::size_t size() const { return n_; }
    int cap() const { return cap_; }
    const UniformizedMdp& mdp() const { return mdp_; }
    std::size_t index(const State& x) const;
    State state(std::size_t i) const;
    const std::vector<double>& costs() const { return cost_; }

    struct Rows {
        std::vector<std::uint32_t> offset;  // n+1
        std::vector<std::uint32_t> target;
        std::vector<double> prob;
    };
    const Rows& base() const { return base_; }
    const Rows& option(int g, int o) const { return options_[g][o]; }
    bool feasible(std::size_t i, int g, int o) const { return feasible_[g][o][i] != 0; }

    // Transition matrix of a stationary policy on the truncation.
    Eigen::SparseMatrix<double, Eigen::RowMajor> policy_matrix(const Policy& pi) const;
    Eigen::MatrixXd dense_policy_matrix(const Policy& pi) const;
    Eigen::VectorXd cost_vector() const;

private:
    UniformizedMdp mdp_;
    int cap_;
    std::size_t n_;
    std::vector<std::size_t> stride_;
    std::vector<double> cost_;
    Rows base_;
    std::vector<std::vector<Rows>> options_;
    std::vector<std::vector<std::vector<std::uint8_t>>> feasible_;
};

struct RviResult {
    double eta = 0.0;        // midpoint of the span bounds
    double lower = 0.0, upper = 0.0;
    double span = 0.0;
    int iterations = 0;
    std::vector<double> h;   // relative values with h(reference) = 0
    std::vector<Action> policy;
};

// Relative value iteration; stops when span(T h - h) < tol. Greedy ties go
// to the lowest option index, i.e. the lowest class, idle last.
RviResult relative_value_iteration(const TruncatedChain& chain, double tol = 1e-9, int max_iters = 1000000,
                                   std::size_t reference = 0, std::vector<double> initial_h = {});

// max over states of |min_a (g + P_a h) - h - eta|.
double bellman_residual(const TruncatedChain& chain, double eta, const std::vector<double>& h);

// Greedy deterministic policy for h, as a lookup table.
std::vector<Action> greedy_policy(const TruncatedChain& chain, const std::vector<double>& h);

struct PoissonSolution {
    double eta = 0.0;
    Eigen::VectorXd h;  // h(xstar) = 0
    Eigen::VectorXd d;  // stationary distribution
};

// Dense solve of g - eta e + P h - h = 0 with h(xstar) = 0.
PoissonSolution solve_poisson(const Eigen::MatrixXd& P, const Eigen::VectorXd& g, Eigen::Index xstar = 0);

// max_x |g - eta + P h - h|.
double poisson_residual(const Eigen::MatrixXd& P, const Eigen::VectorXd& g, double eta, const Eigen::VectorXd& h);

struct DiscountedValue {
    Eigen::VectorXd V;  // regenerative discounted relative value, V(xstar) = 0
    double r = 0.0;     // present discounted value at xstar, scaled by (1 - gamma)
};

DiscountedValue discounted_value(const Eigen::MatrixXd& P, const Eigen::VectorXd& g, double gamma,
                                 Eigen::Index xstar = 0);

}  // namespace qnc
