#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "qnc/mdp.hpp"
#include "qnc/policy.hpp"
#include "qnc/simulate.hpp"

namespace qnc {

// Value approximation zeta (or f_psi) evaluated on job-count states.
using ValueFn = std::function<double(const State&)>;

enum class TargetKind { Standard, AMP, GAE, Jesf };

struct Horizon {
    enum class Kind { FullCycle, Truncated, FiniteEpisode };
    Kind kind = Kind::FullCycle;
    std::int64_t T = 0;  // Truncated: at most T summands per target
    std::int64_t N = 0;  // FiniteEpisode: targets for the first N steps

    static Horizon full_cycle() { return {}; }
    static Horizon truncated(std::int64_t T) { return {Kind::Truncated, T, 0}; }
    static Horizon finite_episode(std::int64_t N) { return {Kind::FiniteEpisode, 0, N}; }
};

struct EstimatorConfig {
    TargetKind kind = TargetKind::AMP;
    double gamma = 1.0;
    double lambda = 1.0;
    Horizon horizon;
    void validate() const;
};

// Per-step targets for the steps k listed in `steps`.
struct TargetSet {
    std::vector<std::int64_t> steps;
    std::vector<double> values;
    std::vector<std::int64_t> summands;  // terms in each target's sum
    double scalar = 0.0;                 // eta hat or r hat used
    std::size_t size() const { return values.size(); }
};

// Pooled cost per step over complete cycles (regenerative batches) or over
// whole episodes (step or arrival budgets).
double estimate_average_cost(const std::vector<EpisodeBatch>& batches);

// (1 - gamma) times the average over visits to x* of sum_{k=0}^{L} gamma^k g(x(sigma + k)).
// Visits without L tail steps are skipped.
double present_discounted_value(const std::vector<EpisodeBatch>& batches, double gamma, std::int64_t L);

// Smallest L with (gamma lambda)^L < tol, at least 1.
std::int64_t tail_length(double gamma, double lambda, double tol = 1e-6);

// The general recursion:
//   target_k = zeta(x_k) + sum_t (gamma lambda)^{t-k} (g(x_t) - scalar + gamma E zeta - zeta(x_t))
// with E zeta the policy-averaged expectation (AMP, Jesf) or the realized
// zeta(x_{t+1}) (GAE). The sum stops at the next visit to x* except for
// Jesf, and at the horizon. zeta is shifted so that zeta(x*) = 0 except for Jesf.
TargetSet compute_targets(const EpisodeBatch& batch, const ValueFn& zeta, double scalar, const EstimatorConfig& cfg);

// Standard regenerative estimate: sum_{t=k}^{sigma_k - 1} (g - eta).
TargetSet regenerative_targets(const EpisodeBatch& batch, double eta);
TargetSet amp_targets(const EpisodeBatch& batch, const ValueFn& zeta, double eta);
TargetSet discounted_amp_targets(const EpisodeBatch& batch, const ValueFn& zeta, double gamma, double lambda,
                                 double r, Horizon horizon = {});
TargetSet gae_targets(const EpisodeBatch& batch, const ValueFn& zeta, double gamma, double lambda, double r,
                      Horizon horizon = {});
TargetSet jesf_targets(const EpisodeBatch& batch, const ValueFn& zeta, double gamma, double lambda, double eta,
                       std::int64_t N);

// A(x_k, a_k) = g(x_k) - scalar + gamma sum_y P(y | x_k, a_k) f(y) - f(x_k) for the listed steps.
std::vector<double> advantage_estimates(const UniformizedMdp& mdp, const ValueFn& f, double scalar, double gamma,
                                        const EpisodeBatch& batch, const std::vector<std::int64_t>& steps);

}  // namespace qnc
