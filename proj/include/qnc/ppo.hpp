#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qnc/estimators.hpp"
#include "qnc/mdp.hpp"
#include "qnc/neural.hpp"
#include "qnc/simulate.hpp"

namespace qnc {

enum class Algorithm { Base, AMP, Discounted };

Algorithm parse_algorithm(const std::string& s);
std::string to_string(Algorithm a);

struct TrainingConfig {
    Algorithm algorithm = Algorithm::AMP;
    int iterations = 50;                // I
    int actors = 10;                    // Q
    std::int64_t cycles = 1000;         // Base, AMP: regenerative cycles per actor
    std::int64_t horizon = 5000;        // Discounted: N steps with targets per actor
    std::int64_t tail = 0;              // Discounted: L, 0 picks (gamma lambda)^L < 1e-6
    double gamma = 0.998;
    double lambda = 0.99;
    bool gae = false;                   // Discounted: realized next state instead of P zeta
    bool regenerative = true;           // Discounted: stop sums at x*; false sums to the episode end around eta
    bool resume_starts = true;          // Discounted: start from states of the previous iteration
    double clip = 0.2, clip_floor = 0.01;
    double lr_policy = 5e-4, lr_floor = 0.05;
    double lr_value = 2.5e-4;
    double value_scale = 0.0;           // value output multiplier, 0 picks the RMS of the first targets
    AdamConfig adam;                    // betas, epsilon, minibatch, epochs
    NetConfig net;
    std::uint64_t seed = 1;
    int threads = 1;
    std::int64_t step_cap = 10'000'000;
    bool rollback = false;              // keep the last policy when an episode fails to regenerate

    void validate() const;
    std::int64_t tail_steps() const;
};

struct Schedule {
    double clip = 0.0;
    double lr_policy = 0.0;
    double lr_value = 0.0;
};

// alpha = (I - i)/I; clip = clip0 max(alpha, clip_floor); policy rate = lr0 max(alpha, lr_floor).
Schedule schedule(int i, const TrainingConfig& cfg);

// Q states drawn uniformly from all states visited in the batches.
std::vector<State> resume_initial_states(const std::vector<EpisodeBatch>& batches, int Q, std::uint64_t seed);

struct IterationRecord {
    int iteration = 0;
    double eta = 0.0;
    double half_width = 0.0;
    double r = 0.0;                 // Discounted only
    double surrogate_before = 0.0;
    double surrogate_after = 0.0;
    double value_loss = 0.0;
    double target_variance = 0.0;   // sample variance of the value targets
    double mean_summands = 0.0;     // average number of summands per target
    std::int64_t samples = 0;
    double wall_seconds = 0.0;
    bool aborted = false;
    std::string note;
};

// Regenerative ratio CI over all complete cycles; for step budgets, a t
// interval over the actor means.
std::pair<double, double> batch_ci(const std::vector<EpisodeBatch>& batches);

class Trainer {
public:
    Trainer(const UniformizedMdp& mdp, TrainingConfig cfg, const PolicyNet& initial);

    // Runs one policy iteration.
    IterationRecord step();
    // Runs the remaining iterations; the callback sees every record.
    std::vector<IterationRecord> run(const std::function<void(const IterationRecord&, const Trainer&)>& cb = {});

    int iteration() const { return iter_; }
    bool done() const { return iter_ >= cfg_.iterations; }
    const TrainingConfig& config() const { return cfg_; }
    const PolicyNet& policy() const { return policy_; }
    const ValueNet& value() const { return value_; }
    std::shared_ptr<const PolicyNet> snapshot() const { return std::make_shared<const PolicyNet>(policy_); }

    // Text checkpoint of everything the next iteration depends on.
    void save(const std::string& path) const;
    void load(const std::string& path);

private:
    UniformizedMdp mdp_;
    TrainingConfig cfg_;
    PolicyNet policy_;
    ValueNet value_;
    bool have_value_ = false;  // false: zeta is identically zero
    std::vector<State> starts_;
    int iter_ = 0;
};

}  // namespace qnc
