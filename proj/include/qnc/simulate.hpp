#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qnc/mdp.hpp"
#include "qnc/policy.hpp"

namespace qnc {

struct StopRule {
    enum class Kind { Regenerations, Steps, Arrivals };
    Kind kind = Kind::Regenerations;
    std::int64_t count = 0;       // cycles, steps or external arrivals
    State regen_state;            // x*; empty means the zero state
    std::int64_t step_cap = 10'000'000;

    static StopRule regenerations(std::int64_t n, State xstar = {}) { return {Kind::Regenerations, n, std::move(xstar)}; }
    static StopRule steps(std::int64_t n, State xstar = {}) { return {Kind::Steps, n, std::move(xstar)}; }
    static StopRule arrivals(std::int64_t n, State xstar = {}) { return {Kind::Arrivals, n, std::move(xstar)}; }
};

// One actor's trajectory x(0..T-1) with actions and costs, plus the final
// state x(T). `regenerations` lists every t in [0,T] with x(t) = x*.
struct EpisodeBatch {
    std::vector<State> states;
    std::vector<Action> actions;
    std::vector<double> costs;
    std::vector<double> behavior_prob;     // pi(a(t) | x(t)) under the behaviour policy
    std::vector<std::int64_t> regenerations;
    State final_state;
    State regen_state;
    StopRule::Kind stop = StopRule::Kind::Regenerations;

    // Policy averaged successor events of every step (self-loop implicit).
    bool has_successors = false;
    std::vector<std::int64_t> succ_offset;  // size T+1
    std::vector<Event> succ_events;

    int actor = 0;
    std::uint64_t seed = 0;

    std::int64_t length() const { return static_cast<std::int64_t>(states.size()); }
    // Regeneration markers strictly after time 0.
    std::int64_t completed_cycles() const;
    // Last regeneration time, or -1 if none after time 0.
    std::int64_t last_regeneration() const;
    // x(t) for t in [0,T].
    const State& state_at(std::int64_t t) const { return t == length() ? final_state : states[t]; }
};

struct SimulateOptions {
    bool record_successors = true;
};

EpisodeBatch simulate(const UniformizedMdp& mdp, const Policy& policy, const State& start, const StopRule& stop,
                      std::uint64_t seed, const SimulateOptions& opts = {});

// Q actors with stream seeds derived from the master seed, run on `threads`
// workers; the result does not depend on the worker count.
std::vector<EpisodeBatch> simulate_actors(const UniformizedMdp& mdp, const Policy& policy,
                                          const std::vector<State>& starts, const StopRule& stop,
                                          std::uint64_t master_seed, const SimulateOptions& opts = {},
                                          int threads = 1);

enum class EvalMode { Version1, Version2 };

struct PerformanceReport {
    double estimate = 0.0;
    double half_width = 0.0;
    std::string method;  // "regenerative" or "batch-means"
    std::int64_t cycles = 0;
    std::int64_t steps = 0;
    std::int64_t arrivals = 0;
    std::uint64_t seed = 0;
    double lower() const { return estimate - half_width; }
    double upper() const { return estimate + half_width; }
};

// Regenerations stop: regenerative ratio CI over complete cycles.
// Steps/Arrivals stop: 50 batch means. Does not store the trajectory.
PerformanceReport evaluate_longrun(const UniformizedMdp& mdp, const Policy& policy, EvalMode mode,
                                   const StopRule& stop, std::uint64_t seed, const State& start = {});

// Two-sided 95% quantiles.
double normal_quantile_975();
double student_t_quantile_975(double dof);

// Runs fn(i) for i in [0,n) on up to `threads` workers.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace qnc
