#pragma once

#include <deque>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "qnc/mdp.hpp"

namespace qnc {

struct StateHash {
    std::size_t operator()(const State& x) const noexcept {
        std::size_t h = 0xcbf29ce484222325ULL;
        for (int v : x) h = (h ^ static_cast<std::size_t>(static_cast<unsigned>(v))) * 0x100000001b3ULL;
        return h;
    }
};

// Per station FIFO of job classes in order of arrival to the station.
using FifoState = std::vector<std::deque<int>>;

// Randomized stationary policy: per decision group a distribution over the
// group's options, stored flat with UniformizedMdp::group_offset.
class Policy {
public:
    virtual ~Policy() = default;
    virtual std::string name() const = 0;
    virtual void probabilities(const State& x, std::vector<double>& out) const = 0;
    // Policies that look at arrival order (FCFS) override these two.
    virtual bool needs_fifo() const { return false; }
    virtual void fifo_probabilities(const State& x, const FifoState& fifo, std::vector<double>& out) const;
    // Expensive policies get their probabilities memoised per episode.
    virtual bool expensive() const { return false; }
};

// Probability of the joint action a, given flat per-group probabilities.
double action_probability(const UniformizedMdp& mdp, const std::vector<double>& probs, const Action& a);

class ProportionallyRandomizedPolicy : public Policy {
public:
    explicit ProportionallyRandomizedPolicy(const UniformizedMdp& mdp) : mdp_(&mdp) {}
    std::string name() const override { return "PR"; }
    void probabilities(const State& x, std::vector<double>& out) const override;

private:
    const UniformizedMdp* mdp_;
};

// Static priority ranking per group; serves the best ranked nonempty class.
class PriorityPolicy : public Policy {
public:
    // rank[g] lists option indices from most to least preferred.
    PriorityPolicy(const UniformizedMdp& mdp, std::vector<std::vector<int>> rank, std::string name);
    std::string name() const override { return name_; }
    void probabilities(const State& x, std::vector<double>& out) const override;

private:
    const UniformizedMdp* mdp_;
    std::vector<std::vector<int>> rank_;
    std::string name_;
};

class FcfsPolicy : public Policy {
public:
    explicit FcfsPolicy(const UniformizedMdp& mdp) : mdp_(&mdp) {}
    std::string name() const override { return "FCFS"; }
    void probabilities(const State& x, std::vector<double>& out) const override;
    bool needs_fifo() const override { return true; }
    void fifo_probabilities(const State& x, const FifoState& fifo, std::vector<double>& out) const override;

private:
    const UniformizedMdp* mdp_;
};

// N-model: server 2 gives priority to class 1 iff x1 > T.
class ThresholdPolicy : public Policy {
public:
    ThresholdPolicy(const UniformizedMdp& mdp, int threshold);
    std::string name() const override { return "threshold:" + std::to_string(T_); }
    void probabilities(const State& x, std::vector<double>& out) const override;

private:
    const UniformizedMdp* mdp_;
    int T_;
};

// Deterministic lookup table (e.g. a dynamic-programming policy). States
// outside the table are clamped to its caps; infeasible entries fall back to
// the lowest-index nonempty class.
class TablePolicy : public Policy {
public:
    TablePolicy(const UniformizedMdp& mdp, int cap, std::vector<Action> actions, std::string name = "table");
    std::string name() const override { return name_; }
    void probabilities(const State& x, std::vector<double>& out) const override;
    int cap() const { return cap_; }
    const std::vector<Action>& actions() const { return actions_; }
    void save(const std::string& path) const;
    static std::unique_ptr<TablePolicy> load(const UniformizedMdp& mdp, const std::string& path);

private:
    const UniformizedMdp* mdp_;
    int cap_;
    std::vector<Action> actions_;
    std::string name_;
};

class UniformPolicy : public Policy {
public:
    // Uniform over feasible options; with non_idling, idle only at empty stations.
    UniformPolicy(const UniformizedMdp& mdp, bool non_idling = true) : mdp_(&mdp), non_idling_(non_idling) {}
    std::string name() const override { return "uniform"; }
    void probabilities(const State& x, std::vector<double>& out) const override;

private:
    const UniformizedMdp* mdp_;
    bool non_idling_;
};

enum class BaselineKind { LBFS, FCFS, Threshold };

std::unique_ptr<Policy> pr_policy(const UniformizedMdp& mdp);
std::unique_ptr<Policy> baseline_policy(BaselineKind kind, const UniformizedMdp& mdp, int threshold = 11);

}  // namespace qnc
