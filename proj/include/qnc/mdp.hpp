#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "qnc/network.hpp"

namespace qnc {

using State = std::vector<int>;

// Per decision group, the index of the chosen option.
using Action = std::vector<int>;

// A real transition: one job leaves buffer `from` and one joins buffer `to`;
// -1 on either side stands for the outside world.
struct Event {
    int from = -1;
    int to = -1;
    double prob = 0.0;
};

struct Successor {
    State state;
    double prob = 0.0;
};

inline void apply_event(State& x, const Event& e) {
    if (e.from >= 0) --x[e.from];
    if (e.to >= 0) ++x[e.to];
}

enum class CostKind { TotalJobs, WeightedLinear, Quadratic };

struct CostSpec {
    CostKind kind = CostKind::TotalJobs;
    std::vector<double> weights;  // used by WeightedLinear and Quadratic (empty = all ones)
    double offset = 0.0;          // constant added to every state's cost

    double operator()(const State& x) const;
    static CostSpec parse(const std::string& s);
    std::string describe() const;
};

constexpr int kIdle = -1;

// Discrete-time MDP obtained by uniformizing a multiclass network or the
// N-model. Immutable after construction.
class UniformizedMdp {
public:
    enum class Kind { Network, NModel };

    static UniformizedMdp from_network(const NetworkSpec& spec, CostSpec cost = {});
    static UniformizedMdp nmodel(double rho);

    Kind kind() const { return kind_; }
    const std::string& name() const { return name_; }
    int dim() const { return dim_; }
    int num_groups() const { return static_cast<int>(options_.size()); }
    int num_options(int g) const { return static_cast<int>(options_[g].size()); }
    int group_offset(int g) const { return offsets_[g]; }
    int total_options() const { return offsets_.back(); }

    // Network: served class or kIdle. N-model: class given priority by server 2.
    int option_class(int g, int o) const { return options_[g][o]; }
    bool option_feasible(const State& x, int g, int o) const;

    double uniform_rate() const { return B_; }
    double cost(const State& x) const { return cost_(x); }
    const CostSpec& cost_spec() const { return cost_; }
    const NetworkSpec* network() const { return network_.get(); }
    double rho() const { return rho_; }

    // Action independent events (arrivals).
    template <class F>
    void visit_base(const State& x, F&& f) const;
    // Events produced by option o of group g at state x.
    template <class F>
    void visit_option(const State& x, int g, int o, F&& f) const;

    // Sum of real transition probabilities, i.e. beta(x,a)/B.
    double real_mass(const State& x, const Action& a) const;

    // Full successor list; the self-loop, if positive, is the last entry.
    std::vector<Successor> transitions(const State& x, const Action& a) const;

    // Events of the policy averaged kernel: sum_a pi(a|x) P(.|x,a) minus the
    // self-loop. `probs` is flat over groups (see group_offset).
    void averaged_events(const State& x, const std::vector<double>& probs,
                         std::vector<Event>& out) const;

    // Moves x to a successor drawn with the uniform variate u in [0,1) and
    // returns the event taken (prob == 0 for the fictitious self-loop).
    Event step(State& x, const Action& a, double u) const;

    bool is_valid_state(const State& x) const;

    // Copy whose buffers hold at most `cap` jobs: events that would exceed
    // the cap become part of the self-loop. Used for exact oracles.
    UniformizedMdp with_cap(int cap) const;
    int cap() const { return cap_; }

private:
    Kind kind_ = Kind::Network;
    std::string name_;
    int dim_ = 0;
    double B_ = 1.0;
    double rho_ = 0.0;
    int cap_ = -1;
    CostSpec cost_;
    std::shared_ptr<const NetworkSpec> network_;
    std::vector<std::vector<int>> options_;
    std::vector<int> offsets_;
    std::vector<Event> arrivals_;
    // Network: per class the completion events (scaled by 1/B).
    std::vector<std::vector<Event>> completions_;
    // N-model rates.
    double l1_ = 0, l2_ = 0, mu1_ = 0, mu2_ = 0, mu3_ = 0;
};

UniformizedMdp build_uniformized_mdp(const NetworkSpec& spec, const CostSpec& cost = {});
UniformizedMdp preset_nmodel(double rho);

// Resolves "crisscross:IL", "ext6:L=3", "nmodel:rho=0.95" or "file:<path>".
UniformizedMdp mdp_from_preset(const std::string& preset, const CostSpec& cost = {});

template <class F>
void UniformizedMdp::visit_base(const State& x, F&& f) const {
    for (const Event& e : arrivals_)
        if (cap_ < 0 || x[e.to] < cap_) f(e);
}

template <class F>
void UniformizedMdp::visit_option(const State& x, int g, int o, F&& f) const {
    if (kind_ == Kind::Network) {
        int j = options_[g][o];
        if (j == kIdle || x[j] == 0) return;
        for (const Event& e : completions_[j])
            if (cap_ < 0 || e.to < 0 || x[e.to] < cap_) f(e);
        return;
    }
    // N-model, single decision group (server 2). Option 0 gives class 1
    // priority at server 2, option 1 gives class 2 priority.
    const int x1 = x[0], x2 = x[1];
    double p1, p2;
    if (o == 0) {
        p1 = mu1_ * (x1 > 0) + mu2_ * (x1 > 1);
        p2 = mu3_ * (x2 > 0 && x1 <= 1);
    } else {
        p1 = mu1_ * (x1 > 0) + mu2_ * (x1 > 1 && x2 == 0);
        p2 = mu3_ * (x2 > 0);
    }
    if (p1 > 0) f(Event{0, -1, p1 / B_});
    if (p2 > 0) f(Event{1, -1, p2 / B_});
}

}  // namespace qnc
