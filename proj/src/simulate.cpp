#include "qnc/simulate.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "qnc/errors.hpp"
#include "qnc/random.hpp"

namespace qnc {

std::int64_t EpisodeBatch::completed_cycles() const {
    std::int64_t n = 0;
    for (auto t : regenerations)
        if (t > 0) ++n;
    return n;
}

std::int64_t EpisodeBatch::last_regeneration() const {
    if (regenerations.empty() || regenerations.back() == 0) return -1;
    return regenerations.back();
}

double normal_quantile_975() {
    static const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 0.975);
    return z;
}

double student_t_quantile_975(double dof) {
    return boost::math::quantile(boost::math::students_t_distribution<double>(dof), 0.975);
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    int next = 0;
    std::exception_ptr err;
    auto worker = [&] {
        for (;;) {
            int i;
            {
                std::lock_guard<std::mutex> lk(mu);
                if (next >= n || err) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int k = 0; k < std::min(threads, n); ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

namespace {

// Draws one option per group from flat probabilities.
void sample_action(const UniformizedMdp& mdp, const std::vector<double>& probs, Rng& rng, Action& a) {
    a.resize(mdp.num_groups());
    for (int g = 0; g < mdp.num_groups(); ++g) {
        const int base = mdp.group_offset(g), n = mdp.num_options(g);
        double u = rng.uniform();
        int pick = -1;
        for (int o = 0; o < n; ++o) {
            double p = probs[base + o];
            if (p <= 0) continue;
            pick = o;
            if (u < p) break;
            u -= p;
        }
        if (pick < 0) throw DataCorruption("policy put no mass on any option");
        a[g] = pick;
    }
}

// Supplies policy probabilities, with per-episode memoisation for
// expensive policies and arrival-order tracking for FCFS.
class Decider {
public:
    Decider(const UniformizedMdp& mdp, const Policy& policy, const State& start)
        : mdp_(mdp), policy_(policy), memo_(policy.expensive()) {
        if (policy.needs_fifo()) {
            const NetworkSpec* net = mdp.network();
            if (!net) throw InvalidParameter("arrival-order tracking needs a network model");
            fifo_.resize(mdp.num_groups());
            station_ = net->station_of_class;
            for (int j = 0; j < mdp.dim(); ++j)
                for (int k = 0; k < start[j]; ++k) fifo_[station_[j]].push_back(j);
        }
    }

    const std::vector<double>& probs(const State& x) {
        if (!fifo_.empty()) {
            policy_.fifo_probabilities(x, fifo_, buf_);
            return buf_;
        }
        if (!memo_) {
            policy_.probabilities(x, buf_);
            return buf_;
        }
        auto it = cache_.find(x);
        if (it != cache_.end()) return it->second;
        std::vector<double> p;
        policy_.probabilities(x, p);
        return cache_.emplace(x, std::move(p)).first->second;
    }

    void observe(const Event& e) {
        if (fifo_.empty() || e.prob == 0.0) return;
        if (e.from >= 0) {
            auto& q = fifo_[station_[e.from]];
            for (auto it = q.begin(); it != q.end(); ++it)
                if (*it == e.from) {
                    q.erase(it);
                    break;
                }
        }
        if (e.to >= 0) fifo_[station_[e.to]].push_back(e.to);
    }

private:
    const UniformizedMdp& mdp_;
    const Policy& policy_;
    bool memo_;
    std::vector<double> buf_;
    std::unordered_map<State, std::vector<double>, StateHash> cache_;
    FifoState fifo_;
    std::vector<int> station_;
};

State resolve_start(const UniformizedMdp& mdp, const State& s) {
    State x = s.empty() ? State(mdp.dim(), 0) : s;
    if (!mdp.is_valid_state(x)) throw InvalidParameter("invalid start state");
    return x;
}

}  // namespace

EpisodeBatch simulate(const UniformizedMdp& mdp, const Policy& policy, const State& start, const StopRule& stop,
                      std::uint64_t seed, const SimulateOptions& opts) {
    EpisodeBatch b;
    b.seed = seed;
    b.stop = stop.kind;
    b.regen_state = resolve_start(mdp, stop.regen_state);
    State x = resolve_start(mdp, start);
    Decider decide(mdp, policy, x);
    Rng rng(seed);
    b.has_successors = opts.record_successors;
    if (opts.record_successors) b.succ_offset.push_back(0);

    std::int64_t t = 0, cycles = 0, arrivals = 0;
    if (x == b.regen_state) b.regenerations.push_back(0);
    std::vector<Event> ev;
    Action a;
    for (;;) {
        if (stop.kind == StopRule::Kind::Steps && t >= stop.count) break;
        if (stop.kind == StopRule::Kind::Regenerations && cycles >= stop.count) break;
        if (stop.kind == StopRule::Kind::Arrivals && arrivals >= stop.count) break;
        if (t >= stop.step_cap)
            throw NonRegenerativeEpisode("no " + std::to_string(stop.count) + "th stop event within " +
                                         std::to_string(stop.step_cap) + " steps");
        const auto& p = decide.probs(x);
        sample_action(mdp, p, rng, a);
        b.states.push_back(x);
        b.actions.push_back(a);
        b.costs.push_back(mdp.cost(x));
        b.behavior_prob.push_back(action_probability(mdp, p, a));
        if (opts.record_successors) {
            mdp.averaged_events(x, p, ev);
            b.succ_events.insert(b.succ_events.end(), ev.begin(), ev.end());
            b.succ_offset.push_back(static_cast<std::int64_t>(b.succ_events.size()));
        }
        Event e = mdp.step(x, a, rng.uniform());
        decide.observe(e);
        if (e.prob > 0 && e.from < 0) ++arrivals;
        ++t;
        if (x == b.regen_state) {
            b.regenerations.push_back(t);
            ++cycles;
        }
    }
    b.final_state = x;
    return b;
}

std::vector<EpisodeBatch> simulate_actors(const UniformizedMdp& mdp, const Policy& policy,
                                          const std::vector<State>& starts, const StopRule& stop,
                                          std::uint64_t master_seed, const SimulateOptions& opts, int threads) {
    std::vector<EpisodeBatch> out(starts.size());
    parallel_for(static_cast<int>(starts.size()), threads, [&](int q) {
        out[q] = simulate(mdp, policy, starts[q], stop, stream_seed(master_seed, static_cast<std::uint64_t>(q)), opts);
        out[q].actor = q;
    });
    return out;
}

PerformanceReport evaluate_longrun(const UniformizedMdp& mdp, const Policy& policy, EvalMode mode,
                                   const StopRule& stop, std::uint64_t seed, const State& start) {
    constexpr int kBatches = 50;
    PerformanceReport r;
    r.seed = seed;
    const State xstar = resolve_start(mdp, stop.regen_state);
    State x = resolve_start(mdp, start);
    Decider decide(mdp, policy, x);
    Rng rng(seed);

    const bool regen = stop.kind == StopRule::Kind::Regenerations;
    if (!regen && stop.count < kBatches) throw InvalidParameter("batch means needs at least 50 steps or arrivals");
    // Regenerative: per complete cycle (cost, length). Batch means: per batch.
    std::vector<double> Y, tau;
    double cyc_cost = 0.0, cyc_len = 0.0;
    bool in_cycle = (x == xstar);
    std::vector<double> bc(kBatches, 0.0), bs(kBatches, 0.0);
    const std::int64_t per_batch = regen ? 0 : stop.count / kBatches;

    std::int64_t t = 0, arrivals = 0, cycles = 0;
    Action a;
    bool have_action = false;
    for (;;) {
        if (regen && cycles >= stop.count) break;
        if (stop.kind == StopRule::Kind::Steps && t >= stop.count) break;
        if (stop.kind == StopRule::Kind::Arrivals && arrivals >= stop.count) break;
        if (regen && t >= stop.step_cap)
            throw NonRegenerativeEpisode("evaluation exceeded the step cap of " + std::to_string(stop.step_cap));
        if (mode == EvalMode::Version2 || !have_action) {
            sample_action(mdp, decide.probs(x), rng, a);
            have_action = true;
        }
        const double g = mdp.cost(x);
        if (regen) {
            cyc_cost += g;
            cyc_len += 1.0;
        } else {
            std::int64_t pos = stop.kind == StopRule::Kind::Steps ? t : arrivals;
            int k = static_cast<int>(std::min<std::int64_t>(pos / per_batch, kBatches - 1));
            bc[k] += g;
            bs[k] += 1.0;
        }
        Event e = mdp.step(x, a, rng.uniform());
        decide.observe(e);
        // Version 1 keeps the action through fictitious transitions.
        if (e.prob > 0) have_action = false;
        if (e.prob > 0 && e.from < 0) ++arrivals;
        ++t;
        if (regen && x == xstar) {
            if (in_cycle) {
                Y.push_back(cyc_cost);
                tau.push_back(cyc_len);
            }
            in_cycle = true;
            cyc_cost = cyc_len = 0.0;
            ++cycles;
        }
    }
    r.steps = t;
    r.arrivals = arrivals;

    auto ratio_ci = [](const std::vector<double>& c, const std::vector<double>& s, double q) {
        const double n = static_cast<double>(c.size());
        double sc = 0, ss = 0;
        for (std::size_t i = 0; i < c.size(); ++i) {
            sc += c[i];
            ss += s[i];
        }
        const double eta = sc / ss;
        double v = 0;
        for (std::size_t i = 0; i < c.size(); ++i) v += (c[i] - eta * s[i]) * (c[i] - eta * s[i]);
        v /= (n - 1);
        return std::pair<double, double>{eta, q * std::sqrt(v) / ((ss / n) * std::sqrt(n))};
    };
    if (regen) {
        r.method = "regenerative";
        r.cycles = static_cast<std::int64_t>(Y.size());
        if (Y.size() < 2) throw InsufficientRegeneration("regenerative CI needs at least two complete cycles");
        auto [eta, hw] = ratio_ci(Y, tau, normal_quantile_975());
        r.estimate = eta;
        r.half_width = hw;
    } else {
        r.method = "batch-means";
        r.cycles = kBatches;
        auto [eta, hw] = ratio_ci(bc, bs, student_t_quantile_975(kBatches - 1));
        r.estimate = eta;
        r.half_width = hw;
    }
    return r;
}

}  // namespace qnc
