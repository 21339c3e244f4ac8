#include "qnc/policy.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "qnc/errors.hpp"

namespace qnc {

void Policy::fifo_probabilities(const State& x, const FifoState&, std::vector<double>& out) const {
    probabilities(x, out);
}

double action_probability(const UniformizedMdp& mdp, const std::vector<double>& probs, const Action& a) {
    double p = 1.0;
    for (int g = 0; g < mdp.num_groups(); ++g) p *= probs[mdp.group_offset(g) + a[g]];
    return p;
}

// Puts all mass of group g on option o.
static void put(const UniformizedMdp& mdp, std::vector<double>& out, int g, int o) {
    out[mdp.group_offset(g) + o] = 1.0;
}

static int idle_option(const UniformizedMdp& mdp, int g) {
    for (int o = 0; o < mdp.num_options(g); ++o)
        if (mdp.option_class(g, o) == kIdle) return o;
    return -1;
}

void ProportionallyRandomizedPolicy::probabilities(const State& x, std::vector<double>& out) const {
    const auto& m = *mdp_;
    out.assign(m.total_options(), 0.0);
    for (int g = 0; g < m.num_groups(); ++g) {
        double total = 0.0;
        for (int o = 0; o < m.num_options(g); ++o) {
            int j = m.option_class(g, o);
            if (j != kIdle) total += x[j];
        }
        int base = m.group_offset(g);
        if (total == 0.0) {
            int idle = idle_option(m, g);
            if (idle >= 0) {
                out[base + idle] = 1.0;
            } else {
                for (int o = 0; o < m.num_options(g); ++o) out[base + o] = 1.0 / m.num_options(g);
            }
            continue;
        }
        for (int o = 0; o < m.num_options(g); ++o) {
            int j = m.option_class(g, o);
            if (j != kIdle) out[base + o] = x[j] / total;
        }
    }
}

PriorityPolicy::PriorityPolicy(const UniformizedMdp& mdp, std::vector<std::vector<int>> rank, std::string name)
    : mdp_(&mdp), rank_(std::move(rank)), name_(std::move(name)) {
    if (static_cast<int>(rank_.size()) != mdp.num_groups())
        throw InvalidParameter("priority ranking needs one list per decision group");
}

void PriorityPolicy::probabilities(const State& x, std::vector<double>& out) const {
    const auto& m = *mdp_;
    out.assign(m.total_options(), 0.0);
    for (int g = 0; g < m.num_groups(); ++g) {
        int pick = -1;
        for (int o : rank_[g]) {
            int j = m.option_class(g, o);
            if (j != kIdle && x[j] > 0) {
                pick = o;
                break;
            }
        }
        if (pick < 0) pick = idle_option(m, g);
        if (pick < 0) pick = rank_[g].front();
        put(m, out, g, pick);
    }
}

void FcfsPolicy::probabilities(const State&, std::vector<double>&) const {
    throw InvalidParameter("FCFS needs the arrival-order extension of the simulator");
}

void FcfsPolicy::fifo_probabilities(const State& x, const FifoState& fifo, std::vector<double>& out) const {
    const auto& m = *mdp_;
    out.assign(m.total_options(), 0.0);
    for (int g = 0; g < m.num_groups(); ++g) {
        int pick = idle_option(m, g);
        if (!fifo[g].empty()) {
            int j = fifo[g].front();
            for (int o = 0; o < m.num_options(g); ++o)
                if (m.option_class(g, o) == j) pick = o;
            if (x[j] <= 0) throw DataCorruption("FIFO tags out of sync with the state");
        }
        put(m, out, g, pick);
    }
}

ThresholdPolicy::ThresholdPolicy(const UniformizedMdp& mdp, int threshold) : mdp_(&mdp), T_(threshold) {
    if (mdp.kind() != UniformizedMdp::Kind::NModel) throw InvalidParameter("threshold policy is defined for the N-model only");
}

void ThresholdPolicy::probabilities(const State& x, std::vector<double>& out) const {
    out.assign(2, 0.0);
    out[x[0] > T_ ? 0 : 1] = 1.0;
}

TablePolicy::TablePolicy(const UniformizedMdp& mdp, int cap, std::vector<Action> actions, std::string name)
    : mdp_(&mdp), cap_(cap), actions_(std::move(actions)), name_(std::move(name)) {
    std::size_t n = 1;
    for (int j = 0; j < mdp.dim(); ++j) n *= static_cast<std::size_t>(cap + 1);
    if (actions_.size() != n) throw InvalidParameter("policy table size does not match cap");
}

void TablePolicy::probabilities(const State& x, std::vector<double>& out) const {
    const auto& m = *mdp_;
    std::size_t idx = 0, stride = 1;
    for (int j = 0; j < m.dim(); ++j) {
        idx += stride * static_cast<std::size_t>(std::min(x[j], cap_));
        stride *= static_cast<std::size_t>(cap_ + 1);
    }
    const Action& a = actions_[idx];
    out.assign(m.total_options(), 0.0);
    for (int g = 0; g < m.num_groups(); ++g) {
        int o = a[g];
        if (!m.option_feasible(x, g, o)) {
            o = idle_option(m, g);
            for (int k = 0; k < m.num_options(g); ++k) {
                int j = m.option_class(g, k);
                if (j != kIdle && x[j] > 0) {
                    o = k;
                    break;
                }
            }
        }
        put(m, out, g, o);
    }
}

void TablePolicy::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    f << "qnc-policy-table 1\n" << "network " << mdp_->name() << "\n" << "cap " << cap_ << "\n"
      << "groups " << mdp_->num_groups() << "\n";
    for (const auto& a : actions_) {
        for (std::size_t g = 0; g < a.size(); ++g) f << (g ? " " : "") << a[g];
        f << "\n";
    }
}

std::unique_ptr<TablePolicy> TablePolicy::load(const UniformizedMdp& mdp, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open " + path);
    std::string magic, key, net;
    int version = 0, cap = 0, groups = 0;
    f >> magic >> version;
    if (magic != "qnc-policy-table" || version != 1) throw ConfigError(path + " is not a policy table");
    f >> key >> net >> key >> cap >> key >> groups;
    if (groups != mdp.num_groups()) throw ConfigError(path + ": group count does not match the network");
    std::size_t n = 1;
    for (int j = 0; j < mdp.dim(); ++j) n *= static_cast<std::size_t>(cap + 1);
    std::vector<Action> acts(n, Action(groups));
    for (auto& a : acts)
        for (auto& o : a)
            if (!(f >> o)) throw ConfigError(path + ": truncated policy table");
    return std::make_unique<TablePolicy>(mdp, cap, std::move(acts), "dp:" + path);
}

void UniformPolicy::probabilities(const State& x, std::vector<double>& out) const {
    const auto& m = *mdp_;
    out.assign(m.total_options(), 0.0);
    for (int g = 0; g < m.num_groups(); ++g) {
        int base = m.group_offset(g), n = 0;
        bool any_busy = false;
        for (int o = 0; o < m.num_options(g); ++o) {
            int j = m.option_class(g, o);
            if (j != kIdle && m.option_feasible(x, g, o)) any_busy = true;
        }
        for (int o = 0; o < m.num_options(g); ++o) {
            bool ok = m.option_feasible(x, g, o);
            if (non_idling_ && any_busy && m.option_class(g, o) == kIdle) ok = false;
            if (ok) {
                out[base + o] = 1.0;
                ++n;
            }
        }
        for (int o = 0; o < m.num_options(g); ++o) out[base + o] /= n;
    }
}

std::unique_ptr<Policy> pr_policy(const UniformizedMdp& mdp) {
    return std::make_unique<ProportionallyRandomizedPolicy>(mdp);
}

std::unique_ptr<Policy> baseline_policy(BaselineKind kind, const UniformizedMdp& mdp, int threshold) {
    switch (kind) {
        case BaselineKind::LBFS: {
            std::vector<std::vector<int>> rank(mdp.num_groups());
            for (int g = 0; g < mdp.num_groups(); ++g) {
                for (int o = 0; o < mdp.num_options(g); ++o)
                    if (mdp.option_class(g, o) != kIdle) rank[g].push_back(o);
                std::sort(rank[g].begin(), rank[g].end(),
                          [&](int a, int b) { return mdp.option_class(g, a) > mdp.option_class(g, b); });
            }
            return std::make_unique<PriorityPolicy>(mdp, rank, "LBFS");
        }
        case BaselineKind::FCFS:
            if (mdp.kind() != UniformizedMdp::Kind::Network) throw InvalidParameter("FCFS needs a network model");
            return std::make_unique<FcfsPolicy>(mdp);
        case BaselineKind::Threshold:
            return std::make_unique<ThresholdPolicy>(mdp, threshold);
    }
    return nullptr;
}

}  // namespace qnc
