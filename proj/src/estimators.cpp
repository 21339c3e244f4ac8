#include "qnc/estimators.hpp"

#include <boost/functional/hash.hpp>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "qnc/errors.hpp"

namespace qnc {

namespace {

constexpr std::int64_t kNever = std::numeric_limits<std::int64_t>::max();

class CachedValue {
public:
    explicit CachedValue(const ValueFn& f) : f_(f) {}
    double operator()(const State& x) {
        auto it = memo_.find(x);
        if (it != memo_.end()) return it->second;
        double v = f_(x);
        memo_.emplace(x, v);
        return v;
    }

private:
    const ValueFn& f_;
    std::unordered_map<State, double, boost::hash<State>> memo_;
};

State regen_state_of(const EpisodeBatch& b) {
    if (!b.regen_state.empty()) return b.regen_state;
    const State& any = b.states.empty() ? b.final_state : b.states.front();
    return State(any.size(), 0);
}

}  // namespace

void EstimatorConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidParameter("gamma must lie in (0,1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidParameter("lambda must lie in [0,1]");
    if (horizon.kind == Horizon::Kind::Truncated && horizon.T < 1)
        throw InvalidParameter("truncation needs at least one summand");
    if (horizon.kind == Horizon::Kind::FiniteEpisode && horizon.N < 1)
        throw InvalidParameter("finite episode needs N >= 1");
    if (kind == TargetKind::Jesf && horizon.kind != Horizon::Kind::FiniteEpisode)
        throw InvalidParameter("Jesf targets need a finite episode");
}

std::int64_t tail_length(double gamma, double lambda, double tol) {
    double q = gamma * lambda;
    if (!(q >= 0.0 && q < 1.0)) throw InvalidParameter("tail length needs gamma * lambda < 1");
    if (q == 0.0) return 1;
    auto L = static_cast<std::int64_t>(std::ceil(std::log(tol) / std::log(q)));
    while (std::pow(q, static_cast<double>(L)) >= tol) ++L;
    return std::max<std::int64_t>(L, 1);
}

double estimate_average_cost(const std::vector<EpisodeBatch>& batches) {
    double total = 0.0;
    std::int64_t steps = 0;
    for (const auto& b : batches) {
        std::int64_t end = b.length();
        if (b.stop == StopRule::Kind::Regenerations) end = std::max<std::int64_t>(b.last_regeneration(), 0);
        for (std::int64_t t = 0; t < end; ++t) total += b.costs[t];
        steps += end;
    }
    if (steps == 0) throw InsufficientRegeneration("no complete cycle to average over");
    return total / static_cast<double>(steps);
}

double present_discounted_value(const std::vector<EpisodeBatch>& batches, double gamma, std::int64_t L) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidParameter("gamma must lie in (0,1)");
    if (L < 0) throw InvalidParameter("negative tail length");
    double sum = 0.0;
    std::int64_t visits = 0;
    for (const auto& b : batches) {
        for (std::int64_t s : b.regenerations) {
            if (s + L > b.length() - 1) break;
            double acc = 0.0, w = 1.0;
            for (std::int64_t k = 0; k <= L; ++k, w *= gamma) acc += w * b.costs[s + k];
            sum += acc;
            ++visits;
        }
    }
    if (visits == 0) throw InsufficientRegeneration("no visit to x* with a full tail");
    return (1.0 - gamma) * sum / static_cast<double>(visits);
}

TargetSet compute_targets(const EpisodeBatch& batch, const ValueFn& zeta, double scalar, const EstimatorConfig& cfg) {
    cfg.validate();
    const bool expected = cfg.kind == TargetKind::AMP || cfg.kind == TargetKind::Jesf;
    if (expected && !batch.has_successors) throw ModelRequired("targets need the successor events of every step");
    const bool stop_at_regen = cfg.kind != TargetKind::Jesf;
    const std::int64_t T = batch.length();

    // zeta along the path, shifted so that zeta(x*) = 0 where the estimator needs it.
    std::vector<double> z(T + 1, 0.0), ez(T, 0.0);
    if (cfg.kind != TargetKind::Standard) {
        CachedValue f(zeta);
        const double c = cfg.kind == TargetKind::Jesf ? 0.0 : f(regen_state_of(batch));
        for (std::int64_t t = 0; t <= T; ++t) z[t] = f(batch.state_at(t)) - c;
        if (expected) {
            State y;
            for (std::int64_t t = 0; t < T; ++t) {
                double mass = 0.0, acc = 0.0;
                for (auto i = batch.succ_offset[t]; i < batch.succ_offset[t + 1]; ++i) {
                    const Event& e = batch.succ_events[i];
                    y = batch.states[t];
                    apply_event(y, e);
                    acc += e.prob * (f(y) - c);
                    mass += e.prob;
                }
                ez[t] = acc + (1.0 - mass) * z[t];
            }
        } else {
            for (std::int64_t t = 0; t < T; ++t) ez[t] = z[t + 1];
        }
    }

    std::vector<double> delta(T);
    for (std::int64_t t = 0; t < T; ++t) delta[t] = batch.costs[t] - scalar + cfg.gamma * ez[t] - z[t];

    // sigma_k: first regeneration strictly after k.
    std::vector<std::int64_t> next(T + 1, kNever);
    for (std::int64_t k = 0, j = 0, nr = static_cast<std::int64_t>(batch.regenerations.size()); k <= T; ++k) {
        while (j < nr && batch.regenerations[j] <= k) ++j;
        if (j < nr) next[k] = batch.regenerations[j];
    }

    const double q = cfg.gamma * cfg.lambda;
    std::int64_t kmax = T;  // targets for k < kmax
    if (cfg.horizon.kind == Horizon::Kind::FiniteEpisode) kmax = std::min(T, cfg.horizon.N);

    TargetSet out;
    out.scalar = scalar;
    auto upper = [&](std::int64_t k) {
        std::int64_t u = stop_at_regen ? next[k] : kNever;
        if (cfg.horizon.kind == Horizon::Kind::Truncated) u = std::min(u, k + cfg.horizon.T);
        return u;
    };

    if (cfg.horizon.kind == Horizon::Kind::Truncated) {
        for (std::int64_t k = 0; k < kmax; ++k) {
            std::int64_t u = upper(k);
            if (u > T) continue;  // window not fully observed
            double s = 0.0, w = 1.0;
            for (std::int64_t t = k; t < u; ++t, w *= q) s += w * delta[t];
            out.steps.push_back(k);
            out.values.push_back(z[k] + s);
            out.summands.push_back(u - k);
        }
        return out;
    }

    // Backward recursion that restarts at every regeneration.
    std::vector<double> S(T + 1, 0.0);
    std::vector<std::int64_t> n(T + 1, 0);
    for (std::int64_t k = T - 1; k >= 0; --k) {
        bool cut = stop_at_regen && next[k] == k + 1;
        S[k] = delta[k] + (cut ? 0.0 : q * S[k + 1]);
        n[k] = 1 + (cut ? 0 : n[k + 1]);
    }
    const bool full_cycle = cfg.horizon.kind == Horizon::Kind::FullCycle;
    for (std::int64_t k = 0; k < kmax; ++k) {
        if (full_cycle && next[k] > T) break;  // incomplete final cycle
        out.steps.push_back(k);
        out.values.push_back(z[k] + S[k]);
        out.summands.push_back(n[k]);
    }
    return out;
}

TargetSet regenerative_targets(const EpisodeBatch& batch, double eta) {
    EstimatorConfig cfg;
    cfg.kind = TargetKind::Standard;
    return compute_targets(batch, ValueFn{}, eta, cfg);
}

TargetSet amp_targets(const EpisodeBatch& batch, const ValueFn& zeta, double eta) {
    EstimatorConfig cfg;
    cfg.kind = TargetKind::AMP;
    return compute_targets(batch, zeta, eta, cfg);
}

TargetSet discounted_amp_targets(const EpisodeBatch& batch, const ValueFn& zeta, double gamma, double lambda,
                                 double r, Horizon horizon) {
    return compute_targets(batch, zeta, r, {TargetKind::AMP, gamma, lambda, horizon});
}

TargetSet gae_targets(const EpisodeBatch& batch, const ValueFn& zeta, double gamma, double lambda, double r,
                      Horizon horizon) {
    return compute_targets(batch, zeta, r, {TargetKind::GAE, gamma, lambda, horizon});
}

TargetSet jesf_targets(const EpisodeBatch& batch, const ValueFn& zeta, double gamma, double lambda, double eta,
                       std::int64_t N) {
    return compute_targets(batch, zeta, eta, {TargetKind::Jesf, gamma, lambda, Horizon::finite_episode(N)});
}

std::vector<double> advantage_estimates(const UniformizedMdp& mdp, const ValueFn& f, double scalar, double gamma,
                                        const EpisodeBatch& batch, const std::vector<std::int64_t>& steps) {
    CachedValue v(f);
    std::vector<double> out;
    out.reserve(steps.size());
    for (std::int64_t k : steps) {
        const State& x = batch.states[k];
        double pf = 0.0;
        for (const auto& s : mdp.transitions(x, batch.actions[k])) pf += s.prob * v(s.state);
        out.push_back(batch.costs[k] - scalar + gamma * pf - v(x));
    }
    return out;
}

}  // namespace qnc
