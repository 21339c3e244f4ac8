#include "qnc/ppo.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <tuple>

#include "qnc/errors.hpp"
#include "qnc/random.hpp"

namespace qnc {

Algorithm parse_algorithm(const std::string& s) {
    if (s == "base") return Algorithm::Base;
    if (s == "amp") return Algorithm::AMP;
    if (s == "disc") return Algorithm::Discounted;
    throw ConfigError("unknown algorithm '" + s + "' (base, amp, disc)");
}

std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::Base: return "base";
        case Algorithm::AMP: return "amp";
        case Algorithm::Discounted: return "disc";
    }
    return "?";
}

void TrainingConfig::validate() const {
    if (iterations < 1) throw InvalidParameter("iterations must be positive");
    if (actors < 1) throw InvalidParameter("actors must be positive");
    if (algorithm == Algorithm::Discounted) {
        if (horizon < 1) throw InvalidParameter("horizon must be positive");
        if (!(gamma > 0 && gamma < 1)) throw InvalidParameter("gamma must lie in (0,1)");
        if (!(lambda >= 0 && lambda <= 1)) throw InvalidParameter("lambda must lie in [0,1]");
    } else if (cycles < 1) {
        throw InvalidParameter("cycles must be positive");
    }
    if (!(clip > 0 && clip < 1)) throw InvalidParameter("clip must lie in (0,1)");
    if (!(value_scale >= 0) || !std::isfinite(value_scale)) throw InvalidParameter("value_scale must be nonnegative");
    adam.validate();
}

std::int64_t TrainingConfig::tail_steps() const { return tail > 0 ? tail : tail_length(gamma, lambda); }

Schedule schedule(int i, const TrainingConfig& cfg) {
    if (i < 0 || i >= cfg.iterations) throw InvalidParameter("iteration outside the schedule");
    const double alpha = static_cast<double>(cfg.iterations - i) / cfg.iterations;
    return {cfg.clip * std::max(alpha, cfg.clip_floor), cfg.lr_policy * std::max(alpha, cfg.lr_floor), cfg.lr_value};
}

std::vector<State> resume_initial_states(const std::vector<EpisodeBatch>& batches, int Q, std::uint64_t seed) {
    std::int64_t total = 0;
    for (const auto& b : batches) total += b.length();
    if (total == 0) throw InvalidParameter("no visited states to resume from");
    Rng rng(seed);
    std::vector<State> out;
    for (int q = 0; q < Q; ++q) {
        auto k = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(total)));
        for (const auto& b : batches) {
            if (k < b.length()) {
                out.push_back(b.states[k]);
                break;
            }
            k -= b.length();
        }
    }
    return out;
}

std::pair<double, double> batch_ci(const std::vector<EpisodeBatch>& batches) {
    std::vector<double> c, s;
    bool regen = !batches.empty() && batches.front().stop == StopRule::Kind::Regenerations;
    for (const auto& b : batches) {
        if (regen) {
            const auto& R = b.regenerations;
            for (std::size_t i = 1; i < R.size(); ++i) {
                double y = 0.0;
                for (auto t = R[i - 1]; t < R[i]; ++t) y += b.costs[t];
                c.push_back(y);
                s.push_back(static_cast<double>(R[i] - R[i - 1]));
            }
        } else {
            c.push_back(std::accumulate(b.costs.begin(), b.costs.end(), 0.0));
            s.push_back(static_cast<double>(b.length()));
        }
    }
    const double n = static_cast<double>(c.size());
    const double sc = std::accumulate(c.begin(), c.end(), 0.0), ss = std::accumulate(s.begin(), s.end(), 0.0);
    if (ss == 0.0) throw InsufficientRegeneration("no data for an interval");
    const double eta = sc / ss;
    if (c.size() < 2) return {eta, std::numeric_limits<double>::infinity()};
    double v = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) v += (c[i] - eta * s[i]) * (c[i] - eta * s[i]);
    v /= n - 1;
    const double q = regen ? normal_quantile_975() : student_t_quantile_975(n - 1);
    return {eta, q * std::sqrt(v / n) / (ss / n)};
}

Trainer::Trainer(const UniformizedMdp& mdp, TrainingConfig cfg, const PolicyNet& initial)
    : mdp_(mdp), cfg_(std::move(cfg)), policy_(initial), value_(mdp.dim(), cfg_.net) {
    cfg_.validate();
    value_.mlp().xavier_init(stream_seed(cfg_.seed, 0xa1));
    if (cfg_.value_scale > 0) value_.set_output_scale(cfg_.value_scale);
    starts_.assign(cfg_.actors, State(mdp_.dim(), 0));
}

IterationRecord Trainer::step() {
    if (done()) throw InvalidParameter("training already finished");
    const auto t0 = std::chrono::steady_clock::now();
    const int i = iter_;
    const Schedule sch = schedule(i, cfg_);
    const bool disc = cfg_.algorithm == Algorithm::Discounted;
    const std::uint64_t base_seed = stream_seed(cfg_.seed, static_cast<std::uint64_t>(i) + 1);
    IterationRecord rec;
    rec.iteration = i;

    // 1. Simulate Q actors under a frozen copy of the current policy.
    NeuralPolicy behaviour(snapshot());
    const std::int64_t L = disc ? cfg_.tail_steps() : 0;
    StopRule stop = disc ? StopRule::steps(cfg_.horizon + L) : StopRule::regenerations(cfg_.cycles);
    stop.step_cap = cfg_.step_cap;
    SimulateOptions opts{cfg_.algorithm != Algorithm::Base && !(disc && cfg_.gae && cfg_.regenerative)};
    std::vector<State> starts = disc ? starts_ : std::vector<State>(cfg_.actors, State(mdp_.dim(), 0));
    std::vector<EpisodeBatch> batches;
    double eta = 0.0, scalar = 0.0;
    // 2. Performance estimates.
    try {
        batches = simulate_actors(mdp_, behaviour, starts, stop, stream_seed(base_seed, 1), opts, cfg_.threads);
        std::tie(rec.eta, rec.half_width) = batch_ci(batches);
        eta = disc ? rec.eta : estimate_average_cost(batches);
        scalar = disc && cfg_.regenerative ? present_discounted_value(batches, cfg_.gamma, L) : eta;
    } catch (const Error& e) {
        // The policy is kept when the episodes cannot be used.
        if (!cfg_.rollback || !(dynamic_cast<const NonRegenerativeEpisode*>(&e) ||
                                dynamic_cast<const InsufficientRegeneration*>(&e)))
            throw;
        rec.aborted = true;
        rec.note = e.what();
        ++iter_;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return rec;
    }
    rec.r = disc && cfg_.regenerative ? scalar : 0.0;

    // 3. Value targets with the previous value network as zeta.
    const ValueNet previous = value_;
    ValueFn zeta = [&](const State& x) { return have_value_ ? previous(x) : 0.0; };
    ValueData vdata;
    double summands = 0.0;
    std::vector<std::vector<std::int64_t>> steps(batches.size());
    for (std::size_t q = 0; q < batches.size(); ++q) {
        const auto& b = batches[q];
        TargetSet t;
        switch (cfg_.algorithm) {
            case Algorithm::Base: t = regenerative_targets(b, scalar); break;
            case Algorithm::AMP: t = amp_targets(b, zeta, scalar); break;
            case Algorithm::Discounted:
                if (!cfg_.regenerative)
                    t = jesf_targets(b, zeta, cfg_.gamma, cfg_.lambda, scalar, cfg_.horizon);
                else if (cfg_.gae)
                    t = gae_targets(b, zeta, cfg_.gamma, cfg_.lambda, scalar, Horizon::finite_episode(cfg_.horizon));
                else
                    t = discounted_amp_targets(b, zeta, cfg_.gamma, cfg_.lambda, scalar,
                                               Horizon::finite_episode(cfg_.horizon));
                break;
        }
        for (auto c : t.summands) summands += static_cast<double>(c);
        for (std::size_t k = 0; k < t.size(); ++k) {
            vdata.states.push_back(b.states[t.steps[k]]);
            vdata.targets.push_back(t.values[k]);
        }
        steps[q] = std::move(t.steps);
    }

    if (!vdata.targets.empty()) {
        const double n = static_cast<double>(vdata.size());
        const double mean = std::accumulate(vdata.targets.begin(), vdata.targets.end(), 0.0) / n;
        double ss = 0.0;
        for (double t : vdata.targets) ss += (t - mean) * (t - mean);
        rec.target_variance = n > 1 ? ss / (n - 1) : 0.0;
        rec.mean_summands = summands / n;
    }

    // 4. Fit the value network, warm started from the previous one.
    {
        if (!have_value_ && cfg_.value_scale == 0.0 && vdata.size() > 0) {
            double ms = 0.0;
            for (double t : vdata.targets) ms += t * t;
            value_.set_output_scale(std::max(1.0, std::sqrt(ms / static_cast<double>(vdata.size()))));
        }
        AdamConfig vcfg = cfg_.adam;
        vcfg.lr = sch.lr_value;
        AdamState st;
        Rng rng(stream_seed(base_seed, 2));
        MinibatchLoss loss = [&](const std::vector<std::size_t>& idx, Eigen::VectorXd& g) {
            return value_mse(value_, vdata, &g, idx);
        };
        adam_epochs(vdata.size(), loss, value_.mlp().params(), st, vcfg, rng);
        rec.value_loss = value_mse(value_, vdata);
        have_value_ = true;
    }

    // 5. Advantages with the fitted value network.
    PolicyData pdata;
    ValueFn f = [&](const State& x) { return value_(x); };
    const double gamma = disc ? cfg_.gamma : 1.0;
    for (std::size_t q = 0; q < batches.size(); ++q) {
        const auto& b = batches[q];
        auto A = advantage_estimates(mdp_, f, scalar, gamma, b, steps[q]);
        for (std::size_t k = 0; k < A.size(); ++k) {
            const auto s = steps[q][k];
            pdata.states.push_back(b.states[s]);
            pdata.actions.push_back(b.actions[s]);
            pdata.behavior_prob.push_back(b.behavior_prob[s]);
            pdata.advantages.push_back(A[k]);
        }
    }
    rec.samples = static_cast<std::int64_t>(pdata.size());

    // 6. Clipped surrogate minimization.
    {
        AdamConfig pcfg = cfg_.adam;
        pcfg.lr = sch.lr_policy;
        AdamState st;
        Rng rng(stream_seed(base_seed, 3));
        rec.surrogate_before = clipped_surrogate(policy_, pdata, sch.clip);
        MinibatchLoss loss = [&](const std::vector<std::size_t>& idx, Eigen::VectorXd& g) {
            return clipped_surrogate(policy_, pdata, sch.clip, &g, idx);
        };
        adam_epochs(pdata.size(), loss, policy_.mlp().params(), st, pcfg, rng);
        rec.surrogate_after = clipped_surrogate(policy_, pdata, sch.clip);
    }

    if (disc && cfg_.resume_starts) starts_ = resume_initial_states(batches, cfg_.actors, stream_seed(base_seed, 4));
    ++iter_;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

std::vector<IterationRecord> Trainer::run(const std::function<void(const IterationRecord&, const Trainer&)>& cb) {
    std::vector<IterationRecord> out;
    while (!done()) {
        out.push_back(step());
        if (cb) cb(out.back(), *this);
    }
    return out;
}

void Trainer::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write checkpoint " + path);
    os << "qnc-trainer 1\niteration " << iter_ << "\nhave_value " << have_value_ << "\nstarts " << starts_.size()
       << ' ' << mdp_.dim() << '\n';
    for (const auto& x : starts_) {
        for (int j = 0; j < mdp_.dim(); ++j) os << x[j] << (j + 1 == mdp_.dim() ? '\n' : ' ');
    }
    os << "value_scale " << std::hexfloat << value_.output_scale() << std::defaultfloat << '\n';
    os << "policy\n";
    write_mlp(os, policy_.mlp(), AdamState{});
    os << "value\n";
    write_mlp(os, value_.mlp(), AdamState{});
    if (!os) throw ConfigError("failed writing checkpoint " + path);
}

void Trainer::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read checkpoint " + path);
    std::string word;
    int version = 0;
    auto expect = [&](const char* w) {
        if (!(is >> word) || word != w) throw DataCorruption(std::string("checkpoint: expected ") + w);
    };
    expect("qnc-trainer");
    if (!(is >> version) || version != 1) throw DataCorruption("checkpoint: unsupported version");
    expect("iteration");
    is >> iter_;
    expect("have_value");
    is >> have_value_;
    expect("starts");
    std::size_t n = 0;
    int dim = 0;
    if (!(is >> n >> dim) || dim != mdp_.dim()) throw DataCorruption("checkpoint: state dimension mismatch");
    starts_.assign(n, State(dim, 0));
    for (auto& x : starts_)
        for (auto& v : x)
            if (!(is >> v)) throw DataCorruption("checkpoint: truncated start states");
    expect("value_scale");
    std::string hex;
    is >> hex;
    const double scale = std::strtod(hex.c_str(), nullptr);
    AdamState unused;
    Mlp p, v;
    expect("policy");
    read_mlp(is, p, unused);
    expect("value");
    read_mlp(is, v, unused);
    policy_ = PolicyNet(mdp_, std::move(p), cfg_.net);
    value_ = ValueNet(std::move(v), cfg_.net);
    value_.set_output_scale(scale);
}

}  // namespace qnc
