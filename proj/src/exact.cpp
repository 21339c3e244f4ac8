#include "qnc/exact.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qnc/errors.hpp"

namespace qnc {

TruncatedChain::TruncatedChain(const UniformizedMdp& mdp, int cap) : mdp_(mdp.with_cap(cap)), cap_(cap) {
    const int J = mdp_.dim();
    n_ = 1;
    for (int j = 0; j < J; ++j) {
        stride_.push_back(n_);
        n_ *= static_cast<std::size_t>(cap + 1);
    }
    if (n_ >= std::numeric_limits<std::uint32_t>::max()) throw InvalidParameter("truncation too large");
    cost_.resize(n_);
    options_.resize(mdp_.num_groups());
    feasible_.resize(mdp_.num_groups());
    for (int g = 0; g < mdp_.num_groups(); ++g) {
        options_[g].resize(mdp_.num_options(g));
        feasible_[g].assign(mdp_.num_options(g), std::vector<std::uint8_t>(n_, 0));
    }
    auto push = [&](Rows& r, const State& x, std::size_t i, const Event& e) {
        (void)i;
        State y = x;
        apply_event(y, e);
        r.target.push_back(static_cast<std::uint32_t>(index(y)));
        r.prob.push_back(e.prob);
    };
    base_.offset.push_back(0);
    for (auto& go : options_)
        for (auto& r : go) r.offset.push_back(0);
    for (std::size_t i = 0; i < n_; ++i) {
        State x = state(i);
        cost_[i] = mdp_.cost(x);
        mdp_.visit_base(x, [&](const Event& e) { push(base_, x, i, e); });
        base_.offset.push_back(static_cast<std::uint32_t>(base_.target.size()));
        for (int g = 0; g < mdp_.num_groups(); ++g) {
            for (int o = 0; o < mdp_.num_options(g); ++o) {
                Rows& r = options_[g][o];
                feasible_[g][o][i] = mdp_.option_feasible(x, g, o);
                mdp_.visit_option(x, g, o, [&](const Event& e) { push(r, x, i, e); });
                r.offset.push_back(static_cast<std::uint32_t>(r.target.size()));
            }
        }
    }
}

std::size_t TruncatedChain::index(const State& x) const {
    std::size_t i = 0;
    for (std::size_t j = 0; j < x.size(); ++j) i += stride_[j] * static_cast<std::size_t>(x[j]);
    return i;
}

State TruncatedChain::state(std::size_t i) const {
    State x(mdp_.dim());
    for (int j = 0; j < mdp_.dim(); ++j) {
        x[j] = static_cast<int>(i % static_cast<std::size_t>(cap_ + 1));
        i /= static_cast<std::size_t>(cap_ + 1);
    }
    return x;
}

Eigen::VectorXd TruncatedChain::cost_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(cost_.data(), static_cast<Eigen::Index>(n_));
}

Eigen::SparseMatrix<double, Eigen::RowMajor> TruncatedChain::policy_matrix(const Policy& pi) const {
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<double> probs;
    for (std::size_t i = 0; i < n_; ++i) {
        State x = state(i);
        pi.probabilities(x, probs);
        double self = 1.0;
        auto add = [&](const Rows& r, double w) {
            for (auto k = r.offset[i]; k < r.offset[i + 1]; ++k) {
                trip.emplace_back(static_cast<int>(i), static_cast<int>(r.target[k]), w * r.prob[k]);
                self -= w * r.prob[k];
            }
        };
        add(base_, 1.0);
        for (int g = 0; g < mdp_.num_groups(); ++g)
            for (int o = 0; o < mdp_.num_options(g); ++o) {
                double w = probs[mdp_.group_offset(g) + o];
                if (w > 0) add(options_[g][o], w);
            }
        trip.emplace_back(static_cast<int>(i), static_cast<int>(i), self);
    }
    Eigen::SparseMatrix<double, Eigen::RowMajor> P(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
    P.setFromTriplets(trip.begin(), trip.end());
    return P;
}

Eigen::MatrixXd TruncatedChain::dense_policy_matrix(const Policy& pi) const {
    return Eigen::MatrixXd(policy_matrix(pi));
}

namespace {

// Sum of p * (h(y) - h(x)) over one compressed row.
inline double row_delta(const TruncatedChain::Rows& r, std::size_t i, const double* h) {
    double s = 0.0;
    const double hx = h[i];
    for (auto k = r.offset[i]; k < r.offset[i + 1]; ++k) s += r.prob[k] * (h[r.target[k]] - hx);
    return s;
}

// One Bellman backup at state i; optionally records the greedy action.
inline double backup(const TruncatedChain& c, std::size_t i, const double* h, Action* act) {
    const auto& m = c.mdp();
    double v = c.costs()[i] + h[i] + row_delta(c.base(), i, h);
    for (int g = 0; g < m.num_groups(); ++g) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int o = 0; o < m.num_options(g); ++o) {
            if (!c.feasible(i, g, o)) continue;
            double d = row_delta(c.option(g, o), i, h);
            if (d < best) {
                best = d;
                arg = o;
            }
        }
        v += best;
        if (act) (*act)[g] = arg;
    }
    return v;
}

// Network models have transitions that are pure index shifts, so the sweep
// walks the states in order and reads neighbours by stride instead of
// going through the stored rows.
class NetworkSweep {
public:
    explicit NetworkSweep(const TruncatedChain& c) : c_(c) {
        const auto& m = c.mdp();
        const NetworkSpec& net = *m.network();
        J_ = m.dim();
        cap_ = c.cap();
        std::size_t s = 1;
        for (int j = 0; j < J_; ++j) {
            stride_.push_back(static_cast<std::ptrdiff_t>(s));
            s *= static_cast<std::size_t>(cap_ + 1);
        }
        const double B = m.uniform_rate();
        for (int j = 0; j < J_; ++j)
            if (net.arrival_rates[j] > 0) arrivals_.push_back({j, net.arrival_rates[j] / B});
        groups_.resize(m.num_groups());
        for (int g = 0; g < m.num_groups(); ++g)
            for (int o = 0; o < m.num_options(g); ++o) {
                Opt op;
                op.cls = m.option_class(g, o);
                if (op.cls != kIdle) {
                    double stay = 1.0;
                    for (int k = 0; k < J_; ++k)
                        if (net.routing(op.cls, k) > 0) {
                            op.moves.push_back({k, net.service_rates[op.cls] * net.routing(op.cls, k) / B});
                            stay -= net.routing(op.cls, k);
                        }
                    if (stay > 1e-15) op.moves.push_back({-1, net.service_rates[op.cls] * stay / B});
                }
                groups_[g].push_back(op);
            }
    }

    // Calls f(i, backup value) for every state; records actions if asked.
    template <class F>
    void run(const double* h, std::vector<Action>* act, F&& f) const {
        std::vector<int> x(J_, 0);
        const auto& costs = c_.costs();
        const std::size_t n = c_.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double hx = h[i];
            double v = costs[i] + hx;
            for (const auto& [j, p] : arrivals_)
                if (x[j] < cap_) v += p * (h[i + stride_[j]] - hx);
            for (std::size_t g = 0; g < groups_.size(); ++g) {
                double best = std::numeric_limits<double>::infinity();
                int arg = 0;
                for (std::size_t o = 0; o < groups_[g].size(); ++o) {
                    const Opt& op = groups_[g][o];
                    double d = 0.0;
                    if (op.cls != kIdle) {
                        if (x[op.cls] == 0) continue;
                        const std::size_t from = i - stride_[op.cls];
                        for (const auto& [k, p] : op.moves) {
                            if (k < 0)
                                d += p * (h[from] - hx);
                            else if (x[k] < cap_)
                                d += p * (h[from + stride_[k]] - hx);
                        }
                    }
                    if (d < best) {
                        best = d;
                        arg = static_cast<int>(o);
                    }
                }
                v += best;
                if (act) (*act)[i][g] = arg;
            }
            f(i, v);
            for (int j = 0; j < J_; ++j) {
                if (++x[j] <= cap_) break;
                x[j] = 0;
            }
        }
    }

private:
    struct Opt {
        int cls = kIdle;
        std::vector<std::pair<int, double>> moves;
    };
    const TruncatedChain& c_;
    int J_ = 0, cap_ = 0;
    std::vector<std::ptrdiff_t> stride_;
    std::vector<std::pair<int, double>> arrivals_;
    std::vector<std::vector<Opt>> groups_;
};

template <class F>
void sweep(const TruncatedChain& c, const double* h, std::vector<Action>* act, F&& f) {
    if (c.mdp().kind() == UniformizedMdp::Kind::Network) {
        NetworkSweep(c).run(h, act, f);
        return;
    }
    for (std::size_t i = 0; i < c.size(); ++i) f(i, backup(c, i, h, act ? &(*act)[i] : nullptr));
}

}  // namespace

RviResult relative_value_iteration(const TruncatedChain& chain, double tol, int max_iters, std::size_t reference,
                                   std::vector<double> initial_h) {
    const std::size_t n = chain.size();
    std::vector<double> h = initial_h.empty() ? std::vector<double>(n, 0.0) : std::move(initial_h), th(n);
    if (h.size() != n) throw InvalidParameter("initial relative values have the wrong size");
    RviResult res;
    for (int it = 1; it <= max_iters; ++it) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        sweep(chain, h.data(), nullptr, [&](std::size_t i, double v) {
            th[i] = v;
            double d = v - h[i];
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        });
        const double ref = th[reference];
        for (std::size_t i = 0; i < n; ++i) h[i] = th[i] - ref;
        res.iterations = it;
        res.lower = lo;
        res.upper = hi;
        res.span = hi - lo;
        if (res.span < tol) {
            res.eta = 0.5 * (lo + hi);
            res.h = std::move(h);
            res.policy = greedy_policy(chain, res.h);
            return res;
        }
    }
    throw Divergence("relative value iteration did not converge in " + std::to_string(max_iters) +
                     " iterations (span " + std::to_string(res.span) + ")");
}

double bellman_residual(const TruncatedChain& chain, double eta, const std::vector<double>& h) {
    double worst = 0.0;
    sweep(chain, h.data(), nullptr,
          [&](std::size_t i, double v) { worst = std::max(worst, std::abs(v - h[i] - eta)); });
    return worst;
}

std::vector<Action> greedy_policy(const TruncatedChain& chain, const std::vector<double>& h) {
    std::vector<Action> pol(chain.size(), Action(chain.mdp().num_groups()));
    sweep(chain, h.data(), &pol, [](std::size_t, double) {});
    return pol;
}

PoissonSolution solve_poisson(const Eigen::MatrixXd& P, const Eigen::VectorXd& g, Eigen::Index xstar) {
    const Eigen::Index n = P.rows();
    // Stationary distribution: d^T (I - P) = 0 with one equation replaced by d^T e = 1.
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - P.transpose();
    A.row(n - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(n - 1) = 1.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) throw ReducibleChain("stationary distribution is not unique");
    PoissonSolution s;
    s.d = lu.solve(rhs);
    if (s.d.minCoeff() < -1e-9) throw ReducibleChain("negative stationary mass");
    s.eta = s.d.dot(g);
    Eigen::MatrixXd Z = Eigen::MatrixXd::Identity(n, n) - P + Eigen::VectorXd::Ones(n) * s.d.transpose();
    s.h = Z.partialPivLu().solve(g - s.eta * Eigen::VectorXd::Ones(n));
    s.h.array() -= s.h(xstar);
    return s;
}

double poisson_residual(const Eigen::MatrixXd& P, const Eigen::VectorXd& g, double eta, const Eigen::VectorXd& h) {
    return (g.array() - eta + (P * h).array() - h.array()).abs().maxCoeff();
}

DiscountedValue discounted_value(const Eigen::MatrixXd& P, const Eigen::VectorXd& g, double gamma,
                                 Eigen::Index xstar) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidParameter("discount must lie in (0,1)");
    const Eigen::Index n = P.rows();
    Eigen::VectorXd w = (Eigen::MatrixXd::Identity(n, n) - gamma * P).partialPivLu().solve(g);
    DiscountedValue v;
    v.r = (1.0 - gamma) * w(xstar);
    v.V = w.array() - w(xstar);
    return v;
}

}  // namespace qnc
