#include "qnc/chain.hpp"

#include <algorithm>
#include <cmath>

#include "qnc/errors.hpp"
#include "qnc/random.hpp"

namespace qnc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::VectorXd stationary_distribution(const MatrixXd& P) {
    const Eigen::Index n = P.rows();
    MatrixXd A = MatrixXd::Identity(n, n) - P.transpose();
    A.row(n - 1).setOnes();
    VectorXd rhs = VectorXd::Zero(n);
    rhs(n - 1) = 1.0;
    Eigen::FullPivLU<MatrixXd> lu(A);
    if (!lu.isInvertible()) throw ReducibleChain("stationary distribution is not unique");
    VectorXd d = lu.solve(rhs);
    if (d.minCoeff() < -1e-9) throw ReducibleChain("negative stationary mass");
    return d;
}

ChainAnalysis analyze(const MatrixXd& P) {
    const Eigen::Index n = P.rows();
    ChainAnalysis c;
    c.P = P;
    c.d = stationary_distribution(P);
    MatrixXd Pi = VectorXd::Ones(n) * c.d.transpose();
    c.Z = (MatrixXd::Identity(n, n) - P + Pi).partialPivLu().inverse();
    c.D = c.Z - Pi;
    c.M = MatrixXd::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x)
        for (Eigen::Index y = 0; y < n; ++y)
            if (x != y) c.M(x, y) = (c.D(y, y) - c.D(x, y)) / c.d(y);
    // With M(x,x) = 0, sum_y d(y) M(x,y) = tr(D) because D e = 0.
    c.kappa = c.D.trace();
    return c;
}

namespace {

// Pairwise formula on rows of R = A diag(V): max |R(x,.) - R(y,.)|_1 / (V(x) + V(y)).
double pairwise(const MatrixXd& R, const VectorXd& V) {
    const Eigen::Index n = R.rows();
    double best = 0.0;
    for (Eigen::Index x = 0; x < n; ++x)
        for (Eigen::Index y = x + 1; y < n; ++y) {
            double s = (R.row(x) - R.row(y)).cwiseAbs().sum();
            best = std::max(best, s / (V(x) + V(y)));
        }
    return best;
}

}  // namespace

double tau1(const MatrixXd& A) { return pairwise(A, VectorXd::Ones(A.rows())); }

double tau1_V(const MatrixXd& A, const VectorXd& V) { return pairwise(A * V.asDiagonal(), V); }

double norm_V(const MatrixXd& A, const VectorXd& V) {
    return ((A.cwiseAbs() * V).array() / V.array()).maxCoeff();
}

double norm_inf(const MatrixXd& A) { return A.cwiseAbs().rowwise().sum().maxCoeff(); }

double sup_norm_V(const VectorXd& f, const VectorXd& V) { return (f.cwiseAbs().array() / V.array()).maxCoeff(); }

VectorXd discounted_occupancy(const MatrixXd& P, double gamma, const VectorXd& mu) {
    const Eigen::Index n = P.rows();
    MatrixXd A = MatrixXd::Identity(n, n) - gamma * P.transpose();
    return (1.0 - gamma) * A.partialPivLu().solve(mu);
}

DiscountedChain discounted_chain(const MatrixXd& P, double gamma, const VectorXd& mu) {
    if (gamma < 0.0 || gamma > 1.0) throw InvalidParameter("discount factor outside [0,1]");
    DiscountedChain c;
    c.P = gamma * P + (1.0 - gamma) * VectorXd::Ones(P.rows()) * mu.transpose();
    auto a = analyze(c.P);
    c.d = a.d;
    c.D = a.D;
    return c;
}

// ---------------------------------------------------------------- FiniteMdp

bool FiniteMdp::state_cost() const {
    for (int a = 1; a < k; ++a)
        if ((g.col(a) - g.col(0)).cwiseAbs().maxCoeff() > 0.0) return false;
    return true;
}

void FiniteMdp::validate() const {
    if (n <= 0 || k <= 0 || static_cast<int>(P.size()) != k) throw InvalidParameter("bad FiniteMdp shape");
    if (g.rows() != n || g.cols() != k) throw InvalidParameter("cost matrix shape");
    for (auto& Pa : P) {
        if (Pa.rows() != n || Pa.cols() != n) throw InvalidParameter("kernel shape");
        if (Pa.minCoeff() < 0.0) throw InvalidParameter("negative transition probability");
        if ((Pa.rowwise().sum().array() - 1.0).abs().maxCoeff() > 1e-12) throw InvalidParameter("kernel row sum");
    }
    if (smdp()) {
        if (m.rows() != n || m.cols() != k) throw InvalidParameter("sojourn matrix shape");
        if (m.minCoeff() <= 0.0) throw InvalidSojourn("mean sojourn must be positive");
    }
}

MatrixXd FiniteMdp::policy_matrix(const MatrixXd& pi) const {
    MatrixXd out = MatrixXd::Zero(n, n);
    for (int a = 0; a < k; ++a) out += pi.col(a).asDiagonal() * P[a];
    return out;
}

VectorXd FiniteMdp::policy_cost(const MatrixXd& pi) const { return pi.cwiseProduct(g).rowwise().sum(); }

VectorXd FiniteMdp::policy_time(const MatrixXd& pi) const {
    if (!smdp()) return VectorXd::Ones(n);
    return pi.cwiseProduct(m).rowwise().sum();
}

MatrixXd FiniteMdp::expect(const VectorXd& f) const {
    MatrixXd out(n, k);
    for (int a = 0; a < k; ++a) out.col(a) = P[a] * f;
    return out;
}

namespace {

void dirichlet_row(Rng& rng, Eigen::Ref<VectorXd> row) {
    for (Eigen::Index i = 0; i < row.size(); ++i) row(i) = -std::log1p(-rng.uniform());
    row /= row.sum();
}

}  // namespace

FiniteMdp random_finite_mdp(int n, int k, std::uint64_t seed, bool state_cost) {
    Rng rng(seed);
    FiniteMdp mdp;
    mdp.n = n;
    mdp.k = k;
    mdp.P.assign(k, MatrixXd(n, n));
    for (int a = 0; a < k; ++a)
        for (int x = 0; x < n; ++x) {
            VectorXd row(n);
            dirichlet_row(rng, row);
            mdp.P[a].row(x) = row.transpose();
        }
    mdp.g.resize(n, k);
    for (int x = 0; x < n; ++x) {
        double c = rng.uniform();
        for (int a = 0; a < k; ++a) mdp.g(x, a) = state_cost ? c : (a == 0 ? c : rng.uniform());
    }
    return mdp;
}

FiniteMdp random_finite_smdp(int n, int k, std::uint64_t seed) {
    FiniteMdp mdp = random_finite_mdp(n, k, seed);
    Rng rng(mix64(seed ^ 0x5bd1e995ULL));
    mdp.m.resize(n, k);
    for (int x = 0; x < n; ++x)
        for (int a = 0; a < k; ++a) mdp.m(x, a) = 0.5 + 1.5 * rng.uniform();
    return mdp;
}

MatrixXd random_policy(int n, int k, std::uint64_t seed) {
    Rng rng(seed);
    MatrixXd pi(n, k);
    for (int x = 0; x < n; ++x) {
        VectorXd row(k);
        dirichlet_row(rng, row);
        pi.row(x) = row.transpose();
    }
    return pi;
}

MatrixXd mix_policies(const MatrixXd& pi, const MatrixXd& other, double s) { return (1.0 - s) * pi + s * other; }

// ---------------------------------------------------------------- values

AverageValue average_value(const FiniteMdp& mdp, const MatrixXd& pi) {
    if (mdp.smdp() && mdp.m.minCoeff() <= 0.0) throw InvalidSojourn("mean sojourn must be positive");
    const int n = mdp.n;
    MatrixXd P = mdp.policy_matrix(pi);
    VectorXd gp = mdp.policy_cost(pi);
    VectorXd mp = mdp.policy_time(pi);
    AverageValue v;
    v.d = stationary_distribution(P);
    v.mean_time = v.d.dot(mp);
    v.eta = v.d.dot(gp) / v.mean_time;
    VectorXd r = gp - v.eta * mp;
    MatrixXd A = MatrixXd::Identity(n, n) - P + VectorXd::Ones(n) * v.d.transpose();
    v.h = A.partialPivLu().solve(r);
    MatrixXd mm = mdp.smdp() ? mdp.m : MatrixXd::Ones(n, mdp.k);
    v.A = mdp.g - v.eta * mm + mdp.expect(v.h) - v.h.replicate(1, mdp.k);
    return v;
}

DiscountedValues discounted_values(const FiniteMdp& mdp, const MatrixXd& pi, double gamma, const VectorXd& mu) {
    const int n = mdp.n;
    MatrixXd P = mdp.policy_matrix(pi);
    DiscountedValues v;
    v.V = (MatrixXd::Identity(n, n) - gamma * P).partialPivLu().solve(mdp.policy_cost(pi));
    v.eta = (1.0 - gamma) * mu.dot(v.V);
    v.d = discounted_occupancy(P, gamma, mu);
    v.A = mdp.g + gamma * mdp.expect(v.V) - v.V.replicate(1, mdp.k);
    return v;
}

namespace {

VectorXd under(const MatrixXd& pi, const MatrixXd& A) { return pi.cwiseProduct(A).rowwise().sum(); }

VectorXd total_variation(const MatrixXd& pi1, const MatrixXd& pi2) {
    return 0.5 * (pi2 - pi1).cwiseAbs().rowwise().sum();
}

}  // namespace

BoundReport check_bound_discounted(const FiniteMdp& mdp, const MatrixXd& pi1, const MatrixXd& pi2, double gamma,
                                   const VectorXd& mu) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidParameter("discount factor must lie in (0,1)");
    auto v1 = discounted_values(mdp, pi1, gamma, mu);
    auto v2 = discounted_values(mdp, pi2, gamma, mu);
    VectorXd abar = under(pi2, v1.A);
    double etv = v1.d.dot(total_variation(pi1, pi2));

    BoundReport r;
    r.lhs = v2.eta - v1.eta;
    r.identity = v2.d.dot(abar);
    r.surrogate = v1.d.dot(abar);
    r.epsilon = abar.cwiseAbs().maxCoeff();

    MatrixXd P1 = mdp.policy_matrix(pi1), P2 = mdp.policy_matrix(pi2);
    auto c1 = discounted_chain(P1, gamma, mu);
    auto c2 = discounted_chain(P2, gamma, mu);
    r.condition = tau1(c2.D);
    r.penalty = 2.0 * gamma * r.epsilon * r.condition * etv;
    r.rhs = r.surrogate + r.penalty;
    r.slack = r.rhs - r.lhs;
    r.old_rhs = r.surrogate + 2.0 * gamma * r.epsilon / (1.0 - gamma) * etv;

    VectorXd diff = c2.d - c1.d;
    VectorXd via1 = gamma * ((c1.d.transpose() * (P2 - P1)) * c2.D).transpose();
    VectorXd via2 = gamma * ((c2.d.transpose() * (P2 - P1)) * c1.D).transpose();
    r.old_new_residual = std::max((diff - via1).cwiseAbs().maxCoeff(), (diff - via2).cwiseAbs().maxCoeff());
    return r;
}

double DriftCertificate::violation(const MatrixXd& P) const {
    VectorXd slack = P * V - eps * V;
    for (int x : C) slack(x) -= b;
    return slack.maxCoeff();
}

namespace {

void require_dominated(const FiniteMdp& mdp, const DriftCertificate& cert) {
    if (cert.V.size() != mdp.n || cert.V.minCoeff() < 1.0) throw HypothesisViolated("Lyapunov function must be >= 1");
    if (!(cert.eps > 0.0 && cert.eps < 1.0) || cert.b < 0.0) throw HypothesisViolated("drift constants out of range");
    for (int a = 0; a < mdp.k; ++a)
        if ((mdp.g.col(a).cwiseAbs() - cert.V).maxCoeff() > 0.0) throw HypothesisViolated("|g| exceeds V");
}

}  // namespace

BoundReport check_bound_average(const FiniteMdp& mdp, const MatrixXd& pi1, const MatrixXd& pi2, AverageMode mode,
                                const DriftCertificate* cert) {
    if (mdp.smdp()) throw InvalidParameter("use check_smdp for semi-Markov models");
    auto a1 = average_value(mdp, pi1);
    auto a2 = average_value(mdp, pi2);
    VectorXd abar = under(pi2, a1.A);
    MatrixXd P1 = mdp.policy_matrix(pi1), P2 = mdp.policy_matrix(pi2);

    BoundReport r;
    r.lhs = a2.eta - a1.eta;
    r.identity = a2.d.dot(abar);
    r.surrogate = a1.d.dot(abar);

    switch (mode) {
    case AverageMode::Tau1: {
        r.epsilon = abar.cwiseAbs().maxCoeff();
        r.condition = tau1(analyze(P2).D);
        r.penalty = 2.0 * r.epsilon * r.condition * a1.d.dot(total_variation(pi1, pi2));
        break;
    }
    case AverageMode::Vnorm: {
        if (!cert) throw HypothesisViolated("V-norm bound needs a drift certificate");
        require_dominated(mdp, *cert);
        if (cert->violation(P2) > 1e-12) throw HypothesisViolated("drift condition fails for the new policy");
        const VectorXd& V = cert->V;
        r.epsilon = sup_norm_V(abar, V);
        r.condition = tau1_V(analyze(P2).D, V);
        VectorXd weight = ((pi2 - pi1).cwiseAbs().cwiseProduct(mdp.expect(V))).rowwise().sum();
        r.penalty = 2.0 * r.epsilon * r.condition * a1.d.dot(weight);
        break;
    }
    case AverageMode::Ch2: {
        if (!cert) throw HypothesisViolated("this bound needs a drift certificate");
        if (!mdp.state_cost()) throw HypothesisViolated("this bound needs a cost that ignores the action");
        require_dominated(mdp, *cert);
        if (cert->violation(P1) > 1e-12) throw HypothesisViolated("drift condition fails for the current policy");
        const VectorXd& V = cert->V;
        auto c1 = analyze(P1);
        r.Dtp = norm_V((P2 - P1) * c1.Z, V);
        if (r.Dtp >= 1.0) throw HypothesisViolated("policy change too large: D = " + std::to_string(r.Dtp));
        r.N1 = r.surrogate;
        VectorXd centered = mdp.g.col(0).array() - a1.eta;
        r.N2 = r.Dtp * r.Dtp / (1.0 - r.Dtp) * sup_norm_V(centered, V) * a1.d.dot(V);
        r.condition = norm_V(c1.Z, V);
        r.penalty = r.N2;
        break;
    }
    }
    r.rhs = r.surrogate + r.penalty;
    r.slack = r.rhs - r.lhs;
    return r;
}

BoundReport check_smdp(const FiniteMdp& smdp, const MatrixXd& pi1, const MatrixXd& pi2) {
    smdp.validate();
    auto a1 = average_value(smdp, pi1);
    auto a2 = average_value(smdp, pi2);
    VectorXd abar = under(pi2, a1.A);
    BoundReport r;
    r.lhs = a2.eta - a1.eta;
    r.identity = a2.d.dot(abar) / a2.mean_time;
    r.surrogate = a1.d.dot(abar) / a2.mean_time;
    r.epsilon = abar.cwiseAbs().maxCoeff() / a2.mean_time;
    r.condition = tau1(analyze(smdp.policy_matrix(pi2)).D);
    r.penalty = 2.0 * r.epsilon * r.condition * a1.d.dot(total_variation(pi1, pi2));
    r.rhs = r.surrogate + r.penalty;
    r.slack = r.rhs - r.lhs;
    return r;
}

// ---------------------------------------------------------------- Bernoulli walk

namespace {

// For V growing geometrically, D and d lose all relative accuracy in the tail
// where V is large. Working with S^{-1} A S, S = diag(V), keeps every entry O(1).
// Returns R = diag(V) * (S^{-1} (I - P + e d^T) S)^{-1} = Z diag(V), whose
// pairwise differences give tau1_V[D] because D = Z - e d^T.
MatrixXd scaled_fundamental(const MatrixXd& P, const VectorXd& dV, const VectorXd& V) {
    const Eigen::Index n = P.rows();
    VectorXd Vinv = V.cwiseInverse();
    MatrixXd B = MatrixXd::Identity(n, n) - Vinv.asDiagonal() * P * V.asDiagonal() + Vinv * dV.transpose();
    return V.asDiagonal() * B.partialPivLu().inverse();
}

}  // namespace

BernoulliReport bernoulli_walk_case(double rho, int states, std::vector<double> gammas) {
    if (!(rho > 0.0 && rho < 1.0)) throw InvalidParameter("rho must lie in (0,1)");
    const double sr = std::sqrt(rho);
    if (states == 0) {
        // V-weighted tail of d beyond n is (1 + sqrt(rho)) rho^{n/2}.
        states = static_cast<int>(std::ceil(2.0 * std::log(1e-12 / (1.0 + sr)) / std::log(rho))) + 1;
    }
    BernoulliReport rep;
    rep.rho = rho;
    rep.states = states;
    rep.tail_mass = std::pow(rho, states);
    if (rep.tail_mass >= 1e-10) throw TruncationTooSmall("stationary mass beyond the truncation is " +
                                                        std::to_string(rep.tail_mass));
    const int n = states;
    const double lam = rho / (1.0 + rho), mu = 1.0 / (1.0 + rho);
    MatrixXd P = MatrixXd::Zero(n, n);
    for (int x = 0; x < n; ++x) {
        P(x, std::min(x + 1, n - 1)) += lam;
        P(x, std::max(x - 1, 0)) += mu;
    }
    VectorXd V(n);
    for (int x = 0; x < n; ++x) V(x) = std::pow(rho, -0.5 * x);
    const double eps = 2.0 * sr / (1.0 + rho), b = (1.0 - sr) / (1.0 + rho);

    VectorXd PV = P * V;
    {
        VectorXd off = PV - eps * V;
        off(0) -= b;
        rep.drift_violation = (off.array() / V.array()).maxCoeff();
        double gap = 0.0;
        for (int x = 1; x < n - 1; ++x) gap = std::max(gap, std::abs(PV(x) - eps * V(x)) / V(x));
        rep.drift_equality_gap = gap;
    }

    // Detailed balance gives d(x) V(x) = c rho^{x/2} without cancellation.
    VectorXd dV(n), d(n);
    for (int x = 0; x < n; ++x) {
        dV(x) = std::pow(sr, x);
        d(x) = std::pow(rho, x);
    }
    const double total = d.sum();
    d /= total;
    dV /= total;
    rep.d_norm_V = dV.sum();

    rep.tau1_V = pairwise(scaled_fundamental(P, dV, V), V);
    rep.example_bound = (1.0 + rho) * (2.0 + sr) / ((1.0 - sr) * (1.0 - sr));
    const double minV = V.minCoeff();
    rep.lemma_single = {rep.tau1_V, (1.0 + minV * rep.d_norm_V) / (1.0 - eps), true};
    rep.lemma_single_d = {rep.d_norm_V, b / (1.0 - eps) * d(0), true};
    {
        // x* = 0 reaches C = {0} and satisfies b <= (P V)(0).
        bool ok = P(0, 0) > 0.0 && b <= PV(0);
        rep.lemma_set = {rep.tau1_V, 1.0 / (1.0 - eps) + minV * b / ((1.0 - eps) * (1.0 - eps)) * d(0), ok};
    }

    VectorXd start = VectorXd::Zero(n);
    start(0) = 1.0;
    const double muV = start.dot(V);
    for (double gamma : gammas) {
        rep.gammas.push_back(gamma);
        MatrixXd Pg = gamma * P + (1.0 - gamma) * VectorXd::Ones(n) * start.transpose();
        const double eps_g = 0.5 * (eps * gamma + 1.0);
        const double b_g = std::max(gamma * b, (1.0 - gamma) * muV);
        std::vector<char> inset(n, 0);
        inset[0] = 1;
        for (int x = 0; x < n; ++x)
            if (V(x) < 2.0 * (1.0 - gamma) * muV / (1.0 - gamma * eps)) inset[x] = 1;
        VectorXd PgV = Pg * V;
        // The stated constant takes the max of the two terms; on C \ Omega the
        // argument only goes through with their sum, so both are reported.
        const double b_sum = gamma * b + (1.0 - gamma) * muV;
        double viol = -1e300, viol_sum = -1e300;
        for (int x = 0; x < n; ++x) {
            viol = std::max(viol, (PgV(x) - eps_g * V(x) - (inset[x] ? b_g : 0.0)) / V(x));
            viol_sum = std::max(viol_sum, (PgV(x) - eps_g * V(x) - (inset[x] ? b_sum : 0.0)) / V(x));
        }
        rep.discount_drift_violation.push_back(viol);
        rep.discount_drift_violation_sum.push_back(viol_sum);

        // d^gamma V solved in the scaled frame: S (I - gamma P)^T S^{-1} (S y) = S mu.
        VectorXd Vinv = V.cwiseInverse();
        MatrixXd A = MatrixXd::Identity(n, n) - gamma * V.asDiagonal() * P.transpose() * Vinv.asDiagonal();
        VectorXd dgV = (1.0 - gamma) * A.partialPivLu().solve(V.cwiseProduct(start));
        VectorXd dg = dgV.cwiseProduct(Vinv);
        double norm_dg = dgV.sum();
        double tau_g = pairwise(scaled_fundamental(Pg, dgV, V), V);

        double reach = 0.0;
        for (int y = 0; y < n; ++y)
            if (inset[y]) reach += Pg(0, y);
        bool ok = reach > 0.0 && b_g <= PgV(0);
        double mass = 0.0;
        for (int x = 0; x < n; ++x)
            if (inset[x]) mass += dg(x);
        const double factor = 2.0 / (1.0 - eps * gamma);
        rep.discounted_tau.push_back({tau_g, factor * (1.0 + minV * norm_dg), ok});
        rep.discounted_d.push_back({norm_dg, factor * b_g * mass, ok});
    }
    return rep;
}

}  // namespace qnc
