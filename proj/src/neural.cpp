#include "qnc/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "qnc/errors.hpp"
#include "qnc/simulate.hpp"

namespace qnc {

// ---------------------------------------------------------------- Mlp

Mlp::Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw InvalidParameter("an MLP needs at least two layers");
    Eigen::Index n = 0;
    for (int l = 0; l < layers(); ++l) {
        if (widths_[l] < 1 || widths_[l + 1] < 1) throw InvalidParameter("layer widths must be positive");
        offsets_.push_back(n);
        n += static_cast<Eigen::Index>(widths_[l + 1]) * widths_[l] + widths_[l + 1];
    }
    params_ = Eigen::VectorXd::Zero(n);
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int l) const {
    return {params_.data() + offsets_[l], widths_[l + 1], widths_[l]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(int l) const {
    return {params_.data() + offsets_[l] + static_cast<Eigen::Index>(widths_[l + 1]) * widths_[l], widths_[l + 1]};
}

void Mlp::xavier_init(std::uint64_t seed) {
    Rng rng(seed);
    params_.setZero();
    for (int l = 0; l < layers(); ++l) {
        const double a = std::sqrt(6.0 / (widths_[l] + widths_[l + 1]));
        const Eigen::Index n = static_cast<Eigen::Index>(widths_[l + 1]) * widths_[l];
        for (Eigen::Index i = 0; i < n; ++i) params_[offsets_[l] + i] = a * (2.0 * rng.uniform() - 1.0);
    }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd a = X;
    for (int l = 0; l < layers(); ++l) {
        Eigen::MatrixXd z = weight(l) * a;
        z.colwise() += bias(l);
        a = l + 1 < layers() ? Eigen::MatrixXd(z.array().tanh()) : z;
    }
    return a;
}

void Mlp::forward(const Eigen::MatrixXd& X, Tape& tape) const {
    tape.act.resize(layers() + 1);
    tape.act[0] = X;
    for (int l = 0; l < layers(); ++l) {
        Eigen::MatrixXd z = weight(l) * tape.act[l];
        z.colwise() += bias(l);
        tape.act[l + 1] = l + 1 < layers() ? Eigen::MatrixXd(z.array().tanh()) : z;
    }
}

void Mlp::backward(const Tape& tape, const Eigen::MatrixXd& dOut, Eigen::VectorXd& grad) const {
    if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());
    Eigen::MatrixXd delta = dOut;
    for (int l = layers() - 1; l >= 0; --l) {
        const Eigen::Index rows = widths_[l + 1], cols = widths_[l];
        Eigen::Map<Eigen::MatrixXd> gW(grad.data() + offsets_[l], rows, cols);
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets_[l] + rows * cols, rows);
        gW.noalias() += delta * tape.act[l].transpose();
        gb += delta.rowwise().sum();
        if (l > 0) {
            Eigen::MatrixXd back = weight(l).transpose() * delta;
            delta = back.array() * (1.0 - tape.act[l].array().square());
        }
    }
}

// ---------------------------------------------------------------- sizing

std::vector<int> policy_widths(int J, int L, int outputs) {
    return {J, 10 * J, static_cast<int>(std::floor(10.0 * std::sqrt(double(L) * J))),
            static_cast<int>(std::floor(10.0 * std::sqrt(double(L)))), outputs};
}

std::vector<int> value_widths(int J) {
    return {J, 10 * J, static_cast<int>(std::floor(10.0 * std::sqrt(double(J)))), 10, 1};
}

int sizing_stations(const UniformizedMdp& mdp) {
    if (mdp.kind() == UniformizedMdp::Kind::NModel) return 2;
    return mdp.network()->num_stations;
}

namespace {

Eigen::MatrixXd scaled_inputs(const std::vector<const State*>& xs, int dim, double scale) {
    Eigen::MatrixXd X(dim, static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (int j = 0; j < dim; ++j) X(j, static_cast<Eigen::Index>(i)) = (*xs[i])[j] / scale;
    return X;
}

template <class Data>
std::vector<const State*> select_states(const Data& states, const std::vector<std::size_t>& idx) {
    std::vector<const State*> xs;
    if (idx.empty()) {
        for (const auto& x : states) xs.push_back(&x);
    } else {
        for (std::size_t i : idx) xs.push_back(&states[i]);
    }
    return xs;
}

std::vector<std::size_t> all_or(const std::vector<std::size_t>& idx, std::size_t n) {
    if (!idx.empty()) return idx;
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
}

}  // namespace

// ---------------------------------------------------------------- PolicyNet

PolicyNet::PolicyNet(const UniformizedMdp& mdp, NetConfig cfg)
    : mdp_(std::make_shared<const UniformizedMdp>(mdp)),
      cfg_(cfg),
      mlp_(policy_widths(mdp.dim(), sizing_stations(mdp), mdp.total_options())) {}

PolicyNet::PolicyNet(const UniformizedMdp& mdp, Mlp mlp, NetConfig cfg)
    : mdp_(std::make_shared<const UniformizedMdp>(mdp)), cfg_(cfg), mlp_(std::move(mlp)) {
    const auto& w = mlp_.widths();
    if (w.front() != mdp.dim() || w.back() != mdp.total_options())
        throw InvalidParameter("policy network shape does not fit the model");
}

void PolicyNet::mask(const State& x, std::vector<double>& out) const {
    const auto& m = *mdp_;
    out.assign(m.total_options(), 0.0);
    for (int g = 0; g < m.num_groups(); ++g) {
        bool busy = false;
        for (int o = 0; o < m.num_options(g); ++o)
            if (m.option_class(g, o) != kIdle && m.option_feasible(x, g, o)) busy = true;
        for (int o = 0; o < m.num_options(g); ++o) {
            bool ok = m.option_feasible(x, g, o);
            if (cfg_.non_idling && busy && m.kind() == UniformizedMdp::Kind::Network && m.option_class(g, o) == kIdle)
                ok = false;
            out[m.group_offset(g) + o] = ok ? 1.0 : 0.0;
        }
    }
}

Eigen::MatrixXd PolicyNet::inputs(const std::vector<const State*>& xs) const {
    return scaled_inputs(xs, mdp_->dim(), cfg_.input_scale);
}

Eigen::MatrixXd PolicyNet::softmax(const Eigen::MatrixXd& logits, const std::vector<const State*>& xs) const {
    const auto& m = *mdp_;
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
    std::vector<double> feas;
    for (Eigen::Index i = 0; i < logits.cols(); ++i) {
        mask(*xs[i], feas);
        for (int g = 0; g < m.num_groups(); ++g) {
            const int base = m.group_offset(g), n = m.num_options(g);
            double top = -std::numeric_limits<double>::infinity();
            for (int o = 0; o < n; ++o)
                if (feas[base + o] > 0) top = std::max(top, logits(base + o, i));
            double s = 0.0;
            for (int o = 0; o < n; ++o)
                if (feas[base + o] > 0) s += (P(base + o, i) = std::exp(logits(base + o, i) - top));
            for (int o = 0; o < n; ++o) P(base + o, i) /= s;
        }
    }
    return P;
}

void PolicyNet::distribution(const State& x, std::vector<double>& out) const {
    std::vector<const State*> xs{&x};
    Eigen::MatrixXd P = softmax(mlp_.forward(inputs(xs)), xs);
    out.assign(P.data(), P.data() + P.size());
}

// ---------------------------------------------------------------- ValueNet

ValueNet::ValueNet(int J, NetConfig cfg) : cfg_(cfg), mlp_(value_widths(J)) {}

ValueNet::ValueNet(Mlp mlp, NetConfig cfg) : cfg_(cfg), mlp_(std::move(mlp)) {
    if (mlp_.widths().back() != 1) throw InvalidParameter("value network needs one output");
}

Eigen::MatrixXd ValueNet::inputs(const std::vector<const State*>& xs) const {
    return scaled_inputs(xs, mlp_.widths().front(), cfg_.input_scale);
}

double ValueNet::operator()(const State& x) const {
    std::vector<const State*> xs{&x};
    return scale_ * mlp_.forward(inputs(xs))(0, 0);
}

void ValueNet::set_output_scale(double s) {
    if (!(s > 0) || !std::isfinite(s)) throw InvalidParameter("value output scale must be positive");
    scale_ = s;
}

// ---------------------------------------------------------------- losses

double clipped_surrogate(const PolicyNet& net, const PolicyData& data, double eps, Eigen::VectorXd* grad,
                         const std::vector<std::size_t>& idx) {
    const auto rows = all_or(idx, data.size());
    if (grad) *grad = Eigen::VectorXd::Zero(net.mlp().num_params());
    if (rows.empty()) return 0.0;
    const auto& m = net.mdp();
    auto xs = select_states(data.states, rows);
    Mlp::Tape tape;
    net.mlp().forward(net.inputs(xs), tape);
    Eigen::MatrixXd P = net.softmax(tape.output(), xs);
    Eigen::MatrixXd dOut = Eigen::MatrixXd::Zero(P.rows(), P.cols());
    const double n = static_cast<double>(rows.size());
    double loss = 0.0;
    for (std::size_t c = 0; c < rows.size(); ++c) {
        const std::size_t i = rows[c];
        const double beta = data.behavior_prob[i];
        if (!(beta > 0.0)) throw DataCorruption("behaviour probability must be positive");
        const Action& a = data.actions[i];
        double pi = 1.0;
        for (int g = 0; g < m.num_groups(); ++g) pi *= P(m.group_offset(g) + a[g], static_cast<Eigen::Index>(c));
        const double r = pi / beta, A = data.advantages[i];
        const double rc = clip(r, 1.0 - eps, 1.0 + eps);
        const bool clipped = rc * A > r * A;
        loss += clipped ? rc * A : r * A;
        if (!grad || clipped || pi == 0.0) continue;
        // d(r A)/d logit = r A (1[o = a_g] - p_o) within each group.
        const double coef = r * A / n;
        for (int g = 0; g < m.num_groups(); ++g) {
            const int base = m.group_offset(g);
            for (int o = 0; o < m.num_options(g); ++o)
                dOut(base + o, static_cast<Eigen::Index>(c)) = coef * ((o == a[g]) - P(base + o, static_cast<Eigen::Index>(c)));
        }
    }
    if (grad) net.mlp().backward(tape, dOut, *grad);
    return loss / n;
}

double value_mse(const ValueNet& net, const ValueData& data, Eigen::VectorXd* grad,
                 const std::vector<std::size_t>& idx) {
    const auto rows = all_or(idx, data.size());
    if (grad) *grad = Eigen::VectorXd::Zero(net.mlp().num_params());
    if (rows.empty()) return 0.0;
    auto xs = select_states(data.states, rows);
    Mlp::Tape tape;
    net.mlp().forward(net.inputs(xs), tape);
    const double n = static_cast<double>(rows.size());
    Eigen::MatrixXd dOut(1, static_cast<Eigen::Index>(rows.size()));
    const double S = net.output_scale();
    double loss = 0.0;
    for (std::size_t c = 0; c < rows.size(); ++c) {
        double e = S * tape.output()(0, static_cast<Eigen::Index>(c)) - data.targets[rows[c]];
        loss += e * e;
        dOut(0, static_cast<Eigen::Index>(c)) = 2.0 * e * S / n;
    }
    if (grad) net.mlp().backward(tape, dOut, *grad);
    return loss / n;
}

double cross_entropy(const PolicyNet& net, const std::vector<State>& states,
                     const std::vector<std::vector<double>>& expert, Eigen::VectorXd* grad,
                     const std::vector<std::size_t>& idx) {
    const auto rows = all_or(idx, states.size());
    if (grad) *grad = Eigen::VectorXd::Zero(net.mlp().num_params());
    if (rows.empty()) return 0.0;
    const auto& m = net.mdp();
    auto xs = select_states(states, rows);
    Mlp::Tape tape;
    net.mlp().forward(net.inputs(xs), tape);
    Eigen::MatrixXd P = net.softmax(tape.output(), xs);
    const double n = static_cast<double>(rows.size());
    Eigen::MatrixXd dOut = Eigen::MatrixXd::Zero(P.rows(), P.cols());
    double loss = 0.0;
    for (std::size_t c = 0; c < rows.size(); ++c) {
        const auto& e = expert[rows[c]];
        const auto col = static_cast<Eigen::Index>(c);
        for (int g = 0; g < m.num_groups(); ++g) {
            const int base = m.group_offset(g);
            double mass = 0.0;
            for (int o = 0; o < m.num_options(g); ++o) {
                double q = e[base + o];
                if (q <= 0.0) continue;
                double p = P(base + o, col);
                if (p <= 0.0) throw InvalidParameter("expert uses an option the policy network masks");
                loss -= q * std::log(p);
                mass += q;
            }
            for (int o = 0; o < m.num_options(g); ++o) dOut(base + o, col) = (mass * P(base + o, col) - e[base + o]) / n;
        }
    }
    if (grad) net.mlp().backward(tape, dOut, *grad);
    return loss / n;
}

// ---------------------------------------------------------------- Adam

void AdamConfig::validate() const {
    if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) throw InvalidParameter("Adam betas must lie in (0,1)");
    if (minibatch < 1) throw InvalidParameter("minibatch size must be at least 1");
    if (epochs < 0) throw InvalidParameter("negative epoch count");
    if (!(lr >= 0) || !(eps > 0)) throw InvalidParameter("bad Adam step size or epsilon");
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& s, const AdamConfig& cfg) {
    if (s.m.size() != params.size()) {
        s.m = Eigen::VectorXd::Zero(params.size());
        s.v = Eigen::VectorXd::Zero(params.size());
        s.t = 0;
    }
    ++s.t;
    s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * grad;
    s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
    params.array() -= cfg.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + cfg.eps);
}

double adam_epochs(std::size_t n, const MinibatchLoss& loss, Eigen::VectorXd& params, AdamState& state,
                   const AdamConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Eigen::VectorXd grad;
    double last = 0.0;
    for (int e = 0; e < cfg.epochs; ++e) {
        // Fisher-Yates with the project generator, identical on every platform.
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        double sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.minibatch) {
            std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.minibatch));
            std::vector<std::size_t> idx(perm.begin() + start, perm.begin() + end);
            sum += loss(idx, grad);
            adam_step(params, grad, state, cfg);
            ++batches;
        }
        last = batches ? sum / batches : 0.0;
    }
    return last;
}

// ---------------------------------------------------------------- pretraining

double pretrain_from_expert(PolicyNet& net, const Policy& expert, const PretrainConfig& cfg, std::uint64_t seed) {
    if (expert.needs_fifo()) throw InvalidParameter("pretraining needs a state-based expert");
    const auto& m = net.mdp();
    SimulateOptions lean{false};
    auto batch = simulate(m, expert, State(m.dim(), 0), StopRule::steps(cfg.samples), seed, lean);
    std::vector<std::vector<double>> targets(batch.states.size());
    for (std::size_t i = 0; i < batch.states.size(); ++i) expert.probabilities(batch.states[i], targets[i]);
    AdamState state;
    Rng rng(stream_seed(seed, 1));
    MinibatchLoss loss = [&](const std::vector<std::size_t>& idx, Eigen::VectorXd& g) {
        return cross_entropy(net, batch.states, targets, &g, idx);
    };
    adam_epochs(batch.states.size(), loss, net.mlp().params(), state, cfg.adam, rng);
    return cross_entropy(net, batch.states, targets);
}

// ---------------------------------------------------------------- checkpoint I/O

namespace {

void write_vec(std::ostream& os, const Eigen::VectorXd& v) {
    std::ostringstream line;
    line << std::hexfloat;
    for (Eigen::Index i = 0; i < v.size(); ++i) line << v[i] << (i + 1 == v.size() ? "" : " ");
    os << line.str() << '\n';
}

double read_double(std::istream& is) {
    std::string tok;
    if (!(is >> tok)) throw DataCorruption("truncated checkpoint");
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw DataCorruption("bad number in checkpoint: " + tok);
    return v;
}

void read_vec(std::istream& is, Eigen::VectorXd& v, Eigen::Index n) {
    v.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = read_double(is);
}

void expect_word(std::istream& is, const std::string& w) {
    std::string tok;
    if (!(is >> tok) || tok != w) throw DataCorruption("expected '" + w + "' in checkpoint");
}

}  // namespace

void write_mlp(std::ostream& os, const Mlp& mlp, const AdamState& adam) {
    os << "mlp " << mlp.widths().size();
    for (int w : mlp.widths()) os << ' ' << w;
    os << "\nparams " << mlp.num_params() << '\n';
    write_vec(os, mlp.params());
    os << "adam " << adam.t << ' ' << adam.m.size() << '\n';
    if (adam.m.size()) {
        write_vec(os, adam.m);
        write_vec(os, adam.v);
    }
}

void read_mlp(std::istream& is, Mlp& mlp, AdamState& adam) {
    expect_word(is, "mlp");
    std::size_t nw = 0;
    if (!(is >> nw) || nw < 2 || nw > 64) throw DataCorruption("bad layer count");
    std::vector<int> widths(nw);
    for (auto& w : widths)
        if (!(is >> w)) throw DataCorruption("bad layer width");
    mlp = Mlp(widths);
    expect_word(is, "params");
    Eigen::Index n = 0;
    if (!(is >> n) || n != mlp.num_params()) throw DataCorruption("parameter count does not match the widths");
    read_vec(is, mlp.params(), n);
    expect_word(is, "adam");
    Eigen::Index k = 0;
    if (!(is >> adam.t >> k) || (k != 0 && k != n)) throw DataCorruption("bad Adam state");
    adam.m.resize(0);
    adam.v.resize(0);
    if (k) {
        read_vec(is, adam.m, k);
        read_vec(is, adam.v, k);
    }
}

}  // namespace qnc
