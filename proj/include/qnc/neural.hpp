#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "qnc/mdp.hpp"
#include "qnc/policy.hpp"
#include "qnc/random.hpp"

namespace qnc {

// Fully connected network with tanh hidden layers and a linear output layer.
// All weights and biases live in one flat vector; layer l has a
// widths[l+1] x widths[l] column-major weight block followed by its bias.
class Mlp {
public:
    Mlp() = default;
    explicit Mlp(std::vector<int> widths);

    const std::vector<int>& widths() const { return widths_; }
    int layers() const { return static_cast<int>(widths_.size()) - 1; }
    Eigen::Index num_params() const { return params_.size(); }
    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    Eigen::Map<const Eigen::MatrixXd> weight(int l) const;
    Eigen::Map<const Eigen::VectorXd> bias(int l) const;

    // Xavier-uniform weights, zero biases.
    void xavier_init(std::uint64_t seed);

    // Activations of every layer for a batch stored column-wise.
    struct Tape {
        std::vector<Eigen::MatrixXd> act;
        const Eigen::MatrixXd& output() const { return act.back(); }
    };
    Eigen::MatrixXd forward(const Eigen::MatrixXd& X) const;
    void forward(const Eigen::MatrixXd& X, Tape& tape) const;
    // Adds the parameter gradient for output sensitivities dOut to grad.
    void backward(const Tape& tape, const Eigen::MatrixXd& dOut, Eigen::VectorXd& grad) const;

    bool operator==(const Mlp& o) const { return widths_ == o.widths_ && params_ == o.params_; }

private:
    std::vector<int> widths_;
    std::vector<Eigen::Index> offsets_;
    Eigen::VectorXd params_;
};

// Layer widths from the number of classes J and stations L.
std::vector<int> policy_widths(int J, int L, int outputs);
std::vector<int> value_widths(int J);
// Stations used for sizing: the network's stations, or the two servers of the N-model.
int sizing_stations(const UniformizedMdp& mdp);

struct NetConfig {
    double input_scale = 50.0;  // job counts are divided by this
    bool non_idling = true;     // mask idling at stations with work
};

// Policy network: one logit per option of every decision group, a softmax
// within each group restricted to the feasible options.
class PolicyNet {
public:
    PolicyNet(const UniformizedMdp& mdp, NetConfig cfg = {});
    PolicyNet(const UniformizedMdp& mdp, Mlp mlp, NetConfig cfg = {});

    const UniformizedMdp& mdp() const { return *mdp_; }
    const NetConfig& config() const { return cfg_; }
    Mlp& mlp() { return mlp_; }
    const Mlp& mlp() const { return mlp_; }

    // 0/1 feasibility of every flat option at x.
    void mask(const State& x, std::vector<double>& out) const;
    // Flat per-group distributions at x.
    void distribution(const State& x, std::vector<double>& out) const;

    Eigen::MatrixXd inputs(const std::vector<const State*>& xs) const;
    // Column-wise masked grouped softmax of the logits.
    Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits, const std::vector<const State*>& xs) const;

private:
    std::shared_ptr<const UniformizedMdp> mdp_;
    NetConfig cfg_;
    Mlp mlp_;
};

class ValueNet {
public:
    ValueNet() = default;
    explicit ValueNet(int J, NetConfig cfg = {});
    ValueNet(Mlp mlp, NetConfig cfg = {});

    Mlp& mlp() { return mlp_; }
    const Mlp& mlp() const { return mlp_; }
    double operator()(const State& x) const;
    Eigen::MatrixXd inputs(const std::vector<const State*>& xs) const;

    // The output is scale * mlp(x); lets a small network reach large values.
    double output_scale() const { return scale_; }
    void set_output_scale(double s);

private:
    NetConfig cfg_;
    Mlp mlp_;
    double scale_ = 1.0;
};

// Policy view of a frozen policy network snapshot.
class NeuralPolicy : public Policy {
public:
    explicit NeuralPolicy(std::shared_ptr<const PolicyNet> net, std::string name = "neural")
        : net_(std::move(net)), name_(std::move(name)) {}
    std::string name() const override { return name_; }
    void probabilities(const State& x, std::vector<double>& out) const override { net_->distribution(x, out); }
    bool expensive() const override { return true; }
    const PolicyNet& net() const { return *net_; }

private:
    std::shared_ptr<const PolicyNet> net_;
    std::string name_;
};

// Samples for the clipped surrogate.
struct PolicyData {
    std::vector<State> states;
    std::vector<Action> actions;
    std::vector<double> advantages;
    std::vector<double> behavior_prob;
    std::size_t size() const { return states.size(); }
};

struct ValueData {
    std::vector<State> states;
    std::vector<double> targets;
    std::size_t size() const { return states.size(); }
};

inline double clip(double r, double lo, double hi) { return r < lo ? lo : (r > hi ? hi : r); }

// Mean over the selected samples of max[r A, clip(r, 1-eps, 1+eps) A] with
// r = pi_theta(a|x) / pi_phi(a|x). Writes the gradient if grad is non-null.
// An empty index list selects every sample.
double clipped_surrogate(const PolicyNet& net, const PolicyData& data, double eps, Eigen::VectorXd* grad = nullptr,
                         const std::vector<std::size_t>& idx = {});

// Mean over the selected samples of (f(x) - target)^2.
double value_mse(const ValueNet& net, const ValueData& data, Eigen::VectorXd* grad = nullptr,
                 const std::vector<std::size_t>& idx = {});

// Mean per-state cross-entropy between an expert's distributions and the network's.
double cross_entropy(const PolicyNet& net, const std::vector<State>& states,
                     const std::vector<std::vector<double>>& expert, Eigen::VectorXd* grad = nullptr,
                     const std::vector<std::size_t>& idx = {});

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr = 5e-4;
    int minibatch = 2048;
    int epochs = 3;
    void validate() const;
};

struct AdamState {
    Eigen::VectorXd m, v;
    std::int64_t t = 0;
    bool operator==(const AdamState& o) const { return t == o.t && m == o.m && v == o.v; }
};

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, const AdamConfig& cfg);

// Minibatch loss with its gradient; the loss value is returned.
using MinibatchLoss = std::function<double(const std::vector<std::size_t>&, Eigen::VectorXd&)>;

// cfg.epochs passes over n samples, reshuffled every epoch, one Adam step
// per minibatch. Returns the mean minibatch loss of the last epoch.
double adam_epochs(std::size_t n, const MinibatchLoss& loss, Eigen::VectorXd& params, AdamState& state,
                   const AdamConfig& cfg, Rng& rng);

struct PretrainConfig {
    std::int64_t samples = 100000;  // steps of the expert episode
    AdamConfig adam{0.9, 0.999, 1e-8, 1e-3, 512, 10};
};

// Fits the policy network to the expert's distributions on the states the
// expert visits from the empty state. Returns the final cross-entropy.
double pretrain_from_expert(PolicyNet& net, const Policy& expert, const PretrainConfig& cfg, std::uint64_t seed);

// Text dump with hex floats: bit-exact round trip.
void write_mlp(std::ostream& os, const Mlp& mlp, const AdamState& adam);
void read_mlp(std::istream& is, Mlp& mlp, AdamState& adam);

}  // namespace qnc
