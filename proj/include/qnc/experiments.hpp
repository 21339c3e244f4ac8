#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "qnc/ppo.hpp"
#include "qnc/simulate.hpp"

namespace qnc {

using Json = nlohmann::ordered_json;

// How policies are scored during and after training.
struct EvalProtocol {
    int every = 10;                      // evaluation and checkpoint cadence; 0 keeps only the final one
    std::string stop = "regenerations";  // regenerations, arrivals or steps
    std::int64_t count = 100000;         // per intermediate evaluation
    std::int64_t final_count = 1000000;  // for the final evaluation
    EvalMode mode = EvalMode::Version2;

    StopRule rule(std::int64_t n) const;
};

struct TargetsSpec {
    std::vector<std::string> kinds{"standard", "amp", "disc-amp", "gae", "jesf"};
    std::string policy = "pr";
    std::string zeta = "zero";  // zero, or exact (needs a cap)
    double gamma = 0.998;
    double lambda = 0.99;
    std::int64_t cycles = 1000;
    int actors = 4;
};

struct DpSpec {
    int cap = 125;
    double tol = 1e-6;
    int max_iters = 2000000;
};

struct BoundsSpec {
    int trials = 500;
    int states = 5;
    int actions = 3;
    std::vector<double> gammas{0.5, 0.9, 0.99};
};

struct CurveSpec {
    std::vector<double> gammas{0.9, 0.99, 0.999, 0.9999};
    std::uint64_t instance = 2024;
    double mix = 0.1;  // distance between the two policies
};

struct ExperimentConfig {
    std::string command = "train";
    std::string network = "crisscross:IL";
    std::vector<std::string> networks;  // table-cc, dp and evaluate over several networks
    std::string cost;                   // empty keeps the preset's cost
    int cap = -1;
    std::uint64_t seed = 1;
    TrainingConfig training;
    std::string pretrain = "none";  // none or pr
    std::int64_t pretrain_samples = 100000;
    EvalProtocol evaluation;
    std::vector<std::string> policies;  // baselines to score: lbfs, fcfs, pr, uniform, threshold:T, mlp:<path>
    TargetsSpec targets;
    DpSpec dp;
    BoundsSpec bounds;
    CurveSpec curve;
};

const std::vector<std::string>& experiment_commands();

// Strict parsing: unknown keys and wrong types raise ConfigError naming the field.
ExperimentConfig parse_config(const Json& j);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
Json to_json(const ExperimentConfig& cfg);

// Stable hash of the configuration; every CSV row carries it.
std::string config_hash(const ExperimentConfig& cfg);

// A named recipe at a given scale: a pure function of its arguments.
// Scale multiplies actors and per-actor samples of the paper's settings.
ExperimentConfig recipe(const std::string& name, double scale, std::uint64_t seed);
const std::vector<std::string>& recipe_names();

struct RunResult {
    std::string directory;
    std::string hash;
    std::vector<std::string> csv_files;  // relative to the directory
};

// Runs the configured command and writes CSVs, checkpoints and manifest.json
// into `directory`. Progress goes to `log` when given.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& directory, std::ostream* log = nullptr);

// Reads a manifest and runs its configuration again into `directory`.
RunResult rerun_manifest(const std::string& manifest_path, const std::string& directory,
                         std::ostream* log = nullptr);

// Concatenates CSV files with identical headers; refuses rows from
// different manifests.
void aggregate_csv(const std::vector<std::string>& inputs, const std::string& output);

// Policy resolution shared by the commands.
std::unique_ptr<Policy> make_policy(const std::string& spec, const UniformizedMdp& mdp, const NetConfig& net = {});
UniformizedMdp make_mdp(const std::string& network, const std::string& cost, int cap);

// ---------------------------------------------------------------- checks

struct BoundsRow {
    int trial = 0;
    std::string check;  // discounted, average, theorem, smdp, tau1
    double gamma = 0.0;
    double lhs = 0.0;
    double identity_error = 0.0;
    double rhs = 0.0;
    double slack = 0.0;
    double condition = 0.0;
};

// Random finite-MDP bound checks: one row per trial and check.
std::vector<BoundsRow> bounds_suite(const BoundsSpec& spec, std::uint64_t seed);

struct CurveRow {
    double gamma = 0.0;
    double lhs = 0.0;
    double rhs = 0.0;            // discounted bound with the discounted condition number
    double average_rhs = 0.0;    // average-cost bound it converges to
    double old_rhs = 0.0;        // bound with 1/(1 - gamma) in place of the condition number
    double relative_gap = 0.0;   // |rhs - average_rhs| / |average_rhs|
    double old_ratio = 0.0;      // old_rhs / rhs
};

std::vector<CurveRow> gamma_sweep(const CurveSpec& spec);

}  // namespace qnc
