// qnc: experiments on multiclass queueing networks.
#include <CLI11.hpp>
#include <iostream>
#include <map>

#include "qnc/errors.hpp"
#include "qnc/experiments.hpp"

using namespace qnc;

namespace {

const std::map<std::string, std::string> kAbout{
    {"train", "train a policy with PPO and evaluate it"},
    {"evaluate", "long-run cost of fixed policies"},
    {"dp", "relative value iteration on a buffer-capped chain"},
    {"bounds", "policy-improvement bounds on random finite MDPs"},
    {"curve", "discounted bounds against the average-cost bound as gamma grows"},
    {"regvsinf", "regenerative against non-regenerative discounted targets"},
    {"targets", "variance of the value estimators on one batch"},
    {"table-cc", "optimal and PPO costs for the criss-cross regimes"},
};

struct Overrides {
    std::string config;
    std::string network;
    std::vector<std::string> networks;
    std::string cost;
    std::vector<std::string> policies;
    std::string algorithm;
    int cap = 0;
    std::uint64_t seed = 0;
    int iterations = 0;
    int actors = 0;
    std::int64_t cycles = 0;
    std::int64_t horizon = 0;
    int threads = 0;
    int every = -1;
    std::int64_t final_count = 0;
    std::string stop;
};

void add_overrides(CLI::App* sub, Overrides& o) {
    sub->add_option("--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--network", o.network, "network preset, e.g. crisscross:IL, ext6:L=2, nmodel:rho=0.95");
    sub->add_option("--networks", o.networks, "several network presets");
    sub->add_option("--cost", o.cost, "total, linear:w1,w2,.. or quadratic[:w1,..]");
    sub->add_option("--policies", o.policies, "policies to evaluate: lbfs fcfs pr uniform threshold:T mlp:F table:F");
    sub->add_option("--algorithm", o.algorithm, "base, amp or disc");
    sub->add_option("--cap", o.cap, "buffer cap for every class");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--iterations", o.iterations, "policy iterations");
    sub->add_option("--actors", o.actors, "parallel actors per iteration");
    sub->add_option("--cycles", o.cycles, "regenerative cycles per actor");
    sub->add_option("--horizon", o.horizon, "steps per actor for the discounted algorithm");
    sub->add_option("--threads", o.threads, "worker threads (results do not depend on it)");
    sub->add_option("--every", o.every, "evaluation and checkpoint cadence, 0 for final only");
    sub->add_option("--final-count", o.final_count, "length of the final evaluation");
    sub->add_option("--stop", o.stop, "evaluation length unit: regenerations, arrivals or steps");
}

ExperimentConfig build(const std::string& command, const Overrides& o) {
    ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
    if (o.config.empty()) c.command = command;
    else if (c.command != command) throw ConfigError("config is for '" + c.command + "', not '" + command + "'");
    if (!o.network.empty()) c.network = o.network;
    if (!o.networks.empty()) c.networks = o.networks;
    if (!o.cost.empty()) c.cost = o.cost;
    if (!o.policies.empty()) c.policies = o.policies;
    if (!o.algorithm.empty()) c.training.algorithm = parse_algorithm(o.algorithm);
    if (o.cap > 0) c.cap = o.cap;
    if (o.seed > 0) c.seed = o.seed;
    if (o.iterations > 0) c.training.iterations = o.iterations;
    if (o.actors > 0) c.training.actors = o.actors;
    if (o.cycles > 0) c.training.cycles = o.cycles;
    if (o.horizon > 0) c.training.horizon = o.horizon;
    if (o.threads > 0) c.training.threads = o.threads;
    if (o.every >= 0) c.evaluation.every = o.every;
    if (o.final_count > 0) c.evaluation.final_count = o.final_count;
    if (!o.stop.empty()) c.evaluation.stop = o.stop;
    return parse_config(to_json(c));
}

void report(const RunResult& r) {
    std::cout << "wrote " << r.directory << " (manifest " << r.hash << ")\n";
    for (const auto& f : r.csv_files) std::cout << "  " << f << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qnc: policy optimization for multiclass queueing networks"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "no progress log");

    Overrides ov;
    std::string out = "runs/out";
    bool print_only = false;
    for (const auto& name : experiment_commands()) {
        auto* sub = app.add_subcommand(name, kAbout.at(name));
        add_overrides(sub, ov);
        sub->add_option("--out", out, "output directory");
        sub->add_flag("--print-config", print_only, "print the resolved configuration and exit");
    }

    std::string recipe_name;
    double scale = 1.0;
    std::uint64_t recipe_seed = 1;
    auto* rec = app.add_subcommand("recipe", "run a named experiment at a given scale");
    rec->add_option("name", recipe_name, "recipe name")->required()->check(CLI::IsMember(recipe_names()));
    rec->add_option("--scale", scale, "multiplies actors and samples")->check(CLI::PositiveNumber);
    rec->add_option("--seed", recipe_seed, "master seed");
    rec->add_option("--out", out, "output directory");
    rec->add_flag("--print-config", print_only, "print the resolved configuration and exit");

    std::string manifest;
    auto* rerun = app.add_subcommand("rerun", "repeat a run from its manifest");
    rerun->add_option("manifest", manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
    rerun->add_option("--out", out, "output directory")->required();

    std::vector<std::string> inputs;
    std::string aggregated;
    auto* agg = app.add_subcommand("aggregate", "concatenate CSVs from one manifest");
    agg->add_option("inputs", inputs, "CSV files")->required()->check(CLI::ExistingFile);
    agg->add_option("-o,--output", aggregated, "output CSV")->required();

    CLI11_PARSE(app, argc, argv);
    std::ostream* log = quiet ? nullptr : &std::cerr;
    try {
        if (rec->parsed()) {
            auto cfg = recipe(recipe_name, scale, recipe_seed);
            if (print_only) {
                std::cout << to_json(cfg).dump(2) << '\n';
                return 0;
            }
            report(run_experiment(cfg, out, log));
        } else if (rerun->parsed()) {
            report(rerun_manifest(manifest, out, log));
        } else if (agg->parsed()) {
            aggregate_csv(inputs, aggregated);
        } else {
            for (const auto& name : experiment_commands()) {
                if (!app.got_subcommand(name)) continue;
                auto cfg = build(name, ov);
                if (print_only) {
                    std::cout << to_json(cfg).dump(2) << '\n';
                    return 0;
                }
                report(run_experiment(cfg, out, log));
            }
        }
    } catch (const Error& e) {
        std::cerr << "qnc: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
