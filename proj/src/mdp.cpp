#include "qnc/mdp.hpp"

#include <cmath>
#include <sstream>

#include "qnc/errors.hpp"

namespace qnc {

double CostSpec::operator()(const State& x) const {
    double c = offset;
    const bool unit = weights.empty();
    for (std::size_t j = 0; j < x.size(); ++j) {
        double w = unit ? 1.0 : weights[j];
        switch (kind) {
            case CostKind::TotalJobs: c += x[j]; break;
            case CostKind::WeightedLinear: c += w * x[j]; break;
            case CostKind::Quadratic: c += w * double(x[j]) * x[j]; break;
        }
    }
    return c;
}

static std::vector<double> parse_weights(const std::string& s) {
    std::vector<double> w;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            w.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("bad cost weight '" + item + "'");
        }
    }
    return w;
}

CostSpec CostSpec::parse(const std::string& s) {
    CostSpec c;
    auto colon = s.find(':');
    std::string head = s.substr(0, colon);
    std::string tail = colon == std::string::npos ? "" : s.substr(colon + 1);
    if (head == "total") {
        c.kind = CostKind::TotalJobs;
    } else if (head == "linear") {
        c.kind = CostKind::WeightedLinear;
        c.weights = parse_weights(tail);
    } else if (head == "quadratic") {
        c.kind = CostKind::Quadratic;
        if (!tail.empty()) c.weights = parse_weights(tail);
    } else {
        throw ConfigError("unknown cost '" + s + "' (total | linear:w1,w2,.. | quadratic[:w..])");
    }
    return c;
}

std::string CostSpec::describe() const {
    std::string s = kind == CostKind::TotalJobs ? "total" : kind == CostKind::WeightedLinear ? "linear" : "quadratic";
    for (std::size_t i = 0; i < weights.size(); ++i) {
        std::ostringstream o;
        o.precision(17);
        o << weights[i];
        s += (i == 0 ? ":" : ",") + o.str();
    }
    return s;
}

UniformizedMdp UniformizedMdp::from_network(const NetworkSpec& spec, CostSpec cost) {
    spec.validate();
    if (!cost.weights.empty() && static_cast<int>(cost.weights.size()) != spec.num_classes)
        throw InvalidParameter("cost weights must have one entry per class");
    UniformizedMdp m;
    m.kind_ = Kind::Network;
    m.name_ = spec.name;
    m.dim_ = spec.num_classes;
    m.B_ = spec.uniformization_rate();
    m.cost_ = std::move(cost);
    m.network_ = std::make_shared<NetworkSpec>(spec);
    for (auto& cls : spec.classes_at_stations()) {
        auto opts = cls;
        opts.push_back(kIdle);
        m.options_.push_back(opts);
    }
    m.offsets_.push_back(0);
    for (auto& o : m.options_) m.offsets_.push_back(m.offsets_.back() + static_cast<int>(o.size()));
    for (int j = 0; j < spec.num_classes; ++j)
        if (spec.arrival_rates[j] > 0) m.arrivals_.push_back({-1, j, spec.arrival_rates[j] / m.B_});
    m.completions_.resize(spec.num_classes);
    for (int j = 0; j < spec.num_classes; ++j) {
        const double mu = spec.service_rates[j];
        double stay = 1.0;
        for (int k = 0; k < spec.num_classes; ++k) {
            double r = spec.routing(j, k);
            if (r > 0) {
                m.completions_[j].push_back({j, k, mu * r / m.B_});
                stay -= r;
            }
        }
        if (stay > 1e-15) m.completions_[j].push_back({j, -1, mu * stay / m.B_});
    }
    return m;
}

UniformizedMdp UniformizedMdp::nmodel(double rho) {
    if (!(rho > 0.0) || rho > 1.0) throw InvalidParameter("N-model load must lie in (0,1]");
    UniformizedMdp m;
    m.kind_ = Kind::NModel;
    std::ostringstream n;
    n << "nmodel:rho=" << rho;
    m.name_ = n.str();
    m.dim_ = 2;
    m.rho_ = rho;
    m.l1_ = 1.3 * rho;
    m.l2_ = 0.4 * rho;
    m.mu1_ = 1.0;  // activity 1: class 1 at server 1
    m.mu2_ = 0.5;  // activity 2: class 1 at server 2
    m.mu3_ = 1.0;  // activity 3: class 2 at server 2
    m.B_ = m.l1_ + m.l2_ + m.mu1_ + m.mu2_ + m.mu3_;
    m.cost_ = CostSpec{CostKind::WeightedLinear, {3.0, 1.0}};
    m.options_ = {{0, 1}};
    m.offsets_ = {0, 2};
    m.arrivals_ = {{-1, 0, m.l1_ / m.B_}, {-1, 1, m.l2_ / m.B_}};
    return m;
}

bool UniformizedMdp::option_feasible(const State& x, int g, int o) const {
    if (kind_ == Kind::NModel) return true;
    int j = options_[g][o];
    return j == kIdle || x[j] > 0;
}

double UniformizedMdp::real_mass(const State& x, const Action& a) const {
    double s = 0.0;
    visit_base(x, [&](const Event& e) { s += e.prob; });
    for (int g = 0; g < num_groups(); ++g) visit_option(x, g, a[g], [&](const Event& e) { s += e.prob; });
    return s;
}

std::vector<Successor> UniformizedMdp::transitions(const State& x, const Action& a) const {
    std::vector<Successor> out;
    double self = 1.0;
    auto add = [&](const Event& e) {
        State y = x;
        apply_event(y, e);
        if (y == x) return;  // a job routed back to its own buffer
        self -= e.prob;
        out.push_back({std::move(y), e.prob});
    };
    visit_base(x, add);
    for (int g = 0; g < num_groups(); ++g) visit_option(x, g, a[g], add);
    if (self > 1e-15) out.push_back({x, self});
    return out;
}

void UniformizedMdp::averaged_events(const State& x, const std::vector<double>& probs,
                                     std::vector<Event>& out) const {
    out.clear();
    visit_base(x, [&](const Event& e) { out.push_back(e); });
    for (int g = 0; g < num_groups(); ++g) {
        for (int o = 0; o < num_options(g); ++o) {
            double w = probs[offsets_[g] + o];
            if (w <= 0) continue;
            visit_option(x, g, o, [&](const Event& e) { out.push_back({e.from, e.to, e.prob * w}); });
        }
    }
}

Event UniformizedMdp::step(State& x, const Action& a, double u) const {
    // Pick first, mutate after: the visitors read x.
    Event chosen;
    bool found = false;
    auto take = [&](const Event& e) {
        if (found) return;
        if (u < e.prob) {
            chosen = e;
            found = true;
        } else {
            u -= e.prob;
        }
    };
    visit_base(x, take);
    for (int g = 0; g < num_groups() && !found; ++g) visit_option(x, g, a[g], take);
    if (!found) return Event{};
    apply_event(x, chosen);
    return chosen;
}

bool UniformizedMdp::is_valid_state(const State& x) const {
    if (static_cast<int>(x.size()) != dim_) return false;
    for (int v : x)
        if (v < 0 || (cap_ >= 0 && v > cap_)) return false;
    return true;
}

UniformizedMdp UniformizedMdp::with_cap(int cap) const {
    if (cap < 1) throw InvalidParameter("truncation cap must be at least 1");
    UniformizedMdp m = *this;
    m.cap_ = cap;
    m.name_ = name_ + "@cap=" + std::to_string(cap);
    return m;
}

UniformizedMdp build_uniformized_mdp(const NetworkSpec& spec, const CostSpec& cost) {
    return UniformizedMdp::from_network(spec, cost);
}

UniformizedMdp preset_nmodel(double rho) { return UniformizedMdp::nmodel(rho); }

UniformizedMdp mdp_from_preset(const std::string& preset, const CostSpec& cost) {
    auto colon = preset.find(':');
    std::string head = preset.substr(0, colon);
    std::string tail = colon == std::string::npos ? "" : preset.substr(colon + 1);
    auto value_of = [&](const std::string& key) {
        if (tail.rfind(key + "=", 0) != 0) throw ConfigError("preset '" + preset + "' expects " + key + "=<value>");
        return tail.substr(key.size() + 1);
    };
    try {
        if (head == "crisscross") return build_uniformized_mdp(preset_crisscross(parse_regime(tail)), cost);
        if (head == "ext6") return build_uniformized_mdp(preset_extended_six_class(std::stoi(value_of("L"))), cost);
        if (head == "nmodel") return preset_nmodel(std::stod(value_of("rho")));
        if (head == "file") return build_uniformized_mdp(load_network_file(tail), cost);
    } catch (const std::invalid_argument&) {
        throw ConfigError("malformed preset '" + preset + "'");
    }
    throw ConfigError("unknown network preset '" + preset + "'");
}

}  // namespace qnc
