#include "qnc/network.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "qnc/errors.hpp"

namespace qnc {

void NetworkSpec::validate() const {
    if (num_stations <= 0 || num_classes <= 0)
        throw InvalidParameter("network needs at least one station and one class");
    const auto J = static_cast<std::size_t>(num_classes);
    if (station_of_class.size() != J || arrival_rates.size() != J || service_rates.size() != J ||
        routing.rows() != num_classes || routing.cols() != num_classes)
        throw InvalidParameter("network field sizes disagree with the class count");
    std::vector<bool> hit(num_stations, false);
    for (int j = 0; j < num_classes; ++j) {
        int s = station_of_class[j];
        if (s < 0 || s >= num_stations) throw InvalidParameter("class mapped to unknown station");
        hit[s] = true;
        if (!(arrival_rates[j] >= 0.0)) throw InvalidParameter("arrival rates must be nonnegative");
        if (!(service_rates[j] > 0.0)) throw InvalidParameter("service rates must be positive");
        double row = 0.0;
        for (int k = 0; k < num_classes; ++k) {
            if (routing(j, k) < 0.0) throw InvalidParameter("negative routing probability");
            row += routing(j, k);
        }
        if (row > 1.0 + 1e-12) throw InvalidParameter("routing row sums above one");
    }
    for (int s = 0; s < num_stations; ++s)
        if (!hit[s]) throw InvalidParameter("station without classes");
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(num_classes, num_classes) - routing;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) throw OpenNetworkViolation("I - R is singular");
}

std::vector<std::vector<int>> NetworkSpec::classes_at_stations() const {
    std::vector<std::vector<int>> out(num_stations);
    for (int j = 0; j < num_classes; ++j) out[station_of_class[j]].push_back(j);
    return out;
}

double NetworkSpec::uniformization_rate() const {
    double b = 0.0;
    for (int j = 0; j < num_classes; ++j) b += arrival_rates[j] + service_rates[j];
    return b;
}

TrafficSolution solve_traffic(const NetworkSpec& spec) {
    const int J = spec.num_classes;
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(J, J) - spec.routing.transpose();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) throw OpenNetworkViolation("I - R is singular");
    Eigen::VectorXd lambda = Eigen::Map<const Eigen::VectorXd>(spec.arrival_rates.data(), J);
    TrafficSolution sol;
    sol.effective_rates = lu.solve(lambda);
    sol.loads = Eigen::VectorXd::Zero(spec.num_stations);
    for (int j = 0; j < J; ++j)
        sol.loads(spec.station_of_class[j]) += sol.effective_rates(j) / spec.service_rates[j];
    sol.stable = (sol.loads.array() < 1.0).all();
    return sol;
}

Regime parse_regime(const std::string& s) {
    if (s == "IL") return Regime::IL;
    if (s == "BL") return Regime::BL;
    if (s == "IM") return Regime::IM;
    if (s == "BM") return Regime::BM;
    if (s == "IH") return Regime::IH;
    if (s == "BH") return Regime::BH;
    throw InvalidParameter("unknown criss-cross regime '" + s + "'");
}

std::string regime_name(Regime r) {
    switch (r) {
        case Regime::IL: return "IL";
        case Regime::BL: return "BL";
        case Regime::IM: return "IM";
        case Regime::BM: return "BM";
        case Regime::IH: return "IH";
        case Regime::BH: return "BH";
    }
    return "?";
}

NetworkSpec preset_crisscross(Regime regime) {
    // (lambda1, lambda3, mu1, mu2, mu3) per load regime.
    double l = 0.3, mu2 = 1.5;
    switch (regime) {
        case Regime::IL: l = 0.3; mu2 = 1.5; break;
        case Regime::BL: l = 0.3; mu2 = 1.0; break;
        case Regime::IM: l = 0.6; mu2 = 1.5; break;
        case Regime::BM: l = 0.6; mu2 = 1.0; break;
        case Regime::IH: l = 0.9; mu2 = 1.5; break;
        case Regime::BH: l = 0.9; mu2 = 1.0; break;
    }
    NetworkSpec s;
    s.name = "crisscross:" + regime_name(regime);
    s.num_stations = 2;
    s.num_classes = 3;
    s.station_of_class = {0, 1, 0};
    s.arrival_rates = {l, 0.0, l};
    s.service_rates = {2.0, mu2, 2.0};
    s.routing = Eigen::MatrixXd::Zero(3, 3);
    s.routing(0, 1) = 1.0;
    return s;
}

NetworkSpec preset_extended_six_class(int L) {
    if (L < 2 || L > 7) throw InvalidParameter("extended network needs 2..7 stations");
    const int J = 3 * L;
    NetworkSpec s;
    s.name = "ext6:L=" + std::to_string(L);
    s.num_stations = L;
    s.num_classes = J;
    s.station_of_class.resize(J);
    s.arrival_rates.assign(J, 0.0);
    s.service_rates.resize(J);
    s.routing = Eigen::MatrixXd::Zero(J, J);
    static const double kRates[6] = {1.0 / 8, 1.0 / 2, 1.0 / 4, 1.0 / 6, 1.0 / 7, 1.0};
    for (int j = 0; j < J; ++j) {
        s.station_of_class[j] = j / 3;
        s.service_rates[j] = kRates[j % 6];
    }
    s.arrival_rates[0] = 9.0 / 140;
    s.arrival_rates[2] = 9.0 / 140;
    // Each of the three lanes moves one station forward; at the last station
    // lane one loops back to the second buffer and lanes two and three exit.
    for (int st = 0; st + 1 < L; ++st)
        for (int i = 0; i < 3; ++i) s.routing(3 * st + i, 3 * (st + 1) + i) = 1.0;
    s.routing(3 * (L - 1), 1) = 1.0;
    return s;
}

NetworkSpec parse_network_text(const std::string& text, const std::string& name) {
    NetworkSpec s;
    s.name = name;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::vector<std::tuple<int, int, double, int>> routes;
    auto fail = [&](const std::string& msg) {
        throw ConfigError("line " + std::to_string(lineno) + ": " + msg);
    };
    auto read_list = [&](std::istringstream& ls, auto& vec) {
        using T = typename std::decay_t<decltype(vec)>::value_type;
        T v;
        while (ls >> v) vec.push_back(v);
        if (!ls.eof()) fail("malformed number");
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (auto p = line.find('#'); p != std::string::npos) line.erase(p);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        if (key == "stations") {
            if (!(ls >> s.num_stations)) fail("expected station count");
        } else if (key == "classes") {
            if (!(ls >> s.num_classes)) fail("expected class count");
        } else if (key == "station_of_class") {
            std::vector<int> v;
            read_list(ls, v);
            for (int& x : v) x -= 1;
            s.station_of_class = v;
        } else if (key == "arrival") {
            read_list(ls, s.arrival_rates);
        } else if (key == "service") {
            read_list(ls, s.service_rates);
        } else if (key == "route") {
            int a, b;
            double p;
            if (!(ls >> a >> b >> p)) fail("route needs: from to probability");
            routes.emplace_back(a - 1, b - 1, p, lineno);
        } else {
            fail("unknown key '" + key + "'");
        }
    }
    if (s.num_classes <= 0) throw ConfigError("missing 'classes'");
    s.routing = Eigen::MatrixXd::Zero(s.num_classes, s.num_classes);
    for (auto& [a, b, p, ln] : routes) {
        if (a < 0 || b < 0 || a >= s.num_classes || b >= s.num_classes)
            throw ConfigError("line " + std::to_string(ln) + ": route class out of range");
        s.routing(a, b) += p;
    }
    s.validate();
    return s;
}

NetworkSpec load_network_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open network file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_network_text(ss.str(), path);
}

}  // namespace qnc
