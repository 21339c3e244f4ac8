#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace qnc {

// Static description of an open multiclass queueing network. Classes and
// stations are 0-based here; user-facing text keeps the 1-based names.
struct NetworkSpec {
    std::string name;
    int num_stations = 0;
    int num_classes = 0;
    std::vector<int> station_of_class;
    std::vector<double> arrival_rates;
    std::vector<double> service_rates;
    Eigen::MatrixXd routing;  // routing(j, k) = probability class j becomes class k

    // Throws InvalidParameter or OpenNetworkViolation.
    void validate() const;

    // Classes served at each station, ascending.
    std::vector<std::vector<int>> classes_at_stations() const;

    // Sum of all arrival and service rates.
    double uniformization_rate() const;
};

struct TrafficSolution {
    Eigen::VectorXd effective_rates;  // q
    Eigen::VectorXd loads;            // rho per station
    bool stable = false;              // every load strictly below one
};

TrafficSolution solve_traffic(const NetworkSpec& spec);

enum class Regime { IL, BL, IM, BM, IH, BH };

Regime parse_regime(const std::string& s);
std::string regime_name(Regime r);

NetworkSpec preset_crisscross(Regime regime);

// Serpentine network with 3L classes, L in 2..7.
NetworkSpec preset_extended_six_class(int num_stations);

// Text format, one directive per line, '#' starts a comment:
//   stations 2
//   classes 3
//   station_of_class 1 2 1
//   arrival 0.3 0 0.3
//   service 2 1.5 2
//   route 1 2 1.0        (from-class to-class probability; repeatable)
NetworkSpec parse_network_text(const std::string& text, const std::string& name = "custom");
NetworkSpec load_network_file(const std::string& path);

}  // namespace qnc
