#pragma once

#include "cge/dataset.hpp"
#include "cge/estimator.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cge {

enum class SimDesignKind { two_way_logistic, three_way_poisson, ordered_two_way };
enum class Scenario { s1, s2 };

std::string to_string(SimDesignKind d);
std::string to_string(Scenario s);
SimDesignKind parse_design(const std::string& name);
Scenario parse_scenario(const std::string& name);

struct SimDesign {
    SimDesignKind kind = SimDesignKind::two_way_logistic;
    int N = 5000;
    Scenario scenario = Scenario::s1;
    int replications = 100;
    std::uint64_t seed = 1;
    FitConfig fit;  // group counts default to the floor(sqrt(n_k)) rule
    double level = 0.95;
    int threads = 1;

    void validate() const;
};

struct SimTruth {
    double intercept = 0.0;
    Eigen::VectorXd beta;
    std::vector<Eigen::VectorXd> level_effects;  // per way, per level
    std::vector<double> thresholds;              // ordered design only
};

struct SimData {
    Dataset ds;
    SimTruth truth;
    std::vector<std::string> warnings;
};

// Levels per way used by each design for a given N.
int two_way_levels(int N);    // floor(sqrt(N))
int three_way_levels(int N);  // 2 floor(sqrt(N))

// Draw order (fixed, so a seed pins the data): covariates row by row, way
// indicators way by way, level effects way by way, then responses.
SimData gen_two_way_logistic(int N, Scenario scenario, std::uint64_t seed);
SimData gen_three_way_poisson(int N, Scenario scenario, std::uint64_t seed);
// Two-way ordered probit with five categories (latent normal threshold model).
SimData gen_ordered_two_way(int N, Scenario scenario, std::uint64_t seed);
SimData generate(SimDesignKind kind, int N, Scenario scenario, std::uint64_t seed);

struct ReplicationRecord {
    int replication = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    Eigen::VectorXd beta_hat;
    Eigen::VectorXd se;
    std::vector<int> covered;
    double intercept = 0.0;
    bool converged = false;
    int sweeps = 0;
    double runtime_sec = 0.0;
};

struct SimResult {
    SimDesign design;
    Eigen::VectorXd truth_beta;
    Eigen::VectorXd mse;  // per coefficient
    Eigen::VectorXd cp;   // per coefficient, in [0, 1]
    double mean_mse = 0.0;
    double mean_cp = 0.0;
    double mean_intercept = 0.0;
    double mean_runtime_sec = 0.0;
    int failures = 0;
    std::vector<ReplicationRecord> records;
};

// MSE_k = mean (beta_hat_k - beta_k)^2 and CP_k = mean coverage over the
// successful records, plus their averages over k.
void summarize(SimResult& result);

using ProgressFn = std::function<void(const ReplicationRecord&)>;

// For r = 1..R: generate with seed + r, fit, infer, record. Failed
// replications are kept with ok = false; more than 10% failures throws
// EstimationError.
SimResult run_replications(const SimDesign& design, const ProgressFn& progress = {});

struct OrderedMetrics {
    double mae = 0.0;
    double ac0 = 0.0;
    double ac1 = 0.0;
};

// MAE of predictive means, exact and one-off accuracy of the rounded means.
// n_categories > 0 clamps rounded predictions to 1..n_categories.
OrderedMetrics ordered_metrics(const std::vector<double>& predicted_mean, const std::vector<double>& observed,
                               int n_categories = 0);

struct ValidationSplit {
    OrderedMetrics cge;
    OrderedMetrics baseline;  // ordered probit without effects
};

// Repeated random holdout on one ordered dataset: fit the no-effects model
// for thresholds, fit CGE with them, score the held-out rows with both.
std::vector<ValidationSplit> run_ordered_validation(const Dataset& ds, int splits, double test_fraction,
                                                    std::uint64_t seed, const FitConfig& cfg);

}  // namespace cge
