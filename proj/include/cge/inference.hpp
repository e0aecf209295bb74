#pragma once

#include "cge/dataset.hpp"
#include "cge/estimator.hpp"
#include "cge/smoother.hpp"

#include <Eigen/Dense>

#include <optional>
#include <utility>
#include <vector>

namespace cge {

// Wald inference on beta with the fitted effects held fixed as offsets (a
// naive approximation: effect estimation error is ignored).
struct InferenceResult {
    Eigen::MatrixXd cov_beta;
    Eigen::VectorXd se;
    std::vector<std::pair<double, double>> intervals;
    double level = 0.95;
};

// Inverse of sum_i (-d2_i) x_i x_i' at beta-hat; for gaussian psi (X'X)^-1.
Eigen::MatrixXd covariance_beta(const Dataset& ds, const FittedModel& model);

// Same, for an arbitrary beta/psi and per-observation offset.
Eigen::MatrixXd covariance_beta(const Dataset& ds, const Eigen::VectorXd& beta, double psi,
                                const Eigen::VectorXd& offset);

// beta_k +- z_{(1+level)/2} se_k. Throws ConfigError unless 0 < level < 1.
std::vector<std::pair<double, double>> confidence_intervals(const Eigen::VectorXd& beta,
                                                            const Eigen::MatrixXd& cov, double level);

InferenceResult infer(const Dataset& ds, const FittedModel& model, double level = 0.95);

struct Prediction {
    double mean;
    int category;       // rounded predictive mean for ordered probit, else 0
    bool unknown_level; // some way used its centre for an unseen level
};

// Mean-response predictions for new rows. ways[k][r] is a level code or -1
// for an unseen level; with allow_unknown an unseen level takes its way's
// level-averaged effect (zero deviation from the centre), otherwise
// PredictError. Smoothed level effects are used when given.
std::vector<Prediction> predict(const FittedModel& model, const SmoothedEffects* smoothed,
                                const Eigen::MatrixXd& X, const std::vector<std::vector<int>>& ways,
                                bool allow_unknown = false,
                                const std::vector<std::string>& way_names = {});

// Round half away from zero, clamped to 1..n_categories.
int round_category(double mean, int n_categories);

}  // namespace cge
