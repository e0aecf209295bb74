#pragma once

#include "cge/dataset.hpp"
#include "cge/estimator.hpp"

#include <Eigen/Dense>

#include <vector>

namespace cge {

// Post-hoc soft group memberships. probabilities[k] is n_k x G_k (rows sum
// to one); level_effects[k][l] = sum_g probabilities[k](l, g) * alpha_k[g].
struct SmoothedEffects {
    std::vector<Eigen::MatrixXd> probabilities;
    std::vector<Eigen::VectorXd> level_effects;
    Eigen::VectorXd beta_smoothed;
    double psi_smoothed = 1.0;
};

// Pseudo-posterior group probabilities for every level of `way`: each row is
// the normalized product of member likelihoods under each candidate group
// effect, other ways at their assigned point effects. Computed in log space.
Eigen::MatrixXd pseudo_posterior(const FittedModel& model, const Dataset& ds, const LevelIndex& index,
                                 int way);

// Probabilities and smoothed level effects for all ways (ascending), beta
// left empty.
SmoothedEffects smooth_effects(const FittedModel& model, const Dataset& ds, const LevelIndex& index);

struct BetaFit {
    Eigen::VectorXd beta;
    double psi = 1.0;
    int iterations = 0;
};

// Maximizes sum_i log f(y_i | x_i'beta + offset_i) in beta (and psi for
// gaussian, closed form). Newton runs until the gradient sup-norm is below
// grad_tol. `start` seeds the iteration for non-gaussian families.
BetaFit fit_beta_with_offset(const Dataset& ds, const Eigen::VectorXd& offset, const Eigen::VectorXd& start,
                             double grad_tol = 1e-10, int max_iter = 200);

// Re-estimates beta (and psi) with the smoothed level effects as offsets.
BetaFit reestimate_beta(const Dataset& ds, const SmoothedEffects& smoothed, const Eigen::VectorXd& start);

// smooth_effects followed by reestimate_beta, with the fitted beta as start.
SmoothedEffects smooth(const FittedModel& model, const Dataset& ds);

}  // namespace cge
