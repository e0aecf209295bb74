#pragma once

#include "cge/dataset.hpp"
#include "cge/family.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cge {

enum class InitStrategy { quantile, random };

// exact: each level maximizes Q including the change in penalty.
// profiled: each level maximizes its likelihood, then every way is shifted so
// the way means coincide (eta unchanged, penalty zero).
enum class AssignmentRule { profiled, exact };

std::string to_string(InitStrategy s);
InitStrategy parse_init_strategy(const std::string& name);

struct FitConfig {
    // G_k per way. Ignored when auto_groups is set, in which case
    // G_k = floor(sqrt(n_k)).
    std::vector<int> group_counts;
    bool auto_groups = false;
    double lambda = 100.0;
    int max_iter = 500;
    double tol_obj = 1e-8;
    int max_halvings = 30;
    std::uint64_t seed = 0;
    InitStrategy init = InitStrategy::quantile;
    int n_starts = 1;
    // Take a single safeguarded Newton step per block instead of maximizing
    // each block to convergence.
    bool one_step_newton = false;
    AssignmentRule assignment_rule = AssignmentRule::profiled;

    // Resolved group counts for `ds`. Throws ConfigError on G_k < 1,
    // G_k > n_k or a count/way mismatch.
    std::vector<int> resolve_groups(const Dataset& ds) const;
    void validate() const;
};

// Auto rule: floor(sqrt(n)), at least 1.
int default_group_count(int n_levels);

struct FitWarnings {
    std::size_t underflow_floors = 0;  // ordered-probit probabilities floored
    std::size_t empty_groups = 0;      // group-effect updates skipped for lack of members
    std::size_t psi_floors = 0;        // gaussian variance floored at kPsiFloor
};

inline constexpr double kPsiFloor = 1e-12;

// State Psi = (beta, psi, alpha, gamma) plus fit diagnostics. Assignments are
// 0-based group indices; gamma[k][l] is the group of level l of way k.
struct FittedModel {
    FamilySpec family;
    Eigen::VectorXd beta;
    double psi = 1.0;
    std::vector<Eigen::VectorXd> alpha;
    std::vector<std::vector<int>> gamma;
    double lambda = 100.0;
    // trace[0] is the objective at the starting state; one entry per sweep after.
    std::vector<double> objective_trace;
    bool converged = false;
    int sweeps = 0;
    int best_start = 0;
    FitWarnings warnings;

    int n_ways() const { return static_cast<int>(alpha.size()); }
    double level_effect(int way, int level) const { return alpha[way][gamma[way][level]]; }
    // Throws ConfigError when shapes disagree with `ds`.
    void check_compatible(const Dataset& ds) const;
};

// Level-averaged assigned effect of each way: (1/n_k) sum_l alpha_k[gamma_k[l]].
std::vector<double> way_means(const std::vector<Eigen::VectorXd>& alpha,
                              const std::vector<std::vector<int>>& gamma);

// Location-normalizing penalty (lambda/2) sum_{k<K} (mean_k - mean_{k+1})^2.
double penalty(const std::vector<Eigen::VectorXd>& alpha,
               const std::vector<std::vector<int>>& gamma, double lambda);

// sum_k alpha_k[gamma_k[z_{k,i}]] for every observation.
Eigen::VectorXd effect_offsets(const FittedModel& model, const Dataset& ds);
Eigen::VectorXd linear_predictor(const FittedModel& model, const Dataset& ds);

// Sum of log densities at the given linear predictor.
double log_likelihood(const Dataset& ds, const Eigen::VectorXd& eta, double psi,
                      std::size_t* floors = nullptr);

// Q = (1/N) sum_i log f(y_i | eta_i, psi) - penalty.
double objective(const FittedModel& model, const Dataset& ds, std::size_t* floors = nullptr);

// Throws RankError naming the first covariate that is (numerically) a linear
// combination of earlier ones.
void check_design_rank(const Dataset& ds);

struct RegressionUpdate {
    Eigen::VectorXd beta;
    double psi;
};

// Block 1: (beta, psi) with all effects held as offsets. Gaussian uses the
// least-squares closed form; other families run safeguarded Newton.
RegressionUpdate update_regression(const FittedModel& model, const Dataset& ds,
                                   const FitConfig& cfg = {}, FitWarnings* warnings = nullptr);

// Common shift d of the linear predictor maximizing the log likelihood with
// everything else fixed. The caller adds d/K to every group effect of every
// way, which leaves the way means' differences, and so the penalty, unchanged.
double update_location(const FittedModel& model, const Dataset& ds, const FitConfig& cfg = {},
                       FitWarnings* warnings = nullptr);

// Quadratic form -(weight/2)(a_g - center)^2 that the penalty contributes to
// the summed log likelihood (i.e. N * penalty) as a function of one group
// effect, the remaining effects held at their current values. weight is 0 when
// K = 1 or the group is empty.
struct PenaltyQuadratic {
    double weight = 0.0;
    double center = 0.0;
};
PenaltyQuadratic group_penalty_quadratic(const FittedModel& model, std::size_t n_obs, int way,
                                         int group);

// Block 2/4: maximizer of the member log likelihood plus the penalty
// quadratic for one group effect. Empty groups keep their value.
double update_group_effect(const FittedModel& model, const Dataset& ds, const LevelIndex& index,
                           int way, int group, const FitConfig& cfg = {},
                           FitWarnings* warnings = nullptr);

// All non-empty group effects of one way maximized jointly (member log
// likelihoods plus the way's penalty terms). Empty groups keep their value.
Eigen::VectorXd update_way_effects(const FittedModel& model, const Dataset& ds, const LevelIndex& index,
                                   int way, const FitConfig& cfg = {}, FitWarnings* warnings = nullptr);

// Block 3/5: sequential (ascending level) argmax of each level's group,
// including the exact change in penalty; ties go to the smaller group.
std::vector<int> update_assignments(const FittedModel& model, const Dataset& ds,
                                    const LevelIndex& index, int way,
                                    FitWarnings* warnings = nullptr);

// Likelihood-only argmax per level (ties to the smaller group).
std::vector<int> update_assignments_profiled(const FittedModel& model, const Dataset& ds,
                                             const LevelIndex& index, int way,
                                             FitWarnings* warnings = nullptr);

// Shifts every way's effects so all way means equal their average. The
// shifts sum to zero, so every linear predictor is unchanged.
std::vector<Eigen::VectorXd> equalize_way_means(const std::vector<Eigen::VectorXd>& alpha,
                                                const std::vector<std::vector<int>>& gamma);

enum class BlockKind { regression, location, group_effect, way_effects, assignments };

struct BlockEvent {
    int sweep;
    BlockKind kind;
    int way;    // -1 for regression and location
    int group;  // -1 unless group_effect
    double objective_before;
    double objective_after;
};

// Called after every block update when passed to fit(); objective values are
// computed only when an observer is present.
using FitObserver = std::function<void(const BlockEvent&)>;

// Starting state for one start. Start 0 uses cfg.init; later starts are random.
FittedModel initialize(const Dataset& ds, const LevelIndex& index, const std::vector<int>& groups,
                       InitStrategy strategy, std::uint64_t seed, double lambda);

// Blockwise coordinate ascent. With n_starts > 1 returns the start with the
// largest final objective. Groups are relabelled so each alpha_k ascends.
FittedModel fit(const Dataset& ds, const FitConfig& cfg, const FitObserver& observer = {});

// Continues the ascent from an existing state (cfg.lambda replaces the
// state's lambda; group counts come from the state).
FittedModel fit_from(const Dataset& ds, const FitConfig& cfg, FittedModel start,
                     const FitObserver& observer = {});

// Sorts each alpha_k ascending and relabels gamma_k to match. Objective is
// unchanged.
void canonicalize_groups(FittedModel& model);

// sum_k (1/n_k) sum_l alpha_k[gamma_k[l]].
double recover_intercept(const FittedModel& model);

struct OrderedNullFit {
    std::vector<double> thresholds;
    Eigen::VectorXd beta;
    double log_likelihood = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Ordered probit without effects, maximized jointly in (thresholds, beta).
// Throws EstimationError if a category in 1..n_categories is absent.
OrderedNullFit fit_ordered_null(const Dataset& ds, int n_categories, int max_iter = 200,
                                double grad_tol = 1e-9);

}  // namespace cge
