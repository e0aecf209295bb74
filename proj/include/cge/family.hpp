#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cge {

enum class FamilyKind { gaussian, bernoulli_logit, poisson_log, ordered_probit };

// Outcome distribution with its canonical link. Ordered probit carries the
// interior cut points c_1 < ... < c_{K-1}; c_0 = -inf and c_K = +inf are implicit.
struct FamilySpec {
    FamilyKind kind = FamilyKind::gaussian;
    std::vector<double> thresholds;

    static FamilySpec gaussian() { return {FamilyKind::gaussian, {}}; }
    static FamilySpec logistic() { return {FamilyKind::bernoulli_logit, {}}; }
    static FamilySpec poisson() { return {FamilyKind::poisson_log, {}}; }
    static FamilySpec ordered_probit(std::vector<double> cuts) {
        return {FamilyKind::ordered_probit, std::move(cuts)};
    }

    bool has_dispersion() const { return kind == FamilyKind::gaussian; }
    // Number of ordered categories (thresholds + 1); 0 for other families.
    int n_categories() const;

    // Throws ConfigError on non-increasing or misplaced thresholds.
    void validate() const;
};

std::string to_string(FamilyKind kind);
// Accepts the CLI spellings (gaussian, logistic, poisson, ordered-probit) and
// the enum names.
FamilyKind parse_family_kind(std::string_view name);

double normal_pdf(double x);
double normal_cdf(double x);
// Upper tail 1 - Phi(x), computed without cancellation.
double normal_sf(double x);
double normal_quantile(double p);

// Smallest category probability accepted before log() is floored.
inline constexpr double kProbabilityFloor = 1e-300;

// P(y = category | eta) for the ordered probit, taking the difference on the
// side of the smaller tail.
double category_probability(const std::vector<double>& thresholds, int category, double eta);

// Throws DomainError if `y` is outside the support of `fam`.
void check_response(const FamilySpec& fam, double y, std::ptrdiff_t obs = -1);

// Full log density of y given linear predictor eta, including normalizing
// constants. psi is the gaussian variance and must be 1 for other families.
// When an ordered-probit category probability underflows it is floored at
// kProbabilityFloor and `*floor_count` (if given) is incremented.
double log_density(const FamilySpec& fam, double y, double eta, double psi,
                   std::size_t* floor_count = nullptr);

struct EtaDerivatives {
    double d1;
    double d2;
};

// First and second derivatives of log_density in eta. `obs` only labels
// errors. Ordered-probit categories with probability below kProbabilityFloor
// raise NumericError.
EtaDerivatives eta_derivatives(const FamilySpec& fam, double y, double eta, double psi,
                               std::ptrdiff_t obs = -1);
double d1_eta(const FamilySpec& fam, double y, double eta, double psi, std::ptrdiff_t obs = -1);
double d2_eta(const FamilySpec& fam, double y, double eta, double psi, std::ptrdiff_t obs = -1);

// E[y | eta]. For ordered probit this is sum_k k P(y = k | eta).
double mean_response(const FamilySpec& fam, double eta);

// Starting value for the linear predictor under a model with no covariates or
// effects (grand mean, empirical logit, log mean, or 0 for ordered probit).
double null_linear_predictor(const FamilySpec& fam, double mean_y);

}  // namespace cge
