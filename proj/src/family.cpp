#include "cge/family.hpp"

#include "cge/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace cge {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_integral(double y) { return std::isfinite(y) && std::floor(y) == y; }

void check_psi(const FamilySpec& fam, double psi) {
    if (fam.kind == FamilyKind::gaussian) {
        if (!(psi > 0.0)) throw ConfigError("gaussian dispersion must be positive");
    } else if (psi != 1.0) {
        throw ConfigError("dispersion must be 1 for family " + to_string(fam.kind));
    }
}

// x * phi(x), with the convention 0 at +-inf.
double x_pdf(double x) { return std::isfinite(x) ? x * normal_pdf(x) : 0.0; }

struct OrderedTerms {
    double upper;  // c_y - eta
    double lower;  // c_{y-1} - eta
    double prob;
};

OrderedTerms ordered_terms(const std::vector<double>& cuts, int y, double eta) {
    const int K = static_cast<int>(cuts.size()) + 1;
    OrderedTerms t;
    t.upper = (y == K) ? kInf : cuts[y - 1] - eta;
    t.lower = (y == 1) ? -kInf : cuts[y - 2] - eta;
    t.prob = category_probability(cuts, y, eta);
    return t;
}

}  // namespace

int FamilySpec::n_categories() const {
    return kind == FamilyKind::ordered_probit ? static_cast<int>(thresholds.size()) + 1 : 0;
}

void FamilySpec::validate() const {
    if (kind != FamilyKind::ordered_probit) {
        if (!thresholds.empty())
            throw ConfigError("thresholds are only valid for the ordered_probit family");
        return;
    }
    if (thresholds.empty())
        throw ConfigError("ordered_probit requires at least one threshold");
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
        if (!std::isfinite(thresholds[k]))
            throw ConfigError("threshold " + std::to_string(k + 1) + " is not finite");
        if (k > 0 && !(thresholds[k] > thresholds[k - 1]))
            throw ConfigError("thresholds must be strictly increasing (c_" + std::to_string(k) +
                              " >= c_" + std::to_string(k + 1) + ")");
    }
}

std::string to_string(FamilyKind kind) {
    switch (kind) {
    case FamilyKind::gaussian: return "gaussian";
    case FamilyKind::bernoulli_logit: return "logistic";
    case FamilyKind::poisson_log: return "poisson";
    case FamilyKind::ordered_probit: return "ordered-probit";
    }
    return "unknown";
}

FamilyKind parse_family_kind(std::string_view name) {
    if (name == "gaussian" || name == "normal") return FamilyKind::gaussian;
    if (name == "logistic" || name == "bernoulli_logit" || name == "binomial")
        return FamilyKind::bernoulli_logit;
    if (name == "poisson" || name == "poisson_log") return FamilyKind::poisson_log;
    if (name == "ordered-probit" || name == "ordered_probit") return FamilyKind::ordered_probit;
    throw ConfigError("unknown family '" + std::string(name) + "'");
}

double normal_pdf(double x) {
    if (!std::isfinite(x)) return 0.0;
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -kInf;
        if (p == 1.0) return kInf;
        throw DomainError("normal_quantile: probability outside [0, 1]");
    }
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double category_probability(const std::vector<double>& cuts, int category, double eta) {
    const int K = static_cast<int>(cuts.size()) + 1;
    const double u = (category == K) ? kInf : cuts[category - 1] - eta;
    const double l = (category == 1) ? -kInf : cuts[category - 2] - eta;
    if (l >= 0.0) return normal_sf(l) - normal_sf(u);
    if (u <= 0.0) return normal_cdf(u) - normal_cdf(l);
    return 1.0 - normal_cdf(l) - normal_sf(u);
}

void check_response(const FamilySpec& fam, double y, std::ptrdiff_t obs) {
    auto fail = [&](const std::string& msg) {
        std::string where = obs >= 0 ? " at observation " + std::to_string(obs) : "";
        throw DomainError(msg + where);
    };
    switch (fam.kind) {
    case FamilyKind::gaussian:
        if (!std::isfinite(y)) fail("gaussian response must be finite");
        break;
    case FamilyKind::bernoulli_logit:
        if (y != 0.0 && y != 1.0) fail("logistic response must be 0 or 1");
        break;
    case FamilyKind::poisson_log:
        if (!is_integral(y) || y < 0.0) fail("poisson response must be a non-negative integer");
        break;
    case FamilyKind::ordered_probit:
        if (!is_integral(y) || y < 1.0 || y > fam.n_categories())
            fail("ordered response must be an integer in 1.." + std::to_string(fam.n_categories()));
        break;
    }
}

double log_density(const FamilySpec& fam, double y, double eta, double psi,
                   std::size_t* floor_count) {
    check_psi(fam, psi);
    if (fam.kind == FamilyKind::ordered_probit) fam.validate();
    check_response(fam, y);
    switch (fam.kind) {
    case FamilyKind::gaussian: {
        const double r = y - eta;
        return -0.5 * std::log(2.0 * std::numbers::pi * psi) - 0.5 * r * r / psi;
    }
    case FamilyKind::bernoulli_logit: {
        // y*eta - log(1 + e^eta)
        const double softplus = eta > 0.0 ? eta + std::log1p(std::exp(-eta))
                                          : std::log1p(std::exp(eta));
        return y * eta - softplus;
    }
    case FamilyKind::poisson_log:
        return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
    case FamilyKind::ordered_probit: {
        double p = category_probability(fam.thresholds, static_cast<int>(y), eta);
        if (!(p >= kProbabilityFloor)) {
            p = kProbabilityFloor;
            if (floor_count) ++*floor_count;
        }
        return std::log(p);
    }
    }
    return 0.0;
}

EtaDerivatives eta_derivatives(const FamilySpec& fam, double y, double eta, double psi,
                               std::ptrdiff_t obs) {
    check_psi(fam, psi);
    if (fam.kind == FamilyKind::ordered_probit) fam.validate();
    check_response(fam, y, obs);
    switch (fam.kind) {
    case FamilyKind::gaussian:
        return {(y - eta) / psi, -1.0 / psi};
    case FamilyKind::bernoulli_logit: {
        const double mu = 1.0 / (1.0 + std::exp(-eta));
        return {y - mu, -mu * (1.0 - mu)};
    }
    case FamilyKind::poisson_log: {
        const double mu = std::exp(eta);
        return {y - mu, -mu};
    }
    case FamilyKind::ordered_probit: {
        const OrderedTerms t = ordered_terms(fam.thresholds, static_cast<int>(y), eta);
        if (!(t.prob >= kProbabilityFloor))
            throw NumericError("vanishing ordered category probability", obs);
        const double u0 = (normal_pdf(t.lower) - normal_pdf(t.upper)) / t.prob;
        const double u1 = (x_pdf(t.upper) - x_pdf(t.lower)) / t.prob;
        return {u0, -(u0 * u0 + u1)};
    }
    }
    return {0.0, 0.0};
}

double d1_eta(const FamilySpec& fam, double y, double eta, double psi, std::ptrdiff_t obs) {
    return eta_derivatives(fam, y, eta, psi, obs).d1;
}

double d2_eta(const FamilySpec& fam, double y, double eta, double psi, std::ptrdiff_t obs) {
    return eta_derivatives(fam, y, eta, psi, obs).d2;
}

double mean_response(const FamilySpec& fam, double eta) {
    switch (fam.kind) {
    case FamilyKind::gaussian: return eta;
    case FamilyKind::bernoulli_logit: return 1.0 / (1.0 + std::exp(-eta));
    case FamilyKind::poisson_log: return std::exp(eta);
    case FamilyKind::ordered_probit: {
        double mean = 0.0;
        for (int k = 1; k <= fam.n_categories(); ++k)
            mean += k * category_probability(fam.thresholds, k, eta);
        return mean;
    }
    }
    return 0.0;
}

double null_linear_predictor(const FamilySpec& fam, double mean_y) {
    switch (fam.kind) {
    case FamilyKind::gaussian: return mean_y;
    case FamilyKind::bernoulli_logit: {
        const double p = std::clamp(mean_y, 1e-6, 1.0 - 1e-6);
        return std::log(p / (1.0 - p));
    }
    case FamilyKind::poisson_log: return std::log(std::max(mean_y, 1e-6));
    case FamilyKind::ordered_probit: return 0.0;
    }
    return 0.0;
}

}  // namespace cge
