#include "cge/inference.hpp"

#include "cge/error.hpp"

#include <algorithm>
#include <cmath>

namespace cge {

Eigen::MatrixXd covariance_beta(const Dataset& ds, const Eigen::VectorXd& beta, double psi,
                                const Eigen::VectorXd& offset) {
    const Eigen::Index p = ds.X.cols();
    if (p == 0) return Eigen::MatrixXd(0, 0);
    Eigen::MatrixXd info;
    if (ds.family.kind == FamilyKind::gaussian) {
        info = ds.X.transpose() * ds.X / psi;
    } else {
        const Eigen::VectorXd eta = ds.X * beta + offset;
        Eigen::VectorXd w(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) w[i] = -d2_eta(ds.family, ds.y[i], eta[i], psi, i);
        info = ds.X.transpose() * w.asDiagonal() * ds.X;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) {
        check_design_rank(ds);
        throw RankError("information matrix for beta is singular");
    }
    Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(p, p));
    return 0.5 * (cov + cov.transpose());
}

Eigen::MatrixXd covariance_beta(const Dataset& ds, const FittedModel& model) {
    model.check_compatible(ds);
    return covariance_beta(ds, model.beta, model.psi, effect_offsets(model, ds));
}

std::vector<std::pair<double, double>> confidence_intervals(const Eigen::VectorXd& beta,
                                                            const Eigen::MatrixXd& cov, double level) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie strictly between 0 and 1");
    const double z = normal_quantile(0.5 * (1.0 + level));
    std::vector<std::pair<double, double>> out;
    for (Eigen::Index k = 0; k < beta.size(); ++k) {
        const double half = z * std::sqrt(cov(k, k));
        out.emplace_back(beta[k] - half, beta[k] + half);
    }
    return out;
}

InferenceResult infer(const Dataset& ds, const FittedModel& model, double level) {
    InferenceResult r;
    r.level = level;
    r.cov_beta = covariance_beta(ds, model);
    r.se = r.cov_beta.diagonal().cwiseSqrt();
    r.intervals = confidence_intervals(model.beta, r.cov_beta, level);
    return r;
}

int round_category(double mean, int n_categories) {
    const double r = std::round(mean);  // halves away from zero
    return static_cast<int>(std::clamp(r, 1.0, static_cast<double>(n_categories)));
}

std::vector<Prediction> predict(const FittedModel& model, const SmoothedEffects* smoothed, const Eigen::MatrixXd& X,
                                const std::vector<std::vector<int>>& ways, bool allow_unknown,
                                const std::vector<std::string>& way_names) {
    if (X.cols() != model.beta.size())
        throw PredictError("rows have " + std::to_string(X.cols()) + " covariates, model has " +
                           std::to_string(model.beta.size()));
    if (static_cast<int>(ways.size()) != model.n_ways())
        throw PredictError("rows have " + std::to_string(ways.size()) + " ways, model has " +
                           std::to_string(model.n_ways()));
    const Eigen::Index R = X.rows();
    std::vector<Prediction> out(static_cast<std::size_t>(R));
    const Eigen::VectorXd xb = X.cols() ? Eigen::VectorXd(X * model.beta) : Eigen::VectorXd::Zero(R);
    // An unseen level sits at its way's centre: zero deviation from the
    // level-averaged effect, which carries that way's share of the intercept.
    const std::vector<double> centre = way_means(model.alpha, model.gamma);
    for (Eigen::Index r = 0; r < R; ++r) {
        double eta = xb[r];
        bool unknown = false;
        for (int k = 0; k < model.n_ways(); ++k) {
            const int code = ways[k][r];
            if (code < 0 || code >= static_cast<int>(model.gamma[k].size())) {
                if (!allow_unknown) {
                    const std::string name =
                        static_cast<std::size_t>(k) < way_names.size() ? way_names[k] : "way " + std::to_string(k + 1);
                    throw PredictError("row " + std::to_string(r + 1) + " references an unknown level of " + name);
                }
                unknown = true;
                eta += centre[k];
                continue;
            }
            eta += smoothed ? smoothed->level_effects[k][code] : model.level_effect(k, code);
        }
        Prediction p;
        p.mean = mean_response(model.family, eta);
        p.category = model.family.kind == FamilyKind::ordered_probit
                         ? round_category(p.mean, model.family.n_categories())
                         : 0;
        p.unknown_level = unknown;
        out[static_cast<std::size_t>(r)] = p;
    }
    return out;
}

}  // namespace cge
