#include "cge/smoother.hpp"

#include "cge/error.hpp"

#include <cmath>
#include <limits>

namespace cge {

Eigen::MatrixXd pseudo_posterior(const FittedModel& model, const Dataset& ds, const LevelIndex& index,
                                 int way) {
    const auto& alpha = model.alpha[way];
    const Eigen::Index G = alpha.size();
    const int n_k = ds.n_levels[way];
    Eigen::MatrixXd probs(n_k, G);
    Eigen::VectorXd logw(G);
    std::vector<double> base;

    for (int l = 0; l < n_k; ++l) {
        const auto& members = index.of(way, l);
        base.resize(members.size());
        for (std::size_t t = 0; t < members.size(); ++t) {
            const int i = members[t];
            double b = ds.X.cols() ? ds.X.row(i).dot(model.beta) : 0.0;
            for (int k = 0; k < ds.n_ways(); ++k)
                if (k != way) b += model.level_effect(k, ds.ways[k][i]);
            base[t] = b;
        }
        for (Eigen::Index g = 0; g < G; ++g) {
            double s = 0.0;
            for (std::size_t t = 0; t < members.size(); ++t)
                s += log_density(ds.family, ds.y[members[t]], base[t] + alpha[g], model.psi);
            logw[g] = s;
        }
        const double mx = logw.maxCoeff();
        Eigen::VectorXd w = (logw.array() - mx).exp();
        probs.row(l) = (w / w.sum()).transpose();
    }
    return probs;
}

SmoothedEffects smooth_effects(const FittedModel& model, const Dataset& ds, const LevelIndex& index) {
    model.check_compatible(ds);
    SmoothedEffects out;
    for (int k = 0; k < ds.n_ways(); ++k) {
        Eigen::MatrixXd probs = pseudo_posterior(model, ds, index, k);
        out.level_effects.push_back(probs * model.alpha[k]);
        out.probabilities.push_back(std::move(probs));
    }
    return out;
}

BetaFit fit_beta_with_offset(const Dataset& ds, const Eigen::VectorXd& offset, const Eigen::VectorXd& start,
                             double grad_tol, int max_iter) {
    const Eigen::Index p = ds.X.cols();
    const double N = static_cast<double>(ds.n_obs());
    BetaFit out;
    if (ds.family.kind == FamilyKind::gaussian) {
        out.beta = Eigen::VectorXd::Zero(p);
        if (p > 0) {
            Eigen::LLT<Eigen::MatrixXd> llt(ds.X.transpose() * ds.X);
            if (llt.info() != Eigen::Success) {
                check_design_rank(ds);
                throw RankError("normal equations are singular");
            }
            out.beta = llt.solve(ds.X.transpose() * (ds.y - offset));
        }
        Eigen::VectorXd resid = ds.y - offset;
        if (p > 0) resid.noalias() -= ds.X * out.beta;
        out.psi = std::max(resid.squaredNorm() / N, kPsiFloor);
        return out;
    }
    out.beta = start.size() == p ? start : Eigen::VectorXd::Zero(p);
    if (p == 0) return out;

    auto loglik = [&](const Eigen::VectorXd& b) { return log_likelihood(ds, ds.X * b + offset, 1.0); };
    double f = loglik(out.beta);
    Eigen::VectorXd d1(static_cast<Eigen::Index>(ds.n_obs())), w(static_cast<Eigen::Index>(ds.n_obs()));
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd eta = ds.X * out.beta + offset;
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            const auto d = eta_derivatives(ds.family, ds.y[i], eta[i], 1.0, i);
            d1[i] = d.d1;
            w[i] = -d.d2;
        }
        const Eigen::VectorXd grad = ds.X.transpose() * d1;
        out.iterations = it;
        if (grad.cwiseAbs().maxCoeff() < grad_tol) break;
        Eigen::LLT<Eigen::MatrixXd> llt(ds.X.transpose() * w.asDiagonal() * ds.X);
        if (llt.info() != Eigen::Success) {
            check_design_rank(ds);
            throw RankError("information matrix for beta is singular");
        }
        const Eigen::VectorXd step = llt.solve(grad);
        double t = 1.0;
        bool accepted = false;
        for (int h = 0; h < 60; ++h, t *= 0.5) {
            const Eigen::VectorXd trial = out.beta + t * step;
            const double ft = loglik(trial);
            if (ft >= f) {
                out.beta = trial;
                f = ft;
                accepted = true;
                break;
            }
        }
        // Gradient is at rounding level relative to the objective.
        if (!accepted) break;
    }
    return out;
}

BetaFit reestimate_beta(const Dataset& ds, const SmoothedEffects& smoothed, const Eigen::VectorXd& start) {
    const auto N = static_cast<Eigen::Index>(ds.n_obs());
    Eigen::VectorXd offset = Eigen::VectorXd::Zero(N);
    for (int k = 0; k < ds.n_ways(); ++k) {
        const auto& eff = smoothed.level_effects[k];
        for (Eigen::Index i = 0; i < N; ++i) offset[i] += eff[ds.ways[k][i]];
    }
    return fit_beta_with_offset(ds, offset, start);
}

SmoothedEffects smooth(const FittedModel& model, const Dataset& ds) {
    const LevelIndex index = build_level_index(ds);
    SmoothedEffects out = smooth_effects(model, ds, index);
    const BetaFit bf = reestimate_beta(ds, out, model.beta);
    out.beta_smoothed = bf.beta;
    out.psi_smoothed = bf.psi;
    return out;
}

}  // namespace cge
