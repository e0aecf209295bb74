// Ordered probit without classification effects. Thresholds are
// parameterized as theta_0 = c_1 and theta_m = log(c_{m+1} - c_m), which keeps
// them strictly increasing for any theta.

#include "cge/error.hpp"
#include "cge/estimator.hpp"

#include <cmath>
#include <limits>

namespace cge {

namespace {

std::vector<double> thresholds_from(const Eigen::VectorXd& theta, int n_cuts) {
    std::vector<double> c(n_cuts);
    c[0] = theta[0];
    for (int j = 1; j < n_cuts; ++j) c[j] = c[j - 1] + std::exp(theta[j]);
    return c;
}

struct NullEval {
    double loglik = 0.0;
    Eigen::VectorXd grad;  // in (theta, beta)
    Eigen::MatrixXd hess;
};

double null_loglik(const Dataset& ds, const std::vector<double>& cuts, const Eigen::VectorXd& beta) {
    double s = 0.0;
    for (std::size_t i = 0; i < ds.n_obs(); ++i) {
        const double eta = ds.X.cols() ? ds.X.row(static_cast<Eigen::Index>(i)).dot(beta) : 0.0;
        const double p = category_probability(cuts, static_cast<int>(ds.y[i]), eta);
        if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
        s += std::log(p);
    }
    return s;
}

// Log likelihood with gradient and Hessian in (theta, beta).
NullEval null_eval(const Dataset& ds, const Eigen::VectorXd& theta, const Eigen::VectorXd& beta, int n_cuts) {
    const auto cuts = thresholds_from(theta, n_cuts);
    const Eigen::Index p = ds.X.cols();
    const Eigen::Index dim_c = n_cuts;

    Eigen::VectorXd g_c = Eigen::VectorXd::Zero(dim_c);
    Eigen::VectorXd g_b = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd h_cc = Eigen::MatrixXd::Zero(dim_c, dim_c);
    Eigen::MatrixXd h_cb = Eigen::MatrixXd::Zero(dim_c, p);
    Eigen::MatrixXd h_bb = Eigen::MatrixXd::Zero(p, p);
    double ll = 0.0;
    const int K = n_cuts + 1;
    const double inf = std::numeric_limits<double>::infinity();

    for (std::size_t i = 0; i < ds.n_obs(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        const int y = static_cast<int>(ds.y[i]);
        const double eta = p ? ds.X.row(row).dot(beta) : 0.0;
        const double u = y == K ? inf : cuts[y - 1] - eta;
        const double l = y == 1 ? -inf : cuts[y - 2] - eta;
        const double prob = category_probability(cuts, y, eta);
        if (!(prob >= kProbabilityFloor))
            throw NumericError("vanishing category probability in ordered null fit", row);
        ll += std::log(prob);
        const double A = normal_pdf(u) / prob;  // d/dc_y
        const double B = normal_pdf(l) / prob;  // -d/dc_{y-1}
        const double uA = std::isfinite(u) ? u * A : 0.0;
        const double lB = std::isfinite(l) ? l * B : 0.0;

        const double d_eta = B - A;
        const double d_eta2 = -(d_eta * d_eta + uA - lB);
        const int iu = y - 1;  // index of c_y when y < K
        const int il = y - 2;  // index of c_{y-1} when y > 1
        if (y < K) {
            g_c[iu] += A;
            h_cc(iu, iu) += -uA - A * A;
        }
        if (y > 1) {
            g_c[il] -= B;
            h_cc(il, il) += lB - B * B;
        }
        if (y < K && y > 1) {
            h_cc(iu, il) += A * B;
            h_cc(il, iu) += A * B;
        }
        if (p) {
            const auto x = ds.X.row(row).transpose();
            g_b += d_eta * x;
            h_bb += d_eta2 * x * x.transpose();
            if (y < K) h_cb.row(iu) += (uA - A * (B - A)) * x.transpose();
            if (y > 1) h_cb.row(il) += (-lB + B * (B - A)) * x.transpose();
        }
    }

    // Chain rule to theta: dc_j/dtheta_0 = 1, dc_j/dtheta_m = exp(theta_m) for 1 <= m <= j.
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(dim_c, dim_c);
    for (Eigen::Index j = 0; j < dim_c; ++j) {
        J(j, 0) = 1.0;
        for (Eigen::Index m = 1; m <= j; ++m) J(j, m) = std::exp(theta[m]);
    }
    NullEval out;
    out.loglik = ll;
    out.grad.resize(dim_c + p);
    out.grad.head(dim_c) = J.transpose() * g_c;
    out.grad.tail(p) = g_b;
    out.hess.resize(dim_c + p, dim_c + p);
    Eigen::MatrixXd h_tt = J.transpose() * h_cc * J;
    for (Eigen::Index m = 1; m < dim_c; ++m) h_tt(m, m) += std::exp(theta[m]) * g_c.tail(dim_c - m).sum();
    out.hess.topLeftCorner(dim_c, dim_c) = h_tt;
    out.hess.topRightCorner(dim_c, p) = J.transpose() * h_cb;
    out.hess.bottomLeftCorner(p, dim_c) = out.hess.topRightCorner(dim_c, p).transpose();
    out.hess.bottomRightCorner(p, p) = h_bb;
    return out;
}

}  // namespace

OrderedNullFit fit_ordered_null(const Dataset& ds, int n_categories, int max_iter, double grad_tol) {
    if (n_categories < 2) throw ConfigError("ordered probit needs at least two categories");
    std::vector<double> counts(n_categories, 0.0);
    for (std::size_t i = 0; i < ds.n_obs(); ++i) {
        const double y = ds.y[i];
        if (!(y >= 1.0 && y <= n_categories && std::floor(y) == y))
            throw DomainError("ordered response must be an integer in 1.." + std::to_string(n_categories) +
                              " at observation " + std::to_string(i));
        counts[static_cast<int>(y) - 1] += 1.0;
    }
    for (int k = 0; k < n_categories; ++k)
        if (counts[k] == 0.0)
            throw EstimationError("category " + std::to_string(k + 1) +
                                  " is absent from the data; its threshold is not identified");

    const int n_cuts = n_categories - 1;
    const Eigen::Index p = ds.X.cols();
    if (p > 0) check_design_rank(ds);

    // Start at the probit of the empirical CDF, beta = 0 (the exact optimum when p = 0).
    const double N = static_cast<double>(ds.n_obs());
    std::vector<double> c0(n_cuts);
    double cum = 0.0;
    for (int j = 0; j < n_cuts; ++j) {
        cum += counts[j];
        c0[j] = normal_quantile(cum / N);
    }
    Eigen::VectorXd theta(n_cuts);
    theta[0] = c0[0];
    for (int j = 1; j < n_cuts; ++j) theta[j] = std::log(c0[j] - c0[j - 1]);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);

    OrderedNullFit result;
    auto params_loglik = [&](const Eigen::VectorXd& th, const Eigen::VectorXd& b) {
        return null_loglik(ds, thresholds_from(th, n_cuts), b);
    };

    for (int it = 0; it < max_iter; ++it) {
        const NullEval ev = null_eval(ds, theta, beta, n_cuts);
        result.iterations = it;
        if (ev.grad.cwiseAbs().maxCoeff() < grad_tol * std::max(1.0, N)) {
            result.converged = true;
            break;
        }
        // Newton on -H, with a ridge when the reparameterized Hessian is not
        // negative definite away from the optimum.
        Eigen::MatrixXd info = -ev.hess;
        Eigen::VectorXd step;
        double ridge = 0.0;
        for (int attempt = 0; attempt < 60; ++attempt) {
            Eigen::MatrixXd m = info;
            m.diagonal().array() += ridge;
            Eigen::LLT<Eigen::MatrixXd> llt(m);
            if (llt.info() == Eigen::Success) {
                step = llt.solve(ev.grad);
                break;
            }
            ridge = ridge == 0.0 ? 1e-8 * std::max(1.0, info.diagonal().cwiseAbs().maxCoeff()) : ridge * 10.0;
        }
        if (step.size() == 0) throw RankError("ordered null fit: information matrix is singular");

        double t = 1.0;
        bool accepted = false;
        for (int h = 0; h < 60; ++h, t *= 0.5) {
            const Eigen::VectorXd th = theta + t * step.head(n_cuts);
            const Eigen::VectorXd b = beta + t * step.tail(p);
            if (params_loglik(th, b) >= ev.loglik) {
                theta = th;
                beta = b;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            result.converged = ev.grad.dot(step) < 1e-10 * std::max(1.0, std::fabs(ev.loglik));
            break;
        }
    }
    result.thresholds = thresholds_from(theta, n_cuts);
    result.beta = beta;
    result.log_likelihood = params_loglik(theta, beta);
    return result;
}

}  // namespace cge
