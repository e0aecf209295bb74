// Independent reference computations used only by the tests. Nothing here
// calls into the library's numerical code.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

inline constexpr double kPi = 3.14159265358979323846;

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi); }
inline double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double ll_gaussian(double y, double eta, double psi) {
    const double r = y - eta;
    return -0.5 * std::log(2.0 * kPi * psi) - r * r / (2.0 * psi);
}
inline double ll_logit(double y, double eta) {
    // log(1 + e^eta) without overflow
    const double softplus = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    return y * eta - softplus;
}
inline double ll_poisson(double y, double eta) { return y * eta - std::exp(eta) - std::lgamma(y + 1.0); }
inline double ll_ordered(const std::vector<double>& c, int y, double eta) {
    const double hi = y - 1 < static_cast<int>(c.size()) ? Phi(c[y - 1] - eta) : 1.0;
    const double lo = y >= 2 ? Phi(c[y - 2] - eta) : 0.0;
    return std::log(hi - lo);
}

// Maximizer of a unimodal function on [lo, hi].
inline double golden_max(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-12) {
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double x1 = b - r * (b - a), x2 = a + r * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > tol * (1.0 + std::fabs(a) + std::fabs(b))) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
    }
    return 0.5 * (a + b);
}

// Coordinate-wise golden-section ascent: a derivative-free maximizer for
// smooth concave functions of a few variables.
inline Eigen::VectorXd coordinate_golden_max(const std::function<double(const Eigen::VectorXd&)>& f,
                                             Eigen::VectorXd x, double radius, int rounds = 200) {
    for (int r = 0; r < rounds; ++r) {
        const Eigen::VectorXd before = x;
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            auto line = [&](double v) {
                Eigen::VectorXd z = x;
                z[k] = v;
                return f(z);
            };
            x[k] = golden_max(line, x[k] - radius, x[k] + radius, 1e-14);
        }
        if ((x - before).cwiseAbs().maxCoeff() < 1e-12) break;
        radius = std::max(1e-6, std::min(radius, 10.0 * (x - before).cwiseAbs().maxCoeff()));
    }
    return x;
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                  double h = 1e-4) {
    const Eigen::Index n = x.size();
    Eigen::MatrixXd H(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            Eigen::VectorXd pp = x, pm = x, mp = x, mm = x;
            pp[i] += h; pp[j] += h;
            pm[i] += h; pm[j] -= h;
            mp[i] -= h; mp[j] += h;
            mm[i] -= h; mm[j] -= h;
            H(i, j) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
        }
    return 0.5 * (H + H.transpose());
}

// Two-way problem for exhaustive enumeration: y, X (N x p), level codes of
// two ways, each with two candidate groups.
struct TwoWayProblem {
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    std::vector<int> a, b;  // level codes
    int n1 = 4, n2 = 4;
    bool gaussian = false;
    double lambda = 100.0;
};

// Best penalized objective over every assignment pair, maximizing the
// continuous parameters exactly for each (joint Newton on a concave problem).
inline double exhaustive_optimum(const TwoWayProblem& P) {
    const auto N = P.y.size();
    const auto p = P.X.cols();
    double best = -std::numeric_limits<double>::infinity();
    for (int m1 = 0; m1 < (1 << P.n1); ++m1)
        for (int m2 = 0; m2 < (1 << P.n2); ++m2) {
            // columns: X, then indicators of non-empty groups of way 1, way 2
            std::vector<int> g1(P.n1), g2(P.n2);
            for (int l = 0; l < P.n1; ++l) g1[l] = (m1 >> l) & 1;
            for (int l = 0; l < P.n2; ++l) g2[l] = (m2 >> l) & 1;
            int cnt1[2] = {0, 0}, cnt2[2] = {0, 0};
            for (int v : g1) ++cnt1[v];
            for (int v : g2) ++cnt2[v];
            std::vector<int> col1(2, -1), col2(2, -1);
            Eigen::Index q = p;
            for (int g = 0; g < 2; ++g)
                if (cnt1[g]) col1[g] = static_cast<int>(q++);
            for (int g = 0; g < 2; ++g)
                if (cnt2[g]) col2[g] = static_cast<int>(q++);
            Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(N, q);
            Z.leftCols(p) = P.X;
            for (Eigen::Index i = 0; i < N; ++i) {
                Z(i, col1[g1[P.a[i]]]) = 1.0;
                Z(i, col2[g2[P.b[i]]]) = 1.0;
            }
            // way-mean difference is c'theta
            Eigen::VectorXd c = Eigen::VectorXd::Zero(q);
            for (int g = 0; g < 2; ++g) {
                if (cnt1[g]) c[col1[g]] += static_cast<double>(cnt1[g]) / P.n1;
                if (cnt2[g]) c[col2[g]] -= static_cast<double>(cnt2[g]) / P.n2;
            }
            double Q;
            if (P.gaussian) {
                // The penalty vanishes at the optimum (shifting ways against
                // each other leaves the fit unchanged), so theta is the least
                // squares solution on the constraint c'theta = 0.
                const Eigen::MatrixXd A = Z.transpose() * Z + c * c.transpose();
                const Eigen::VectorXd theta = A.ldlt().solve(Z.transpose() * P.y);
                const double psi = (P.y - Z * theta).squaredNorm() / static_cast<double>(N);
                const double d = c.dot(theta);
                Q = -0.5 * std::log(2.0 * kPi * psi) - 0.5 - 0.5 * P.lambda * d * d;
            } else {
                auto value = [&](const Eigen::VectorXd& th) {
                    const Eigen::VectorXd eta = Z * th;
                    double s = 0.0;
                    for (Eigen::Index i = 0; i < N; ++i) s += ll_logit(P.y[i], eta[i]);
                    const double d = c.dot(th);
                    return s / static_cast<double>(N) - 0.5 * P.lambda * d * d;
                };
                Eigen::VectorXd th = Eigen::VectorXd::Zero(q);
                double f = value(th);
                for (int it = 0; it < 200; ++it) {
                    const Eigen::VectorXd eta = Z * th;
                    Eigen::VectorXd r(N), w(N);
                    for (Eigen::Index i = 0; i < N; ++i) {
                        const double mu = 1.0 / (1.0 + std::exp(-eta[i]));
                        r[i] = P.y[i] - mu;
                        w[i] = mu * (1.0 - mu);
                    }
                    const Eigen::VectorXd grad =
                        Z.transpose() * r / static_cast<double>(N) - P.lambda * c.dot(th) * c;
                    const Eigen::MatrixXd info =
                        Z.transpose() * w.asDiagonal() * Z / static_cast<double>(N) + P.lambda * c * c.transpose();
                    const Eigen::VectorXd step = info.ldlt().solve(grad);
                    double t = 1.0;
                    Eigen::VectorXd trial = th + step;
                    double ft = value(trial);
                    while (ft < f && t > 1e-10) {
                        t *= 0.5;
                        trial = th + t * step;
                        ft = value(trial);
                    }
                    if (ft < f) break;
                    const double gain = ft - f;
                    th = trial;
                    f = ft;
                    if (grad.cwiseAbs().maxCoeff() < 1e-13 || gain < 1e-16) break;
                }
                Q = f;
            }
            best = std::max(best, Q);
        }
    return best;
}

}  // namespace oracle
