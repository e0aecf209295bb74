#include "cge/estimator.hpp"
#include "cge/smoother.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace cge;

namespace {

double ll_oracle(const FamilySpec& fam, double y, double eta, double psi) {
    switch (fam.kind) {
    case FamilyKind::gaussian: return oracle::ll_gaussian(y, eta, psi);
    case FamilyKind::bernoulli_logit: return oracle::ll_logit(y, eta);
    case FamilyKind::poisson_log: return oracle::ll_poisson(y, eta);
    case FamilyKind::ordered_probit: return oracle::ll_ordered(fam.thresholds, static_cast<int>(y), eta);
    }
    return 0.0;
}

// Row-by-row recomputation of the pseudo-posterior from member sums of logs.
Eigen::MatrixXd posterior_oracle(const FittedModel& m, const Dataset& ds, int way) {
    const int nk = ds.n_levels[way];
    const auto G = m.alpha[way].size();
    Eigen::MatrixXd logw = Eigen::MatrixXd::Zero(nk, G);
    for (std::size_t i = 0; i < ds.n_obs(); ++i) {
        double base = ds.X.cols() ? ds.X.row(static_cast<Eigen::Index>(i)).dot(m.beta) : 0.0;
        for (int k = 0; k < ds.n_ways(); ++k)
            if (k != way) base += m.alpha[k][m.gamma[k][ds.ways[k][i]]];
        for (Eigen::Index g = 0; g < G; ++g)
            logw(ds.ways[way][i], g) += ll_oracle(ds.family, ds.y[i], base + m.alpha[way][g], m.psi);
    }
    Eigen::MatrixXd P(nk, G);
    for (int l = 0; l < nk; ++l) {
        const double mx = logw.row(l).maxCoeff();
        double s = 0.0;
        for (Eigen::Index g = 0; g < G; ++g) s += std::exp(logw(l, g) - mx);
        for (Eigen::Index g = 0; g < G; ++g) P(l, g) = std::exp(logw(l, g) - mx) / s;
    }
    return P;
}

FittedModel fitted(const Dataset& ds, std::vector<int> groups) {
    FitConfig cfg;
    cfg.group_counts = std::move(groups);
    return fit(ds, cfg);
}

}  // namespace

TEST_CASE("single group gives probability one") {
    const Dataset ds = testutil::random_dataset(FamilyKind::bernoulli_logit, 200, {8, 6}, 1, 1);
    const FittedModel m = fitted(ds, {1, 2});
    const Eigen::MatrixXd P = pseudo_posterior(m, ds, build_level_index(ds), 0);
    CHECK(P.cols() == 1);
    CHECK((P.array() == 1.0).all());
}

TEST_CASE("identical group effects split evenly") {
    const Dataset ds = testutil::random_dataset(FamilyKind::poisson_log, 200, {8, 6}, 1, 2);
    FittedModel m = fitted(ds, {2, 2});
    m.alpha[0].setConstant(0.3);
    const Eigen::MatrixXd P = pseudo_posterior(m, ds, build_level_index(ds), 0);
    CHECK((P.array() - 0.5).abs().maxCoeff() < 1e-15);
}

TEST_CASE("a level strongly matching one group") {
    // level 0: 40 successes out of 40, candidate effects -3 and +3
    const int N = 80;
    Eigen::VectorXd y(N);
    std::vector<int> codes(N);
    for (int i = 0; i < N; ++i) {
        codes[i] = i < 40 ? 0 : 1;
        y[i] = i < 40 ? 1.0 : (i % 2);
    }
    const Dataset ds = make_dataset(y, Eigen::MatrixXd(N, 0), {codes}, FamilySpec::logistic());
    FittedModel m;
    m.family = ds.family;
    m.beta = Eigen::VectorXd(0);
    m.alpha = {(Eigen::VectorXd(2) << -3.0, 3.0).finished()};
    m.gamma = {{1, 0}};
    const Eigen::MatrixXd P = pseudo_posterior(m, ds, build_level_index(ds), 0);
    CHECK(P(0, 1) > 0.99);
    // direct evaluation of the two products
    const double l1 = 40.0 * oracle::ll_logit(1.0, -3.0), l2 = 40.0 * oracle::ll_logit(1.0, 3.0);
    CHECK(P(0, 1) == doctest::Approx(1.0 / (1.0 + std::exp(l1 - l2))).epsilon(1e-14));
    CHECK(P(1, 0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("pseudo-posterior matches an independent recomputation") {
    for (auto kind : {FamilyKind::gaussian, FamilyKind::bernoulli_logit, FamilyKind::poisson_log, FamilyKind::ordered_probit}) {
        const Dataset ds = testutil::random_dataset(kind, 300, {10, 7, 5}, 2, 13);
        const FittedModel m = fitted(ds, {3, 2, 2});
        const LevelIndex idx = build_level_index(ds);
        for (int k = 0; k < 3; ++k) {
            const Eigen::MatrixXd P = pseudo_posterior(m, ds, idx, k);
            CHECK((P - posterior_oracle(m, ds, k)).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("large member counts do not underflow") {
    const Dataset ds = testutil::random_dataset(FamilyKind::poisson_log, 6000, {3, 4}, 1, 5, 1.0);
    const FittedModel m = fitted(ds, {3, 2});
    const Eigen::MatrixXd P = pseudo_posterior(m, ds, build_level_index(ds), 0);
    CHECK(P.allFinite());
    for (Eigen::Index l = 0; l < P.rows(); ++l) CHECK(std::fabs(P.row(l).sum() - 1.0) < 1e-12);
}

TEST_CASE("smoothed effects are weighted averages") {
    FittedModel m;
    m.family = FamilySpec::gaussian();
    m.alpha = {(Eigen::VectorXd(2) << -2.0, 3.0).finished()};
    SUBCASE("vertex row") {
        const Eigen::RowVector2d row(1.0, 0.0);
        CHECK(row.dot(m.alpha[0]) == -2.0);
    }
    SUBCASE("even row") {
        const Eigen::RowVector2d row(0.5, 0.5);
        CHECK(row.dot(m.alpha[0]) == 0.5);
    }

    const Dataset ds = testutil::random_dataset(FamilyKind::bernoulli_logit, 400, {12, 9}, 2, 6);
    const FittedModel f = fitted(ds, {3, 2});
    const SmoothedEffects s = smooth_effects(f, ds, build_level_index(ds));
    REQUIRE(s.probabilities.size() == 2);
    for (int k = 0; k < 2; ++k) {
        const Eigen::MatrixXd P = posterior_oracle(f, ds, k);
        for (int l = 0; l < ds.n_levels[k]; ++l) {
            double avg = 0.0;
            for (Eigen::Index g = 0; g < P.cols(); ++g) avg += P(l, g) * f.alpha[k][g];
            CHECK(s.level_effects[k][l] == doctest::Approx(avg).epsilon(1e-12));
        }
    }
}

TEST_CASE("smoothing invariants on every family") {
    for (auto kind : {FamilyKind::gaussian, FamilyKind::bernoulli_logit, FamilyKind::poisson_log, FamilyKind::ordered_probit}) {
        const Dataset ds = testutil::random_dataset(kind, 500, {15, 12}, 2, 23);
        const FittedModel m = fitted(ds, {3, 3});
        const SmoothedEffects s = smooth(m, ds);
        for (int k = 0; k < 2; ++k) {
            const auto& P = s.probabilities[k];
            CHECK(P.minCoeff() >= 0.0);
            CHECK(P.maxCoeff() <= 1.0);
            for (Eigen::Index l = 0; l < P.rows(); ++l) CHECK(std::fabs(P.row(l).sum() - 1.0) < 1e-12);
            const double lo = m.alpha[k].minCoeff(), hi = m.alpha[k].maxCoeff();
            for (Eigen::Index l = 0; l < s.level_effects[k].size(); ++l) {
                CHECK(s.level_effects[k][l] >= lo - 1e-12);
                CHECK(s.level_effects[k][l] <= hi + 1e-12);
            }
        }
        CHECK(s.beta_smoothed.size() == 2);
    }
}

TEST_CASE("re-estimating with point effects reproduces the fitted beta") {
    for (auto kind : {FamilyKind::gaussian, FamilyKind::bernoulli_logit, FamilyKind::poisson_log, FamilyKind::ordered_probit}) {
        const Dataset ds = testutil::random_dataset(kind, 400, {10, 8}, 2, 31);
        FitConfig cfg;
        cfg.group_counts = {3, 2};
        cfg.tol_obj = 1e-14;
        const FittedModel m = fit(ds, cfg);
        SmoothedEffects s;
        for (int k = 0; k < 2; ++k) {
            Eigen::VectorXd e(ds.n_levels[k]);
            for (int l = 0; l < ds.n_levels[k]; ++l) e[l] = m.level_effect(k, l);
            s.level_effects.push_back(e);
        }
        const BetaFit b = reestimate_beta(ds, s, Eigen::VectorXd::Zero(2));
        // score of the offset likelihood vanishes at the re-estimate
        const double psi = ds.family.kind == FamilyKind::gaussian ? b.psi : 1.0;
        for (int j = 0; j < 2; ++j) {
            auto f = [&](double v) {
                Eigen::VectorXd bb = b.beta;
                bb[j] = v;
                double t = 0.0;
                for (std::size_t i = 0; i < ds.n_obs(); ++i) {
                    const auto r = static_cast<Eigen::Index>(i);
                    t += ll_oracle(ds.family, ds.y[r], ds.X.row(r).dot(bb) + s.level_effects[0][ds.ways[0][i]] +
                                                           s.level_effects[1][ds.ways[1][i]], psi);
                }
                return t;
            };
            CHECK(std::fabs(oracle::central_diff(f, b.beta[j], 1e-5)) / ds.n_obs() < 1e-8);
        }
        CHECK((b.beta - update_regression(m, ds).beta).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((b.beta - m.beta).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("gaussian re-estimation is least squares on the offset response") {
    const Dataset ds = testutil::random_dataset(FamilyKind::gaussian, 300, {9, 7}, 3, 41);
    const FittedModel m = fitted(ds, {3, 2});
    const SmoothedEffects s = smooth(m, ds);
    Eigen::VectorXd off(ds.n_obs());
    for (std::size_t i = 0; i < ds.n_obs(); ++i)
        off[i] = s.level_effects[0][ds.ways[0][i]] + s.level_effects[1][ds.ways[1][i]];
    const Eigen::VectorXd ls = (ds.X.transpose() * ds.X).ldlt().solve(ds.X.transpose() * (ds.y - off));
    CHECK((s.beta_smoothed - ls).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(s.psi_smoothed == doctest::Approx((ds.y - off - ds.X * ls).squaredNorm() / 300.0).epsilon(1e-12));
}

TEST_CASE("logistic re-estimation matches a derivative-free oracle") {
    const Dataset ds = testutil::random_dataset(FamilyKind::bernoulli_logit, 400, {9, 7}, 2, 43);
    const FittedModel m = fitted(ds, {3, 2});
    const SmoothedEffects s = smooth(m, ds);
    auto f = [&](const Eigen::VectorXd& b) {
        double t = 0.0;
        for (std::size_t i = 0; i < ds.n_obs(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            t += oracle::ll_logit(ds.y[i], ds.X.row(r).dot(b) + s.level_effects[0][ds.ways[0][i]] +
                                               s.level_effects[1][ds.ways[1][i]]);
        }
        return t;
    };
    const Eigen::VectorXd golden = oracle::coordinate_golden_max(f, Eigen::VectorXd::Zero(2), 3.0);
    CHECK((s.beta_smoothed - golden).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("well separated groups leave beta almost unchanged") {
    // group effects far apart relative to the per-level information
    Rng rng(5, 9);
    const int n1 = 12, n2 = 10, reps = 40;
    const int N = n1 * n2 * reps;
    Eigen::MatrixXd X(N, 1);
    Eigen::VectorXd y(N);
    std::vector<std::vector<int>> ways(2, std::vector<int>(N));
    int i = 0;
    for (int a = 0; a < n1; ++a)
        for (int b = 0; b < n2; ++b)
            for (int r = 0; r < reps; ++r, ++i) {
                ways[0][i] = a;
                ways[1][i] = b;
                X(i, 0) = rng.normal();
                y[i] = 0.5 * X(i, 0) + (a % 3) * 4.0 + (b % 2) * 5.0 + rng.normal(0.0, 0.5);
            }
    const Dataset ds = make_dataset(y, X, ways, FamilySpec::gaussian());
    const FittedModel m = fitted(ds, {3, 2});
    const SmoothedEffects s = smooth(m, ds);
    for (const auto& P : s.probabilities)
        for (Eigen::Index l = 0; l < P.rows(); ++l) REQUIRE(P.row(l).maxCoeff() > 1.0 - 1e-6);
    CHECK((s.beta_smoothed - m.beta).cwiseAbs().maxCoeff() < 1e-4);
}
