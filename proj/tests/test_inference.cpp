#include "cge/error.hpp"
#include "cge/estimator.hpp"
#include "cge/inference.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace cge;

namespace {

FittedModel fitted(const Dataset& ds, std::vector<int> groups) {
    FitConfig cfg;
    cfg.group_counts = std::move(groups);
    return fit(ds, cfg);
}

double ll_oracle(const FamilySpec& fam, double y, double eta) {
    switch (fam.kind) {
    case FamilyKind::bernoulli_logit: return oracle::ll_logit(y, eta);
    case FamilyKind::poisson_log: return oracle::ll_poisson(y, eta);
    case FamilyKind::ordered_probit: return oracle::ll_ordered(fam.thresholds, static_cast<int>(y), eta);
    default: return 0.0;
    }
}

}  // namespace

TEST_CASE("orthonormal gaussian design") {
    const int N = 100;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(N, 2);
    for (int i = 0; i < N; ++i) X(i, i % 2) = std::sqrt(2.0);  // X'X = N I
    const Eigen::MatrixXd cov = covariance_beta(Dataset{Eigen::VectorXd::Zero(N), X, {std::vector<int>(N, 0)}, {1},
                                                        FamilySpec::gaussian()},
                                                Eigen::VectorXd::Zero(2), 1.0, Eigen::VectorXd::Zero(N));
    CHECK((cov - Eigen::MatrixXd::Identity(2, 2) / N).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("logistic at zero linear predictor") {
    const Dataset ds = testutil::random_dataset(FamilyKind::bernoulli_logit, 200, {4}, 3, 3);
    const Eigen::MatrixXd cov = covariance_beta(ds, Eigen::VectorXd::Zero(3), 1.0, Eigen::VectorXd::Zero(200));
    const Eigen::MatrixXd expect = 4.0 * (ds.X.transpose() * ds.X).inverse();
    CHECK((cov - expect).cwiseAbs().maxCoeff() < 1e-12 * expect.cwiseAbs().maxCoeff());
}

TEST_CASE("covariance inverts a finite-difference Hessian") {
    for (auto kind : {FamilyKind::bernoulli_logit, FamilyKind::poisson_log, FamilyKind::ordered_probit}) {
        const Dataset ds = testutil::random_dataset(kind, 300, {8, 6}, 3, 51);
        const FittedModel m = fitted(ds, {2, 2});
        Eigen::VectorXd off(ds.n_obs());
        for (std::size_t i = 0; i < ds.n_obs(); ++i)
            off[i] = m.level_effect(0, ds.ways[0][i]) + m.level_effect(1, ds.ways[1][i]);
        auto f = [&](const Eigen::VectorXd& b) {
            double s = 0.0;
            for (std::size_t i = 0; i < ds.n_obs(); ++i)
                s += ll_oracle(ds.family, ds.y[i], ds.X.row(static_cast<Eigen::Index>(i)).dot(b) + off[i]);
            return s;
        };
        const Eigen::MatrixXd H = oracle::fd_hessian(f, m.beta, 1e-4);
        const Eigen::MatrixXd fd_cov = (-H).inverse();
        const Eigen::MatrixXd cov = covariance_beta(ds, m);
        CHECK(((cov - fd_cov).cwiseAbs().array() / fd_cov.cwiseAbs().maxCoeff()).maxCoeff() < 1e-5);
        CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(Eigen::LLT<Eigen::MatrixXd>(cov).info() == Eigen::Success);
    }
}

TEST_CASE("gaussian covariance is psi times the inverse Gram matrix") {
    const Dataset ds = testutil::random_dataset(FamilyKind::gaussian, 250, {8, 6}, 2, 57);
    const FittedModel m = fitted(ds, {2, 2});
    const Eigen::MatrixXd expect = m.psi * (ds.X.transpose() * ds.X).inverse();
    CHECK((covariance_beta(ds, m) - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("confidence intervals") {
    Eigen::VectorXd b(1);
    b << 1.0;
    Eigen::MatrixXd cov(1, 1);
    cov << 0.25;
    const auto ci = confidence_intervals(b, cov, 0.95);
    CHECK(ci[0].first == doctest::Approx(1.0 - 0.5 * 1.959964).epsilon(1e-6));
    CHECK(ci[0].second == doctest::Approx(1.0 + 0.5 * 1.959964).epsilon(1e-6));
    CHECK(ci[0].first == doctest::Approx(0.020).epsilon(1e-3));
    CHECK_THROWS_AS(confidence_intervals(b, cov, 0.0), ConfigError);
    CHECK_THROWS_AS(confidence_intervals(b, cov, 1.0), ConfigError);
    CHECK_THROWS_AS(confidence_intervals(b, cov, -0.5), ConfigError);
}

TEST_CASE("infer result invariants") {
    const Dataset ds = testutil::random_dataset(FamilyKind::poisson_log, 300, {8, 6}, 3, 61);
    const InferenceResult r = infer(ds, fitted(ds, {2, 2}), 0.9);
    CHECK(r.level == 0.9);
    for (int k = 0; k < 3; ++k) {
        CHECK(r.se[k] == doctest::Approx(std::sqrt(r.cov_beta(k, k))));
        CHECK(r.intervals[k].first < r.intervals[k].second);
    }
}

TEST_CASE("interval width scales with the inverse square root of N") {
    const Dataset small = testutil::random_dataset(FamilyKind::bernoulli_logit, 2000, {10, 10}, 2, 71);
    const Dataset large = testutil::random_dataset(FamilyKind::bernoulli_logit, 8000, {10, 10}, 2, 72);
    const auto a = infer(small, fitted(small, {3, 3}));
    const auto b = infer(large, fitted(large, {3, 3}));
    for (int k = 0; k < 2; ++k) CHECK(std::fabs(a.se[k] / b.se[k] / 2.0 - 1.0) < 0.1);
}

TEST_CASE("singular information raises a rank error") {
    Dataset ds = testutil::random_dataset(FamilyKind::bernoulli_logit, 40, {4}, 2, 5);
    ds.X.col(1) = ds.X.col(0);
    CHECK_THROWS_AS(covariance_beta(ds, Eigen::VectorXd::Zero(2), 1.0, Eigen::VectorXd::Zero(40)), RankError);
}

TEST_CASE("predictions use the family mean") {
    FittedModel m;
    m.beta = Eigen::VectorXd(0);
    m.alpha = {Eigen::VectorXd::Zero(1)};
    m.gamma = {{0}};
    const Eigen::MatrixXd X(1, 0);
    m.family = FamilySpec::ordered_probit({-1.0, 1.0});
    auto p = predict(m, nullptr, X, {{0}});
    CHECK(p[0].mean == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(p[0].category == 2);
    m.family = FamilySpec::logistic();
    CHECK(predict(m, nullptr, X, {{0}})[0].mean == 0.5);
    m.family = FamilySpec::poisson();
    m.alpha[0][0] = std::log(3.0);
    CHECK(predict(m, nullptr, X, {{0}})[0].mean == doctest::Approx(3.0));
}

TEST_CASE("predictions with smoothed and unseen levels") {
    FittedModel m;
    m.family = FamilySpec::gaussian();
    m.beta = (Eigen::VectorXd(1) << 2.0).finished();
    m.alpha = {(Eigen::VectorXd(2) << -1.0, 1.0).finished(), (Eigen::VectorXd(1) << 0.5).finished()};
    m.gamma = {{0, 1, 1}, {0, 0}};
    const Eigen::MatrixXd X = (Eigen::MatrixXd(3, 1) << 1.0, 0.0, 0.5).finished();
    const std::vector<std::vector<int>> ways{{0, 2, -1}, {1, 0, 0}};
    CHECK_THROWS_AS(predict(m, nullptr, X, ways, false, {"user", "item"}), PredictError);
    try {
        predict(m, nullptr, X, ways, false, {"user", "item"});
    } catch (const PredictError& e) {
        CHECK(std::string(e.what()).find("user") != std::string::npos);
    }
    const auto p = predict(m, nullptr, X, ways, true);
    CHECK(p[0].mean == doctest::Approx(2.0 - 1.0 + 0.5));
    CHECK(p[1].mean == doctest::Approx(1.0 + 0.5));
    // unseen level: the way's level-averaged effect, (-1 + 1 + 1) / 3
    CHECK(p[2].mean == doctest::Approx(1.0 + 1.0 / 3.0 + 0.5));
    CHECK_FALSE(p[0].unknown_level);
    CHECK(p[2].unknown_level);

    SmoothedEffects s;
    s.level_effects = {(Eigen::VectorXd(3) << -0.5, 0.2, 0.9).finished(), (Eigen::VectorXd(2) << 0.1, 0.3).finished()};
    const auto q = predict(m, &s, X, ways, true);
    CHECK(q[0].mean == doctest::Approx(2.0 - 0.5 + 0.3));
    CHECK(q[1].mean == doctest::Approx(0.9 + 0.1));
}

TEST_CASE("category rounding") {
    CHECK(round_category(2.5, 5) == 3);
    CHECK(round_category(2.49, 5) == 2);
    CHECK(round_category(0.2, 5) == 1);
    CHECK(round_category(5.7, 5) == 5);
    CHECK(round_category(1.5, 3) == 2);
}
