#pragma once

#include "cge/dataset.hpp"
#include "cge/family.hpp"
#include "cge/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace testutil {

inline const std::vector<double> kCuts{-1.0, 0.0, 1.2};

inline cge::FamilySpec family_of(cge::FamilyKind kind) {
    switch (kind) {
    case cge::FamilyKind::gaussian: return cge::FamilySpec::gaussian();
    case cge::FamilyKind::bernoulli_logit: return cge::FamilySpec::logistic();
    case cge::FamilyKind::poisson_log: return cge::FamilySpec::poisson();
    case cge::FamilyKind::ordered_probit: return cge::FamilySpec::ordered_probit(kCuts);
    }
    return {};
}

// Random cross-classified data with grouped effects; every level is used.
inline cge::Dataset random_dataset(cge::FamilyKind kind, int N, const std::vector<int>& levels, int p,
                                   std::uint64_t seed, double effect_sd = 0.7) {
    cge::Rng rng(seed, 77);
    const int K = static_cast<int>(levels.size());
    Eigen::MatrixXd X(N, p);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
    std::vector<std::vector<int>> ways(K, std::vector<int>(N));
    for (int k = 0; k < K; ++k)
        for (int i = 0; i < N; ++i) ways[k][i] = i < levels[k] ? i : static_cast<int>(rng.uniform_int(levels[k]));
    std::vector<std::vector<double>> eff(K);
    for (int k = 0; k < K; ++k)
        for (int l = 0; l < levels[k]; ++l) eff[k].push_back(rng.normal(0.0, effect_sd));
    Eigen::VectorXd beta(p);
    for (int j = 0; j < p; ++j) beta[j] = 0.5 * (j % 2 ? -1.0 : 1.0) / (1 + j);
    Eigen::VectorXd y(N);
    for (int i = 0; i < N; ++i) {
        double eta = p ? X.row(i).dot(beta) : 0.0;
        for (int k = 0; k < K; ++k) eta += eff[k][ways[k][i]];
        switch (kind) {
        case cge::FamilyKind::gaussian: y[i] = eta + rng.normal(0.0, 0.8); break;
        case cge::FamilyKind::bernoulli_logit: y[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-eta))); break;
        case cge::FamilyKind::poisson_log: y[i] = static_cast<double>(rng.poisson(std::exp(0.5 + eta))); break;
        case cge::FamilyKind::ordered_probit: {
            const double latent = eta + rng.normal();
            int c = 1;
            while (c <= static_cast<int>(kCuts.size()) && latent > kCuts[c - 1]) ++c;
            y[i] = c;
            break;
        }
        }
    }
    return cge::make_dataset(std::move(y), std::move(X), std::move(ways), family_of(kind));
}

inline std::string temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "cge_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

}  // namespace testutil
