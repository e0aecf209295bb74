#include "cge/estimator.hpp"

#include "cge/error.hpp"
#include "cge/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cge {

namespace {

constexpr int kMaxNewtonIter = 100;
// Newton decrement below this (relative to |f|) counts as stationary.
constexpr double kStationaryTol = 1e-16;
// A failed line search with a decrement above this is reported as no progress.
constexpr double kNoProgressTol = 1e-8;

double scale_of(double f) { return std::max(1.0, std::fabs(f)); }

// Per-level effect of each way other than `skip`, summed per observation.
Eigen::VectorXd other_way_offsets(const FittedModel& model, const Dataset& ds, int skip) {
    const auto N = static_cast<Eigen::Index>(ds.n_obs());
    Eigen::VectorXd off = Eigen::VectorXd::Zero(N);
    for (int k = 0; k < ds.n_ways(); ++k) {
        if (k == skip) continue;
        const auto& codes = ds.ways[k];
        const auto& a = model.alpha[k];
        const auto& g = model.gamma[k];
        for (Eigen::Index i = 0; i < N; ++i) off[i] += a[g[codes[i]]];
    }
    return off;
}

double xb_row(const Dataset& ds, const Eigen::VectorXd& beta, int i) {
    return ds.X.cols() == 0 ? 0.0 : ds.X.row(i).dot(beta);
}

std::string block_name(BlockKind kind, int way, int group) {
    switch (kind) {
    case BlockKind::regression: return "regression update";
    case BlockKind::location: return "location update";
    case BlockKind::way_effects: return "joint effect update (way " + std::to_string(way + 1) + ")";
    case BlockKind::group_effect:
        return "effect update (way " + std::to_string(way + 1) + ", group " + std::to_string(group + 1) + ")";
    case BlockKind::assignments: return "assignment update (way " + std::to_string(way + 1) + ")";
    }
    return "update";
}

}  // namespace

std::string to_string(InitStrategy s) { return s == InitStrategy::quantile ? "quantile" : "random"; }

InitStrategy parse_init_strategy(const std::string& name) {
    if (name == "quantile") return InitStrategy::quantile;
    if (name == "random") return InitStrategy::random;
    throw ConfigError("unknown init strategy '" + name + "'");
}

int default_group_count(int n_levels) {
    int g = static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_levels))));
    while ((g + 1) * (g + 1) <= n_levels) ++g;
    while (g > 1 && g * g > n_levels) --g;
    return std::max(g, 1);
}

void FitConfig::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be positive");
    if (max_iter < 1) throw ConfigError("max_iter must be positive");
    if (!(tol_obj > 0.0)) throw ConfigError("tol must be positive");
    if (max_halvings < 1) throw ConfigError("max_halvings must be positive");
    if (n_starts < 1) throw ConfigError("starts must be positive");
}

std::vector<int> FitConfig::resolve_groups(const Dataset& ds) const {
    validate();
    const int K = ds.n_ways();
    std::vector<int> groups;
    if (auto_groups || group_counts.empty()) {
        for (int k = 0; k < K; ++k) groups.push_back(default_group_count(ds.n_levels[k]));
        return groups;
    }
    if (group_counts.size() == 1) {
        groups.assign(K, group_counts.front());
    } else if (static_cast<int>(group_counts.size()) == K) {
        groups = group_counts;
    } else {
        throw ConfigError(std::to_string(group_counts.size()) + " group counts given for " +
                          std::to_string(K) + " ways");
    }
    for (int k = 0; k < K; ++k) {
        if (groups[k] < 1) throw ConfigError("group count for way " + std::to_string(k + 1) + " must be >= 1");
        if (groups[k] > ds.n_levels[k])
            throw ConfigError("group count " + std::to_string(groups[k]) + " exceeds the " +
                              std::to_string(ds.n_levels[k]) + " levels of way " + std::to_string(k + 1));
    }
    return groups;
}

void FittedModel::check_compatible(const Dataset& ds) const {
    if (beta.size() != ds.X.cols())
        throw ConfigError("model has " + std::to_string(beta.size()) + " coefficients, data has " +
                          std::to_string(ds.X.cols()) + " covariates");
    if (static_cast<int>(alpha.size()) != ds.n_ways() || gamma.size() != alpha.size())
        throw ConfigError("model and data disagree on the number of ways");
    for (int k = 0; k < ds.n_ways(); ++k) {
        if (static_cast<int>(gamma[k].size()) != ds.n_levels[k])
            throw ConfigError("model and data disagree on the levels of way " + std::to_string(k + 1));
        for (int g : gamma[k])
            if (g < 0 || g >= alpha[k].size())
                throw ConfigError("assignment out of range in way " + std::to_string(k + 1));
    }
}

std::vector<double> way_means(const std::vector<Eigen::VectorXd>& alpha,
                              const std::vector<std::vector<int>>& gamma) {
    std::vector<double> means(alpha.size(), 0.0);
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        double s = 0.0;
        for (int g : gamma[k]) s += alpha[k][g];
        means[k] = gamma[k].empty() ? 0.0 : s / static_cast<double>(gamma[k].size());
    }
    return means;
}

double penalty(const std::vector<Eigen::VectorXd>& alpha,
               const std::vector<std::vector<int>>& gamma, double lambda) {
    const auto means = way_means(alpha, gamma);
    double s = 0.0;
    for (std::size_t k = 0; k + 1 < means.size(); ++k) {
        const double d = means[k] - means[k + 1];
        s += d * d;
    }
    return 0.5 * lambda * s;
}

Eigen::VectorXd effect_offsets(const FittedModel& model, const Dataset& ds) {
    return other_way_offsets(model, ds, -1);
}

Eigen::VectorXd linear_predictor(const FittedModel& model, const Dataset& ds) {
    Eigen::VectorXd eta = effect_offsets(model, ds);
    if (ds.X.cols() > 0) eta.noalias() += ds.X * model.beta;
    return eta;
}

double log_likelihood(const Dataset& ds, const Eigen::VectorXd& eta, double psi, std::size_t* floors) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) s += log_density(ds.family, ds.y[i], eta[i], psi, floors);
    return s;
}

double objective(const FittedModel& model, const Dataset& ds, std::size_t* floors) {
    const double ll = log_likelihood(ds, linear_predictor(model, ds), model.psi, floors);
    return ll / static_cast<double>(ds.n_obs()) - penalty(model.alpha, model.gamma, model.lambda);
}

void check_design_rank(const Dataset& ds) {
    const Eigen::Index p = ds.X.cols();
    if (p == 0) return;
    const Eigen::MatrixXd gram = ds.X.transpose() * ds.X;
    // Column-by-column Cholesky; a vanishing pivot marks the first column in
    // the span of its predecessors.
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        for (Eigen::Index i = 0; i < j; ++i) {
            double s = gram(j, i);
            for (Eigen::Index m = 0; m < i; ++m) s -= L(j, m) * L(i, m);
            L(j, i) = s / L(i, i);
        }
        double d = gram(j, j);
        for (Eigen::Index m = 0; m < j; ++m) d -= L(j, m) * L(j, m);
        if (!(d > 1e-10 * gram(j, j))) {
            const std::string name = static_cast<std::size_t>(j) < ds.covariate_names.size()
                                         ? ds.covariate_names[j]
                                         : "x" + std::to_string(j + 1);
            throw RankError("design matrix is rank deficient: covariate '" + name +
                                "' is collinear with earlier columns",
                            j, name);
        }
        L(j, j) = std::sqrt(d);
    }
}

RegressionUpdate update_regression(const FittedModel& model, const Dataset& ds, const FitConfig& cfg,
                                   FitWarnings* warnings) {
    const Eigen::Index p = ds.X.cols();
    const double N = static_cast<double>(ds.n_obs());
    const Eigen::VectorXd off = effect_offsets(model, ds);

    if (ds.family.kind == FamilyKind::gaussian) {
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
        if (p > 0) {
            Eigen::LLT<Eigen::MatrixXd> llt(ds.X.transpose() * ds.X);
            if (llt.info() != Eigen::Success) {
                check_design_rank(ds);
                throw RankError("normal equations are singular");
            }
            beta = llt.solve(ds.X.transpose() * (ds.y - off));
        }
        Eigen::VectorXd resid = ds.y - off;
        if (p > 0) resid.noalias() -= ds.X * beta;
        double psi = resid.squaredNorm() / N;
        if (!(psi >= kPsiFloor)) {
            psi = kPsiFloor;
            if (warnings) ++warnings->psi_floors;
        }
        return {beta, psi};
    }

    Eigen::VectorXd beta = model.beta;
    if (p == 0) return {beta, 1.0};

    std::size_t* floors = warnings ? &warnings->underflow_floors : nullptr;
    auto loglik = [&](const Eigen::VectorXd& b) {
        return log_likelihood(ds, ds.X * b + off, 1.0, floors);
    };
    double f = loglik(beta);
    const int iters = cfg.one_step_newton ? 1 : kMaxNewtonIter;
    Eigen::VectorXd d1(static_cast<Eigen::Index>(ds.n_obs()));
    Eigen::VectorXd w(static_cast<Eigen::Index>(ds.n_obs()));
    for (int it = 0; it < iters; ++it) {
        const Eigen::VectorXd eta = ds.X * beta + off;
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            const auto d = eta_derivatives(ds.family, ds.y[i], eta[i], 1.0, i);
            d1[i] = d.d1;
            w[i] = -d.d2;
        }
        const Eigen::VectorXd grad = ds.X.transpose() * d1;
        const Eigen::MatrixXd info = ds.X.transpose() * w.asDiagonal() * ds.X;
        Eigen::LLT<Eigen::MatrixXd> llt(info);
        if (llt.info() != Eigen::Success) {
            check_design_rank(ds);
            throw RankError("information matrix for beta is singular");
        }
        const Eigen::VectorXd step = llt.solve(grad);
        const double decrement = grad.dot(step);
        if (!(decrement > kStationaryTol * scale_of(f))) break;

        double t = 1.0;
        bool accepted = false;
        Eigen::VectorXd trial;
        double f_trial = f;
        for (int h = 0; h <= cfg.max_halvings; ++h, t *= 0.5) {
            trial = beta + t * step;
            f_trial = loglik(trial);
            if (f_trial >= f) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (decrement > kNoProgressTol * scale_of(f))
                throw NoProgressError("beta line search exhausted " + std::to_string(cfg.max_halvings) +
                                      " halvings (Newton decrement " + std::to_string(decrement) + ")");
            break;
        }
        beta = trial;
        f = f_trial;
    }
    return {beta, 1.0};
}

double update_location(const FittedModel& model, const Dataset& ds, const FitConfig& cfg, FitWarnings* warnings) {
    const Eigen::VectorXd eta = linear_predictor(model, ds);
    const auto N = eta.size();
    if (ds.family.kind == FamilyKind::gaussian) return (ds.y - eta).sum() / static_cast<double>(N);

    std::size_t* floors = warnings ? &warnings->underflow_floors : nullptr;
    auto value = [&](double d) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < N; ++i) s += log_density(ds.family, ds.y[i], eta[i] + d, model.psi, floors);
        return s;
    };
    double delta = 0.0;
    double f = value(delta);
    const int iters = cfg.one_step_newton ? 1 : kMaxNewtonIter;
    for (int it = 0; it < iters; ++it) {
        double grad = 0.0, hess = 0.0;
        for (Eigen::Index i = 0; i < N; ++i) {
            const auto d = eta_derivatives(ds.family, ds.y[i], eta[i] + delta, model.psi, i);
            grad += d.d1;
            hess += d.d2;
        }
        if (!(hess < 0.0)) break;
        const double step = -grad / hess;
        const double decrement = grad * step;
        if (!(decrement > kStationaryTol * scale_of(f))) break;
        double t = 1.0;
        bool accepted = false;
        double trial = delta, f_trial = f;
        for (int h = 0; h <= cfg.max_halvings; ++h, t *= 0.5) {
            trial = delta + t * step;
            f_trial = value(trial);
            if (f_trial >= f) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (decrement > kNoProgressTol * scale_of(f))
                throw NoProgressError("location line search exhausted " + std::to_string(cfg.max_halvings) +
                                      " halvings");
            break;
        }
        delta = trial;
        f = f_trial;
    }
    return delta;
}

PenaltyQuadratic group_penalty_quadratic(const FittedModel& model, std::size_t n_obs, int way, int group) {
    PenaltyQuadratic q;
    q.center = model.alpha[way][group];
    const int K = model.n_ways();
    if (K < 2) return q;
    const auto& gam = model.gamma[way];
    const double n_k = static_cast<double>(gam.size());
    double n_g = 0.0;
    double rest = 0.0;  // sum over levels outside the group of their effects
    for (int g : gam) {
        if (g == group) {
            n_g += 1.0;
        } else {
            rest += model.alpha[way][g];
        }
    }
    if (n_g == 0.0) return q;

    // For a neighbouring way j the penalty term is
    //   (lambda/2) ((n_g a + rest)/n_k - mean_j)^2 = (lambda/2)(n_g/n_k)^2 (a - c_j)^2
    // with c_j = (n_k/n_g)(mean_j - rest/n_k). Interior ways have two such
    // terms; their sum is a single quadratic centred at the mean of the c_j.
    const auto means = way_means(model.alpha, model.gamma);
    double center_sum = 0.0;
    int touching = 0;
    for (int j : {way - 1, way + 1}) {
        if (j < 0 || j >= K) continue;
        center_sum += (n_k / n_g) * (means[j] - rest / n_k);
        ++touching;
    }
    const double ratio = n_g / n_k;
    q.weight = model.lambda * static_cast<double>(n_obs) * ratio * ratio * touching;
    q.center = center_sum / touching;
    return q;
}

double update_group_effect(const FittedModel& model, const Dataset& ds, const LevelIndex& index, int way,
                           int group, const FitConfig& cfg, FitWarnings* warnings) {
    const double current = model.alpha[way][group];
    std::vector<int> obs;
    const auto& gam = model.gamma[way];
    for (std::size_t l = 0; l < gam.size(); ++l)
        if (gam[l] == group) {
            const auto& m = index.of(way, static_cast<int>(l));
            obs.insert(obs.end(), m.begin(), m.end());
        }
    if (obs.empty()) {
        if (warnings) ++warnings->empty_groups;
        return current;
    }

    std::vector<double> base(obs.size()), yv(obs.size());
    for (std::size_t t = 0; t < obs.size(); ++t) {
        const int i = obs[t];
        double b = xb_row(ds, model.beta, i);
        for (int k = 0; k < ds.n_ways(); ++k)
            if (k != way) b += model.level_effect(k, ds.ways[k][i]);
        base[t] = b;
        yv[t] = ds.y[i];
    }
    const PenaltyQuadratic pq = group_penalty_quadratic(model, ds.n_obs(), way, group);
    const double psi = model.psi;
    const FamilySpec& fam = ds.family;

    if (fam.kind == FamilyKind::gaussian) {
        double resid_sum = 0.0;
        for (std::size_t t = 0; t < obs.size(); ++t) resid_sum += yv[t] - base[t];
        return (resid_sum / psi + pq.weight * pq.center) /
               (static_cast<double>(obs.size()) / psi + pq.weight);
    }

    std::size_t* floors = warnings ? &warnings->underflow_floors : nullptr;
    auto value = [&](double a) {
        double s = 0.0;
        for (std::size_t t = 0; t < obs.size(); ++t) s += log_density(fam, yv[t], base[t] + a, psi, floors);
        return s - 0.5 * pq.weight * (a - pq.center) * (a - pq.center);
    };
    double a = current;
    double f = value(a);
    const int iters = cfg.one_step_newton ? 1 : kMaxNewtonIter;
    for (int it = 0; it < iters; ++it) {
        double grad = -pq.weight * (a - pq.center);
        double hess = -pq.weight;
        for (std::size_t t = 0; t < obs.size(); ++t) {
            const auto d = eta_derivatives(fam, yv[t], base[t] + a, psi, obs[t]);
            grad += d.d1;
            hess += d.d2;
        }
        if (!(hess < 0.0)) break;
        const double step = -grad / hess;
        const double decrement = grad * step;
        if (!(decrement > kStationaryTol * scale_of(f))) break;

        double t = 1.0;
        bool accepted = false;
        double trial = a, f_trial = f;
        for (int h = 0; h <= cfg.max_halvings; ++h, t *= 0.5) {
            trial = a + t * step;
            f_trial = value(trial);
            if (f_trial >= f) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (decrement > kNoProgressTol * scale_of(f))
                throw NoProgressError("effect line search exhausted " + std::to_string(cfg.max_halvings) +
                                      " halvings");
            break;
        }
        a = trial;
        f = f_trial;
    }
    return a;
}

Eigen::VectorXd update_way_effects(const FittedModel& model, const Dataset& ds, const LevelIndex& index, int way,
                                   const FitConfig& cfg, FitWarnings* warnings) {
    const int K = model.n_ways();
    const auto& gam = model.gamma[way];
    const auto G = model.alpha[way].size();
    const double n_k = static_cast<double>(gam.size());
    const double psi = model.psi;
    const FamilySpec& fam = ds.family;

    std::vector<std::vector<int>> obs(static_cast<std::size_t>(G));
    Eigen::VectorXd c = Eigen::VectorXd::Zero(G);  // level share of each group
    for (std::size_t l = 0; l < gam.size(); ++l) {
        const auto& m = index.of(way, static_cast<int>(l));
        auto& o = obs[static_cast<std::size_t>(gam[l])];
        o.insert(o.end(), m.begin(), m.end());
        c[gam[l]] += 1.0 / n_k;
    }
    std::vector<std::vector<double>> base(obs.size());
    for (std::size_t g = 0; g < obs.size(); ++g) {
        for (int i : obs[g]) {
            double b = xb_row(ds, model.beta, i);
            for (int k = 0; k < K; ++k)
                if (k != way) b += model.level_effect(k, ds.ways[k][i]);
            base[g].push_back(b);
        }
    }
    // Penalty as a function of this way's effects: (lambda N w / 2)(c'a - target)^2
    // up to a constant, w = number of neighbouring ways.
    const auto means = way_means(model.alpha, model.gamma);
    double target = 0.0;
    int touching = 0;
    for (int j : {way - 1, way + 1}) {
        if (j < 0 || j >= K) continue;
        target += means[j];
        ++touching;
    }
    if (touching) target /= touching;
    const double pw = model.lambda * static_cast<double>(ds.n_obs()) * touching;

    std::vector<int> active;
    for (std::size_t g = 0; g < obs.size(); ++g)
        if (!obs[g].empty()) active.push_back(static_cast<int>(g));
    Eigen::VectorXd a = model.alpha[way];
    if (active.empty()) return a;
    std::size_t* floors = warnings ? &warnings->underflow_floors : nullptr;

    auto value = [&](const Eigen::VectorXd& v) {
        double s = 0.0;
        for (int g : active)
            for (std::size_t t = 0; t < obs[g].size(); ++t)
                s += log_density(fam, ds.y[obs[g][t]], base[g][t] + v[g], psi, floors);
        const double d = c.dot(v) - target;
        return s - 0.5 * pw * d * d;
    };
    double f = value(a);
    const auto A = static_cast<Eigen::Index>(active.size());
    const int iters = cfg.one_step_newton ? 1 : kMaxNewtonIter;
    for (int it = 0; it < iters; ++it) {
        const double dev = c.dot(a) - target;
        Eigen::VectorXd grad(A), ca(A);
        Eigen::MatrixXd info = Eigen::MatrixXd::Zero(A, A);
        for (Eigen::Index r = 0; r < A; ++r) {
            const int g = active[static_cast<std::size_t>(r)];
            double d1 = 0.0, d2 = 0.0;
            for (std::size_t t = 0; t < obs[g].size(); ++t) {
                const auto d = eta_derivatives(fam, ds.y[obs[g][t]], base[g][t] + a[g], psi, obs[g][t]);
                d1 += d.d1;
                d2 += d.d2;
            }
            ca[r] = c[g];
            grad[r] = d1 - pw * c[g] * dev;
            info(r, r) = -d2;
        }
        info += pw * ca * ca.transpose();
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) break;
        const Eigen::VectorXd step = ldlt.solve(grad);
        const double decrement = grad.dot(step);
        if (!(decrement > kStationaryTol * scale_of(f))) break;

        double t = 1.0;
        bool accepted = false;
        Eigen::VectorXd trial = a;
        double f_trial = f;
        for (int h = 0; h <= cfg.max_halvings; ++h, t *= 0.5) {
            trial = a;
            for (Eigen::Index r = 0; r < A; ++r) trial[active[static_cast<std::size_t>(r)]] += t * step[r];
            f_trial = value(trial);
            if (f_trial >= f) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (decrement > kNoProgressTol * scale_of(f))
                throw NoProgressError("joint effect line search exhausted " + std::to_string(cfg.max_halvings) +
                                      " halvings");
            break;
        }
        a = trial;
        f = f_trial;
    }
    return a;
}

namespace {

std::vector<int> assign_levels(const FittedModel& model, const Dataset& ds, const LevelIndex& index, int way,
                               bool with_penalty, FitWarnings* warnings) {
    const int K = model.n_ways();
    const auto& alpha = model.alpha[way];
    const auto G = alpha.size();
    std::vector<int> gam = model.gamma[way];
    const double n_k = static_cast<double>(gam.size());
    const double N = static_cast<double>(ds.n_obs());
    const auto means = way_means(model.alpha, model.gamma);
    std::size_t* floors = warnings ? &warnings->underflow_floors : nullptr;

    double level_sum = 0.0;
    for (int g : gam) level_sum += alpha[g];

    std::vector<double> base;
    for (std::size_t l = 0; l < gam.size(); ++l) {
        const auto& members = index.of(way, static_cast<int>(l));
        base.resize(members.size());
        for (std::size_t t = 0; t < members.size(); ++t) {
            const int i = members[t];
            double b = xb_row(ds, model.beta, i);
            for (int k = 0; k < K; ++k)
                if (k != way) b += model.level_effect(k, ds.ways[k][i]);
            base[t] = b;
        }
        // Levels before l already carry their new assignment, levels after
        // their previous one.
        const double sum_without = level_sum - alpha[gam[l]];
        double best = -std::numeric_limits<double>::infinity();
        int best_g = gam[l];
        for (Eigen::Index g = 0; g < static_cast<Eigen::Index>(G); ++g) {
            double ll = 0.0;
            for (std::size_t t = 0; t < members.size(); ++t)
                ll += log_density(ds.family, ds.y[members[t]], base[t] + alpha[g], model.psi, floors);
            const double mean_k = (sum_without + alpha[g]) / n_k;
            double pen = 0.0;
            for (int j : {way - 1, way + 1}) {
                if (j < 0 || j >= K) continue;
                const double d = mean_k - means[j];
                pen += d * d;
            }
            const double score = with_penalty ? ll / N - 0.5 * model.lambda * pen : ll;
            if (score > best) {
                best = score;
                best_g = static_cast<int>(g);
            }
        }
        gam[l] = best_g;
        level_sum = sum_without + alpha[best_g];
    }
    return gam;
}

}  // namespace

std::vector<int> update_assignments(const FittedModel& model, const Dataset& ds, const LevelIndex& index,
                                    int way, FitWarnings* warnings) {
    return assign_levels(model, ds, index, way, true, warnings);
}

std::vector<int> update_assignments_profiled(const FittedModel& model, const Dataset& ds, const LevelIndex& index,
                                             int way, FitWarnings* warnings) {
    return assign_levels(model, ds, index, way, false, warnings);
}

std::vector<Eigen::VectorXd> equalize_way_means(const std::vector<Eigen::VectorXd>& alpha,
                                                const std::vector<std::vector<int>>& gamma) {
    const auto means = way_means(alpha, gamma);
    double centre = 0.0;
    for (double m : means) centre += m;
    centre /= static_cast<double>(means.size());
    std::vector<Eigen::VectorXd> out = alpha;
    for (std::size_t k = 0; k < out.size(); ++k) out[k].array() += centre - means[k];
    return out;
}

FittedModel initialize(const Dataset& ds, const LevelIndex& index, const std::vector<int>& groups,
                       InitStrategy strategy, std::uint64_t seed, double lambda) {
    const auto N = static_cast<Eigen::Index>(ds.n_obs());
    const int K = ds.n_ways();
    FittedModel m;
    m.family = ds.family;
    m.lambda = lambda;
    m.beta = Eigen::VectorXd::Zero(ds.X.cols());

    const double mean_y = ds.y.mean();
    const double eta0 = null_linear_predictor(ds.family, mean_y);
    m.psi = 1.0;
    if (ds.family.has_dispersion()) {
        const double var = (ds.y.array() - mean_y).square().sum() / static_cast<double>(N);
        m.psi = std::max(var, kPsiFloor);
    }
    // Working residuals of the null fit: score / information at eta0.
    Eigen::VectorXd resid(N);
    for (Eigen::Index i = 0; i < N; ++i) {
        const auto d = eta_derivatives(ds.family, ds.y[i], eta0, m.psi, i);
        resid[i] = d.d2 < 0.0 ? d.d1 / -d.d2 : 0.0;
    }

    Rng rng(seed, 0x5eed);
    m.alpha.resize(K);
    m.gamma.resize(K);
    for (int k = 0; k < K; ++k) {
        const int n_k = ds.n_levels[k];
        const int G = groups[k];
        std::vector<double> level_mean(n_k, 0.0);
        for (int l = 0; l < n_k; ++l) {
            const auto& members = index.of(k, l);
            double s = 0.0;
            for (int i : members) s += resid[i];
            level_mean[l] = s / static_cast<double>(members.size());
        }
        auto& gam = m.gamma[k];
        gam.assign(n_k, 0);
        if (strategy == InitStrategy::quantile) {
            std::vector<int> order(n_k);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](int a, int b) { return level_mean[a] < level_mean[b]; });
            for (int r = 0; r < n_k; ++r)
                gam[order[r]] = static_cast<int>(static_cast<long long>(r) * G / n_k);
        } else {
            for (int l = 0; l < n_k; ++l) gam[l] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(G)));
        }
        Eigen::VectorXd a = Eigen::VectorXd::Zero(G);
        Eigen::VectorXd cnt = Eigen::VectorXd::Zero(G);
        for (int l = 0; l < n_k; ++l) {
            a[gam[l]] += level_mean[l];
            cnt[gam[l]] += 1.0;
        }
        for (int g = 0; g < G; ++g) a[g] = cnt[g] > 0 ? a[g] / cnt[g] : 0.0;
        double mean_k = 0.0;
        for (int l = 0; l < n_k; ++l) mean_k += a[gam[l]];
        mean_k /= n_k;
        // Every way gets the same level mean, so the penalty starts at zero.
        a.array() += eta0 / K - mean_k;
        m.alpha[k] = a;
    }
    return m;
}

namespace {

FittedModel run_sweeps(const Dataset& ds, const LevelIndex& index, const FitConfig& cfg, FittedModel model,
                       const FitObserver& observer) {
    FitWarnings& warn = model.warnings;
    const bool has_regression_block = ds.X.cols() > 0 || ds.family.has_dispersion();
    auto observed_q = [&] { return observer ? objective(model, ds) : 0.0; };

    // Profiled sweeps maximize the likelihood alone and then re-centre the ways,
    // which removes the penalty without moving the linear predictor.
    const bool profiled = cfg.assignment_rule == AssignmentRule::profiled;
    FittedModel scratch;
    auto unpenalized = [&]() -> const FittedModel& {
        scratch.family = model.family;
        scratch.beta = model.beta;
        scratch.psi = model.psi;
        scratch.alpha = model.alpha;
        scratch.gamma = model.gamma;
        scratch.lambda = 0.0;
        return scratch;
    };
    if (profiled) model.alpha = equalize_way_means(model.alpha, model.gamma);

    double q_prev = objective(model, ds, &warn.underflow_floors);
    model.objective_trace.assign(1, q_prev);
    model.converged = false;
    model.sweeps = 0;

    for (int sweep = 1; sweep <= cfg.max_iter; ++sweep) {
        const FittedModel prev = model;
        auto run_block = [&](BlockKind kind, int way, int group, auto&& body) {
            const double before = observed_q();
            try {
                body();
            } catch (Error& e) {
                e.add_context("sweep " + std::to_string(sweep) + ", " + block_name(kind, way, group));
                throw;
            }
            if (observer) observer(BlockEvent{sweep, kind, way, group, before, observed_q()});
        };

        if (has_regression_block) {
            run_block(BlockKind::regression, -1, -1, [&] {
                auto upd = update_regression(model, ds, cfg, &warn);
                model.beta = std::move(upd.beta);
                model.psi = upd.psi;
            });
        }
        run_block(BlockKind::location, -1, -1, [&] {
            const double delta = update_location(model, ds, cfg, &warn);
            for (auto& a : model.alpha) a.array() += delta / static_cast<double>(model.n_ways());
        });
        for (int k = 0; k < ds.n_ways(); ++k) {
            for (int g = 0; g < model.alpha[k].size(); ++g) {
                run_block(BlockKind::group_effect, k, g, [&] {
                    if (!profiled) {
                        model.alpha[k][g] = update_group_effect(model, ds, index, k, g, cfg, &warn);
                        return;
                    }
                    const double a = update_group_effect(unpenalized(), ds, index, k, g, cfg, &warn);
                    model.alpha[k][g] = a;
                    model.alpha = equalize_way_means(model.alpha, model.gamma);
                });
            }
            run_block(BlockKind::way_effects, k, -1, [&] {
                if (!profiled) {
                    model.alpha[k] = update_way_effects(model, ds, index, k, cfg, &warn);
                    return;
                }
                Eigen::VectorXd a = update_way_effects(unpenalized(), ds, index, k, cfg, &warn);
                model.alpha[k] = std::move(a);
                model.alpha = equalize_way_means(model.alpha, model.gamma);
            });
            run_block(BlockKind::assignments, k, -1, [&] {
                if (cfg.assignment_rule == AssignmentRule::exact) {
                    model.gamma[k] = update_assignments(model, ds, index, k, &warn);
                } else {
                    model.gamma[k] = update_assignments_profiled(model, ds, index, k, &warn);
                    model.alpha = equalize_way_means(model.alpha, model.gamma);
                }
            });
        }

        const double q = objective(model, ds, &warn.underflow_floors);
        model.objective_trace.push_back(q);
        model.sweeps = sweep;

        double drift = std::fabs(model.psi - prev.psi);
        if (model.beta.size() > 0) drift = std::max(drift, (model.beta - prev.beta).cwiseAbs().maxCoeff());
        for (int k = 0; k < ds.n_ways(); ++k)
            drift = std::max(drift, (model.alpha[k] - prev.alpha[k]).cwiseAbs().maxCoeff());
        const bool stable = model.gamma == prev.gamma;
        const double rel_gain = (q - q_prev) / std::max(std::fabs(q_prev), std::numeric_limits<double>::min());
        q_prev = q;
        if (rel_gain < cfg.tol_obj || (stable && drift < cfg.tol_obj)) {
            model.converged = true;
            break;
        }
    }
    return model;
}

void check_fit_inputs(const Dataset& ds, const FitConfig& cfg) {
    cfg.validate();
    ds.validate();
    if (ds.family.kind == FamilyKind::ordered_probit && ds.family.thresholds.empty())
        throw ConfigError("ordered probit fit needs thresholds; estimate them with fit_ordered_null");
    ds.family.validate();
    check_design_rank(ds);
}

}  // namespace

FittedModel fit(const Dataset& ds, const FitConfig& cfg, const FitObserver& observer) {
    check_fit_inputs(ds, cfg);
    const auto groups = cfg.resolve_groups(ds);
    const LevelIndex index = build_level_index(ds);

    FittedModel best;
    for (int s = 0; s < cfg.n_starts; ++s) {
        const InitStrategy strategy = s == 0 ? cfg.init : InitStrategy::random;
        FittedModel start;
        try {
            start = initialize(ds, index, groups, strategy, cfg.seed + static_cast<std::uint64_t>(s), cfg.lambda);
        } catch (Error& e) {
            e.add_context("start " + std::to_string(s + 1) + ", initialization");
            throw;
        }
        FittedModel m = run_sweeps(ds, index, cfg, std::move(start), observer);
        m.best_start = s;
        if (s == 0 || m.objective_trace.back() > best.objective_trace.back()) best = std::move(m);
    }
    canonicalize_groups(best);
    return best;
}

FittedModel fit_from(const Dataset& ds, const FitConfig& cfg, FittedModel start, const FitObserver& observer) {
    check_fit_inputs(ds, cfg);
    start.check_compatible(ds);
    start.family = ds.family;
    start.lambda = cfg.lambda;
    start.warnings = {};
    const LevelIndex index = build_level_index(ds);
    FittedModel m = run_sweeps(ds, index, cfg, std::move(start), observer);
    canonicalize_groups(m);
    return m;
}

void canonicalize_groups(FittedModel& model) {
    for (int k = 0; k < model.n_ways(); ++k) {
        const auto& a = model.alpha[k];
        std::vector<int> order(static_cast<std::size_t>(a.size()));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return a[x] < a[y]; });
        std::vector<int> new_label(order.size());
        Eigen::VectorXd sorted(a.size());
        for (std::size_t r = 0; r < order.size(); ++r) {
            new_label[order[r]] = static_cast<int>(r);
            sorted[static_cast<Eigen::Index>(r)] = a[order[r]];
        }
        model.alpha[k] = sorted;
        for (int& g : model.gamma[k]) g = new_label[g];
    }
}

double recover_intercept(const FittedModel& model) {
    const auto means = way_means(model.alpha, model.gamma);
    return std::accumulate(means.begin(), means.end(), 0.0);
}

}  // namespace cge
