#include "cge/simharness.hpp"

#include "cge/error.hpp"
#include "cge/inference.hpp"
#include "cge/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

namespace cge {

std::string to_string(SimDesignKind d) {
    switch (d) {
    case SimDesignKind::two_way_logistic: return "two_way_logistic";
    case SimDesignKind::three_way_poisson: return "three_way_poisson";
    case SimDesignKind::ordered_two_way: return "ordered_two_way";
    }
    return "?";
}

std::string to_string(Scenario s) { return s == Scenario::s1 ? "s1" : "s2"; }

SimDesignKind parse_design(const std::string& name) {
    if (name == "two_way_logistic") return SimDesignKind::two_way_logistic;
    if (name == "three_way_poisson") return SimDesignKind::three_way_poisson;
    if (name == "ordered_two_way") return SimDesignKind::ordered_two_way;
    throw ConfigError("unknown design '" + name + "'");
}

Scenario parse_scenario(const std::string& name) {
    if (name == "s1" || name == "1") return Scenario::s1;
    if (name == "s2" || name == "2") return Scenario::s2;
    throw ConfigError("unknown scenario '" + name + "'");
}

int two_way_levels(int N) { return static_cast<int>(std::floor(std::sqrt(static_cast<double>(N)))); }
int three_way_levels(int N) { return 2 * two_way_levels(N); }

void SimDesign::validate() const {
    if (N < 25) throw ConfigError("simulation needs N >= 25");
    if (replications < 1) throw ConfigError("replications must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie strictly between 0 and 1");
    fit.validate();
}

namespace {

Eigen::MatrixXd draw_covariates(Rng& rng, int N, int p) {
    Eigen::MatrixXd X(N, p);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
    return X;
}

// Uniform codes hitting every level; after the retry budget, empty levels are
// dropped and the rest recoded.
std::vector<int> draw_indicators(Rng& rng, int N, int& n_levels, const std::string& way,
                                 std::vector<std::string>& warnings) {
    std::vector<int> codes(static_cast<std::size_t>(N));
    std::vector<int> hits(static_cast<std::size_t>(n_levels));
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::fill(hits.begin(), hits.end(), 0);
        for (auto& c : codes) {
            c = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_levels)));
            ++hits[static_cast<std::size_t>(c)];
        }
        if (std::find(hits.begin(), hits.end(), 0) == hits.end()) return codes;
    }
    std::vector<int> recode(hits.size(), -1);
    int next = 0;
    for (std::size_t l = 0; l < hits.size(); ++l)
        if (hits[l] > 0) recode[l] = next++;
    for (auto& c : codes) c = recode[static_cast<std::size_t>(c)];
    warnings.push_back(way + ": " + std::to_string(n_levels - next) + " empty levels dropped, " +
                       std::to_string(next) + " remain");
    n_levels = next;
    return codes;
}

Eigen::VectorXd normal_effects(Rng& rng, int n, double mean, double sd) {
    Eigen::VectorXd e(n);
    for (int l = 0; l < n; ++l) e[l] = rng.normal(mean, sd);
    return e;
}

// shift + sign * Ga(1, rate) with shift = 1/rate, so the effects have mean 0.
Eigen::VectorXd gamma_effects(Rng& rng, int n, double rate, double sign) {
    Eigen::VectorXd e(n);
    const double shift = 1.0 / rate;
    for (int l = 0; l < n; ++l) e[l] = sign * (rng.gamma(1.0, rate) - shift);
    return e;
}

Eigen::VectorXd mixture_effects(Rng& rng, int n, double m, double sd) {
    Eigen::VectorXd e(n);
    for (int l = 0; l < n; ++l) {
        const double centre = rng.uniform() < 0.5 ? -m : m;
        e[l] = rng.normal(centre, sd);
    }
    return e;
}

struct Layout {
    Eigen::MatrixXd X;
    std::vector<std::vector<int>> ways;
    std::vector<int> n_levels;
};

Layout draw_layout(Rng& rng, int N, int p, int K, int levels, std::vector<std::string>& warnings) {
    Layout L;
    L.X = draw_covariates(rng, N, p);
    for (int k = 0; k < K; ++k) {
        int n = levels;
        L.ways.push_back(draw_indicators(rng, N, n, "way" + std::to_string(k + 1), warnings));
        L.n_levels.push_back(n);
    }
    return L;
}

Eigen::VectorXd eta_of(const Layout& L, const SimTruth& t) {
    Eigen::VectorXd eta = L.X * t.beta;
    eta.array() += t.intercept;
    for (std::size_t k = 0; k < L.ways.size(); ++k)
        for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] += t.level_effects[k][L.ways[k][i]];
    return eta;
}

SimData finish(Layout L, Eigen::VectorXd y, SimTruth truth, FamilySpec family, std::vector<std::string> warnings) {
    SimData out;
    out.ds = make_dataset(std::move(y), std::move(L.X), std::move(L.ways), std::move(family));
    out.truth = std::move(truth);
    out.warnings = std::move(warnings);
    return out;
}

void check_n(int N) {
    if (N < 25) throw DomainError("simulation needs N >= 25, got " + std::to_string(N));
}

}  // namespace

SimData gen_two_way_logistic(int N, Scenario scenario, std::uint64_t seed) {
    check_n(N);
    Rng rng(seed, 1);
    std::vector<std::string> warnings;
    Layout L = draw_layout(rng, N, 5, 2, two_way_levels(N), warnings);
    SimTruth t;
    t.intercept = 1.0;
    t.beta = (Eigen::VectorXd(5) << -1.0, 0.5, 0.0, 0.0, 0.0).finished();
    if (scenario == Scenario::s1) {
        t.level_effects.push_back(normal_effects(rng, L.n_levels[0], 0.0, 0.5));
        t.level_effects.push_back(normal_effects(rng, L.n_levels[1], 0.0, 1.0));
    } else {
        t.level_effects.push_back(gamma_effects(rng, L.n_levels[0], 1.0, 1.0));
        t.level_effects.push_back(gamma_effects(rng, L.n_levels[1], 1.0, -1.0));
    }
    const Eigen::VectorXd eta = eta_of(L, t);
    Eigen::VectorXd y(N);
    for (int i = 0; i < N; ++i) y[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-eta[i]))) ? 1.0 : 0.0;
    return finish(std::move(L), std::move(y), std::move(t), FamilySpec::logistic(), std::move(warnings));
}

SimData gen_three_way_poisson(int N, Scenario scenario, std::uint64_t seed) {
    check_n(N);
    Rng rng(seed, 2);
    std::vector<std::string> warnings;
    Layout L = draw_layout(rng, N, 5, 3, three_way_levels(N), warnings);
    SimTruth t;
    t.intercept = 1.0;
    t.beta = (Eigen::VectorXd(5) << -0.3, 0.3, 0.0, 0.0, 0.0).finished();
    if (scenario == Scenario::s1) {
        t.level_effects.push_back(normal_effects(rng, L.n_levels[0], 0.0, 0.2));
        t.level_effects.push_back(normal_effects(rng, L.n_levels[1], 0.0, 0.3));
        t.level_effects.push_back(normal_effects(rng, L.n_levels[2], 0.0, 0.3));
    } else {
        t.level_effects.push_back(gamma_effects(rng, L.n_levels[0], 5.0, 1.0));
        t.level_effects.push_back(gamma_effects(rng, L.n_levels[1], 5.0, -1.0));
        t.level_effects.push_back(mixture_effects(rng, L.n_levels[2], 0.3, 0.15));
    }
    const Eigen::VectorXd eta = eta_of(L, t);
    Eigen::VectorXd y(N);
    for (int i = 0; i < N; ++i) y[i] = static_cast<double>(rng.poisson(std::exp(eta[i])));
    return finish(std::move(L), std::move(y), std::move(t), FamilySpec::poisson(), std::move(warnings));
}

SimData gen_ordered_two_way(int N, Scenario scenario, std::uint64_t seed) {
    check_n(N);
    Rng rng(seed, 3);
    std::vector<std::string> warnings;
    Layout L = draw_layout(rng, N, 3, 2, two_way_levels(N), warnings);
    SimTruth t;
    t.intercept = 0.0;
    t.beta = (Eigen::VectorXd(3) << 0.5, -0.5, 0.25).finished();
    t.thresholds = {-1.5, -0.5, 0.5, 1.5};
    if (scenario == Scenario::s1) {
        t.level_effects.push_back(normal_effects(rng, L.n_levels[0], 0.0, 0.7));
        t.level_effects.push_back(normal_effects(rng, L.n_levels[1], 0.0, 0.7));
    } else {
        t.level_effects.push_back(gamma_effects(rng, L.n_levels[0], 1.0 / 0.7, 1.0));
        t.level_effects.push_back(gamma_effects(rng, L.n_levels[1], 1.0 / 0.7, -1.0));
    }
    const Eigen::VectorXd eta = eta_of(L, t);
    Eigen::VectorXd y(N);
    for (int i = 0; i < N; ++i) {
        const double latent = eta[i] + rng.normal();
        int cat = 1;
        while (cat <= static_cast<int>(t.thresholds.size()) && latent > t.thresholds[cat - 1]) ++cat;
        y[i] = cat;
    }
    FamilySpec fam = FamilySpec::ordered_probit(t.thresholds);
    return finish(std::move(L), std::move(y), std::move(t), std::move(fam), std::move(warnings));
}

SimData generate(SimDesignKind kind, int N, Scenario scenario, std::uint64_t seed) {
    switch (kind) {
    case SimDesignKind::two_way_logistic: return gen_two_way_logistic(N, scenario, seed);
    case SimDesignKind::three_way_poisson: return gen_three_way_poisson(N, scenario, seed);
    case SimDesignKind::ordered_two_way: return gen_ordered_two_way(N, scenario, seed);
    }
    throw ConfigError("unknown design");
}

void summarize(SimResult& result) {
    const Eigen::Index p = result.truth_beta.size();
    result.mse = Eigen::VectorXd::Zero(p);
    result.cp = Eigen::VectorXd::Zero(p);
    result.failures = 0;
    result.mean_intercept = 0.0;
    result.mean_runtime_sec = 0.0;
    int ok = 0;
    for (const auto& rec : result.records) {
        result.mean_runtime_sec += rec.runtime_sec;
        if (!rec.ok) {
            ++result.failures;
            continue;
        }
        ++ok;
        result.mse += (rec.beta_hat - result.truth_beta).array().square().matrix();
        for (Eigen::Index k = 0; k < p; ++k) result.cp[k] += rec.covered[static_cast<std::size_t>(k)];
        result.mean_intercept += rec.intercept;
    }
    if (!result.records.empty()) result.mean_runtime_sec /= static_cast<double>(result.records.size());
    if (ok > 0) {
        result.mse /= ok;
        result.cp /= ok;
        result.mean_intercept /= ok;
    }
    result.mean_mse = p ? result.mse.mean() : 0.0;
    result.mean_cp = p ? result.cp.mean() : 0.0;
}

namespace {

ReplicationRecord run_one(const SimDesign& design, int r) {
    ReplicationRecord rec;
    rec.replication = r;
    rec.seed = design.seed + static_cast<std::uint64_t>(r);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        SimData data = generate(design.kind, design.N, design.scenario, rec.seed);
        const FittedModel model = fit(data.ds, design.fit);
        const InferenceResult inf = infer(data.ds, model, design.level);
        rec.beta_hat = model.beta;
        rec.se = inf.se;
        for (Eigen::Index k = 0; k < model.beta.size(); ++k) {
            const auto& [lo, hi] = inf.intervals[static_cast<std::size_t>(k)];
            rec.covered.push_back(lo <= data.truth.beta[k] && data.truth.beta[k] <= hi ? 1 : 0);
        }
        rec.intercept = recover_intercept(model);
        rec.converged = model.converged;
        rec.sweeps = model.sweeps;
        rec.ok = true;
    } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
    }
    rec.runtime_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

}  // namespace

SimResult run_replications(const SimDesign& design, const ProgressFn& progress) {
    design.validate();
    SimResult result;
    result.design = design;
    result.truth_beta = generate(design.kind, design.N, design.scenario, design.seed).truth.beta;
    const int R = design.replications;
    result.records.resize(static_cast<std::size_t>(R));

    std::atomic<int> next{0};
    std::mutex mu;
    auto worker = [&] {
        for (int j = next++; j < R; j = next++) {
            ReplicationRecord rec = run_one(design, j + 1);
            std::lock_guard<std::mutex> lock(mu);
            if (progress) progress(rec);
            result.records[static_cast<std::size_t>(j)] = std::move(rec);
        }
    };
    const int n_threads = std::min(design.threads, R);
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    summarize(result);
    if (10 * result.failures > R) {
        std::string first;
        for (const auto& rec : result.records)
            if (!rec.ok) {
                first = rec.error;
                break;
            }
        throw EstimationError(std::to_string(result.failures) + " of " + std::to_string(R) +
                              " replications failed (first: " + first + ")");
    }
    return result;
}

OrderedMetrics ordered_metrics(const std::vector<double>& predicted_mean, const std::vector<double>& observed,
                               int n_categories) {
    if (predicted_mean.size() != observed.size())
        throw DomainError("ordered_metrics: " + std::to_string(predicted_mean.size()) + " predictions for " +
                          std::to_string(observed.size()) + " observations");
    if (observed.empty()) throw DomainError("ordered_metrics: no observations");
    OrderedMetrics m;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const double y = observed[i];
        if (!(y >= 1.0) || y != std::floor(y) || (n_categories > 0 && y > n_categories))
            throw DomainError("ordered_metrics: observation " + std::to_string(i + 1) + " is not a category");
        const double r = n_categories > 0 ? round_category(predicted_mean[i], n_categories)
                                          : std::round(predicted_mean[i]);
        m.mae += std::abs(predicted_mean[i] - y);
        m.ac0 += r == y ? 1.0 : 0.0;
        m.ac1 += std::abs(r - y) <= 1.0 ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(observed.size());
    m.mae /= n;
    m.ac0 /= n;
    m.ac1 /= n;
    return m;
}

namespace {

struct Split {
    Dataset train;
    Eigen::MatrixXd test_X;
    std::vector<std::vector<int>> test_ways;  // train codes, -1 if unseen
    std::vector<double> test_y;
};

Split make_split(const Dataset& ds, const std::vector<int>& test_rows, const std::vector<int>& train_rows) {
    Split s;
    const int K = ds.n_ways();
    const auto n_train = static_cast<Eigen::Index>(train_rows.size());
    s.train.family = ds.family;
    s.train.y.resize(n_train);
    s.train.X.resize(n_train, ds.X.cols());
    s.train.ways.assign(static_cast<std::size_t>(K), std::vector<int>(train_rows.size()));
    std::vector<std::vector<int>> recode(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        recode[k].assign(static_cast<std::size_t>(ds.n_levels[k]), -1);
        for (int i : train_rows) recode[k][ds.ways[k][i]] = 0;
        int next = 0;
        for (auto& c : recode[k])
            if (c == 0) c = next++;
        s.train.n_levels.push_back(next);
    }
    for (Eigen::Index t = 0; t < n_train; ++t) {
        const int i = train_rows[static_cast<std::size_t>(t)];
        s.train.y[t] = ds.y[i];
        s.train.X.row(t) = ds.X.row(i);
        for (int k = 0; k < K; ++k) s.train.ways[k][t] = recode[k][ds.ways[k][i]];
    }
    s.train.fill_default_names();
    s.train.validate();

    s.test_X.resize(static_cast<Eigen::Index>(test_rows.size()), ds.X.cols());
    s.test_ways.assign(static_cast<std::size_t>(K), std::vector<int>(test_rows.size()));
    for (std::size_t t = 0; t < test_rows.size(); ++t) {
        const int i = test_rows[t];
        s.test_X.row(static_cast<Eigen::Index>(t)) = ds.X.row(i);
        for (int k = 0; k < K; ++k) s.test_ways[k][t] = recode[k][ds.ways[k][i]];
        s.test_y.push_back(ds.y[i]);
    }
    return s;
}

}  // namespace

std::vector<ValidationSplit> run_ordered_validation(const Dataset& ds, int splits, double test_fraction,
                                                    std::uint64_t seed, const FitConfig& cfg) {
    if (ds.family.kind != FamilyKind::ordered_probit) throw ConfigError("validation needs an ordered-probit dataset");
    if (splits < 1) throw ConfigError("splits must be >= 1");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
    const int N = static_cast<int>(ds.n_obs());
    const int n_test = std::max(1, static_cast<int>(std::floor(test_fraction * N)));
    if (n_test >= N) throw ConfigError("test split leaves no training rows");
    const int n_cat = ds.family.thresholds.empty() ? static_cast<int>(ds.y.maxCoeff()) : ds.family.n_categories();

    std::vector<ValidationSplit> out;
    for (int s = 0; s < splits; ++s) {
        Rng rng(seed, 1000 + static_cast<std::uint64_t>(s));
        std::vector<int> perm(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i) perm[i] = i;
        for (int i = N - 1; i > 0; --i)
            std::swap(perm[i], perm[rng.uniform_int(static_cast<std::uint64_t>(i + 1))]);
        std::vector<int> test(perm.begin(), perm.begin() + n_test);
        std::vector<int> train(perm.begin() + n_test, perm.end());
        std::sort(test.begin(), test.end());
        std::sort(train.begin(), train.end());

        Split sp = make_split(ds, test, train);
        const OrderedNullFit null = fit_ordered_null(sp.train, n_cat);
        const FamilySpec fam = FamilySpec::ordered_probit(null.thresholds);
        sp.train.family = fam;
        const FittedModel model = fit(sp.train, cfg);

        const auto preds = predict(model, nullptr, sp.test_X, sp.test_ways, true);
        std::vector<double> cge_mean, base_mean;
        for (std::size_t t = 0; t < preds.size(); ++t) {
            cge_mean.push_back(preds[t].mean);
            const double eta = sp.test_X.cols() ? sp.test_X.row(static_cast<Eigen::Index>(t)).dot(null.beta) : 0.0;
            base_mean.push_back(mean_response(fam, eta));
        }
        ValidationSplit v;
        v.cge = ordered_metrics(cge_mean, sp.test_y, n_cat);
        v.baseline = ordered_metrics(base_mean, sp.test_y, n_cat);
        out.push_back(v);
    }
    return out;
}

}  // namespace cge
