#include "cge/model_io.hpp"

#include "cge/error.hpp"

#include <fstream>
#include <sstream>

namespace cge {

using ojson = nlohmann::ordered_json;

ModelArtifact make_artifact(const FittedModel& model, const Dataset& ds, std::optional<InferenceResult> inference) {
    model.check_compatible(ds);
    ModelArtifact a;
    a.model = model;
    a.response = ds.response_name;
    a.covariate_names = ds.covariate_names;
    a.way_names = ds.way_names;
    a.level_labels = ds.level_labels;
    a.inference = std::move(inference);
    return a;
}

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vec(const std::vector<double>& v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
}

ojson warnings_json(const FitWarnings& w) {
    ojson j;
    j["underflow_floors"] = w.underflow_floors;
    j["empty_groups"] = w.empty_groups;
    j["psi_floors"] = w.psi_floors;
    return j;
}

template <class T>
T field(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) throw LoadError(std::string("model file lacks field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw LoadError(std::string("model field '") + key + "' has the wrong type");
    }
}

}  // namespace

ojson to_json(const ModelArtifact& a) {
    const FittedModel& m = a.model;
    ojson j;
    j["schema_version"] = kModelSchemaVersion;
    j["family"] = to_string(m.family.kind);
    if (m.family.kind == FamilyKind::ordered_probit) j["thresholds"] = m.family.thresholds;
    j["response"] = a.response;
    j["covariates"] = a.covariate_names;
    j["beta"] = to_vec(m.beta);
    if (a.inference) {
        j["se"] = to_vec(a.inference->se);
        ojson iv = ojson::array();
        for (const auto& [lo, hi] : a.inference->intervals) iv.push_back({lo, hi});
        j["intervals"] = iv;
        j["confidence_level"] = a.inference->level;
    }
    j["psi"] = m.psi;
    j["lambda"] = m.lambda;
    j["intercept"] = recover_intercept(m);

    ojson ways = ojson::array();
    for (int k = 0; k < m.n_ways(); ++k) {
        ojson w;
        w["name"] = k < static_cast<int>(a.way_names.size()) ? a.way_names[k] : "way" + std::to_string(k + 1);
        w["labels"] = k < static_cast<int>(a.level_labels.size()) ? a.level_labels[k] : std::vector<std::string>{};
        w["group_effects"] = to_vec(m.alpha[k]);
        std::vector<int> assign;
        std::vector<double> eff;
        for (std::size_t l = 0; l < m.gamma[k].size(); ++l) {
            assign.push_back(m.gamma[k][l] + 1);
            eff.push_back(m.level_effect(k, static_cast<int>(l)));
        }
        w["assignments"] = assign;
        w["level_effects"] = eff;
        ways.push_back(w);
    }
    j["ways"] = ways;

    if (a.null_fit) {
        ojson nf;
        nf["thresholds"] = a.null_fit->thresholds;
        nf["beta"] = to_vec(a.null_fit->beta);
        nf["log_likelihood"] = a.null_fit->log_likelihood;
        nf["iterations"] = a.null_fit->iterations;
        nf["converged"] = a.null_fit->converged;
        j["null_fit"] = nf;
    }
    j["objective_trace"] = m.objective_trace;
    j["converged"] = m.converged;
    j["sweeps"] = m.sweeps;
    j["best_start"] = m.best_start;
    j["warnings"] = warnings_json(m.warnings);
    return j;
}

ModelArtifact artifact_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw LoadError("model file is not a JSON object");
    const int version = field<int>(j, "schema_version");
    if (version != kModelSchemaVersion)
        throw LoadError("unsupported model schema_version " + std::to_string(version));
    ModelArtifact a;
    FittedModel& m = a.model;
    m.family.kind = parse_family_kind(field<std::string>(j, "family"));
    if (m.family.kind == FamilyKind::ordered_probit) m.family.thresholds = field<std::vector<double>>(j, "thresholds");
    m.family.validate();
    a.response = field<std::string>(j, "response");
    a.covariate_names = field<std::vector<std::string>>(j, "covariates");
    m.beta = from_vec(field<std::vector<double>>(j, "beta"));
    if (m.beta.size() != static_cast<Eigen::Index>(a.covariate_names.size()))
        throw LoadError("model has " + std::to_string(m.beta.size()) + " coefficients for " +
                        std::to_string(a.covariate_names.size()) + " covariates");
    m.psi = field<double>(j, "psi");
    m.lambda = field<double>(j, "lambda");

    const auto ways = field<nlohmann::json>(j, "ways");
    if (!ways.is_array() || ways.empty()) throw LoadError("model field 'ways' must be a non-empty array");
    for (const auto& w : ways) {
        a.way_names.push_back(field<std::string>(w, "name"));
        a.level_labels.push_back(field<std::vector<std::string>>(w, "labels"));
        m.alpha.push_back(from_vec(field<std::vector<double>>(w, "group_effects")));
        std::vector<int> g = field<std::vector<int>>(w, "assignments");
        const auto G = static_cast<int>(m.alpha.back().size());
        for (auto& v : g) {
            if (v < 1 || v > G) throw LoadError("assignment " + std::to_string(v) + " outside 1.." + std::to_string(G));
            --v;
        }
        if (g.size() != a.level_labels.back().size())
            throw LoadError("way '" + a.way_names.back() + "' has " + std::to_string(g.size()) +
                            " assignments for " + std::to_string(a.level_labels.back().size()) + " labels");
        m.gamma.push_back(std::move(g));
    }

    if (j.contains("se") && j.contains("intervals")) {
        InferenceResult inf;
        inf.se = from_vec(field<std::vector<double>>(j, "se"));
        for (const auto& iv : field<std::vector<std::vector<double>>>(j, "intervals")) {
            if (iv.size() != 2) throw LoadError("each interval needs two endpoints");
            inf.intervals.emplace_back(iv[0], iv[1]);
        }
        inf.level = j.contains("confidence_level") ? field<double>(j, "confidence_level") : 0.95;
        inf.cov_beta = inf.se.array().square().matrix().asDiagonal();
        a.inference = std::move(inf);
    }
    if (j.contains("null_fit")) {
        const auto& nf = j.at("null_fit");
        OrderedNullFit n;
        n.thresholds = field<std::vector<double>>(nf, "thresholds");
        n.beta = from_vec(field<std::vector<double>>(nf, "beta"));
        n.log_likelihood = field<double>(nf, "log_likelihood");
        n.iterations = field<int>(nf, "iterations");
        n.converged = field<bool>(nf, "converged");
        a.null_fit = std::move(n);
    }
    m.objective_trace = field<std::vector<double>>(j, "objective_trace");
    m.converged = field<bool>(j, "converged");
    m.sweeps = field<int>(j, "sweeps");
    m.best_start = j.contains("best_start") ? field<int>(j, "best_start") : 0;
    if (j.contains("warnings")) {
        const auto& w = j.at("warnings");
        m.warnings.underflow_floors = field<std::size_t>(w, "underflow_floors");
        m.warnings.empty_groups = field<std::size_t>(w, "empty_groups");
        m.warnings.psi_floors = field<std::size_t>(w, "psi_floors");
    }
    return a;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << text;
    if (!out) throw ConfigError("write to '" + path + "' failed");
}

void save_model(const ModelArtifact& a, const std::string& path) { write_text_file(path, to_json(a).dump(2) + "\n"); }

ModelArtifact load_model(const std::string& path) {
    const std::string text = read_text_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw LoadError("'" + path + "' is not valid JSON: " + e.what());
    }
    try {
        return artifact_from_json(j);
    } catch (Error& e) {
        e.add_context(path);
        throw;
    }
}

ojson to_json(const SmoothedEffects& s, const ModelArtifact& a) {
    ojson j;
    j["schema_version"] = kModelSchemaVersion;
    j["family"] = to_string(a.model.family.kind);
    j["covariates"] = a.covariate_names;
    j["beta"] = to_vec(a.model.beta);
    j["beta_smoothed"] = to_vec(s.beta_smoothed);
    j["psi"] = a.model.psi;
    j["psi_smoothed"] = s.psi_smoothed;
    ojson ways = ojson::array();
    for (std::size_t k = 0; k < s.probabilities.size(); ++k) {
        ojson w;
        w["name"] = k < a.way_names.size() ? a.way_names[k] : "way" + std::to_string(k + 1);
        w["labels"] = k < a.level_labels.size() ? a.level_labels[k] : std::vector<std::string>{};
        w["group_effects"] = to_vec(a.model.alpha[k]);
        ojson probs = ojson::array();
        const auto& P = s.probabilities[k];
        for (Eigen::Index l = 0; l < P.rows(); ++l) probs.push_back(to_vec(P.row(l).transpose()));
        w["probabilities"] = probs;
        w["smoothed_effects"] = to_vec(s.level_effects[k]);
        ways.push_back(w);
    }
    j["ways"] = ways;
    return j;
}

ojson to_json(const SimResult& r, bool omit_timings) {
    ojson j;
    j["design"] = to_string(r.design.kind);
    j["scenario"] = to_string(r.design.scenario);
    j["N"] = r.design.N;
    j["replications"] = r.design.replications;
    j["seed"] = r.design.seed;
    j["confidence_level"] = r.design.level;
    j["lambda"] = r.design.fit.lambda;
    j["truth_beta"] = to_vec(r.truth_beta);
    j["mse"] = to_vec(r.mse);
    j["cp"] = to_vec(r.cp);
    j["mean_mse"] = r.mean_mse;
    j["mean_cp"] = r.mean_cp;
    j["mean_intercept"] = r.mean_intercept;
    j["mean_runtime_sec"] = omit_timings ? 0.0 : r.mean_runtime_sec;
    j["failures"] = r.failures;
    ojson recs = ojson::array();
    for (const auto& rec : r.records) {
        ojson e;
        e["replication"] = rec.replication;
        e["seed"] = rec.seed;
        e["ok"] = rec.ok;
        if (!rec.ok) e["error"] = rec.error;
        e["beta_hat"] = to_vec(rec.beta_hat);
        e["se"] = to_vec(rec.se);
        e["covered"] = rec.covered;
        e["intercept"] = rec.intercept;
        e["converged"] = rec.converged;
        e["sweeps"] = rec.sweeps;
        e["runtime_sec"] = omit_timings ? 0.0 : rec.runtime_sec;
        recs.push_back(e);
    }
    j["estimates"] = recs;
    return j;
}

std::string estimates_csv(const SimResult& r) {
    std::ostringstream out;
    const Eigen::Index p = r.truth_beta.size();
    out << "replication,seed,ok";
    for (Eigen::Index k = 1; k <= p; ++k) out << ",beta" << k;
    for (Eigen::Index k = 1; k <= p; ++k) out << ",covered" << k;
    out << ",intercept,converged,sweeps\n";
    for (const auto& rec : r.records) {
        out << rec.replication << ',' << rec.seed << ',' << (rec.ok ? 1 : 0);
        for (Eigen::Index k = 0; k < p; ++k) out << ',' << (rec.ok ? format_double(rec.beta_hat[k]) : "");
        for (Eigen::Index k = 0; k < p; ++k)
            out << ',' << (rec.ok ? std::to_string(rec.covered[static_cast<std::size_t>(k)]) : "");
        out << ',' << (rec.ok ? format_double(rec.intercept) : "") << ',' << (rec.converged ? 1 : 0) << ','
            << rec.sweeps << '\n';
    }
    return out.str();
}

std::string sim_table_csv(const std::vector<SimResult>& results, bool omit_timings) {
    std::ostringstream out;
    out << "design,scenario,N,MSE_CGE,CP_CGE,runtime_CGE,failures\n";
    for (const auto& r : results) {
        out << to_string(r.design.kind) << ',' << to_string(r.design.scenario) << ',' << r.design.N << ','
            << format_double(r.mean_mse) << ',' << format_double(100.0 * r.mean_cp) << ','
            << format_double(omit_timings ? 0.0 : r.mean_runtime_sec) << ',' << r.failures << '\n';
    }
    return out.str();
}

}  // namespace cge
