#include "cge/cli.hpp"

#include "cge/error.hpp"
#include "cge/inference.hpp"
#include "cge/model_io.hpp"
#include "cge/smoother.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

namespace cge {

using ojson = nlohmann::ordered_json;

std::string to_string(Command c) {
    switch (c) {
    case Command::fit: return "fit";
    case Command::smooth: return "smooth";
    case Command::predict: return "predict";
    case Command::simulate: return "simulate";
    }
    return "?";
}

std::string to_string(OutputFormat f) { return f == OutputFormat::json ? "json" : "csv"; }

namespace {

OutputFormat parse_format(const std::string& s) {
    if (s == "json") return OutputFormat::json;
    if (s == "csv") return OutputFormat::csv;
    throw ConfigError("unknown format '" + s + "' (json or csv)");
}

int parse_int(const std::string& s, const std::string& what) {
    int v = 0;
    std::size_t used = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) throw ConfigError("bad " + what + " '" + s + "'");
    return v;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) out.push_back(cur);
    return out;
}

// "auto" or a comma list of group counts.
void parse_groups(const std::string& s, FitConfig& fit) {
    if (s == "auto") {
        fit.auto_groups = true;
        fit.group_counts.clear();
        return;
    }
    fit.auto_groups = false;
    fit.group_counts.clear();
    for (const auto& part : split_commas(s)) fit.group_counts.push_back(parse_int(part, "group count"));
}

std::string groups_text(const FitConfig& fit) {
    if (fit.auto_groups || fit.group_counts.empty()) return "auto";
    std::string s;
    for (std::size_t i = 0; i < fit.group_counts.size(); ++i)
        s += (i ? "," : "") + std::to_string(fit.group_counts[i]);
    return s;
}

std::vector<int> parse_sizes(const std::string& s) {
    std::vector<int> out;
    for (const auto& part : split_commas(s)) out.push_back(parse_int(part, "sample size"));
    return out;
}

ojson schema_json(const CsvSchema& s) {
    ojson j;
    j["response"] = s.response;
    j["covariates"] = s.covariates;
    j["ways"] = s.ways;
    return j;
}

CsvSchema schema_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("schema must be a JSON object");
    CsvSchema s;
    try {
        s.response = j.at("response").get<std::string>();
        if (j.contains("covariates")) s.covariates = j.at("covariates").get<std::vector<std::string>>();
        s.ways = j.at("ways").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad schema: ") + e.what());
    }
    s.validate();
    return s;
}

CsvSchema schema_of(const ModelArtifact& a) {
    CsvSchema s;
    s.response = a.response;
    s.covariates = a.covariate_names;
    s.ways = a.way_names;
    return s;
}

void write_output(const RunConfig& cfg, const std::string& text, std::ostream& out) {
    if (cfg.out.empty())
        out << text;
    else
        write_text_file(cfg.out, text);
}

std::string coefficient_csv(const ModelArtifact& a) {
    std::ostringstream s;
    s << "term,estimate,se,lower,upper\n";
    for (Eigen::Index k = 0; k < a.model.beta.size(); ++k) {
        s << csv_escape(a.covariate_names[static_cast<std::size_t>(k)]) << ',' << format_double(a.model.beta[k]);
        if (a.inference) {
            const auto& [lo, hi] = a.inference->intervals[static_cast<std::size_t>(k)];
            s << ',' << format_double(a.inference->se[k]) << ',' << format_double(lo) << ',' << format_double(hi);
        } else {
            s << ",,,";
        }
        s << '\n';
    }
    s << "intercept," << format_double(recover_intercept(a.model)) << ",,,\n";
    return s.str();
}

void print_summary(const ModelArtifact& a, std::size_t n_obs, std::ostream& os) {
    const FittedModel& m = a.model;
    os << "family " << to_string(m.family.kind) << ", N = " << n_obs << ", ways =";
    for (int k = 0; k < m.n_ways(); ++k) os << ' ' << a.way_names[k] << '(' << m.gamma[k].size() << " levels, G=" << m.alpha[k].size() << ')';
    os << '\n';
    os << (m.converged ? "converged" : "NOT converged") << " after " << m.sweeps << " sweeps, objective "
       << std::setprecision(10) << m.objective_trace.back() << '\n';
    os << std::setprecision(6);
    for (Eigen::Index k = 0; k < m.beta.size(); ++k) {
        os << "  " << std::left << std::setw(14) << a.covariate_names[static_cast<std::size_t>(k)] << std::right
           << std::setw(12) << m.beta[k];
        if (a.inference) {
            const auto& [lo, hi] = a.inference->intervals[static_cast<std::size_t>(k)];
            os << "  se " << std::setw(10) << a.inference->se[k] << "  [" << lo << ", " << hi << ']';
        }
        os << '\n';
    }
    os << "  intercept     " << std::setw(12) << recover_intercept(m) << '\n';
    if (m.family.has_dispersion()) os << "  psi           " << std::setw(12) << m.psi << '\n';
    if (m.warnings.underflow_floors || m.warnings.empty_groups || m.warnings.psi_floors)
        os << "warnings: underflow_floors " << m.warnings.underflow_floors << ", empty_groups "
           << m.warnings.empty_groups << ", psi_floors " << m.warnings.psi_floors << '\n';
}

// Rows coded against the model's levels, as a Dataset (levels absent from the
// file stay empty). The response column is required.
Dataset dataset_for_model(const ModelArtifact& a, const RunConfig& cfg) {
    const CsvSchema schema = cfg.schema ? *cfg.schema : schema_of(a);
    LevelCoding coding{a.level_labels, false};
    ScoringRows rows = load_scoring_csv(cfg.input, schema, coding);
    if (!rows.y) throw LoadError("'" + cfg.input + "' lacks the response column '" + schema.response + "'");
    Dataset ds;
    ds.family = a.model.family;
    ds.y = *rows.y;
    ds.X = rows.X;
    ds.ways = rows.ways;
    for (const auto& g : a.model.gamma) ds.n_levels.push_back(static_cast<int>(g.size()));
    ds.response_name = schema.response;
    ds.covariate_names = schema.covariates;
    ds.way_names = schema.ways;
    ds.level_labels = a.level_labels;
    for (Eigen::Index i = 0; i < ds.y.size(); ++i) check_response(ds.family, ds.y[i], i);
    return ds;
}

}  // namespace

void RunConfig::validate() const {
    fit.validate();
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("--level must lie strictly between 0 and 1");
    if (threads < 1) throw ConfigError("--threads must be >= 1");
    switch (command) {
    case Command::fit:
        if (input.empty()) throw ConfigError("fit needs --input");
        if (!schema) throw ConfigError("fit needs --schema");
        break;
    case Command::smooth:
    case Command::predict:
        if (input.empty()) throw ConfigError(to_string(command) + " needs --input");
        if (model.empty()) throw ConfigError(to_string(command) + " needs --model");
        break;
    case Command::simulate:
        if (replications < 1) throw ConfigError("--replications must be >= 1");
        if (sizes.empty()) throw ConfigError("--N needs at least one sample size");
        for (int n : sizes)
            if (n < 25) throw ConfigError("sample size " + std::to_string(n) + " is below 25");
        break;
    }
    if (schema) schema->validate();
}

ojson to_json(const RunConfig& c) {
    ojson j;
    j["command"] = to_string(c.command);
    j["input"] = c.input;
    j["model"] = c.model;
    j["out"] = c.out;
    if (c.schema) j["schema"] = schema_json(*c.schema);
    j["family"] = to_string(c.family);
    j["groups"] = groups_text(c.fit);
    j["lambda"] = c.fit.lambda;
    j["max_iter"] = c.fit.max_iter;
    j["tol"] = c.fit.tol_obj;
    j["seed"] = c.fit.seed;
    j["starts"] = c.fit.n_starts;
    j["init"] = to_string(c.fit.init);
    j["level"] = c.level;
    j["format"] = to_string(c.format);
    j["threads"] = c.threads;
    j["allow_new_levels"] = c.allow_new_levels;
    if (c.command == Command::simulate) {
        j["design"] = to_string(c.design);
        j["N"] = c.sizes;
        j["scenario"] = to_string(c.scenario);
        j["replications"] = c.replications;
        j["omit_timings"] = c.omit_timings;
    }
    return j;
}

void apply_json(RunConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "command") continue;
            else if (key == "input") c.input = v.get<std::string>();
            else if (key == "model") c.model = v.get<std::string>();
            else if (key == "out") c.out = v.get<std::string>();
            else if (key == "schema") c.schema = v.is_string() ? parse_schema(v.get<std::string>()) : schema_from_json(v);
            else if (key == "family") c.family = parse_family_kind(v.get<std::string>());
            else if (key == "groups") {
                if (v.is_array()) {
                    c.fit.auto_groups = false;
                    c.fit.group_counts = v.get<std::vector<int>>();
                } else if (v.is_number_integer()) {
                    c.fit.auto_groups = false;
                    c.fit.group_counts = {v.get<int>()};
                } else {
                    parse_groups(v.get<std::string>(), c.fit);
                }
            }
            else if (key == "lambda") c.fit.lambda = v.get<double>();
            else if (key == "max_iter") c.fit.max_iter = v.get<int>();
            else if (key == "tol") c.fit.tol_obj = v.get<double>();
            else if (key == "seed") c.fit.seed = v.get<std::uint64_t>();
            else if (key == "starts") c.fit.n_starts = v.get<int>();
            else if (key == "init") c.fit.init = parse_init_strategy(v.get<std::string>());
            else if (key == "level") c.level = v.get<double>();
            else if (key == "format") c.format = parse_format(v.get<std::string>());
            else if (key == "threads") c.threads = v.get<int>();
            else if (key == "allow_new_levels") c.allow_new_levels = v.get<bool>();
            else if (key == "design") c.design = parse_design(v.get<std::string>());
            else if (key == "N") c.sizes = v.is_array() ? v.get<std::vector<int>>() : std::vector<int>{v.get<int>()};
            else if (key == "scenario") c.scenario = parse_scenario(v.get<std::string>());
            else if (key == "replications") c.replications = v.get<int>();
            else if (key == "omit_timings") c.omit_timings = v.get<bool>();
            else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
}

CsvSchema parse_schema(const std::string& text_or_path) {
    std::string text = text_or_path;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || text[first] != '{') text = read_text_file(text_or_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("schema is not valid JSON: ") + e.what());
    }
    return schema_from_json(j);
}

int cmd_fit(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    cfg.validate();
    Dataset ds = load_csv(cfg.input, *cfg.schema, FamilySpec{cfg.family, {}});
    std::optional<OrderedNullFit> null_fit;
    if (cfg.family == FamilyKind::ordered_probit) {
        const int n_cat = static_cast<int>(ds.y.maxCoeff());
        if (n_cat < 2) throw DomainError("ordered response needs at least two categories");
        null_fit = fit_ordered_null(ds, n_cat);
        ds.family = FamilySpec::ordered_probit(null_fit->thresholds);
    }
    const FittedModel model = fit(ds, cfg.fit);
    ModelArtifact a = make_artifact(model, ds, infer(ds, model, cfg.level));
    a.null_fit = null_fit;

    const std::string text = cfg.format == OutputFormat::json ? to_json(a).dump(2) + "\n" : coefficient_csv(a);
    write_output(cfg, text, out);
    print_summary(a, ds.n_obs(), cfg.out.empty() ? err : out);
    return model.converged ? 0 : 2;
}

int cmd_smooth(const RunConfig& cfg, std::ostream& out, std::ostream&) {
    cfg.validate();
    const ModelArtifact a = load_model(cfg.model);
    const Dataset ds = dataset_for_model(a, cfg);
    const SmoothedEffects s = smooth(a.model, ds);
    std::string text;
    if (cfg.format == OutputFormat::json) {
        text = to_json(s, a).dump(2) + "\n";
    } else {
        std::ostringstream os;
        os << "way,level,smoothed_effect,point_effect";
        std::size_t G = 0;
        for (const auto& P : s.probabilities) G = std::max<std::size_t>(G, static_cast<std::size_t>(P.cols()));
        for (std::size_t g = 1; g <= G; ++g) os << ",p" << g;
        os << '\n';
        for (std::size_t k = 0; k < s.probabilities.size(); ++k) {
            const auto& P = s.probabilities[k];
            for (Eigen::Index l = 0; l < P.rows(); ++l) {
                os << csv_escape(a.way_names[k]) << ',' << csv_escape(a.level_labels[k][static_cast<std::size_t>(l)])
                   << ',' << format_double(s.level_effects[k][l]) << ','
                   << format_double(a.model.level_effect(static_cast<int>(k), static_cast<int>(l)));
                for (std::size_t g = 0; g < G; ++g)
                    os << ',' << (static_cast<Eigen::Index>(g) < P.cols() ? format_double(P(l, static_cast<Eigen::Index>(g))) : "");
                os << '\n';
            }
        }
        text = os.str();
    }
    write_output(cfg, text, out);
    return 0;
}

int cmd_predict(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    cfg.validate();
    const ModelArtifact a = load_model(cfg.model);
    const CsvSchema schema = cfg.schema ? *cfg.schema : schema_of(a);
    const ScoringRows rows = load_scoring_csv(cfg.input, schema, LevelCoding{a.level_labels, cfg.allow_new_levels});
    const auto preds = predict(a.model, nullptr, rows.X, rows.ways, cfg.allow_new_levels, schema.ways);
    const bool ordered = a.model.family.kind == FamilyKind::ordered_probit;

    std::optional<ojson> metrics;
    if (rows.y) {
        std::vector<double> mean, obs;
        for (std::size_t r = 0; r < preds.size(); ++r) {
            mean.push_back(preds[r].mean);
            obs.push_back((*rows.y)[static_cast<Eigen::Index>(r)]);
        }
        ojson m;
        m["n"] = preds.size();
        if (ordered) {
            const OrderedMetrics om = ordered_metrics(mean, obs, a.model.family.n_categories());
            m["mae"] = om.mae;
            m["ac0"] = om.ac0;
            m["ac1"] = om.ac1;
        } else if (!obs.empty()) {
            double mae = 0.0;
            for (std::size_t r = 0; r < obs.size(); ++r) mae += std::abs(mean[r] - obs[r]);
            m["mae"] = mae / static_cast<double>(obs.size());
        }
        metrics = m;
    }

    std::string text;
    if (cfg.format == OutputFormat::csv) {
        std::ostringstream os;
        os << "row,prediction" << (ordered ? ",category" : "") << ",unknown_level\n";
        for (std::size_t r = 0; r < preds.size(); ++r) {
            os << r + 1 << ',' << format_double(preds[r].mean);
            if (ordered) os << ',' << preds[r].category;
            os << ',' << (preds[r].unknown_level ? 1 : 0) << '\n';
        }
        text = os.str();
        if (metrics) err << "metrics " << metrics->dump() << '\n';
    } else {
        ojson j;
        ojson arr = ojson::array();
        for (std::size_t r = 0; r < preds.size(); ++r) {
            ojson p;
            p["row"] = r + 1;
            p["prediction"] = preds[r].mean;
            if (ordered) p["category"] = preds[r].category;
            p["unknown_level"] = preds[r].unknown_level;
            arr.push_back(p);
        }
        j["predictions"] = arr;
        if (metrics) j["metrics"] = *metrics;
        text = j.dump(2) + "\n";
    }
    write_output(cfg, text, out);
    return 0;
}

int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    cfg.validate();
    const std::string prefix = cfg.out.empty() ? "sim" : cfg.out;
    std::vector<SimResult> results;
    ojson all = ojson::array();
    for (int N : cfg.sizes) {
        SimDesign d;
        d.kind = cfg.design;
        d.N = N;
        d.scenario = cfg.scenario;
        d.replications = cfg.replications;
        d.seed = cfg.fit.seed;
        d.fit = cfg.fit;
        d.level = cfg.level;
        d.threads = cfg.threads;
        SimResult r = run_replications(d, [&](const ReplicationRecord& rec) {
            err << "N=" << N << " replication " << rec.replication << '/' << cfg.replications
                << (rec.ok ? " ok" : " FAILED: " + rec.error) << " sweeps=" << rec.sweeps << '\n';
        });
        all.push_back(to_json(r, cfg.omit_timings));
        write_text_file(prefix + "_N" + std::to_string(N) + "_estimates.csv", estimates_csv(r));
        results.push_back(std::move(r));
    }
    ojson doc;
    doc["results"] = all;
    write_text_file(prefix + ".json", doc.dump(2) + "\n");
    const std::string table = sim_table_csv(results, cfg.omit_timings);
    write_text_file(prefix + ".csv", table);
    out << table;
    return 0;
}

namespace {

void report(std::ostream& err, const char* kind, const std::string& message) {
    ojson j;
    j["error"] = kind;
    j["message"] = message;
    err << j.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Crossed grouped effects GLM estimation"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    std::string input, model, out_path, schema, family, groups, format, config, design, sizes, scenario, init;
    double lambda = 0, tol = 0, level = 0;
    int max_iter = 0, starts = 0, threads = 0, replications = 0;
    std::uint64_t seed = 0;
    bool allow_new = false, print_config = false, omit_timings = false;

    struct Sub {
        Command cmd;
        CLI::App* app;
    };
    std::vector<Sub> subs;
    for (auto [cmd, desc] : {std::pair{Command::fit, "fit a model from CSV"},
                             std::pair{Command::smooth, "pseudo-posterior smoothing of a fitted model"},
                             std::pair{Command::predict, "score CSV rows with a fitted model"},
                             std::pair{Command::simulate, "run replicated simulation designs"}}) {
        CLI::App* s = app.add_subcommand(to_string(cmd), desc);
        s->add_option("--config", config, "JSON config file; flags override its values");
        s->add_flag("--print-config", print_config, "print the resolved configuration and exit");
        s->add_option("--input", input, "input CSV");
        s->add_option("--schema", schema, "column roles as inline JSON or a JSON file");
        s->add_option("--family", family, "gaussian|logistic|poisson|ordered-probit");
        s->add_option("--groups", groups, "\"auto\" or comma list of groups per way");
        s->add_option("--lambda", lambda, "penalty weight (default 100)");
        s->add_option("--max-iter", max_iter, "maximum sweeps");
        s->add_option("--tol", tol, "relative objective tolerance");
        s->add_option("--seed", seed, "random seed");
        s->add_option("--starts", starts, "number of starts");
        s->add_option("--init", init, "quantile|random");
        s->add_option("--level", level, "confidence level (default 0.95)");
        s->add_option("--out", out_path, "output path (simulate: file prefix)");
        s->add_option("--format", format, "json|csv");
        s->add_option("--threads", threads, "worker threads");
        s->add_flag("--allow-new-levels", allow_new, "score unseen levels at the way's centre");
        if (cmd == Command::smooth || cmd == Command::predict) s->add_option("--model", model, "fitted model JSON");
        if (cmd == Command::simulate) {
            s->add_option("--design", design, "two_way_logistic|three_way_poisson|ordered_two_way");
            s->add_option("--N", sizes, "comma list of sample sizes");
            s->add_option("--scenario", scenario, "s1|s2");
            s->add_option("--replications", replications, "replications per sample size");
            s->add_flag("--omit-timings", omit_timings, "write zero runtimes so outputs compare byte for byte");
        }
        subs.push_back({cmd, s});
    }

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp&) {
            out << app.help();
            return 0;
        } catch (const CLI::CallForAllHelp&) {
            out << app.help("", CLI::AppFormatMode::All);
            return 0;
        } catch (const CLI::ParseError& e) {
            if (e.get_exit_code() == 0) {
                out << app.help();
                return 0;
            }
            report(err, "usage", e.what());
            return 1;
        }

        RunConfig cfg;
        CLI::App* sub = nullptr;
        for (const auto& s : subs)
            if (s.app->parsed()) {
                cfg.command = s.cmd;
                sub = s.app;
            }
        cfg.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
        if (cfg.command == Command::simulate) cfg.fit.auto_groups = true;
        if (sub->count("--config")) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(read_text_file(config));
            } catch (const nlohmann::json::parse_error& e) {
                throw ConfigError("config '" + config + "' is not valid JSON: " + e.what());
            }
            apply_json(cfg, j);
        }
        auto given = [&](const char* flag) { return sub->get_option_no_throw(flag) && sub->count(flag) > 0; };
        if (given("--input")) cfg.input = input;
        if (given("--model")) cfg.model = model;
        if (given("--out")) cfg.out = out_path;
        if (given("--schema")) cfg.schema = parse_schema(schema);
        if (given("--family")) cfg.family = parse_family_kind(family);
        if (given("--groups")) parse_groups(groups, cfg.fit);
        if (given("--lambda")) cfg.fit.lambda = lambda;
        if (given("--max-iter")) cfg.fit.max_iter = max_iter;
        if (given("--tol")) cfg.fit.tol_obj = tol;
        if (given("--seed")) cfg.fit.seed = seed;
        if (given("--starts")) cfg.fit.n_starts = starts;
        if (given("--init")) cfg.fit.init = parse_init_strategy(init);
        if (given("--level")) cfg.level = level;
        if (given("--format")) cfg.format = parse_format(format);
        if (given("--threads")) cfg.threads = threads;
        if (given("--allow-new-levels")) cfg.allow_new_levels = allow_new;
        if (given("--design")) cfg.design = parse_design(design);
        if (given("--N")) cfg.sizes = parse_sizes(sizes);
        if (given("--scenario")) cfg.scenario = parse_scenario(scenario);
        if (given("--replications")) cfg.replications = replications;
        if (given("--omit-timings")) cfg.omit_timings = omit_timings;

        if (print_config) {
            out << to_json(cfg).dump(2) << '\n';
            return 0;
        }
        switch (cfg.command) {
        case Command::fit: return cmd_fit(cfg, out, err);
        case Command::smooth: return cmd_smooth(cfg, out, err);
        case Command::predict: return cmd_predict(cfg, out, err);
        case Command::simulate: return cmd_simulate(cfg, out, err);
        }
        return 1;
    } catch (const RankError& e) {
        ojson j;
        j["error"] = e.kind();
        j["message"] = e.what();
        if (!e.column_name.empty()) j["column"] = e.column_name;
        err << j.dump() << '\n';
        return 1;
    } catch (const Error& e) {
        report(err, e.kind(), e.what());
        return 1;
    } catch (const std::exception& e) {
        report(err, "internal", e.what());
        return 1;
    }
}

}  // namespace cge
