#pragma once

#include "cge/dataset.hpp"
#include "cge/estimator.hpp"
#include "cge/simharness.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cge {

enum class Command { fit, smooth, predict, simulate };
enum class OutputFormat { json, csv };

std::string to_string(Command c);
std::string to_string(OutputFormat f);

struct RunConfig {
    Command command = Command::fit;
    std::string input;
    std::string model;  // fitted model JSON for smooth / predict
    std::string out;    // empty: stdout (simulate: file prefix, default "sim")
    std::optional<CsvSchema> schema;
    FamilyKind family = FamilyKind::gaussian;
    FitConfig fit;
    double level = 0.95;
    OutputFormat format = OutputFormat::json;
    int threads = 1;
    bool allow_new_levels = false;

    // simulate
    SimDesignKind design = SimDesignKind::two_way_logistic;
    std::vector<int> sizes{5000};
    Scenario scenario = Scenario::s1;
    int replications = 100;
    bool omit_timings = false;

    // Throws ConfigError on missing paths or inconsistent settings.
    void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
// Overlays the keys present in `j` onto `cfg`.
void apply_json(RunConfig& cfg, const nlohmann::json& j);

// Inline JSON (text starting with '{') or a path to a JSON file.
CsvSchema parse_schema(const std::string& text_or_path);

int cmd_fit(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_smooth(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_predict(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// Exit codes: 0 success (fit: converged), 2 fit stopped at max-iter, 1 error.
// Errors are reported on `err` as one JSON line {"error": kind, "message": ...}.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cge
