#pragma once

#include "cge/dataset.hpp"
#include "cge/estimator.hpp"
#include "cge/inference.hpp"
#include "cge/simharness.hpp"
#include "cge/smoother.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace cge {

inline constexpr int kModelSchemaVersion = 1;

// A fitted model plus the naming needed to score new CSV rows against it.
struct ModelArtifact {
    FittedModel model;
    std::string response;
    std::vector<std::string> covariate_names;
    std::vector<std::string> way_names;
    std::vector<std::vector<std::string>> level_labels;
    std::optional<InferenceResult> inference;
    std::optional<OrderedNullFit> null_fit;  // ordered probit: the threshold fit
};

ModelArtifact make_artifact(const FittedModel& model, const Dataset& ds,
                            std::optional<InferenceResult> inference = std::nullopt);

// Key order and number formatting are fixed, so equal artifacts serialize to
// identical bytes.
nlohmann::ordered_json to_json(const ModelArtifact& a);
ModelArtifact artifact_from_json(const nlohmann::json& j);

void save_model(const ModelArtifact& a, const std::string& path);
ModelArtifact load_model(const std::string& path);

nlohmann::ordered_json to_json(const SmoothedEffects& s, const ModelArtifact& a);

// omit_timings zeroes wall-clock fields so repeated runs compare equal.
nlohmann::ordered_json to_json(const SimResult& r, bool omit_timings = false);
// One row per replication: replication, seed, ok, beta_hat_k..., covered_k...
std::string estimates_csv(const SimResult& r);
// Table layout: one row per N with MSE and CP (percent) for CGE.
std::string sim_table_csv(const std::vector<SimResult>& results, bool omit_timings = false);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace cge
