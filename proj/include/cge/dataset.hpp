#pragma once

#include "cge/family.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cge {

// K-way cross-classified observations. Way codes are stored 0-based
// (level l of way k is written l + 1 in every external format).
struct Dataset {
    Eigen::VectorXd y;
    Eigen::MatrixXd X;                    // N x p, no intercept column
    std::vector<std::vector<int>> ways;   // ways[k][i] in [0, n_levels[k])
    std::vector<int> n_levels;
    FamilySpec family;

    std::string response_name = "y";
    std::vector<std::string> covariate_names;
    std::vector<std::string> way_names;
    // level_labels[k][l] is the original label of level l in way k.
    std::vector<std::vector<std::string>> level_labels;

    std::size_t n_obs() const { return static_cast<std::size_t>(y.size()); }
    int n_covariates() const { return static_cast<int>(X.cols()); }
    int n_ways() const { return static_cast<int>(ways.size()); }

    // Checks shape consistency, code ranges, absence of phantom levels,
    // constant covariate columns and response support. Throws LoadError
    // or DomainError.
    void validate() const;

    // Fills missing names/labels with defaults (x1.., way1.., "1".."n").
    void fill_default_names();
};

// Builds a Dataset from integer level codes (0-based), inferring n_levels as
// max code + 1, then validates it.
Dataset make_dataset(Eigen::VectorXd y, Eigen::MatrixXd X, std::vector<std::vector<int>> ways,
                     FamilySpec family);

// Observation indices per level, ascending.
struct LevelIndex {
    // members[k][l] lists observations with way-k level l.
    std::vector<std::vector<std::vector<int>>> members;

    const std::vector<int>& of(int way, int level) const { return members[way][level]; }
};

LevelIndex build_level_index(const Dataset& ds);

struct CsvSchema {
    std::string response;
    std::vector<std::string> covariates;
    std::vector<std::string> ways;

    // Throws ConfigError when a column is named twice or no way is given.
    void validate() const;
};

// Existing level labelling to code against (used when scoring new rows with a
// fitted model). Unknown labels map to -1 when `allow_unknown`, otherwise
// a LoadError is raised.
struct LevelCoding {
    std::vector<std::vector<std::string>> labels;
    bool allow_unknown = false;
};

// Raw CSV table: header and rows of fields, RFC 4180 quoting.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> row_lines;  // 1-based source line of each row

    std::size_t column(const std::string& name) const;  // throws LoadError if absent
};

CsvTable parse_csv_text(const std::string& text);
CsvTable read_csv_table(const std::string& path);
// Quotes a field when it contains a comma, quote or line break.
std::string csv_escape(const std::string& field);
// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// Loads and validates a dataset. Levels are re-coded by first appearance;
// the original labels are kept in level_labels. Errors carry row/column.
Dataset load_csv(const std::string& path, const CsvSchema& schema, const FamilySpec& family);

// Rows scored against an existing level coding. Codes are -1 for unseen
// levels; `y` is present only when the response column exists.
struct ScoringRows {
    Eigen::MatrixXd X;
    std::vector<std::vector<int>> ways;
    std::optional<Eigen::VectorXd> y;
    std::vector<std::string> way_names;
};

ScoringRows load_scoring_csv(const std::string& path, const CsvSchema& schema,
                             const LevelCoding& coding);

// Writes the dataset with its original labels; numbers use round-trip
// precision so load_csv(write_csv(ds)) reproduces ds exactly.
void write_csv(const Dataset& ds, const std::string& path);

}  // namespace cge
