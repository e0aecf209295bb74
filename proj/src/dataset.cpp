#include "cge/dataset.hpp"

#include "cge/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace cge {

namespace {

std::string location(std::size_t line, const std::string& column) {
    return "line " + std::to_string(line) + ", column '" + column + "'";
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

double parse_real(std::string_view text, std::size_t line, const std::string& column) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v))
        throw LoadError("unparsable number '" + std::string(text) + "' at " + location(line, column));
    return v;
}

double parse_count(std::string_view text, std::size_t line, const std::string& column) {
    text = trim(text);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec == std::errc::result_out_of_range || (ec == std::errc() && v > (std::uint64_t{1} << 53)))
        throw LoadError("count overflows at " + location(line, column));
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
        throw LoadError("expected a non-negative integer, got '" + std::string(text) + "' at " +
                        location(line, column));
    return static_cast<double>(v);
}

double parse_response(const FamilySpec& fam, std::string_view text, std::size_t line,
                      const std::string& column) {
    if (fam.kind == FamilyKind::gaussian) return parse_real(text, line, column);
    return parse_count(text, line, column);
}

}  // namespace

void Dataset::validate() const {
    const std::size_t N = n_obs();
    if (N == 0) throw LoadError("dataset has no observations");
    if (ways.empty()) throw LoadError("dataset needs at least one classification way");
    if (static_cast<std::size_t>(X.rows()) != N)
        throw LoadError("design matrix has " + std::to_string(X.rows()) + " rows, expected " +
                        std::to_string(N));
    if (n_levels.size() != ways.size()) throw LoadError("n_levels does not match number of ways");
    for (std::size_t k = 0; k < ways.size(); ++k) {
        if (ways[k].size() != N)
            throw LoadError("way " + std::to_string(k + 1) + " has wrong length");
        std::vector<char> seen(static_cast<std::size_t>(std::max(n_levels[k], 0)), 0);
        for (std::size_t i = 0; i < N; ++i) {
            const int c = ways[k][i];
            if (c < 0 || c >= n_levels[k])
                throw LoadError("way " + std::to_string(k + 1) + " code out of range at observation " +
                                std::to_string(i));
            seen[c] = 1;
        }
        for (int l = 0; l < n_levels[k]; ++l)
            if (!seen[l])
                throw LoadError("way " + std::to_string(k + 1) + " level " + std::to_string(l + 1) +
                                " has no observations");
    }
    if (N >= 2) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            if (X.col(j).maxCoeff() == X.col(j).minCoeff()) {
                const std::string name = static_cast<std::size_t>(j) < covariate_names.size()
                                             ? covariate_names[j]
                                             : "x" + std::to_string(j + 1);
                throw LoadError("covariate '" + name +
                                "' is constant; the intercept is carried by the effects");
            }
        }
    }
    if (!X.allFinite()) throw LoadError("design matrix contains non-finite values");
    const bool thresholds_known =
        family.kind != FamilyKind::ordered_probit || !family.thresholds.empty();
    if (thresholds_known) family.validate();
    for (std::size_t i = 0; i < N; ++i) {
        if (thresholds_known) {
            check_response(family, y[i], static_cast<std::ptrdiff_t>(i));
        } else if (!(y[i] >= 1.0 && std::floor(y[i]) == y[i])) {
            throw DomainError("ordered response must be a positive integer at observation " +
                              std::to_string(i));
        }
    }
}

void Dataset::fill_default_names() {
    if (covariate_names.size() != static_cast<std::size_t>(X.cols())) {
        covariate_names.clear();
        for (Eigen::Index j = 0; j < X.cols(); ++j) covariate_names.push_back("x" + std::to_string(j + 1));
    }
    if (way_names.size() != ways.size()) {
        way_names.clear();
        for (std::size_t k = 0; k < ways.size(); ++k) way_names.push_back("way" + std::to_string(k + 1));
    }
    if (level_labels.size() != ways.size()) {
        level_labels.assign(ways.size(), {});
        for (std::size_t k = 0; k < ways.size(); ++k)
            for (int l = 0; l < n_levels[k]; ++l) level_labels[k].push_back(std::to_string(l + 1));
    }
}

Dataset make_dataset(Eigen::VectorXd y, Eigen::MatrixXd X, std::vector<std::vector<int>> ways,
                     FamilySpec family) {
    Dataset ds;
    ds.y = std::move(y);
    if (X.rows() == 0 && X.cols() == 0) X.resize(ds.y.size(), 0);
    ds.X = std::move(X);
    ds.ways = std::move(ways);
    ds.family = std::move(family);
    for (const auto& w : ds.ways) {
        int mx = -1;
        for (int c : w) mx = std::max(mx, c);
        ds.n_levels.push_back(mx + 1);
    }
    ds.fill_default_names();
    ds.validate();
    return ds;
}

LevelIndex build_level_index(const Dataset& ds) {
    LevelIndex index;
    index.members.resize(ds.ways.size());
    for (std::size_t k = 0; k < ds.ways.size(); ++k) {
        auto& per_level = index.members[k];
        per_level.assign(static_cast<std::size_t>(ds.n_levels[k]), {});
        const auto& codes = ds.ways[k];
        for (std::size_t i = 0; i < codes.size(); ++i) per_level[codes[i]].push_back(static_cast<int>(i));
    }
    return index;
}

void CsvSchema::validate() const {
    if (response.empty()) throw ConfigError("schema must name a response column");
    if (ways.empty()) throw ConfigError("schema must name at least one way column");
    std::set<std::string> names{response};
    auto add = [&](const std::string& n) {
        if (!names.insert(n).second) throw ConfigError("schema column '" + n + "' is used twice");
    };
    for (const auto& c : covariates) add(c);
    for (const auto& w : ways) add(w);
}

std::size_t CsvTable::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw LoadError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

CsvTable parse_csv_text(const std::string& text) {
    CsvTable table;
    std::vector<std::vector<std::string>> records;
    std::vector<std::size_t> record_lines;

    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_quoted = false;
    bool record_open = false;
    std::size_t line = 1;
    std::size_t record_line = 1;

    auto end_field = [&] {
        record.push_back(field);
        field.clear();
        field_quoted = false;
    };
    auto end_record = [&] {
        end_field();
        // Blank lines are skipped.
        if (!(record.size() == 1 && record[0].empty())) {
            records.push_back(std::move(record));
            record_lines.push_back(record_line);
        }
        record.clear();
        record_open = false;
    };

    std::size_t pos = 0;
    if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) pos = 3;
    for (; pos < text.size(); ++pos) {
        const char ch = text[pos];
        if (!record_open) {
            record_open = true;
            record_line = line;
        }
        if (in_quotes) {
            if (ch == '"') {
                if (pos + 1 < text.size() && text[pos + 1] == '"') {
                    field.push_back('"');
                    ++pos;
                } else {
                    in_quotes = false;
                }
            } else {
                if (ch == '\n') ++line;
                field.push_back(ch);
            }
            continue;
        }
        switch (ch) {
        case '"':
            if (!field.empty() || field_quoted)
                throw LoadError("unexpected quote at line " + std::to_string(line));
            in_quotes = true;
            field_quoted = true;
            break;
        case ',':
            end_field();
            break;
        case '\r':
            break;
        case '\n':
            end_record();
            ++line;
            break;
        default:
            if (field_quoted) throw LoadError("text after closing quote at line " + std::to_string(line));
            field.push_back(ch);
        }
    }
    if (in_quotes) throw LoadError("unterminated quoted field starting at line " + std::to_string(record_line));
    if (record_open) end_record();

    if (records.empty()) throw LoadError("empty file: header row required");
    table.header = std::move(records.front());
    for (auto& h : table.header) h = std::string(trim(h));
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != table.header.size())
            throw LoadError("line " + std::to_string(record_lines[r]) + " has " +
                            std::to_string(records[r].size()) + " fields, header has " +
                            std::to_string(table.header.size()));
        table.rows.push_back(std::move(records[r]));
        table.row_lines.push_back(record_lines[r]);
    }
    return table;
}

CsvTable read_csv_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv_text(buf.str());
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char ch : field) {
        if (ch == '"') out.push_back('"');
        out.push_back(ch);
    }
    out.push_back('"');
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

namespace {

void require_non_missing(const CsvTable& t, std::size_t r, std::size_t c) {
    if (trim(t.rows[r][c]).empty())
        throw LoadError("missing value at " + location(t.row_lines[r], t.header[c]));
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema, const FamilySpec& family) {
    schema.validate();
    const CsvTable t = read_csv_table(path);
    if (t.rows.empty()) throw LoadError("'" + path + "' has a header but no data rows");

    const std::size_t y_col = t.column(schema.response);
    std::vector<std::size_t> x_cols, w_cols;
    for (const auto& c : schema.covariates) x_cols.push_back(t.column(c));
    for (const auto& w : schema.ways) w_cols.push_back(t.column(w));

    const std::size_t N = t.rows.size();
    const std::size_t K = w_cols.size();
    Dataset ds;
    ds.family = family;
    ds.response_name = schema.response;
    ds.covariate_names = schema.covariates;
    ds.way_names = schema.ways;
    ds.y.resize(static_cast<Eigen::Index>(N));
    ds.X.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(x_cols.size()));
    ds.ways.assign(K, std::vector<int>(N));
    ds.level_labels.assign(K, {});
    std::vector<std::unordered_map<std::string, int>> codes(K);

    for (std::size_t r = 0; r < N; ++r) {
        const auto& row = t.rows[r];
        const std::size_t line = t.row_lines[r];
        require_non_missing(t, r, y_col);
        ds.y[r] = parse_response(family, row[y_col], line, schema.response);
        for (std::size_t j = 0; j < x_cols.size(); ++j) {
            require_non_missing(t, r, x_cols[j]);
            ds.X(r, j) = parse_real(row[x_cols[j]], line, schema.covariates[j]);
        }
        for (std::size_t k = 0; k < K; ++k) {
            require_non_missing(t, r, w_cols[k]);
            const std::string label(trim(row[w_cols[k]]));
            auto [it, inserted] = codes[k].try_emplace(label, static_cast<int>(ds.level_labels[k].size()));
            if (inserted) ds.level_labels[k].push_back(label);
            ds.ways[k][r] = it->second;
        }
    }
    for (std::size_t k = 0; k < K; ++k) ds.n_levels.push_back(static_cast<int>(ds.level_labels[k].size()));
    ds.validate();
    return ds;
}

ScoringRows load_scoring_csv(const std::string& path, const CsvSchema& schema,
                             const LevelCoding& coding) {
    const CsvTable t = read_csv_table(path);
    std::vector<std::size_t> x_cols, w_cols;
    for (const auto& c : schema.covariates) x_cols.push_back(t.column(c));
    for (const auto& w : schema.ways) w_cols.push_back(t.column(w));
    if (coding.labels.size() != w_cols.size())
        throw LoadError("model has " + std::to_string(coding.labels.size()) + " ways, schema names " +
                        std::to_string(w_cols.size()));
    std::optional<std::size_t> y_col;
    if (std::find(t.header.begin(), t.header.end(), schema.response) != t.header.end())
        y_col = t.column(schema.response);

    std::vector<std::unordered_map<std::string, int>> lookup(w_cols.size());
    for (std::size_t k = 0; k < w_cols.size(); ++k)
        for (std::size_t l = 0; l < coding.labels[k].size(); ++l)
            lookup[k].emplace(coding.labels[k][l], static_cast<int>(l));

    const std::size_t N = t.rows.size();
    ScoringRows out;
    out.way_names = schema.ways;
    out.X.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(x_cols.size()));
    out.ways.assign(w_cols.size(), std::vector<int>(N, -1));
    if (y_col) out.y = Eigen::VectorXd(static_cast<Eigen::Index>(N));
    for (std::size_t r = 0; r < N; ++r) {
        const auto& row = t.rows[r];
        const std::size_t line = t.row_lines[r];
        for (std::size_t j = 0; j < x_cols.size(); ++j) {
            require_non_missing(t, r, x_cols[j]);
            out.X(r, j) = parse_real(row[x_cols[j]], line, schema.covariates[j]);
        }
        for (std::size_t k = 0; k < w_cols.size(); ++k) {
            require_non_missing(t, r, w_cols[k]);
            const std::string label(trim(row[w_cols[k]]));
            auto it = lookup[k].find(label);
            if (it != lookup[k].end()) {
                out.ways[k][r] = it->second;
            } else if (!coding.allow_unknown) {
                throw PredictError("unknown level '" + label + "' of way '" + schema.ways[k] + "' at " +
                                   location(line, schema.ways[k]));
            }
        }
        if (y_col) {
            require_non_missing(t, r, *y_col);
            (*out.y)[r] = parse_real(row[*y_col], line, schema.response);
        }
    }
    return out;
}

void write_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write '" + path + "'");
    Dataset named = ds;
    named.fill_default_names();
    std::vector<std::string> header{named.response_name};
    header.insert(header.end(), named.covariate_names.begin(), named.covariate_names.end());
    header.insert(header.end(), named.way_names.begin(), named.way_names.end());
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << csv_escape(header[c]);
    out << '\n';
    for (std::size_t i = 0; i < named.n_obs(); ++i) {
        out << format_double(named.y[i]);
        for (Eigen::Index j = 0; j < named.X.cols(); ++j) out << ',' << format_double(named.X(i, j));
        for (std::size_t k = 0; k < named.ways.size(); ++k)
            out << ',' << csv_escape(named.level_labels[k][named.ways[k][i]]);
        out << '\n';
    }
}

}  // namespace cge
