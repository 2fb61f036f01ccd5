#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pfvb/data.hpp"
#include "pfvb/error.hpp"
#include "pfvb/kernel.hpp"
#include "pfvb/mean_field.hpp"
#include "pfvb/partial_factorized.hpp"

namespace pfvb {

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<long> row_lines;  // source line where each record starts

  std::optional<std::size_t> column_index(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) return k;
    }
    return std::nullopt;
  }
};

/// RFC-4180 reader: quoted fields may hold commas, doubled quotes and line
/// breaks; LF and CRLF endings; the first record is the header.
inline CsvTable parse_csv(std::istream& in) {
  CsvTable table;
  std::vector<std::string> record;
  std::string field;
  long line = 1;
  long record_line = 1;
  bool in_quotes = false;
  bool field_was_quoted = false;
  bool any = false;

  const auto end_record = [&]() {
    record.push_back(std::move(field));
    field.clear();
    field_was_quoted = false;
    const bool blank = record.size() == 1 && record[0].empty();
    if (!blank) {
      if (table.header.empty()) {
        table.header = std::move(record);
      } else {
        if (record.size() != table.header.size()) {
          throw ParseError("expected " + std::to_string(table.header.size()) + " fields, found " +
                               std::to_string(record.size()),
                           record_line);
        }
        table.rows.push_back(std::move(record));
        table.row_lines.push_back(record_line);
      }
    }
    record.clear();
  };

  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty() || field_was_quoted) throw ParseError("stray quote inside unquoted field", line);
        in_quotes = true;
        field_was_quoted = true;
        break;
      case ',':
        record.push_back(std::move(field));
        field.clear();
        field_was_quoted = false;
        break;
      case '\r':
        if (in.peek() != '\n') throw ParseError("bare carriage return", line);
        break;
      case '\n':
        end_record();
        ++line;
        record_line = line;
        break;
      default:
        if (field_was_quoted) throw ParseError("characters after closing quote", line);
        field += c;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field", record_line);
  if (any && (!field.empty() || !record.empty() || field_was_quoted)) end_record();
  if (table.header.empty()) throw ParseError("missing header row", 1);
  return table;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return parse_csv(in);
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline double parse_double(std::string_view s, long line, const std::string& column) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError("column '" + column + "': '" + std::string(s) + "' is not a finite number", line);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Feature construction

/// How raw CSV predictors become design columns; applied identically at fit and predict time.
struct FeatureMap {
  std::string response;
  std::vector<std::string> predictors;  // raw CSV columns, in design order
  bool pairwise_interactions = false;
  bool add_intercept = true;
  std::optional<Standardization> standardization;

  std::vector<std::string> design_names() const {
    std::vector<std::string> names;
    if (add_intercept) names.emplace_back("(intercept)");
    for (const auto& p : predictors) names.push_back(p);
    if (pairwise_interactions) {
      for (std::size_t a = 0; a < predictors.size(); ++a) {
        for (std::size_t b = a + 1; b < predictors.size(); ++b) {
          names.push_back(predictors[a] + ":" + predictors[b]);
        }
      }
    }
    return names;
  }

  /// Raw (unstandardized) predictors with interactions appended, no intercept.
  Eigen::MatrixXd expand(const Eigen::MatrixXd& raw) const {
    const auto q = static_cast<Eigen::Index>(predictors.size());
    if (raw.cols() != q) throw DimensionMismatch("raw predictor columns", q, raw.cols());
    const Eigen::Index extra = pairwise_interactions ? q * (q - 1) / 2 : 0;
    Eigen::MatrixXd out(raw.rows(), q + extra);
    out.leftCols(q) = raw;
    Eigen::Index k = q;
    if (pairwise_interactions) {
      for (Eigen::Index a = 0; a < q; ++a) {
        for (Eigen::Index b = a + 1; b < q; ++b) out.col(k++) = raw.col(a).cwiseProduct(raw.col(b));
      }
    }
    return out;
  }

  /// Standardized design including the intercept.
  Eigen::MatrixXd design(const Eigen::MatrixXd& raw) const {
    const Eigen::MatrixXd feats = expand(raw);
    const Eigen::Index offset = add_intercept ? 1 : 0;
    Eigen::MatrixXd x(feats.rows(), feats.cols() + offset);
    if (add_intercept) x.col(0).setOnes();
    for (Eigen::Index j = 0; j < feats.cols(); ++j) {
      if (standardization) {
        const ColumnTransform& tr = standardization->columns.at(static_cast<std::size_t>(j));
        for (Eigen::Index i = 0; i < feats.rows(); ++i) x(i, j + offset) = tr.apply(feats(i, j));
      } else {
        x.col(j + offset) = feats.col(j);
      }
    }
    return x;
  }
};

struct IngestOptions {
  std::string response;
  bool standardize = true;
  bool add_intercept = true;
  bool pairwise_interactions = false;
};

struct IngestedData {
  Dataset data;
  FeatureMap features;
};

namespace detail {

inline Eigen::MatrixXd numeric_columns(const CsvTable& table, const std::vector<std::string>& names) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t c = 0; c < names.size(); ++c) {
    const auto idx = table.column_index(names[c]);
    if (!idx) throw MissingColumn(names[c]);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          parse_double(table.rows[r][*idx], table.row_lines[r], names[c]);
    }
  }
  return m;
}

inline Eigen::VectorXd binary_response(const CsvTable& table, const std::string& response) {
  const auto idx = table.column_index(response);
  if (!idx) throw MissingColumn(response);
  Eigen::VectorXd y(static_cast<Eigen::Index>(table.rows.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const double v = parse_double(table.rows[r][*idx], table.row_lines[r], response);
    if (v != 0.0 && v != 1.0) {
      throw NonBinaryResponse("line " + std::to_string(table.row_lines[r]) + ": response '" + response +
                              "' must be 0 or 1, found '" + table.rows[r][*idx] + "'");
    }
    y[static_cast<Eigen::Index>(r)] = v;
  }
  return y;
}

}  // namespace detail

inline IngestedData ingest_table(const CsvTable& table, const IngestOptions& opts) {
  if (opts.response.empty()) throw InvalidArgument("response column name is empty");
  if (table.rows.empty()) throw DataError("CSV has no data rows");
  FeatureMap fm;
  fm.response = opts.response;
  fm.add_intercept = opts.add_intercept;
  fm.pairwise_interactions = opts.pairwise_interactions;
  const Eigen::VectorXd y = detail::binary_response(table, opts.response);
  for (const auto& h : table.header) {
    if (h != opts.response) fm.predictors.push_back(h);
  }
  if (fm.predictors.empty() && !opts.add_intercept) throw DataError("no predictor columns");

  const Eigen::MatrixXd raw = detail::numeric_columns(table, fm.predictors);
  const Eigen::MatrixXd feats = fm.expand(raw);
  if (opts.standardize) {
    Standardization st;
    st.has_intercept = opts.add_intercept;
    const auto names = fm.design_names();
    const std::size_t offset = opts.add_intercept ? 1 : 0;
    for (Eigen::Index j = 0; j < feats.cols(); ++j) {
      const auto [mean, sd] = column_mean_sd(feats.col(j));
      if (!(sd > 0.0)) throw ConstantPredictor(names[static_cast<std::size_t>(j) + offset]);
      st.columns.push_back({mean, sd / kStandardizedSd});
    }
    fm.standardization = std::move(st);
  }

  IngestedData out;
  out.data.y = y;
  out.data.x = fm.design(raw);
  out.data.column_names = fm.design_names();
  out.data.standardization = fm.standardization;
  out.features = std::move(fm);
  out.data.validate();
  return out;
}

inline IngestedData ingest_csv(const std::string& path, const IngestOptions& opts) {
  return ingest_table(read_csv(path), opts);
}

/// Design rows for new units; the response column is read when present.
struct NewData {
  Eigen::MatrixXd x;
  std::optional<Eigen::VectorXd> y;
};

inline NewData design_from_table(const CsvTable& table, const FeatureMap& fm) {
  NewData out;
  out.x = fm.design(detail::numeric_columns(table, fm.predictors));
  if (table.column_index(fm.response)) out.y = detail::binary_response(table, fm.response);
  return out;
}

inline NewData design_from_csv(const std::string& path, const FeatureMap& fm) {
  return design_from_table(read_csv(path), fm);
}

/// Response column `response` followed by the design columns, full precision.
inline void write_dataset_csv(std::ostream& out, const Dataset& data, const std::string& response = "y") {
  std::vector<std::string> names = data.column_names;
  if (names.empty()) {
    for (Eigen::Index j = 0; j < data.p(); ++j) names.push_back("x" + std::to_string(j));
  }
  out << csv_escape(response);
  for (const auto& n : names) out << ',' << csv_escape(n);
  out << '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    out << format_double(data.y[i]);
    for (Eigen::Index j = 0; j < data.p(); ++j) out << ',' << format_double(data.x(i, j));
    out << '\n';
  }
}

inline void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m, const std::vector<std::string>& names) {
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << csv_escape(names[j]);
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_double(m(i, j));
    out << '\n';
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Model artifact

inline constexpr int kSchemaVersion = 1;

struct ModelArtifact {
  int schema_version = kSchemaVersion;
  std::string method;  // mf | pfm | gibbs
  PriorSpec prior;
  FeatureMap features;
  Dataset training;
  std::uint64_t seed = 0;
  double tolerance = 0.0;
  int max_iter = 0;
  Eigen::VectorXd beta_bar;    // mf
  Eigen::VectorXd mu_star;     // pfm
  Eigen::VectorXd sigma_star;  // pfm
  Eigen::VectorXd z_bar_star;  // mf and pfm
  Eigen::MatrixXd draws;       // gibbs
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
  double precompute_seconds = 0.0;
  double fit_seconds = 0.0;
};

namespace detail {

inline nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.begin(), v.end()); }

inline nlohmann::json mat_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Eigen::VectorXd r = m.row(i).transpose();
    rows.push_back(vec_json(r));
  }
  return rows;
}

/// Doubles are written as numbers; non-finite trace values fall back to strings.
inline nlohmann::json scalar_json(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

inline double scalar_from(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return std::nan("");
    if (s == "inf") return HUGE_VAL;
    if (s == "-inf") return -HUGE_VAL;
  }
  throw SchemaError("expected a number, found " + j.dump());
}

inline Eigen::VectorXd vec_from(const nlohmann::json& j) {
  if (!j.is_array()) throw SchemaError("expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<Eigen::Index>(k)] = scalar_from(j[k]);
  return v;
}

inline Eigen::MatrixXd mat_from(const nlohmann::json& j, Eigen::Index cols) {
  if (!j.is_array()) throw SchemaError("expected an array of rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Eigen::VectorXd row = vec_from(j[r]);
    if (row.size() != cols) throw SchemaError("ragged matrix row " + std::to_string(r));
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

inline const nlohmann::json& require(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(std::string("missing field '") + key + "'");
  return j.at(key);
}

}  // namespace detail

inline nlohmann::json artifact_to_json(const ModelArtifact& a) {
  using nlohmann::json;
  json j;
  j["schema_version"] = a.schema_version;
  j["method"] = a.method;
  j["seed"] = a.seed;
  j["tolerance"] = a.tolerance;
  j["max_iter"] = a.max_iter;
  j["prior"] = {{"variance", a.prior.base_variance},
                {"scaling", a.prior.scaling == PriorScaling::Constant ? "const" : "inv-p"}};
  json st = nullptr;
  if (a.features.standardization) {
    st = json::array();
    for (const auto& c : a.features.standardization->columns) st.push_back({{"mean", c.mean}, {"scale", c.scale}});
  }
  j["features"] = {{"response", a.features.response},
                   {"predictors", a.features.predictors},
                   {"pairwise_interactions", a.features.pairwise_interactions},
                   {"intercept", a.features.add_intercept},
                   {"standardization", st}};
  j["training"] = {{"column_names", a.training.column_names},
                   {"y", detail::vec_json(a.training.y)},
                   {"x", detail::mat_json(a.training.x)}};
  json params = json::object();
  if (a.beta_bar.size()) params["beta_bar"] = detail::vec_json(a.beta_bar);
  if (a.mu_star.size()) params["mu_star"] = detail::vec_json(a.mu_star);
  if (a.sigma_star.size()) params["sigma_star"] = detail::vec_json(a.sigma_star);
  if (a.z_bar_star.size()) params["z_bar_star"] = detail::vec_json(a.z_bar_star);
  if (a.draws.size()) params["draws"] = detail::mat_json(a.draws);
  j["parameters"] = params;
  json trace = json::array();
  for (const double t : a.trace) trace.push_back(detail::scalar_json(t));
  j["trace"] = trace;
  j["iterations"] = a.iterations;
  j["converged"] = a.converged;
  j["timings"] = {{"precompute_seconds", a.precompute_seconds}, {"fit_seconds", a.fit_seconds}};
  return j;
}

inline ModelArtifact artifact_from_json(const nlohmann::json& j) {
  using detail::require;
  ModelArtifact a;
  try {
    a.schema_version = require(j, "schema_version").get<int>();
    if (a.schema_version != kSchemaVersion) {
      throw SchemaError("unsupported schema_version " + std::to_string(a.schema_version) + " (expected " +
                        std::to_string(kSchemaVersion) + ")");
    }
    a.method = require(j, "method").get<std::string>();
    if (a.method != "mf" && a.method != "pfm" && a.method != "gibbs") {
      throw SchemaError("unknown method '" + a.method + "'");
    }
    a.seed = require(j, "seed").get<std::uint64_t>();
    a.tolerance = require(j, "tolerance").get<double>();
    a.max_iter = require(j, "max_iter").get<int>();
    const auto& pr = require(j, "prior");
    a.prior.base_variance = require(pr, "variance").get<double>();
    const auto scaling = require(pr, "scaling").get<std::string>();
    if (scaling != "const" && scaling != "inv-p") throw SchemaError("unknown prior scaling '" + scaling + "'");
    a.prior.scaling = scaling == "const" ? PriorScaling::Constant : PriorScaling::InverseP;

    const auto& f = require(j, "features");
    a.features.response = require(f, "response").get<std::string>();
    a.features.predictors = require(f, "predictors").get<std::vector<std::string>>();
    a.features.pairwise_interactions = require(f, "pairwise_interactions").get<bool>();
    a.features.add_intercept = require(f, "intercept").get<bool>();
    const auto& st = require(f, "standardization");
    if (!st.is_null()) {
      Standardization s;
      s.has_intercept = a.features.add_intercept;
      for (const auto& c : st) s.columns.push_back({require(c, "mean").get<double>(), require(c, "scale").get<double>()});
      a.features.standardization = std::move(s);
    }

    const auto& t = require(j, "training");
    a.training.column_names = require(t, "column_names").get<std::vector<std::string>>();
    a.training.y = detail::vec_from(require(t, "y"));
    a.training.x = detail::mat_from(require(t, "x"), static_cast<Eigen::Index>(a.training.column_names.size()));
    a.training.standardization = a.features.standardization;

    const auto& p = require(j, "parameters");
    const Eigen::Index pdim = a.training.p();
    if (p.contains("beta_bar")) a.beta_bar = detail::vec_from(p["beta_bar"]);
    if (p.contains("mu_star")) a.mu_star = detail::vec_from(p["mu_star"]);
    if (p.contains("sigma_star")) a.sigma_star = detail::vec_from(p["sigma_star"]);
    if (p.contains("z_bar_star")) a.z_bar_star = detail::vec_from(p["z_bar_star"]);
    if (p.contains("draws")) a.draws = detail::mat_from(p["draws"], pdim);

    for (const auto& v : require(j, "trace")) a.trace.push_back(detail::scalar_from(v));
    a.iterations = require(j, "iterations").get<int>();
    a.converged = require(j, "converged").get<bool>();
    const auto& tm = require(j, "timings");
    a.precompute_seconds = require(tm, "precompute_seconds").get<double>();
    a.fit_seconds = require(tm, "fit_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed model file: ") + e.what());
  }

  const Eigen::Index n = a.training.n();
  const Eigen::Index pdim = a.training.p();
  if (a.training.y.size() != n) throw SchemaError("training response length does not match design rows");
  if (a.features.design_names() != a.training.column_names) {
    throw SchemaError("feature map does not reproduce the stored column names");
  }
  if (a.method == "mf" && (a.beta_bar.size() != pdim || a.z_bar_star.size() != n)) {
    throw SchemaError("mf model needs beta_bar (p) and z_bar_star (n)");
  }
  if (a.method == "pfm" && (a.mu_star.size() != n || a.sigma_star.size() != n || a.z_bar_star.size() != n)) {
    throw SchemaError("pfm model needs mu_star, sigma_star and z_bar_star of length n");
  }
  if (a.method == "gibbs" && a.draws.rows() < 1) throw SchemaError("gibbs model needs draws");
  return a;
}

inline void save_artifact(const std::string& path, const ModelArtifact& a) {
  write_text_file(path, artifact_to_json(a).dump(1) + "\n");
}

inline ModelArtifact load_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("'" + path + "' is not valid JSON: " + e.what());
  }
  return artifact_from_json(j);
}

/// Rebuilds the kernel for the stored training data; identical inputs give identical matrices.
inline std::shared_ptr<const KernelPrecomp> artifact_precomp(const ModelArtifact& a) {
  return build_precomp(std::make_shared<const Dataset>(a.training), a.prior);
}

inline MfPosterior artifact_mf(const ModelArtifact& a,
                               std::shared_ptr<const KernelPrecomp> precomp = nullptr) {
  if (a.method != "mf") throw InvalidArgument("model was fitted with '" + a.method + "', not mf");
  MfPosterior post;
  post.precomp = precomp ? std::move(precomp) : artifact_precomp(a);
  post.beta_bar = a.beta_bar;
  post.z_bar = a.z_bar_star;
  post.trace = a.trace;
  post.iterations = a.iterations;
  post.converged = a.converged;
  return post;
}

inline PfmPosterior artifact_pfm(const ModelArtifact& a,
                                 std::shared_ptr<const KernelPrecomp> precomp = nullptr) {
  if (a.method != "pfm") throw InvalidArgument("model was fitted with '" + a.method + "', not pfm");
  PfmPosterior post;
  post.precomp = precomp ? std::move(precomp) : artifact_precomp(a);
  post.mu_star = a.mu_star;
  post.sigma_star = a.sigma_star;
  post.z_bar_star = a.z_bar_star;
  post.elbo_trace = a.trace;
  post.iterations = a.iterations;
  post.converged = a.converged;
  return post;
}

}  // namespace pfvb
