#include "dmlkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "dmlkit/csv.hpp"
#include "dmlkit/errors.hpp"

namespace dmlkit {

namespace {

using nlohmann::json;

std::vector<std::string> string_list(const json& j, const std::string& key) {
  if (!j.is_array()) throw config_error("schema: '" + key + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw config_error("schema: '" + key + "' must contain only strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

void require_unique(const std::vector<std::string>& names, const std::string& key) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) {
      throw config_error("schema: duplicate name '" + n + "' in '" + key + "'");
    }
  }
}

void require_subset(const std::vector<std::string>& sub, const std::set<std::string>& super,
                    const std::string& sub_key) {
  for (const auto& n : sub) {
    if (!super.count(n)) {
      throw config_error("schema: '" + sub_key + "' entry '" + n + "' is not a covariate");
    }
  }
}

}  // namespace

schema_config parse_schema_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("schema: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw config_error("schema: top level must be an object");

  static const std::set<std::string> known = {
      "outcomes",  "treatment",      "covariates",     "continuous",
      "forced",    "cluster",        "bins",           "standardize_outcomes",
      "min_cell_frac", "corr_threshold", "poly_degree"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw config_error("schema: unknown key '" + key + "'");
  }

  schema_config sc;
  if (!j.contains("outcomes")) throw config_error("schema: missing 'outcomes'");
  sc.outcomes = string_list(j.at("outcomes"), "outcomes");
  if (sc.outcomes.empty()) throw config_error("schema: 'outcomes' must not be empty");
  if (!j.contains("treatment") || !j.at("treatment").is_string()) {
    throw config_error("schema: missing string key 'treatment'");
  }
  sc.treatment = j.at("treatment").get<std::string>();
  if (!j.contains("covariates")) throw config_error("schema: missing 'covariates'");
  sc.covariates = string_list(j.at("covariates"), "covariates");
  if (sc.covariates.empty()) throw config_error("schema: 'covariates' must not be empty");
  if (j.contains("continuous")) sc.continuous = string_list(j.at("continuous"), "continuous");
  if (j.contains("forced")) sc.forced = string_list(j.at("forced"), "forced");
  if (j.contains("cluster")) {
    if (!j.at("cluster").is_string()) throw config_error("schema: 'cluster' must be a string");
    sc.cluster = j.at("cluster").get<std::string>();
  }
  if (j.contains("standardize_outcomes")) {
    if (!j.at("standardize_outcomes").is_boolean()) {
      throw config_error("schema: 'standardize_outcomes' must be a boolean");
    }
    sc.standardize_outcomes = j.at("standardize_outcomes").get<bool>();
  }
  if (j.contains("min_cell_frac")) {
    if (!j.at("min_cell_frac").is_number()) throw config_error("schema: 'min_cell_frac' must be a number");
    sc.min_cell_frac = j.at("min_cell_frac").get<double>();
    if (sc.min_cell_frac < 0.0 || sc.min_cell_frac >= 0.5) {
      throw config_error("schema: 'min_cell_frac' must lie in [0, 0.5)");
    }
  }
  if (j.contains("corr_threshold")) {
    if (!j.at("corr_threshold").is_number()) throw config_error("schema: 'corr_threshold' must be a number");
    sc.corr_threshold = j.at("corr_threshold").get<double>();
    if (sc.corr_threshold <= 0.0 || sc.corr_threshold > 1.0) {
      throw config_error("schema: 'corr_threshold' must lie in (0, 1]");
    }
  }
  if (j.contains("poly_degree")) {
    if (!j.at("poly_degree").is_number_integer()) throw config_error("schema: 'poly_degree' must be an integer");
    sc.poly_degree = j.at("poly_degree").get<int>();
    if (sc.poly_degree < 1 || sc.poly_degree > 8) {
      throw config_error("schema: 'poly_degree' must lie in [1, 8]");
    }
  }

  if (j.contains("bins")) {
    const auto& jb = j.at("bins");
    if (!jb.is_array() || jb.empty()) throw config_error("schema: 'bins' must be a non-empty array");
    bin_spec bs;
    for (const auto& b : jb) {
      if (!b.is_object() || !b.contains("lo") || !b.contains("hi") || !b.contains("label")) {
        throw config_error("schema: each bin needs 'lo', 'hi', 'label'");
      }
      bin_spec::bin bin;
      if (!b.at("lo").is_number_integer()) throw config_error("schema: bin 'lo' must be an integer");
      bin.lo = b.at("lo").get<long>();
      if (b.at("hi").is_null()) {
        bin.hi = std::nullopt;
      } else if (b.at("hi").is_number_integer()) {
        bin.hi = b.at("hi").get<long>();
      } else {
        throw config_error("schema: bin 'hi' must be an integer or null");
      }
      if (!b.at("label").is_string()) throw config_error("schema: bin 'label' must be a string");
      bin.label = b.at("label").get<std::string>();
      if (bin.hi && *bin.hi < bin.lo) throw config_error("schema: bin with hi < lo");
      bs.bins.push_back(std::move(bin));
    }
    for (std::size_t i = 0; i + 1 < bs.bins.size(); ++i) {
      if (!bs.bins[i].hi) throw config_error("schema: only the last bin may be open-ended");
      if (*bs.bins[i].hi >= bs.bins[i + 1].lo) {
        throw config_error("schema: bins overlap or are out of order at '" + bs.bins[i].label + "'");
      }
    }
    sc.bins = std::move(bs);
  }

  require_unique(sc.outcomes, "outcomes");
  require_unique(sc.covariates, "covariates");
  require_unique(sc.continuous, "continuous");
  require_unique(sc.forced, "forced");

  // Roles must not overlap: outcome / treatment / covariate / cluster.
  std::set<std::string> cov(sc.covariates.begin(), sc.covariates.end());
  for (const auto& o : sc.outcomes) {
    if (cov.count(o) || o == sc.treatment) {
      throw config_error("schema: column '" + o + "' appears in more than one role");
    }
  }
  if (cov.count(sc.treatment)) {
    throw config_error("schema: treatment column '" + sc.treatment + "' is also a covariate");
  }
  if (sc.cluster) {
    if (cov.count(*sc.cluster) || *sc.cluster == sc.treatment ||
        std::find(sc.outcomes.begin(), sc.outcomes.end(), *sc.cluster) != sc.outcomes.end()) {
      throw config_error("schema: cluster column '" + *sc.cluster + "' appears in another role");
    }
  }
  require_subset(sc.continuous, cov, "continuous");
  require_subset(sc.forced, cov, "forced");
  return sc;
}

schema_config load_schema(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("schema: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_schema_json(buf.str());
}

Eigen::VectorXi discretize_treatment(const Eigen::VectorXd& raw, const bin_spec& bins) {
  Eigen::VectorXi out(raw.size());
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    const double v = raw[i];
    const double r = std::nearbyint(v);
    if (!std::isfinite(v) || std::fabs(v - r) > 1e-9) {
      throw data_error("treatment: non-integer value " + std::to_string(v) + " at row " +
                       std::to_string(i + 1));
    }
    const long iv = static_cast<long>(r);
    int label = -1;
    for (std::size_t b = 0; b < bins.bins.size(); ++b) {
      const auto& bin = bins.bins[b];
      if (iv >= bin.lo && (!bin.hi || iv <= *bin.hi)) {
        label = static_cast<int>(b);
        break;
      }
    }
    if (label < 0) {
      throw data_error("treatment: value " + std::to_string(iv) + " at row " +
                       std::to_string(i + 1) + " is not covered by any bin");
    }
    out[i] = label;
  }
  return out;
}

dataset load_dataset(const std::string& csv_path, const schema_config& sc) {
  const csv::table t = csv::read_file(csv_path);
  const int n = static_cast<int>(t.rows.size());
  if (n == 0) throw data_error("dataset: '" + csv_path + "' has no data rows");

  auto need_col = [&](const std::string& name) {
    const int j = t.col(name);
    if (j < 0) throw data_error("dataset: missing column '" + name + "'");
    return j;
  };

  dataset ds;
  ds.outcome_names = sc.outcomes;
  ds.covariate_names = sc.covariates;

  ds.y.resize(n, static_cast<int>(sc.outcomes.size()));
  for (std::size_t q = 0; q < sc.outcomes.size(); ++q) {
    const int j = need_col(sc.outcomes[q]);
    for (int i = 0; i < n; ++i) {
      ds.y(i, static_cast<int>(q)) = csv::parse_number(t.rows[i][j], i + 1, sc.outcomes[q]);
    }
  }

  ds.x.resize(n, static_cast<int>(sc.covariates.size()));
  std::set<std::string> cont(sc.continuous.begin(), sc.continuous.end());
  std::set<std::string> forced(sc.forced.begin(), sc.forced.end());
  ds.continuous_col.resize(sc.covariates.size());
  ds.forced_col.resize(sc.covariates.size());
  for (std::size_t c = 0; c < sc.covariates.size(); ++c) {
    const auto& name = sc.covariates[c];
    const int j = need_col(name);
    const bool is_cont = cont.count(name) > 0;
    ds.continuous_col[c] = is_cont;
    ds.forced_col[c] = forced.count(name) > 0;
    for (int i = 0; i < n; ++i) {
      const double v = csv::parse_number(t.rows[i][j], i + 1, name);
      if (!is_cont && v != 0.0 && v != 1.0) {
        throw data_error("dataset: column '" + name + "' is not declared continuous but has value " +
                         csv::format_number(v) + " at row " + std::to_string(i + 1) +
                         " (binary columns must be coded 0/1)");
      }
      ds.x(i, static_cast<int>(c)) = v;
    }
  }

  const int jt = need_col(sc.treatment);
  Eigen::VectorXd rawt(n);
  for (int i = 0; i < n; ++i) {
    rawt[i] = csv::parse_number(t.rows[i][jt], i + 1, sc.treatment);
  }
  if (sc.bins) {
    ds.d = discretize_treatment(rawt, *sc.bins);
    for (const auto& b : sc.bins->bins) ds.level_labels.push_back(b.label);
  } else {
    int maxlab = 0;
    ds.d.resize(n);
    for (int i = 0; i < n; ++i) {
      const double r = std::nearbyint(rawt[i]);
      if (std::fabs(rawt[i] - r) > 1e-9 || r < 0) {
        throw data_error("treatment: expected labels 0..T, found " + csv::format_number(rawt[i]) +
                         " at row " + std::to_string(i + 1));
      }
      ds.d[i] = static_cast<int>(r);
      maxlab = std::max(maxlab, ds.d[i]);
    }
    for (int g = 0; g <= maxlab; ++g) ds.level_labels.push_back(std::to_string(g));
  }

  ds.cluster.resize(n);
  if (sc.cluster) {
    const int jc = need_col(*sc.cluster);
    std::unordered_map<std::string, int> ids;
    for (int i = 0; i < n; ++i) {
      const std::string& token = t.rows[i][jc];
      if (token.empty()) {
        throw data_error("dataset: missing cluster id at row " + std::to_string(i + 1));
      }
      auto [it, inserted] = ids.emplace(token, static_cast<int>(ids.size()));
      ds.cluster[i] = it->second;
    }
  } else {
    for (int i = 0; i < n; ++i) ds.cluster[i] = i;  // singleton clusters
  }
  return ds;
}

int dataset::n_clusters() const {
  int m = -1;
  for (int c : cluster) m = std::max(m, c);
  return m + 1;
}

validation_report validate_dataset(const dataset& ds) {
  validation_report rep;
  rep.n = ds.n();
  rep.levels = ds.levels();
  rep.clusters = ds.n_clusters();
  if (rep.n < 2) throw data_error("dataset: need at least 2 rows");

  rep.level_counts.assign(rep.levels, 0);
  for (int i = 0; i < rep.n; ++i) {
    const int d = ds.d[i];
    if (d < 0 || d >= rep.levels) {
      throw data_error("dataset: treatment label " + std::to_string(d) + " at row " +
                       std::to_string(i + 1) + " outside 0.." + std::to_string(rep.levels - 1));
    }
    ++rep.level_counts[d];
  }
  for (int g = 0; g < rep.levels; ++g) {
    if (rep.level_counts[g] < 2) {
      throw data_error("dataset: treatment level '" + ds.level_labels[g] + "' has " +
                       std::to_string(rep.level_counts[g]) + " units (need at least 2)");
    }
    if (rep.level_counts[g] < 30) {
      rep.warnings.push_back("treatment level '" + ds.level_labels[g] + "' has only " +
                             std::to_string(rep.level_counts[g]) + " units");
    }
  }
  if (!ds.y.allFinite() || !ds.x.allFinite()) {
    throw data_error("dataset: non-finite value in outcomes or covariates");
  }
  return rep;
}

standardization standardize_columns(const Eigen::MatrixXd& y,
                                    const std::vector<std::string>& names) {
  const Eigen::Index n = y.rows();
  standardization s;
  s.values.resizeLike(y);
  s.mean.resize(y.cols());
  s.sd.resize(y.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const double m = y.col(j).mean();
    const double var = (y.col(j).array() - m).square().sum() / static_cast<double>(n);
    if (var <= 0.0) {
      const std::string name = j < static_cast<Eigen::Index>(names.size())
                                   ? names[static_cast<std::size_t>(j)]
                                   : std::to_string(j);
      throw data_error("outcome '" + name + "' is constant; cannot standardize");
    }
    const double sd = std::sqrt(var);
    s.mean[j] = m;
    s.sd[j] = sd;
    s.values.col(j) = (y.col(j).array() - m) / sd;
  }
  return s;
}

}  // namespace dmlkit
