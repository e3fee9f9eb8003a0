#include "dmlkit/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "dmlkit/csv.hpp"
#include "dmlkit/errors.hpp"

namespace dmlkit {

namespace {

using nlohmann::json;

// File-name-safe version of a level label or outcome name.
std::string sanitize(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '-' || c == '.';
    out.push_back(ok ? c : '_');
  }
  return out.empty() ? std::string("_") : out;
}

std::string num_or_empty(double x) {
  return std::isfinite(x) ? csv::format_number(x) : std::string();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw data_error("report: cannot write '" + path + "'");
  }
  out << content;
  if (!out) {
    throw data_error("report: short write on '" + path + "'");
  }
}

void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw data_error("report: cannot create directory '" + dir + "': " + ec.message());
  }
}

json model_json(const model_info& m) {
  json j;
  j["name"] = m.name;
  j["lambda"] = m.lambda;
  j["cv_index"] = m.cv_index;
  j["active_count"] = static_cast<int>(m.active.size());
  j["ridge_fallback"] = m.fit.ridge_fallback;
  return j;
}

json summary_json(const balance_summary& s) {
  json j;
  j["max"] = s.max;
  j["mean"] = s.mean;
  j["median"] = s.median;
  j["frac_gt10"] = s.frac_gt10;
  j["frac_gt5"] = s.frac_gt5;
  return j;
}

void write_effects_csv(const std::string& path, const effect_table& table) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(table.rows.size());
  for (const auto& r : table.rows) {
    rows.push_back({r.outcome, r.contrast, csv::format_number(r.estimate),
                    csv::format_number(r.se_iid), csv::format_number(r.se_clustered),
                    csv::format_number(r.p_value), std::to_string(r.n_used)});
  }
  csv::write_file(path, {"outcome", "contrast", "estimate", "se_iid", "se_clustered",
                         "p_value", "n_used"},
                  rows);
}

void write_balance_csv(const std::string& path, const balance_report& rep) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(rep.rows.size());
  for (const auto& r : rep.rows) {
    rows.push_back({r.column, csv::format_number(r.sd_before),
                    rep.has_after ? csv::format_number(r.sd_after_max) : std::string(),
                    r.flagged ? "1" : "0"});
  }
  csv::write_file(path, {"column", "sd_before", "sd_after_max", "flag"}, rows);
}

void write_weights_csv(const std::string& path, const run_result& res) {
  const int q = static_cast<int>(res.wsets.size());
  std::vector<std::string> header;
  if (q > 1) header.push_back("outcome");
  for (const char* h : {"unit_id", "treatment", "w", "w_p", "w_y", "w_py"}) {
    header.push_back(h);
  }
  std::vector<std::vector<std::string>> rows;
  for (int qi = 0; qi < q; ++qi) {
    for (const weight_set& ws : res.wsets[qi]) {
      const std::string& label = res.data.level_labels[ws.t];
      for (std::size_t j = 0; j < ws.rows.size(); ++j) {
        std::vector<std::string> row;
        if (q > 1) row.push_back(ws.outcome);
        row.push_back(std::to_string(ws.rows[j]));
        row.push_back(label);
        const auto idx = static_cast<Eigen::Index>(j);
        row.push_back(csv::format_number(ws.w[idx]));
        row.push_back(csv::format_number(ws.w_p[idx]));
        row.push_back(csv::format_number(ws.w_y[idx]));
        row.push_back(csv::format_number(ws.w_py[idx]));
        rows.push_back(std::move(row));
      }
    }
  }
  csv::write_file(path, header, rows);
}

void write_correlations_csv(const std::string& path, const Eigen::Matrix4d& corr) {
  static const char* kNames[4] = {"w", "w_p", "w_y", "w_py"};
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < 4; ++i) {
    std::vector<std::string> row{kNames[i]};
    for (int j = 0; j < 4; ++j) {
      row.push_back(num_or_empty(corr(i, j)));
    }
    rows.push_back(std::move(row));
  }
  csv::write_file(path, {"", "w", "w_p", "w_y", "w_py"}, rows);
}

void write_cv_curve(const std::string& path, const cv_result& cv) {
  const int k = static_cast<int>(cv.per_fold_mse.rows());
  const int g = static_cast<int>(cv.grid.lambda.size());
  std::vector<std::string> header{"lambda", "mean_mse", "se_mse", "active_count"};
  for (int f = 1; f <= k; ++f) {
    header.push_back("fold_" + std::to_string(f));
  }
  std::vector<std::vector<std::string>> rows;
  rows.reserve(g);
  for (int i = 0; i < g; ++i) {
    std::vector<std::string> row{csv::format_number(cv.grid.lambda[i]),
                                 num_or_empty(cv.mean_mse[i]), num_or_empty(cv.se_mse[i]),
                                 std::to_string(cv.active_counts[i])};
    for (int f = 0; f < k; ++f) {
      row.push_back(num_or_empty(cv.per_fold_mse(f, i)));
    }
    rows.push_back(std::move(row));
  }
  csv::write_file(path, header, rows);
}

json build_summary(const run_result& res, const run_config& cfg) {
  json root;

  json conf;
  conf["rule"] = rule_name(cfg.rule);
  conf["folds"] = cfg.folds;
  conf["trim"] = trim_name(cfg.trim);
  conf["seed"] = cfg.seed;
  conf["sd_convention"] = sd_convention_name(cfg.sd_conv);
  conf["normalize_propensity"] = cfg.normalize_propensity;
  conf["also_binary"] = cfg.also_binary;
  conf["standardize_outcomes"] = cfg.schema.standardize_outcomes;
  root["config"] = conf;

  json data;
  data["n"] = res.validation.n;
  data["treatment_levels"] = res.validation.levels;
  data["level_labels"] = res.data.level_labels;
  data["level_counts"] = res.validation.level_counts;
  data["clusters"] = res.validation.clusters;
  data["outcomes"] = res.data.outcome_names;
  data["warnings"] = res.validation.warnings;
  root["data"] = data;

  json design;
  int n_base = 0, n_inter = 0, n_poly = 0, n_forced = 0;
  for (const auto& c : res.design.cols) {
    if (c.kind == column_kind::base) ++n_base;
    if (c.kind == column_kind::interaction) ++n_inter;
    if (c.kind == column_kind::polynomial) ++n_poly;
    if (!c.penalized) ++n_forced;
  }
  design["columns"] = res.design.p();
  design["base"] = n_base;
  design["interactions"] = n_inter;
  design["polynomials"] = n_poly;
  design["forced"] = n_forced;
  design["dropped"] = static_cast<int>(res.design.dropped.size());
  design["warnings"] = res.design.warnings;
  root["design"] = design;

  json trim;
  trim["rule"] = trim_name(res.trim.rule);
  trim["kept"] = res.trim.kept_count;
  trim["dropped"] = res.trim.dropped_count;
  json bands = json::array();
  for (Eigen::Index t = 0; t < res.trim.thresholds.rows(); ++t) {
    bands.push_back({res.trim.thresholds(t, 0), res.trim.thresholds(t, 1)});
  }
  trim["thresholds"] = bands;
  root["trim"] = trim;

  json models;
  json prop = json::array();
  for (const auto& m : res.nuisances.propensity_models) {
    prop.push_back(model_json(m));
  }
  models["propensity"] = prop;
  json outc;
  const int q = static_cast<int>(res.nuisances.outcome_models.size());
  for (int qi = 0; qi < q; ++qi) {
    json per_level = json::array();
    for (const auto& m : res.nuisances.outcome_models[qi]) {
      per_level.push_back(model_json(m));
    }
    outc[res.data.outcome_names[qi]] = per_level;
  }
  models["outcome"] = outc;
  root["models"] = models;

  json effects = json::array();
  for (const auto& r : res.effects.rows) {
    json e;
    e["outcome"] = r.outcome;
    e["contrast"] = r.contrast;
    e["estimate"] = r.estimate;
    e["se_iid"] = r.se_iid;
    e["se_clustered"] = r.se_clustered;
    e["p_value"] = r.p_value;
    e["stars"] = r.stars;
    e["n_used"] = r.n_used;
    effects.push_back(e);
  }
  root["effects"] = effects;

  json balance;
  balance["convention"] = sd_convention_name(res.balance.convention);
  balance["before"] = summary_json(res.balance.before);
  if (res.balance.has_after) {
    balance["after"] = summary_json(res.balance.after);
  }
  root["balance"] = balance;

  double max_gap = 0.0;
  for (const auto& per_outcome : res.wsets) {
    for (const auto& ws : per_outcome) {
      max_gap = std::max(max_gap, ws.identity_gap);
    }
  }
  json weights;
  weights["max_identity_gap"] = max_gap;
  root["weights"] = weights;

  if (res.outcomes_standardized) {
    json scaling;
    for (int qi = 0; qi < static_cast<int>(res.data.outcome_names.size()); ++qi) {
      json s;
      s["mean"] = res.outcome_scaling.mean[qi];
      s["sd"] = res.outcome_scaling.sd[qi];
      scaling[res.data.outcome_names[qi]] = s;
    }
    root["outcome_scaling"] = scaling;
  }

  return root;
}

}  // namespace

run_result analyze_dataset(dataset data, const run_config& cfg, const design_matrix* prebuilt) {
  run_result res;
  res.validation = validate_dataset(data);

  if (cfg.schema.standardize_outcomes) {
    res.outcome_scaling = standardize_columns(data.y, data.outcome_names);
    data.y = res.outcome_scaling.values;
    res.outcomes_standardized = true;
  }

  if (prebuilt != nullptr) {
    res.design = *prebuilt;
  } else {
    expansion_spec spec;
    spec.interactions = true;
    spec.poly_degree = cfg.schema.poly_degree;
    res.design = expand_design(data, spec);
    mark_unpenalized(res.design, cfg.schema.forced);
    prune_cells(res.design, cfg.schema.min_cell_frac);
    prune_correlated(res.design, cfg.schema.corr_threshold);
  }

  res.nuisances = estimate_nuisances(data, res.design, cfg.rule, cfg.folds, cfg.seed,
                                     cfg.normalize_propensity, cfg.ctrl, cfg.threads);

  const std::vector<int> d_vec(data.d.data(), data.d.data() + data.n());
  res.trim = trim_common_support(res.nuisances.propensity, d_vec, cfg.trim);
  res.effects = build_effect_table(data, res.nuisances, res.trim);
  res.wsets = build_weight_sets(data, res.design, res.nuisances, res.effects);
  res.balance =
      standardized_differences(data.x, data.covariate_names, d_vec, &res.wsets, cfg.sd_conv);

  for (const auto& per_outcome : res.wsets) {
    for (const auto& ws : per_outcome) {
      anatomy_row row = weight_anatomy(ws);
      row.level = data.level_labels[ws.t];
      res.anatomy.push_back(std::move(row));
    }
  }
  std::vector<Eigen::Matrix4d> mats;
  for (const auto& per_outcome : res.wsets) {
    for (const auto& ws : per_outcome) {
      mats.push_back(weight_correlations(ws));
    }
  }
  res.corr_avg = average_correlations(mats);

  res.data = std::move(data);
  return res;
}

void emit_reports(const run_result& res, const run_config& cfg, const std::string& dir) {
  ensure_directory(dir);
  const std::string curves = dir + "/cv_curves";
  ensure_directory(curves);

  write_effects_csv(dir + "/effects.csv", res.effects);
  write_balance_csv(dir + "/balance.csv", res.balance);
  write_weights_csv(dir + "/weights.csv", res);
  write_correlations_csv(dir + "/weight_correlations.csv", res.corr_avg);
  write_column_ledger(dir + "/design_columns.csv", res.design);

  json anatomy = json::array();
  for (const auto& a : res.anatomy) {
    json j;
    j["outcome"] = a.outcome;
    j["level"] = a.level;
    j["treatment"] = a.t;
    j["group_size"] = a.group_size;
    j["max_share_pct"] = a.max_share_pct;
    j["top_decile_share_pct"] = a.top_decile_share_pct;
    j["negative_count"] = a.negative_count;
    j["most_negative_pct"] = a.most_negative_pct;
    j["positive_sum"] = a.positive_sum;
    j["identity_gap"] = a.identity_gap;
    anatomy.push_back(j);
  }
  write_text_file(dir + "/weight_anatomy.json", anatomy.dump(2) + "\n");

  const int levels = res.data.levels();
  for (int t = 0; t < levels; ++t) {
    const std::string label = sanitize(res.data.level_labels[t]);
    write_cv_curve(curves + "/propensity_" + label + ".csv", res.nuisances.propensity_cv[t]);
  }
  for (std::size_t qi = 0; qi < res.nuisances.outcome_cv.size(); ++qi) {
    const std::string name = sanitize(res.data.outcome_names[qi]);
    for (int t = 0; t < levels; ++t) {
      write_cv_curve(curves + "/outcome_" + name + "_" + sanitize(res.data.level_labels[t]) +
                         ".csv",
                     res.nuisances.outcome_cv[qi][t]);
    }
  }

  write_text_file(dir + "/run_summary.json", build_summary(res, cfg).dump(2) + "\n");
}

dataset collapse_binary(const dataset& data) {
  dataset out = data;
  for (Eigen::Index i = 0; i < out.d.size(); ++i) {
    out.d[i] = out.d[i] > 0 ? 1 : 0;
  }
  out.level_labels = {"0", "1+"};
  return out;
}

int run_analysis(const run_config& cfg, const std::string& data_path) {
  try {
    if (cfg.folds < 2) {
      throw config_error("config: folds must be at least 2");
    }
    if (cfg.threads < 1) {
      throw config_error("config: threads must be at least 1");
    }
    if (cfg.out_dir.empty()) {
      throw config_error("config: output directory is required");
    }
    dataset data = load_dataset(data_path, cfg.schema);
    run_result res = analyze_dataset(std::move(data), cfg);
    emit_reports(res, cfg, cfg.out_dir);
    for (const auto& w : res.validation.warnings) {
      std::cerr << "warning: " << w << "\n";
    }
    if (cfg.also_binary) {
      if (res.data.levels() <= 2) {
        std::cerr << "warning: treatment has fewer than three levels; skipping the binary "
                     "collapse run\n";
      } else {
        run_result bin = analyze_dataset(collapse_binary(res.data), cfg, &res.design);
        emit_reports(bin, cfg, cfg.out_dir + "/binary");
      }
    }
    return 0;
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace dmlkit
