#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmlkit/dataset.hpp"
#include "dmlkit/design.hpp"
#include "dmlkit/effects.hpp"
#include "dmlkit/weights.hpp"

namespace dmlkit {

struct run_config {
  schema_config schema;
  cv_rule rule = cv_rule::min;
  int folds = 10;
  trim_rule trim{};  // minmax
  sd_convention sd_conv = sd_convention::sum_pair;
  bool normalize_propensity = false;
  bool also_binary = false;
  std::uint64_t seed = 0;
  bool seed_set = false;  // seeding is explicit; there is no wall-clock fallback
  int threads = 1;
  std::string out_dir;
  lasso_control ctrl{};
};

struct run_result {
  dataset data;
  validation_report validation;
  design_matrix design;
  nuisance_set nuisances;
  trim_report trim;
  effect_table effects;
  std::vector<std::vector<weight_set>> wsets;  // [outcome][treatment]
  balance_report balance;
  Eigen::Matrix4d corr_avg;                    // over (w, w_p, w_y, w_py)
  std::vector<anatomy_row> anatomy;            // outcome-major, then treatment
  standardization outcome_scaling;
  bool outcomes_standardized = false;
};

// The in-memory pipeline: validate, expand/prune the design (or reuse
// `prebuilt`, e.g. for the binary rerun on identical covariates), fit
// nuisances, trim, estimate, and assemble every diagnostic.
run_result analyze_dataset(dataset data, const run_config& cfg,
                           const design_matrix* prebuilt = nullptr);

// Writes all report artifacts into `dir`: effects.csv, balance.csv,
// weights.csv, weight_anatomy.json, weight_correlations.csv, cv_curves/*.csv,
// run_summary.json, and the design column ledger. Byte-stable across reruns.
void emit_reports(const run_result& res, const run_config& cfg, const std::string& dir);

// Any-vs-none collapse: label 0 stays, everything else becomes "1+".
dataset collapse_binary(const dataset& data);

// Load, analyze, emit; with also_binary and a multivalued treatment the
// collapsed run lands in <out>/binary. Returns the process exit code:
// 0 ok, 2 config error, 3 data/io error, 4 numerical failure.
int run_analysis(const run_config& cfg, const std::string& data_path);

}  // namespace dmlkit
