#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

namespace dmlkit {

// Integer bins mapping a raw count-valued treatment column onto contiguous
// labels 0..T. Bins are inclusive on both ends; hi == nullopt means
// open-ended above. Labels are assigned in bin order.
struct bin_spec {
  struct bin {
    long lo = 0;
    std::optional<long> hi;
    std::string label;
  };
  std::vector<bin> bins;
};

// Column roles for one analysis, parsed from the JSON schema file.
// Covariates not listed under `continuous` must be coded 0/1.
struct schema_config {
  std::vector<std::string> outcomes;
  std::string treatment;
  std::vector<std::string> covariates;
  std::vector<std::string> continuous;      // subset of covariates, polynomial-eligible
  std::vector<std::string> forced;          // subset of covariates, never penalized
  std::optional<std::string> cluster;       // absent: every unit is its own cluster
  std::optional<bin_spec> bins;             // absent: treatment already labelled 0..T
  bool standardize_outcomes = false;
  // Optional tuning keys (defaults match the estimator's standard settings).
  double min_cell_frac = 0.01;
  double corr_threshold = 0.99;
  int poly_degree = 4;
};

// Parses and validates the schema JSON. Unknown keys, wrong types, empty or
// overlapping role sets, and malformed bins all throw config_error.
schema_config parse_schema_json(const std::string& text);
schema_config load_schema(const std::string& path);

struct dataset {
  Eigen::MatrixXd y;                  // n x q outcomes
  Eigen::VectorXi d;                  // treatment labels 0..T
  Eigen::MatrixXd x;                  // n x p base covariates
  std::vector<int> cluster;           // dense ids 0..C-1, in order of first appearance
  std::vector<std::string> outcome_names;
  std::vector<std::string> covariate_names;
  std::vector<std::string> level_labels;   // size T+1
  std::vector<bool> continuous_col;        // per covariate
  std::vector<bool> forced_col;            // per covariate

  int n() const { return static_cast<int>(x.rows()); }
  int levels() const { return static_cast<int>(level_labels.size()); }
  int n_clusters() const;
};

struct validation_report {
  int n = 0;
  int levels = 0;
  std::vector<int> level_counts;
  int clusters = 0;
  std::vector<std::string> warnings;
};

// Maps raw integer treatment values through the bins. Values must be whole
// numbers and every value must fall in some bin; violations name the row.
Eigen::VectorXi discretize_treatment(const Eigen::VectorXd& raw, const bin_spec& bins);

// Reads the CSV, applies the schema (including treatment discretization and
// the 0/1 check on non-continuous covariates), and remaps cluster ids.
dataset load_dataset(const std::string& csv_path, const schema_config& sc);

// Structural checks: contiguous occupied treatment levels, minimum group
// sizes, finite values. Throws data_error; soft findings land in warnings.
validation_report validate_dataset(const dataset& ds);

// Column-wise standardization to mean 0, variance 1 (population convention,
// 1/n). Used for outcomes when the schema asks for it; constant columns are
// a data_error. Returns the scale so effects can be reported either way.
struct standardization {
  Eigen::MatrixXd values;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};
standardization standardize_columns(const Eigen::MatrixXd& y,
                                    const std::vector<std::string>& names);

}  // namespace dmlkit
