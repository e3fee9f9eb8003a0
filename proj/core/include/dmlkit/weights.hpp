#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "dmlkit/dataset.hpp"
#include "dmlkit/design.hpp"
#include "dmlkit/effects.hpp"

namespace dmlkit {

// The estimator's implied weights for one (outcome, treatment) pair: the
// average potential outcome is exactly a weighted sum of the training
// group's outcomes, w = w_p + w_y - w_py on the group's coordinates. Weights
// live on the model's training group (pre-trim); units dropped by trimming
// contribute nothing to any sum but still carry hat-vector mass.
struct weight_set {
  int t = 0;
  std::string outcome;
  std::vector<int> rows;  // training-group rows, ascending original ids
  Eigen::VectorXd w;      // total
  Eigen::VectorXd w_p;    // inverse-probability part, zero for trimmed units
  Eigen::VectorXd w_y;    // regression part, mean hat vector
  Eigen::VectorXd w_py;   // cross part
  double y_dot_w = 0.0;
  double mu_hat = 0.0;
  double identity_gap = 0.0;  // |y_dot_w - mu_hat|
};

// w_p,i = d_i / (n_norm * p_i): includes the 1/n so Y·w_p is the
// inverse-probability term of the estimator.
Eigen::VectorXd ipw_weights(const std::vector<char>& d_t, const Eigen::VectorXd& p_t, int n_norm);

// Hat vectors of a gaussian refit: row i of `hat` is h_i with
// mu_hat(x_i) = h_i · Y_group; w_y is their average. Every h_i sums to 1
// because the refit carries an intercept.
struct outcome_weight_parts {
  Eigen::MatrixXd hat;   // n_query x N_t
  Eigen::VectorXd w_y;   // length N_t
};
outcome_weight_parts outcome_weights(const refit_model& fit, const Eigen::MatrixXd& x_group,
                                     const Eigen::MatrixXd& x_query);

// Assembles the weight set and verifies the defining identity; a gap beyond
// 1e-8 is an implementation bug and throws.
weight_set dml_weights(const Eigen::VectorXd& w_p_kept, const outcome_weight_parts& parts,
                       const std::vector<int>& group_rows, const std::vector<int>& kept_rows,
                       const Eigen::VectorXd& y_group, double mu_hat);

// All weight sets of a finished run, indexed [outcome][treatment].
std::vector<std::vector<weight_set>> build_weight_sets(const dataset& data,
                                                       const design_matrix& design,
                                                       const nuisance_set& nu,
                                                       const effect_table& table);

enum class sd_convention { sum_pair, mean_all };

sd_convention parse_sd_convention(const std::string& text);
std::string sd_convention_name(sd_convention conv);

struct balance_row {
  std::string column;
  double sd_before = 0.0;     // max_t |SD_t|, unweighted
  double sd_after_max = 0.0;  // max over treatments and outcomes, weighted means
  bool flagged = false;       // a zero-variance denominator was forced to 0
};

struct balance_summary {
  double max = 0.0, mean = 0.0, median = 0.0, frac_gt10 = 0.0, frac_gt5 = 0.0;
};

struct balance_report {
  std::vector<balance_row> rows;
  balance_summary before;
  balance_summary after;
  sd_convention convention = sd_convention::sum_pair;
  bool has_after = false;
};

balance_summary summarize_balance(const std::vector<double>& abs_sd);

// SD_t(x) = 100 (mean_t - mean_complement) / denom, with denom the square
// root of the two group variances summed (default) or of the mean variance
// across all treatment groups. "After" replaces the means with weighted
// means — each group weighted by its own total weight vector, the complement
// pooling the other groups likewise — while variances stay unweighted so the
// before/after columns share a scale. Pass wsets = nullptr for before-only.
balance_report standardized_differences(const Eigen::MatrixXd& x,
                                        const std::vector<std::string>& names,
                                        const std::vector<int>& d,
                                        const std::vector<std::vector<weight_set>>* wsets,
                                        sd_convention conv);

struct anatomy_row {
  std::string outcome;
  std::string level;
  int t = 0;
  int group_size = 0;
  double max_share_pct = 0.0;         // largest positive weight / positive mass
  double top_decile_share_pct = 0.0;  // ceil(N_t/10) largest weights / positive mass
  int negative_count = 0;
  double most_negative_pct = 0.0;     // magnitude of the worst negative / positive mass
  double positive_sum = 0.0;          // the percentage base
  double identity_gap = 0.0;
};

anatomy_row weight_anatomy(const weight_set& ws);

// Pearson correlations over (w, w_p, w_y, w_py) on the group's coordinates;
// entries with a zero-variance component are NaN (reported as absent).
Eigen::Matrix4d weight_correlations(const weight_set& ws);

// Entrywise mean over finite entries; all-absent entries stay NaN.
Eigen::Matrix4d average_correlations(const std::vector<Eigen::Matrix4d>& mats);

}  // namespace dmlkit
