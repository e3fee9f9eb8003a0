#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dmlkit/cv.hpp"
#include "dmlkit/dataset.hpp"
#include "dmlkit/design.hpp"
#include "dmlkit/lasso.hpp"

namespace dmlkit {

// One fitted nuisance model: which penalty the CV rule picked, what the
// penalty selected, and the refit used for predictions.
struct model_info {
  std::string name;             // e.g. "propensity[2]" or "outcome[score][1]"
  double lambda = 0.0;
  int cv_index = -1;
  std::vector<int> active;      // penalized columns selected at that penalty
  refit_model fit;              // final refit (forced + surviving active)
};

struct nuisance_set {
  // p_hat[t](x_i): one-vs-rest logistic post-lasso, full sample. Strictly in
  // (0,1).
  Eigen::MatrixXd propensity;   // n x (T+1)
  // mu_hat[t](x_i) per outcome: gaussian post-lasso trained on the D=t
  // subsample, predicting every unit.
  std::vector<Eigen::MatrixXd> outcome_pred;  // q of (n x (T+1))

  std::vector<model_info> propensity_models;             // T+1
  std::vector<std::vector<model_info>> outcome_models;   // [q][T+1]
  std::vector<cv_result> propensity_cv;                  // T+1
  std::vector<std::vector<cv_result>> outcome_cv;        // [q][T+1]
  std::vector<std::vector<int>> group_rows;              // [T+1] training rows

  cv_rule rule = cv_rule::min;
  int folds = 10;
  std::uint64_t seed = 0;
  bool normalized = false;
};

// Propensity models are cross-validated on the full sample with folds
// stratified by treatment; outcome models within their treatment subsample,
// unstratified, with the fold count capped at the subsample size.
nuisance_set estimate_nuisances(const dataset& data, const design_matrix& design, cv_rule rule,
                                int folds, std::uint64_t seed, bool normalize_propensity,
                                const lasso_control& ctrl, int threads = 1);

enum class trim_kind { minmax, percentile, none };

struct trim_rule {
  trim_kind kind = trim_kind::minmax;
  double pct = 1.0;  // percentile rule only
};

trim_rule parse_trim(const std::string& text);
std::string trim_name(const trim_rule& rule);

struct trim_report {
  trim_rule rule;
  std::vector<char> kept;       // length n
  Eigen::MatrixXd thresholds;   // (T+1) x 2: lower, upper
  int dropped_count = 0;
  int kept_count = 0;
};

// minmax: lower_t is the largest group-minimum of p_hat_t, upper_t the
// smallest group-maximum; a unit must satisfy every treatment's band.
// percentile(p): same construction from the p-th / (100-p)-th within-group
// percentiles. none: keep everything, bands (0,1).
trim_report trim_common_support(const Eigen::MatrixXd& propensity, const std::vector<int>& d,
                                const trim_rule& rule);

// Interpolated percentile of `sorted` (ascending) at q in [0,1]: the linear
// order-statistic rule with h = (n-1)q.
double quantile_type7(const std::vector<double>& sorted, double q);

struct score_vector {
  Eigen::VectorXd psi;   // per-unit contributions, post-trim length
  double mu_hat = 0.0;   // mean of psi by construction
};

// psi_i = d_i (y_i - mu_i)/p_i + mu_i. All inputs restricted to kept units.
score_vector potential_outcome(const Eigen::VectorXd& y, const std::vector<char>& d_t,
                               const Eigen::VectorXd& mu_t, const Eigen::VectorXd& p_t);

// mean((psi_i - mu_hat)^2); the standard error is sqrt(var/n).
double iid_variance(const score_vector& score);

struct pair_effect {
  double gamma = 0.0;     // mu_m - mu_k
  double var_iid = 0.0;   // mean((psi_m - psi_k - gamma)^2)
};

pair_effect pairwise_effect(const score_vector& score_m, const score_vector& score_k);

// (1/N) sum over clusters of (sum of centered psi in the cluster)^2. With
// singleton clusters this is exactly the iid variance.
double clustered_variance(const Eigen::VectorXd& psi, double center,
                          const std::vector<int>& cluster);

struct effect_row {
  std::string outcome;
  std::string contrast;   // "mu_<level>" or "<higher>-<lower>"
  double estimate = 0.0;
  double se_iid = 0.0;
  double se_clustered = 0.0;
  double p_value = 1.0;   // normal reference, clustered standard error
  std::string stars;      // thresholds 10/5/1%
  int n_used = 0;
};

struct effect_table {
  std::vector<effect_row> rows;
  std::vector<std::vector<score_vector>> scores;  // [q][T+1], kept-unit order
  std::vector<int> kept_rows;                     // original row ids
  int n_used = 0;
};

// Potential-outcome rows for every treatment level, then every higher-minus-
// lower contrast, per outcome, with both variance flavors.
effect_table build_effect_table(const dataset& data, const nuisance_set& nu,
                                const trim_report& trim);

}  // namespace dmlkit
