#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dmlkit/dataset.hpp"
#include "dmlkit/lasso.hpp"
#include "dmlkit/runner.hpp"

namespace dmlkit {

// Synthetic data with known ground truth. Covariates alternate standard
// normal and thresholded-normal binary columns; the same leading `sparsity`
// columns drive both the treatment logits and the outcomes, which is where
// the confounding comes from.
struct dgp_spec {
  int n = 2000;
  int p_base = 50;
  int max_level = 3;          // treatment labels run 0..max_level
  int sparsity = 5;
  double confounding = 0.5;   // scale on the treatment logit coefficients
  std::vector<double> gamma_true = {0.0, 0.25, 0.45, 0.60};  // per level
  int clusters = 20;
  double cluster_rho = 0.2;   // share of outcome noise shared within cluster
  double noise_scale = 1.0;
  std::uint64_t seed = 0;
};

// The pinned configuration every acceptance number is quoted against.
dgp_spec reference_dgp();

struct dgp_truth {
  Eigen::VectorXd gamma;       // additive level constants
  Eigen::VectorXd beta;        // outcome coefficients on the base covariates
  Eigen::MatrixXd logit_coef;  // max_level x sparsity; level 0 is the baseline
  double noise_sd = 1.0;
};

struct dgp_draw {
  dataset data;
  dgp_truth truth;
};

// Throws config_error on an inconsistent spec, numeric_error when a treatment
// arm's average assignment probability falls below 5/n.
dgp_draw generate_dgp(const dgp_spec& spec);

// ---- Brute-force oracles ----------------------------------------------

// Exact least squares of y on the columns of x (no implicit intercept —
// prepend a ones column to reproduce an intercept fit) via column-pivoted
// QR. Throws numeric_error when the design is rank deficient.
Eigen::VectorXd direct_least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

struct fista_result {
  double intercept = 0.0;
  Eigen::VectorXd beta;
  double objective = 0.0;
  int iterations = 0;
};

// Accelerated proximal gradient on the squared-error lasso objective
//   (1/2n) ||y - b0 - X b||^2 + lambda * sum_{penalized j} sd_j |b_j|
// with a free intercept and monotone restarts, run to objective stagnation
// below 1e-10. Gaussian only; exists to cross-check the coordinate-descent
// path, never to serve predictions. Throws numeric_error at the iteration
// cap.
fista_result proximal_lasso_oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                   double lambda, const std::vector<char>& penalized,
                                   int max_iter = 200000);

struct loo_result {
  Eigen::MatrixXd per_unit;  // n x grid; NaN where the unit's path truncated
  Eigen::VectorXd mean_mse;  // column means, NaN when any unit is missing
};

// Exhaustive leave-one-out evaluation: for each unit, fit the path on the
// other n-1 rows (ascending order), refit at every grid point, and score the
// held-out squared error. Small n only.
loo_result loo_cv_oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                         const std::vector<char>& penalized, const std::vector<int>& forced,
                         const penalty_grid& grid, const lasso_control& ctrl);

// ---- Replication harness ----------------------------------------------

struct mc_config {
  dgp_spec spec;  // spec.seed doubles as the master replication seed
  int reps = 200;
  cv_rule rule = cv_rule::min;
  int folds = 10;
  trim_rule trim{};
  int threads = 1;
  lasso_control ctrl{};
};

struct mc_row {
  int rep = 0;
  std::string contrast;
  double estimate = 0.0;
  double se = 0.0;  // iid standard error
  int covered_95 = 0;
  double true_gamma = 0.0;
};

struct mc_result {
  std::vector<mc_row> rows;            // pairwise contrasts, replication-major
  std::vector<double> balance_before;  // per-rep mean |SD| across columns
  std::vector<double> balance_after;
  std::vector<double> corr_w_wp;       // per-rep averaged corr(w, w_p)
  std::vector<double> outcome_sd;      // per-rep population sd of the outcome
};

// Runs the full pipeline on `reps` independent draws; replication r uses the
// sub-seed mix(spec.seed, r) for both the draw and the fold assignments.
mc_result run_monte_carlo(const mc_config& cfg);

// Columns: rep, contrast, estimate, se, covered_95, true_gamma.
void write_mc_results(const std::string& path, const mc_result& mc);

}  // namespace dmlkit
