#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dmlkit/lasso.hpp"

namespace dmlkit {

// Fold labels are 1..k. Within each stratum a seeded permutation is dealt
// round-robin, so stratum fold counts differ by at most one; the dealing
// cursor carries across strata (processed in sorted label order) to keep the
// total fold sizes balanced as well.
struct fold_assignment {
  std::vector<int> fold_id;
  int k = 0;
  std::uint64_t seed = 0;
};

// strata may be empty (single stratum). Requires 2 <= k <= n.
fold_assignment assign_folds(int n, int k, const std::vector<int>& strata, std::uint64_t seed);

enum class cv_rule { min, one_se, one_se_plus, two_se_plus };

// Accepts "min", "1se", "1se+", "2se+".
cv_rule parse_rule(const std::string& text);
std::string rule_name(cv_rule rule);

// Cross-validated error curves over a penalty grid. Losses are mean squared
// prediction error per held-out fold — for binomial models the predictions
// are probabilities, so the same formula is the Brier score. Cells a fold
// could not score (its training path hit the active cap before that grid
// point) are NaN; a grid column is valid only when every fold scored it.
struct cv_result {
  penalty_grid grid;
  Eigen::MatrixXd per_fold_mse;  // k x grid-length, NaN for unscored cells
  Eigen::VectorXd mean_mse;      // column means over folds, NaN when invalid
  Eigen::VectorXd se_mse;        // sqrt(sample variance over folds / k)
  std::vector<int> active_counts;      // active-set sizes of the reference path
  std::vector<char> valid;             // per grid column
  std::vector<lasso_fit> reference_path;  // full-sample fits along the grid
};

struct cv_selection {
  int index = -1;
  double lambda = 0.0;
  cv_rule rule = cv_rule::min;
};

// min: argmin of mean_mse over valid columns (smallest index on ties).
// 1se: from the min, scan toward larger lambda; return the last index whose
// mean stays within mean_min + 1*se_min, stopping at the first valid point
// that violates the band (invalid cells are skipped, not violations).
// 1se+ / 2se+: same scan toward smaller lambda with a 1 or 2 se band.
cv_selection select_lambda(const cv_result& cv, cv_rule rule);

// Shared-design engine: one call cross-validates several responses on the
// same design and folds, reusing the per-fold Gram matrix across responses.
// Grids and reference paths are computed internally on the full sample.
std::vector<cv_result> cross_validate_post_lasso(
    const Eigen::MatrixXd& x, const std::vector<Eigen::VectorXd>& ys,
    const std::vector<family>& fams, const std::vector<char>& penalized,
    const std::vector<int>& forced, const fold_assignment& folds, const lasso_control& ctrl,
    int threads = 1);

// Single-response form taking a pre-built grid. If the full-sample path hits
// the active cap inside the given grid, the grid is truncated to the fitted
// prefix.
cv_result cross_validate_post_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                    family fam, const std::vector<char>& penalized,
                                    const std::vector<int>& forced, const penalty_grid& grid,
                                    const fold_assignment& folds, const lasso_control& ctrl,
                                    int threads = 1);

}  // namespace dmlkit
