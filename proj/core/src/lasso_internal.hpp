#pragma once

// Solver internals shared by the path fitter, the cross-validation driver,
// and the exhaustive leave-one-out oracle (which must reproduce the fold
// computation bit-for-bit while bypassing the fold bookkeeping).

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "dmlkit/lasso.hpp"

namespace dmlkit::detail {

constexpr double kViolationSlack = 1e-10;  // KKT margin when growing the working set

// Column means / population standard deviations plus a usability mask.
// Columns that are (numerically) constant on the given rows are excluded
// from every fit; the intercept absorbs them.
struct column_stats {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  Eigen::VectorXd inv_sd;       // 0 for unusable columns
  std::vector<char> usable;
  explicit column_stats(const Eigen::MatrixXd& x);
};

// Cross products X'X over one row set, served one column at a time and
// cached, plus column sums. Solvers and refitters only ever touch the
// columns that enter a working or refit set, so on-demand columns beat
// materializing the full p x p matrix at the design widths this estimator
// runs at. Column values do not depend on request order, so lazy evaluation
// preserves run-to-run determinism.
struct gram_cache {
  explicit gram_cache(const Eigen::MatrixXd& x);
  const Eigen::VectorXd& col(int j) const;  // column j of X'X
  Eigen::VectorXd colsum;
  double n = 0;

 private:
  const Eigen::MatrixXd* x_ = nullptr;
  mutable std::vector<Eigen::VectorXd> cols_;
  mutable std::vector<char> have_;
};

// One grid point of the internal path fitter.
struct path_point {
  lasso_fit fit;
  bool truncated = false;  // active set exceeded max_active; fit is not usable
};

// Coordinate-descent path solver bound to one (rows, response) pair.
// Gaussian fits use covariance updates against the shared Gram; binomial
// fits wrap weighted residual-update descent in the usual quadratic
// approximation loop. Streams one grid point at a time so callers can refit
// and predict per penalty without storing the whole path.
class path_solver {
 public:
  path_solver(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
              const std::vector<char>& penalized, const lasso_control& ctrl,
              const gram_cache& gram, const column_stats& stats);

  // Fits the unpenalized (forced + intercept) model and returns lambda_max.
  // Throws numeric_error when the response or penalized set is degenerate.
  double lambda_max();

  // Solves at the given penalty, warm-starting from the previous call.
  // Returns truncated=true once the penalized active count exceeds
  // ctrl.max_active, a logistic fit saturates (the linear index runs away,
  // i.e. the subsample is separable at this penalty), or the sweep budget
  // runs out before convergence. Either way the fit at that point must not
  // be used and the path ends here.
  path_point solve(double lambda);

 private:
  void sweep_gaussian(double lambda, double& max_delta);
  void greedy_pass(double lambda, double& max_delta);
  void solve_gaussian(double lambda, int& sweeps, bool& converged);
  void solve_binomial(double lambda, int& sweeps, bool& converged);
  bool grow_working_set_gaussian(double lambda);
  bool grow_working_set_binomial(double lambda, const Eigen::VectorXd& w,
                                 const Eigen::VectorXd& r, std::vector<int>* added = nullptr);
  // Direct solves of the stationarity system on the current sign pattern,
  // used when coordinate descent inches along an ill-conditioned active set.
  // Both verify the full KKT conditions of their (sub)problem and update the
  // iterate only on success; a false return leaves the state untouched.
  bool finish_gaussian(double lambda);
  bool finish_binomial_quadratic(double lambda, const Eigen::VectorXd& w, Eigen::VectorXd& r,
                                 double sw);
  const Eigen::VectorXd& acol(int j);  // standardized covariance column of A~
  // Sweeps run against a working-set-compressed mirror of the gradient so a
  // coordinate move costs |working| instead of p; these two convert between
  // the mirror and the full c_. rebuild_compressed must only run while c_ is
  // current (point entry, or right after sync_full_gradient).
  void rebuild_compressed();
  void sync_full_gradient();
  lasso_fit emit(double lambda, int sweeps, bool converged) const;
  void insert_sorted(int j);

  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  family fam_;
  const std::vector<char>& penalized_;
  lasso_control ctrl_;
  const gram_cache& gram_;
  const column_stats& st_;
  int n_ = 0, p_ = 0;

  std::vector<int> working_;        // sorted column ids: usable forced + active penalized
  std::vector<char> in_working_;
  Eigen::VectorXd beta_std_;        // standardized-scale coefficients
  double b0_ = 0.0;                 // intercept on the centered/standardized problem

  // Gaussian state: maintained gradient c_j = <x~_j, y - eta>/n for all j.
  Eigen::VectorXd c_;
  Eigen::VectorXd q_;               // <x~_j, y - ybar>/n
  double ybar_ = 0.0;

  // Columns of the standardized covariance A~ = X~'X~/n, built on first use
  // from the Gram cache. One axpy against these applies a coordinate move to
  // the whole gradient.
  Eigen::VectorXd u_;               // mean/sd per usable column, 0 otherwise
  std::vector<Eigen::VectorXd> acol_;
  std::vector<char> have_acol_;

  // Compressed sweep state: cw_[i] mirrors c_[working_[i]], bw_ the matching
  // coefficients, and acw_.col(i) is acol(working_[i]) gathered to working
  // order. pmask_ is 1 on penalized members; zscr_/dscr_ are scan scratch.
  Eigen::VectorXd cw_, bw_;
  Eigen::MatrixXd acw_;
  Eigen::ArrayXd pmask_, zscr_, dscr_;

  // Binomial state.
  Eigen::VectorXd eta_;             // current linear index (length n)
  bool saturated_ = false;          // logistic index ran past the guard

#ifdef DMLKIT_FINISH_TRACE
 public:
  long moves_ = 0;
#endif
};

// Post-Lasso refits along a path, reusing a bordered Cholesky factor of the
// second-moment matrix of [1, X_S]. Columns enter in first-appearance order
// (forced first); a column whose pivot falls below rank_rtol relative to its
// diagonal is dropped on arrival. Removals from the active set trigger a
// rebuild that replays the surviving columns in their original order.
class path_refitter {
 public:
  path_refitter(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                const std::vector<int>& forced, const lasso_control& ctrl,
                const gram_cache& gram);

  // Refit on forced + selected (selected ascending, as emitted by the path).
  const refit_model& refit(const std::vector<int>& selected);

 private:
  bool try_append(int col);         // border the factor; false when rank-rejected
  void rebuild(const std::vector<int>& cols);
  void solve_gaussian();
  void solve_binomial();
  Eigen::VectorXd solve_factor(const Eigen::VectorXd& rhs) const;

  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  family fam_;
  lasso_control ctrl_;
  const gram_cache& gram_;
  int n_ = 0;

  std::vector<int> forced_;
  std::vector<int> order_;          // accepted columns, factor order (after intercept)
  std::vector<int> appearance_;     // all columns ever offered, in offer order
  std::vector<char> offered_;       // design-width flags
  std::vector<char> accepted_;      // design-width flags
  Eigen::MatrixXd l_;               // lower Cholesky of the bordered system
  Eigen::VectorXd xty_;             // X'y over this row set
  double ysum_ = 0.0;

  std::vector<int> last_set_;       // forced+selected of the previous call
  refit_model model_;
  bool have_model_ = false;
};

// Materialized hat matrix for a gaussian refit: rows are query points,
// columns align with the training rows. Used by the weight diagnostics.
Eigen::MatrixXd hat_matrix(const refit_model& m, const Eigen::MatrixXd& x_train,
                           const Eigen::MatrixXd& x_query);

}  // namespace dmlkit::detail
