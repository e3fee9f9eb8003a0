#pragma once

#include <Eigen/Core>
#include <vector>

namespace dmlkit {

enum class family { gaussian, binomial };

// Solver knobs. The objective is (1/(2n))*sum(loss) + lambda*sum_j |beta_j|
// over penalized columns, with penalized columns standardized internally
// (population variance) and coefficients reported on the original scale.
struct lasso_control {
  double tol = 1e-7;              // max coefficient change per sweep, standardized scale
  int max_sweeps = 10000;         // per grid point
  int irls_max = 50;              // quadratic approximations per grid point (binomial)
  double prob_clip = 1e-5;        // probability clip when forming IRLS weights
  int n_lambda = 100;
  double lambda_min_ratio = 1e-4; // grid spans [lambda_max*ratio, lambda_max]
  int max_active = 500;           // path stops before the active set exceeds this
  double refit_grad_tol = 1e-8;   // binomial refit: max-norm of the score
  int refit_max_iter = 200;
  double rank_rtol = 1e-10;       // pivot rejection threshold in refits
  double ridge_fallback = 1e-8;   // separation fallback penalty
};

struct penalty_grid {
  std::vector<double> lambda;     // strictly decreasing
  int max_active = 500;
};

struct lasso_fit {
  double lambda = 0.0;
  double intercept = 0.0;
  Eigen::VectorXd beta;           // original scale, full design width
  std::vector<int> active;        // penalized columns with nonzero coefficient, ascending
  int sweeps = 0;
  bool converged = true;
};

// Unpenalized refit on a retained column subset. `cols` lists the design
// columns that survived rank filtering, in factorization order.
struct refit_model {
  family fam = family::gaussian;
  double intercept = 0.0;
  Eigen::VectorXd coef;           // aligned with cols
  std::vector<int> cols;
  bool ridge_fallback = false;
  int iterations = 0;
};

// Log-spaced penalty grid from lambda_max (smallest penalty with an empty
// penalized active set, given the unpenalized columns are fit freely) down to
// lambda_max*lambda_min_ratio, truncated at the first grid point whose path
// solution exceeds max_active penalized columns. Degenerate inputs (constant
// response, no penalized columns) are errors.
penalty_grid lambda_grid(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                         const std::vector<char>& penalized, const lasso_control& ctrl);

// Coordinate-descent path along the grid with warm starts. The returned
// vector can be shorter than the grid: the path ends at the first point that
// cannot be certified — active set past grid.max_active, a separable
// logistic subsample, or the sweep budget running out. Every returned fit is
// converged.
std::vector<lasso_fit> fit_lasso_path(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                      family fam, const penalty_grid& grid,
                                      const std::vector<char>& penalized,
                                      const lasso_control& ctrl);

// Unpenalized least-squares / maximum-likelihood logistic refit on
// selected + forced columns (an intercept is always included). Columns are
// factored in the given order, forced first; columns that break full rank are
// dropped on arrival (pivot tolerance rank_rtol). The binomial branch falls
// back to a tiny ridge and flags the model when the likelihood has no
// maximizer (separation) or iteration diverges.
refit_model post_lasso_refit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                             const std::vector<int>& selected, const std::vector<int>& forced,
                             const lasso_control& ctrl);

// Response-scale predictions: identity link for gaussian, logistic for
// binomial (probabilities strictly inside (0, 1)).
Eigen::VectorXd predict(const refit_model& m, const Eigen::MatrixXd& x);

// For a gaussian refit trained on x_train: the weight vector w with
// prediction(x_query) = w . y_train. Weights sum to one because the refit
// includes an intercept.
Eigen::VectorXd hat_weights(const refit_model& m, const Eigen::MatrixXd& x_train,
                            const Eigen::VectorXd& x_query);

// Independent objective evaluator used by the solver tests: standardized
// penalty, free intercept, (1/(2n)) gaussian loss or mean negative logistic
// log-likelihood. Shares no code with the coordinate-descent internals.
double lasso_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                       const std::vector<char>& penalized, double lambda, double intercept,
                       const Eigen::VectorXd& beta);

}  // namespace dmlkit
