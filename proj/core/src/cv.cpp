#include "dmlkit/cv.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "dmlkit/errors.hpp"
#include "dmlkit/parallel.hpp"
#include "dmlkit/rng.hpp"
#include "lasso_internal.hpp"

namespace dmlkit {

fold_assignment assign_folds(int n, int k, const std::vector<int>& strata, std::uint64_t seed) {
  if (n < 1) throw config_error("folds: sample is empty");
  if (k < 2 || k > n) throw config_error("folds: fold count must be between 2 and n");
  if (!strata.empty() && static_cast<int>(strata.size()) != n) {
    throw config_error("folds: strata labels do not match the sample size");
  }
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n; ++i) groups[strata.empty() ? 0 : strata[i]].push_back(i);

  fold_assignment fa;
  fa.k = k;
  fa.seed = seed;
  fa.fold_id.assign(n, 0);
  rng r(seed);
  std::int64_t cursor = 0;
  for (auto& [label, members] : groups) {
    (void)label;
    r.shuffle(members);
    for (int row : members) fa.fold_id[row] = static_cast<int>(cursor++ % k) + 1;
  }
  return fa;
}

cv_rule parse_rule(const std::string& text) {
  if (text == "min") return cv_rule::min;
  if (text == "1se") return cv_rule::one_se;
  if (text == "1se+") return cv_rule::one_se_plus;
  if (text == "2se+") return cv_rule::two_se_plus;
  throw config_error("unknown penalty rule '" + text + "' (expected min, 1se, 1se+, 2se+)");
}

std::string rule_name(cv_rule rule) {
  switch (rule) {
    case cv_rule::min: return "min";
    case cv_rule::one_se: return "1se";
    case cv_rule::one_se_plus: return "1se+";
    case cv_rule::two_se_plus: return "2se+";
  }
  return "min";
}

cv_selection select_lambda(const cv_result& cv, cv_rule rule) {
  const int m = static_cast<int>(cv.grid.lambda.size());
  int min_idx = -1;
  for (int i = 0; i < m; ++i) {
    if (!cv.valid[i]) continue;
    if (min_idx < 0 || cv.mean_mse[i] < cv.mean_mse[min_idx]) min_idx = i;
  }
  if (min_idx < 0) throw numeric_error("penalty selection: no grid point was scored by every fold");

  int idx = min_idx;
  if (rule != cv_rule::min) {
    const double band = rule == cv_rule::two_se_plus ? 2.0 : 1.0;
    const double thresh = cv.mean_mse[min_idx] + band * cv.se_mse[min_idx];
    const int step = rule == cv_rule::one_se ? -1 : +1;
    for (int i = min_idx + step; i >= 0 && i < m; i += step) {
      if (!cv.valid[i]) continue;  // unscored cells neither qualify nor stop the scan
      if (cv.mean_mse[i] <= thresh) {
        idx = i;
      } else {
        break;
      }
    }
  }
  cv_selection sel;
  sel.index = idx;
  sel.lambda = cv.grid.lambda[idx];
  sel.rule = rule;
  return sel;
}

namespace {

std::vector<double> geometric_lambdas(double lmax, const lasso_control& ctrl) {
  const int m = ctrl.n_lambda;
  std::vector<double> out(m);
  for (int i = 0; i < m; ++i) {
    const double t = m == 1 ? 0.0 : static_cast<double>(i) / (m - 1);
    out[i] = lmax * std::pow(ctrl.lambda_min_ratio, t);
  }
  out.front() = lmax;
  if (m > 1) out.back() = lmax * ctrl.lambda_min_ratio;
  return out;
}

std::vector<cv_result> cv_core(const Eigen::MatrixXd& x, const std::vector<Eigen::VectorXd>& ys,
                               const std::vector<family>& fams,
                               const std::vector<char>& penalized, const std::vector<int>& forced,
                               const std::vector<penalty_grid>* grids, const fold_assignment& folds,
                               const lasso_control& ctrl, int threads) {
  const int n = static_cast<int>(x.rows());
  const int n_resp = static_cast<int>(ys.size());
  if (n_resp == 0) throw config_error("cv: no responses");
  if (static_cast<int>(fams.size()) != n_resp) {
    throw config_error("cv: family list does not match the response list");
  }
  for (const auto& y : ys) {
    if (static_cast<int>(y.size()) != n) throw config_error("cv: response length mismatch");
  }
  if (static_cast<int>(folds.fold_id.size()) != n) {
    throw config_error("cv: fold assignment does not match the sample size");
  }
  const int k = folds.k;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // Full-sample phase: grids (when not supplied) and reference paths, off one
  // shared Gram matrix.
  std::vector<cv_result> results(n_resp);
  {
    detail::column_stats st(x);
    detail::gram_cache gram(x);
    for (int r = 0; r < n_resp; ++r) {
      lasso_control c = ctrl;
      std::vector<double> lams;
      if (grids) {
        c.max_active = (*grids)[r].max_active;
        lams = (*grids)[r].lambda;
      }
      detail::path_solver solver(x, ys[r], fams[r], penalized, c, gram, st);
      if (!grids) lams = geometric_lambdas(solver.lambda_max(), c);
      auto& res = results[r];
      res.grid.max_active = c.max_active;
      for (double lam : lams) {
        detail::path_point pt = solver.solve(lam);
        if (pt.truncated) break;
        res.grid.lambda.push_back(lam);
        res.active_counts.push_back(static_cast<int>(pt.fit.active.size()));
        res.reference_path.push_back(std::move(pt.fit));
      }
      if (res.grid.lambda.empty()) {
        throw numeric_error("cv: the path has no usable grid points");
      }
      res.per_fold_mse = Eigen::MatrixXd::Constant(k, static_cast<int>(res.grid.lambda.size()),
                                                   nan);
    }
  }

  // Fold phase: one task per fold, writing into disjoint rows. The per-fold
  // Gram is shared across all responses.
  parallel_for(k, threads, [&](int slot) {
    const int label = slot + 1;
    std::vector<int> train_rows, val_rows;
    for (int i = 0; i < n; ++i) {
      (folds.fold_id[i] == label ? val_rows : train_rows).push_back(i);
    }
    if (train_rows.empty() || val_rows.empty()) return;  // columns stay NaN

    Eigen::MatrixXd x_train(train_rows.size(), x.cols());
    for (std::size_t i = 0; i < train_rows.size(); ++i) x_train.row(i) = x.row(train_rows[i]);
    Eigen::MatrixXd x_val(val_rows.size(), x.cols());
    for (std::size_t i = 0; i < val_rows.size(); ++i) x_val.row(i) = x.row(val_rows[i]);
    detail::column_stats st_tr(x_train);
    detail::gram_cache gram_tr(x_train);

    for (int r = 0; r < n_resp; ++r) {
      auto& res = results[r];
      lasso_control c = ctrl;
      c.max_active = res.grid.max_active;
      Eigen::VectorXd y_train(train_rows.size()), y_val(val_rows.size());
      for (std::size_t i = 0; i < train_rows.size(); ++i) y_train[i] = ys[r][train_rows[i]];
      for (std::size_t i = 0; i < val_rows.size(); ++i) y_val[i] = ys[r][val_rows[i]];

      detail::path_solver solver(x_train, y_train, fams[r], penalized, c, gram_tr, st_tr);
      detail::path_refitter refitter(x_train, y_train, fams[r], forced, c, gram_tr);
      const int m = static_cast<int>(res.grid.lambda.size());
      for (int g = 0; g < m; ++g) {
        detail::path_point pt = solver.solve(res.grid.lambda[g]);
        if (pt.truncated) break;  // later cells stay NaN for this fold
        const refit_model& fit = refitter.refit(pt.fit.active);
        const Eigen::VectorXd pred = predict(fit, x_val);
        res.per_fold_mse(slot, g) =
            (y_val - pred).squaredNorm() / static_cast<double>(val_rows.size());
      }
    }
  });

  // Curves: a column is valid only when every fold scored it.
  for (auto& res : results) {
    const int m = static_cast<int>(res.grid.lambda.size());
    res.mean_mse = Eigen::VectorXd::Constant(m, nan);
    res.se_mse = Eigen::VectorXd::Constant(m, nan);
    res.valid.assign(m, 0);
    for (int g = 0; g < m; ++g) {
      bool ok = true;
      for (int f = 0; f < k; ++f) {
        if (!std::isfinite(res.per_fold_mse(f, g))) ok = false;
      }
      if (!ok) continue;
      res.valid[g] = 1;
      const double mean = res.per_fold_mse.col(g).mean();
      const double var =
          (res.per_fold_mse.col(g).array() - mean).square().sum() / static_cast<double>(k - 1);
      res.mean_mse[g] = mean;
      res.se_mse[g] = std::sqrt(var / static_cast<double>(k));
    }
  }
  return results;
}

}  // namespace

std::vector<cv_result> cross_validate_post_lasso(
    const Eigen::MatrixXd& x, const std::vector<Eigen::VectorXd>& ys,
    const std::vector<family>& fams, const std::vector<char>& penalized,
    const std::vector<int>& forced, const fold_assignment& folds, const lasso_control& ctrl,
    int threads) {
  return cv_core(x, ys, fams, penalized, forced, nullptr, folds, ctrl, threads);
}

cv_result cross_validate_post_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                                    const std::vector<char>& penalized,
                                    const std::vector<int>& forced, const penalty_grid& grid,
                                    const fold_assignment& folds, const lasso_control& ctrl,
                                    int threads) {
  std::vector<penalty_grid> grids{grid};
  auto out = cv_core(x, {y}, {fam}, penalized, forced, &grids, folds, ctrl, threads);
  return std::move(out.front());
}

}  // namespace dmlkit
