#include "dmlkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "dmlkit/csv.hpp"
#include "dmlkit/errors.hpp"
#include "dmlkit/rng.hpp"
#include "lasso_internal.hpp"

namespace dmlkit {

namespace {

constexpr double kZ95 = 1.959963984540054;

void check_spec(const dgp_spec& spec) {
  if (spec.n < 1) throw config_error("dgp: n must be positive");
  if (spec.p_base < 1) throw config_error("dgp: p_base must be positive");
  if (spec.max_level < 1) throw config_error("dgp: at least two treatment levels are required");
  if (spec.sparsity < 1 || spec.sparsity > spec.p_base) {
    throw config_error("dgp: sparsity must lie in [1, p_base]");
  }
  if (static_cast<int>(spec.gamma_true.size()) != spec.max_level + 1) {
    throw config_error("dgp: gamma_true needs one entry per treatment level");
  }
  for (double g : spec.gamma_true) {
    if (!std::isfinite(g)) throw config_error("dgp: gamma_true must be finite");
  }
  if (!std::isfinite(spec.confounding)) throw config_error("dgp: confounding must be finite");
  if (spec.clusters < 1) throw config_error("dgp: cluster count must be positive");
  if (!(spec.cluster_rho >= 0.0 && spec.cluster_rho <= 1.0)) {
    throw config_error("dgp: cluster_rho must lie in [0, 1]");
  }
  if (!(spec.noise_scale >= 0.0) || !std::isfinite(spec.noise_scale)) {
    throw config_error("dgp: noise_scale must be nonnegative");
  }
}

}  // namespace

dgp_spec reference_dgp() { return dgp_spec{}; }

dgp_draw generate_dgp(const dgp_spec& spec) {
  check_spec(spec);
  const int n = spec.n;
  const int p = spec.p_base;
  const int levels = spec.max_level + 1;
  const int s = spec.sparsity;
  rng gen(spec.seed);

  dgp_draw draw;
  dgp_truth& truth = draw.truth;
  truth.gamma = Eigen::Map<const Eigen::VectorXd>(spec.gamma_true.data(), levels);
  truth.noise_sd = spec.noise_scale;

  // Sparse outcome signal: decaying coefficients on the leading columns.
  truth.beta = Eigen::VectorXd::Zero(p);
  for (int j = 0; j < s; ++j) truth.beta[j] = 1.0 / (j + 1);

  // Treatment logits on the same columns, a fixed five-valued pattern per
  // (level, column) so every arm loads on the confounders differently.
  truth.logit_coef.resize(spec.max_level, s);
  for (int t = 1; t <= spec.max_level; ++t) {
    for (int j = 0; j < s; ++j) {
      truth.logit_coef(t - 1, j) = spec.confounding * (((t * 7 + j * 3) % 5) - 2) / 2.0;
    }
  }

  // Covariates: even columns standard normal, odd columns binary by
  // thresholding a standard normal at zero. Row-major draw order.
  Eigen::MatrixXd x(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      const double z = gen.next_normal();
      x(i, j) = (j % 2 == 1) ? (z > 0.0 ? 1.0 : 0.0) : z;
    }
  }

  // Multinomial draw per unit; the running mean probability per arm feeds
  // the degeneracy guard.
  Eigen::VectorXi d(n);
  Eigen::VectorXd mean_prob = Eigen::VectorXd::Zero(levels);
  Eigen::VectorXd eta(levels), prob(levels);
  for (int i = 0; i < n; ++i) {
    eta[0] = 0.0;
    for (int t = 1; t <= spec.max_level; ++t) {
      double v = 0.0;
      for (int j = 0; j < s; ++j) v += truth.logit_coef(t - 1, j) * x(i, j);
      eta[t] = v;
    }
    const double m = eta.maxCoeff();
    prob = (eta.array() - m).exp();
    prob /= prob.sum();
    mean_prob += prob;

    const double u = gen.next_double();
    double acc = 0.0;
    int pick = levels - 1;
    for (int t = 0; t < levels; ++t) {
      acc += prob[t];
      if (u < acc) {
        pick = t;
        break;
      }
    }
    d[i] = pick;
  }
  mean_prob /= static_cast<double>(n);
  for (int t = 0; t < levels; ++t) {
    if (mean_prob[t] * n < 5.0) {
      throw numeric_error("dgp: treatment arm " + std::to_string(t) +
                          " is degenerate (expected share below 5/n)");
    }
  }

  // Outcome noise: cluster effects first, then unit shocks, so the stream
  // layout is stable under n.
  const int n_clusters = std::min(spec.clusters, n);
  Eigen::VectorXd shared(n_clusters);
  for (int c = 0; c < n_clusters; ++c) shared[c] = gen.next_normal();
  const double w_shared = std::sqrt(spec.cluster_rho);
  const double w_own = std::sqrt(1.0 - spec.cluster_rho);

  Eigen::VectorXd y(n);
  std::vector<int> cluster(n);
  for (int i = 0; i < n; ++i) {
    cluster[i] = i % n_clusters;
    const double noise = spec.noise_scale * (w_own * gen.next_normal() + w_shared * shared[cluster[i]]);
    y[i] = truth.gamma[d[i]] + x.row(i).dot(truth.beta) + noise;
  }

  dataset& data = draw.data;
  data.y = y;
  data.d = d;
  data.x = std::move(x);
  data.cluster = std::move(cluster);
  data.outcome_names = {"y"};
  data.covariate_names.reserve(p);
  data.continuous_col.resize(p);
  data.forced_col.assign(p, false);
  for (int j = 0; j < p; ++j) {
    data.covariate_names.push_back("x" + std::to_string(j + 1));
    data.continuous_col[j] = (j % 2 == 0);
  }
  data.level_labels.reserve(levels);
  for (int t = 0; t < levels; ++t) data.level_labels.push_back(std::to_string(t));
  return draw;
}

Eigen::VectorXd direct_least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (x.rows() != y.size()) throw config_error("least squares: row count mismatch");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < x.cols()) {
    throw numeric_error("least squares: design is rank deficient");
  }
  return qr.solve(y);
}

fista_result proximal_lasso_oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                   double lambda, const std::vector<char>& penalized,
                                   int max_iter) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  if (n < 1) throw config_error("proximal oracle: empty sample");
  if (static_cast<int>(penalized.size()) != p) {
    throw config_error("proximal oracle: penalty flags do not match the design width");
  }
  if (!(lambda >= 0.0)) throw config_error("proximal oracle: lambda must be nonnegative");
  const double dn = static_cast<double>(n);

  // Penalty weights: population sd per penalized column, matching the
  // standardized-penalty objective. Effectively-constant penalized columns
  // are frozen at zero instead of being handed a free ride.
  Eigen::VectorXd pw = Eigen::VectorXd::Zero(p);
  std::vector<char> frozen(p, 0);
  for (int j = 0; j < p; ++j) {
    const double mean = x.col(j).mean();
    const double var = x.col(j).squaredNorm() / dn - mean * mean;
    const double sd = std::sqrt(std::max(var, 0.0));
    if (penalized[j]) {
      const double scale = std::max(std::abs(mean), 1.0);
      if (sd <= 1e-10 * scale) {
        frozen[j] = 1;
      } else {
        pw[j] = sd;
      }
    }
  }

  // Lipschitz constant of the smooth part via power iteration on A'A with
  // A = [1 X].
  Eigen::MatrixXd aug(n, p + 1);
  aug.col(0).setOnes();
  aug.rightCols(p) = x;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(p + 1).normalized();
  double sigma = 0.0;
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd w = aug.transpose() * (aug * v);
    const double norm = w.norm();
    if (norm <= 0.0) break;
    v = w / norm;
    sigma = norm;
  }
  const double lip = std::max(sigma / dn, std::numeric_limits<double>::min());
  const double step = 1.0 / lip;

  auto objective = [&](double b0, const Eigen::VectorXd& b) {
    const double rss = (y.array() - b0 - (x * b).array()).square().sum();
    double pen = 0.0;
    for (int j = 0; j < p; ++j) pen += pw[j] * std::abs(b[j]);
    return rss / (2.0 * dn) + lambda * pen;
  };
  auto prox_step = [&](double b0, const Eigen::VectorXd& b, double& o0, Eigen::VectorXd& ob) {
    const Eigen::VectorXd r = y - Eigen::VectorXd::Constant(n, b0) - x * b;
    o0 = b0 + step * r.mean();
    const Eigen::VectorXd g = x.transpose() * r / dn;
    for (int j = 0; j < p; ++j) {
      if (frozen[j]) {
        ob[j] = 0.0;
        continue;
      }
      const double z = b[j] + step * g[j];
      const double thr = step * lambda * pw[j];
      ob[j] = z > thr ? z - thr : (z < -thr ? z + thr : 0.0);
    }
  };

  double b0 = 0.0, z0 = 0.0;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p), z = b;
  double t_mom = 1.0;
  double obj_prev = objective(b0, b);
  int stagnant = 0;

  for (int it = 1; it <= max_iter; ++it) {
    double c0;
    Eigen::VectorXd cb(p);
    prox_step(z0, z, c0, cb);
    double obj_new = objective(c0, cb);

    if (obj_new > obj_prev) {
      // Monotone restart: drop the momentum and take a plain step from the
      // last accepted iterate.
      prox_step(b0, b, c0, cb);
      obj_new = objective(c0, cb);
      t_mom = 1.0;
    }

    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_mom * t_mom));
    const double mom = (t_mom - 1.0) / t_next;
    z0 = c0 + mom * (c0 - b0);
    z = cb + mom * (cb - b);
    t_mom = t_next;

    const double drop = obj_prev - obj_new;
    b0 = c0;
    b.swap(cb);
    obj_prev = std::min(obj_prev, obj_new);

    if (std::abs(drop) <= 1e-10 * std::max(1.0, std::abs(obj_new))) {
      if (++stagnant >= 5) {
        fista_result out;
        out.intercept = b0;
        out.beta = std::move(b);
        out.objective = obj_new;
        out.iterations = it;
        return out;
      }
    } else {
      stagnant = 0;
    }
  }
  throw numeric_error("proximal oracle: no convergence within the iteration cap");
}

loo_result loo_cv_oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                         const std::vector<char>& penalized, const std::vector<int>& forced,
                         const penalty_grid& grid, const lasso_control& ctrl) {
  const int n = static_cast<int>(x.rows());
  const int m = static_cast<int>(grid.lambda.size());
  if (n < 2) throw config_error("loo oracle: need at least two rows");
  lasso_control c = ctrl;
  c.max_active = grid.max_active;

  loo_result out;
  out.per_unit = Eigen::MatrixXd::Constant(n, m, std::numeric_limits<double>::quiet_NaN());

  Eigen::MatrixXd x_tr(n - 1, x.cols());
  Eigen::VectorXd y_tr(n - 1);
  for (int u = 0; u < n; ++u) {
    int at = 0;
    for (int i = 0; i < n; ++i) {
      if (i == u) continue;
      x_tr.row(at) = x.row(i);
      y_tr[at] = y[i];
      ++at;
    }
    detail::column_stats st(x_tr);
    detail::gram_cache gram(x_tr);
    detail::path_solver solver(x_tr, y_tr, fam, penalized, c, gram, st);
    detail::path_refitter refitter(x_tr, y_tr, fam, forced, c, gram);
    for (int g = 0; g < m; ++g) {
      detail::path_point pt = solver.solve(grid.lambda[g]);
      if (pt.truncated) break;
      const refit_model& fit = refitter.refit(pt.fit.active);
      const Eigen::VectorXd pred = predict(fit, x.row(u));
      const double e = y[u] - pred[0];
      out.per_unit(u, g) = e * e;
    }
  }

  out.mean_mse = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::quiet_NaN());
  for (int g = 0; g < m; ++g) {
    if (out.per_unit.col(g).array().isFinite().all()) {
      out.mean_mse[g] = out.per_unit.col(g).mean();
    }
  }
  return out;
}

mc_result run_monte_carlo(const mc_config& cfg) {
  if (cfg.reps < 1) throw config_error("mc: at least one replication is required");
  mc_result mc;
  mc.rows.reserve(static_cast<std::size_t>(cfg.reps) * 6);

  for (int rep = 0; rep < cfg.reps; ++rep) {
    dgp_spec spec = cfg.spec;
    spec.seed = rng::mix(cfg.spec.seed, static_cast<std::uint64_t>(rep));
    dgp_draw draw = generate_dgp(spec);

    const Eigen::VectorXd y0 = draw.data.y.col(0);
    const double mean_y = y0.mean();
    mc.outcome_sd.push_back(
        std::sqrt(y0.squaredNorm() / static_cast<double>(y0.size()) - mean_y * mean_y));

    run_config rc;
    rc.rule = cfg.rule;
    rc.folds = cfg.folds;
    rc.trim = cfg.trim;
    rc.seed = spec.seed;
    rc.seed_set = true;
    rc.threads = cfg.threads;
    rc.ctrl = cfg.ctrl;
    run_result res = analyze_dataset(std::move(draw.data), rc);

    mc.balance_before.push_back(res.balance.before.mean);
    mc.balance_after.push_back(res.balance.after.mean);
    mc.corr_w_wp.push_back(res.corr_avg(0, 1));

    // Pairwise rows follow the level rows, ordered (m, k) for m > k.
    std::vector<std::pair<int, int>> order;
    for (int m = 1; m <= spec.max_level; ++m) {
      for (int k = 0; k < m; ++k) order.emplace_back(m, k);
    }
    std::size_t at = 0;
    for (const auto& row : res.effects.rows) {
      if (row.contrast.rfind("mu_", 0) == 0) continue;
      if (at >= order.size()) {
        throw numeric_error("mc: unexpected contrast row '" + row.contrast + "'");
      }
      const auto [mi, ki] = order[at++];
      mc_row r;
      r.rep = rep;
      r.contrast = row.contrast;
      r.estimate = row.estimate;
      r.se = row.se_iid;
      r.true_gamma = draw.truth.gamma[mi] - draw.truth.gamma[ki];
      r.covered_95 = std::abs(r.estimate - r.true_gamma) <= kZ95 * r.se ? 1 : 0;
      mc.rows.push_back(std::move(r));
    }
    if (at != order.size()) {
      throw numeric_error("mc: pairwise contrast rows are incomplete");
    }
  }
  return mc;
}

void write_mc_results(const std::string& path, const mc_result& mc) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(mc.rows.size());
  for (const auto& r : mc.rows) {
    rows.push_back({std::to_string(r.rep), r.contrast, csv::format_number(r.estimate),
                    csv::format_number(r.se), std::to_string(r.covered_95),
                    csv::format_number(r.true_gamma)});
  }
  csv::write_file(path, {"rep", "contrast", "estimate", "se", "covered_95", "true_gamma"}, rows);
}

}  // namespace dmlkit
