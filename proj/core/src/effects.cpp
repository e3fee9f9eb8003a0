#include "dmlkit/effects.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dmlkit/errors.hpp"
#include "dmlkit/rng.hpp"

namespace dmlkit {

namespace {

constexpr std::uint64_t kPropensityStream = 0x70726f70;  // fold-seed tags
constexpr std::uint64_t kOutcomeStream = 0x6f757463;

std::string level_tag(const dataset& data, int t) { return data.level_labels[t]; }

}  // namespace

nuisance_set estimate_nuisances(const dataset& data, const design_matrix& design, cv_rule rule,
                                int folds, std::uint64_t seed, bool normalize_propensity,
                                const lasso_control& ctrl, int threads) {
  const int n = data.n();
  const int levels = data.levels();
  const int q = static_cast<int>(data.y.cols());
  if (folds < 2) throw config_error("nuisances: fold count must be at least 2");

  std::vector<char> penalized(design.cols.size());
  for (std::size_t j = 0; j < design.cols.size(); ++j) penalized[j] = design.cols[j].penalized;
  const std::vector<int> forced = design.forced_indices();
  const std::vector<int> d_vec(data.d.data(), data.d.data() + n);

  nuisance_set nu;
  nu.rule = rule;
  nu.folds = folds;
  nu.seed = seed;
  nu.normalized = normalize_propensity;
  nu.propensity.resize(n, levels);
  nu.group_rows.assign(levels, {});
  for (int i = 0; i < n; ++i) nu.group_rows[data.d[i]].push_back(i);

  // Propensities: one-vs-rest logistic models on the full sample, all T+1
  // responses cross-validated in one pass over treatment-stratified folds.
  {
    const fold_assignment fa =
        assign_folds(n, std::min(folds, n), d_vec, rng::mix(seed, kPropensityStream));
    std::vector<Eigen::VectorXd> ys(levels, Eigen::VectorXd(n));
    std::vector<family> fams(levels, family::binomial);
    for (int t = 0; t < levels; ++t) {
      for (int i = 0; i < n; ++i) ys[t][i] = data.d[i] == t ? 1.0 : 0.0;
    }
    try {
      nu.propensity_cv =
          cross_validate_post_lasso(design.x, ys, fams, penalized, forced, fa, ctrl, threads);
    } catch (const numeric_error& e) {
      throw numeric_error("propensity: " + std::string(e.what()));
    }
    for (int t = 0; t < levels; ++t) {
      const cv_selection sel = select_lambda(nu.propensity_cv[t], rule);
      model_info info;
      info.name = "propensity[" + level_tag(data, t) + "]";
      info.lambda = sel.lambda;
      info.cv_index = sel.index;
      info.active = nu.propensity_cv[t].reference_path[sel.index].active;
      try {
        info.fit = post_lasso_refit(design.x, ys[t], family::binomial, info.active, forced, ctrl);
      } catch (const numeric_error& e) {
        throw numeric_error(info.name + ": " + e.what());
      }
      nu.propensity.col(t) = predict(info.fit, design.x);
      nu.propensity_models.push_back(std::move(info));
    }
    if (normalize_propensity) {
      for (int i = 0; i < n; ++i) nu.propensity.row(i) /= nu.propensity.row(i).sum();
    }
  }

  // Outcome models: per treatment group, all outcomes cross-validated in one
  // pass on the subsample, then refit there and predicted for every unit.
  nu.outcome_pred.assign(q, Eigen::MatrixXd::Zero(n, levels));
  nu.outcome_models.assign(q, {});
  nu.outcome_cv.assign(q, {});
  for (int qi = 0; qi < q; ++qi) {
    nu.outcome_models[qi].resize(levels);
    nu.outcome_cv[qi].resize(levels);
  }
  for (int t = 0; t < levels; ++t) {
    const std::vector<int>& rows = nu.group_rows[t];
    const int nt = static_cast<int>(rows.size());
    if (nt < 2) throw data_error("nuisances: treatment group " + level_tag(data, t) +
                                 " has fewer than 2 units");
    Eigen::MatrixXd x_sub(nt, design.x.cols());
    for (int i = 0; i < nt; ++i) x_sub.row(i) = design.x.row(rows[i]);
    std::vector<Eigen::VectorXd> ys(q, Eigen::VectorXd(nt));
    for (int qi = 0; qi < q; ++qi) {
      for (int i = 0; i < nt; ++i) ys[qi][i] = data.y(rows[i], qi);
    }
    const fold_assignment fa = assign_folds(
        nt, std::min(folds, nt), {}, rng::mix(seed, kOutcomeStream + static_cast<std::uint64_t>(t)));
    std::vector<family> fams(q, family::gaussian);
    std::vector<cv_result> cvs;
    try {
      cvs = cross_validate_post_lasso(x_sub, ys, fams, penalized, forced, fa, ctrl, threads);
    } catch (const numeric_error& e) {
      throw numeric_error("outcome models, group " + level_tag(data, t) + ": " +
                          std::string(e.what()));
    }
    for (int qi = 0; qi < q; ++qi) {
      const cv_selection sel = select_lambda(cvs[qi], rule);
      model_info info;
      info.name = "outcome[" + data.outcome_names[qi] + "][" + level_tag(data, t) + "]";
      info.lambda = sel.lambda;
      info.cv_index = sel.index;
      info.active = cvs[qi].reference_path[sel.index].active;
      try {
        info.fit = post_lasso_refit(x_sub, ys[qi], family::gaussian, info.active, forced, ctrl);
      } catch (const numeric_error& e) {
        throw numeric_error(info.name + ": " + e.what());
      }
      nu.outcome_pred[qi].col(t) = predict(info.fit, design.x);
      nu.outcome_models[qi][t] = std::move(info);
      nu.outcome_cv[qi][t] = std::move(cvs[qi]);
    }
  }
  return nu;
}

trim_rule parse_trim(const std::string& text) {
  trim_rule rule;
  if (text == "minmax") {
    rule.kind = trim_kind::minmax;
    return rule;
  }
  if (text == "none") {
    rule.kind = trim_kind::none;
    return rule;
  }
  if (text.rfind("percentile:", 0) == 0) {
    rule.kind = trim_kind::percentile;
    const std::string num = text.substr(11);
    char* end = nullptr;
    rule.pct = std::strtod(num.c_str(), &end);
    if (num.empty() || end != num.c_str() + num.size() || !(rule.pct >= 0.0) ||
        !(rule.pct < 50.0)) {
      throw config_error("trim: percentile must be a number in [0, 50), got '" + num + "'");
    }
    return rule;
  }
  throw config_error("unknown trim rule '" + text + "' (expected minmax, percentile:P, none)");
}

std::string trim_name(const trim_rule& rule) {
  switch (rule.kind) {
    case trim_kind::minmax: return "minmax";
    case trim_kind::none: return "none";
    case trim_kind::percentile: {
      char buf[40];
      std::snprintf(buf, sizeof buf, "percentile:%g", rule.pct);
      return buf;
    }
  }
  return "minmax";
}

double quantile_type7(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw numeric_error("quantile of an empty sequence");
  if (sorted.size() == 1) return sorted[0];
  const double h = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

trim_report trim_common_support(const Eigen::MatrixXd& propensity, const std::vector<int>& d,
                                const trim_rule& rule) {
  const int n = static_cast<int>(propensity.rows());
  const int levels = static_cast<int>(propensity.cols());
  if (static_cast<int>(d.size()) != n) {
    throw config_error("trim: treatment vector does not match the propensity matrix");
  }
  trim_report rep;
  rep.rule = rule;
  rep.kept.assign(n, 1);
  rep.thresholds.resize(levels, 2);
  rep.thresholds.col(0).setZero();
  rep.thresholds.col(1).setOnes();

  if (rule.kind != trim_kind::none) {
    for (int t = 0; t < levels; ++t) {
      double lower = 0.0, upper = 1.0;
      bool first = true;
      for (int g = 0; g < levels; ++g) {
        std::vector<double> vals;
        for (int i = 0; i < n; ++i) {
          if (d[i] == g) vals.push_back(propensity(i, t));
        }
        if (vals.empty()) throw data_error("trim: empty treatment group");
        std::sort(vals.begin(), vals.end());
        double lo, hi;
        if (rule.kind == trim_kind::minmax) {
          lo = vals.front();
          hi = vals.back();
        } else {
          lo = quantile_type7(vals, rule.pct / 100.0);
          hi = quantile_type7(vals, 1.0 - rule.pct / 100.0);
        }
        if (first) {
          lower = lo;
          upper = hi;
          first = false;
        } else {
          lower = std::max(lower, lo);
          upper = std::min(upper, hi);
        }
      }
      rep.thresholds(t, 0) = lower;
      rep.thresholds(t, 1) = upper;
    }
    for (int i = 0; i < n; ++i) {
      for (int t = 0; t < levels; ++t) {
        const double p = propensity(i, t);
        if (p < rep.thresholds(t, 0) || p > rep.thresholds(t, 1)) {
          rep.kept[i] = 0;
          break;
        }
      }
    }
  }
  for (int i = 0; i < n; ++i) rep.kept_count += rep.kept[i] ? 1 : 0;
  rep.dropped_count = n - rep.kept_count;
  if (rep.kept_count == 0) throw numeric_error("trim: every unit fell outside the common support");
  return rep;
}

score_vector potential_outcome(const Eigen::VectorXd& y, const std::vector<char>& d_t,
                               const Eigen::VectorXd& mu_t, const Eigen::VectorXd& p_t) {
  const Eigen::Index n = y.size();
  if (static_cast<Eigen::Index>(d_t.size()) != n || mu_t.size() != n || p_t.size() != n) {
    throw config_error("score: input lengths disagree");
  }
  if (n == 0) throw config_error("score: empty sample");
  score_vector s;
  s.psi.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = mu_t[i];
    if (d_t[static_cast<std::size_t>(i)]) {
      if (!(p_t[i] > 0.0)) {
        throw numeric_error("score: non-positive propensity for a treated unit");
      }
      v += (y[i] - mu_t[i]) / p_t[i];
    }
    s.psi[i] = v;
  }
  s.mu_hat = s.psi.mean();
  return s;
}

double iid_variance(const score_vector& score) {
  return (score.psi.array() - score.mu_hat).square().sum() /
         static_cast<double>(score.psi.size());
}

pair_effect pairwise_effect(const score_vector& score_m, const score_vector& score_k) {
  if (score_m.psi.size() != score_k.psi.size()) {
    throw config_error("effect: score lengths disagree");
  }
  pair_effect e;
  e.gamma = score_m.mu_hat - score_k.mu_hat;
  e.var_iid = (score_m.psi.array() - score_k.psi.array() - e.gamma).square().sum() /
              static_cast<double>(score_m.psi.size());
  return e;
}

double clustered_variance(const Eigen::VectorXd& psi, double center,
                          const std::vector<int>& cluster) {
  const Eigen::Index n = psi.size();
  if (static_cast<Eigen::Index>(cluster.size()) != n) {
    throw config_error("clustered variance: cluster ids do not match the score length");
  }
  // Cluster sums accumulate in first-appearance order, so singleton clusters
  // reproduce the iid sum term for term.
  std::map<int, int> slot_of;
  std::vector<double> sums;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto [it, fresh] = slot_of.try_emplace(cluster[static_cast<std::size_t>(i)],
                                           static_cast<int>(sums.size()));
    if (fresh) sums.push_back(0.0);
    sums[static_cast<std::size_t>(it->second)] += psi[i] - center;
  }
  double acc = 0.0;
  for (double s : sums) acc += s * s;
  return acc / static_cast<double>(n);
}

namespace {

double two_sided_p(double estimate, double se) {
  if (!(se > 0.0)) return estimate == 0.0 ? 1.0 : 0.0;
  const double z = std::fabs(estimate / se);
  return std::erfc(z / std::sqrt(2.0));
}

std::string star_string(double p) {
  if (p < 0.01) return "***";
  if (p < 0.05) return "**";
  if (p < 0.1) return "*";
  return "";
}

}  // namespace

effect_table build_effect_table(const dataset& data, const nuisance_set& nu,
                                const trim_report& trim) {
  const int n = data.n();
  const int levels = data.levels();
  const int q = static_cast<int>(data.y.cols());

  effect_table table;
  for (int i = 0; i < n; ++i) {
    if (trim.kept[i]) table.kept_rows.push_back(i);
  }
  const int nk = static_cast<int>(table.kept_rows.size());
  table.n_used = nk;

  std::vector<int> cluster_kept(nk);
  for (int i = 0; i < nk; ++i) cluster_kept[i] = data.cluster[table.kept_rows[i]];

  table.scores.assign(q, std::vector<score_vector>(levels));
  for (int qi = 0; qi < q; ++qi) {
    Eigen::VectorXd y(nk);
    for (int i = 0; i < nk; ++i) y[i] = data.y(table.kept_rows[i], qi);
    for (int t = 0; t < levels; ++t) {
      std::vector<char> ind(nk);
      Eigen::VectorXd mu(nk), p(nk);
      for (int i = 0; i < nk; ++i) {
        const int row = table.kept_rows[i];
        ind[i] = data.d[row] == t ? 1 : 0;
        mu[i] = nu.outcome_pred[qi](row, t);
        p[i] = nu.propensity(row, t);
      }
      table.scores[qi][t] = potential_outcome(y, ind, mu, p);
    }

    for (int t = 0; t < levels; ++t) {
      const score_vector& s = table.scores[qi][t];
      effect_row row;
      row.outcome = data.outcome_names[qi];
      row.contrast = "mu_" + data.level_labels[t];
      row.estimate = s.mu_hat;
      row.se_iid = std::sqrt(iid_variance(s) / nk);
      row.se_clustered =
          std::sqrt(clustered_variance(s.psi, s.mu_hat, cluster_kept) / nk);
      row.p_value = two_sided_p(row.estimate, row.se_clustered);
      row.stars = star_string(row.p_value);
      row.n_used = nk;
      table.rows.push_back(std::move(row));
    }
    for (int m = 1; m < levels; ++m) {
      for (int k = 0; k < m; ++k) {
        const pair_effect e = pairwise_effect(table.scores[qi][m], table.scores[qi][k]);
        const Eigen::VectorXd diff = table.scores[qi][m].psi - table.scores[qi][k].psi;
        effect_row row;
        row.outcome = data.outcome_names[qi];
        row.contrast = data.level_labels[m] + "-" + data.level_labels[k];
        row.estimate = e.gamma;
        row.se_iid = std::sqrt(e.var_iid / nk);
        row.se_clustered =
            std::sqrt(clustered_variance(diff, e.gamma, cluster_kept) / nk);
        row.p_value = two_sided_p(row.estimate, row.se_clustered);
        row.stars = star_string(row.p_value);
        row.n_used = nk;
        table.rows.push_back(std::move(row));
      }
    }
  }
  return table;
}

}  // namespace dmlkit
