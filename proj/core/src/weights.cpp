#include "dmlkit/weights.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "dmlkit/errors.hpp"
#include "lasso_internal.hpp"

namespace dmlkit {

Eigen::VectorXd ipw_weights(const std::vector<char>& d_t, const Eigen::VectorXd& p_t,
                            int n_norm) {
  const Eigen::Index n = p_t.size();
  if (static_cast<Eigen::Index>(d_t.size()) != n) {
    throw config_error("weights: indicator and propensity lengths disagree");
  }
  if (n_norm <= 0) throw config_error("weights: normalization constant must be positive");
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!d_t[static_cast<std::size_t>(i)]) continue;
    if (!(p_t[i] > 0.0)) throw numeric_error("weights: non-positive propensity");
    w[i] = 1.0 / (static_cast<double>(n_norm) * p_t[i]);
  }
  return w;
}

outcome_weight_parts outcome_weights(const refit_model& fit, const Eigen::MatrixXd& x_group,
                                     const Eigen::MatrixXd& x_query) {
  outcome_weight_parts parts;
  parts.hat = detail::hat_matrix(fit, x_group, x_query);
  parts.w_y = parts.hat.colwise().mean();
  return parts;
}

weight_set dml_weights(const Eigen::VectorXd& w_p_kept, const outcome_weight_parts& parts,
                       const std::vector<int>& group_rows, const std::vector<int>& kept_rows,
                       const Eigen::VectorXd& y_group, double mu_hat) {
  const int nt = static_cast<int>(group_rows.size());
  if (parts.hat.cols() != nt || y_group.size() != nt) {
    throw config_error("weights: group dimensions disagree");
  }
  if (parts.hat.rows() != static_cast<Eigen::Index>(kept_rows.size()) ||
      w_p_kept.size() != static_cast<Eigen::Index>(kept_rows.size())) {
    throw config_error("weights: kept-unit dimensions disagree");
  }

  weight_set ws;
  ws.rows = group_rows;
  ws.w_y = parts.w_y;
  ws.w_py = parts.hat.transpose() * w_p_kept;

  // Map each group member to its kept-sample slot, if it survived trimming.
  ws.w_p = Eigen::VectorXd::Zero(nt);
  {
    std::size_t cursor = 0;
    for (int j = 0; j < nt; ++j) {
      while (cursor < kept_rows.size() && kept_rows[cursor] < group_rows[j]) ++cursor;
      if (cursor < kept_rows.size() && kept_rows[cursor] == group_rows[j]) {
        ws.w_p[j] = w_p_kept[static_cast<Eigen::Index>(cursor)];
      }
    }
  }
  ws.w = ws.w_p + ws.w_y - ws.w_py;
  ws.mu_hat = mu_hat;
  ws.y_dot_w = y_group.dot(ws.w);
  ws.identity_gap = std::fabs(ws.y_dot_w - mu_hat);
  if (ws.identity_gap > 1e-8) {
    throw numeric_error("weights: weighted representation identity violated (gap " +
                        std::to_string(ws.identity_gap) + ")");
  }
  return ws;
}

std::vector<std::vector<weight_set>> build_weight_sets(const dataset& data,
                                                       const design_matrix& design,
                                                       const nuisance_set& nu,
                                                       const effect_table& table) {
  const int levels = data.levels();
  const int q = static_cast<int>(data.y.cols());
  const int nk = table.n_used;

  Eigen::MatrixXd x_kept(nk, design.x.cols());
  for (int i = 0; i < nk; ++i) x_kept.row(i) = design.x.row(table.kept_rows[i]);

  std::vector<std::vector<weight_set>> out(q);
  for (int qi = 0; qi < q; ++qi) {
    out[qi].reserve(levels);
    for (int t = 0; t < levels; ++t) {
      const std::vector<int>& rows = nu.group_rows[t];
      Eigen::MatrixXd x_group(rows.size(), design.x.cols());
      Eigen::VectorXd y_group(rows.size());
      for (std::size_t j = 0; j < rows.size(); ++j) {
        x_group.row(static_cast<Eigen::Index>(j)) = design.x.row(rows[j]);
        y_group[static_cast<Eigen::Index>(j)] = data.y(rows[j], qi);
      }
      std::vector<char> ind(nk);
      Eigen::VectorXd p(nk);
      for (int i = 0; i < nk; ++i) {
        const int row = table.kept_rows[i];
        ind[i] = data.d[row] == t ? 1 : 0;
        p[i] = nu.propensity(row, t);
      }
      const Eigen::VectorXd w_p = ipw_weights(ind, p, nk);
      const outcome_weight_parts parts =
          outcome_weights(nu.outcome_models[qi][t].fit, x_group, x_kept);
      weight_set ws = dml_weights(w_p, parts, rows, table.kept_rows, y_group,
                                  table.scores[qi][t].mu_hat);
      ws.t = t;
      ws.outcome = data.outcome_names[qi];
      out[qi].push_back(std::move(ws));
    }
  }
  return out;
}

sd_convention parse_sd_convention(const std::string& text) {
  if (text == "sum") return sd_convention::sum_pair;
  if (text == "mean") return sd_convention::mean_all;
  throw config_error("unknown sd convention '" + text + "' (expected sum or mean)");
}

std::string sd_convention_name(sd_convention conv) {
  return conv == sd_convention::sum_pair ? "sum" : "mean";
}

balance_summary summarize_balance(const std::vector<double>& abs_sd) {
  balance_summary s;
  if (abs_sd.empty()) return s;
  std::vector<double> sorted = abs_sd;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  s.max = sorted.back();
  double acc = 0.0;
  int g10 = 0, g5 = 0;
  for (double v : sorted) {
    acc += v;
    if (v > 10.0) ++g10;
    if (v > 5.0) ++g5;
  }
  s.mean = acc / n;
  s.median = quantile_type7(sorted, 0.5);
  s.frac_gt10 = g10 / n;
  s.frac_gt5 = g5 / n;
  return s;
}

namespace {

struct group_moments {
  double mean = 0.0;
  double var = 0.0;  // population
};

group_moments column_moments(const Eigen::MatrixXd& x, const std::vector<int>& members, int col) {
  group_moments m;
  const double n = static_cast<double>(members.size());
  for (int i : members) m.mean += x(i, col);
  m.mean /= n;
  for (int i : members) {
    const double d = x(i, col) - m.mean;
    m.var += d * d;
  }
  m.var /= n;
  return m;
}

}  // namespace

balance_report standardized_differences(const Eigen::MatrixXd& x,
                                        const std::vector<std::string>& names,
                                        const std::vector<int>& d,
                                        const std::vector<std::vector<weight_set>>* wsets,
                                        sd_convention conv) {
  const int n = static_cast<int>(x.rows());
  const int cols = static_cast<int>(x.cols());
  if (static_cast<int>(d.size()) != n) {
    throw config_error("balance: group labels do not match the matrix");
  }
  if (static_cast<int>(names.size()) != cols) {
    throw config_error("balance: column names do not match the matrix");
  }
  int levels = 0;
  for (int g : d) levels = std::max(levels, g + 1);

  std::vector<std::vector<int>> members(levels), complements(levels);
  for (int i = 0; i < n; ++i) members[d[i]].push_back(i);
  for (int t = 0; t < levels; ++t) {
    for (int i = 0; i < n; ++i) {
      if (d[i] != t) complements[t].push_back(i);
    }
    if (members[t].empty() || complements[t].empty()) {
      throw data_error("balance: a treatment group or its complement is empty");
    }
  }

  // Weighted means for the "after" pass: each group averaged under its own
  // total weight vector; complements pool the other groups' weighted sums.
  const int q = wsets ? static_cast<int>(wsets->size()) : 0;
  std::vector<Eigen::MatrixXd> wsx(q);  // [qi]: levels x cols weighted sums
  std::vector<Eigen::VectorXd> wsum(q);
  for (int qi = 0; qi < q; ++qi) {
    wsx[qi] = Eigen::MatrixXd::Zero(levels, cols);
    wsum[qi] = Eigen::VectorXd::Zero(levels);
    for (int t = 0; t < levels; ++t) {
      const weight_set& ws = (*wsets)[qi][t];
      for (std::size_t j = 0; j < ws.rows.size(); ++j) {
        const double w = ws.w[static_cast<Eigen::Index>(j)];
        wsum[qi][t] += w;
        for (int c = 0; c < cols; ++c) wsx[qi](t, c) += w * x(ws.rows[j], c);
      }
    }
  }

  balance_report rep;
  rep.convention = conv;
  rep.has_after = wsets != nullptr;
  std::vector<double> abs_before, abs_after;

  for (int c = 0; c < cols; ++c) {
    balance_row row;
    row.column = names[c];

    double mean_all_denom = 0.0;
    std::vector<group_moments> gm(levels);
    for (int t = 0; t < levels; ++t) {
      gm[t] = column_moments(x, members[t], c);
      mean_all_denom += gm[t].var;
    }
    mean_all_denom = std::sqrt(mean_all_denom / static_cast<double>(levels));

    for (int t = 0; t < levels; ++t) {
      const group_moments cm = column_moments(x, complements[t], c);
      const double denom = conv == sd_convention::sum_pair
                               ? std::sqrt(gm[t].var + cm.var)
                               : mean_all_denom;
      double sd = 0.0;
      if (denom > 0.0) {
        sd = 100.0 * (gm[t].mean - cm.mean) / denom;
      } else {
        row.flagged = true;
      }
      row.sd_before = std::max(row.sd_before, std::fabs(sd));

      for (int qi = 0; qi < q; ++qi) {
        double comp_sx = 0.0, comp_sw = 0.0;
        for (int g = 0; g < levels; ++g) {
          if (g == t) continue;
          comp_sx += wsx[qi](g, c);
          comp_sw += wsum[qi][g];
        }
        if (!(wsum[qi][t] != 0.0) || !(comp_sw != 0.0)) {
          row.flagged = true;
          continue;
        }
        const double wmean_t = wsx[qi](t, c) / wsum[qi][t];
        const double wmean_c = comp_sx / comp_sw;
        double sda = 0.0;
        if (denom > 0.0) {
          sda = 100.0 * (wmean_t - wmean_c) / denom;
        } else {
          row.flagged = true;
        }
        row.sd_after_max = std::max(row.sd_after_max, std::fabs(sda));
      }
    }
    abs_before.push_back(row.sd_before);
    if (rep.has_after) abs_after.push_back(row.sd_after_max);
    rep.rows.push_back(std::move(row));
  }
  rep.before = summarize_balance(abs_before);
  if (rep.has_after) rep.after = summarize_balance(abs_after);
  return rep;
}

anatomy_row weight_anatomy(const weight_set& ws) {
  anatomy_row row;
  row.t = ws.t;
  row.outcome = ws.outcome;
  row.group_size = static_cast<int>(ws.rows.size());
  row.identity_gap = ws.identity_gap;

  double pos_sum = 0.0, max_pos = 0.0, min_w = 0.0;
  for (Eigen::Index j = 0; j < ws.w.size(); ++j) {
    const double w = ws.w[j];
    if (w > 0.0) {
      pos_sum += w;
      max_pos = std::max(max_pos, w);
    } else if (w < 0.0) {
      ++row.negative_count;
      min_w = std::min(min_w, w);
    }
  }
  row.positive_sum = pos_sum;
  if (pos_sum > 0.0) {
    row.max_share_pct = 100.0 * max_pos / pos_sum;
    row.most_negative_pct = row.negative_count > 0 ? 100.0 * (-min_w) / pos_sum : 0.0;

    std::vector<double> sorted(ws.w.data(), ws.w.data() + ws.w.size());
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    const std::size_t k = static_cast<std::size_t>(
        std::ceil(0.1 * static_cast<double>(sorted.size())));
    double top = 0.0;
    for (std::size_t j = 0; j < k && j < sorted.size(); ++j) top += sorted[j];
    row.top_decile_share_pct = 100.0 * top / pos_sum;
  }
  return row;
}

Eigen::Matrix4d weight_correlations(const weight_set& ws) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::Matrix4d out = Eigen::Matrix4d::Constant(nan);
  const Eigen::Index n = ws.w.size();
  if (n == 0) return out;
  std::array<const Eigen::VectorXd*, 4> comp = {&ws.w, &ws.w_p, &ws.w_y, &ws.w_py};
  std::array<double, 4> mean{}, sd{};
  for (int a = 0; a < 4; ++a) {
    mean[a] = comp[a]->mean();
    sd[a] = std::sqrt((comp[a]->array() - mean[a]).square().sum() / static_cast<double>(n));
  }
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      if (!(sd[a] > 0.0) || !(sd[b] > 0.0)) continue;
      const double cov = ((comp[a]->array() - mean[a]) * (comp[b]->array() - mean[b])).sum() /
                         static_cast<double>(n);
      out(a, b) = cov / (sd[a] * sd[b]);
    }
  }
  return out;
}

Eigen::Matrix4d average_correlations(const std::vector<Eigen::Matrix4d>& mats) {
  Eigen::Matrix4d sum = Eigen::Matrix4d::Zero();
  Eigen::Matrix4d count = Eigen::Matrix4d::Zero();
  for (const auto& m : mats) {
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        if (std::isfinite(m(a, b))) {
          sum(a, b) += m(a, b);
          count(a, b) += 1.0;
        }
      }
    }
  }
  Eigen::Matrix4d out = Eigen::Matrix4d::Constant(std::numeric_limits<double>::quiet_NaN());
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      if (count(a, b) > 0.0) out(a, b) = sum(a, b) / count(a, b);
    }
  }
  return out;
}

}  // namespace dmlkit
