#include "dmlkit/design.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dmlkit/csv.hpp"
#include "dmlkit/errors.hpp"

namespace dmlkit {

namespace {

const char* kind_name(column_kind k) {
  switch (k) {
    case column_kind::base: return "base";
    case column_kind::interaction: return "interaction";
    default: return "polynomial";
  }
}

// Removes the columns flagged in `drop`, preserving order.
void erase_columns(design_matrix& dm, const std::vector<char>& drop) {
  const int p = dm.p();
  int kept = 0;
  for (int j = 0; j < p; ++j) kept += drop[j] ? 0 : 1;
  Eigen::MatrixXd x(dm.x.rows(), kept);
  std::vector<column_meta> cols;
  cols.reserve(kept);
  int w = 0;
  for (int j = 0; j < p; ++j) {
    if (drop[j]) continue;
    x.col(w++) = dm.x.col(j);
    cols.push_back(dm.cols[j]);
  }
  dm.x = std::move(x);
  dm.cols = std::move(cols);
}

bool is_zero_one(const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0 && v[i] != 1.0) return false;
  }
  return true;
}

}  // namespace

std::vector<int> design_matrix::forced_indices() const {
  std::vector<int> out;
  for (int j = 0; j < p(); ++j) {
    if (!cols[j].penalized) out.push_back(j);
  }
  return out;
}

design_matrix expand_design(const dataset& ds, const expansion_spec& spec) {
  const int n = ds.n();
  const int pb = static_cast<int>(ds.covariate_names.size());

  int n_cont = 0;
  for (bool c : ds.continuous_col) n_cont += c ? 1 : 0;
  const int n_poly = spec.poly_degree >= 2 ? n_cont * (spec.poly_degree - 1) : 0;
  const int n_inter = spec.interactions ? pb * (pb - 1) / 2 : 0;

  design_matrix dm;
  dm.x.resize(n, pb + n_inter + n_poly);
  dm.cols.reserve(pb + n_inter + n_poly);

  for (int j = 0; j < pb; ++j) {
    dm.x.col(j) = ds.x.col(j);
    column_meta m;
    m.name = ds.covariate_names[j];
    m.kind = column_kind::base;
    m.parent_a = j;
    m.penalized = !ds.forced_col[j];
    dm.cols.push_back(std::move(m));
  }

  int w = pb;
  if (spec.interactions) {
    for (int a = 0; a < pb; ++a) {
      for (int b = a + 1; b < pb; ++b) {
        dm.x.col(w) = ds.x.col(a).cwiseProduct(ds.x.col(b));
        column_meta m;
        m.name = ds.covariate_names[a] + ":" + ds.covariate_names[b];
        m.kind = column_kind::interaction;
        m.parent_a = a;
        m.parent_b = b;
        dm.cols.push_back(std::move(m));
        ++w;
      }
    }
  }
  for (int j = 0; j < pb; ++j) {
    if (!ds.continuous_col[j]) continue;
    Eigen::VectorXd power = ds.x.col(j);
    for (int deg = 2; deg <= spec.poly_degree; ++deg) {
      power = power.cwiseProduct(ds.x.col(j));
      dm.x.col(w) = power;
      column_meta m;
      m.name = ds.covariate_names[j] + "^" + std::to_string(deg);
      m.kind = column_kind::polynomial;
      m.parent_a = j;
      m.parent_b = deg;
      dm.cols.push_back(std::move(m));
      ++w;
    }
  }
  return dm;
}

void mark_unpenalized(design_matrix& dm, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    bool found = false;
    for (auto& c : dm.cols) {
      if (c.name == name) {
        c.penalized = false;
        found = true;
        break;
      }
    }
    if (!found) {
      throw config_error("design: cannot unpenalize unknown or pruned column '" + name + "'");
    }
  }
}

void prune_cells(design_matrix& dm, double min_cell_frac) {
  const int n = static_cast<int>(dm.x.rows());
  const int p = dm.p();
  std::vector<char> drop(p, 0);

  // Cell rule: only 0/1-valued interaction columns, both tails.
  const double lo = min_cell_frac * n;
  const double hi = (1.0 - min_cell_frac) * n;
  for (int j = 0; j < p; ++j) {
    if (dm.cols[j].kind != column_kind::interaction) continue;
    if (!is_zero_one(dm.x.col(j))) continue;
    const double nz = dm.x.col(j).sum();
    if (nz < lo || nz > hi) {
      drop[j] = 1;
      dm.dropped.push_back({dm.cols[j].name, dm.cols[j].kind, "cell",
                            "nonzero count " + csv::format_number(nz) + " of " +
                                std::to_string(n)});
    }
  }

  // Constant columns of any provenance.
  for (int j = 0; j < p; ++j) {
    if (drop[j]) continue;
    const double first = dm.x(0, j);
    if ((dm.x.col(j).array() == first).all()) {
      if (!dm.cols[j].penalized) {
        throw data_error("design: forced column '" + dm.cols[j].name + "' is constant");
      }
      drop[j] = 1;
      dm.dropped.push_back({dm.cols[j].name, dm.cols[j].kind, "constant",
                            "constant value " + csv::format_number(first)});
    }
  }
  erase_columns(dm, drop);
}

void prune_correlated(design_matrix& dm, double threshold) {
  const int n = static_cast<int>(dm.x.rows());
  const int p = dm.p();
  if (p == 0) return;

  // Standardized columns once, then one rank-update for all pairwise
  // correlations. Pruning itself is a serial scan in column order.
  Eigen::MatrixXd z(n, p);
  for (int j = 0; j < p; ++j) {
    const double m = dm.x.col(j).mean();
    const double ss = (dm.x.col(j).array() - m).matrix().squaredNorm();
    if (ss <= 0.0) {
      throw numeric_error("design: constant column '" + dm.cols[j].name +
                          "' reached correlation pruning");
    }
    z.col(j) = (dm.x.col(j).array() - m) / std::sqrt(ss);
  }
  Eigen::MatrixXd corr(p, p);
  corr.setZero();
  corr.selfadjointView<Eigen::Lower>().rankUpdate(z.transpose());

  std::vector<char> drop(p, 0);
  std::vector<int> retained;
  retained.reserve(p);
  for (int j = 0; j < p; ++j) {
    int hit = -1;
    for (int i : retained) {
      const double c = j > i ? corr(j, i) : corr(i, j);
      if (std::fabs(c) > threshold) {
        hit = i;
        break;
      }
    }
    if (hit >= 0 && dm.cols[j].penalized) {
      drop[j] = 1;
      dm.dropped.push_back({dm.cols[j].name, dm.cols[j].kind, "correlation",
                            "|corr| " + csv::format_number(std::fabs(j > hit ? corr(j, hit)
                                                                             : corr(hit, j))) +
                                " with '" + dm.cols[hit].name + "'"});
    } else {
      if (hit >= 0) {
        dm.warnings.push_back("forced column '" + dm.cols[j].name +
                              "' correlates above threshold with retained '" +
                              dm.cols[hit].name + "' and was kept");
      }
      retained.push_back(j);
    }
  }
  erase_columns(dm, drop);
}

void write_column_ledger(const std::string& path, const design_matrix& dm) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(dm.cols.size() + dm.dropped.size());
  for (const auto& c : dm.cols) {
    rows.push_back({c.name, kind_name(c.kind), c.penalized ? "1" : "0", "kept", ""});
  }
  for (const auto& d : dm.dropped) {
    rows.push_back({d.name, kind_name(d.kind), "", "dropped:" + d.stage, d.reason});
  }
  csv::write_file(path, {"column", "kind", "penalized", "status", "reason"}, rows);
}

}  // namespace dmlkit
