#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "dmlkit/dataset.hpp"

namespace dmlkit {

enum class column_kind { base, interaction, polynomial };

struct column_meta {
  std::string name;
  column_kind kind = column_kind::base;
  int parent_a = -1;   // base covariate index
  int parent_b = -1;   // second base index (interaction) or degree (polynomial)
  bool penalized = true;
};

// A dropped candidate and why, for the column ledger.
struct dropped_column {
  std::string name;
  column_kind kind;
  std::string stage;    // "cell" | "constant" | "correlation"
  std::string reason;
};

struct design_matrix {
  Eigen::MatrixXd x;                    // n x p, column j described by cols[j]
  std::vector<column_meta> cols;
  std::vector<dropped_column> dropped;  // accumulated across pruning passes
  std::vector<std::string> warnings;

  int p() const { return static_cast<int>(cols.size()); }
  std::vector<int> forced_indices() const;
};

struct expansion_spec {
  bool interactions = true;  // all pairwise products of distinct base columns
  int poly_degree = 4;       // powers 2..poly_degree of continuous base columns
};

// Expands base covariates into candidate controls: base columns first, then
// interactions (i < j in base order), then polynomials per continuous column
// in ascending degree. Names follow "a:b" for products and "a^k" for powers.
design_matrix expand_design(const dataset& ds, const expansion_spec& spec);

// Flags the named columns as unpenalized. Unknown (or already pruned) names
// are a config_error.
void mark_unpenalized(design_matrix& dm, const std::vector<std::string>& names);

// Drops 0/1-valued interaction columns whose nonzero count is below
// min_cell_frac*n or above (1-min_cell_frac)*n, then drops constant columns
// of any provenance. A constant forced column is a data_error.
void prune_cells(design_matrix& dm, double min_cell_frac);

// Greedy correlation pruning in current column order: a column is dropped
// when its absolute Pearson correlation with an already retained column
// exceeds the threshold. Forced columns are never dropped.
void prune_correlated(design_matrix& dm, double threshold);

// Ledger CSV: every candidate (kept or dropped) with provenance, penalty
// flag, status, and drop reason.
void write_column_ledger(const std::string& path, const design_matrix& dm);

}  // namespace dmlkit
