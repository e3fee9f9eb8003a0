#include "dmlkit/lasso.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "dmlkit/errors.hpp"
#include "lasso_internal.hpp"

#ifdef DMLKIT_FINISH_TRACE
#include <cstdio>
#endif

namespace dmlkit {
namespace detail {

namespace {

constexpr double kSdFloor = 1e-10;      // relative; below this a column is unusable
constexpr double kEtaGuard = 30.0;      // |linear index| beyond which logistic fits are suspect

double soft_threshold(double z, double lambda) {
  if (z > lambda) return z - lambda;
  if (z < -lambda) return z + lambda;
  return 0.0;
}

double sigmoid(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

// Stable log(1 + exp(eta)).
double log1p_exp(double eta) {
  return eta > 30.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

}  // namespace

column_stats::column_stats(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows(), p = x.cols();
  mean.resize(p);
  sd.resize(p);
  inv_sd.setZero(p);
  usable.assign(static_cast<std::size_t>(p), 0);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double m = x.col(j).mean();
    const double var = (x.col(j).array() - m).square().sum() / static_cast<double>(n);
    mean[j] = m;
    sd[j] = std::sqrt(std::max(var, 0.0));
    if (sd[j] > kSdFloor * std::max(1.0, std::fabs(m))) {
      inv_sd[j] = 1.0 / sd[j];
      usable[static_cast<std::size_t>(j)] = 1;
    } else {
      sd[j] = 0.0;
    }
  }
}

gram_cache::gram_cache(const Eigen::MatrixXd& x) : x_(&x) {
  colsum = x.colwise().sum();
  n = static_cast<double>(x.rows());
  cols_.resize(static_cast<std::size_t>(x.cols()));
  have_.assign(static_cast<std::size_t>(x.cols()), 0);
}

const Eigen::VectorXd& gram_cache::col(int j) const {
  auto& slot = cols_[static_cast<std::size_t>(j)];
  if (!have_[static_cast<std::size_t>(j)]) {
    slot = x_->transpose() * x_->col(j);
    have_[static_cast<std::size_t>(j)] = 1;
  }
  return slot;
}

path_solver::path_solver(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                         const std::vector<char>& penalized, const lasso_control& ctrl,
                         const gram_cache& gram, const column_stats& stats)
    : x_(x), y_(y), fam_(fam), penalized_(penalized), ctrl_(ctrl), gram_(gram), st_(stats) {
  n_ = static_cast<int>(x.rows());
  p_ = static_cast<int>(x.cols());
  if (static_cast<int>(penalized.size()) != p_) {
    throw config_error("lasso: penalized flag vector does not match design width");
  }
  beta_std_.setZero(p_);
  in_working_.assign(p_, 0);
  for (int j = 0; j < p_; ++j) {
    if (!penalized_[j] && st_.usable[j]) insert_sorted(j);
  }
  ybar_ = y_.mean();
  if (fam_ == family::gaussian) {
    // q_j = <x~_j, y - ybar>/n, from the raw cross products.
    const Eigen::VectorXd xty = x_.transpose() * y_;
    q_.setZero(p_);
    for (int j = 0; j < p_; ++j) {
      if (st_.usable[j]) q_[j] = st_.inv_sd[j] * (xty[j] / gram_.n - st_.mean[j] * ybar_);
    }
    c_ = q_;
    b0_ = 0.0;  // centered problem; the intercept is recovered at emission
    u_ = st_.mean.cwiseProduct(st_.inv_sd);
    acol_.resize(static_cast<std::size_t>(p_));
    have_acol_.assign(static_cast<std::size_t>(p_), 0);
  } else {
    if (ybar_ <= 0.0 || ybar_ >= 1.0) {
      throw numeric_error("lasso: degenerate binomial response (single class)");
    }
    b0_ = std::log(ybar_ / (1.0 - ybar_));
    eta_ = Eigen::VectorXd::Constant(n_, b0_);
  }
}

void path_solver::insert_sorted(int j) {
  working_.insert(std::lower_bound(working_.begin(), working_.end(), j), j);
  in_working_[j] = 1;
}

// A~_kj = <x~_k, x~_j>/n = G_kj/(n s_k s_j) - u_k u_j, zero on unusable rows.
const Eigen::VectorXd& path_solver::acol(int j) {
  auto& slot = acol_[static_cast<std::size_t>(j)];
  if (!have_acol_[static_cast<std::size_t>(j)]) {
    slot = (st_.inv_sd[j] / gram_.n) * gram_.col(j).cwiseProduct(st_.inv_sd) - u_[j] * u_;
    have_acol_[static_cast<std::size_t>(j)] = 1;
  }
  return slot;
}

void path_solver::rebuild_compressed() {
  const int m = static_cast<int>(working_.size());
  acw_.resize(m, m);
  cw_.resize(m);
  bw_.resize(m);
  pmask_.resize(m);
  for (int i = 0; i < m; ++i) {
    const int j = working_[i];
    const Eigen::VectorXd& aj = acol(j);
    for (int r = 0; r < m; ++r) acw_(r, i) = aj[working_[r]];
    cw_[i] = c_[j];
    bw_[i] = beta_std_[j];
    pmask_[i] = penalized_[j] ? 1.0 : 0.0;
  }
}

void path_solver::sync_full_gradient() {
  c_ = q_;
  for (std::size_t i = 0; i < working_.size(); ++i) {
    const int j = working_[i];
    if (beta_std_[j] != 0.0) c_ -= beta_std_[j] * acol(j);
  }
  // Working entries keep the exactly-maintained values from the sweeps.
  for (std::size_t i = 0; i < working_.size(); ++i) c_[working_[i]] = cw_[i];
}

// One pass of covariance-update descent over the working set, against the
// compressed gradient mirror.
void path_solver::sweep_gaussian(double lambda, double& max_delta) {
  max_delta = 0.0;
  const int m = static_cast<int>(working_.size());
  for (int i = 0; i < m; ++i) {
    const int j = working_[i];
    const double z = cw_[i] + bw_[i];
    const double target = penalized_[j] ? soft_threshold(z, lambda) : z;
    const double delta = target - bw_[i];
    if (delta == 0.0) continue;
    beta_std_[j] = target;
    bw_[i] = target;
    max_delta = std::max(max_delta, std::fabs(delta));
    cw_ -= delta * acw_.col(i);
#ifdef DMLKIT_FINISH_TRACE
    ++moves_;
#endif
  }
}

// Roughly the cost of two cyclic passes, spent on the worst violations
// instead: each scan ranks every member's candidate move and applies the top
// block, largest first, recomputing each move against the live gradient.
// Cyclic descent inches when the active set is nearly singular;
// steepest-coordinate updates keep contracting there.
void path_solver::greedy_pass(double lambda, double& max_delta) {
  max_delta = 0.0;
  const int m = static_cast<int>(working_.size());
  constexpr int kBlock = 8;
  std::array<int, kBlock> top{};
  for (int done = 0; done < m; done += kBlock) {
    zscr_ = cw_.array() + bw_.array();
    dscr_ = zscr_.sign() * (zscr_.abs() - lambda * pmask_).max(0.0) - bw_.array();
    const int take = std::min(kBlock, m);
    for (int t = 0; t < take; ++t) top[static_cast<std::size_t>(t)] = t;
    auto worse = [&](int a, int b) {
      const double da = std::fabs(dscr_[a]), db = std::fabs(dscr_[b]);
      return da != db ? da > db : a < b;
    };
    std::make_heap(top.begin(), top.begin() + take, worse);
    for (int i = take; i < m; ++i) {
      if (worse(i, top[0])) {
        std::pop_heap(top.begin(), top.begin() + take, worse);
        top[static_cast<std::size_t>(take) - 1] = i;
        std::push_heap(top.begin(), top.begin() + take, worse);
      }
    }
    std::sort(top.begin(), top.begin() + take, worse);
    if (std::fabs(dscr_[top[0]]) < ctrl_.tol) {  // nothing left above tolerance
      max_delta = std::max(max_delta, std::fabs(dscr_[top[0]]));
      return;
    }
    for (int t = 0; t < take; ++t) {
      const int i = top[static_cast<std::size_t>(t)];
      // Earlier block members moved the gradient; redo this move against it.
      const double z = cw_[i] + bw_[i];
      const double target = pmask_[i] != 0.0 ? soft_threshold(z, lambda) : z;
      const double d = target - bw_[i];
      if (d == 0.0) continue;
      beta_std_[working_[i]] = target;
      bw_[i] = target;
      max_delta = std::max(max_delta, std::fabs(d));
      cw_ -= d * acw_.col(i);
#ifdef DMLKIT_FINISH_TRACE
      ++moves_;
#endif
    }
  }
}

bool path_solver::grow_working_set_gaussian(double lambda) {
  bool grew = false;
  for (int j = 0; j < p_; ++j) {
    if (in_working_[j] || !penalized_[j] || !st_.usable[j]) continue;
    if (std::fabs(c_[j]) > lambda + kViolationSlack) {
      insert_sorted(j);
      grew = true;
    }
  }
  return grew;
}

// Attempts to land the current grid point directly, starting from the sign
// pattern of the iterate: solve the stationarity system
// A~_SS beta_S = q_S - lambda*sign_S, then repair the pattern — members
// whose solved sign disagrees leave, outside columns whose gradient breaks
// the penalty bound enter with the gradient's sign — and re-solve until a
// candidate passes the full KKT screen. Acceptance is always verified, so a
// wrong pattern only costs time, never correctness; on failure the iterate
// is left untouched.
bool path_solver::finish_gaussian(double lambda) {
  // Viable patterns settle within a few repair rounds; a pattern still
  // churning after that is in the degenerate regime and never lands.
  constexpr int kPatternRounds = 8;
  constexpr double kStationaritySlack = 1e-9;
#ifdef DMLKIT_FINISH_TRACE
  struct tracer {
    double lambda = 0; int m0 = 0, rounds = 0; const char* outcome = "rounds";
    double resid = 0;
    ~tracer() {
      std::fprintf(stderr, "  finish lam=%g m0=%d rounds=%d out=%s resid=%g\n",
                   lambda, m0, rounds, outcome, resid);
    }
  } trace_;
  trace_.lambda = lambda;
#define FIN_RET(val, why) do { trace_.outcome = (why); return (val); } while (0)
#else
#define FIN_RET(val, why) return (val)
#endif
  std::vector<int> s;
  std::vector<double> sg;  // +1/-1 for penalized members, 0 for unpenalized
  std::vector<char> in_s(static_cast<std::size_t>(p_), 0);
  for (int j : working_) {
    if (!penalized_[j]) {
      s.push_back(j);
      sg.push_back(0.0);
      in_s[static_cast<std::size_t>(j)] = 1;
    } else if (beta_std_[j] != 0.0) {
      s.push_back(j);
      sg.push_back(beta_std_[j] > 0.0 ? 1.0 : -1.0);
      in_s[static_cast<std::size_t>(j)] = 1;
    }
  }
  if (s.empty()) FIN_RET(false, "empty");  // plain sweeps handle an empty pattern instantly

#ifdef DMLKIT_FINISH_TRACE
  trace_.m0 = static_cast<int>(s.size());
#endif
  for (int round = 0; round < kPatternRounds; ++round) {
#ifdef DMLKIT_FINISH_TRACE
    trace_.rounds = round + 1;
#endif
    const int m = static_cast<int>(s.size());
    if (m == 0) FIN_RET(false, "empty2");
    Eigen::MatrixXd a(m, m);
    Eigen::VectorXd rhs(m);
    for (int kk = 0; kk < m; ++kk) {
      const Eigen::VectorXd& ak = acol(s[kk]);
      for (int rr = 0; rr < m; ++rr) a(rr, kk) = ak[s[rr]];
      rhs[kk] = q_[s[kk]] - lambda * sg[kk];
    }
    // Near the interpolation boundary the system goes rank-deficient and no
    // sign pattern solves it exactly; bail to plain sweeps in that regime.
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success) FIN_RET(false, "ldlt");
    Eigen::VectorXd bs = ldlt.solve(rhs);
    bs += ldlt.solve(rhs - a * bs);  // one refinement step
    if (!bs.allFinite()) FIN_RET(false, "nan");

    // Members whose solved coefficient crossed zero leave the pattern.
    std::vector<int> s2;
    std::vector<double> sg2;
    Eigen::VectorXd bs2(m);
    int m2 = 0;
    for (int kk = 0; kk < m; ++kk) {
      if (sg[kk] != 0.0 && (bs[kk] == 0.0 || (bs[kk] > 0.0) != (sg[kk] > 0.0))) {
        in_s[static_cast<std::size_t>(s[kk])] = 0;
        continue;
      }
      s2.push_back(s[kk]);
      sg2.push_back(sg[kk]);
      bs2[m2++] = bs[kk];
    }
    if (m2 < m) {
      s = std::move(s2);
      sg = std::move(sg2);
      continue;
    }

    // Gradient at the candidate; solve-quality and KKT screens.
    Eigen::VectorXd cnew = q_;
    for (int kk = 0; kk < m; ++kk) cnew -= bs[kk] * acol(s[kk]);
    bool ok = true;
    for (int kk = 0; kk < m && ok; ++kk) {
      if (std::fabs(cnew[s[kk]] - lambda * sg[kk]) > kStationaritySlack) ok = false;
#ifdef DMLKIT_FINISH_TRACE
      trace_.resid = std::max(trace_.resid, std::fabs(cnew[s[kk]] - lambda * sg[kk]));
#endif
    }
    if (!ok) FIN_RET(false, "resid");  // the system would not solve cleanly; keep sweeping
    bool grew = false;
    for (int j = 0; j < p_; ++j) {
      if (!penalized_[j] || !st_.usable[j] || in_s[static_cast<std::size_t>(j)]) continue;
      if (std::fabs(cnew[j]) > lambda + kViolationSlack) {
        s.push_back(j);
        sg.push_back(cnew[j] > 0.0 ? 1.0 : -1.0);
        in_s[static_cast<std::size_t>(j)] = 1;
        grew = true;
      }
    }
    if (grew) continue;

    // Verified: install the solution and its exact gradient.
    for (int j : working_) {
      if (penalized_[j] && !in_s[static_cast<std::size_t>(j)]) beta_std_[j] = 0.0;
    }
    for (int kk = 0; kk < m; ++kk) {
      if (!in_working_[s[kk]]) insert_sorted(s[kk]);
      beta_std_[s[kk]] = bs[kk];
    }
    c_ = std::move(cnew);
    FIN_RET(true, "ok");
  }
  FIN_RET(false, "rounds");
}
#undef FIN_RET

void path_solver::solve_gaussian(double lambda, int& sweeps, bool& converged) {
  converged = false;
  int quiet = 0;  // consecutive sweeps below tolerance, guards stale stationarity
  int local = 0;  // sweeps spent on this grid point
  // Escalating milestones for the direct solve, spaced so its cubic cost stays
  // comparable to the sweeps already spent. Points it cannot land (it gives up
  // cleanly on rank-deficient patterns) stop paying for it after a few tries.
  int next_direct = std::max<int>(1, static_cast<int>(working_.size()) / 4);
  int direct_fails = 0;
  rebuild_compressed();
#ifdef DMLKIT_FINISH_TRACE
  {
    int nz = 0;
    for (int j : working_) if (beta_std_[j] != 0.0 || !penalized_[j]) ++nz;
    std::fprintf(stderr, "  enter lam=%g working=%zu nonzero=%d\n", lambda, working_.size(), nz);
  }
  moves_ = 0;
  struct move_report {
    path_solver* self;
    ~move_report() { std::fprintf(stderr, "  moves=%ld\n", self->moves_); }
  } move_report_{this};
#endif
  bool greedy = false;  // add targeted passes once plain cycling proves slow
  // Iterate snapshots for the geometric jump below.
  Eigen::VectorXd snap, step, prev_step;
  bool have_prev_step = false;
  while (sweeps < ctrl_.max_sweeps) {
    double max_delta = 0.0;
    sweep_gaussian(lambda, max_delta);
    ++sweeps;
    ++local;
    if (max_delta < ctrl_.tol) {
      if (++quiet >= 2) {
        sync_full_gradient();
        if (!grow_working_set_gaussian(lambda)) {
          converged = true;
          return;
        }
        rebuild_compressed();
        quiet = 0;
      }
    } else {
      quiet = 0;
      if (local >= next_direct && direct_fails < 8) {
        next_direct *= 2;
        if (finish_gaussian(lambda)) {
          // The direct solve verified stationarity for every column, working
          // or not, so there is nothing left to grow.
          converged = true;
          return;
        }
        ++direct_fails;
        if (direct_fails >= 2) greedy = true;
      }
      if (greedy) {
        // On a nearly singular active set the error decays geometrically
        // along one slow mode, so consecutive per-pass steps line up. Once
        // they do, jump the remaining ratio/(1-ratio) of the way in one move;
        // the gradient mirror gets the matching update, so a bad jump costs a
        // pass and changes nothing downstream (convergence is still decided
        // by the sweeps). Snapshots reset whenever the working set changes.
        if (snap.size() != bw_.size()) {
          snap = bw_;
          have_prev_step = false;
        } else {
          step = bw_ - snap;
          bool jumped = false;
          if (have_prev_step) {
            const double pp = prev_step.squaredNorm();
            const double ss = step.squaredNorm();
            const double sp = step.dot(prev_step);
            if (pp > 0.0 && ss > 0.0 && sp > 0.0) {
              const double ratio = sp / pp;
              const double align = sp * sp / (pp * ss);
              if (ratio > 0.5 && ratio < 0.9999 && align > 0.98) {
                step *= std::min(ratio / (1.0 - ratio), 1000.0);
                bw_ += step;
                for (Eigen::Index i = 0; i < bw_.size(); ++i) {
                  beta_std_[working_[static_cast<std::size_t>(i)]] = bw_[i];
                }
                cw_.noalias() -= acw_ * step;
                have_prev_step = false;
                jumped = true;
              }
            }
          }
          if (!jumped) {
            prev_step = step;
            have_prev_step = true;
          }
          snap = bw_;
        }
      }
    }
  }
  sync_full_gradient();  // budget exhausted: leave c_ consistent regardless
}

bool path_solver::grow_working_set_binomial(double lambda, const Eigen::VectorXd& w,
                                            const Eigen::VectorXd& r, std::vector<int>* added) {
  const Eigen::VectorXd wr = w.cwiseProduct(r);
  const Eigen::VectorXd v = x_.transpose() * wr;
  const double swr = wr.sum();
  bool grew = false;
  for (int j = 0; j < p_; ++j) {
    if (in_working_[j] || !penalized_[j] || !st_.usable[j]) continue;
    const double g = st_.inv_sd[j] * (v[j] - st_.mean[j] * swr) / gram_.n;
    if (std::fabs(g) > lambda + kViolationSlack) {
      insert_sorted(j);
      if (added) added->push_back(j);
      grew = true;
    }
  }
  return grew;
}

// Direct solve of one IRLS quadratic on the current sign pattern: with the
// curvature weights w fixed, the subproblem is a weighted lasso, and its
// stationarity system in (intercept, beta_S) is linear. Solves in the delta
// variables against the maintained working residual r, verifies signs and
// the quadratic's KKT conditions over the whole working set, and on success
// applies the deltas to the iterate and to r.
bool path_solver::finish_binomial_quadratic(double lambda, const Eigen::VectorXd& w,
                                            Eigen::VectorXd& r, double sw) {
  std::vector<int> s;
  for (int j : working_) {
    if (!penalized_[j] || beta_std_[j] != 0.0) s.push_back(j);
  }
  const int m = static_cast<int>(s.size());
  // Past this size the weighted system costs more to assemble than the
  // sweeps it would replace.
  if (m > 150) return false;

  // Standardized candidate columns and the weighted moments of the system
  //   [sw/n, wx'; wx, B] [d0; d] = [<w,r>/n; cw_S - lambda*sign_S].
  Eigen::MatrixXd xs(n_, m);
  for (int kk = 0; kk < m; ++kk) {
    const int j = s[kk];
    xs.col(kk) = st_.inv_sd[j] * (x_.col(j).array() - st_.mean[j]);
  }
  Eigen::MatrixXd xw = w.asDiagonal() * xs;
  Eigen::MatrixXd sys(m + 1, m + 1);
  sys(0, 0) = sw / gram_.n;
  if (m > 0) {
    sys.block(0, 1, 1, m) = xw.colwise().sum() / gram_.n;
    sys.block(1, 0, m, 1) = sys.block(0, 1, 1, m).transpose();
    sys.block(1, 1, m, m) = xs.transpose() * xw / gram_.n;
  }
  Eigen::VectorXd rhs(m + 1);
  rhs[0] = w.dot(r) / gram_.n;
  for (int kk = 0; kk < m; ++kk) {
    rhs[kk + 1] = xw.col(kk).dot(r) / gram_.n;
    if (penalized_[s[kk]]) rhs[kk + 1] -= beta_std_[s[kk]] > 0.0 ? lambda : -lambda;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(sys);
  if (ldlt.info() != Eigen::Success) return false;
  Eigen::VectorXd d = ldlt.solve(rhs);
  d += ldlt.solve(rhs - sys * d);  // one refinement step
  if (!d.allFinite()) return false;

  for (int kk = 0; kk < m; ++kk) {
    const int j = s[kk];
    if (!penalized_[j]) continue;
    const double nb = beta_std_[j] + d[kk + 1];
    if (nb == 0.0 || (nb > 0.0) != (beta_std_[j] > 0.0)) return false;
  }

  // Residual after the jump, then the KKT screen for the working set (the
  // caller's growth pass covers everything outside it).
  Eigen::VectorXd r_new = r;
  r_new.array() -= d[0];
  if (m > 0) r_new -= xs * d.tail(m);
  constexpr double kStationaritySlack = 1e-9;
  if (std::fabs(w.dot(r_new) / gram_.n) > kStationaritySlack) return false;
  std::vector<char> in_s(static_cast<std::size_t>(p_), 0);
  for (int j : s) in_s[static_cast<std::size_t>(j)] = 1;
  const Eigen::VectorXd wr = w.cwiseProduct(r_new);
  const double swr = wr.sum();
  for (int j : working_) {
    const double g = st_.inv_sd[j] * (x_.col(j).dot(wr) - st_.mean[j] * swr) / gram_.n;
    if (in_s[static_cast<std::size_t>(j)]) {
      const double target = penalized_[j] ? (beta_std_[j] > 0.0 ? lambda : -lambda) : 0.0;
      if (std::fabs(g - target) > kStationaritySlack) return false;
    } else if (std::fabs(g) > lambda + kViolationSlack) {
      return false;
    }
  }

  b0_ += d[0];
  for (int kk = 0; kk < m; ++kk) beta_std_[s[kk]] += d[kk + 1];
  r = std::move(r_new);
  return true;
}

void path_solver::solve_binomial(double lambda, int& sweeps, bool& converged) {
  converged = false;
  // Refresh the linear index from the coefficients to stop incremental drift
  // across grid points.
  eta_.setConstant(b0_);
  for (int j : working_) {
    if (beta_std_[j] != 0.0) {
      eta_.array() += beta_std_[j] * st_.inv_sd[j] * (x_.col(j).array() - st_.mean[j]);
    }
  }

  Eigen::VectorXd w(n_), r(n_), a(p_);
  for (int outer = 0; outer < ctrl_.irls_max; ++outer) {
    // Quadratic approximation at the current index. The probability clip
    // applies to the curvature weights only; the residual numerator keeps
    // the exact probability so a zero-step fixed point solves the true score
    // equations, not a clipped surrogate.
    for (int i = 0; i < n_; ++i) {
      const double p = sigmoid(eta_[i]);
      const double pc = std::min(std::max(p, ctrl_.prob_clip), 1.0 - ctrl_.prob_clip);
      w[i] = pc * (1.0 - pc);
      r[i] = (y_[i] - p) / w[i];
    }
    const Eigen::VectorXd eta_start = eta_;
    const Eigen::VectorXd r_start = r;
    const double sw = w.sum();

    auto curvature = [&](int j) {
      const double acc = (x_.col(j).array() - st_.mean[j]).square().matrix().dot(w);
      return acc * st_.inv_sd[j] * st_.inv_sd[j] / gram_.n;
    };
    for (int j : working_) a[j] = curvature(j);

    const Eigen::VectorXd beta_outer = beta_std_;
    const double b0_outer = b0_;
    // Each quadratic is solved an order tighter than the outer test, so the
    // outer change measures genuine IRLS movement rather than the inner
    // loop's truncation noise.
    const double tol_inner = 0.1 * ctrl_.tol;
    bool inner_done = false;
    int quiet = 0;
    int local = 0;
    int next_direct = 8;
    while (sweeps < ctrl_.max_sweeps) {
      double max_delta = 0.0;
      const double d0 = w.dot(r) / sw;
      if (d0 != 0.0) {
        b0_ += d0;
        r.array() -= d0;
        max_delta = std::fabs(d0);
      }
      for (int j : working_) {
        if (a[j] <= 0.0) continue;
        const double m = st_.mean[j];
        double grad = ((x_.col(j).array() - m) * w.array() * r.array()).sum();
        grad = grad * st_.inv_sd[j] / gram_.n + a[j] * beta_std_[j];
        const double target =
            (penalized_[j] ? soft_threshold(grad, lambda) : grad) / a[j];
        const double delta = target - beta_std_[j];
        if (delta == 0.0) continue;
        beta_std_[j] = target;
        max_delta = std::max(max_delta, std::fabs(delta));
        r.array() -= delta * st_.inv_sd[j] * (x_.col(j).array() - m);
      }
      ++sweeps;
      ++local;
      bool stationary = false;
      if (max_delta < tol_inner) {
        stationary = ++quiet >= 2;
      } else {
        quiet = 0;
        if (local >= next_direct) {
          next_direct *= 2;
          stationary = finish_binomial_quadratic(lambda, w, r, sw);
        }
      }
      if (!stationary) continue;
      std::vector<int> grown;
      if (!grow_working_set_binomial(lambda, w, r, &grown)) {
        inner_done = true;
        break;
      }
      // The weights have not changed, so only the new members need curvature.
      for (int j : grown) a[j] = curvature(j);
      quiet = 0;
    }
    eta_ = eta_start + (r_start - r);
    if (eta_.lpNorm<Eigen::Infinity>() > kEtaGuard) {
      // The index is running away: this penalty separates the sample, the
      // likelihood is flat from here on. The path ends at the previous point.
      saturated_ = true;
      return;
    }
    if (!inner_done) return;  // sweep budget exhausted

    double outer_change = std::fabs(b0_ - b0_outer);
    for (int j : working_) {
      outer_change = std::max(outer_change, std::fabs(beta_std_[j] - beta_outer[j]));
    }
    if (outer_change < ctrl_.tol) {
      converged = true;
      return;
    }
  }
}

double path_solver::lambda_max() {
  bool has_penalized = false;
  for (int j = 0; j < p_; ++j) {
    if (penalized_[j] && st_.usable[j]) has_penalized = true;
  }
  if (!has_penalized) {
    throw numeric_error("lasso: no usable penalized columns; nothing to build a grid over");
  }
  // Fit the unpenalized block alone (infinite penalty keeps everything else
  // at zero), then read the largest score among penalized columns.
  int sweeps = 0;
  bool converged = false;
  saturated_ = false;
  const double inf = std::numeric_limits<double>::infinity();
  if (fam_ == family::gaussian) {
    solve_gaussian(inf, sweeps, converged);
  } else {
    solve_binomial(inf, sweeps, converged);
  }
  if (saturated_) {
    throw numeric_error("lasso: the unpenalized base fit is separable");
  }
  if (!converged) {
    throw numeric_error("lasso: unpenalized base fit did not converge");
  }
  double lmax = 0.0;
  if (fam_ == family::gaussian) {
    for (int j = 0; j < p_; ++j) {
      if (penalized_[j] && st_.usable[j]) lmax = std::max(lmax, std::fabs(c_[j]));
    }
  } else {
    Eigen::VectorXd resid(n_);
    for (int i = 0; i < n_; ++i) resid[i] = y_[i] - sigmoid(eta_[i]);
    const Eigen::VectorXd v = x_.transpose() * resid;
    const double sr = resid.sum();
    for (int j = 0; j < p_; ++j) {
      if (!penalized_[j] || !st_.usable[j]) continue;
      lmax = std::max(lmax, std::fabs(st_.inv_sd[j] * (v[j] - st_.mean[j] * sr) / gram_.n));
    }
  }
  if (!(lmax > 0.0) || !std::isfinite(lmax)) {
    throw numeric_error("lasso: degenerate response; penalty grid has no positive lambda_max");
  }
  return lmax;
}

path_point path_solver::solve(double lambda) {
  int sweeps = 0;
  bool converged = false;
  saturated_ = false;
  if (fam_ == family::gaussian) {
    solve_gaussian(lambda, sweeps, converged);
  } else {
    solve_binomial(lambda, sweeps, converged);
  }
  path_point pt;
  pt.fit = emit(lambda, sweeps, converged);
  // A path ends where solutions stop being trustworthy: the active cap, a
  // separable logistic subsample, or a quadratic too ill-conditioned for the
  // sweep budget. Emitted fits are always converged.
  pt.truncated =
      static_cast<int>(pt.fit.active.size()) > ctrl_.max_active || saturated_ || !converged;
  return pt;
}

lasso_fit path_solver::emit(double lambda, int sweeps, bool converged) const {
  lasso_fit f;
  f.lambda = lambda;
  f.sweeps = sweeps;
  f.converged = converged;
  f.beta.setZero(p_);
  for (int j : working_) {
    if (beta_std_[j] == 0.0) continue;
    f.beta[j] = beta_std_[j] * st_.inv_sd[j];
    if (penalized_[j]) f.active.push_back(j);
  }
  if (fam_ == family::gaussian) {
    double shift = 0.0;
    for (int j : working_) shift += f.beta[j] * st_.mean[j];
    f.intercept = ybar_ - shift;
  } else {
    double shift = 0.0;
    for (int j : working_) shift += f.beta[j] * st_.mean[j];
    f.intercept = b0_ - shift;
  }
  return f;
}

path_refitter::path_refitter(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                             const std::vector<int>& forced, const lasso_control& ctrl,
                             const gram_cache& gram)
    : x_(x), y_(y), fam_(fam), ctrl_(ctrl), gram_(gram) {
  n_ = static_cast<int>(x.rows());
  forced_ = forced;
  offered_.assign(x.cols(), 0);
  accepted_.assign(x.cols(), 0);
  xty_ = x.transpose() * y;
  ysum_ = y.sum();
  rebuild({});
}

Eigen::VectorXd path_refitter::solve_factor(const Eigen::VectorXd& rhs) const {
  const int m = static_cast<int>(order_.size()) + 1;
  Eigen::VectorXd v = l_.topLeftCorner(m, m).triangularView<Eigen::Lower>().solve(rhs);
  return l_.topLeftCorner(m, m).triangularView<Eigen::Lower>().transpose().solve(v);
}

bool path_refitter::try_append(int col) {
  const int m = static_cast<int>(order_.size()) + 1;  // current factor dimension
  if (l_.rows() < m + 1) {
    Eigen::MatrixXd grown = Eigen::MatrixXd::Zero(std::max(2 * (m + 1), 16), std::max(2 * (m + 1), 16));
    grown.topLeftCorner(l_.rows(), l_.cols()) = l_;
    l_ = std::move(grown);
  }
  const Eigen::VectorXd& gc = gram_.col(col);
  Eigen::VectorXd rhs(m);
  rhs[0] = gram_.colsum[col];
  for (int i = 1; i < m; ++i) rhs[i] = gc[order_[i - 1]];
  const Eigen::VectorXd v =
      l_.topLeftCorner(m, m).triangularView<Eigen::Lower>().solve(rhs);
  const double diag = gc[col];
  const double d = diag - v.squaredNorm();
  if (!(diag > 0.0) || d <= ctrl_.rank_rtol * diag) {
    return false;  // rank-deficient against the columns already in the factor
  }
  l_.block(m, 0, 1, m) = v.transpose();
  l_(m, m) = std::sqrt(d);
  order_.push_back(col);
  accepted_[col] = 1;
  return true;
}

void path_refitter::rebuild(const std::vector<int>& cols) {
  order_.clear();
  std::fill(accepted_.begin(), accepted_.end(), 0);
  std::fill(offered_.begin(), offered_.end(), 0);
  if (l_.rows() < 1) l_ = Eigen::MatrixXd::Zero(16, 16);
  l_(0, 0) = std::sqrt(gram_.n);

  // Replay in first-appearance order so greedy rank drops stay "latest
  // first" with respect to when the path brought each column in.
  std::vector<char> wanted(offered_.size(), 0);
  for (int c : cols) wanted[c] = 1;
  std::vector<int> replay;
  replay.reserve(forced_.size() + cols.size());
  for (int c : forced_) replay.push_back(c);
  for (int c : appearance_) {
    if (wanted[c]) replay.push_back(c);
  }
  for (int c : replay) {
    offered_[c] = 1;
    try_append(c);
  }
  // appearance_ keeps every column ever offered (first offer order).
  for (int c : forced_) {
    if (std::find(appearance_.begin(), appearance_.end(), c) == appearance_.end()) {
      appearance_.push_back(c);
    }
  }
  last_set_.clear();
  have_model_ = false;
}

const refit_model& path_refitter::refit(const std::vector<int>& selected) {
  std::vector<int> target = forced_;
  for (int c : selected) {
    if (!std::count(forced_.begin(), forced_.end(), c)) target.push_back(c);
  }
  if (have_model_ && target == last_set_) return model_;

  // Grow when the new set contains everything currently offered (beyond the
  // forced block); otherwise rebuild without the departed columns.
  std::vector<char> in_target(offered_.size(), 0);
  for (int c : target) in_target[c] = 1;
  bool grow = true;
  for (std::size_t c = 0; c < offered_.size(); ++c) {
    if (offered_[c] && !in_target[c]) {
      grow = false;
      break;
    }
  }
  if (grow) {
    for (int c : target) {
      if (!offered_[c]) {
        offered_[c] = 1;
        appearance_.push_back(c);
        try_append(c);
      }
    }
  } else {
    std::vector<int> keep;
    for (int c : target) {
      if (!std::count(forced_.begin(), forced_.end(), c)) keep.push_back(c);
      if (std::find(appearance_.begin(), appearance_.end(), c) == appearance_.end()) {
        appearance_.push_back(c);
      }
    }
    rebuild(keep);
  }

  if (fam_ == family::gaussian) {
    solve_gaussian();
  } else {
    solve_binomial();
  }
  last_set_ = std::move(target);
  have_model_ = true;
  return model_;
}

void path_refitter::solve_gaussian() {
  const int m = static_cast<int>(order_.size());
  Eigen::VectorXd rhs(m + 1);
  rhs[0] = ysum_;
  for (int i = 0; i < m; ++i) rhs[i + 1] = xty_[order_[i]];
  Eigen::VectorXd beta = solve_factor(rhs);

  // One round of iterative refinement on the normal equations keeps the
  // residual orthogonality tight even for long, correlated paths.
  Eigen::VectorXd resid(m + 1);
  {
    Eigen::VectorXd mb(m + 1);
    mb[0] = gram_.n * beta[0];
    for (int i = 0; i < m; ++i) mb[0] += gram_.colsum[order_[i]] * beta[i + 1];
    for (int r = 0; r < m; ++r) mb[r + 1] = gram_.colsum[order_[r]] * beta[0];
    for (int i = 0; i < m; ++i) {
      const Eigen::VectorXd& gi = gram_.col(order_[i]);
      for (int r = 0; r < m; ++r) mb[r + 1] += gi[order_[r]] * beta[i + 1];
    }
    resid = rhs - mb;
  }
  beta += solve_factor(resid);

  model_.fam = family::gaussian;
  model_.intercept = beta[0];
  model_.coef = beta.tail(m);
  model_.cols = order_;
  model_.ridge_fallback = false;
  model_.iterations = 1;
}

void path_refitter::solve_binomial() {
  const int m = static_cast<int>(order_.size());
  const double dn = gram_.n;

  // The retained columns with a leading intercept, packed once so the eta,
  // gradient, and Hessian updates all run as matrix kernels.
  Eigen::MatrixXd asub(n_, m + 1);
  asub.col(0).setOnes();
  for (int i = 0; i < m; ++i) asub.col(i + 1) = x_.col(order_[i]);

  // Warm start from the previous grid point when the retained sets overlap.
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(m + 1);
  if (have_model_ && model_.fam == family::binomial && !model_.ridge_fallback) {
    for (int i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < model_.cols.size(); ++k) {
        if (model_.cols[k] == order_[i]) {
          beta[i + 1] = model_.coef[static_cast<int>(k)];
          break;
        }
      }
    }
    beta[0] = model_.intercept;
  } else {
    const double pbar = std::min(std::max(y_.mean(), 1e-12), 1.0 - 1e-12);
    beta[0] = std::log(pbar / (1.0 - pbar));
  }

  Eigen::VectorXd eta(n_), prob(n_), w(n_), grad(m + 1);
  Eigen::MatrixXd h(m + 1, m + 1), bw(n_, m + 1);
  auto compute_eta = [&]() { eta.noalias() = asub * beta; };
  auto gradient = [&]() {
    for (int i = 0; i < n_; ++i) prob[i] = sigmoid(eta[i]);
    grad.noalias() = asub.transpose() * (y_ - prob);
    grad /= dn;
  };
  auto objective = [&]() {
    double acc = 0.0;
    for (int i = 0; i < n_; ++i) acc += log1p_exp(eta[i]) - y_[i] * eta[i];
    return acc / dn;
  };
  // Lower triangle only (all downstream factorizations read the lower part).
  auto hessian = [&]() {
    for (int i = 0; i < n_; ++i) w[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-10);
    bw.noalias() = w.cwiseSqrt().asDiagonal() * asub;
    h.setZero();
    h.selfadjointView<Eigen::Lower>().rankUpdate(bw.transpose(), 1.0 / dn);
  };

  bool converged = false;
  int iter = 0;
  compute_eta();
  double obj = objective();
  // The factored Hessian is reused across iterations while the gradient keeps
  // contracting well (chord steps); it is rebuilt the moment progress slows.
  Eigen::LDLT<Eigen::MatrixXd> factor;
  bool have_factor = false;
  double last_ginf = std::numeric_limits<double>::infinity();
  for (; iter < ctrl_.refit_max_iter; ++iter) {
    gradient();
    const double ginf = grad.lpNorm<Eigen::Infinity>();
    if (ginf <= ctrl_.refit_grad_tol) {
      converged = true;
      break;
    }
    bool fresh = false;
    if (!have_factor || ginf > 0.12 * last_ginf) {
      hessian();
      factor.compute(h);
      have_factor = true;
      fresh = true;
    }
    last_ginf = ginf;
    Eigen::VectorXd step = factor.solve(grad);
    // Halve on objective increase (Newton can overshoot near separation).
    double scale = 1.0;
    double obj_try = obj;
    for (int hv = 0; hv < 30; ++hv) {
      const Eigen::VectorXd beta_save = beta;
      beta += scale * step;
      compute_eta();
      obj_try = objective();
      if (obj_try <= obj + 1e-14) break;
      beta = beta_save;
      scale *= 0.5;
      if (hv == 29) {
        compute_eta();
        obj_try = obj;
      }
    }
    if (obj - obj_try < 1e-15 && ginf > ctrl_.refit_grad_tol &&
        eta.lpNorm<Eigen::Infinity>() > kEtaGuard) {
      // Flat likelihood at a huge index means separation — but only a step
      // from a current Hessian is allowed to conclude that.
      if (fresh) break;
      last_ginf = 0.0;  // force a rebuild on the next pass
    }
    obj = obj_try;
  }

  if (!converged) {
    // Ridge fallback: strictly convex, so Newton with halving always lands.
    // The flag marks the model for downstream reporting.
    const double ridge = ctrl_.ridge_fallback;
    beta.setZero();
    const double pbar = std::min(std::max(y_.mean(), 1e-12), 1.0 - 1e-12);
    beta[0] = std::log(pbar / (1.0 - pbar));
    compute_eta();
    auto robjective = [&]() {
      return objective() + 0.5 * ridge * beta.tail(m).squaredNorm();
    };
    double robj = robjective();
    bool rconverged = false;
    for (int it = 0; it < 4 * ctrl_.refit_max_iter; ++it) {
      gradient();
      Eigen::VectorXd rg = -grad;
      rg.tail(m) += ridge * beta.tail(m);
      if (rg.lpNorm<Eigen::Infinity>() <= ctrl_.refit_grad_tol) {
        rconverged = true;
        break;
      }
      hessian();
      h.diagonal().tail(m).array() += ridge;
      Eigen::VectorXd step = h.ldlt().solve(-rg);
      double scale = 1.0;
      for (int hh = 0; hh < 40; ++hh) {
        const Eigen::VectorXd beta_save = beta;
        beta += scale * step;
        compute_eta();
        const double t = robjective();
        if (t <= robj + 1e-14) {
          robj = t;
          break;
        }
        beta = beta_save;
        scale *= 0.5;
        if (hh == 39) compute_eta();
      }
    }
    if (!rconverged) {
      throw numeric_error("post-lasso: logistic refit failed even with ridge fallback");
    }
    model_.ridge_fallback = true;
  } else {
    model_.ridge_fallback = false;
  }

  model_.fam = family::binomial;
  model_.intercept = beta[0];
  model_.coef = beta.tail(m);
  model_.cols = order_;
  model_.iterations = iter + 1;
}

Eigen::MatrixXd hat_matrix(const refit_model& m, const Eigen::MatrixXd& x_train,
                           const Eigen::MatrixXd& x_query) {
  if (m.fam != family::gaussian) {
    throw numeric_error("hat weights are defined for gaussian refits only");
  }
  const int n_tr = static_cast<int>(x_train.rows());
  const int n_q = static_cast<int>(x_query.rows());
  const int k = static_cast<int>(m.cols.size());
  Eigen::MatrixXd a_tr(n_tr, k + 1), a_q(n_q, k + 1);
  a_tr.col(0).setOnes();
  a_q.col(0).setOnes();
  for (int i = 0; i < k; ++i) {
    a_tr.col(i + 1) = x_train.col(m.cols[i]);
    a_q.col(i + 1) = x_query.col(m.cols[i]);
  }
  Eigen::MatrixXd mm = a_tr.transpose() * a_tr;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(mm);
  // H = A_q M^{-1} A_tr'
  return a_q * ldlt.solve(a_tr.transpose());
}

}  // namespace detail

penalty_grid lambda_grid(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                         const std::vector<char>& penalized, const lasso_control& ctrl) {
  if (ctrl.n_lambda < 1) throw config_error("lasso: n_lambda must be positive");
  detail::column_stats st(x);
  detail::gram_cache gram(x);
  detail::path_solver solver(x, y, fam, penalized, ctrl, gram, st);
  const double lmax = solver.lambda_max();

  penalty_grid grid;
  grid.max_active = ctrl.max_active;
  grid.lambda.resize(ctrl.n_lambda);
  const int m = ctrl.n_lambda;
  for (int i = 0; i < m; ++i) {
    const double t = m == 1 ? 0.0 : static_cast<double>(i) / (m - 1);
    grid.lambda[i] = lmax * std::pow(ctrl.lambda_min_ratio, t);
  }
  grid.lambda.front() = lmax;
  if (m > 1) grid.lambda.back() = lmax * ctrl.lambda_min_ratio;

  // Truncate at the first grid point whose solution exceeds the active cap.
  std::vector<double> kept;
  for (double lam : grid.lambda) {
    const detail::path_point pt = solver.solve(lam);
    if (pt.truncated) break;
    kept.push_back(lam);
  }
  grid.lambda = std::move(kept);
  if (grid.lambda.empty()) {
    throw numeric_error("lasso: active cap exceeded at lambda_max; grid is empty");
  }
  return grid;
}

std::vector<lasso_fit> fit_lasso_path(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                      family fam, const penalty_grid& grid,
                                      const std::vector<char>& penalized,
                                      const lasso_control& ctrl) {
  detail::column_stats st(x);
  detail::gram_cache gram(x);
  lasso_control c = ctrl;
  c.max_active = grid.max_active;
  detail::path_solver solver(x, y, fam, penalized, c, gram, st);
  std::vector<lasso_fit> fits;
  fits.reserve(grid.lambda.size());
  for (double lam : grid.lambda) {
    detail::path_point pt = solver.solve(lam);
    if (pt.truncated) break;
    fits.push_back(std::move(pt.fit));
  }
  return fits;
}

refit_model post_lasso_refit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                             const std::vector<int>& selected, const std::vector<int>& forced,
                             const lasso_control& ctrl) {
  const int p = static_cast<int>(x.cols());
  std::vector<char> seen(p, 0);
  std::vector<int> cols;
  for (int j : forced) {
    if (j < 0 || j >= p) throw config_error("refit: forced column index out of range");
    if (!seen[j]) {
      seen[j] = 1;
      cols.push_back(j);
    }
  }
  const int n_forced = static_cast<int>(cols.size());
  for (int j : selected) {
    if (j < 0 || j >= p) throw config_error("refit: selected column index out of range");
    if (!seen[j]) {
      seen[j] = 1;
      cols.push_back(j);
    }
  }

  // Work on the compacted submatrix; indices are remapped back afterwards.
  Eigen::MatrixXd xs(x.rows(), cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) xs.col(static_cast<int>(i)) = x.col(cols[i]);
  detail::gram_cache gram(xs);
  std::vector<int> forced_local(n_forced);
  for (int i = 0; i < n_forced; ++i) forced_local[i] = i;
  std::vector<int> selected_local;
  for (int i = n_forced; i < static_cast<int>(cols.size()); ++i) selected_local.push_back(i);

  detail::path_refitter refitter(xs, y, fam, forced_local, ctrl, gram);
  refit_model m = refitter.refit(selected_local);
  for (auto& c : m.cols) c = cols[c];
  return m;
}

Eigen::VectorXd predict(const refit_model& m, const Eigen::MatrixXd& x) {
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(x.rows(), m.intercept);
  for (std::size_t i = 0; i < m.cols.size(); ++i) {
    eta += m.coef[static_cast<int>(i)] * x.col(m.cols[i]);
  }
  if (m.fam == family::gaussian) return eta;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double p = detail::sigmoid(eta[i]);
    eta[i] = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
  }
  return eta;
}

Eigen::VectorXd hat_weights(const refit_model& m, const Eigen::MatrixXd& x_train,
                            const Eigen::VectorXd& x_query) {
  Eigen::MatrixXd q(1, x_train.cols());
  q.row(0) = x_query.transpose();
  return detail::hat_matrix(m, x_train, q).row(0).transpose();
}

double lasso_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, family fam,
                       const std::vector<char>& penalized, double lambda, double intercept,
                       const Eigen::VectorXd& beta) {
  const double n = static_cast<double>(x.rows());
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(x.rows(), intercept);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (beta[j] != 0.0) eta += beta[j] * x.col(j);
  }
  double loss = 0.0;
  if (fam == family::gaussian) {
    loss = (y - eta).squaredNorm() / (2.0 * n);
  } else {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      loss += detail::log1p_exp(eta[i]) - y[i] * eta[i];
    }
    loss /= n;
  }
  double penalty = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (!penalized[static_cast<std::size_t>(j)] || beta[j] == 0.0) continue;
    const double m = x.col(j).mean();
    const double sd = std::sqrt((x.col(j).array() - m).square().sum() / n);
    penalty += sd * std::fabs(beta[j]);
  }
  return loss + lambda * penalty;
}

}  // namespace dmlkit
