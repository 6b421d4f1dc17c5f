#include "keyforge/decoy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "keyforge/sdpcore.hpp"

namespace keyforge::decoy {

namespace {

[[noreturn]] void out_of_range(const std::string& what) {
  throw Error("OutOfRange", "decoy: " + what);
}

// Widening applied to every observation row. Keeps an interior point when the
// data saturates the model exactly (lossless channel) and absorbs float-level
// inconsistencies in caller-computed gains. Relaxation-only, so certified
// bounds survive.
constexpr double kRowSlack = 1e-11;

struct LpLayout {
  int n_y;  // yield deviations d_0..d_N live at [0, n_y)
  int n_v;  // error yields b_0..b_N follow at [n_y, 2*n_y)
};

// Shared constraint skeleton of both decoy LPs. Formulated in deviation
// variables d_n = 1 - Y_n: near-saturated data (lossless channel) then puts
// the optimum at the nonnegative-cone vertex instead of a box corner, where
// the interior-point iteration is far better behaved. In these variables:
//
//   sum_n p_n(mu_k) d_n  in  [S - Gamma_k, S - Gamma_k + tail_k]
//   sum_n p_n(mu_k) b_n  in  [E_k - tail_k, E_k]      (S = sum_{n<=N} p_n)
//   b_n + d_n <= 1   (b_n <= Y_n),    b_0 + d_0/2 = 1/2   (b_0 = Y_0/2)
//
// The first n_v ranges are unit boxes x_j in [0,1], one per variable in
// order; certified_value below leans on that layout to repair multipliers.
sdp::ConeProgram build_program(const DecoyModel& m, LpLayout& lay) {
  const int N = m.cutoff;
  lay.n_y = N + 1;
  lay.n_v = 2 * (N + 1);

  sdp::ConeProgram p;
  p.blocks.push_back({sdp::BlockDim::Kind::Nonneg, lay.n_v});

  for (int j = 0; j < lay.n_v; ++j) {
    p.ranges.push_back({{{{0, j, j, 1.0}}}, 0.0, 1.0});
  }
  for (int n = 1; n <= N; ++n) {
    p.ranges.push_back(
        {{{{0, lay.n_y + n, lay.n_y + n, 1.0}, {0, n, n, 1.0}}}, 0.0, 1.0});
  }
  // Vacuum clicks are noise: b_0 = Y_0 / 2.
  p.eq.push_back({{{{0, lay.n_y, lay.n_y, 1.0}, {0, 0, 0, 0.5}}}, 0.5});

  for (size_t k = 0; k < m.intensities.size(); ++k) {
    const double mu = m.intensities[k];
    const double tail = poisson_tail(mu, N);
    const double head = 1.0 - tail;
    sdp::LinearOperator gain_row, err_row;
    for (int n = 0; n <= N; ++n) {
      const double pn = poisson_pn(mu, n);
      gain_row.entries.push_back({0, n, n, pn});
      err_row.entries.push_back({0, lay.n_y + n, lay.n_y + n, pn});
    }
    p.ranges.push_back({gain_row, head - m.gains[k] - kRowSlack,
                        head - m.gains[k] + tail + kRowSlack});
    p.ranges.push_back({err_row, m.error_gains[k] - tail - kRowSlack,
                        m.error_gains[k] + kRowSlack});
  }
  return p;
}

// Recomputes the weak-duality bound of the returned multipliers by hand, so
// the certified number does not inherit the interior-point iterate's scaling
// slop. For min c.x s.t. L <= Ax <= U, x >= 0, any aggregate multiplier
// vector v gives the bound sum_i (v_i >= 0 ? L_i : U_i) * v_i provided the
// reduced costs z = c - A^T v stay nonnegative. Negative components are
// repaired through the variable's own unit box row (range j is x_j in [0,1]):
// lowering that row's multiplier by |z_j| restores z_j >= 0 and costs at most
// |z_j| of bound (L = 0 contributes nothing, U = 1 linearly).
double certified_value(const sdp::ConeProgram& p, const sdp::ConeSolution& sol,
                       int n_v) {
  std::vector<double> v(p.ranges.size());
  std::vector<double> z(static_cast<size_t>(n_v), 0.0);
  for (const auto& e : p.objective.entries) z[e.row] += e.val.real();
  for (size_t i = 0; i < p.ranges.size(); ++i) {
    v[i] = sol.interval_duals[i].lo_mult + sol.interval_duals[i].hi_mult;
    for (const auto& e : p.ranges[i].op.entries) z[e.row] -= v[i] * e.val.real();
  }
  for (size_t j = 0; j < p.eq.size(); ++j) {
    for (const auto& e : p.eq[j].op.entries) z[e.row] -= sol.y[j] * e.val.real();
  }
  for (int j = 0; j < n_v; ++j) {
    if (z[j] < 0.0) v[j] += z[j];  // range j is the unit box of variable j
  }
  double bound = 0.0;
  for (size_t i = 0; i < p.ranges.size(); ++i) {
    bound += (v[i] >= 0.0 ? p.ranges[i].lo : p.ranges[i].hi) * v[i];
  }
  for (size_t j = 0; j < p.eq.size(); ++j) bound += sol.y[j] * p.eq[j].rhs;
  return bound;
}

// Solves with the objective placed on variable `var` (sign +1: minimize it,
// sign -1: maximize it) and returns the certified optimum seen from the dual
// side, i.e. a lower bound on the minimum resp. an upper bound on the maximum.
struct LpResult {
  double certified;
  double gap;
};

LpResult solve_for(sdp::ConeProgram& p, const LpLayout& lay, int var,
                   double sign) {
  p.objective.entries = {{0, var, var, sign}};
  // Two solves at different targets: pushing the gap occasionally leaves a
  // final iterate whose multipliers clean up worse than a mid-path one, so
  // keep whichever hand-verified bound comes out tighter (both are valid).
  bool have = false;
  LpResult best{0.0, 0.0};
  for (double gap_tol : {1e-8, 1e-9}) {
    sdp::SolveOptions so;
    so.gap_tol = gap_tol;
    so.residual_tol = gap_tol / 10.0;
    so.max_iterations = 100;
    const sdp::ConeSolution sol = sdp::solve(p, so);
    if (sol.status == sdp::SolveStatus::Infeasible) {
      throw Error("InfeasibleObservations",
                  "decoy: no photon-number channel reproduces the observed "
                  "gains within the stated model");
    }
    // MaxIter iterates are fine: the hand-verified bound is valid for any
    // multiplier vector, however far the run got.
    if (sol.status == sdp::SolveStatus::NumericalTrouble) continue;
    const double bound = certified_value(p, sol, lay.n_v);
    const double gap = std::fabs(sol.primal_objective - bound);
    if (!have || sign * bound > sign * best.certified) {
      best = {sign * bound, gap};
      have = true;
    }
  }
  if (!have) {
    throw Error("SolverNotConverged",
                "decoy: LP terminated without certificate");
  }
  return best;
}

}  // namespace

void check_model(const DecoyModel& m) {
  const size_t K = m.intensities.size();
  if (K < 2) out_of_range("need at least two intensities");
  if (m.gains.size() != K || m.error_gains.size() != K)
    out_of_range("gains and error_gains must match intensities in length");
  if (m.cutoff < 2) out_of_range("cutoff must be >= 2");
  for (size_t k = 0; k < K; ++k) {
    const double mu = m.intensities[k];
    if (!std::isfinite(mu) || mu <= 0.0)
      out_of_range("intensities must be positive");
    const double g = m.gains[k], e = m.error_gains[k];
    if (!std::isfinite(g) || g < 0.0 || g > 1.0)
      out_of_range("gains must lie in [0, 1]");
    if (!std::isfinite(e) || e < 0.0 || e > g)
      out_of_range("error_gains must lie in [0, gains]");
  }
}

double poisson_pn(double mu, int n) {
  if (!std::isfinite(mu) || mu <= 0.0)
    throw Error("OutOfRange", "poisson_pn: intensity must be positive");
  if (n < 0) throw Error("OutOfRange", "poisson_pn: n must be >= 0");
  return std::exp(-mu + n * std::log(mu) - std::lgamma(n + 1.0));
}

double poisson_tail(double mu, int cutoff) {
  double s = 0.0;
  for (int n = 0; n <= cutoff; ++n) s += poisson_pn(mu, n);
  return std::max(0.0, 1.0 - s);
}

DecoyBounds decoy_lp_bounds(const DecoyModel& m) {
  check_model(m);
  LpLayout lay{};
  sdp::ConeProgram p = build_program(m, lay);

  const LpResult d1 = solve_for(p, lay, 1, -1.0);  // max 1 - Y_1
  const LpResult b1 = solve_for(p, lay, lay.n_y + 1, -1.0);

  DecoyBounds out;
  out.y1_lower = std::clamp(1.0 - d1.certified, 0.0, 1.0);
  out.y1_gap = d1.gap;
  out.b1_gap = b1.gap;
  const double b1_upper = std::clamp(b1.certified, 0.0, 1.0);
  out.e1_upper =
      out.y1_lower <= 1e-12 ? 1.0 : std::min(1.0, b1_upper / out.y1_lower);
  return out;
}

double decoy_asymptotic_rate(const DecoyModel& m, double q_x1_upper,
                             double q_z, double f_ec) {
  check_model(m);
  if (!std::isfinite(q_x1_upper) || q_x1_upper < 0.0 || q_x1_upper > 0.5)
    out_of_range("q_x1_upper must lie in [0, 1/2]");
  if (!std::isfinite(q_z) || q_z < 0.0 || q_z > 0.5)
    out_of_range("q_z must lie in [0, 1/2]");
  if (!std::isfinite(f_ec) || f_ec < 1.0)
    out_of_range("f_ec must be >= 1");

  const DecoyBounds b = decoy_lp_bounds(m);
  const double gamma1 = poisson_pn(m.intensities[0], 1) * b.y1_lower;
  return gamma1 * (1.0 - binary_entropy(q_x1_upper)) -
         m.gains[0] * binary_entropy(q_z) * f_ec;
}

}  // namespace keyforge::decoy
