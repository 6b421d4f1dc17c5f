#include "keyforge/asymptotic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>

namespace keyforge::asymptotic {

namespace {

constexpr double kLn2 = 0.6931471805599453094;

using protocol::ConstraintKind;
using protocol::ProtocolMaps;
using protocol::Scenario;

// Exact Tr(C X) functional on a Hermitian block: push the upper triangle,
// the solver mirrors the conjugate entry.
void append_herm(sdp::LinearOperator& op, int block, const Mat& C,
                 double scale = 1.0) {
  for (int r = 0; r < C.rows; ++r)
    for (int c = r; c < C.cols; ++c) {
      const cx v = scale * C(r, c);
      if (std::abs(v) > 0.0) op.entries.push_back({block, r, c, v});
    }
}

sdp::LinearOperator herm_op(int block, const Mat& C) {
  sdp::LinearOperator op;
  append_herm(op, block, C);
  return op;
}

// Scenario constraints flattened for the solver. Ellipsoid members are
// one-dimensional here, so the interval of halfwidth chi*sqrt(Sigma_00) is
// exact; callers that must ignore them (the Frank-Wolfe set) pass false,
// which only enlarges the feasible set and so never invalidates a bound.
struct Constraints {
  std::vector<Mat> eq_ops;
  std::vector<double> eq_vals;
  std::vector<int> eq_src;  // index into sc.constraints
  std::vector<Mat> rg_ops;
  std::vector<double> lo, hi;
};

Constraints collect_constraints(const Scenario& sc, bool with_ellipsoids) {
  Constraints cs;
  for (size_t i = 0; i < sc.constraints.size(); ++i) {
    const auto& c = sc.constraints[i];
    switch (c.kind) {
      case ConstraintKind::Equality:
        cs.eq_ops.push_back(c.op);
        cs.eq_vals.push_back(c.value);
        cs.eq_src.push_back(static_cast<int>(i));
        break;
      case ConstraintKind::Interval:
        cs.rg_ops.push_back(c.op);
        cs.lo.push_back(c.value - c.halfwidth);
        cs.hi.push_back(c.value + c.halfwidth);
        break;
      case ConstraintKind::Ellipsoid: {
        if (!with_ellipsoids) break;
        const double s00 =
            c.covariance.rows > 0 ? std::max(0.0, c.covariance(0, 0).real())
                                  : 1.0;
        const double hw = std::sqrt(std::max(0.0, c.radius) * s00);
        cs.rg_ops.push_back(c.op);
        cs.lo.push_back(c.value - hw);
        cs.hi.push_back(c.value + hw);
        break;
      }
    }
  }
  return cs;
}

// Position of the normalization constraint inside the collected equality
// list. Throws IdentityConstraintMissing via the protocol lookup.
int identity_position(const Scenario& sc, const Constraints& cs) {
  const int src = protocol::identity_constraint_index(sc);
  for (size_t i = 0; i < cs.eq_src.size(); ++i)
    if (cs.eq_src[i] == src) return static_cast<int>(i);
  throw Error("IdentityConstraintMissing",
              "normalization constraint not in the equality set");
}

void check_perturbation(double eps, int d_prime) {
  if (!(eps > 0.0) || eps > 1.0)
    throw Error("PerturbationOutOfRange",
                "epsilon_pert must lie in (0, 1], got " + std::to_string(eps));
  if (d_prime >= 2) {
    const double ceil = 1.0 / (std::exp(1.0) * (d_prime - 1));
    if (eps > ceil * (1.0 + 1e-15))
      throw Error("PerturbationOutOfRange",
                  "epsilon_pert " + std::to_string(eps) + " exceeds 1/(e(d'-1)) = " +
                      std::to_string(ceil));
  }
}

// (1-eps) s + eps Tr(s) I/d on the compressed output space.
Mat depolarize(const Mat& s, double eps, int d) {
  Mat out = (1.0 - eps) * s;
  const double add = eps * trace(s).real() / d;
  for (int i = 0; i < d; ++i) out(i, i) += add;
  return out;
}

// Golden-section minimizer of a convex function on [a, b].
template <class F>
double golden_min(F&& g, double a, double b, double tol) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a);
  double d = a + r * (b - a);
  double fc = g(c), fd = g(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = g(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = g(d);
    }
  }
  return 0.5 * (a + b);
}

sdp::ConeProgram subproblem_base(int d, const Constraints& cs) {
  sdp::ConeProgram p;
  p.blocks = {{sdp::BlockDim::Kind::HermitianPSD, d}};
  for (size_t i = 0; i < cs.eq_ops.size(); ++i)
    p.eq.push_back({herm_op(0, cs.eq_ops[i]), cs.eq_vals[i]});
  for (size_t j = 0; j < cs.rg_ops.size(); ++j)
    p.ranges.push_back({herm_op(0, cs.rg_ops[j]), cs.lo[j], cs.hi[j]});
  return p;
}

std::vector<double> resolve_probs(const std::vector<double>& probs, int n) {
  if (probs.empty()) return std::vector<double>(n, 1.0 / n);
  return probs;
}

}  // namespace

// ---------------------------------------------------------------------------
// quadrature

QuadratureRule gauss_radau_rule(int m) {
  if (m < 1) throw Error("InvalidArgument", "gauss_radau_rule: m must be >= 1");
  // Monic shifted-Legendre recurrence on [0,1] with unit mass:
  // alpha_k = 1/2, beta_0 = 1, beta_k = k^2 / (4 (4k^2 - 1)).
  std::vector<double> alpha(m, 0.5), beta(m, 0.0);
  beta[0] = 1.0;
  for (int k = 1; k < m; ++k) {
    const double kk = static_cast<double>(k) * k;
    beta[k] = kk / (4.0 * (4.0 * kk - 1.0));
  }
  // Endpoint modification (Golub): replace the last diagonal so that t = 1
  // becomes an eigenvalue. pi_k are the monic polynomials evaluated at 1.
  double p_prev = 0.0, p_cur = 1.0;  // pi_{-1}, pi_0
  for (int k = 1; k <= m - 1; ++k) {
    const double p_next = (1.0 - alpha[k - 1]) * p_cur - beta[k - 1] * p_prev;
    p_prev = p_cur;
    p_cur = p_next;
  }
  alpha[m - 1] = 1.0 - beta[m - 1] * p_prev / p_cur;

  Mat T = Mat::zeros(m, m);
  for (int k = 0; k < m; ++k) T(k, k) = alpha[k];
  for (int k = 1; k < m; ++k) {
    const double s = std::sqrt(beta[k]);
    T(k - 1, k) = s;
    T(k, k - 1) = s;
  }
  Spectrum sp = herm_eig(T);

  QuadratureRule rule;
  rule.m = m;
  rule.nodes.resize(m);
  rule.weights.resize(m);
  for (int j = 0; j < m; ++j) {
    rule.nodes[j] = sp.eigenvalues[j];  // ascending
    const cx v0 = sp.eigenvectors(0, j);
    rule.weights[j] = beta[0] * std::norm(v0);
  }
  rule.nodes[m - 1] = 1.0;  // the construction fixes the endpoint exactly
  return rule;
}

// ---------------------------------------------------------------------------
// objective and gradient

double zeta_epsilon(double eps, int d_prime) {
  if (d_prime < 2) return 0.0;
  const double de = eps * (d_prime - 1);
  return 2.0 * de * std::log2(d_prime / de);
}

double max_perturbation(int d_prime) {
  if (d_prime < 2) return 1.0;
  return 1.0 / (std::exp(1.0) * (d_prime - 1));
}

double objective_f(const Mat& rho, const ProtocolMaps& maps,
                   double epsilon_pert) {
  check_perturbation(epsilon_pert, maps.d_c);
  const Mat s = hermitize(protocol::apply_G(maps, rho));
  const Mat se = depolarize(s, epsilon_pert, maps.d_c);
  const Mat ze = protocol::apply_Z(maps, se);
  const RelEntropyResult rel = relative_entropy(se, ze);
  return rel.infinite ? std::numeric_limits<double>::infinity() : rel.bits;
}

double objective_f(const Mat& rho, const Scenario& sc, double epsilon_pert) {
  return objective_f(rho, protocol::build_protocol_maps(sc), epsilon_pert);
}

Mat gradient_f(const Mat& rho, const ProtocolMaps& maps, double epsilon_pert) {
  check_perturbation(epsilon_pert, maps.d_c);
  const Mat s = hermitize(protocol::apply_G(maps, rho));
  const Mat se = depolarize(s, epsilon_pert, maps.d_c);
  const Mat ze = protocol::apply_Z(maps, se);
  const Mat L = matrix_log2_on_support(se) - matrix_log2_on_support(ze);
  // adjoint of the white-noise mix, then of the channel
  Mat y = (1.0 - epsilon_pert) * L;
  const double tl = trace(L).real();
  for (int i = 0; i < maps.d_c; ++i)
    y(i, i) += epsilon_pert * tl / maps.d_c;
  const Mat x = protocol::apply_G_adjoint(maps, y);
  // transposed pairing: Tr(Delta^T grad) is the directional derivative
  return conj_entrywise(hermitize(x));
}

Mat gradient_f(const Mat& rho, const Scenario& sc, double epsilon_pert) {
  return gradient_f(rho, protocol::build_protocol_maps(sc), epsilon_pert);
}

// ---------------------------------------------------------------------------
// feasibility and Frank-Wolfe

Mat find_feasible_state(const Scenario& sc, const sdp::SolveOptions& opts) {
  protocol::check_scenario(sc);
  const int d = sc.d_a * sc.d_b;
  const Constraints cs = collect_constraints(sc, false);

  sdp::ConeProgram p;
  p.blocks = {{sdp::BlockDim::Kind::HermitianPSD, d},
              {sdp::BlockDim::Kind::Quad, 1 + d * d}};
  p.objective.entries = {{1, 0, 0, 1.0}};  // minimize the cone head t

  // Tie the quad tail to the real coordinates of rho - I/d so that
  // t >= ||rho - I/d||_F.
  const double is2 = 1.0 / std::sqrt(2.0);
  int k = 1;
  for (int i = 0; i < d; ++i, ++k)
    p.eq.push_back({{{{1, k, k, -1.0}, {0, i, i, 1.0}}}, 1.0 / d});
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      p.eq.push_back({{{{1, k, k, -1.0}, {0, i, j, cx(is2, 0.0)}}}, 0.0});
      ++k;
      p.eq.push_back({{{{1, k, k, -1.0}, {0, i, j, cx(0.0, -is2)}}}, 0.0});
      ++k;
    }
  for (size_t i = 0; i < cs.eq_ops.size(); ++i)
    p.eq.push_back({herm_op(0, cs.eq_ops[i]), cs.eq_vals[i]});
  for (size_t j = 0; j < cs.rg_ops.size(); ++j)
    p.ranges.push_back({herm_op(0, cs.rg_ops[j]), cs.lo[j], cs.hi[j]});

  const sdp::ConeSolution s = sdp::solve(p, opts);
  if (s.status == sdp::SolveStatus::Infeasible || s.primal_residual > 1e-6)
    throw Error("InfeasibleScenario",
                "no state satisfies the scenario constraints (solver residual " +
                    std::to_string(s.primal_residual) + ")");
  return hermitize(s.X[0]);
}

FrankWolfeState frank_wolfe_minimize(const Scenario& sc,
                                     const FrankWolfeOptions& opts) {
  protocol::check_scenario(sc);
  const ProtocolMaps maps = protocol::build_protocol_maps(sc);
  check_perturbation(opts.epsilon_pert, maps.d_c);
  const Constraints cs = collect_constraints(sc, false);
  const sdp::ConeProgram base = subproblem_base(maps.d_in, cs);

  Mat rho = find_feasible_state(sc, opts.sdp);
  double f = objective_f(rho, maps, opts.epsilon_pert);

  FrankWolfeState st;
  st.epsilon_pert = opts.epsilon_pert;
  int solves = 0;
  while (true) {
    const Mat grad = gradient_f(rho, maps, opts.epsilon_pert);
    sdp::ConeProgram p = base;
    p.objective = herm_op(0, conj_entrywise(grad));
    const sdp::ConeSolution s = sdp::solve(p, opts.sdp);
    ++solves;
    const Mat sigma = hermitize(s.X[0]);
    const Mat delta = sigma - rho;
    const double gap = frob_inner(conj_entrywise(grad), delta).real();

    st.iterate = rho;
    st.objective = f;
    st.gradient = grad;
    st.linear_gap = gap;
    st.iteration = solves;
    if (std::abs(gap) < opts.epsilon_stop) {
      st.converged = true;
      break;
    }
    if (solves >= opts.max_iterations) break;

    auto g = [&](double lam) {
      return objective_f(rho + lam * delta, maps, opts.epsilon_pert);
    };
    double lam = golden_min(g, 0.0, 1.0, opts.line_search_tol);
    double fn = g(lam);
    if (!(fn <= f + 1e-12)) {
      bool improved = false;
      for (int t = 0; t < 60 && !improved; ++t) {
        lam *= 0.5;
        fn = g(lam);
        improved = fn <= f + 1e-12;
      }
      if (!improved) break;  // numerical floor; the state stays certified
    }
    rho = hermitize(rho + lam * delta);
    f = fn;
  }
  return st;
}

FwCertificate certify_fw(const FrankWolfeState& state, const Scenario& sc,
                         const sdp::SolveOptions& opts) {
  protocol::check_scenario(sc);
  const ProtocolMaps maps = protocol::build_protocol_maps(sc);
  const Constraints cs = collect_constraints(sc, false);
  const int id_pos = identity_position(sc, cs);

  sdp::ConeProgram p = subproblem_base(maps.d_in, cs);
  p.objective = herm_op(0, conj_entrywise(state.gradient));
  const sdp::ConeSolution s = sdp::solve(p, opts);

  // Aggregate multipliers: equalities first, then intervals. Interval
  // multipliers are clamped to their cone before use so the evaluated dual
  // value is a valid Lagrange bound; any matrix-inequality slack this (or
  // solver tolerance) introduces is absorbed by the identity shift.
  std::vector<Mat> ops = cs.eq_ops;
  ops.insert(ops.end(), cs.rg_ops.begin(), cs.rg_ops.end());
  const size_t ne = cs.eq_ops.size();
  std::vector<double> mult(ne + cs.rg_ops.size(), 0.0);
  std::vector<double> lo_m(cs.rg_ops.size(), 0.0), hi_m(cs.rg_ops.size(), 0.0);
  for (size_t i = 0; i < ne; ++i) mult[i] = s.y[i];
  for (size_t j = 0; j < cs.rg_ops.size(); ++j) {
    lo_m[j] = std::max(0.0, s.interval_duals[j].lo_mult);
    hi_m[j] = std::min(0.0, s.interval_duals[j].hi_mult);
    mult[ne + j] = lo_m[j] + hi_m[j];
  }

  FwCertificate cert;
  cert.dual_violation = sdp::verify_dual_feasibility(ops, mult, state.gradient);
  const std::vector<double> restored =
      sdp::restore_dual_feasibility(ops, id_pos, mult, state.gradient);
  cert.restored_violation =
      sdp::verify_dual_feasibility(ops, restored, state.gradient);

  double dual_value = 0.0;
  for (size_t i = 0; i < ne; ++i) dual_value += cs.eq_vals[i] * restored[i];
  for (size_t j = 0; j < cs.rg_ops.size(); ++j)
    dual_value += cs.lo[j] * lo_m[j] + cs.hi[j] * hi_m[j];

  const double tr_term =
      frob_inner(conj_entrywise(state.gradient), state.iterate).real();
  cert.beta = state.objective - tr_term + dual_value;
  cert.zeta = zeta_epsilon(state.epsilon_pert, maps.d_c);
  cert.bound = cert.beta - cert.zeta;
  return cert;
}

double certified_bound_fw(const FrankWolfeState& state, const Scenario& sc,
                          const sdp::SolveOptions& opts) {
  return certify_fw(state, sc, opts).bound;
}

// ---------------------------------------------------------------------------
// Gauss-Radau relaxation

namespace {

struct GrOutcome {
  double bound = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
};

GrOutcome gr_solve(const sdp::ConeProgram& p, double c_m,
                   const sdp::SolveOptions& opts) {
  const sdp::ConeSolution s = sdp::solve(p, opts);
  const bool certified = s.status == sdp::SolveStatus::Optimal ||
                         s.dual_residual <= 1e-7;
  if (!certified)
    throw Error("SolverNotConverged",
                "no weak-duality certificate for the relaxation (status " +
                    std::to_string(static_cast<int>(s.status)) +
                    ", dual residual " + std::to_string(s.dual_residual) + ")");
  GrOutcome out;
  out.bound = s.dual_objective + c_m;
  out.dual_residual = s.dual_residual;
  out.iterations = s.iterations;
  return out;
}

// When the equality data determine sigma uniquely (the constraint operators
// span the Hermitian space and the values are consistent), returns that
// sigma; otherwise empty.
std::optional<Mat> determined_sigma(const Constraints& cs, int d) {
  if (!cs.rg_ops.empty()) return std::nullopt;
  const int n = static_cast<int>(cs.eq_ops.size());
  if (n < d * d) return std::nullopt;
  Mat G = Mat::zeros(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double g = frob_inner(cs.eq_ops[static_cast<size_t>(i)],
                                  cs.eq_ops[static_cast<size_t>(j)])
                           .real();
      G(i, j) = g;
      G(j, i) = g;
    }
  const Spectrum sp = herm_eig(G);
  const double tol = 1e-11 * std::max(1e-300, sp.eigenvalues.back());
  int rank = 0;
  for (double v : sp.eigenvalues) rank += (v > tol) ? 1 : 0;
  if (rank < d * d) return std::nullopt;
  // Least-norm coefficients through the pseudo-inverse of the Gram matrix.
  std::vector<double> coef(static_cast<size_t>(n), 0.0);
  for (int l = 0; l < n; ++l) {
    if (sp.eigenvalues[static_cast<size_t>(l)] <= tol) continue;
    double dot = 0.0;
    for (int i = 0; i < n; ++i)
      dot += sp.eigenvectors(i, l).real() * cs.eq_vals[static_cast<size_t>(i)];
    dot /= sp.eigenvalues[static_cast<size_t>(l)];
    for (int i = 0; i < n; ++i)
      coef[static_cast<size_t>(i)] += dot * sp.eigenvectors(i, l).real();
  }
  Mat sigma = Mat::zeros(d, d);
  for (int i = 0; i < n; ++i)
    sigma = sigma + coef[static_cast<size_t>(i)] *
                        cs.eq_ops[static_cast<size_t>(i)];
  sigma = hermitize(sigma);
  double scale = 1.0;
  for (double v : cs.eq_vals) scale = std::max(scale, std::fabs(v));
  for (int i = 0; i < n; ++i) {
    const double got =
        frob_inner(cs.eq_ops[static_cast<size_t>(i)], sigma).real();
    if (std::fabs(got - cs.eq_vals[static_cast<size_t>(i)]) > 1e-8 * scale)
      return std::nullopt;
  }
  return sigma;
}

// Dense complex linear solve by Gaussian elimination with partial pivoting;
// A is row-major n x n and is consumed.
std::vector<cx> solve_dense(std::vector<cx> A, std::vector<cx> b, int n) {
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(A[static_cast<size_t>(r) * n + col]) >
          std::abs(A[static_cast<size_t>(piv) * n + col]))
        piv = r;
    if (std::abs(A[static_cast<size_t>(piv) * n + col]) < 1e-300)
      throw Error("SolverNotConverged", "singular node system");
    if (piv != col) {
      for (int c = 0; c < n; ++c)
        std::swap(A[static_cast<size_t>(piv) * n + c],
                  A[static_cast<size_t>(col) * n + c]);
      std::swap(b[static_cast<size_t>(piv)], b[static_cast<size_t>(col)]);
    }
    const cx inv = 1.0 / A[static_cast<size_t>(col) * n + col];
    for (int r = col + 1; r < n; ++r) {
      const cx f = A[static_cast<size_t>(r) * n + col] * inv;
      if (f == cx(0.0, 0.0)) continue;
      for (int c = col; c < n; ++c)
        A[static_cast<size_t>(r) * n + c] -=
            f * A[static_cast<size_t>(col) * n + c];
      b[static_cast<size_t>(r)] -= f * b[static_cast<size_t>(col)];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    cx s = b[static_cast<size_t>(r)];
    for (int c = r + 1; c < n; ++c)
      s -= A[static_cast<size_t>(r) * n + c] * b[static_cast<size_t>(c)];
    b[static_cast<size_t>(r)] = s / A[static_cast<size_t>(r) * n + r];
  }
  return b;
}

// Zero-probability observations pin the support: Tr(E sigma) = 0 with E
// positive semidefinite and sigma >= 0 force E sigma = 0, so sigma lives in
// ker(E). Intersecting those kernels (iterated, because positivity of a
// compression can surface only after an earlier cut) yields an isometry V
// with supp(sigma) inside range(V) for every feasible sigma.
Mat support_isometry(const Constraints& cs, int d) {
  Mat V = Mat::identity(d);
  double scale = 1.0;
  for (double v : cs.eq_vals) scale = std::max(scale, std::fabs(v));
  for (;;) {
    const int k = V.cols;
    Mat W = Mat::zeros(k, k);
    bool any = false;
    for (size_t i = 0; i < cs.eq_ops.size(); ++i) {
      if (std::fabs(cs.eq_vals[i]) > 1e-12 * scale) continue;
      const Mat E = hermitize(adjoint(V) * cs.eq_ops[i] * V);
      const Spectrum se = herm_eig(E);
      const double emax = se.eigenvalues.back();
      if (emax <= 1e-12) continue;                            // vanished here
      if (se.eigenvalues.front() < -1e-10 * emax) continue;   // not PSD here
      W = W + (1.0 / emax) * E;
      any = true;
    }
    if (!any) return V;
    const Spectrum sw = herm_eig(W);
    const double tol = 1e-9 * sw.eigenvalues.back();
    int kd = 0;
    while (kd < k && sw.eigenvalues[static_cast<size_t>(kd)] <= tol) ++kd;
    if (kd == 0)
      throw Error("InfeasibleScenario",
                  "zero-probability constraints leave no support for sigma");
    Mat K = Mat::zeros(k, kd);
    for (int j = 0; j < kd; ++j)
      for (int r = 0; r < k; ++r) K(r, j) = sw.eigenvectors(r, j);
    V = V * K;
  }
}

// Exact evaluation of the relaxation when the statistics fix sigma. The
// program then separates over nodes and outcomes, and after eliminating eta
// and theta through the generalized Schur complement each term is an
// unconstrained convex quadratic in zeta restricted to supp(sigma):
//   min over z of 2 Re Tr(m z) + (1-t) Tr(m z^ L^-1 z) + t Tr(z L^-1 z^)
// with m the key operator and L = diag(sigma) in sigma's eigenbasis. A
// residual-based duality-gap correction keeps the reported value a lower
// bound even when the linear solves carry roundoff. This sidesteps the
// interior-point solver entirely: with sigma pinned against the cone
// boundary the SDP has no strictly feasible point and the homogeneous
// embedding stalls long before reaching this accuracy.
GrOutcome gr_pinned(const Mat& sigma, const std::vector<Mat>& keyops,
                    const QuadratureRule& rule, int ni, double c_m) {
  const int d = sigma.rows;
  const Spectrum sp = herm_eig(sigma);
  if (sp.eigenvalues.front() < -1e-8)
    throw Error("InfeasibleScenario",
                "observed statistics admit no positive semidefinite state");
  std::vector<int> keep;
  for (int i = 0; i < d; ++i)
    if (sp.eigenvalues[static_cast<size_t>(i)] > 1e-9) keep.push_back(i);
  const int k = static_cast<int>(keep.size());
  Mat U = Mat::zeros(d, k);
  for (int j = 0; j < k; ++j)
    for (int r = 0; r < d; ++r) U(r, j) = sp.eigenvectors(r, keep[j]);
  std::vector<double> lam(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j)
    lam[static_cast<size_t>(j)] = sp.eigenvalues[static_cast<size_t>(keep[j])];

  double total = c_m;
  double slack = 0.0;
  const int n2 = k * k;
  auto idx = [&](int r, int c) { return r * k + c; };
  for (const Mat& Ma : keyops) {
    const Mat mt = adjoint(U) * Ma * U;  // key operator on supp(sigma)
    for (int i = 0; i < ni; ++i) {
      const double t = rule.nodes[static_cast<size_t>(i)];
      const double kappa = rule.weights[static_cast<size_t>(i)] / (t * kLn2);
      // Q z = (1-t) L^-1 z mt + t z L^-1, row-major over (r, c) pairs.
      std::vector<cx> Q(static_cast<size_t>(n2) * n2, cx(0.0, 0.0));
      std::vector<cx> rhs(static_cast<size_t>(n2));
      for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) {
          const int row = idx(r, c);
          for (int s = 0; s < k; ++s)
            Q[static_cast<size_t>(row) * n2 + idx(r, s)] +=
                (1.0 - t) * mt(s, c) / lam[static_cast<size_t>(r)];
          Q[static_cast<size_t>(row) * n2 + row] +=
              t / lam[static_cast<size_t>(c)];
          rhs[static_cast<size_t>(row)] = -mt(r, c);
        }
      const std::vector<cx> z = solve_dense(Q, rhs, n2);
      auto apply_q = [&](const std::vector<cx>& v) {
        std::vector<cx> out(static_cast<size_t>(n2), cx(0.0, 0.0));
        for (int r = 0; r < k; ++r)
          for (int c = 0; c < k; ++c) {
            cx acc(0.0, 0.0);
            for (int s = 0; s < k; ++s)
              acc += (1.0 - t) * v[static_cast<size_t>(idx(r, s))] * mt(s, c) /
                     lam[static_cast<size_t>(r)];
            acc += t * v[static_cast<size_t>(idx(r, c))] /
                   lam[static_cast<size_t>(c)];
            out[static_cast<size_t>(idx(r, c))] = acc;
          }
        return out;
      };
      const std::vector<cx> qz = apply_q(z);
      // value = <b,z> + <r,z> - <r, Q^-1 r>, with r the gradient residual.
      std::vector<cx> res(static_cast<size_t>(n2));
      double bz = 0.0, rz = 0.0;
      for (int r = 0; r < k; ++r)
        for (int c = 0; c < k; ++c) {
          const size_t h = static_cast<size_t>(idx(r, c));
          const cx b_rc = mt(r, c);
          res[h] = b_rc + qz[h];
          bz += (std::conj(b_rc) * z[h]).real();
          rz += (std::conj(res[h]) * z[h]).real();
        }
      double corr = 0.0;
      {
        std::vector<cx> Q2(static_cast<size_t>(n2) * n2, cx(0.0, 0.0));
        for (int r = 0; r < k; ++r)
          for (int c = 0; c < k; ++c) {
            const int row = idx(r, c);
            for (int s = 0; s < k; ++s)
              Q2[static_cast<size_t>(row) * n2 + idx(r, s)] +=
                  (1.0 - t) * mt(s, c) / lam[static_cast<size_t>(r)];
            Q2[static_cast<size_t>(row) * n2 + row] +=
                t / lam[static_cast<size_t>(c)];
          }
        const std::vector<cx> w = solve_dense(Q2, res, n2);
        for (size_t h = 0; h < w.size(); ++h)
          corr += (std::conj(res[h]) * w[h]).real();
      }
      const double guard = 2.0 * std::fabs(corr);
      total += kappa * (bz + rz - guard);
      slack += kappa * guard;
    }
  }
  GrOutcome out;
  out.bound = total;
  out.dual_residual = slack;
  out.iterations = 0;
  return out;
}

GrOutcome gauss_radau_core(const Scenario& sc, int x_star, int m,
                           const sdp::SolveOptions& opts) {
  protocol::check_scenario(sc);
  if (m < 2) throw Error("InvalidArgument", "gauss_radau_bound: m must be >= 2");
  if (x_star < 0 || x_star >= static_cast<int>(sc.povms_a.size()))
    throw Error("InvalidArgument", "gauss_radau_bound: x_star out of range");
  const QuadratureRule rule = gauss_radau_rule(m);
  const int d = sc.d_a * sc.d_b;
  const auto& key = sc.povms_a[static_cast<size_t>(x_star)].elements;
  const int na = static_cast<int>(key.size());
  // Every node carries a variational block, endpoint included: with the
  // dimension fixed there is no need to absorb the t = 1 term into a norm
  // bound, and keeping it makes the quadrature identity exact (the
  // truncated variant undershoots the entropy by ~w_m/2 per key bit).
  const int ni = m;

  const Mat eyeB = Mat::identity(sc.d_b);
  double c_m = 0.0;
  for (int i = 0; i < m; ++i)
    c_m += rule.weights[static_cast<size_t>(i)] /
           (rule.nodes[static_cast<size_t>(i)] * kLn2);

  Constraints cs = collect_constraints(sc, true);
  std::vector<Mat> keyops;
  keyops.reserve(key.size());
  for (const Mat& Ma : key) keyops.push_back(kron(Ma, eyeB));

  // Certified support cut, then everything happens in the cut dimension.
  // The restriction is exact: at an optimum both corner variables of each
  // block live on supp(sigma), so nothing outside the face contributes.
  const Mat V = support_isometry(cs, d);
  const int dd = V.cols;
  if (dd < d) {
    for (auto& op : cs.eq_ops) op = hermitize(adjoint(V) * op * V);
    for (auto& op : cs.rg_ops) op = hermitize(adjoint(V) * op * V);
    for (auto& Ma : keyops) Ma = hermitize(adjoint(V) * Ma * V);
  }

  const std::optional<Mat> pinned = determined_sigma(cs, dd);
  if (pinned) return gr_pinned(*pinned, keyops, rule, ni, c_m);

  // General path: sigma stays a variable block tied to the corners.
  sdp::ConeProgram p;
  p.blocks.push_back({sdp::BlockDim::Kind::HermitianPSD, dd});
  for (int a = 0; a < na; ++a)
    for (int i = 0; i < ni; ++i) {
      (void)a;
      (void)i;
      p.blocks.push_back({sdp::BlockDim::Kind::HermitianPSD, 2 * dd});
      p.blocks.push_back({sdp::BlockDim::Kind::HermitianPSD, 2 * dd});
    }
  auto b1 = [&](int a, int i) { return 1 + 2 * (a * ni + i); };
  auto b2 = [&](int a, int i) { return 2 + 2 * (a * ni + i); };

  // Objective: sum over nodes of
  //   kappa [ Tr((M_a x 1)(zeta + zeta^ + (1-t) eta)) + t Tr(theta) ].
  for (int a = 0; a < na; ++a) {
    const Mat& M = keyops[static_cast<size_t>(a)];
    for (int i = 0; i < ni; ++i) {
      const double t = rule.nodes[static_cast<size_t>(i)];
      const double kappa = rule.weights[static_cast<size_t>(i)] / (t * kLn2);
      Mat c1 = Mat::zeros(2 * dd, 2 * dd);
      for (int r = 0; r < dd; ++r)
        for (int c = 0; c < dd; ++c) {
          c1(r, dd + c) += kappa * M(r, c);
          c1(dd + r, c) += kappa * M(r, c);  // Hermitian mirror (M = M^dag)
          c1(dd + r, dd + c) += kappa * (1.0 - t) * M(r, c);
        }
      append_herm(p.objective, b1(a, i), c1);
      Mat c2 = Mat::zeros(2 * dd, 2 * dd);
      for (int r = 0; r < dd; ++r) c2(dd + r, dd + r) = kappa * t;
      append_herm(p.objective, b2(a, i), c2);
    }
  }

  // Linking rows: top-left subblocks equal sigma, and the off-diagonal of
  // the second block is the adjoint of the first block's.
  for (int a = 0; a < na; ++a)
    for (int i = 0; i < ni; ++i) {
      for (int g : {b1(a, i), b2(a, i)}) {
        for (int r = 0; r < dd; ++r)
          p.eq.push_back({{{{g, r, r, 1.0}, {0, r, r, -1.0}}}, 0.0});
        for (int r = 0; r < dd; ++r)
          for (int c = r + 1; c < dd; ++c) {
            p.eq.push_back(
                {{{{g, r, c, cx(0.5, 0.0)}, {0, r, c, cx(-0.5, 0.0)}}}, 0.0});
            p.eq.push_back(
                {{{{g, r, c, cx(0.0, -0.5)}, {0, r, c, cx(0.0, 0.5)}}}, 0.0});
          }
      }
      const int g1 = b1(a, i), g2 = b2(a, i);
      for (int r = 0; r < dd; ++r)
        for (int c = 0; c < dd; ++c) {
          // Gamma2[r, dd+c] = conj(Gamma1[c, dd+r])
          p.eq.push_back(
              {{{{g2, r, dd + c, cx(0.5, 0.0)}, {g1, c, dd + r, cx(-0.5, 0.0)}}},
               0.0});
          p.eq.push_back(
              {{{{g2, r, dd + c, cx(0.0, -0.5)},
                 {g1, c, dd + r, cx(0.0, -0.5)}}},
               0.0});
        }
    }

  // Scenario constraints act on sigma. Equalities are widened into hair-thin
  // intervals so a statistics vector that pins sigma against the cone
  // boundary cannot leave the program without a strictly feasible point;
  // enlarging the feasible set keeps the minimum a valid lower bound.
  const double widen = 1e-9;
  for (size_t i = 0; i < cs.eq_ops.size(); ++i)
    p.ranges.push_back({herm_op(0, cs.eq_ops[i]), cs.eq_vals[i] - widen,
                        cs.eq_vals[i] + widen});
  for (size_t j = 0; j < cs.rg_ops.size(); ++j)
    p.ranges.push_back({herm_op(0, cs.rg_ops[j]), cs.lo[j], cs.hi[j]});

  return gr_solve(p, c_m, opts);
}

}  // namespace

double gauss_radau_bound(const Scenario& sc, int x_star, int m,
                         const sdp::SolveOptions& opts) {
  return gauss_radau_core(sc, x_star, m, opts).bound;
}

// ---------------------------------------------------------------------------
// min-entropy

double hmin_bound(const Scenario& sc, const protocol::Povm& key_povm,
                  const std::optional<Mat>& rho_fixed,
                  const sdp::SolveOptions& opts) {
  protocol::check_scenario(sc);
  protocol::check_povm(key_povm, sc.d_a);
  const int d = sc.d_a * sc.d_b;
  const int na = static_cast<int>(key_povm.elements.size());
  const Mat eyeB = Mat::identity(sc.d_b);

  sdp::ConeSolution s;
  if (rho_fixed) {
    Mat rho = hermitize(*rho_fixed);
    if (rho.rows != d)
      throw Error("DimensionMismatch", "hmin_bound: state must be d_a*d_b");
    const Mat psi = purify(rho);
    const int r = psi.rows / d;
    const Mat proj = psi * adjoint(psi);
    std::vector<Mat> sig(static_cast<size_t>(na));
    for (int a = 0; a < na; ++a) {
      const Mat op =
          kron(kron(key_povm.elements[static_cast<size_t>(a)], eyeB),
               Mat::identity(r));
      sig[static_cast<size_t>(a)] =
          hermitize(partial_trace(op * proj, {d, r}, {1}));
    }
    // max sum_a Tr(Z_a sig_a) over POVMs {Z_a}; reported from the dual side.
    sdp::ConeProgram p;
    for (int a = 0; a < na; ++a)
      p.blocks.push_back({sdp::BlockDim::Kind::HermitianPSD, r});
    for (int a = 0; a < na; ++a)
      append_herm(p.objective, a, sig[static_cast<size_t>(a)], -1.0);
    for (int i = 0; i < r; ++i) {
      sdp::LinearOperator op;
      for (int a = 0; a < na; ++a) op.entries.push_back({a, i, i, 1.0});
      p.eq.push_back({op, 1.0});
    }
    for (int i = 0; i < r; ++i)
      for (int j = i + 1; j < r; ++j) {
        sdp::LinearOperator re, im;
        for (int a = 0; a < na; ++a) {
          re.entries.push_back({a, i, j, cx(0.5, 0.0)});
          im.entries.push_back({a, i, j, cx(0.0, -0.5)});
        }
        p.eq.push_back({re, 0.0});
        p.eq.push_back({im, 0.0});
      }
    s = sdp::solve(p, opts);
  } else {
    // Ensemble decomposition over the feasible set: Eve's side information
    // is a flag a with subnormalized branch tau_a; the branches sum to a
    // feasible state.
    const Constraints cs = collect_constraints(sc, true);
    sdp::ConeProgram p;
    for (int a = 0; a < na; ++a)
      p.blocks.push_back({sdp::BlockDim::Kind::HermitianPSD, d});
    for (int a = 0; a < na; ++a)
      append_herm(p.objective, a,
                  kron(key_povm.elements[static_cast<size_t>(a)], eyeB), -1.0);
    for (size_t i = 0; i < cs.eq_ops.size(); ++i) {
      sdp::LinearOperator op;
      for (int a = 0; a < na; ++a) append_herm(op, a, cs.eq_ops[i]);
      p.eq.push_back({op, cs.eq_vals[i]});
    }
    for (size_t j = 0; j < cs.rg_ops.size(); ++j) {
      sdp::LinearOperator op;
      for (int a = 0; a < na; ++a) append_herm(op, a, cs.rg_ops[j]);
      p.ranges.push_back({op, cs.lo[j], cs.hi[j]});
    }
    s = sdp::solve(p, opts);
  }

  const bool certified =
      s.status == sdp::SolveStatus::Optimal || s.dual_residual <= 1e-7;
  if (!certified)
    throw Error("SolverNotConverged",
                "guessing-probability program did not certify (dual residual " +
                    std::to_string(s.dual_residual) + ")");
  // Weak duality: -dual_objective >= p_guess; p_guess <= 1 always holds.
  const double p_guess = std::min(1.0, -s.dual_objective);
  return -std::log2(std::max(p_guess, 1e-300));
}

// ---------------------------------------------------------------------------
// rate assembly

DwRate devetak_winter_rate(double hae_bound, double ec_term) {
  DwRate r;
  r.raw = hae_bound - ec_term;
  r.clamped = std::max(0.0, r.raw);
  return r;
}

double sifting_probability(const Scenario& sc) {
  const auto pa = resolve_probs(sc.probs_a, static_cast<int>(sc.povms_a.size()));
  const auto pb = resolve_probs(sc.probs_b, static_cast<int>(sc.povms_b.size()));
  double pp = 0.0;
  for (const auto& [x, y] : sc.kept_pairs)
    pp += pa[static_cast<size_t>(x)] * pb[static_cast<size_t>(y)];
  return pp;
}

double error_correction_term(const Scenario& sc, const Mat& rho) {
  protocol::check_scenario(sc);
  const auto pa = resolve_probs(sc.probs_a, static_cast<int>(sc.povms_a.size()));
  const auto pb = resolve_probs(sc.probs_b, static_cast<int>(sc.povms_b.size()));
  // joint distribution over (kept setting pair, a, b), conditioned on passing
  std::vector<std::vector<double>> cell;  // per kept pair: na x nb flattened
  double pp = 0.0;
  for (const auto& [x, y] : sc.kept_pairs) {
    const auto& ma = sc.povms_a[static_cast<size_t>(x)].elements;
    const auto& mb = sc.povms_b[static_cast<size_t>(y)].elements;
    std::vector<double> q(ma.size() * mb.size(), 0.0);
    for (size_t a = 0; a < ma.size(); ++a)
      for (size_t b = 0; b < mb.size(); ++b) {
        const double v = pa[static_cast<size_t>(x)] * pb[static_cast<size_t>(y)] *
                         frob_inner(kron(ma[a], mb[b]), rho).real();
        q[a * mb.size() + b] = std::max(0.0, v);
        pp += q[a * mb.size() + b];
      }
    cell.push_back(std::move(q));
  }
  if (pp <= 0.0) return 0.0;
  // H(A | B, settings) = H(settings, A, B) - H(settings, B)
  double h_joint = 0.0, h_cond = 0.0;
  for (size_t k = 0; k < cell.size(); ++k) {
    const auto& [x, y] = sc.kept_pairs[k];
    const size_t nb = sc.povms_b[static_cast<size_t>(y)].elements.size();
    const size_t na = cell[k].size() / nb;
    (void)x;
    for (size_t b = 0; b < nb; ++b) {
      double qb = 0.0;
      for (size_t a = 0; a < na; ++a) {
        const double q = cell[k][a * nb + b] / pp;
        if (q > 0.0) h_joint -= q * std::log2(q);
        qb += q;
      }
      if (qb > 0.0) h_cond -= qb * std::log2(qb);
    }
  }
  return h_joint - h_cond;
}

KeyRateReport frank_wolfe_report(const Scenario& sc, double ec_term,
                                 const FrankWolfeOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const FrankWolfeState st = frank_wolfe_minimize(sc, opts);
  const FwCertificate cert = certify_fw(st, sc, opts.sdp);
  const double pp = sifting_probability(sc);
  KeyRateReport rep;
  rep.method = "frank-wolfe";
  rep.hae_bound = pp > 0.0 ? cert.bound / pp : 0.0;
  rep.ec_term = ec_term;
  const DwRate r = devetak_winter_rate(rep.hae_bound, ec_term);
  rep.raw_rate = r.raw;
  rep.clamped_rate = r.clamped;
  rep.certificate_residual = std::max(0.0, cert.restored_violation);
  rep.iterations = st.iteration;
  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return rep;
}

KeyRateReport gauss_radau_report(const Scenario& sc, int x_star, int m,
                                 double ec_term,
                                 const sdp::SolveOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const GrOutcome out = gauss_radau_core(sc, x_star, m, opts);
  KeyRateReport rep;
  rep.method = "gauss-radau";
  rep.hae_bound = out.bound;
  rep.ec_term = ec_term;
  const DwRate r = devetak_winter_rate(out.bound, ec_term);
  rep.raw_rate = r.raw;
  rep.clamped_rate = r.clamped;
  rep.certificate_residual = out.dual_residual;
  rep.iterations = out.iterations;
  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return rep;
}

double chsh_di_rate(double S, double Q) {
  const double smax = 2.0 * std::sqrt(2.0);
  if (S < 2.0 - 1e-12 || S > smax + 1e-12)
    throw Error("SOutOfRange", "CHSH value must lie in [2, 2*sqrt(2)], got " +
                                   std::to_string(S));
  if (Q < 0.0 || Q > 0.5)
    throw Error("InvalidArgument", "QBER must lie in [0, 1/2]");
  const double half = S / 2.0;
  const double rad = std::sqrt(std::max(0.0, half * half - 1.0));
  return 1.0 - binary_entropy(std::min(1.0, 0.5 + 0.5 * rad)) -
         binary_entropy(Q);
}

}  // namespace keyforge::asymptotic
