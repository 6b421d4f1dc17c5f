#pragma once
// Dense primal-dual interior-point solver for small block-structured
// semidefinite and linear programs. Weak duality of the returned pair is the
// trust anchor for every certified bound downstream, so the solver keeps an
// independent post-hoc verification path (verify_dual_feasibility).
//
// Problem form (minimization convention):
//   min  <C, X>
//   s.t. <A_i, X> = b_i                      (equality constraints)
//        lo_j <= <G_j, X> <= hi_j            (interval constraints)
//        X in (product of cones)
// Cones: complex-Hermitian PSD blocks, nonnegative scalar blocks, and
// quadratic (second-order) blocks. Quadratic blocks (t, x1..xk), t >= ||x||_2,
// are lowered internally to arrow-shaped PSD blocks [[t, x^T], [x, t*I]].
//
// Complex-Hermitian blocks are embedded internally as real symmetric blocks
// of doubled size, H -> [[Re H, -Im H], [Im H, Re H]], with a factor-of-2
// trace correction applied on extraction.

#include <iosfwd>
#include <vector>

#include "keyforge/linalg.hpp"

namespace keyforge::sdp {

struct BlockDim {
  enum class Kind { HermitianPSD, Nonneg, Quad };
  Kind kind = Kind::HermitianPSD;
  int dim = 0;  // matrix dim / vector length / quad cone length (1 + k)
};

// One coefficient of a Hermitian block operator. For HermitianPSD blocks give
// the upper triangle only (row <= col); row < col implies the conjugate
// mirror entry. Diagonal values must be real. For Nonneg and Quad blocks use
// row == col with a real value (the position inside the vector).
struct Entry {
  int block = 0;
  int row = 0;
  int col = 0;
  cx val;
};

struct LinearOperator {
  std::vector<Entry> entries;
};

struct EqualityConstraint {
  LinearOperator op;
  double rhs = 0.0;
};

struct IntervalConstraint {
  LinearOperator op;
  double lo = 0.0;
  double hi = 0.0;
};

struct ConeProgram {
  std::vector<BlockDim> blocks;
  LinearOperator objective;
  std::vector<EqualityConstraint> eq;
  std::vector<IntervalConstraint> ranges;
};

// Optimal guarantees residuals <= 1e-8 and relative gap <= 1e-7 (one decade
// above the solve targets; a run ending in numerical breakdown still counts
// as Optimal when its best iterate meets those). On MaxIter the best iterate
// seen is returned together with its residuals.
enum class SolveStatus { Optimal, Infeasible, MaxIter, NumericalTrouble };

struct SolveOptions {
  double gap_tol = 1e-8;
  double residual_tol = 1e-9;
  int max_iterations = 200;
  bool verbose = false;
};

// Multipliers of one interval constraint: contribution to the dual objective
// is lo*lo_mult + hi*hi_mult with lo_mult >= 0, hi_mult <= 0; the operator's
// aggregate multiplier (as in a plain equality) is lo_mult + hi_mult.
struct IntervalDual {
  double lo_mult = 0.0;
  double hi_mult = 0.0;
};

struct ConeSolution {
  SolveStatus status = SolveStatus::NumericalTrouble;
  std::vector<Mat> X;  // per block; Nonneg/Quad blocks come back as diagonal
  std::vector<Mat> Z;
  std::vector<double> y;  // equality multipliers, original order
  std::vector<IntervalDual> interval_duals;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
  int iterations = 0;
};

// Primal-dual path following with a Mehrotra-style predictor-corrector on the
// Nesterov-Todd direction, dense Cholesky of the Schur complement, and a
// homogeneous self-dual embedding so infeasibility is reported via status.
// Presolve drops zero rows and linearly dependent equality rows (with a
// consistency check) before the interior-point iteration starts.
// Throws Error("IllFormedProgram") on structurally invalid input.
ConeSolution solve(const ConeProgram& p, const SolveOptions& opts = {});

// lambda_max(sum_i y_i Gamma_i^T - G); <= 0 means the dual point is feasible.
double verify_dual_feasibility(const std::vector<Mat>& gammas,
                               const std::vector<double>& y, const Mat& G);

// Shifts the identity multiplier down by max(0, violation) + 1e-12 so the
// returned point is exactly feasible. gammas[identity_index] must be the
// identity; throws Error("IdentityConstraintMissing") otherwise.
std::vector<double> restore_dual_feasibility(const std::vector<Mat>& gammas,
                                             int identity_index,
                                             std::vector<double> y,
                                             const Mat& G);

// Plain-text sparse triplet dump (block, row, col, re, im) of a program for
// external cross-checking. One record per line:
//   block <idx> <psd|nonneg|quad> <dim>
//   obj <block> <row> <col> <re> <im>
//   eq <i> rhs <b> / eqentry <i> <block> <row> <col> <re> <im>
//   range <j> lo <l> hi <u> / rangeentry <j> <block> <row> <col> <re> <im>
void dump_program(const ConeProgram& p, std::ostream& os);

}  // namespace keyforge::sdp
