#pragma once
// Entanglement-based protocol scenarios: measurement/announcement Kraus
// operators, sifting, the key-map isometry, the composed maps G and Z
// represented on their joint support, source replacement for
// prepare-and-measure sources, detector-imperfection transformers, and the
// observable constraint set that defines the feasible states.

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "keyforge/linalg.hpp"

namespace keyforge::protocol {

struct Povm {
  std::vector<Mat> elements;  // outcome-indexed, Hermitian, PSD, sum to 1
  int basis = 0;              // label x
};

// Elements PSD within 1e-10, completeness within 1e-9; throws
// Error("InvalidPovm") otherwise.
void check_povm(const Povm& povm, int dim);

// One operator per basis, mapping the physical system into
// physical (x) basis-register (x) outcome-register. Basis-choice
// probabilities are folded in as sqrt(p_x) scalars so that
// sum_x K_x^dag K_x = 1.
struct KrausMeasurement {
  std::vector<Mat> operators;
  int d = 0;        // physical dimension
  int n_bases = 0;  // basis-register dimension
  int n_out = 0;    // outcome-register dimension (max outcomes over bases)
};

struct SiftingProjector {
  std::vector<std::pair<int, int>> kept;  // announcement pairs (x, y)
  Mat projector;  // diagonal 0/1 matrix on the enlarged space
};

struct KeyMapIsometry {
  int key_dim = 1;  // |X|
  Mat v;            // (key_dim * D) x D, V^dag V = 1
};

enum class ConstraintKind { Equality, Interval, Ellipsoid };

// Equality: Tr(op rho) = value. Interval: |Tr(op rho) - value| <= halfwidth.
// Ellipsoid: the deviation Tr(op rho) - value has variance covariance(0,0)
// and the membership radius is chi^2 = radius; backends without a quadratic
// cone may ignore or outer-approximate Ellipsoid entries -- dropping a
// constraint only enlarges the feasible set, so minimized lower bounds on
// entropies stay valid.
struct ObservableConstraint {
  Mat op;              // Hermitian
  double value = 0.0;  // midpoint for Interval
  ConstraintKind kind = ConstraintKind::Equality;
  double halfwidth = 0.0;
  Mat covariance;
  double radius = 0.0;
};

// Immutable after construction; safe to share across worker threads.
struct Scenario {
  int d_a = 2, d_b = 2;
  std::vector<Povm> povms_a, povms_b;
  // Basis-choice distributions; empty means uniform.
  std::vector<double> probs_a, probs_b;
  std::vector<std::pair<int, int>> kept_pairs;  // announcements (x, y) kept
  // g(x, a_x, y) -> key symbol; must cover every kept triple. Triples of
  // discarded announcements default to symbol 0 (they are removed by the
  // sifting projector before the key map can see them).
  std::map<std::tuple<int, int, int>, int> key_map;
  int key_dim = 2;  // |X|
  std::vector<ObservableConstraint> constraints;  // includes Tr(rho) = 1
  std::optional<Mat> fixed_rho;                   // diagnostics only
};

// Structural validation: dimensions, POVM validity, basis distributions,
// kept pairs in range, Hermitian constraint operators, and the presence of
// the identity constraint. Joint satisfiability of the constraint list is
// the business of the solver-side feasibility solve.
void check_scenario(const Scenario& sc);

// Index of the Tr(rho) = 1 constraint; throws
// Error("IdentityConstraintMissing") when absent.
int identity_constraint_index(const Scenario& sc);

struct MeasurementMap {
  KrausMeasurement alice, bob;
  std::vector<Mat> joint;     // K_x^A (x) K_y^B, row-major over (x, y)
  std::vector<int> out_dims;  // {d_a, nb_a, no_a, d_b, nb_b, no_b}
};

// M(rho) = sum_xy (K_x^A (x) K_y^B) rho (.)^dag; trace preserving once the
// basis probabilities are folded in.
MeasurementMap build_measurement_map(const Scenario& sc);

SiftingProjector build_sifting(const Scenario& sc);

// Tr(Pi sigma Pi) for sigma on the enlarged space.
double p_pass(const Mat& sigma, const SiftingProjector& pi);

// Throws Error("IncompleteKeyMap") when g misses a kept triple or maps one
// outside the key alphabet.
KeyMapIsometry build_keymap(const Scenario& sc);

// G(rho) = V Pi M(rho) Pi V^dag and the pinching Z on the key register,
// both stored compressed: w holds an orthonormal basis of the joint range
// of the pinched Kraus operators P_j V Pi (K_x (x) K_y), one group of
// columns per key symbol, so every basis vector lies in a single pinching
// block. Traces, relative entropies, and the pinching structure are
// invariant under this isometry; d_c is the effective output dimension that
// enters perturbation bookkeeping downstream.
struct ProtocolMaps {
  MeasurementMap meas;
  SiftingProjector sifting;
  KeyMapIsometry keymap;
  std::vector<Mat> kraus_full;  // V Pi (K_x (x) K_y): (key_dim * D) x d_in
  std::vector<Mat> kraus;       // compressed: w^dag kraus_full, d_c x d_in
  std::vector<Mat> pinching;    // compressed 0/1 diagonal projectors, per symbol
  std::vector<int> block_of;    // compressed row -> key symbol
  Mat w;                        // isometry, (key_dim * D) x d_c
  int d_in = 0;
  int d_full = 0;
  int d_c = 0;
};

ProtocolMaps build_protocol_maps(const Scenario& sc);

// Compressed representations (d_c x d_c outputs).
Mat apply_G(const ProtocolMaps& pm, const Mat& rho);
Mat apply_Z(const ProtocolMaps& pm, const Mat& sigma);
// Adjoint of the compressed G: sum_k F_k^dag Y F_k.
Mat apply_G_adjoint(const ProtocolMaps& pm, const Mat& y);
// Uncompressed variants, for cross-checks.
Mat apply_G_full(const ProtocolMaps& pm, const Mat& rho);
Mat apply_Z_full(const ProtocolMaps& pm, const Mat& sigma);

// Tr G(rho); equals Tr(Pi M(rho) Pi).
double p_pass(const ProtocolMaps& pm, const Mat& rho);

struct PreparedState {
  Mat ket;        // column on C^{d_b}, normalized
  double p = 0.0; // joint probability p(a, x)
};

struct SourceReplacement {
  Mat psi;      // column on A (x) B; A indexes the prepared states
  int d_a = 0;  // number of prepared states
  int d_b = 0;
};

// |psi> = sum_i sqrt(p_i) |i>_A |phi_i>_B. The diagonal of Alice's marginal
// embeds the preparation distribution. Throws Error("InvalidDistribution")
// when probabilities are negative, do not sum to 1 within 1e-9, or a ket is
// not normalized within 1e-9.
SourceReplacement source_replacement(const std::vector<PreparedState>& prep);

// Pads every element with a direct-sum 0 on a fresh dimension and appends
// the completion 1 - sum of the padded elements, so completeness holds by
// construction. Accepts subnormalized element sets (sum <= 1), e.g. after
// efficiency scaling.
Povm extend_noclick(const Povm& povm);

// Scales element a by eta[a], pads by a fresh dimension, and appends the
// completion element. Throws Error("EfficiencyOutOfRange") unless every
// eta lies in [0, 1], Error("DimensionMismatch") on a length mismatch.
Povm apply_efficiency(const Povm& povm, const std::vector<double>& eta);

// <psi|rho|psi> >= 1 - eps as a one-sided interval around |psi><psi|.
ObservableConstraint fidelity_constraint(const Mat& psi, double eps);

enum class Granularity { Coarse, Fine };

// Coarse: the two basis error-rate equalities plus identity. Fine: identity
// plus all 16 joint outcome probabilities of a Bell-diagonal reference state
// reproducing the requested error rates (the isotropic/depolarized state
// when qz == qx, independent bit/phase flips otherwise). Throws
// Error("InvalidQber") outside [0, 1/2]. The identity constraint comes
// first.
std::vector<ObservableConstraint> bb84_constraints(double qz, double qx,
                                                   Granularity g);

// Fully assembled qubit BB84 scenario: Z/X projective POVMs on both sides,
// uniform basis choice, matched-basis sifting, outcome-copy key map.
Scenario bb84_scenario(double qz, double qx, Granularity g);

// BB84 with a lossy detection unit on Bob's side: his POVMs gain a no-click
// outcome via apply_efficiency(eta), and the constraint values are read off
// the honest lossy channel (depolarized Bell state with error rate q,
// detected with probability eta). Throws Error("EfficiencyOutOfRange").
Scenario bb84_lossy_scenario(double q, double eta);

}  // namespace keyforge::protocol
