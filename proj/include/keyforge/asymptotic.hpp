#pragma once

#include <optional>
#include <string>
#include <vector>

#include "keyforge/linalg.hpp"
#include "keyforge/protocol.hpp"
#include "keyforge/sdpcore.hpp"

// Certified lower bounds on the asymptotic secret-key rate. Two independent
// backends produce lower bounds on the conditional entropy H(A|E): a
// Frank-Wolfe descent on f(rho) = D(G(rho) || Z(G(rho))) whose final iterate
// is converted into a certificate by linearization + SDP duality, and a
// Gauss-Radau relaxation that bounds the relative entropy by a fixed-size SDP.
// Closed-form reference rates (Devetak-Winter assembly, CHSH device-independent
// curve) live here as well.

namespace keyforge::asymptotic {

// --------------------------------------------------------------------------
// quadrature

struct QuadratureRule {
  int m = 0;
  std::vector<double> nodes;    // in (0, 1], last node == 1
  std::vector<double> weights;  // positive, sum to 1
};

// m-point rule on [0,1] with a fixed endpoint node at t=1, exact for
// polynomials up to degree 2m-2. Built from the endpoint-modified Jacobi
// matrix of shifted Legendre polynomials (Golub-Welsch). The endpoint weight
// always equals 1/m^2.
QuadratureRule gauss_radau_rule(int m);

// --------------------------------------------------------------------------
// Frank-Wolfe objective

// Correction subtracted from the linearized dual bound when the channel
// output is mixed with white noise of weight eps on a d_prime-dimensional
// space: 2 eps (d'-1) log2(d' / (eps (d'-1))).
double zeta_epsilon(double eps, int d_prime);

// Largest admissible perturbation for a d_prime-dimensional output.
double max_perturbation(int d_prime);

// f_eps(rho) = D(G_eps(rho) || Z(G_eps(rho))) in bits, where
// G_eps = D_eps o G and D_eps mixes in eps of the maximally mixed state on
// the compressed output space. Throws PerturbationOutOfRange unless
// 0 < eps <= 1/(e (d_c - 1)).
double objective_f(const Mat& rho, const protocol::ProtocolMaps& maps,
                   double epsilon_pert);
double objective_f(const Mat& rho, const protocol::Scenario& sc,
                   double epsilon_pert);

// Gradient of f_eps at rho, in the transposed-pairing convention
// Tr((Delta)^T grad) = d/dh f(rho + h Delta). Hermitian.
Mat gradient_f(const Mat& rho, const protocol::ProtocolMaps& maps,
               double epsilon_pert);
Mat gradient_f(const Mat& rho, const protocol::Scenario& sc,
               double epsilon_pert);

// --------------------------------------------------------------------------
// Frank-Wolfe minimization

struct FrankWolfeOptions {
  double epsilon_stop = 1e-6;    // halt when |Tr((Delta rho)^T grad)| drops below
  int max_iterations = 300;
  double line_search_tol = 1e-6;  // golden-section interval width on lambda
  double epsilon_pert = 1e-10;
  sdp::SolveOptions sdp;  // used for the feasibility solve and subproblems
};

struct FrankWolfeState {
  Mat iterate;          // final rho, feasible within solver tolerance
  double objective = 0;  // f_eps(iterate), bits
  Mat gradient;         // grad f_eps at the iterate
  double linear_gap = 0;  // Tr((Delta rho)^T grad) of the last subproblem
  int iteration = 0;      // subproblem solves performed
  double epsilon_pert = 0;
  bool converged = false;  // |linear_gap| < epsilon_stop
};

// State in S closest to the maximally mixed state (Frobenius norm), found by
// a second-order-cone solve. Throws InfeasibleScenario when S is empty.
// Ellipsoid-kind constraints are ignored here and in the Frank-Wolfe
// subproblems (the enlarged set only loosens the certified bound).
Mat find_feasible_state(const protocol::Scenario& sc,
                        const sdp::SolveOptions& opts = {});

// Minimize f_eps over S by conditional-gradient descent with exact
// (golden-section) line search. The objective is nonincreasing across
// iterations; the returned state is valid certificate input even when the
// gap tolerance was not reached.
FrankWolfeState frank_wolfe_minimize(const protocol::Scenario& sc,
                                     const FrankWolfeOptions& opts = {});

struct FwCertificate {
  double bound = 0;  // beta_eps - zeta_eps, certified lower bound on min f
  double beta = 0;
  double zeta = 0;
  double dual_violation = 0;  // lambda_max residual before restoration
  double restored_violation = 0;  // after shifting the identity multiplier
};

// Linearize f_eps at the iterate and bound min_S f from below through the
// dual of the resulting linear SDP. The dual multiplier vector is restored
// to exact feasibility by shifting the identity-constraint multiplier before
// evaluation, so the certificate holds irrespective of solver tolerances.
// Throws IdentityConstraintMissing when the scenario lacks Tr(rho) = 1.
FwCertificate certify_fw(const FrankWolfeState& state,
                         const protocol::Scenario& sc,
                         const sdp::SolveOptions& opts = {});
double certified_bound_fw(const FrankWolfeState& state,
                          const protocol::Scenario& sc,
                          const sdp::SolveOptions& opts = {});

// --------------------------------------------------------------------------
// Gauss-Radau relaxation

// Certified lower bound on min_S H(A|E) in bits when Alice keys from POVM
// x_star on every round. Builds the block-matrix SDP with variables
// sigma, zeta_{a,i}, eta_{a,i}, theta_{a,i} for each outcome a and each
// node i of the m-point rule (endpoint included); reports the solver's dual
// objective plus c_m = sum_i w_i / (t_i ln 2). Requires m >= 2. Throws
// SolverNotConverged when no weak-duality certificate is available.
double gauss_radau_bound(const protocol::Scenario& sc, int x_star, int m,
                         const sdp::SolveOptions& opts = {});

// --------------------------------------------------------------------------
// min-entropy

// Certified lower bound on H_min(A|E) = -log2 p_guess in bits for the key
// POVM acting on Alice's half. With rho_fixed: purify, condition Eve on the
// outcome, and bound the optimal discrimination POVM from the dual side.
// Without: bound the guessing probability over every feasible state via the
// ensemble-decomposition SDP. Always <= H(A|E) of the same state.
double hmin_bound(const protocol::Scenario& sc, const protocol::Povm& key_povm,
                  const std::optional<Mat>& rho_fixed = std::nullopt,
                  const sdp::SolveOptions& opts = {});

// --------------------------------------------------------------------------
// rate assembly

struct DwRate {
  double raw = 0;      // hae_bound - ec_term, may be negative
  double clamped = 0;  // max(raw, 0)
};

// r_inf = H(A|E) - H(A|B).
DwRate devetak_winter_rate(double hae_bound, double ec_term);

// Classical error-correction cost H(Abar | Bbar, announcements) per sifted
// round, evaluated on a feasible state.
double error_correction_term(const protocol::Scenario& sc, const Mat& rho);

// Sifting probability; a protocol constant (complete POVMs make it
// state-independent).
double sifting_probability(const protocol::Scenario& sc);

struct KeyRateReport {
  std::string method;
  double hae_bound = 0;  // certified lower bound on min H(A|E), bits
  double ec_term = 0;    // h(Q) or H(A|B)
  double raw_rate = 0;
  double clamped_rate = 0;
  double certificate_residual = 0;
  int iterations = 0;
  double runtime_seconds = 0;
};

// Full Frank-Wolfe pipeline: minimize, certify, convert to a per-sifted-round
// entropy by dividing out the sifting probability, subtract the
// error-correction term.
KeyRateReport frank_wolfe_report(const protocol::Scenario& sc, double ec_term,
                                 const FrankWolfeOptions& opts = {});

// Gauss-Radau pipeline (the relaxation already yields H(A|E) per round).
KeyRateReport gauss_radau_report(const protocol::Scenario& sc, int x_star,
                                 int m, double ec_term,
                                 const sdp::SolveOptions& opts = {});

// Device-independent CHSH reference curve:
// 1 - h(1/2 + 1/2 sqrt((S/2)^2 - 1)) - h(Q). Throws SOutOfRange unless
// 2 <= S <= 2 sqrt(2) and 0 <= Q <= 1/2.
double chsh_di_rate(double S, double Q);

}  // namespace keyforge::asymptotic
