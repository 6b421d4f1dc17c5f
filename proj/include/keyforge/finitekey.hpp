#pragma once

#include <cstdint>

#include "keyforge/linalg.hpp"

// Finite-size key-length accounting: leftover hashing, reconciliation leak
// bounds, asymptotic-equipartition and entropy-accumulation corrections,
// Serfling sampling deviations, the entropic-uncertainty BB84 key length,
// and the postselection lift to coherent attacks. Everything here is scalar
// arithmetic on certified inputs; the entropic bounds themselves come from
// the asymptotic module.

namespace keyforge::finitekey {

// --------------------------------------------------------------------------
// parameters

struct SecurityParams {
  double eps_pa = 1e-10;      // privacy-amplification failure
  double eps_ir = 1e-10;      // reconciliation (correctness) failure
  double eps_smooth = 1e-10;  // smoothing / parameter-estimation failure

  double eps_sec() const { return eps_pa + 2.0 * eps_smooth; }
  double eps_cor() const { return eps_ir; }
};

// Throws OutOfRange unless every epsilon is in (0,1) and eps_sec() < 1.
void check_security(const SecurityParams& p);

struct FiniteRunSpec {
  std::int64_t n = 0;    // key-generation rounds
  std::int64_t m = 0;    // test rounds (sampled without replacement)
  double qx_test = 0.0;  // observed X-basis test error rate
  double qz_test = 0.0;  // observed Z-basis error rate (reconciliation model)
  int d_a = 2;           // local key dimension
  int d = 4;             // enlarged per-round dimension (postselection)
};

// Throws OutOfRange unless 1 <= m, 1 <= n, rates in [0, 1/2], dims >= 1.
void check_run(const FiniteRunSpec& r);

// --------------------------------------------------------------------------
// scalar bounds

// h(q) = -q log2 q - (1-q) log2(1-q); h(0) = h(1) = 0. Throws OutOfRange
// outside [0,1].
double binary_entropy(double q);

// Probability that a size-m sample average (without replacement, out of n
// values) undershoots the population average by more than beta:
// exp(-2 beta^2 n m / (n - m + 1)).
double serfling_bound(std::int64_t n, std::int64_t m, double beta);

// Exact inversion: the beta making serfling_bound equal eps.
double serfling_deviation(std::int64_t n, std::int64_t m, double eps);

// Lower bound on the smooth min-entropy of n iid rounds:
// n H - sqrt(n) delta(eps, eta), with eta = sqrt(2^-Hmin) + sqrt(2^Hmax) + 1
// and delta = 4 log2(eta) sqrt(log2(2/eps^2)). Throws TooFewRounds (message
// carries the threshold) when n < ceil((8/5) log2(2/eps^2)).
double aep_correction(std::int64_t n, double h, double hmin_single,
                      double hmax_single, double eps);
double aep_delta(double eps, double eta);

// --------------------------------------------------------------------------
// key length

struct KeyLength {
  std::int64_t bits = 0;  // floor of raw, clamped at zero
  double raw = 0.0;       // hmin - leak - 2 log2(1/(2 eps_pa)), unclamped
};

// Leftover-hash key length from a smooth-min-entropy budget and a leak.
KeyLength key_length_leftover(double hmin_eps_bits, double leak_bits,
                              double eps_pa);

enum class HmaxModel {
  Aep,    // n h(Q) + sqrt(n) delta(eps'/2, 2 + sqrt(2))   (certified)
  Plain,  // n h(Q) f_EC                                   (engineering model)
};

// Upper bound on the bits disclosed by one-way reconciliation:
// Hmax^{eps'/2}(A|B) + log2(8/eps'^2 + 2/(2-eps')) + log2(1/eps_ir).
// The Hmax term follows the selected model; Plain uses efficiency f_ec >= 1.
double leak_ir_bound(std::int64_t n, double q, double eps_prime,
                     double eps_ir, HmaxModel model, double f_ec = 1.16);

// --------------------------------------------------------------------------
// composed finite-size keys

struct EurResult {
  std::int64_t bits = 0;
  double rate = 0.0;      // bits / n
  double raw = 0.0;       // unclamped real-valued length
  double qx_upper = 0.0;  // test rate plus sampling deviation, capped at 1/2
  double leak = 0.0;
};

// BB84 key length from the entropic uncertainty relation: m test rounds are
// drawn without replacement from the n+m sifted rounds and measured in X;
// the key comes from the remaining n. Qx is lifted by the Serfling deviation
// at eps_smooth, Hmin >= n (1 - h(Qx_upper)), the reconciliation leak is
// taken on qz_test (Aep model, eps' = eps_ir), and the leftover hash yields
// the length. The smoothing and sampling failures share eps_smooth.
EurResult eur_bb84_key_length(const FiniteRunSpec& run,
                              const SecurityParams& params);

struct Lifted {
  double bits = 0.0;  // l - 2 (d^2 - 1) log2(n + 1)
  double eps = 0.0;   // (n + 1)^(d^2 - 1) eps
};

// Postselection lift from collective to coherent attacks for a
// permutation-invariant protocol on d-dimensional per-round systems. d = 1
// is the identity lift.
Lifted postselection_lift(double l, double eps, std::int64_t n, int d);

// First-order entropy-accumulation rate: n h - c sqrt(n), where h is a
// min-tradeoff threshold certified elsewhere. The constant is
// 2 [log2(1 + 2 d_a) + ceil(grad_norm)] sqrt(1 - 2 log2(eps p_omega)).
double eat_constant(int d_a, double grad_norm, double eps_p_omega);
double eat_rate(std::int64_t n, double h, int d_a, double grad_norm,
                double eps, double p_omega);

}  // namespace keyforge::finitekey
