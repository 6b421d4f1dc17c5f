#pragma once
// Decoy-state analysis for weak-coherent-pulse BB84. The source emits phase-
// randomized coherent pulses, so the channel sees a Poissonian photon-number
// mixture; observed gains at several intensities pin down the single-photon
// yield and error rate through a pair of small linear programs. Both bounds
// are certified: the reported numbers are dual objective values, valid by
// weak duality regardless of how accurately the solver converged.
//
// Modeling assumption baked into both LPs: a vacuum pulse can only click via
// detector noise, which lands on either outcome with probability 1/2, so the
// zero-photon error yield is pinned at half the zero-photon yield. Without
// this standard convention two-intensity data says nothing about Y_1 (the
// weak-pulse gain can be blamed entirely on the vacuum component).

#include <vector>

#include "keyforge/linalg.hpp"

namespace keyforge::decoy {

// Observed counting statistics of a decoy-state experiment. The signal
// intensity comes first; gains[k] is the probability that intensity k
// produced a click, error_gains[k] the probability it produced a wrong-basis
// click (so error_gains[k] <= gains[k]). cutoff is the largest photon number
// carried explicitly; everything above it enters the LPs as a remainder
// interval bounded by the Poisson tail, which keeps the bounds valid for any
// behaviour of the truncated part.
struct DecoyModel {
  std::vector<double> intensities;
  std::vector<double> gains;
  std::vector<double> error_gains;
  int cutoff = 10;
};

// Throws Error("OutOfRange") unless: >= 2 intensities, all > 0; gains and
// error_gains match in length with 0 <= E_k <= Gamma_k <= 1; cutoff >= 2.
void check_model(const DecoyModel& m);

// e^{-mu} mu^n / n!  for mu > 0, n >= 0 (else Error("OutOfRange")).
double poisson_pn(double mu, int n);

// Probability mass above the cutoff: 1 - sum_{n<=cutoff} p_n(mu), clamped
// nonnegative.
double poisson_tail(double mu, int cutoff);

struct DecoyBounds {
  double y1_lower = 0.0;  // certified lower bound on the single-photon yield
  double e1_upper = 1.0;  // certified upper bound on the single-photon QBER
  double y1_gap = 0.0;    // duality gap of the yield LP at termination
  double b1_gap = 0.0;    // duality gap of the error-yield LP
};

// Solves the two decoy LPs over yields Y_n in [0,1] and error yields
// b_n in [0, Y_n] (b_0 = Y_0/2), n <= cutoff:
//
//   sum_n p_n(mu_k) Y_n  in  [Gamma_k - tail_k, Gamma_k]
//   sum_n p_n(mu_k) b_n  in  [E_k     - tail_k, E_k]
//
// y1_lower minimizes Y_1; e1_upper is (max b_1) / y1_lower, clamped to [0,1],
// and 1 when y1_lower vanishes. Rows are widened by 2e-10 so that exactly
// saturated data (e.g. a lossless channel) keeps an interior point; widening
// only relaxes the programs, so the bounds stay conservative.
// Throws Error("InfeasibleObservations") when no channel explains the data.
DecoyBounds decoy_lp_bounds(const DecoyModel& m);

// Asymptotic decoy-state key rate per signal pulse:
//   r = p_1(mu_signal) * Y1_lower * (1 - h(q_x1_upper))
//       - gains[0] * h(q_z) * f_ec
// with h the binary entropy. q_x1_upper is the caller's certified upper bound
// on the single-photon error rate (typically e1_upper, pre-widened for finite
// statistics if desired); q_z is the observed signal QBER paying the error-
// correction cost. Requires q's in [0, 1/2] and f_ec >= 1.
double decoy_asymptotic_rate(const DecoyModel& m, double q_x1_upper,
                             double q_z, double f_ec = 1.0);

}  // namespace keyforge::decoy
