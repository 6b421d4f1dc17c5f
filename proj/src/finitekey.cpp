#include "keyforge/finitekey.hpp"

#include <cmath>
#include <string>

namespace keyforge::finitekey {

namespace {

constexpr double kLn2 = 0.6931471805599453;

double log2_safe(double x) { return std::log(x) / kLn2; }

void require(bool ok, const char* code, const std::string& msg) {
  if (!ok) throw Error(code, msg);
}

void check_eps(double e, const char* name) {
  require(e > 0.0 && e < 1.0, "OutOfRange",
          std::string(name) + " must lie in (0,1)");
}

}  // namespace

void check_security(const SecurityParams& p) {
  check_eps(p.eps_pa, "eps_pa");
  check_eps(p.eps_ir, "eps_ir");
  check_eps(p.eps_smooth, "eps_smooth");
  require(p.eps_sec() < 1.0, "OutOfRange", "eps_pa + 2 eps_smooth must be < 1");
}

void check_run(const FiniteRunSpec& r) {
  require(r.m >= 1 && r.m < r.n, "OutOfRange", "need 1 <= m < n");
  require(r.qx_test >= 0.0 && r.qx_test <= 0.5, "OutOfRange",
          "qx_test must lie in [0, 1/2]");
  require(r.qz_test >= 0.0 && r.qz_test <= 0.5, "OutOfRange",
          "qz_test must lie in [0, 1/2]");
  require(r.d_a >= 1 && r.d >= 1, "OutOfRange", "dimensions must be >= 1");
}

double binary_entropy(double q) {
  require(q >= 0.0 && q <= 1.0, "OutOfRange",
          "binary_entropy: argument outside [0,1]");
  if (q == 0.0 || q == 1.0) return 0.0;
  return -q * log2_safe(q) - (1.0 - q) * log2_safe(1.0 - q);
}

double serfling_bound(std::int64_t n, std::int64_t m, double beta) {
  require(m >= 1 && m < n, "OutOfRange", "serfling_bound: need 1 <= m < n");
  require(beta >= 0.0, "OutOfRange", "serfling_bound: beta must be >= 0");
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return std::exp(-2.0 * beta * beta * nn * mm / (nn - mm + 1.0));
}

double serfling_deviation(std::int64_t n, std::int64_t m, double eps) {
  require(m >= 1 && m < n, "OutOfRange",
          "serfling_deviation: need 1 <= m < n");
  check_eps(eps, "eps");
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return std::sqrt((nn - mm + 1.0) * (-std::log(eps)) / (2.0 * nn * mm));
}

double aep_delta(double eps, double eta) {
  return 4.0 * log2_safe(eta) * std::sqrt(log2_safe(2.0 / (eps * eps)));
}

double aep_correction(std::int64_t n, double h, double hmin_single,
                      double hmax_single, double eps) {
  check_eps(eps, "eps");
  const double threshold = std::ceil(1.6 * log2_safe(2.0 / (eps * eps)));
  require(static_cast<double>(n) >= threshold, "TooFewRounds",
          "aep_correction needs n >= " +
              std::to_string(static_cast<std::int64_t>(threshold)));
  const double eta =
      std::exp2(-0.5 * hmin_single) + std::exp2(0.5 * hmax_single) + 1.0;
  const double nn = static_cast<double>(n);
  return nn * h - std::sqrt(nn) * aep_delta(eps, eta);
}

KeyLength key_length_leftover(double hmin_eps_bits, double leak_bits,
                              double eps_pa) {
  check_eps(eps_pa, "eps_pa");
  KeyLength out;
  out.raw = hmin_eps_bits - leak_bits - 2.0 * log2_safe(1.0 / (2.0 * eps_pa));
  out.bits = (out.raw > 0.0)
                 ? static_cast<std::int64_t>(std::floor(out.raw))
                 : 0;
  return out;
}

double leak_ir_bound(std::int64_t n, double q, double eps_prime,
                     double eps_ir, HmaxModel model, double f_ec) {
  require(n >= 1, "OutOfRange", "leak_ir_bound: n must be >= 1");
  require(q >= 0.0 && q <= 1.0, "OutOfRange",
          "leak_ir_bound: q must lie in [0,1]");
  check_eps(eps_prime, "eps_prime");
  check_eps(eps_ir, "eps_ir");
  require(f_ec >= 1.0, "OutOfRange", "leak_ir_bound: f_ec must be >= 1");
  const double nn = static_cast<double>(n);
  double hmax = 0.0;
  switch (model) {
    case HmaxModel::Aep: {
      const double half = 0.5 * eps_prime;
      const double threshold = std::ceil(1.6 * log2_safe(2.0 / (half * half)));
      require(nn >= threshold, "TooFewRounds",
              "leak_ir_bound (Aep) needs n >= " +
                  std::to_string(static_cast<std::int64_t>(threshold)));
      hmax = nn * binary_entropy(q) +
             std::sqrt(nn) * aep_delta(half, 2.0 + std::sqrt(2.0));
      break;
    }
    case HmaxModel::Plain:
      hmax = nn * binary_entropy(q) * f_ec;
      break;
  }
  const double eps2 = eps_prime * eps_prime;
  return hmax + log2_safe(8.0 / eps2 + 2.0 / (2.0 - eps_prime)) +
         log2_safe(1.0 / eps_ir);
}

EurResult eur_bb84_key_length(const FiniteRunSpec& run,
                              const SecurityParams& params) {
  check_run(run);
  check_security(params);
  EurResult out;
  const std::int64_t total = run.n + run.m;
  const double beta = serfling_deviation(total, run.m, params.eps_smooth);
  out.qx_upper = std::min(run.qx_test + beta, 0.5);
  const double nn = static_cast<double>(run.n);
  const double hmin = nn * (1.0 - binary_entropy(out.qx_upper));
  out.leak = leak_ir_bound(run.n, run.qz_test, params.eps_ir, params.eps_ir,
                           HmaxModel::Aep);
  const KeyLength kl = key_length_leftover(hmin, out.leak, params.eps_pa);
  out.bits = kl.bits;
  out.raw = kl.raw;
  out.rate = static_cast<double>(kl.bits) / nn;
  return out;
}

Lifted postselection_lift(double l, double eps, std::int64_t n, int d) {
  require(d >= 1, "OutOfRange", "postselection_lift: d must be >= 1");
  require(n >= 1, "OutOfRange", "postselection_lift: n must be >= 1");
  require(eps > 0.0, "OutOfRange", "postselection_lift: eps must be > 0");
  const double k = static_cast<double>(d) * d - 1.0;
  const double lg = log2_safe(static_cast<double>(n) + 1.0);
  Lifted out;
  out.bits = l - 2.0 * k * lg;
  out.eps = std::exp2(log2_safe(eps) + k * lg);
  return out;
}

double eat_constant(int d_a, double grad_norm, double eps_p_omega) {
  require(d_a >= 1, "OutOfRange", "eat_constant: d_a must be >= 1");
  require(grad_norm >= 0.0 && std::isfinite(grad_norm), "OutOfRange",
          "eat_constant: gradient norm must be finite and >= 0");
  require(eps_p_omega > 0.0 && eps_p_omega <= 1.0, "OutOfRange",
          "eat_constant: eps * p_omega must lie in (0,1]");
  return 2.0 * (log2_safe(1.0 + 2.0 * d_a) + std::ceil(grad_norm)) *
         std::sqrt(1.0 - 2.0 * log2_safe(eps_p_omega));
}

double eat_rate(std::int64_t n, double h, int d_a, double grad_norm,
                double eps, double p_omega) {
  require(n >= 1, "OutOfRange", "eat_rate: n must be >= 1");
  check_eps(eps, "eps");
  require(p_omega > 0.0 && p_omega <= 1.0, "OutOfRange",
          "eat_rate: p_omega must lie in (0,1]");
  const double nn = static_cast<double>(n);
  return nn * h - eat_constant(d_a, grad_norm, eps * p_omega) * std::sqrt(nn);
}

}  // namespace keyforge::finitekey
