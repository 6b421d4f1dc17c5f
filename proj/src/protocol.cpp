#include "keyforge/protocol.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

namespace keyforge::protocol {

namespace {

Mat unit_col(int n, int i) {
  Mat e(n, 1);
  e(i, 0) = 1.0;
  return e;
}

std::vector<double> resolve_probs(const std::vector<double>& probs, size_t nb,
                                  const char* who) {
  if (probs.empty()) return std::vector<double>(nb, 1.0 / double(nb));
  if (probs.size() != nb)
    throw Error("InvalidDistribution",
                std::string(who) + ": one probability per basis required");
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0)
      throw Error("InvalidDistribution",
                  std::string(who) + ": negative basis probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw Error("InvalidDistribution",
                std::string(who) + ": basis probabilities must sum to 1");
  return probs;
}

int max_outcomes(const std::vector<Povm>& povms) {
  size_t m = 1;
  for (const auto& p : povms) m = std::max(m, p.elements.size());
  return int(m);
}

struct Layout {
  int d_a, nb_a, no_a, d_b, nb_b, no_b;
  int enlarged() const { return d_a * nb_a * no_a * d_b * nb_b * no_b; }
  // (i_a, x, a, i_b, y, b) for a row-major enlarged index
  std::array<int, 6> split(int idx) const {
    std::array<int, 6> f{};
    f[5] = idx % no_b; idx /= no_b;
    f[4] = idx % nb_b; idx /= nb_b;
    f[3] = idx % d_b;  idx /= d_b;
    f[2] = idx % no_a; idx /= no_a;
    f[1] = idx % nb_a; idx /= nb_a;
    f[0] = idx;
    return f;
  }
};

Layout layout_of(const Scenario& sc) {
  return Layout{sc.d_a, int(sc.povms_a.size()), max_outcomes(sc.povms_a),
                sc.d_b, int(sc.povms_b.size()), max_outcomes(sc.povms_b)};
}

KrausMeasurement party_kraus(const std::vector<Povm>& povms,
                             const std::vector<double>& probs, int dim) {
  KrausMeasurement km;
  km.d = dim;
  km.n_bases = int(povms.size());
  km.n_out = max_outcomes(povms);
  for (int x = 0; x < km.n_bases; ++x) {
    check_povm(povms[x], dim);
    Mat k = Mat::zeros(dim * km.n_bases * km.n_out, dim);
    for (size_t a = 0; a < povms[x].elements.size(); ++a)
      k = k + kron(kron(herm_sqrt_psd(povms[x].elements[a]),
                        unit_col(km.n_bases, x)),
                   unit_col(km.n_out, int(a)));
    km.operators.push_back(std::sqrt(probs[x]) * k);
  }
  return km;
}

int key_symbol(const Scenario& sc, int x, int a, int y) {
  auto it = sc.key_map.find({x, a, y});
  return it == sc.key_map.end() ? 0 : it->second;
}

// Phi+, Psi+, Phi-, Psi- as 4x1 columns.
std::array<Mat, 4> bell_basis() {
  const double s = 1.0 / std::sqrt(2.0);
  Mat phip(4, 1), psip(4, 1), phim(4, 1), psim(4, 1);
  phip(0, 0) = s;  phip(3, 0) = s;
  psip(1, 0) = s;  psip(2, 0) = s;
  phim(0, 0) = s;  phim(3, 0) = -s;
  psim(1, 0) = s;  psim(2, 0) = -s;
  return {phip, psip, phim, psim};
}

// Bell-diagonal state with Z-error qz and X-error qx: the isotropic state
// when the rates agree, independent bit/phase flips otherwise.
Mat bb84_reference_state(double qz, double qx) {
  auto bell = bell_basis();
  std::array<double, 4> lam{};
  if (std::abs(qz - qx) <= 1e-12) {
    const double v = 1.0 - 2.0 * qz;
    lam = {(1.0 + 3.0 * v) / 4.0, (1.0 - v) / 4.0, (1.0 - v) / 4.0,
           (1.0 - v) / 4.0};
  } else {
    lam = {(1.0 - qz) * (1.0 - qx), qz * (1.0 - qx), (1.0 - qz) * qx,
           qz * qx};
  }
  Mat rho = Mat::zeros(4, 4);
  for (int i = 0; i < 4; ++i)
    rho = rho + lam[i] * (bell[i] * adjoint(bell[i]));
  return hermitize(rho);
}

Povm z_povm() {
  Mat p0(2, 2), p1(2, 2);
  p0(0, 0) = 1.0;
  p1(1, 1) = 1.0;
  return Povm{{p0, p1}, 0};
}

Povm x_povm() {
  Mat pp(2, 2), pm(2, 2);
  pp(0, 0) = pp(0, 1) = pp(1, 0) = pp(1, 1) = 0.5;
  pm(0, 0) = pm(1, 1) = 0.5;
  pm(0, 1) = pm(1, 0) = -0.5;
  return Povm{{pp, pm}, 1};
}

void check_qber(double q) {
  if (!(q >= 0.0 && q <= 0.5))
    throw Error("InvalidQber", "error rate outside [0, 1/2]");
}

}  // namespace

void check_povm(const Povm& povm, int dim) {
  if (povm.elements.empty()) throw Error("InvalidPovm", "empty POVM");
  Mat sum = Mat::zeros(dim, dim);
  for (const Mat& m : povm.elements) {
    if (!m.square() || m.rows != dim)
      throw Error("InvalidPovm", "element dimension mismatch");
    if (!is_hermitian(m, 1e-10))
      throw Error("InvalidPovm", "element not Hermitian");
    Spectrum sp = herm_eig(hermitize(m));
    if (!sp.eigenvalues.empty() && sp.eigenvalues.front() < -1e-10)
      throw Error("InvalidPovm", "element not positive semidefinite");
    sum = sum + m;
  }
  if (max_abs(sum - Mat::identity(dim)) > 1e-9)
    throw Error("InvalidPovm", "elements do not sum to the identity");
}

void check_scenario(const Scenario& sc) {
  if (sc.d_a <= 0 || sc.d_b <= 0)
    throw Error("DimensionMismatch", "nonpositive local dimension");
  if (sc.povms_a.empty() || sc.povms_b.empty())
    throw Error("InvalidPovm", "each party needs at least one basis");
  resolve_probs(sc.probs_a, sc.povms_a.size(), "Alice");
  resolve_probs(sc.probs_b, sc.povms_b.size(), "Bob");
  for (const auto& p : sc.povms_a) check_povm(p, sc.d_a);
  for (const auto& p : sc.povms_b) check_povm(p, sc.d_b);
  for (auto [x, y] : sc.kept_pairs)
    if (x < 0 || x >= int(sc.povms_a.size()) || y < 0 ||
        y >= int(sc.povms_b.size()))
      throw Error("DimensionMismatch", "kept pair outside the basis range");
  if (sc.key_dim < 1) throw Error("IncompleteKeyMap", "empty key alphabet");
  const int d = sc.d_a * sc.d_b;
  for (const auto& c : sc.constraints) {
    if (!c.op.square() || c.op.rows != d)
      throw Error("DimensionMismatch", "constraint operator dimension");
    check_hermitian(c.op, 1e-10);
    if (c.halfwidth < 0.0)
      throw Error("IllFormedProgram", "negative interval half-width");
  }
  identity_constraint_index(sc);
}

int identity_constraint_index(const Scenario& sc) {
  const int d = sc.d_a * sc.d_b;
  for (size_t i = 0; i < sc.constraints.size(); ++i) {
    const auto& c = sc.constraints[i];
    if (c.kind != ConstraintKind::Equality) continue;
    if (c.op.rows != d || !c.op.square()) continue;
    if (max_abs(c.op - Mat::identity(d)) <= 1e-12 &&
        std::abs(c.value - 1.0) <= 1e-12)
      return int(i);
  }
  throw Error("IdentityConstraintMissing",
              "scenario lacks the Tr(rho) = 1 constraint");
}

MeasurementMap build_measurement_map(const Scenario& sc) {
  MeasurementMap mm;
  mm.alice = party_kraus(sc.povms_a,
                         resolve_probs(sc.probs_a, sc.povms_a.size(), "Alice"),
                         sc.d_a);
  mm.bob = party_kraus(sc.povms_b,
                       resolve_probs(sc.probs_b, sc.povms_b.size(), "Bob"),
                       sc.d_b);
  for (const auto& ka : mm.alice.operators)
    for (const auto& kb : mm.bob.operators) mm.joint.push_back(kron(ka, kb));
  mm.out_dims = {mm.alice.d, mm.alice.n_bases, mm.alice.n_out,
                 mm.bob.d,   mm.bob.n_bases,   mm.bob.n_out};
  return mm;
}

SiftingProjector build_sifting(const Scenario& sc) {
  const Layout L = layout_of(sc);
  std::set<std::pair<int, int>> kept;
  for (auto [x, y] : sc.kept_pairs) {
    if (x < 0 || x >= L.nb_a || y < 0 || y >= L.nb_b)
      throw Error("DimensionMismatch", "kept pair outside the basis range");
    kept.insert({x, y});
  }
  const int D = L.enlarged();
  Mat pi = Mat::zeros(D, D);
  for (int idx = 0; idx < D; ++idx) {
    auto f = L.split(idx);
    if (kept.count({f[1], f[4]})) pi(idx, idx) = 1.0;
  }
  return SiftingProjector{sc.kept_pairs, pi};
}

double p_pass(const Mat& sigma, const SiftingProjector& pi) {
  if (!sigma.square() || sigma.rows != pi.projector.rows)
    throw Error("DimensionMismatch", "state does not match the projector");
  const double v = trace(pi.projector * sigma * pi.projector).real();
  return std::min(1.0, std::max(0.0, v));
}

KeyMapIsometry build_keymap(const Scenario& sc) {
  const Layout L = layout_of(sc);
  for (auto [x, y] : sc.kept_pairs)
    for (size_t a = 0; a < sc.povms_a[x].elements.size(); ++a) {
      auto it = sc.key_map.find({x, int(a), y});
      if (it == sc.key_map.end())
        throw Error("IncompleteKeyMap",
                    "g undefined on kept triple (" + std::to_string(x) + "," +
                        std::to_string(a) + "," + std::to_string(y) + ")");
      if (it->second < 0 || it->second >= sc.key_dim)
        throw Error("IncompleteKeyMap", "g value outside the key alphabet");
    }
  const int D = L.enlarged();
  KeyMapIsometry km;
  km.key_dim = sc.key_dim;
  km.v = Mat::zeros(sc.key_dim * D, D);
  for (int idx = 0; idx < D; ++idx) {
    auto f = L.split(idx);
    const int j = key_symbol(sc, f[1], f[2], f[4]);
    km.v(j * D + idx, idx) = 1.0;
  }
  return km;
}

ProtocolMaps build_protocol_maps(const Scenario& sc) {
  ProtocolMaps pm;
  pm.meas = build_measurement_map(sc);
  pm.sifting = build_sifting(sc);
  pm.keymap = build_keymap(sc);
  const int D = pm.sifting.projector.rows;
  pm.d_in = sc.d_a * sc.d_b;
  pm.d_full = sc.key_dim * D;
  for (const auto& kj : pm.meas.joint)
    pm.kraus_full.push_back(pm.keymap.v * (pm.sifting.projector * kj));

  // Orthonormal basis of the joint range, grouped by key symbol so each
  // basis vector lies in one pinching block.
  std::vector<std::vector<cx>> basis;  // within-block columns, length D
  for (int j = 0; j < sc.key_dim; ++j) {
    const size_t block_start = basis.size();
    for (const auto& f : pm.kraus_full) {
      for (int c = 0; c < f.cols; ++c) {
        std::vector<cx> v(D);
        double nrm0 = 0.0;
        for (int r = 0; r < D; ++r) {
          v[r] = f(j * D + r, c);
          nrm0 += std::norm(v[r]);
        }
        nrm0 = std::sqrt(nrm0);
        if (nrm0 < 1e-12) continue;
        for (int pass = 0; pass < 2; ++pass)
          for (size_t k = block_start; k < basis.size(); ++k) {
            cx ip(0.0, 0.0);
            for (int r = 0; r < D; ++r) ip += std::conj(basis[k][r]) * v[r];
            for (int r = 0; r < D; ++r) v[r] -= ip * basis[k][r];
          }
        double nrm = 0.0;
        for (int r = 0; r < D; ++r) nrm += std::norm(v[r]);
        nrm = std::sqrt(nrm);
        if (nrm <= 1e-10 * std::max(1.0, nrm0)) continue;
        for (int r = 0; r < D; ++r) v[r] /= nrm;
        basis.push_back(std::move(v));
        pm.block_of.push_back(j);
      }
    }
  }

  pm.d_c = int(basis.size());
  pm.w = Mat::zeros(pm.d_full, pm.d_c);
  for (int k = 0; k < pm.d_c; ++k)
    for (int r = 0; r < D; ++r)
      pm.w(pm.block_of[k] * D + r, k) = basis[k][r];
  for (const auto& f : pm.kraus_full) pm.kraus.push_back(adjoint(pm.w) * f);
  for (int j = 0; j < sc.key_dim; ++j) {
    Mat p = Mat::zeros(pm.d_c, pm.d_c);
    for (int k = 0; k < pm.d_c; ++k)
      if (pm.block_of[k] == j) p(k, k) = 1.0;
    pm.pinching.push_back(p);
  }
  return pm;
}

Mat apply_G(const ProtocolMaps& pm, const Mat& rho) {
  if (!rho.square() || rho.rows != pm.d_in)
    throw Error("DimensionMismatch", "state dimension does not match G");
  Mat out = Mat::zeros(pm.d_c, pm.d_c);
  for (const auto& f : pm.kraus) out = out + f * rho * adjoint(f);
  return hermitize(out);
}

Mat apply_Z(const ProtocolMaps& pm, const Mat& sigma) {
  if (!sigma.square() || sigma.rows != pm.d_c)
    throw Error("DimensionMismatch", "state dimension does not match Z");
  Mat out = sigma;
  for (int r = 0; r < pm.d_c; ++r)
    for (int c = 0; c < pm.d_c; ++c)
      if (pm.block_of[r] != pm.block_of[c]) out(r, c) = 0.0;
  return out;
}

Mat apply_G_adjoint(const ProtocolMaps& pm, const Mat& y) {
  if (!y.square() || y.rows != pm.d_c)
    throw Error("DimensionMismatch", "operator dimension does not match G*");
  Mat out = Mat::zeros(pm.d_in, pm.d_in);
  for (const auto& f : pm.kraus) out = out + adjoint(f) * y * f;
  return hermitize(out);
}

Mat apply_G_full(const ProtocolMaps& pm, const Mat& rho) {
  if (!rho.square() || rho.rows != pm.d_in)
    throw Error("DimensionMismatch", "state dimension does not match G");
  Mat out = Mat::zeros(pm.d_full, pm.d_full);
  for (const auto& f : pm.kraus_full) out = out + f * rho * adjoint(f);
  return hermitize(out);
}

Mat apply_Z_full(const ProtocolMaps& pm, const Mat& sigma) {
  if (!sigma.square() || sigma.rows != pm.d_full)
    throw Error("DimensionMismatch", "state dimension does not match Z");
  const int D = pm.d_full / pm.keymap.key_dim;
  Mat out = sigma;
  for (int r = 0; r < pm.d_full; ++r)
    for (int c = 0; c < pm.d_full; ++c)
      if (r / D != c / D) out(r, c) = 0.0;
  return out;
}

double p_pass(const ProtocolMaps& pm, const Mat& rho) {
  const double v = trace(apply_G(pm, rho)).real();
  return std::min(1.0, std::max(0.0, v));
}

SourceReplacement source_replacement(const std::vector<PreparedState>& prep) {
  if (prep.empty())
    throw Error("InvalidDistribution", "no prepared states");
  const int db = prep.front().ket.rows;
  double sum = 0.0;
  for (const auto& s : prep) {
    if (s.ket.cols != 1 || s.ket.rows != db)
      throw Error("InvalidDistribution", "prepared kets must share one dim");
    if (s.p < 0.0) throw Error("InvalidDistribution", "negative probability");
    if (std::abs(fro_norm(s.ket) - 1.0) > 1e-9)
      throw Error("InvalidDistribution", "prepared ket not normalized");
    sum += s.p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw Error("InvalidDistribution", "probabilities must sum to 1");
  const int n = int(prep.size());
  SourceReplacement sr;
  sr.d_a = n;
  sr.d_b = db;
  sr.psi = Mat::zeros(n * db, 1);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < db; ++r)
      sr.psi(i * db + r, 0) = std::sqrt(prep[i].p) * prep[i].ket(r, 0);
  return sr;
}

Povm extend_noclick(const Povm& povm) {
  const int d = povm.elements.empty() ? 0 : povm.elements.front().rows;
  Povm out;
  out.basis = povm.basis;
  Mat sum = Mat::zeros(d + 1, d + 1);
  for (const Mat& m : povm.elements) {
    Mat pad = Mat::zeros(d + 1, d + 1);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) pad(i, j) = m(i, j);
    sum = sum + pad;
    out.elements.push_back(pad);
  }
  out.elements.push_back(Mat::identity(d + 1) - sum);
  return out;
}

Povm apply_efficiency(const Povm& povm, const std::vector<double>& eta) {
  if (eta.size() != povm.elements.size())
    throw Error("DimensionMismatch", "one efficiency per outcome required");
  for (double e : eta)
    if (!(e >= 0.0 && e <= 1.0))
      throw Error("EfficiencyOutOfRange", "efficiencies must lie in [0, 1]");
  Povm scaled;
  scaled.basis = povm.basis;
  for (size_t a = 0; a < povm.elements.size(); ++a)
    scaled.elements.push_back(eta[a] * povm.elements[a]);
  return extend_noclick(scaled);
}

ObservableConstraint fidelity_constraint(const Mat& psi, double eps) {
  Mat v = (1.0 / fro_norm(psi)) * psi;
  ObservableConstraint c;
  c.op = hermitize(v * adjoint(v));
  c.kind = ConstraintKind::Interval;
  c.value = 1.0 - eps / 2.0;
  c.halfwidth = eps / 2.0;
  return c;
}

std::vector<ObservableConstraint> bb84_constraints(double qz, double qx,
                                                   Granularity g) {
  check_qber(qz);
  check_qber(qx);
  std::vector<ObservableConstraint> out;
  ObservableConstraint id;
  id.op = Mat::identity(4);
  id.value = 1.0;
  out.push_back(id);
  const Povm z = z_povm(), x = x_povm();
  const std::array<const Povm*, 2> bases{&z, &x};
  if (g == Granularity::Coarse) {
    for (int w = 0; w < 2; ++w) {
      Mat err = Mat::zeros(4, 4);
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          if (a != b)
            err = err + kron(bases[w]->elements[a], bases[w]->elements[b]);
      ObservableConstraint c;
      c.op = hermitize(err);
      c.value = (w == 0) ? qz : qx;
      out.push_back(c);
    }
    return out;
  }
  const Mat rho = bb84_reference_state(qz, qx);
  for (int xb = 0; xb < 2; ++xb)
    for (int yb = 0; yb < 2; ++yb)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          ObservableConstraint c;
          c.op = hermitize(
              kron(bases[xb]->elements[a], bases[yb]->elements[b]));
          c.value = trace(c.op * rho).real();
          out.push_back(c);
        }
  return out;
}

Scenario bb84_scenario(double qz, double qx, Granularity g) {
  Scenario sc;
  sc.d_a = sc.d_b = 2;
  sc.povms_a = {z_povm(), x_povm()};
  sc.povms_b = {z_povm(), x_povm()};
  sc.kept_pairs = {{0, 0}, {1, 1}};
  sc.key_dim = 2;
  for (int x = 0; x < 2; ++x)
    for (int a = 0; a < 2; ++a) sc.key_map[{x, a, x}] = a;
  sc.constraints = bb84_constraints(qz, qx, g);
  return sc;
}

Scenario bb84_lossy_scenario(double q, double eta) {
  check_qber(q);
  if (!(eta >= 0.0 && eta <= 1.0))
    throw Error("EfficiencyOutOfRange", "efficiency must lie in [0, 1]");
  Scenario sc;
  sc.d_a = 2;
  sc.d_b = 3;
  sc.povms_a = {z_povm(), x_povm()};
  sc.povms_b = {apply_efficiency(z_povm(), {eta, eta}),
                apply_efficiency(x_povm(), {eta, eta})};
  sc.kept_pairs = {{0, 0}, {1, 1}};
  sc.key_dim = 2;
  for (int x = 0; x < 2; ++x)
    for (int a = 0; a < 2; ++a) sc.key_map[{x, a, x}] = a;

  // Honest statistics: the loss lives in Bob's POVM (eta-scaled clicks plus
  // the completion element), so the reference state is the ideal depolarized
  // pair embedded in the enlarged detection space.
  const Mat rho2 = bb84_reference_state(q, q);
  Mat emb = Mat::zeros(3, 2);
  emb(0, 0) = emb(1, 1) = 1.0;
  const Mat embed2 = kron(Mat::identity(2), emb);
  const Mat rho_ext = hermitize(embed2 * rho2 * adjoint(embed2));

  ObservableConstraint id;
  id.op = Mat::identity(6);
  id.value = 1.0;
  sc.constraints.push_back(id);
  for (int xb = 0; xb < 2; ++xb)
    for (int yb = 0; yb < 2; ++yb)
      for (size_t a = 0; a < sc.povms_a[xb].elements.size(); ++a)
        for (size_t b = 0; b < sc.povms_b[yb].elements.size(); ++b) {
          ObservableConstraint c;
          c.op = hermitize(kron(sc.povms_a[xb].elements[a],
                                sc.povms_b[yb].elements[b]));
          c.value = trace(c.op * rho_ext).real();
          sc.constraints.push_back(c);
        }
  sc.fixed_rho = rho_ext;
  return sc;
}

}  // namespace keyforge::protocol
