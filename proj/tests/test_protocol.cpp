#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "keyforge/protocol.hpp"

using namespace keyforge;
using namespace keyforge::protocol;

namespace {

Mat unit(int n, int i) {
  Mat e(n, 1);
  e(i, 0) = 1.0;
  return e;
}

Mat proj(int n, int i) {
  Mat p(n, n);
  p(i, i) = 1.0;
  return p;
}

Mat ket_plus() {
  Mat k(2, 1);
  k(0, 0) = k(1, 0) = 1.0 / std::sqrt(2.0);
  return k;
}

Mat ket_minus() {
  Mat k(2, 1);
  k(0, 0) = 1.0 / std::sqrt(2.0);
  k(1, 0) = -1.0 / std::sqrt(2.0);
  return k;
}

Mat phi_plus() {
  Mat k(4, 1);
  k(0, 0) = k(3, 0) = 1.0 / std::sqrt(2.0);
  return k;
}

Mat outer(const Mat& k) { return k * adjoint(k); }

Mat werner(double v) {
  return hermitize(v * outer(phi_plus()) + (1.0 - v) * 0.25 * Mat::identity(4));
}

Mat random_density(std::mt19937& rng, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat r(n, n);
  for (auto& e : r.a) e = cx(g(rng), g(rng));
  Mat rho = r * adjoint(r);
  Mat out = (1.0 / trace(rho).real()) * rho;
  return hermitize(out);
}

// Random POVM {S^{-1/2} P_a S^{-1/2}} from random PSD parts.
std::vector<Mat> random_povm(std::mt19937& rng, int dim, int n_out) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Mat> parts;
  Mat s = Mat::zeros(dim, dim);
  for (int a = 0; a < n_out; ++a) {
    Mat r(dim, dim);
    for (auto& e : r.a) e = cx(g(rng), g(rng));
    Mat p = r * adjoint(r) + 1e-3 * Mat::identity(dim);
    parts.push_back(p);
    s = s + p;
  }
  Spectrum sp = herm_eig(hermitize(s));
  Mat isq(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) {
      cx acc(0.0, 0.0);
      for (int k = 0; k < dim; ++k)
        acc += sp.eigenvectors(i, k) / std::sqrt(sp.eigenvalues[k]) *
               std::conj(sp.eigenvectors(j, k));
      isq(i, j) = acc;
    }
  std::vector<Mat> povm;
  for (auto& p : parts) povm.push_back(hermitize(isq * p * isq));
  return povm;
}

Povm qutrit_computational() {
  return Povm{{proj(3, 0), proj(3, 1), proj(3, 2)}, 0};
}

Povm qutrit_fourier() {
  const double s = 1.0 / std::sqrt(3.0);
  std::vector<Mat> els;
  for (int k = 0; k < 3; ++k) {
    Mat v(3, 1);
    for (int j = 0; j < 3; ++j)
      v(j, 0) = s * std::exp(cx(0.0, 2.0 * M_PI * j * k / 3.0));
    els.push_back(hermitize(outer(v)));
  }
  return Povm{els, 1};
}

Scenario six_state_scenario() {
  Scenario sc = bb84_scenario(0.05, 0.05, Granularity::Fine);
  Mat yp(2, 2), ym(2, 2);
  yp(0, 0) = yp(1, 1) = 0.5;
  yp(0, 1) = cx(0.0, -0.5);
  yp(1, 0) = cx(0.0, 0.5);
  ym(0, 0) = ym(1, 1) = 0.5;
  ym(0, 1) = cx(0.0, 0.5);
  ym(1, 0) = cx(0.0, -0.5);
  Povm y{{yp, ym}, 2};
  sc.povms_a.push_back(y);
  sc.povms_b.push_back(y);
  sc.probs_a.clear();
  sc.probs_b.clear();
  sc.kept_pairs = {{0, 0}, {1, 1}, {2, 2}};
  for (int a = 0; a < 2; ++a) sc.key_map[{2, a, 2}] = a;
  return sc;
}

}  // namespace

TEST_CASE("BB84 Kraus operator for the Z basis, entrywise") {
  Scenario sc = bb84_scenario(0.0, 0.0, Granularity::Fine);
  MeasurementMap mm = build_measurement_map(sc);
  REQUIRE(mm.alice.operators.size() == 2);
  // |0><0| x |0> x |0>  +  |1><1| x |0> x |1>, scaled by sqrt(p_x) = 1/sqrt2
  Mat expected = Mat::zeros(8, 2);
  expected(0, 0) = 1.0;
  expected(5, 1) = 1.0;
  CHECK(max_abs(std::sqrt(2.0) * mm.alice.operators[0] - expected) < 1e-12);
  // the joint channel is trace preserving
  Mat acc = Mat::zeros(4, 4);
  for (const auto& k : mm.joint) acc = acc + adjoint(k) * k;
  CHECK(max_abs(acc - Mat::identity(4)) < 1e-9);
}

TEST_CASE("trivial single-outcome measurement embeds isometrically") {
  Scenario sc;
  sc.d_a = sc.d_b = 2;
  sc.povms_a = {Povm{{Mat::identity(2)}, 0}};
  sc.povms_b = {Povm{{Mat::identity(2)}, 0}};
  sc.kept_pairs = {{0, 0}};
  sc.key_dim = 1;
  sc.key_map[{0, 0, 0}] = 0;
  ObservableConstraint id;
  id.op = Mat::identity(4);
  id.value = 1.0;
  sc.constraints = {id};
  MeasurementMap mm = build_measurement_map(sc);
  REQUIRE(mm.joint.size() == 1);
  std::mt19937 rng(11);
  Mat rho = random_density(rng, 4);
  Mat sigma = mm.joint[0] * rho * adjoint(mm.joint[0]);
  CHECK(std::abs(trace(sigma).real() - 1.0) < 1e-12);
  CHECK(max_abs(adjoint(mm.joint[0]) * mm.joint[0] - Mat::identity(4)) <
        1e-12);
}

TEST_CASE("two-basis qutrit POVMs give a complete Kraus set") {
  Scenario sc;
  sc.d_a = sc.d_b = 3;
  sc.povms_a = {qutrit_computational(), qutrit_fourier()};
  sc.povms_b = {qutrit_computational(), qutrit_fourier()};
  sc.kept_pairs = {{0, 0}, {1, 1}};
  sc.key_dim = 3;
  for (int x = 0; x < 2; ++x)
    for (int a = 0; a < 3; ++a) sc.key_map[{x, a, x}] = a;
  MeasurementMap mm = build_measurement_map(sc);
  Mat acc_a = Mat::zeros(3, 3);
  for (const auto& k : mm.alice.operators) acc_a = acc_a + adjoint(k) * k;
  CHECK(max_abs(acc_a - Mat::identity(3)) < 1e-9);
  Mat acc = Mat::zeros(9, 9);
  for (const auto& k : mm.joint) acc = acc + adjoint(k) * k;
  CHECK(max_abs(acc - Mat::identity(9)) < 1e-9);
}

TEST_CASE("BB84 sifting projector matches the matched-basis form") {
  Scenario sc = bb84_scenario(0.05, 0.05, Granularity::Fine);
  SiftingProjector pi = build_sifting(sc);
  Mat expected = Mat::zeros(64, 64);
  for (int x = 0; x < 2; ++x) {
    Mat term = kron(
        Mat::identity(2),
        kron(proj(2, x),
             kron(Mat::identity(2),
                  kron(Mat::identity(2), kron(proj(2, x), Mat::identity(2))))));
    expected = expected + term;
  }
  CHECK(max_abs(pi.projector - expected) < 1e-14);
  CHECK(max_abs(pi.projector * pi.projector - pi.projector) < 1e-10);
  CHECK(max_abs(pi.projector - adjoint(pi.projector)) < 1e-14);
}

TEST_CASE("keeping every announcement pair gives the identity projector") {
  Scenario sc = bb84_scenario(0.05, 0.05, Granularity::Fine);
  sc.kept_pairs = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int a = 0; a < 2; ++a) sc.key_map[{x, a, y}] = a;
  SiftingProjector pi = build_sifting(sc);
  CHECK(max_abs(pi.projector - Mat::identity(64)) < 1e-14);
  MeasurementMap mm = build_measurement_map(sc);
  std::mt19937 rng(5);
  Mat rho = random_density(rng, 4);
  Mat sigma = Mat::zeros(64, 64);
  for (const auto& k : mm.joint) sigma = sigma + k * rho * adjoint(k);
  CHECK(p_pass(sigma, pi) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("BB84 passes sifting with probability 1/2 for any state") {
  Scenario sc = bb84_scenario(0.1, 0.1, Granularity::Fine);
  MeasurementMap mm = build_measurement_map(sc);
  SiftingProjector pi = build_sifting(sc);
  std::mt19937 rng(7);
  for (int t = 0; t < 5; ++t) {
    Mat rho = random_density(rng, 4);
    Mat sigma = Mat::zeros(64, 64);
    for (const auto& k : mm.joint) sigma = sigma + k * rho * adjoint(k);
    CHECK(std::abs(p_pass(sigma, pi) - 0.5) < 1e-10);
  }
}

TEST_CASE("BB84 key-map isometry matches the explicit block form") {
  Scenario sc = bb84_scenario(0.05, 0.05, Granularity::Fine);
  KeyMapIsometry km = build_keymap(sc);
  CHECK(max_abs(adjoint(km.v) * km.v - Mat::identity(64)) < 1e-12);
  // |g(x,a,x)>_R (x) |x><x|_At (x) |a><a|_Ab (x) |x><x|_Bt with identities
  // on the physical systems and Bob's outcome register; g(x,a,x) = a.
  Mat expected = Mat::zeros(128, 64);
  for (int x = 0; x < 2; ++x)
    for (int a = 0; a < 2; ++a) {
      Mat block = kron(
          Mat::identity(2),
          kron(proj(2, x),
               kron(proj(2, a),
                    kron(Mat::identity(2), kron(proj(2, x), Mat::identity(2))))));
      expected = expected + kron(unit(2, a), block);
    }
  SiftingProjector pi = build_sifting(sc);
  CHECK(max_abs(km.v * pi.projector - expected) < 1e-14);
}

TEST_CASE("three-basis key map is an isometry") {
  Scenario sc = six_state_scenario();
  KeyMapIsometry km = build_keymap(sc);
  const int dim = km.v.cols;
  CHECK(max_abs(adjoint(km.v) * km.v - Mat::identity(dim)) < 1e-12);
}

TEST_CASE("missing kept triple raises IncompleteKeyMap") {
  Scenario sc = bb84_scenario(0.05, 0.05, Granularity::Fine);
  sc.key_map.erase({1, 0, 1});
  CHECK_THROWS_WITH_AS(build_keymap(sc),
                       doctest::Contains("IncompleteKeyMap"), Error);
  Scenario sc2 = bb84_scenario(0.05, 0.05, Granularity::Fine);
  sc2.key_map[{0, 1, 0}] = 7;
  CHECK_THROWS_WITH_AS(build_keymap(sc2),
                       doctest::Contains("IncompleteKeyMap"), Error);
}

TEST_CASE("pinching is idempotent and trace preserving") {
  Scenario sc = bb84_scenario(0.08, 0.08, Granularity::Fine);
  ProtocolMaps pm = build_protocol_maps(sc);
  std::mt19937 rng(13);
  Mat sigma = random_density(rng, pm.d_c);
  Mat z1 = apply_Z(pm, sigma);
  CHECK(max_abs(apply_Z(pm, z1) - z1) < 1e-12);
  CHECK(std::abs(trace(z1).real() - 1.0) < 1e-12);
  Mat big = random_density(rng, pm.d_full);
  Mat zf = apply_Z_full(pm, big);
  CHECK(max_abs(apply_Z_full(pm, zf) - zf) < 1e-12);
  CHECK(std::abs(trace(zf).real() - 1.0) < 1e-12);
}

TEST_CASE("BB84 Bell state: trace of G and its relative entropy to Z(G)") {
  Scenario sc = bb84_scenario(0.0, 0.0, Granularity::Fine);
  ProtocolMaps pm = build_protocol_maps(sc);
  Mat rho = outer(phi_plus());
  Mat g = apply_G(pm, rho);
  CHECK(std::abs(trace(g).real() - 0.5) < 1e-12);
  CHECK(p_pass(pm, rho) == doctest::Approx(0.5).epsilon(1e-12));
  RelEntropyResult d = relative_entropy(g, apply_Z(pm, g));
  REQUIRE_FALSE(d.infinite);
  CHECK(d.bits == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("compressed and full-space maps agree") {
  Scenario sc = bb84_scenario(0.06, 0.06, Granularity::Fine);
  ProtocolMaps pm = build_protocol_maps(sc);
  CHECK(pm.d_c == 8);
  CHECK(max_abs(adjoint(pm.w) * pm.w - Mat::identity(pm.d_c)) < 1e-12);
  std::mt19937 rng(17);
  for (int t = 0; t < 3; ++t) {
    Mat rho = random_density(rng, 4);
    Mat gc = apply_G(pm, rho);
    Mat gf = apply_G_full(pm, rho);
    CHECK(std::abs(trace(gc).real() - trace(gf).real()) < 1e-12);
    // the compressed image reproduces the full image under the isometry
    CHECK(max_abs(pm.w * gc * adjoint(pm.w) - gf) < 1e-10);
    RelEntropyResult dc = relative_entropy(gc, apply_Z(pm, gc));
    RelEntropyResult df = relative_entropy(gf, apply_Z_full(pm, gf));
    REQUIRE_FALSE(dc.infinite);
    REQUIRE_FALSE(df.infinite);
    CHECK(dc.bits == doctest::Approx(df.bits).epsilon(1e-9));
  }
}

TEST_CASE("G is trace nonincreasing on random scenarios") {
  std::mt19937 rng(23);
  for (int t = 0; t < 6; ++t) {
    Scenario sc;
    sc.d_a = sc.d_b = 2;
    for (int x = 0; x < 2; ++x) {
      sc.povms_a.push_back(Povm{random_povm(rng, 2, 2), x});
      sc.povms_b.push_back(Povm{random_povm(rng, 2, 2), x});
    }
    sc.kept_pairs = {{0, 0}, {1, 1}};
    sc.key_dim = 2;
    for (int x = 0; x < 2; ++x)
      for (int a = 0; a < 2; ++a) sc.key_map[{x, a, x}] = a;
    ObservableConstraint id;
    id.op = Mat::identity(4);
    id.value = 1.0;
    sc.constraints = {id};
    check_scenario(sc);
    ProtocolMaps pm = build_protocol_maps(sc);
    Mat rho = random_density(rng, 4);
    CHECK(trace(apply_G(pm, rho)).real() <= 1.0 + 1e-9);
    // generated POVMs satisfy the completeness/PSD contract
    for (const auto& p : sc.povms_a) check_povm(p, 2);
  }
}

TEST_CASE("pinched conditional entropy equals the relative entropy of G") {
  // p_pass * H(Z^R | E At Bt) computed from the explicit purification
  // matches D(G(rho) || Z(G(rho))).
  Scenario sc = bb84_scenario(0.0, 0.0, Granularity::Fine);
  ProtocolMaps pm = build_protocol_maps(sc);
  Mat rho = werner(0.7);  // full rank
  Mat psi = purify(rho);  // (4*4) x 1, system (x) auxiliary
  REQUIRE(psi.rows == 16);
  const int ne = 4;
  const double pp = p_pass(pm, rho);

  // global pinched state on R A At Ab B Bt Bb E
  Mat glob = Mat::zeros(512, 512);
  for (const auto& f : pm.kraus_full) {
    // m = (F (x) 1_E) psi as a 128 x 4 matrix over (round space, E)
    Mat m(128, ne);
    for (int r = 0; r < 128; ++r)
      for (int e = 0; e < ne; ++e) {
        cx acc(0.0, 0.0);
        for (int c = 0; c < 4; ++c) acc += f(r, c) * psi(c * ne + e, 0);
        m(r, e) = acc;
      }
    for (int j = 0; j < 2; ++j) {
      Mat v(512, 1);
      for (int r = j * 64; r < (j + 1) * 64; ++r)
        for (int e = 0; e < ne; ++e) v(r * ne + e, 0) = m(r, e);
      glob = glob + v * adjoint(v);
    }
  }
  glob = hermitize((1.0 / pp) * glob);
  CHECK(std::abs(trace(glob).real() - 1.0) < 1e-10);

  const std::vector<int> dims{2, 2, 2, 2, 2, 2, 2, 4};
  Mat r_at_bt_e = partial_trace(glob, dims, {0, 2, 5, 7});
  Mat at_bt_e = partial_trace(glob, dims, {2, 5, 7});
  const double h_cond =
      von_neumann_entropy(r_at_bt_e) - von_neumann_entropy(at_bt_e);

  Mat g = apply_G(pm, rho);
  RelEntropyResult d = relative_entropy(g, apply_Z(pm, g));
  REQUIRE_FALSE(d.infinite);
  CHECK(std::abs(pp * h_cond - d.bits) < 1e-8);
}

TEST_CASE("source replacement reproduces the BB84 entangled source") {
  std::vector<PreparedState> prep{{unit(2, 0), 0.25},
                                  {unit(2, 1), 0.25},
                                  {ket_plus(), 0.25},
                                  {ket_minus(), 0.25}};
  SourceReplacement sr = source_replacement(prep);
  CHECK(std::abs(fro_norm(sr.psi) - 1.0) < 1e-12);
  Mat marg = partial_trace(outer(sr.psi), {4, 2}, {0});
  for (int i = 0; i < 4; ++i)
    CHECK(std::abs(marg(i, i).real() - 0.25) < 1e-12);

  // local isometry on Alice's registers: controlled Hadamard on the basis
  // register maps |+>_x (x) Phi+ to the source-replacement state
  Mat h(2, 2);
  h(0, 0) = h(0, 1) = h(1, 0) = 1.0 / std::sqrt(2.0);
  h(1, 1) = -1.0 / std::sqrt(2.0);
  Mat va = kron(proj(2, 0), Mat::identity(2)) + kron(proj(2, 1), h);
  Mat direct = kron(va, Mat::identity(2)) * kron(ket_plus(), phi_plus());
  cx overlap = frob_inner(direct, sr.psi);
  CHECK(std::abs(std::abs(overlap) - 1.0) < 1e-12);

  // mixing condition: both bases yield the same average emitted state
  Mat avg_z = 0.5 * outer(unit(2, 0)) + 0.5 * outer(unit(2, 1));
  Mat avg_x = 0.5 * outer(ket_plus()) + 0.5 * outer(ket_minus());
  CHECK(max_abs(avg_z - avg_x) < 1e-12);
  CHECK(max_abs(avg_z - 0.5 * Mat::identity(2)) < 1e-12);
}

TEST_CASE("single prepared state gives a product vector") {
  SourceReplacement sr = source_replacement({{ket_plus(), 1.0}});
  CHECK(sr.d_a == 1);
  CHECK(max_abs(sr.psi - ket_plus()) < 1e-12);
}

TEST_CASE("source replacement rejects bad inputs") {
  CHECK_THROWS_WITH_AS(
      source_replacement({{unit(2, 0), 0.5}, {unit(2, 1), 0.6}}),
      doctest::Contains("InvalidDistribution"), Error);
  CHECK_THROWS_WITH_AS(
      source_replacement({{unit(2, 0), -0.1}, {unit(2, 1), 1.1}}),
      doctest::Contains("InvalidDistribution"), Error);
  Mat bad(2, 1);
  bad(0, 0) = 2.0;
  CHECK_THROWS_WITH_AS(source_replacement({{bad, 1.0}}),
                       doctest::Contains("InvalidDistribution"), Error);
}

TEST_CASE("no-click extension pads and completes exactly") {
  Povm z{{proj(2, 0), proj(2, 1)}, 0};
  Povm ext = extend_noclick(z);
  REQUIRE(ext.elements.size() == 3);
  Mat expected = Mat::zeros(3, 3);
  expected(2, 2) = 1.0;
  CHECK(max_abs(ext.elements[2] - expected) == 0.0);
  Mat sum = Mat::zeros(3, 3);
  for (const auto& m : ext.elements) sum = sum + m;
  CHECK(max_abs(sum - Mat::identity(3)) == 0.0);
  CHECK(std::abs(trace(ext.elements[2]).real() - 1.0) == 0.0);

  // chained with a uniform efficiency: completion is 1 - eta * sum M
  Povm lossy = apply_efficiency(z, {0.75, 0.75});
  Mat comp = Mat::zeros(3, 3);
  comp(0, 0) = comp(1, 1) = 0.25;
  comp(2, 2) = 1.0;
  CHECK(max_abs(lossy.elements[2] - comp) < 1e-15);
}

TEST_CASE("per-outcome efficiencies scale the click elements") {
  Povm z{{proj(2, 0), proj(2, 1)}, 0};
  Povm out = apply_efficiency(z, {0.9, 1.0});
  Mat m0 = Mat::zeros(3, 3);
  m0(0, 0) = 0.9;
  CHECK(max_abs(out.elements[0] - m0) < 1e-15);
  Povm all_one = apply_efficiency(z, {1.0, 1.0});
  Mat noclick = Mat::zeros(3, 3);
  noclick(2, 2) = 1.0;
  CHECK(max_abs(all_one.elements[2] - noclick) < 1e-15);
  Povm dead = apply_efficiency(z, {0.0, 0.0});
  CHECK(max_abs(dead.elements[2] - Mat::identity(3)) < 1e-15);
  CHECK_THROWS_WITH_AS(apply_efficiency(z, {1.5, 1.0}),
                       doctest::Contains("EfficiencyOutOfRange"), Error);
  CHECK_THROWS_WITH_AS(apply_efficiency(z, {0.5}),
                       doctest::Contains("DimensionMismatch"), Error);
}

TEST_CASE("fidelity constraint encodes the overlap interval") {
  ObservableConstraint tight = fidelity_constraint(phi_plus(), 0.0);
  CHECK(tight.kind == ConstraintKind::Interval);
  CHECK(tight.value == doctest::Approx(1.0));
  CHECK(tight.halfwidth == doctest::Approx(0.0));
  CHECK(max_abs(tight.op - outer(phi_plus())) < 1e-12);

  ObservableConstraint loose = fidelity_constraint(phi_plus(), 1.0);
  CHECK(loose.value == doctest::Approx(0.5));
  CHECK(loose.halfwidth == doctest::Approx(0.5));

  // Werner-state overlap (1 + 3v) / 4 crosses 0.99 at v = 0.98667
  ObservableConstraint c = fidelity_constraint(phi_plus(), 0.01);
  const double lo = c.value - c.halfwidth;
  CHECK(lo == doctest::Approx(0.99));
  double ov_pass = trace(c.op * werner(0.986667)).real();
  double ov_fail = trace(c.op * werner(0.9860)).real();
  CHECK(ov_pass >= lo - 1e-9);
  CHECK(ov_fail < lo);
}

TEST_CASE("BB84 fine constraints at Q=0 are satisfied by the Bell state") {
  auto cs = bb84_constraints(0.0, 0.0, Granularity::Fine);
  REQUIRE(cs.size() == 17);
  Mat rho = outer(phi_plus());
  for (const auto& c : cs)
    CHECK(std::abs(trace(c.op * rho).real() - c.value) < 1e-12);
}

TEST_CASE("coarse constraints follow the conditional error-rate convention") {
  // the maximally mixed state has a conditional error rate of 1/2 in both
  // bases, and the depolarized state with visibility v shows (1 - v) / 2
  auto cs_half = bb84_constraints(0.5, 0.5, Granularity::Coarse);
  REQUIRE(cs_half.size() == 3);
  Mat mixed = 0.25 * Mat::identity(4);
  for (const auto& c : cs_half)
    CHECK(std::abs(trace(c.op * mixed).real() - c.value) < 1e-12);
  auto cs_q = bb84_constraints(0.25, 0.25, Granularity::Coarse);
  Mat depol = werner(0.5);
  for (const auto& c : cs_q)
    CHECK(std::abs(trace(c.op * depol).real() - c.value) < 1e-12);
}

TEST_CASE("fine constraints are symmetric under swapping the two bases") {
  auto cs = bb84_constraints(0.07, 0.07, Granularity::Fine);
  // layout: identity, then (x, y, a, b) row-major
  auto val = [&](int x, int y, int a, int b) {
    return cs[1 + ((x * 2 + y) * 2 + a) * 2 + b].value;
  };
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      CHECK(val(0, 0, a, b) == doctest::Approx(val(1, 1, a, b)).epsilon(1e-12));
      CHECK(val(0, 1, a, b) == doctest::Approx(val(1, 0, a, b)).epsilon(1e-12));
    }
  // same-basis error mass adds up to Q
  CHECK(val(0, 0, 0, 1) + val(0, 0, 1, 0) == doctest::Approx(0.07));
  CHECK(val(1, 1, 0, 1) + val(1, 1, 1, 0) == doctest::Approx(0.07));
  CHECK_THROWS_WITH_AS(bb84_constraints(0.6, 0.1, Granularity::Fine),
                       doctest::Contains("InvalidQber"), Error);
  CHECK_THROWS_WITH_AS(bb84_constraints(-0.01, 0.1, Granularity::Coarse),
                       doctest::Contains("InvalidQber"), Error);
}

TEST_CASE("scenario validation catches structural defects") {
  Scenario sc = bb84_scenario(0.05, 0.05, Granularity::Fine);
  check_scenario(sc);
  CHECK(identity_constraint_index(sc) == 0);

  Scenario no_id = sc;
  no_id.constraints.erase(no_id.constraints.begin());
  CHECK_THROWS_WITH_AS(check_scenario(no_id),
                       doctest::Contains("IdentityConstraintMissing"), Error);

  Scenario bad_povm = sc;
  bad_povm.povms_a[0].elements[0] = 0.5 * bad_povm.povms_a[0].elements[0];
  CHECK_THROWS_WITH_AS(check_scenario(bad_povm),
                       doctest::Contains("InvalidPovm"), Error);

  Scenario bad_pair = sc;
  bad_pair.kept_pairs.push_back({2, 0});
  CHECK_THROWS_WITH_AS(check_scenario(bad_pair),
                       doctest::Contains("DimensionMismatch"), Error);

  Scenario bad_probs = sc;
  bad_probs.probs_a = {0.9, 0.2};
  CHECK_THROWS_WITH_AS(check_scenario(bad_probs),
                       doctest::Contains("InvalidDistribution"), Error);
}

TEST_CASE("lossy BB84 scenario carries honest no-click statistics") {
  const double q = 0.05, eta = 0.9;
  Scenario sc = bb84_lossy_scenario(q, eta);
  check_scenario(sc);
  REQUIRE(sc.fixed_rho.has_value());
  // every constraint value is realized by the honest state
  for (const auto& c : sc.constraints)
    CHECK(std::abs(trace(c.op * *sc.fixed_rho).real() - c.value) < 1e-12);
  // no-click mass: p(a, nc | x, y) = (1 - eta) * p(a | x) = (1 - eta) / 2
  // click mass in matched Z bases: eta * (1 - q) / 2 on the diagonal pairs
  // constraint layout: identity, then (x, y, a, b) with b = 2 the no-click
  auto idx = [&](int x, int y, int a, int b) {
    return 1 + ((x * 2 + y) * 2 + a) * 3 + b;
  };
  const double p_a0_nc = sc.constraints[idx(0, 0, 0, 2)].value;
  const double p_match = sc.constraints[idx(0, 0, 0, 0)].value;
  CHECK(p_a0_nc == doctest::Approx((1.0 - eta) / 2.0).epsilon(1e-12));
  CHECK(p_match == doctest::Approx(eta * (1.0 - q) / 2.0).epsilon(1e-12));
  ProtocolMaps pm = build_protocol_maps(sc);
  CHECK(p_pass(pm, *sc.fixed_rho) == doctest::Approx(0.5).epsilon(1e-10));

  // eta = 1 reduces to the standard fine constraint values on clicks
  Scenario ideal = bb84_lossy_scenario(q, 1.0);
  auto plain = bb84_constraints(q, q, Granularity::Fine);
  auto pidx = [&](int x, int y, int a, int b) {
    return 1 + ((x * 2 + y) * 2 + a) * 2 + b;
  };
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          CHECK(ideal.constraints[idx(x, y, a, b)].value ==
                doctest::Approx(plain[pidx(x, y, a, b)].value)
                    .epsilon(1e-12));
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int a = 0; a < 2; ++a)
        CHECK(std::abs(ideal.constraints[idx(x, y, a, 2)].value) < 1e-12);
}

TEST_CASE("key register of a constant key map carries no information") {
  Scenario sc = bb84_scenario(0.05, 0.05, Granularity::Fine);
  sc.key_dim = 1;
  for (auto& [k, v] : sc.key_map) v = 0;
  ProtocolMaps pm = build_protocol_maps(sc);
  std::mt19937 rng(29);
  Mat sigma = random_density(rng, pm.d_c);
  CHECK(max_abs(apply_Z(pm, sigma) - sigma) < 1e-14);
  Mat rho = random_density(rng, 4);
  Mat g = apply_G(pm, rho);
  RelEntropyResult d = relative_entropy(g, apply_Z(pm, g));
  CHECK(std::abs(d.bits) < 1e-10);
}
