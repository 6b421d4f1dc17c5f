#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "keyforge/linalg.hpp"

using namespace keyforge;

namespace {

Mat random_hermitian(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat R(n, n);
  for (auto& v : R.a) v = cx(g(rng), g(rng));
  return hermitize(R);
}

Mat random_density(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat R(n, n);
  for (auto& v : R.a) v = cx(g(rng), g(rng));
  Mat rho = R * adjoint(R);
  const double t = trace(rho).real();
  return (1.0 / t) * rho;
}

Mat reconstruct(const Spectrum& sp) {
  const int n = sp.eigenvectors.rows;
  Mat D(n, n);
  for (int i = 0; i < n; ++i) D(i, i) = sp.eigenvalues[i];
  return sp.eigenvectors * D * adjoint(sp.eigenvectors);
}

Mat diag2(double a, double b) {
  Mat M(2, 2);
  M(0, 0) = a;
  M(1, 1) = b;
  return M;
}

const Mat kPauliX = [] {
  Mat X(2, 2);
  X(0, 1) = 1.0;
  X(1, 0) = 1.0;
  return X;
}();

}  // namespace

TEST_CASE("herm_eig identity") {
  auto sp = herm_eig(Mat::identity(2));
  CHECK(sp.eigenvalues[0] == doctest::Approx(1.0));
  CHECK(sp.eigenvalues[1] == doctest::Approx(1.0));
}

TEST_CASE("herm_eig pauli X spectrum") {
  auto sp = herm_eig(kPauliX);
  CHECK(sp.eigenvalues[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(sp.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("herm_eig reconstruction and unitarity on random 8x8") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    Mat M = random_hermitian(8, rng);
    auto sp = herm_eig(M);
    CHECK(max_abs(reconstruct(sp) - M) < 1e-10 * 8);
    Mat gram = adjoint(sp.eigenvectors) * sp.eigenvectors;
    CHECK(max_abs(gram - Mat::identity(8)) < 1e-10);
    for (size_t i = 1; i < sp.eigenvalues.size(); ++i)
      CHECK(sp.eigenvalues[i] >= sp.eigenvalues[i - 1]);
  }
}

TEST_CASE("herm_eig rejects non-hermitian input") {
  Mat M(2, 2);
  M(0, 1) = 1.0;
  CHECK_THROWS_WITH_AS(herm_eig(M), doctest::Contains("NonHermitianInput"),
                       Error);
}

TEST_CASE("matrix_log2_on_support basics") {
  CHECK(max_abs(matrix_log2_on_support(Mat::identity(3))) < 1e-12);
  Mat L = matrix_log2_on_support(diag2(0.5, 0.5));
  CHECK(L(0, 0).real() == doctest::Approx(-1.0));
  CHECK(L(1, 1).real() == doctest::Approx(-1.0));
  Mat L2 = matrix_log2_on_support(diag2(4.0, 1.0));
  CHECK(L2(0, 0).real() == doctest::Approx(2.0));
  CHECK(L2(1, 1).real() == doctest::Approx(0.0));
}

TEST_CASE("matrix_log2_on_support clamps kernel eigenvalues") {
  Mat L = matrix_log2_on_support(diag2(1.0, 0.0), 1e-14);
  CHECK(L(1, 1).real() == doctest::Approx(std::log2(1e-14)));
}

TEST_CASE("matrix_log2_on_support rejects negative spectra") {
  CHECK_THROWS_WITH_AS(matrix_log2_on_support(diag2(1.0, -1e-4)),
                       doctest::Contains("NegativeEigenvalue"), Error);
}

TEST_CASE("kron identity") {
  CHECK(max_abs(kron(Mat::identity(2), Mat::identity(2)) - Mat::identity(4)) ==
        0.0);
}

TEST_CASE("partial trace of a product state returns the kept factor") {
  std::mt19937_64 rng(11);
  Mat a = random_density(2, rng);
  Mat b = random_density(3, rng);
  Mat ab = kron(a, b);
  CHECK(max_abs(partial_trace(ab, {2, 3}, {0}) - a) < 1e-12);
  CHECK(max_abs(partial_trace(ab, {2, 3}, {1}) - b) < 1e-12);
}

TEST_CASE("partial trace preserves trace") {
  std::mt19937_64 rng(13);
  Mat m = random_hermitian(12, rng);
  Mat r = partial_trace(m, {2, 3, 2}, {1});
  CHECK(std::abs(trace(r).real() - trace(m).real()) < 1e-10);
  CHECK(std::abs(trace(r).imag()) < 1e-12);
}

TEST_CASE("partial trace over three subsystems matches sequential tracing") {
  std::mt19937_64 rng(17);
  Mat m = random_density(8, rng);
  Mat keep_mid = partial_trace(m, {2, 2, 2}, {1});
  Mat step = partial_trace(m, {2, 2, 2}, {1, 2});
  Mat two_step = partial_trace(step, {2, 2}, {0});
  CHECK(max_abs(keep_mid - two_step) < 1e-12);
}

TEST_CASE("frob_inner of pauli X with itself") {
  CHECK(frob_inner(kPauliX, kPauliX).real() == doctest::Approx(2.0));
  CHECK(frob_inner(kPauliX, kPauliX).imag() == doctest::Approx(0.0));
}

TEST_CASE("von_neumann_entropy reference points") {
  CHECK(von_neumann_entropy(diag2(1.0, 0.0)) == doctest::Approx(0.0));
  CHECK(von_neumann_entropy(diag2(0.5, 0.5)) == doctest::Approx(1.0));
  CHECK(von_neumann_entropy(diag2(0.9, 0.1)) ==
        doctest::Approx(binary_entropy(0.1)).epsilon(1e-10));
  CHECK(binary_entropy(0.1) == doctest::Approx(0.46899559358928122).epsilon(1e-12));
}

TEST_CASE("von_neumann_entropy invariant under unitary conjugation") {
  std::mt19937_64 rng(19);
  Mat rho = random_density(6, rng);
  Mat u = herm_eig(random_hermitian(6, rng)).eigenvectors;
  Mat rotated = u * rho * adjoint(u);
  CHECK(std::abs(von_neumann_entropy(rotated) - von_neumann_entropy(rho)) <
        1e-9);
}

TEST_CASE("relative_entropy reference points") {
  std::mt19937_64 rng(23);
  Mat rho = random_density(4, rng);
  auto self = relative_entropy(rho, rho);
  CHECK(!self.infinite);
  CHECK(std::abs(self.bits) < 1e-9);

  auto pure_vs_mixed = relative_entropy(diag2(1.0, 0.0), diag2(0.5, 0.5));
  CHECK(!pure_vs_mixed.infinite);
  CHECK(pure_vs_mixed.bits == doctest::Approx(1.0));

  auto disjoint = relative_entropy(diag2(1.0, 0.0), diag2(0.0, 1.0));
  CHECK(disjoint.infinite);
}

TEST_CASE("relative_entropy nonnegative on normalized pairs") {
  std::mt19937_64 rng(29);
  for (int rep = 0; rep < 10; ++rep) {
    Mat rho = random_density(4, rng);
    Mat sigma = random_density(4, rng);
    auto d = relative_entropy(rho, sigma);
    CHECK(!d.infinite);
    CHECK(d.bits >= -1e-9);
    CHECK(d.bits > 1e-4);  // random pairs are never equal
  }
}

TEST_CASE("conditional_entropy reference points") {
  Mat bell(4, 4);
  const int idx[2] = {0, 3};
  for (int i : idx)
    for (int j : idx) bell(i, j) = 0.5;
  CHECK(conditional_entropy(bell, 2, 2) == doctest::Approx(-1.0));

  std::mt19937_64 rng(31);
  Mat a = random_density(2, rng);
  Mat b = random_density(2, rng);
  CHECK(conditional_entropy(kron(a, b), 2, 2) ==
        doctest::Approx(von_neumann_entropy(a)).epsilon(1e-9));

  Mat cc(4, 4);
  cc(0, 0) = 0.5;
  cc(3, 3) = 0.5;
  CHECK(conditional_entropy(cc, 2, 2) == doctest::Approx(0.0));
}

TEST_CASE("purify reconstructs the input state") {
  std::mt19937_64 rng(37);

  Mat pure = diag2(1.0, 0.0);
  Mat psi = purify(pure);
  CHECK(psi.rows == 2);  // trivial auxiliary

  Mat half = diag2(0.5, 0.5);
  Mat psi2 = purify(half);
  CHECK(psi2.rows == 4);
  Mat back = partial_trace(psi2 * adjoint(psi2), {2, 2}, {0});
  CHECK(max_abs(back - half) < 1e-10);

  Mat skew = diag2(0.9, 0.1);
  Mat psi3 = purify(skew);
  Mat back3 = partial_trace(psi3 * adjoint(psi3), {2, 2}, {0});
  CHECK(max_abs(back3 - skew) < 1e-10);

  for (int rep = 0; rep < 5; ++rep) {
    Mat rho = random_density(5, rng);
    Mat p = purify(rho);
    const int aux = p.rows / 5;
    Mat back_r = partial_trace(p * adjoint(p), {5, aux}, {0});
    CHECK(max_abs(back_r - rho) < 1e-10);
  }
}

TEST_CASE("herm_sqrt_psd squares back to the input") {
  std::mt19937_64 rng(59);
  for (int rep = 0; rep < 6; ++rep) {
    Mat rho = random_density(4, rng);
    Mat s = herm_sqrt_psd(rho);
    CHECK(is_hermitian(s, 1e-10));
    CHECK(max_abs(s * s - rho) < 1e-10);
  }

  // rank-deficient input: sqrt of a projector is the projector itself
  Mat p = diag2(1.0, 0.0);
  CHECK(max_abs(herm_sqrt_psd(p) - p) < 1e-12);

  // tiny negative eigenvalue noise is treated as zero
  Mat eps = diag2(1.0, -1e-13);
  Mat se = herm_sqrt_psd(eps);
  CHECK(max_abs(se * se - diag2(1.0, 0.0)) < 1e-10);
}
