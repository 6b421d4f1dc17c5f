#pragma once
// Dense complex-Hermitian linear algebra and entropic functionals.
// All entropies are in bits (log base 2).

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace keyforge {

using cx = std::complex<double>;

class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error(code + ": " + msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// Dense complex matrix, row-major. Rectangular in general; most callers
// hold Hermitian square matrices (rho, Gamma_i, POVM elements) but Kraus
// operators and isometries are genuinely rectangular.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<cx> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c) {}

  cx& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  const cx& operator()(int r, int c) const {
    return a[static_cast<size_t>(r) * cols + c];
  }

  static Mat identity(int n);
  static Mat zeros(int r, int c) { return Mat(r, c); }

  bool square() const { return rows == cols; }
};

Mat operator+(const Mat& A, const Mat& B);
Mat operator-(const Mat& A, const Mat& B);
Mat operator*(const Mat& A, const Mat& B);
Mat operator*(cx s, const Mat& A);
Mat operator*(double s, const Mat& A);

Mat adjoint(const Mat& A);
Mat transpose(const Mat& A);
Mat conj_entrywise(const Mat& A);
cx trace(const Mat& A);
double max_abs(const Mat& A);
double fro_norm(const Mat& A);

// max |M[j,k] - conj(M[k,j])| <= tol * (1 + max|M|)
bool is_hermitian(const Mat& M, double tol = 1e-12);
// throws Error("NonHermitianInput") when the invariant fails
void check_hermitian(const Mat& M, double tol = 1e-12);

// Forces exact Hermitian symmetry: (M + M†)/2.
Mat hermitize(const Mat& M);

struct Spectrum {
  std::vector<double> eigenvalues;  // ascending
  Mat eigenvectors;                 // unitary, columns match eigenvalues
};

// Cyclic Jacobi rotations on complex Hermitian matrices. Converges when the
// off-diagonal Frobenius norm drops below 1e-13 * ||M||_F. Dimensions in this
// codebase stay <= 64, so robustness beats asymptotic speed.
Spectrum herm_eig(const Mat& M);

inline constexpr double kSupportThreshold = 1e-12;  // eigenvalue > this counts as support
inline constexpr double kLogClamp = 1e-14;

// log2 on eigenvalues > clamp; eigenvalues <= clamp map to log2(clamp) on
// their eigenspace. Throws Error("NegativeEigenvalue") if min eig < -1e-8.
Mat matrix_log2_on_support(const Mat& M, double clamp = kLogClamp);

// Spectral square root; eigenvalues below zero are clamped to zero, so
// inputs PSD up to roundoff are accepted.
Mat herm_sqrt_psd(const Mat& M);

Mat kron(const Mat& A, const Mat& B);

// dims: subsystem dimensions whose product is M.rows; keep: indices of the
// subsystems retained, in their original tensor order.
Mat partial_trace(const Mat& M, const std::vector<int>& dims,
                  const std::vector<int>& keep);

// Tr(A† B), conjugate-linear in the first argument.
cx frob_inner(const Mat& A, const Mat& B);

// -Tr(rho log2 rho); eigenvalues <= support threshold are skipped.
double von_neumann_entropy(const Mat& rho);

struct RelEntropyResult {
  double bits = 0.0;
  bool infinite = false;  // supp(rho) not contained in supp(sigma)
};

// D(rho||sigma) = Tr[rho (log2 rho - log2 sigma)]; the infinite flag is set
// when rho has weight > 1e-9 outside the support of sigma.
RelEntropyResult relative_entropy(const Mat& rho, const Mat& sigma);

// H(A|B) = H(AB) - H(B) for rho_AB on dims {dA, dB}.
double conditional_entropy(const Mat& rho_ab, int dim_a, int dim_b);

// Purification on system (x) auxiliary, auxiliary dimension = numerical rank.
// Returns a (dim*rank) x 1 column vector.
Mat purify(const Mat& rho);

// Binary entropy in bits; h(0) = h(1) = 0.
double binary_entropy(double p);

}  // namespace keyforge
