#include "keyforge/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace keyforge {

namespace {

void require(bool ok, const char* code, const std::string& msg) {
  if (!ok) throw Error(code, msg);
}

}  // namespace

Mat Mat::identity(int n) {
  Mat I(n, n);
  for (int i = 0; i < n; ++i) I(i, i) = 1.0;
  return I;
}

Mat operator+(const Mat& A, const Mat& B) {
  require(A.rows == B.rows && A.cols == B.cols, "DimensionMismatch", "add");
  Mat C(A.rows, A.cols);
  for (size_t i = 0; i < A.a.size(); ++i) C.a[i] = A.a[i] + B.a[i];
  return C;
}

Mat operator-(const Mat& A, const Mat& B) {
  require(A.rows == B.rows && A.cols == B.cols, "DimensionMismatch", "sub");
  Mat C(A.rows, A.cols);
  for (size_t i = 0; i < A.a.size(); ++i) C.a[i] = A.a[i] - B.a[i];
  return C;
}

Mat operator*(const Mat& A, const Mat& B) {
  require(A.cols == B.rows, "DimensionMismatch", "mul");
  Mat C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    for (int k = 0; k < A.cols; ++k) {
      const cx aik = A(i, k);
      if (aik == cx(0.0, 0.0)) continue;
      const cx* brow = &B.a[static_cast<size_t>(k) * B.cols];
      cx* crow = &C.a[static_cast<size_t>(i) * C.cols];
      for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return C;
}

Mat operator*(cx s, const Mat& A) {
  Mat C = A;
  for (auto& v : C.a) v *= s;
  return C;
}

Mat operator*(double s, const Mat& A) { return cx(s, 0.0) * A; }

Mat adjoint(const Mat& A) {
  Mat C(A.cols, A.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) C(j, i) = std::conj(A(i, j));
  return C;
}

Mat transpose(const Mat& A) {
  Mat C(A.cols, A.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) C(j, i) = A(i, j);
  return C;
}

Mat conj_entrywise(const Mat& A) {
  Mat C = A;
  for (auto& v : C.a) v = std::conj(v);
  return C;
}

cx trace(const Mat& A) {
  require(A.square(), "DimensionMismatch", "trace of non-square matrix");
  cx t = 0.0;
  for (int i = 0; i < A.rows; ++i) t += A(i, i);
  return t;
}

double max_abs(const Mat& A) {
  double m = 0.0;
  for (const auto& v : A.a) m = std::max(m, std::abs(v));
  return m;
}

double fro_norm(const Mat& A) {
  double s = 0.0;
  for (const auto& v : A.a) s += std::norm(v);
  return std::sqrt(s);
}

bool is_hermitian(const Mat& M, double tol) {
  if (!M.square()) return false;
  const double bound = tol * (1.0 + max_abs(M));
  for (int i = 0; i < M.rows; ++i)
    for (int j = i; j < M.cols; ++j)
      if (std::abs(M(i, j) - std::conj(M(j, i))) > bound) return false;
  return true;
}

void check_hermitian(const Mat& M, double tol) {
  require(is_hermitian(M, tol), "NonHermitianInput",
          "matrix violates the Hermitian invariant");
}

Mat hermitize(const Mat& M) {
  Mat H(M.rows, M.cols);
  for (int i = 0; i < M.rows; ++i)
    for (int j = 0; j < M.cols; ++j)
      H(i, j) = 0.5 * (M(i, j) + std::conj(M(j, i)));
  return H;
}

Spectrum herm_eig(const Mat& M) {
  check_hermitian(M);
  const int n = M.rows;
  Mat A = hermitize(M);
  Mat V = Mat::identity(n);

  auto offdiag_fro = [&]() {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) s += std::norm(A(i, j));
    return std::sqrt(s);
  };

  const double scale = fro_norm(A);
  const double stop = 1e-13 * scale;

  for (int sweep = 0; sweep < 100 && offdiag_fro() > stop; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const cx g = A(p, q);
        const double ag = std::abs(g);
        if (ag <= 1e-300) continue;
        const double alpha = A(p, p).real();
        const double beta = A(q, q).real();
        const cx u = g / ag;  // e^{i arg g}
        const double tau = (alpha - beta) / (2.0 * ag);
        const double t =
            (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        const cx su = s * u;
        const cx suc = s * std::conj(u);

        // A <- J† A J with J[p,p]=c, J[p,q]=-s u, J[q,p]=s conj(u), J[q,q]=c
        for (int k = 0; k < n; ++k) {
          const cx akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp + suc * akq;
          A(k, q) = -su * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const cx apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk + su * aqk;
          A(q, k) = -suc * apk + c * aqk;
        }
        A(p, q) = 0.0;
        A(q, p) = 0.0;
        A(p, p) = cx(A(p, p).real(), 0.0);
        A(q, q) = cx(A(q, q).real(), 0.0);

        for (int k = 0; k < n; ++k) {
          const cx vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp + suc * vkq;
          V(k, q) = -su * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return A(i, i).real() < A(j, j).real(); });

  Spectrum sp;
  sp.eigenvalues.resize(n);
  sp.eigenvectors = Mat(n, n);
  for (int j = 0; j < n; ++j) {
    sp.eigenvalues[j] = A(order[j], order[j]).real();
    for (int i = 0; i < n; ++i) sp.eigenvectors(i, j) = V(i, order[j]);
  }
  return sp;
}

Mat matrix_log2_on_support(const Mat& M, double clamp) {
  Spectrum sp = herm_eig(M);
  require(sp.eigenvalues.empty() || sp.eigenvalues.front() >= -1e-8,
          "NegativeEigenvalue", "matrix_log2_on_support needs a PSD input");
  const int n = M.rows;
  Mat L(n, n);
  const double floor_val = std::log2(clamp);
  for (int k = 0; k < n; ++k) {
    const double lam = sp.eigenvalues[k];
    const double lg = lam > clamp ? std::log2(lam) : floor_val;
    for (int i = 0; i < n; ++i) {
      const cx vik = sp.eigenvectors(i, k);
      if (vik == cx(0.0, 0.0)) continue;
      for (int j = 0; j < n; ++j)
        L(i, j) += lg * vik * std::conj(sp.eigenvectors(j, k));
    }
  }
  return hermitize(L);
}

Mat herm_sqrt_psd(const Mat& M) {
  Spectrum sp = herm_eig(hermitize(M));
  const int n = M.rows;
  Mat S(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      cx acc(0.0, 0.0);
      for (int k = 0; k < n; ++k) {
        const double lam = sp.eigenvalues[k];
        if (lam <= 0.0) continue;
        acc += sp.eigenvectors(i, k) * std::sqrt(lam) *
               std::conj(sp.eigenvectors(j, k));
      }
      S(i, j) = acc;
    }
  return hermitize(S);
}

Mat kron(const Mat& A, const Mat& B) {
  Mat C(A.rows * B.rows, A.cols * B.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) {
      const cx aij = A(i, j);
      if (aij == cx(0.0, 0.0)) continue;
      for (int k = 0; k < B.rows; ++k)
        for (int l = 0; l < B.cols; ++l)
          C(i * B.rows + k, j * B.cols + l) = aij * B(k, l);
    }
  return C;
}

Mat partial_trace(const Mat& M, const std::vector<int>& dims,
                  const std::vector<int>& keep) {
  require(M.square(), "DimensionMismatch", "partial_trace needs square input");
  int total = 1;
  for (int d : dims) {
    require(d >= 1, "DimensionMismatch", "subsystem dimension must be >= 1");
    total *= d;
  }
  require(total == M.rows, "DimensionMismatch",
          "product of dims does not match matrix dimension");
  std::vector<bool> kept(dims.size(), false);
  for (int k : keep) {
    require(k >= 0 && static_cast<size_t>(k) < dims.size(), "DimensionMismatch",
            "keep index out of range");
    kept[k] = true;
  }

  int dkeep = 1, dtrace = 1;
  for (size_t i = 0; i < dims.size(); ++i) (kept[i] ? dkeep : dtrace) *= dims[i];

  // Row-major strides of each subsystem index inside the full index.
  const int ns = static_cast<int>(dims.size());
  std::vector<int> stride(ns, 1);
  for (int i = ns - 2; i >= 0; --i) stride[i] = stride[i + 1] * dims[i + 1];
  // Strides inside the kept / traced composite indices (original order).
  std::vector<int> kstride(ns, 0), tstride(ns, 0);
  {
    int ks = 1, ts = 1;
    for (int i = ns - 1; i >= 0; --i) {
      if (kept[i]) {
        kstride[i] = ks;
        ks *= dims[i];
      } else {
        tstride[i] = ts;
        ts *= dims[i];
      }
    }
  }

  // full index of (kept composite k, traced composite t)
  auto full_index = [&](int kc, int tc) {
    int idx = 0;
    for (int i = 0; i < ns; ++i) {
      int sub;
      if (kept[i]) {
        sub = (kc / kstride[i]) % dims[i];
      } else {
        sub = (tc / tstride[i]) % dims[i];
      }
      idx += sub * stride[i];
    }
    return idx;
  };

  Mat R(dkeep, dkeep);
  for (int i = 0; i < dkeep; ++i)
    for (int j = 0; j < dkeep; ++j) {
      cx s = 0.0;
      for (int t = 0; t < dtrace; ++t) s += M(full_index(i, t), full_index(j, t));
      R(i, j) = s;
    }
  return R;
}

cx frob_inner(const Mat& A, const Mat& B) {
  require(A.rows == B.rows && A.cols == B.cols, "DimensionMismatch",
          "frob_inner");
  cx s = 0.0;
  for (size_t i = 0; i < A.a.size(); ++i) s += std::conj(A.a[i]) * B.a[i];
  return s;
}

double von_neumann_entropy(const Mat& rho) {
  Spectrum sp = herm_eig(rho);
  double h = 0.0;
  for (double lam : sp.eigenvalues)
    if (lam > kSupportThreshold) h -= lam * std::log2(lam);
  return h;
}

RelEntropyResult relative_entropy(const Mat& rho, const Mat& sigma) {
  require(rho.rows == sigma.rows && rho.cols == sigma.cols, "DimensionMismatch",
          "relative_entropy");
  Spectrum sr = herm_eig(rho);
  Spectrum ss = herm_eig(sigma);
  require(sr.eigenvalues.front() >= -1e-8 && ss.eigenvalues.front() >= -1e-8,
          "NegativeEigenvalue", "relative_entropy needs PSD inputs");

  const int n = rho.rows;
  // weight of rho outside supp(sigma)
  double outside = 0.0;
  for (int k = 0; k < n; ++k) {
    if (ss.eigenvalues[k] > kSupportThreshold) continue;
    cx q = 0.0;
    for (int i = 0; i < n; ++i) {
      cx row = 0.0;
      for (int j = 0; j < n; ++j) row += rho(i, j) * ss.eigenvectors(j, k);
      q += std::conj(ss.eigenvectors(i, k)) * row;
    }
    outside += q.real();
  }
  if (outside > 1e-9) return {0.0, true};

  double tr_rho_log_rho = 0.0;
  for (double lam : sr.eigenvalues)
    if (lam > kSupportThreshold) tr_rho_log_rho += lam * std::log2(lam);

  Mat log_sigma = matrix_log2_on_support(sigma);
  const double tr_rho_log_sigma = frob_inner(rho, log_sigma).real();
  return {tr_rho_log_rho - tr_rho_log_sigma, false};
}

double conditional_entropy(const Mat& rho_ab, int dim_a, int dim_b) {
  require(dim_a * dim_b == rho_ab.rows, "DimensionMismatch",
          "conditional_entropy: dims must multiply to the total dimension");
  Mat rho_b = partial_trace(rho_ab, {dim_a, dim_b}, {1});
  return von_neumann_entropy(rho_ab) - von_neumann_entropy(rho_b);
}

Mat purify(const Mat& rho) {
  Spectrum sp = herm_eig(rho);
  const int n = rho.rows;
  std::vector<int> support;
  for (int k = 0; k < n; ++k)
    if (sp.eigenvalues[k] > kSupportThreshold) support.push_back(k);
  const int rank = std::max<int>(1, static_cast<int>(support.size()));

  Mat psi(n * rank, 1);
  for (size_t r = 0; r < support.size(); ++r) {
    const int k = support[r];
    const double w = std::sqrt(sp.eigenvalues[k]);
    for (int i = 0; i < n; ++i)
      psi(i * rank + static_cast<int>(r), 0) = w * sp.eigenvectors(i, k);
  }
  return psi;
}

double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

}  // namespace keyforge
