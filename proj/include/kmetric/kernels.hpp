#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "kmetric/error.hpp"

namespace kmetric {

/// Items are stored one per row.
using ItemMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class KernelFamily { Linear, Gaussian, Sigmoid, Polynomial, Laplacian };

inline std::string_view to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::Linear: return "linear";
    case KernelFamily::Gaussian: return "gaussian";
    case KernelFamily::Sigmoid: return "sigmoid";
    case KernelFamily::Polynomial: return "polynomial";
    case KernelFamily::Laplacian: return "laplacian";
  }
  return "unknown";
}

inline KernelFamily kernel_family_from_string(std::string_view s) {
  if (s == "linear") return KernelFamily::Linear;
  if (s == "gaussian" || s == "rbf") return KernelFamily::Gaussian;
  if (s == "sigmoid") return KernelFamily::Sigmoid;
  if (s == "polynomial" || s == "poly") return KernelFamily::Polynomial;
  if (s == "laplacian") return KernelFamily::Laplacian;
  throw InputError("unknown kernel family '" + std::string(s) + "'");
}

/// A positive-definite (or, for sigmoid, merely symmetric) similarity on R^d.
///
///   linear      x.y
///   gaussian    exp(-|x-y|_2^2 / (2 sigma^2))
///   sigmoid     tanh(c + alpha x.y)
///   polynomial  (c + x.y)^p
///   laplacian   exp(-alpha |x-y|_1)
///
/// Parameters are validated by the named constructors. Every formula is
/// symmetric term by term, so k(x, y) == k(y, x) bitwise.
class Kernel {
 public:
  Kernel() = default;

  static Kernel linear() { return Kernel(KernelFamily::Linear); }

  static Kernel gaussian(double sigma) {
    detail::require(std::isfinite(sigma) && sigma > 0.0, "gaussian kernel: sigma must be > 0");
    Kernel k(KernelFamily::Gaussian);
    k.sigma_ = sigma;
    return k;
  }

  static Kernel sigmoid(double c, double alpha) {
    detail::require(std::isfinite(c) && std::isfinite(alpha), "sigmoid kernel: c, alpha must be finite");
    Kernel k(KernelFamily::Sigmoid);
    k.c_ = c;
    k.alpha_ = alpha;
    return k;
  }

  static Kernel polynomial(double c, int degree) {
    detail::require(std::isfinite(c) && c >= 0.0, "polynomial kernel: c must be >= 0");
    detail::require(degree >= 1, "polynomial kernel: degree must be a positive integer");
    Kernel k(KernelFamily::Polynomial);
    k.c_ = c;
    k.degree_ = degree;
    return k;
  }

  static Kernel laplacian(double alpha) {
    detail::require(std::isfinite(alpha) && alpha > 0.0, "laplacian kernel: alpha must be > 0");
    Kernel k(KernelFamily::Laplacian);
    k.alpha_ = alpha;
    return k;
  }

  KernelFamily family() const { return family_; }
  double sigma() const { return sigma_; }
  double c() const { return c_; }
  double alpha() const { return alpha_; }
  int degree() const { return degree_; }

  /// Short human-readable descriptor, e.g. "gaussian(sigma=2)".
  std::string describe() const {
    auto num = [](double v) {
      std::string s = std::to_string(v);
      s.erase(s.find_last_not_of('0') + 1);
      if (!s.empty() && s.back() == '.') s.pop_back();
      return s;
    };
    switch (family_) {
      case KernelFamily::Linear: return "linear";
      case KernelFamily::Gaussian: return "gaussian(sigma=" + num(sigma_) + ")";
      case KernelFamily::Sigmoid: return "sigmoid(c=" + num(c_) + ",alpha=" + num(alpha_) + ")";
      case KernelFamily::Polynomial:
        return "polynomial(c=" + num(c_) + ",p=" + std::to_string(degree_) + ")";
      case KernelFamily::Laplacian: return "laplacian(alpha=" + num(alpha_) + ")";
    }
    return "unknown";
  }

  /// Evaluate on two vectors of equal length. No dimension check; see eval_kernel.
  template <class X, class Y>
  double operator()(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<Y>& y) const {
    switch (family_) {
      case KernelFamily::Linear: return dot(x, y);
      case KernelFamily::Gaussian: {
        double s = 0.0;
        for (Eigen::Index k = 0; k < x.size(); ++k) {
          const double d = x(k) - y(k);
          s += d * d;
        }
        return std::exp(-s / (2.0 * sigma_ * sigma_));
      }
      case KernelFamily::Sigmoid: return std::tanh(c_ + alpha_ * dot(x, y));
      case KernelFamily::Polynomial: return std::pow(c_ + dot(x, y), degree_);
      case KernelFamily::Laplacian: {
        double s = 0.0;
        for (Eigen::Index k = 0; k < x.size(); ++k) s += std::abs(x(k) - y(k));
        return std::exp(-alpha_ * s);
      }
    }
    return 0.0;
  }

  /// Apply the family's scalar map to precomputed inner products / squared
  /// distances. Used by the blocked cross-kernel path.
  double from_dot(double xy) const {
    switch (family_) {
      case KernelFamily::Linear: return xy;
      case KernelFamily::Sigmoid: return std::tanh(c_ + alpha_ * xy);
      case KernelFamily::Polynomial: return std::pow(c_ + xy, degree_);
      default: return 0.0;
    }
  }

  double from_sq_dist(double d2) const { return std::exp(-std::max(d2, 0.0) / (2.0 * sigma_ * sigma_)); }

  friend bool operator==(const Kernel&, const Kernel&) = default;

 private:
  explicit Kernel(KernelFamily f) : family_(f) {}

  template <class X, class Y>
  static double dot(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<Y>& y) {
    // explicit left-to-right sum; product terms commute exactly
    double s = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) s += x(k) * y(k);
    return s;
  }

  KernelFamily family_ = KernelFamily::Linear;
  double sigma_ = 1.0;
  double c_ = 0.0;
  double alpha_ = 1.0;
  int degree_ = 1;
};

template <class X, class Y>
double eval_kernel(const Kernel& kernel, const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<Y>& y) {
  if (x.size() != y.size() || x.size() < 1) {
    throw InputError("eval_kernel: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()) + ")");
  }
  return kernel(x, y);
}

/// Gram matrix plus the centering statistics needed for out-of-sample use.
struct GramMatrix {
  Eigen::MatrixXd K;
  ItemMatrix items;
  bool centered = false;
  /// Column means of the uncentered K (equal to row means by symmetry).
  Eigen::VectorXd row_means;
  double grand_mean = 0.0;

  Eigen::Index size() const { return K.rows(); }
};

inline GramMatrix gram_matrix(const Kernel& kernel, const ItemMatrix& items) {
  const Eigen::Index n = items.rows();
  if (n < 1) throw InputError("gram_matrix: empty item list");
  if (items.cols() < 1) throw InputError("gram_matrix: items must have dimension >= 1");
  GramMatrix g;
  g.items = items;
  g.K.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = kernel(items.row(i), items.row(j));
      g.K(i, j) = v;
      g.K(j, i) = v;
    }
  }
  return g;
}

/// Double-centering K - 1K/n - K1/n + 1K1/n^2.
inline GramMatrix center_gram(const GramMatrix& gram) {
  if (gram.centered) throw InputError("center_gram: matrix is already centered");
  const Eigen::Index n = gram.K.rows();
  if (n < 1) throw InputError("center_gram: empty Gram matrix");
  GramMatrix out;
  out.items = gram.items;
  out.row_means = gram.K.colwise().mean().transpose();
  out.grand_mean = out.row_means.mean();
  out.K = gram.K;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      out.K(i, j) += out.grand_mean - out.row_means(i) - out.row_means(j);
    }
  }
  // restore exact symmetry lost to summation order
  out.K = (0.5 * (out.K + out.K.transpose())).eval();
  out.centered = true;
  return out;
}

/// Rectangular kernel matrix C(a, b) = k(X_a, Y_b). Dot-product and Gaussian
/// families go through a GEMM; agrees with per-pair evaluation to round-off.
inline Eigen::MatrixXd cross_kernel(const Kernel& kernel, const ItemMatrix& X, const ItemMatrix& Y) {
  if (X.cols() != Y.cols()) {
    throw InputError("cross_kernel: dimension mismatch (" + std::to_string(X.cols()) + " vs " +
                     std::to_string(Y.cols()) + ")");
  }
  Eigen::MatrixXd C(X.rows(), Y.rows());
  switch (kernel.family()) {
    case KernelFamily::Laplacian:
      for (Eigen::Index a = 0; a < X.rows(); ++a)
        for (Eigen::Index b = 0; b < Y.rows(); ++b) C(a, b) = kernel(X.row(a), Y.row(b));
      return C;
    case KernelFamily::Gaussian: {
      C.noalias() = X * Y.transpose();
      const Eigen::VectorXd xn = X.rowwise().squaredNorm();
      const Eigen::VectorXd yn = Y.rowwise().squaredNorm();
      for (Eigen::Index b = 0; b < C.cols(); ++b)
        for (Eigen::Index a = 0; a < C.rows(); ++a)
          C(a, b) = kernel.from_sq_dist(xn(a) + yn(b) - 2.0 * C(a, b));
      return C;
    }
    default:
      C.noalias() = X * Y.transpose();
      if (kernel.family() != KernelFamily::Linear) C = C.unaryExpr([&](double v) { return kernel.from_dot(v); });
      return C;
  }
}

/// k(x, x) for every row; sqrt of its max is the feature-norm bound B.
inline Eigen::VectorXd self_similarity(const Kernel& kernel, const ItemMatrix& X) {
  Eigen::VectorXd s(X.rows());
  for (Eigen::Index a = 0; a < X.rows(); ++a) s(a) = kernel(X.row(a), X.row(a));
  return s;
}

}  // namespace kmetric
