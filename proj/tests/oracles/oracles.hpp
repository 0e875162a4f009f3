#pragma once

// Reference implementations used only by the tests. None of them calls into
// the library's eigensolver, projection or quadrature code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Cyclic Jacobi rotations on a full symmetric matrix.
inline std::pair<VectorXd, MatrixXd> jacobi_eigen(MatrixXd A, int max_sweeps = 100) {
  const Eigen::Index n = A.rows();
  MatrixXd V = MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
    if (off < 1e-30 * std::max(1.0, A.squaredNorm())) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (A(p, q) == 0.0) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  return {A.diagonal(), V};
}

inline MatrixXd psd_part(const MatrixXd& X) {
  auto [w, V] = jacobi_eigen(0.5 * (X + X.transpose()));
  return V * w.cwiseMax(0.0).asDiagonal() * V.transpose();
}

/// Dykstra's alternating projections onto the PSD cone and a second convex set.
inline MatrixXd dykstra(const MatrixXd& X, const std::function<MatrixXd(const MatrixXd&)>& second,
                        int max_iters = 200000, double tol = 1e-15) {
  MatrixXd x = X, p = MatrixXd::Zero(X.rows(), X.cols()), q = p;
  for (int k = 0; k < max_iters; ++k) {
    const MatrixXd y = psd_part(x + p);
    p = x + p - y;
    const MatrixXd xn = second(y + q);
    q = y + q - xn;
    const double change = (xn - x).norm();
    x = xn;
    if (change < tol * std::max(1.0, X.norm()) && (x - y).norm() < tol * std::max(1.0, X.norm())) break;
  }
  return 0.5 * (x + x.transpose());
}

/// Nearest point of {M >= 0, ||M||_F <= lambda}.
inline MatrixXd project_psd_frobenius(const MatrixXd& X, double lambda) {
  return dykstra(X, [lambda](const MatrixXd& Y) {
    const double n = Y.norm();
    return n > lambda ? MatrixXd(Y * (lambda / n)) : Y;
  });
}

/// Nearest point of {M >= 0, tr M <= lambda}; on the PSD cone the nuclear
/// norm equals the trace, so this is the nuclear-norm projection.
inline MatrixXd project_psd_trace(const MatrixXd& X, double lambda) {
  return dykstra(X, [lambda](const MatrixXd& Y) {
    const double excess = Y.trace() - lambda;
    if (excess <= 0.0) return Y;
    return MatrixXd(Y - (excess / static_cast<double>(Y.rows())) * MatrixXd::Identity(Y.rows(), Y.cols()));
  });
}

/// Random feasible points: random PSD matrices of random rank scaled into the
/// norm ball, plus shrunken copies of X's PSD part. Returns the closest one.
inline MatrixXd random_feasible_search(const MatrixXd& X, double lambda, bool nuclear, int samples,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const Eigen::Index n = X.rows();
  const MatrixXd base = psd_part(X);
  const auto norm_of = [&](const MatrixXd& M) {
    if (!nuclear) return M.norm();
    return M.trace();
  };
  MatrixXd best = MatrixXd::Zero(n, n);
  double best_d = X.norm();
  for (int s = 0; s < samples; ++s) {
    MatrixXd M;
    if (s % 2 == 0) {
      const auto r = 1 + static_cast<Eigen::Index>(U(rng) * static_cast<double>(n));
      MatrixXd B(n, std::min(r, n));
      for (Eigen::Index a = 0; a < B.size(); ++a) B.data()[a] = N(rng);
      M = B * B.transpose();
    } else {
      MatrixXd E(n, n);
      for (Eigen::Index a = 0; a < E.size(); ++a) E.data()[a] = N(rng);
      M = base + 0.1 * U(rng) * best_d * psd_part(0.5 * (E + E.transpose()));
    }
    const double nm = norm_of(M);
    if (nm > 0.0) M *= std::min(1.0, lambda / nm) * (s % 4 < 2 ? 1.0 : U(rng));
    const double d = (X - M).norm();
    if (d < best_d) {
      best_d = d;
      best = M;
    }
  }
  return best;
}

/// Central finite difference of f along every symmetric direction E_ab + E_ba
/// (or E_aa), returned as a full gradient in the Frobenius inner product.
inline MatrixXd symmetric_gradient_fd(const std::function<double(const MatrixXd&)>& f, const MatrixXd& M,
                                      double h = 1e-6) {
  const Eigen::Index n = M.rows();
  MatrixXd G(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b <= a; ++b) {
      MatrixXd E = MatrixXd::Zero(n, n);
      E(a, b) = 1.0;
      E(b, a) = 1.0;
      const double d = (f(M + h * E) - f(M - h * E)) / (2.0 * h);
      // directional derivative along E equals G_ab + G_ba (= 2 G_ab) off the
      // diagonal and G_aa on it
      G(a, b) = G(b, a) = (a == b) ? d : 0.5 * d;
    }
  }
  return G;
}

/// Composite Simpson with `panels` (even) subintervals.
inline double simpson(const std::function<double(double)>& f, double lo, double hi, int panels) {
  if (panels % 2) ++panels;
  const double h = (hi - lo) / panels;
  double s = f(lo) + f(hi);
  for (int k = 1; k < panels; ++k) s += (k % 2 ? 4.0 : 2.0) * f(lo + k * h);
  return s * h / 3.0;
}

/// Arc length of r = b theta from 0 to theta, in closed form.
inline double archimedean_length(double b, double theta) {
  return 0.5 * b * (theta * std::sqrt(1.0 + theta * theta) + std::asinh(theta));
}

/// Centered Gram H K H with H = I - 11^T / n, formed explicitly.
inline MatrixXd centered_explicit(const MatrixXd& K) {
  const Eigen::Index n = K.rows();
  const MatrixXd H = MatrixXd::Identity(n, n) - MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  return H * K * H;
}

}  // namespace oracle
