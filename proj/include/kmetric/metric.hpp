#pragma once

#include <cassert>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kmetric/error.hpp"
#include "kmetric/kpca.hpp"

namespace kmetric {

/// "Is item h closer to i or to j?" with label y. y = -1 means h is closer to i.
struct Triplet {
  std::size_t h = 0, i = 0, j = 0;
  int y = 1;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

using TripletSet = std::vector<Triplet>;

inline void validate_triplet(const Triplet& t, std::size_t item_count) {
  if (t.h >= item_count || t.i >= item_count || t.j >= item_count) {
    throw InputError("triplet (" + std::to_string(t.h) + "," + std::to_string(t.i) + "," + std::to_string(t.j) +
                     ") references an item outside [0," + std::to_string(item_count) + ")");
  }
  if (t.h == t.i || t.h == t.j || t.i == t.j) {
    throw InputError("triplet (" + std::to_string(t.h) + "," + std::to_string(t.i) + "," + std::to_string(t.j) +
                     ") has repeated indices");
  }
  if (t.y != 1 && t.y != -1) throw InputError("triplet label must be -1 or +1, got " + std::to_string(t.y));
}

inline void validate_triplets(const TripletSet& ts, std::size_t item_count) {
  for (const auto& t : ts) validate_triplet(t, item_count);
}

enum class ConstraintKind { None, Frobenius, Nuclear };

inline std::string_view to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::None: return "none";
    case ConstraintKind::Frobenius: return "frobenius";
    case ConstraintKind::Nuclear: return "nuclear";
  }
  return "none";
}

/// Schatten p-norm of a symmetric matrix; p = 0 selects the spectral norm.
inline double schatten_norm_symmetric(const Eigen::MatrixXd& M, int p) {
  if (M.size() == 0) return 0.0;
  const Eigen::VectorXd s = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M, Eigen::EigenvaluesOnly)
                                .eigenvalues()
                                .cwiseAbs();
  if (p == 0) return s.maxCoeff();
  if (p == 1) return s.sum();
  if (p == 2) return s.norm();
  return std::pow(s.array().pow(p).sum(), 1.0 / p);
}

struct MetricCertificate {
  double min_eigenvalue = 0.0;
  ConstraintKind kind = ConstraintKind::None;
  /// ||M||_F or ||M||_* according to `kind`; Frobenius when kind is None.
  double norm = 0.0;
  double bound = std::numeric_limits<double>::infinity();
};

/// Symmetric PSD matrix M defining ||u - v||_M^2 = (u-v)^T M (u-v).
struct MetricMatrix {
  Eigen::MatrixXd M;
  MetricCertificate certificate;

  Eigen::Index dimension() const { return M.rows(); }
};

/// Symmetrizes M exactly and records its spectrum-based certificate.
/// Throws NotPsdError if the minimum eigenvalue is below -1e-8 ||M||_2.
inline MetricMatrix certify_metric(Eigen::MatrixXd M, ConstraintKind kind = ConstraintKind::None,
                                   double bound = std::numeric_limits<double>::infinity()) {
  if (M.rows() != M.cols()) throw InputError("metric matrix must be square");
  M = (0.5 * (M + M.transpose())).eval();
  MetricMatrix out;
  out.certificate.kind = kind;
  out.certificate.bound = bound;
  if (M.size() > 0) {
    const Eigen::VectorXd w =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M, Eigen::EigenvaluesOnly).eigenvalues();
    out.certificate.min_eigenvalue = w.minCoeff();
    out.certificate.norm = kind == ConstraintKind::Nuclear ? w.cwiseAbs().sum() : w.norm();
    const double scale = w.cwiseAbs().maxCoeff();
    if (out.certificate.min_eigenvalue < -1e-8 * scale) {
      throw NotPsdError("metric matrix is not PSD: min eigenvalue " + std::to_string(out.certificate.min_eigenvalue));
    }
  }
  out.M = std::move(M);
  return out;
}

template <class U, class V>
double mahalanobis_sq(const Eigen::MatrixXd& M, const Eigen::MatrixBase<U>& u, const Eigen::MatrixBase<V>& v) {
  if (u.size() != v.size() || u.size() != M.rows()) {
    throw InputError("mahalanobis_sq: dimension mismatch (M is " + std::to_string(M.rows()) + ", vectors " +
                     std::to_string(u.size()) + " and " + std::to_string(v.size()) + ")");
  }
  const Eigen::VectorXd d = u - v;
  return d.dot(M * d);
}

template <class U, class V>
double mahalanobis_sq(const MetricMatrix& M, const Eigen::MatrixBase<U>& u, const Eigen::MatrixBase<V>& v) {
  return mahalanobis_sq(M.M, u, v);
}

/// K_t with Tr(M K_t) equal to the triplet margin.
template <class H, class I, class J>
Eigen::MatrixXd triplet_matrix(const Eigen::MatrixBase<H>& ph, const Eigen::MatrixBase<I>& pi,
                               const Eigen::MatrixBase<J>& pj) {
  const Eigen::VectorXd a = ph - pi;
  const Eigen::VectorXd b = ph - pj;
  return a * a.transpose() - b * b.transpose();
}

/// ||h - i||_M^2 - ||h - j||_M^2. Negative when h is closer to i.
template <class H, class I, class J>
double triplet_margin(const Eigen::MatrixXd& M, const Eigen::MatrixBase<H>& ph, const Eigen::MatrixBase<I>& pi,
                      const Eigen::MatrixBase<J>& pj) {
  if (pj.size() != ph.size()) throw InputError("triplet_margin: dimension mismatch");
  const double m = mahalanobis_sq(M, ph, pi) - mahalanobis_sq(M, ph, pj);
#ifndef NDEBUG
  const double via_trace = (M.cwiseProduct(triplet_matrix(ph, pi, pj))).sum();
  assert(std::abs(m - via_trace) <= 1e-8 * std::max(1.0, std::abs(m)));
#endif
  return m;
}

template <class H, class I, class J>
double triplet_margin(const MetricMatrix& M, const Eigen::MatrixBase<H>& ph, const Eigen::MatrixBase<I>& pi,
                      const Eigen::MatrixBase<J>& pj) {
  return triplet_margin(M.M, ph, pi, pj);
}

/// Label from a margin. Exact zero maps to +1.
inline int label_from_margin(double margin) { return margin < 0.0 ? -1 : 1; }

/// `embeddings` holds one item per row.
inline int predict_triplet(const Eigen::MatrixXd& M, const Eigen::MatrixXd& embeddings, const Triplet& t) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  if (t.h >= n || t.i >= n || t.j >= n) throw InputError("predict_triplet: index out of range");
  return label_from_margin(triplet_margin(M, embeddings.row(t.h).transpose(), embeddings.row(t.i).transpose(),
                                          embeddings.row(t.j).transpose()));
}

inline int predict_triplet(const MetricMatrix& M, const Eigen::MatrixXd& embeddings, const Triplet& t) {
  return predict_triplet(M.M, embeddings, t);
}

/// W with W W^T = M. Triangular Cholesky when M is numerically positive
/// definite, otherwise the eigen square root V diag(sqrt(max(lambda, 0))).
/// Throws NotPsdError when min eigenvalue < -1e-6 ||M||_F.
inline Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& M_in) {
  if (M_in.rows() != M_in.cols()) throw InputError("cholesky_factor: matrix must be square");
  const Eigen::Index n = M_in.rows();
  if (n == 0) return Eigen::MatrixXd(0, 0);
  const Eigen::MatrixXd M = 0.5 * (M_in + M_in.transpose());
  const double fro = M.norm();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  if (es.info() != Eigen::Success) throw NumericError("cholesky_factor: eigensolver failed");
  const double lmin = es.eigenvalues()(0);
  if (lmin < -1e-6 * fro) {
    throw NotPsdError("cholesky_factor: min eigenvalue " + std::to_string(lmin) + " below -1e-6*||M||_F");
  }
  const double lmax = es.eigenvalues()(n - 1);
  if (lmax > 0.0 && lmin > 1e-10 * lmax) {
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() == Eigen::Success) {
      Eigen::MatrixXd L = llt.matrixL();
      if ((L * L.transpose() - M).norm() <= 1e-8 * fro) return L;
    }
  }
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

/// KPCA model together with the learned metric and its factor W (W W^T = M).
/// W and the KPCA directions jointly represent the learned RKHS operator.
struct MetricModel {
  KpcaModel kpca;
  MetricMatrix metric;
  Eigen::MatrixXd W;

  /// Squared learned distance between two raw items.
  template <class X, class Y>
  double distance_sq(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<Y>& y) const {
    const Eigen::VectorXd d = embed(kpca, x) - embed(kpca, y);
    return (W.transpose() * d).squaredNorm();
  }
};

inline MetricModel make_metric_model(KpcaModel kpca, MetricMatrix metric) {
  if (metric.dimension() != kpca.dimension()) {
    throw InputError("metric dimension " + std::to_string(metric.dimension()) + " does not match KPCA dimension " +
                     std::to_string(kpca.dimension()));
  }
  MetricModel model{std::move(kpca), std::move(metric), {}};
  model.W = cholesky_factor(model.metric.M);
  return model;
}

}  // namespace kmetric
