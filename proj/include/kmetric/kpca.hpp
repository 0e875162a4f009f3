#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kmetric/error.hpp"
#include "kmetric/kernels.hpp"
#include "kmetric/linalg.hpp"
#include "kmetric/random.hpp"

namespace kmetric {

enum class KpcaMode { Exact, Nystrom };

/// How an out-of-sample kernel column is centered before projection.
enum class OutOfSampleCentering {
  /// kappa - row_means - mean(kappa) + grand_mean; reproduces training embeddings.
  Consistent,
  /// Raw kappa, A^T kappa. Only useful for comparison.
  None,
};

struct KpcaOptions {
  /// Eigenvalues <= threshold * lambda_max are dropped.
  double relative_threshold = 1e-10;
  OutOfSampleCentering centering = OutOfSampleCentering::Consistent;
};

/// Kernel PCA fitted on n training items (or m Nystrom landmarks).
///
/// Column j of `A` is the eigenvector alpha_j of the centered Gram matrix
/// scaled by 1/sqrt(lambda_j), so that embeddings of the training items
/// satisfy <phi_i, phi_j> = Kbar_ij on the retained spectrum. The embedding
/// of any x is A^T kbar(x), with kbar(x) the kernel column centered using
/// the stored training statistics.
struct KpcaModel {
  Kernel kernel;
  KpcaMode mode = KpcaMode::Exact;
  OutOfSampleCentering centering = OutOfSampleCentering::Consistent;
  /// n x m, scaled eigenvectors.
  Eigen::MatrixXd A;
  /// m retained eigenvalues, descending.
  Eigen::VectorXd eigenvalues;
  /// Items whose kernel columns define the embedding.
  ItemMatrix train_items;
  Eigen::VectorXd row_means;
  double grand_mean = 0.0;
  /// For Nystrom models, the sampled rows of the original item table.
  std::vector<std::size_t> landmark_indices;
  /// Number of eigenvalues that came out below -threshold and were dropped.
  int negative_eigenvalues = 0;
  /// Share of trace(Kbar) carried by dropped nonnegative eigenvalues.
  double dropped_trace_share = 0.0;

  Eigen::Index dimension() const { return A.cols(); }
  Eigen::Index input_dimension() const { return train_items.cols(); }
};

namespace detail {

/// Flip each column so its largest-magnitude entry is positive.
inline void fix_eigenvector_signs(Eigen::MatrixXd& V) {
  for (Eigen::Index j = 0; j < V.cols(); ++j) {
    Eigen::Index arg = 0;
    V.col(j).cwiseAbs().maxCoeff(&arg);
    if (V(arg, j) < 0.0) V.col(j) = -V.col(j);
  }
}

}  // namespace detail

inline KpcaModel fit_kpca(const GramMatrix& centered, const Kernel& kernel, const KpcaOptions& opts = {}) {
  if (!centered.centered) throw InputError("fit_kpca: Gram matrix must be centered");
  const Eigen::Index n = centered.K.rows();
  if (n < 1) throw InputError("fit_kpca: empty Gram matrix");

  const SymmetricEigen es = symmetric_eigen(centered.K);
  // ascending order
  const Eigen::VectorXd& w = es.values;
  const double lmax = w.size() ? std::max(w(n - 1), 0.0) : 0.0;
  const double cutoff = opts.relative_threshold * lmax;

  KpcaModel model;
  model.kernel = kernel;
  model.centering = opts.centering;
  model.train_items = centered.items;
  model.row_means = centered.row_means;
  model.grand_mean = centered.grand_mean;

  std::vector<Eigen::Index> keep;
  double trace_pos = 0.0, dropped = 0.0;
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    if (w(k) > 0.0) trace_pos += w(k);
    if (lmax > 0.0 && w(k) > cutoff) {
      keep.push_back(k);
    } else {
      if (w(k) < -cutoff && w(k) < 0.0) ++model.negative_eigenvalues;
      if (w(k) > 0.0) dropped += w(k);
    }
  }
  model.dropped_trace_share = trace_pos > 0.0 ? dropped / trace_pos : 0.0;

  const auto m = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd V(n, m);
  model.eigenvalues.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    V.col(j) = es.vectors.col(keep[j]);
    model.eigenvalues(j) = w(keep[j]);
  }
  detail::fix_eigenvector_signs(V);
  model.A = V * model.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal();
  return model;
}

/// Convenience overload: Gram, center, fit.
inline KpcaModel fit_kpca(const Kernel& kernel, const ItemMatrix& items, const KpcaOptions& opts = {}) {
  return fit_kpca(center_gram(gram_matrix(kernel, items)), kernel, opts);
}

/// Embeds every row of X. Returns an X.rows() x m matrix, one embedding per row.
inline Eigen::MatrixXd embed_all(const KpcaModel& model, const ItemMatrix& X) {
  if (X.cols() != model.input_dimension()) {
    throw InputError("embed: item dimension " + std::to_string(X.cols()) + " does not match model dimension " +
                     std::to_string(model.input_dimension()));
  }
  if (model.dimension() == 0) return Eigen::MatrixXd::Zero(X.rows(), 0);
  Eigen::MatrixXd C = cross_kernel(model.kernel, X, model.train_items);
  if (model.centering == OutOfSampleCentering::Consistent) {
    const Eigen::VectorXd col_mean = C.rowwise().mean();
    C.rowwise() -= model.row_means.transpose();
    C.colwise() -= col_mean;
    C.array() += model.grand_mean;
  }
  return C * model.A;
}

/// Single-item embedding, A^T kbar(x).
template <class X>
Eigen::VectorXd embed(const KpcaModel& model, const Eigen::MatrixBase<X>& x) {
  if (x.size() != model.input_dimension()) {
    throw InputError("embed: item dimension " + std::to_string(x.size()) + " does not match model dimension " +
                     std::to_string(model.input_dimension()));
  }
  ItemMatrix row(1, x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) row(0, k) = x(k);
  return embed_all(model, row).row(0).transpose();
}

/// Training-set embeddings of an exact model, V diag(sqrt(lambda)), one per row.
inline Eigen::MatrixXd training_embeddings(const KpcaModel& model) { return embed_all(model, model.train_items); }

/// Nystrom KPCA: exact KPCA on m landmarks drawn uniformly without
/// replacement; every item is then embedded through the landmark model.
inline KpcaModel fit_nystrom_kpca(const Kernel& kernel, const ItemMatrix& items, std::size_t m, std::uint64_t seed,
                                  const KpcaOptions& opts = {}) {
  const auto n = static_cast<std::size_t>(items.rows());
  if (m < 1) throw InputError("fit_nystrom_kpca: m must be >= 1");
  if (m > n) {
    throw InputError("fit_nystrom_kpca: m=" + std::to_string(m) + " exceeds item count " + std::to_string(n));
  }
  Rng rng(seed);
  std::vector<std::size_t> idx = sample_without_replacement(rng, n, m);
  ItemMatrix landmarks(static_cast<Eigen::Index>(m), items.cols());
  for (std::size_t a = 0; a < m; ++a) landmarks.row(static_cast<Eigen::Index>(a)) = items.row(static_cast<Eigen::Index>(idx[a]));
  KpcaModel model = fit_kpca(kernel, landmarks, opts);
  model.mode = KpcaMode::Nystrom;
  model.landmark_indices = std::move(idx);
  return model;
}

}  // namespace kmetric
