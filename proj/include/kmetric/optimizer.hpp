#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kmetric/error.hpp"
#include "kmetric/linalg.hpp"
#include "kmetric/metric.hpp"

namespace kmetric {

// ---------------------------------------------------------------------------
// Losses

/// Both losses are convex, nonnegative and 1-Lipschitz.
enum class LossKind { Hinge, Logistic };

inline std::string_view to_string(LossKind l) { return l == LossKind::Hinge ? "hinge" : "logistic"; }

inline LossKind loss_from_string(std::string_view s) {
  if (s == "hinge") return LossKind::Hinge;
  if (s == "logistic") return LossKind::Logistic;
  throw InputError("unknown loss '" + std::string(s) + "'");
}

inline double loss_value(LossKind loss, double z) {
  if (loss == LossKind::Hinge) return std::max(1.0 - z, 0.0);
  // log(1 + e^{-z}) without overflow
  return z > 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

/// A subderivative. The hinge kink at z = 1 takes 0.
inline double loss_derivative(LossKind loss, double z) {
  if (loss == LossKind::Hinge) return z < 1.0 ? -1.0 : 0.0;
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return -e / (1.0 + e);
  }
  return -1.0 / (1.0 + std::exp(z));
}

constexpr double loss_lipschitz(LossKind) { return 1.0; }

// ---------------------------------------------------------------------------
// Constraints and configuration

struct ConstraintSpec {
  ConstraintKind kind = ConstraintKind::Nuclear;
  double lambda = 1.0;

  static ConstraintSpec frobenius(double lambda) { return make(ConstraintKind::Frobenius, lambda); }
  static ConstraintSpec nuclear(double lambda) { return make(ConstraintKind::Nuclear, lambda); }

  static ConstraintSpec make(ConstraintKind kind, double lambda) {
    detail::require(kind != ConstraintKind::None, "constraint kind must be frobenius or nuclear");
    detail::require(std::isfinite(lambda) && lambda > 0.0, "constraint radius must be > 0");
    return ConstraintSpec{kind, lambda};
  }
};

enum class StepRule {
  /// eta_k = eta0 / sqrt(k)
  InverseSqrt,
  /// eta_k = eta0 / (sqrt(k) ||g_k||_F D), D the mean of ||a_t||^2 + ||b_t||^2:
  /// a step changes any margin by at most about eta0 / sqrt(k), whatever the
  /// scale of the features.
  NormalizedInverseSqrt,
};

inline std::string_view to_string(StepRule r) {
  return r == StepRule::InverseSqrt ? "inverse_sqrt" : "normalized_inverse_sqrt";
}

inline StepRule step_rule_from_string(std::string_view s) {
  if (s == "inverse_sqrt") return StepRule::InverseSqrt;
  if (s == "normalized_inverse_sqrt" || s == "normalized") return StepRule::NormalizedInverseSqrt;
  throw InputError("unknown step rule '" + std::string(s) + "'");
}

struct SolverConfig {
  int max_iters = 2000;
  double eta0 = 1.0;
  StepRule step = StepRule::InverseSqrt;
  /// Stop when the best objective improved by less than this relative amount
  /// over the last `stop_window` iterations.
  double stop_tolerance = 1e-6;
  int stop_window = 50;
  /// Echoed into reports. The solver itself starts from M = 0.
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(max_iters >= 1, "solver: max_iters must be >= 1");
    detail::require(std::isfinite(eta0) && eta0 > 0.0, "solver: eta0 must be > 0");
    detail::require(stop_tolerance >= 0.0, "solver: stop tolerance must be >= 0");
    detail::require(stop_window >= 1, "solver: stop window must be >= 1");
  }
};

struct SolveReport {
  /// Best-risk iterate; always feasible.
  MetricMatrix metric;
  double best_risk = std::numeric_limits<double>::infinity();
  int best_iteration = 0;
  int iterations = 0;
  bool stopped_early = false;
  /// Risk of iterate k (k = 0 is M = 0).
  std::vector<double> objective_trace;
  /// max(0, ||M_k|| - lambda) for the constraint norm.
  std::vector<double> violation_trace;
  double wall_seconds = 0.0;
  LossKind loss = LossKind::Logistic;
  ConstraintSpec constraint;
  SolverConfig config;
};

// ---------------------------------------------------------------------------
// Risk and subgradient

/// Per-triplet difference vectors a_t = phi_h - phi_i and b_t = phi_h - phi_j,
/// stored as columns.
struct TripletDifferences {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
  Eigen::VectorXd y;

  Eigen::Index size() const { return y.size(); }
  Eigen::Index dimension() const { return a.rows(); }
};

/// `embeddings` holds one item per row.
inline TripletDifferences make_differences(const Eigen::MatrixXd& embeddings, const TripletSet& triplets) {
  if (triplets.empty()) throw InputError("empty triplet set");
  validate_triplets(triplets, static_cast<std::size_t>(embeddings.rows()));
  const auto S = static_cast<Eigen::Index>(triplets.size());
  const Eigen::Index m = embeddings.cols();
  TripletDifferences d{Eigen::MatrixXd(m, S), Eigen::MatrixXd(m, S), Eigen::VectorXd(S)};
  for (Eigen::Index t = 0; t < S; ++t) {
    const Triplet& tr = triplets[static_cast<std::size_t>(t)];
    d.a.col(t) = (embeddings.row(tr.h) - embeddings.row(tr.i)).transpose();
    d.b.col(t) = (embeddings.row(tr.h) - embeddings.row(tr.j)).transpose();
    d.y(t) = tr.y;
  }
  return d;
}

/// Mean of ||a_t||^2 + ||b_t||^2, the typical size of a triplet matrix K_t.
inline double difference_scale(const TripletDifferences& d) {
  if (d.size() == 0) return 0.0;
  return (d.a.colwise().squaredNorm().sum() + d.b.colwise().squaredNorm().sum()) / static_cast<double>(d.size());
}

/// Margins a^T M a - b^T M b for every triplet.
inline Eigen::VectorXd margins(const Eigen::MatrixXd& M, const TripletDifferences& d) {
  if (M.rows() != d.dimension()) throw InputError("margins: metric dimension does not match embeddings");
  const Eigen::MatrixXd Ma = M * d.a;
  const Eigen::MatrixXd Mb = M * d.b;
  return (d.a.cwiseProduct(Ma).colwise().sum() - d.b.cwiseProduct(Mb).colwise().sum()).transpose();
}

/// Same margins for M = W W^T, in O(S m r).
inline Eigen::VectorXd margins_factored(const Eigen::MatrixXd& W, const TripletDifferences& d) {
  if (W.cols() == 0) return Eigen::VectorXd::Zero(d.size());
  const Eigen::MatrixXd pa = W.transpose() * d.a;
  const Eigen::MatrixXd pb = W.transpose() * d.b;
  return (pa.colwise().squaredNorm() - pb.colwise().squaredNorm()).transpose();
}

inline double risk_from_margins(const Eigen::VectorXd& mg, const Eigen::VectorXd& y, LossKind loss) {
  double s = 0.0;
  for (Eigen::Index t = 0; t < mg.size(); ++t) s += loss_value(loss, y(t) * mg(t));
  return s / static_cast<double>(mg.size());
}

inline double empirical_risk(const Eigen::MatrixXd& M, const TripletDifferences& d, LossKind loss) {
  return risk_from_margins(margins(M, d), d.y, loss);
}

inline double empirical_risk(const Eigen::MatrixXd& M, const Eigen::MatrixXd& embeddings, const TripletSet& triplets,
                             LossKind loss) {
  return empirical_risk(M, make_differences(embeddings, triplets), loss);
}

namespace detail {

/// Lower triangle of sum_t w_t (a_t a_t^T - b_t b_t^T), as two rank updates.
inline void accumulate_subgradient(const TripletDifferences& d, const Eigen::VectorXd& w, Eigen::MatrixXd& G) {
  const Eigen::Index m = d.dimension();
  G.setZero(m, m);
  Eigen::Index np = 0;
  for (Eigen::Index t = 0; t < w.size(); ++t)
    if (w(t) != 0.0) ++np;
  if (np == 0 || m == 0) return;
  Eigen::MatrixXd plus(m, np), minus(m, np);
  Eigen::Index c = 0;
  for (Eigen::Index t = 0; t < w.size(); ++t) {
    if (w(t) == 0.0) continue;
    const double s = std::sqrt(std::abs(w(t)));
    if (w(t) > 0.0) {
      plus.col(c) = s * d.a.col(t);
      minus.col(c) = s * d.b.col(t);
    } else {
      plus.col(c) = s * d.b.col(t);
      minus.col(c) = s * d.a.col(t);
    }
    ++c;
  }
  G.selfadjointView<Eigen::Lower>().rankUpdate(plus, 1.0);
  G.selfadjointView<Eigen::Lower>().rankUpdate(minus, -1.0);
}

inline Eigen::VectorXd subgradient_weights(const Eigen::VectorXd& mg, const Eigen::VectorXd& y, LossKind loss) {
  Eigen::VectorXd w(mg.size());
  const double inv = 1.0 / static_cast<double>(mg.size());
  for (Eigen::Index t = 0; t < mg.size(); ++t) w(t) = loss_derivative(loss, y(t) * mg(t)) * y(t) * inv;
  return w;
}

inline void mirror_lower(Eigen::MatrixXd& G) { G.triangularView<Eigen::StrictlyUpper>() = G.transpose(); }

}  // namespace detail

/// (1/|S|) sum_t l'(y_t m_t) y_t K_t, symmetric.
inline Eigen::MatrixXd risk_subgradient(const Eigen::MatrixXd& M, const TripletDifferences& d, LossKind loss) {
  const Eigen::VectorXd w = detail::subgradient_weights(margins(M, d), d.y, loss);
  Eigen::MatrixXd G;
  detail::accumulate_subgradient(d, w, G);
  detail::mirror_lower(G);
  return G;
}

inline Eigen::MatrixXd risk_subgradient(const Eigen::MatrixXd& M, const Eigen::MatrixXd& embeddings,
                                        const TripletSet& triplets, LossKind loss) {
  return risk_subgradient(M, make_differences(embeddings, triplets), loss);
}

// ---------------------------------------------------------------------------
// Spectral projections

/// Euclidean projection of v onto {x >= 0, sum x <= radius}.
inline Eigen::VectorXd project_capped_simplex(const Eigen::VectorXd& v, double radius) {
  Eigen::VectorXd x = v.cwiseMax(0.0);
  if (x.sum() <= radius) return x;
  std::vector<double> u(x.data(), x.data() + x.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cumsum += u[k];
    const double t = (cumsum - radius) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) theta = t;
  }
  return (x.array() - theta).cwiseMax(0.0).matrix();
}

/// Euclidean projection of v onto {x >= 0, ||x||_2 <= radius}.
inline Eigen::VectorXd project_nonneg_ball(const Eigen::VectorXd& v, double radius) {
  Eigen::VectorXd x = v.cwiseMax(0.0);
  const double nrm = x.norm();
  if (nrm > radius) x *= radius / nrm;
  return x;
}

/// Eigen-factored projection result: M = V diag(w) V^T with w > 0.
struct SpectralFactor {
  Eigen::MatrixXd V;
  Eigen::VectorXd w;

  Eigen::MatrixXd matrix(Eigen::Index n) const {
    if (w.size() == 0) return Eigen::MatrixXd::Zero(n, n);
    return V * w.asDiagonal() * V.transpose();
  }
  Eigen::MatrixXd root() const { return V * w.cwiseSqrt().asDiagonal(); }
};

namespace detail {

/// Projects the symmetric matrix whose lower triangle is stored in X.
inline SpectralFactor project_spectral(const Eigen::MatrixXd& X, const ConstraintSpec& c) {
  const SymmetricEigen es = symmetric_eigen(X);
  const Eigen::VectorXd w = c.kind == ConstraintKind::Nuclear ? project_capped_simplex(es.values, c.lambda)
                                                              : project_nonneg_ball(es.values, c.lambda);
  Eigen::Index r = 0;
  for (Eigen::Index k = 0; k < w.size(); ++k)
    if (w(k) > 0.0) ++r;
  SpectralFactor f{Eigen::MatrixXd(X.rows(), r), Eigen::VectorXd(r)};
  Eigen::Index c2 = 0;
  for (Eigen::Index k = w.size() - 1; k >= 0; --k) {
    if (w(k) <= 0.0) continue;
    f.V.col(c2) = es.vectors.col(k);
    f.w(c2) = w(k);
    ++c2;
  }
  return f;
}

inline void require_symmetric(const Eigen::MatrixXd& X, const char* who) {
  if (X.rows() != X.cols()) throw InputError(std::string(who) + ": matrix must be square");
  const double asym = (X - X.transpose()).norm();
  if (asym > 1e-10 * std::max(1.0, X.norm())) throw InputError(std::string(who) + ": matrix must be symmetric");
}

}  // namespace detail

/// Nearest point of {M >= 0, ||M||_F <= lambda}.
inline MetricMatrix project_psd_frobenius(const Eigen::MatrixXd& X, double lambda) {
  detail::require_symmetric(X, "project_psd_frobenius");
  const auto c = ConstraintSpec::frobenius(lambda);
  const SpectralFactor f = detail::project_spectral(X, c);
  MetricMatrix out;
  out.M = f.matrix(X.rows());
  out.M = (0.5 * (out.M + out.M.transpose())).eval();
  out.certificate = {0.0, ConstraintKind::Frobenius, f.w.norm(), lambda};
  return out;
}

/// Nearest point of {M >= 0, ||M||_* <= lambda}.
inline MetricMatrix project_psd_nuclear(const Eigen::MatrixXd& X, double lambda) {
  detail::require_symmetric(X, "project_psd_nuclear");
  const auto c = ConstraintSpec::nuclear(lambda);
  const SpectralFactor f = detail::project_spectral(X, c);
  MetricMatrix out;
  out.M = f.matrix(X.rows());
  out.M = (0.5 * (out.M + out.M.transpose())).eval();
  out.certificate = {0.0, ConstraintKind::Nuclear, f.w.sum(), lambda};
  return out;
}

inline MetricMatrix project_psd(const Eigen::MatrixXd& X, const ConstraintSpec& c) {
  return c.kind == ConstraintKind::Nuclear ? project_psd_nuclear(X, c.lambda) : project_psd_frobenius(X, c.lambda);
}

// ---------------------------------------------------------------------------
// Projected subgradient descent

/// Minimizes the empirical risk over {M >= 0, ||M|| <= lambda} from M_0 = 0 with
/// M_{k+1} = Proj(M_k - eta_k g_k), returning the lowest-risk iterate.
inline SolveReport solve_erm(const TripletDifferences& d, LossKind loss, const ConstraintSpec& constraint,
                             const SolverConfig& config) {
  config.validate();
  if (d.size() < 1) throw InputError("solve_erm: empty triplet set");
  const auto started = std::chrono::steady_clock::now();
  const Eigen::Index m = d.dimension();

  SolveReport rep;
  rep.loss = loss;
  rep.constraint = constraint;
  rep.config = config;
  rep.objective_trace.reserve(static_cast<std::size_t>(config.max_iters));
  rep.violation_trace.reserve(static_cast<std::size_t>(config.max_iters));

  SpectralFactor current{Eigen::MatrixXd(m, 0), Eigen::VectorXd(0)};
  SpectralFactor best = current;
  std::vector<double> running_best;
  running_best.reserve(static_cast<std::size_t>(config.max_iters));
  Eigen::MatrixXd G, X;
  const double scale = std::max(difference_scale(d), std::numeric_limits<double>::min());

  for (int k = 0; k < config.max_iters; ++k) {
    const Eigen::MatrixXd W = current.root();
    const Eigen::VectorXd mg = margins_factored(W, d);
    const double risk = risk_from_margins(mg, d.y, loss);
    if (!std::isfinite(risk)) {
      throw NumericError("solve_erm: non-finite objective at iterate " + std::to_string(k));
    }
    const double norm = constraint.kind == ConstraintKind::Nuclear ? current.w.sum() : current.w.norm();
    rep.objective_trace.push_back(risk);
    rep.violation_trace.push_back(std::max(0.0, norm - constraint.lambda));
    rep.iterations = k + 1;
    if (risk < rep.best_risk) {
      rep.best_risk = risk;
      rep.best_iteration = k;
      best = current;
    }
    running_best.push_back(rep.best_risk);

    if (k >= config.stop_window) {
      const double before = running_best[static_cast<std::size_t>(k - config.stop_window)];
      if (before - rep.best_risk <= config.stop_tolerance * std::max(std::abs(before), 1e-300)) {
        rep.stopped_early = true;
        break;
      }
    }
    if (k + 1 == config.max_iters) break;

    const Eigen::VectorXd w = detail::subgradient_weights(mg, d.y, loss);
    detail::accumulate_subgradient(d, w, G);
    // ||G||_F from the lower triangle (upper part is zero)
    const double gnorm = std::sqrt(std::max(2.0 * G.squaredNorm() - G.diagonal().squaredNorm(), 0.0));
    if (!std::isfinite(gnorm)) {
      throw NumericError("solve_erm: non-finite subgradient at iterate " + std::to_string(k));
    }
    if (gnorm == 0.0) {
      rep.stopped_early = true;
      break;
    }
    const double root_k = std::sqrt(static_cast<double>(k + 1));
    const double eta = config.step == StepRule::InverseSqrt ? config.eta0 / root_k
                                                            : config.eta0 / (root_k * gnorm * scale);
    X = current.matrix(m);
    X.triangularView<Eigen::Lower>() -= eta * G;
    current = detail::project_spectral(X, constraint);
  }

  rep.metric.M = best.matrix(m);
  rep.metric.M = (0.5 * (rep.metric.M + rep.metric.M.transpose())).eval();
  rep.metric.certificate = {0.0, constraint.kind,
                            constraint.kind == ConstraintKind::Nuclear ? best.w.sum() : best.w.norm(),
                            constraint.lambda};
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return rep;
}

inline SolveReport solve_erm(const Eigen::MatrixXd& embeddings, const TripletSet& triplets, LossKind loss,
                             const ConstraintSpec& constraint, const SolverConfig& config) {
  return solve_erm(make_differences(embeddings, triplets), loss, constraint, config);
}

// ---------------------------------------------------------------------------
// Generalization bounds

/// Excess-risk bound holding with probability 1 - delta for an alpha-Lipschitz
/// loss, features bounded by B, |S| triplets and Schatten radius lambda.
///
/// Frobenius: 4 a B^2 l sqrt(6/S) + 12 a B^2 l sqrt(2 ln(2/d) / S)
/// Nuclear:   4 a l (B^2 sqrt(12 ln(3S) / S) + 2 ln(3S) / S) + 12 a B^2 l sqrt(2 ln(2/d) / S)
inline double generalization_bound(ConstraintKind kind, double alpha, double B, double lambda, double S,
                                   double delta) {
  detail::require(kind != ConstraintKind::None, "bound: constraint kind must be frobenius or nuclear");
  detail::require(alpha > 0.0 && B > 0.0 && lambda > 0.0 && S > 0.0, "bound: alpha, B, lambda, |S| must be > 0");
  detail::require(delta > 0.0 && delta < 1.0, "bound: delta must lie in (0, 1)");
  const double B2 = B * B;
  const double confidence = 12.0 * alpha * B2 * lambda * std::sqrt(2.0 * std::log(2.0 / delta) / S);
  if (kind == ConstraintKind::Frobenius) return 4.0 * alpha * B2 * lambda * std::sqrt(6.0 / S) + confidence;
  const double l3s = std::log(3.0 * S);
  return 4.0 * alpha * lambda * (B2 * std::sqrt(12.0 * l3s / S) + 2.0 * l3s / S) + confidence;
}

}  // namespace kmetric
