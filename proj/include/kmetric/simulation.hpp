#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kmetric/error.hpp"
#include "kmetric/kernels.hpp"
#include "kmetric/metric.hpp"
#include "kmetric/random.hpp"

namespace kmetric {

// ---------------------------------------------------------------------------
// Spiral with geodesic (arc-length) distance

/// Archimedean spiral r(theta) = a + b theta for theta in [theta_min, theta_max].
struct SpiralParams {
  double a = 0.0;
  double b = 1.0;
  double theta_min = 0.0;
  double theta_max = 4.0 * std::numbers::pi;
};

enum class SpiralSampling { ArcLength, Theta };

namespace detail {

template <class F>
double adaptive_simpson(const F& f, double lo, double hi, double fa, double fm, double fb, double whole, double tol,
                        int depth) {
  const double mid = 0.5 * (lo + hi);
  const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
  const double flm = f(lm), frm = f(rm);
  const double left = (mid - lo) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (hi - mid) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
  return adaptive_simpson(f, lo, mid, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, mid, hi, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <class F>
double integrate(const F& f, double lo, double hi, double tol) {
  const double fa = f(lo), fb = f(hi), fm = f(0.5 * (lo + hi));
  const double whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson(f, lo, hi, fa, fm, fb, whole, tol, 50);
}

}  // namespace detail

/// Points on the spiral are addressed by their arc-length coordinate s
/// (the "tag"); the geodesic distance between two points is |s1 - s2|.
/// Arc length is tabulated on `knots` equally spaced theta values and
/// interpolated linearly in both directions, so theta(s) and s(theta) are
/// exact inverses of each other.
class SpiralOracle {
 public:
  SpiralOracle() : SpiralOracle(SpiralParams{}) {}
  explicit SpiralOracle(SpiralParams p, int knots = 4096) : params_(p) {
    detail::require(std::isfinite(p.b) && p.b != 0.0, "spiral: b must be nonzero");
    detail::require(p.theta_max > p.theta_min, "spiral: theta_max must exceed theta_min");
    detail::require(knots >= 2, "spiral: need at least two knots");
    thetas_.resize(static_cast<std::size_t>(knots) + 1);
    lengths_.resize(thetas_.size());
    const double h = (p.theta_max - p.theta_min) / knots;
    const auto speed = [&](double t) {
      const double r = p.a + p.b * t;
      return std::sqrt(r * r + p.b * p.b);
    };
    lengths_[0] = 0.0;
    thetas_[0] = p.theta_min;
    for (int k = 1; k <= knots; ++k) {
      thetas_[static_cast<std::size_t>(k)] = p.theta_min + k * h;
      lengths_[static_cast<std::size_t>(k)] =
          lengths_[static_cast<std::size_t>(k - 1)] + detail::integrate(speed, p.theta_min + (k - 1) * h, p.theta_min + k * h, 1e-9 / knots);
    }
  }

  const SpiralParams& params() const { return params_; }
  double total_length() const { return lengths_.back(); }

  double arc_length_at(double theta) const { return interp(thetas_, lengths_, theta); }
  double theta_at(double s) const { return interp(lengths_, thetas_, s); }

  Eigen::Vector2d point_at_theta(double theta) const {
    const double r = params_.a + params_.b * theta;
    return {r * std::cos(theta), r * std::sin(theta)};
  }
  Eigen::Vector2d point_at(double s) const { return point_at_theta(theta_at(s)); }

  /// Distance from the spiral, used to check that sampled points lie on the curve.
  double distance_to_curve_radial(const Eigen::Vector2d& p) const {
    double theta = std::atan2(p.y(), p.x());
    // unwrap to the branch nearest in radius
    const double r = p.norm();
    double best = std::numeric_limits<double>::infinity();
    for (int turn = -4; turn <= 8; ++turn) {
      const double t = theta + 2.0 * std::numbers::pi * turn;
      if (t < params_.theta_min - 1e-9 || t > params_.theta_max + 1e-9) continue;
      best = std::min(best, std::abs(params_.a + params_.b * t - r));
    }
    return best;
  }

  double geodesic(double s1, double s2) const {
    const double slack = 1e-9 * std::max(1.0, total_length());
    if (s1 < -slack || s2 < -slack || s1 > total_length() + slack || s2 > total_length() + slack) {
      throw InputError("geodesic: arc-length tag outside [0, " + std::to_string(total_length()) + "]");
    }
    return std::abs(s1 - s2);
  }

 private:
  static double interp(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    const auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const auto k = static_cast<std::size_t>(it - xs.begin());
    const double t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    return ys[k - 1] + t * (ys[k] - ys[k - 1]);
  }

  SpiralParams params_;
  std::vector<double> thetas_;
  std::vector<double> lengths_;
};

inline double geodesic_distance(const SpiralOracle& oracle, double s1, double s2) { return oracle.geodesic(s1, s2); }

struct SpiralSample {
  ItemMatrix points;  // n x 2
  Eigen::VectorXd tags;  // arc-length coordinates
};

inline SpiralSample spiral_sample(const SpiralOracle& oracle, std::size_t n, std::uint64_t seed,
                                  SpiralSampling mode = SpiralSampling::ArcLength) {
  detail::require(n >= 1, "spiral_sample: n must be >= 1");
  Rng rng(seed);
  SpiralSample out{ItemMatrix(static_cast<Eigen::Index>(n), 2), Eigen::VectorXd(static_cast<Eigen::Index>(n))};
  const auto& p = oracle.params();
  for (Eigen::Index k = 0; k < out.tags.size(); ++k) {
    const double u = uniform01(rng);
    double theta, s;
    if (mode == SpiralSampling::ArcLength) {
      s = u * oracle.total_length();
      theta = oracle.theta_at(s);
    } else {
      theta = p.theta_min + u * (p.theta_max - p.theta_min);
      s = oracle.arc_length_at(theta);
    }
    out.points.row(k) = oracle.point_at_theta(theta).transpose();
    out.tags(k) = s;
  }
  return out;
}

/// Squared-geodesic margin d^2(h,i) - d^2(h,j) from arc-length tags.
inline double spiral_true_margin(const SpiralOracle& oracle, double sh, double si, double sj) {
  const double dhi = oracle.geodesic(sh, si), dhj = oracle.geodesic(sh, sj);
  return dhi * dhi - dhj * dhj;
}

// ---------------------------------------------------------------------------
// Low-rank RKHS functional

/// Ground truth <L phi(x), L phi(y)> = kappa(x)^T G kappa(y) with
/// kappa(x) = [k(x, z_1), ..., k(x, z_L)].
struct LowRankRkhsOracle {
  Kernel kernel = Kernel::gaussian(1.0);
  ItemMatrix landmarks;  // L x d
  Eigen::MatrixXd G;     // L x L, PSD
  int rank = 0;

  Eigen::Index dimension() const { return landmarks.cols(); }

  template <class X>
  Eigen::VectorXd features(const Eigen::MatrixBase<X>& x) const {
    if (x.size() != dimension()) throw InputError("rkhs oracle: item dimension mismatch");
    Eigen::VectorXd k(landmarks.rows());
    for (Eigen::Index a = 0; a < landmarks.rows(); ++a) k(a) = kernel(x, landmarks.row(a));
    return k;
  }

  /// Feature rows for a whole item table.
  Eigen::MatrixXd features_all(const ItemMatrix& X) const { return cross_kernel(kernel, X, landmarks); }
};

/// r0 landmarks z ~ N(0, I/d); G = (r0 / sqrt(rank)) U U^T with U an r0 x rank
/// matrix with orthonormal columns (QR of a Gaussian matrix, R diagonal
/// made positive). G has rank `rank`.
inline LowRankRkhsOracle make_low_rank_rkhs_oracle(int d, int rank, int r0, std::uint64_t seed,
                                                   const Kernel& kernel = Kernel::gaussian(1.0)) {
  detail::require(d >= 1, "rkhs oracle: dimension must be >= 1");
  detail::require(rank >= 1 && rank <= r0, "rkhs oracle: need 1 <= rank <= r0");
  Rng rng(seed);
  LowRankRkhsOracle o;
  o.kernel = kernel;
  o.rank = rank;
  o.landmarks.resize(r0, d);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index a = 0; a < r0; ++a)
    for (Eigen::Index k = 0; k < d; ++k) o.landmarks(a, k) = sd * standard_normal(rng);
  Eigen::MatrixXd g(r0, rank);
  for (Eigen::Index j = 0; j < rank; ++j)
    for (Eigen::Index i = 0; i < r0; ++i) g(i, j) = standard_normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd U = qr.householderQ() * Eigen::MatrixXd::Identity(r0, rank);
  const Eigen::MatrixXd R = qr.matrixQR().topRows(rank).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < rank; ++j)
    if (R(j, j) < 0.0) U.col(j) = -U.col(j);
  o.G = (static_cast<double>(r0) / std::sqrt(static_cast<double>(rank))) * U * U.transpose();
  o.G = (0.5 * (o.G + o.G.transpose())).eval();
  return o;
}

template <class X, class Y>
double rkhs_true_inner(const LowRankRkhsOracle& o, const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<Y>& y) {
  const Eigen::VectorXd kx = o.features(x), ky = o.features(y);
  // kx^T G ky and ky^T G kx differ by round-off; average for exact symmetry
  return 0.5 * (kx.dot(o.G * ky) + ky.dot(o.G * kx));
}

template <class H, class I, class J>
double rkhs_true_margin(const LowRankRkhsOracle& o, const Eigen::MatrixBase<H>& xh, const Eigen::MatrixBase<I>& xi,
                        const Eigen::MatrixBase<J>& xj) {
  const double hh = rkhs_true_inner(o, xh, xh);
  const double dhi = hh - 2.0 * rkhs_true_inner(o, xh, xi) + rkhs_true_inner(o, xi, xi);
  const double dhj = hh - 2.0 * rkhs_true_inner(o, xh, xj) + rkhs_true_inner(o, xj, xj);
  return dhi - dhj;
}

/// Vectorized true margins for a triplet set over an item table.
inline Eigen::VectorXd rkhs_true_margins(const LowRankRkhsOracle& o, const ItemMatrix& items,
                                         const TripletSet& triplets) {
  const Eigen::MatrixXd F = o.features_all(items);
  Eigen::VectorXd out(static_cast<Eigen::Index>(triplets.size()));
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto& tr = triplets[t];
    const Eigen::VectorXd a = (F.row(tr.h) - F.row(tr.i)).transpose();
    const Eigen::VectorXd b = (F.row(tr.h) - F.row(tr.j)).transpose();
    out(static_cast<Eigen::Index>(t)) = a.dot(o.G * a) - b.dot(o.G * b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Noise

/// f(x) = 1 / (1 + e^{rho x}) is the probability of observing y = -1.
struct NoiseLink {
  double rho = 0.0;

  double prob_negative(double margin) const {
    const double z = rho * margin;
    if (z > 0.0) {
      const double e = std::exp(-z);
      return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(z));
  }
};

inline int noisy_label(double margin, const NoiseLink& link, Rng& rng) {
  if (!std::isfinite(margin)) throw InputError("noisy_label: margin must be finite");
  return uniform01(rng) < link.prob_negative(margin) ? -1 : 1;
}

/// Noiseless labels: the sign of the margin, zero mapping to +1.
inline void label_triplets_exact(TripletSet& ts, const Eigen::VectorXd& true_margins) {
  for (std::size_t t = 0; t < ts.size(); ++t) ts[t].y = label_from_margin(true_margins(static_cast<Eigen::Index>(t)));
}

/// Labels drawn through the link, one seeded stream per call.
inline void label_triplets(TripletSet& ts, const Eigen::VectorXd& true_margins, const NoiseLink& link,
                           std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t t = 0; t < ts.size(); ++t) ts[t].y = noisy_label(true_margins(static_cast<Eigen::Index>(t)), link, rng);
}

/// Fraction of labels that disagree with the sign of the true margin.
inline double flip_rate(const TripletSet& ts, const Eigen::VectorXd& true_margins) {
  if (ts.empty()) return 0.0;
  std::size_t flips = 0;
  for (std::size_t t = 0; t < ts.size(); ++t)
    if (ts[t].y != label_from_margin(true_margins(static_cast<Eigen::Index>(t)))) ++flips;
  return static_cast<double>(flips) / static_cast<double>(ts.size());
}

// ---------------------------------------------------------------------------
// Triplet sampling (i.i.d. setting: three fresh items per triplet)

struct GaussianItemSource {
  int dimension = 2;
};

struct SpiralItemSource {
  SpiralOracle oracle;
  SpiralSampling sampling = SpiralSampling::ArcLength;
};

struct SyntheticTriplets {
  ItemMatrix items;
  /// Arc-length tags for spiral items; empty otherwise.
  Eigen::VectorXd tags;
  /// Labels are +1 placeholders until labeled.
  TripletSet triplets;
};

namespace detail {

inline TripletSet consecutive_triplets(std::size_t count) {
  TripletSet ts(count);
  for (std::size_t t = 0; t < count; ++t) ts[t] = Triplet{3 * t, 3 * t + 1, 3 * t + 2, 1};
  return ts;
}

}  // namespace detail

/// `count` triplets over 3 * count items drawn from N(0, I/d).
inline SyntheticTriplets sample_triplets(const GaussianItemSource& src, std::size_t count, std::uint64_t seed) {
  detail::require(count >= 1, "sample_triplets: count must be >= 1");
  detail::require(src.dimension >= 1, "sample_triplets: dimension must be >= 1");
  Rng rng(seed);
  const auto n = static_cast<Eigen::Index>(3 * count);
  SyntheticTriplets out;
  out.items.resize(n, src.dimension);
  const double sd = 1.0 / std::sqrt(static_cast<double>(src.dimension));
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index k = 0; k < src.dimension; ++k) out.items(a, k) = sd * standard_normal(rng);
  out.triplets = detail::consecutive_triplets(count);
  return out;
}

/// `count` triplets over 3 * count points sampled along the spiral.
inline SyntheticTriplets sample_triplets(const SpiralItemSource& src, std::size_t count, std::uint64_t seed) {
  detail::require(count >= 1, "sample_triplets: count must be >= 1");
  SpiralSample s = spiral_sample(src.oracle, 3 * count, seed, src.sampling);
  SyntheticTriplets out;
  out.items = std::move(s.points);
  out.tags = std::move(s.tags);
  out.triplets = detail::consecutive_triplets(count);
  return out;
}

inline Eigen::VectorXd spiral_true_margins(const SpiralOracle& oracle, const Eigen::VectorXd& tags,
                                           const TripletSet& triplets) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(triplets.size()));
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto& tr = triplets[t];
    out(static_cast<Eigen::Index>(t)) = spiral_true_margin(oracle, tags(tr.h), tags(tr.i), tags(tr.j));
  }
  return out;
}

}  // namespace kmetric
