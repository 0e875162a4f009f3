#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "kmetric/error.hpp"
#include "kmetric/io.hpp"
#include "kmetric/kernels.hpp"
#include "kmetric/kpca.hpp"
#include "kmetric/metric.hpp"
#include "kmetric/optimizer.hpp"
#include "kmetric/random.hpp"
#include "kmetric/simulation.hpp"

namespace kmetric {

// ---------------------------------------------------------------------------
// Fitting and evaluation

struct FitOptions {
  Kernel kernel = Kernel::gaussian(1.0);
  LossKind loss = LossKind::Logistic;
  ConstraintSpec constraint = ConstraintSpec::nuclear(10.0);
  SolverConfig solver;
  /// Nystrom landmark count; used only when the fit set is larger.
  std::optional<std::size_t> nystrom_m;
  std::uint64_t seed = 0;
  KpcaOptions kpca;
};

struct FitResult {
  MetricModel model;
  SolveReport report;
  /// Embeddings of every row of the item table passed to fit_metric.
  Eigen::MatrixXd embeddings;
};

/// KPCA on the rows `fit_rows` of `items` (all rows when empty), then ERM on
/// `train`. Triplet indices refer to rows of `items`; rows outside the fit
/// set are embedded out of sample.
inline FitResult fit_metric(const ItemMatrix& items, const TripletSet& train, const FitOptions& opt,
                            const std::vector<std::size_t>& fit_rows = {}) {
  if (train.empty()) throw InputError("fit: empty training triplet set");
  validate_triplets(train, static_cast<std::size_t>(items.rows()));
  ItemMatrix fit_items;
  if (fit_rows.empty()) {
    fit_items = items;
  } else {
    fit_items.resize(static_cast<Eigen::Index>(fit_rows.size()), items.cols());
    for (std::size_t a = 0; a < fit_rows.size(); ++a) {
      if (fit_rows[a] >= static_cast<std::size_t>(items.rows())) throw InputError("fit: fit row out of range");
      fit_items.row(static_cast<Eigen::Index>(a)) = items.row(static_cast<Eigen::Index>(fit_rows[a]));
    }
  }
  KpcaModel kpca;
  if (opt.nystrom_m && *opt.nystrom_m < static_cast<std::size_t>(fit_items.rows())) {
    kpca = fit_nystrom_kpca(opt.kernel, fit_items, *opt.nystrom_m, opt.seed, opt.kpca);
  } else {
    kpca = fit_kpca(opt.kernel, fit_items, opt.kpca);
  }
  FitResult out;
  out.embeddings = embed_all(kpca, items);
  out.report = solve_erm(out.embeddings, train, opt.loss, opt.constraint, opt.solver);
  out.model = make_metric_model(std::move(kpca), out.report.metric);
  return out;
}

/// Fraction of triplets whose predicted label matches the stored label, with
/// embeddings already computed (one item per row).
inline double accuracy_from_embeddings(const MetricModel& model, const Eigen::MatrixXd& embeddings,
                                       const TripletSet& triplets) {
  if (triplets.empty()) throw InputError("evaluate: empty triplet set");
  const TripletDifferences d = make_differences(embeddings, triplets);
  const Eigen::VectorXd mg = margins_factored(model.W, d);
  std::size_t hits = 0;
  for (Eigen::Index t = 0; t < mg.size(); ++t)
    if (label_from_margin(mg(t)) == static_cast<int>(d.y(t))) ++hits;
  return static_cast<double>(hits) / static_cast<double>(mg.size());
}

/// Embeds `items` through the model's KPCA (out of sample) and scores `triplets`.
inline double evaluate(const MetricModel& model, const TripletSet& triplets, const ItemMatrix& items) {
  if (triplets.empty()) throw InputError("evaluate: empty triplet set");
  return accuracy_from_embeddings(model, embed_all(model.kpca, items), triplets);
}

/// max over items of sqrt(k(x, x)).
inline double feature_norm_bound(const Kernel& kernel, const ItemMatrix& items) {
  const Eigen::VectorXd s = self_similarity(kernel, items);
  return std::sqrt(std::max(s.maxCoeff(), 0.0));
}

// ---------------------------------------------------------------------------
// Unseen-item splitting

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

struct SplitResult {
  TripletSet train, validation, test;
  /// Sorted item indices held out of training.
  std::vector<std::size_t> unseen;
};

inline bool touches(const Triplet& t, const std::vector<char>& mask) { return mask[t.h] || mask[t.i] || mask[t.j]; }

/// Holds out `n_unseen` items. The test set (a `test` share of all triplets)
/// is drawn from every triplet; the remaining triplets that avoid every
/// unseen item are divided between train and validation in the ratio
/// train : validation.
inline SplitResult split_unseen(std::size_t item_count, const TripletSet& all, std::size_t n_unseen,
                                const SplitFractions& f, std::uint64_t seed) {
  detail::require(n_unseen < item_count, "split: n_unseen (" + std::to_string(n_unseen) +
                                             ") must be smaller than the item count (" +
                                             std::to_string(item_count) + ")");
  detail::require(f.train > 0.0 && f.validation >= 0.0 && f.test >= 0.0, "split: fractions must be nonnegative");
  detail::require(f.train + f.validation + f.test <= 1.0 + 1e-12, "split: fractions must sum to at most 1");
  validate_triplets(all, item_count);

  Rng rng(seed);
  SplitResult out;
  out.unseen = sample_without_replacement(rng, item_count, n_unseen);
  std::vector<char> mask(item_count, 0);
  for (auto u : out.unseen) mask[u] = 1;

  const std::size_t T = all.size();
  const auto n_test = std::min(T, static_cast<std::size_t>(std::llround(f.test * static_cast<double>(T))));

  std::vector<std::size_t> order(T);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t k = T; k > 1; --k) std::swap(order[k - 1], order[uniform_index(rng, k)]);

  for (std::size_t k = 0; k < n_test; ++k) out.test.push_back(all[order[k]]);
  std::vector<std::size_t> pool;
  for (std::size_t k = n_test; k < T; ++k)
    if (!touches(all[order[k]], mask)) pool.push_back(order[k]);
  const double share = f.train / (f.train + f.validation);
  const auto n_train = static_cast<std::size_t>(std::llround(share * static_cast<double>(pool.size())));
  const std::size_t n_val = pool.size() - n_train;
  if (n_train == 0 || (f.validation > 0.0 && n_val == 0)) {
    throw InputError("split: not enough triplets avoiding unseen items: need at least " +
                     std::to_string(f.validation > 0.0 ? 2 : 1) + " (train + validation), have " +
                     std::to_string(pool.size()) + " of " + std::to_string(T) + " after taking " +
                     std::to_string(n_test) + " test triplets");
  }
  for (std::size_t k = 0; k < n_train; ++k) out.train.push_back(all[pool[k]]);
  for (std::size_t k = 0; k < n_val; ++k) out.validation.push_back(all[pool[n_train + k]]);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

enum class DataSource { SimulateSpiral, SimulateRkhs, Files };

inline std::string_view to_string(DataSource s) {
  switch (s) {
    case DataSource::SimulateSpiral: return "simulate-spiral";
    case DataSource::SimulateRkhs: return "simulate-rkhs";
    case DataSource::Files: return "files";
  }
  return "files";
}

inline DataSource data_source_from_string(std::string_view s) {
  if (s == "simulate-spiral" || s == "spiral") return DataSource::SimulateSpiral;
  if (s == "simulate-rkhs" || s == "rkhs") return DataSource::SimulateRkhs;
  if (s == "files") return DataSource::Files;
  throw InputError("unknown data source '" + std::string(s) + "'");
}

struct SpiralSetup {
  SpiralParams params;
  SpiralSampling sampling = SpiralSampling::ArcLength;
  /// Geodesic distances are multiplied by this before forming margins; it
  /// fixes the unit in which the noise link operates.
  double distance_scale = 0.06;
};

struct RkhsSetup {
  int dimension = 100;
  int rank = 2;
  int r0 = 10;
  Kernel kernel = Kernel::gaussian(1.0);
};

struct FileSetup {
  std::string items;
  std::string triplets;
  bool id_column = false;
};

struct ExperimentConfig {
  DataSource source = DataSource::SimulateRkhs;
  SpiralSetup spiral;
  RkhsSetup rkhs;
  FileSetup files;

  std::vector<Kernel> kernels{Kernel::gaussian(1.0)};
  LossKind loss = LossKind::Logistic;
  ConstraintSpec constraint = ConstraintSpec::nuclear(10.0);
  SolverConfig solver{30, 10.0, StepRule::NormalizedInverseSqrt, 1e-6, 50, 0};
  std::vector<std::size_t> triplet_counts{1000};
  int repetitions = 1;
  /// Link sharpness; nullopt means noiseless labels.
  std::optional<double> noise_rho;
  std::size_t n_unseen = 0;
  SplitFractions fractions;
  std::uint64_t seed = 1;
  std::optional<std::size_t> nystrom_m = 500;
  /// Size of the fresh validation and test sets in simulations.
  std::size_t eval_triplets = 2000;
  double delta = 0.05;
  /// Worker threads for repetitions; 0 picks the hardware concurrency.
  int threads = 0;

  void validate() const {
    detail::require(repetitions >= 1, "config: repetitions must be >= 1");
    detail::require(!kernels.empty(), "config: kernel grid is empty");
    detail::require(!triplet_counts.empty(), "config: triplet counts are empty");
    for (std::size_t k = 0; k < triplet_counts.size(); ++k) {
      detail::require(triplet_counts[k] >= 1, "config: triplet counts must be positive");
      detail::require(k == 0 || triplet_counts[k] > triplet_counts[k - 1], "config: triplet counts must ascend");
    }
    if (noise_rho) detail::require(std::isfinite(*noise_rho) && *noise_rho >= 0.0, "config: rho must be >= 0");
    detail::require(delta > 0.0 && delta < 1.0, "config: delta must lie in (0, 1)");
    detail::require(!nystrom_m || *nystrom_m >= 1, "config: nystrom m must be >= 1");
    detail::require(eval_triplets >= 1, "config: eval_triplets must be >= 1");
    detail::require(threads >= 0, "config: threads must be >= 0");
    if (source == DataSource::Files) {
      detail::require(!files.items.empty() && !files.triplets.empty(), "config: files source needs items and triplets");
    }
    if (source == DataSource::SimulateRkhs) {
      detail::require(rkhs.dimension >= 1 && rkhs.rank >= 1 && rkhs.rank <= rkhs.r0, "config: bad rkhs setup");
    }
    if (source == DataSource::SimulateSpiral) {
      detail::require(spiral.distance_scale > 0.0, "config: spiral distance_scale must be > 0");
    }
    solver.validate();
  }
};

inline json experiment_config_to_json(const ExperimentConfig& c) {
  json kernels = json::array();
  for (const auto& k : c.kernels) kernels.push_back(kernel_to_json(k));
  json j = {{"source", std::string(to_string(c.source))},
            {"kernels", kernels},
            {"loss", std::string(to_string(c.loss))},
            {"constraint", constraint_to_json(c.constraint)},
            {"solver", solver_config_to_json(c.solver)},
            {"triplet_counts", c.triplet_counts},
            {"repetitions", c.repetitions},
            {"noise_rho", c.noise_rho ? json(*c.noise_rho) : json(nullptr)},
            {"n_unseen", c.n_unseen},
            {"fractions", {{"train", c.fractions.train}, {"validation", c.fractions.validation}, {"test", c.fractions.test}}},
            {"seed", c.seed},
            {"nystrom_m", c.nystrom_m ? json(*c.nystrom_m) : json(nullptr)},
            {"eval_triplets", c.eval_triplets},
            {"delta", c.delta},
            {"threads", c.threads}};
  switch (c.source) {
    case DataSource::SimulateSpiral:
      j["spiral"] = {{"a", c.spiral.params.a},
                     {"b", c.spiral.params.b},
                     {"theta_min", c.spiral.params.theta_min},
                     {"theta_max", c.spiral.params.theta_max},
                     {"sampling", c.spiral.sampling == SpiralSampling::ArcLength ? "arc_length" : "theta"},
                     {"distance_scale", c.spiral.distance_scale}};
      break;
    case DataSource::SimulateRkhs:
      j["rkhs"] = {{"dimension", c.rkhs.dimension},
                   {"rank", c.rkhs.rank},
                   {"r0", c.rkhs.r0},
                   {"kernel", kernel_to_json(c.rkhs.kernel)}};
      break;
    case DataSource::Files:
      j["files"] = {{"items", c.files.items}, {"triplets", c.files.triplets}, {"id_column", c.files.id_column}};
      break;
  }
  return j;
}

/// Missing keys keep the values already in `c`.
inline ExperimentConfig experiment_config_from_json(const json& j, ExperimentConfig c = {}) {
  try {
    if (j.contains("source")) c.source = data_source_from_string(j.at("source").get<std::string>());
    if (j.contains("kernels")) {
      c.kernels.clear();
      for (const auto& k : j.at("kernels")) c.kernels.push_back(kernel_from_json(k));
    }
    if (j.contains("loss")) c.loss = loss_from_string(j.at("loss").get<std::string>());
    if (j.contains("constraint")) c.constraint = constraint_from_json(j.at("constraint"));
    if (j.contains("solver")) c.solver = solver_config_from_json(j.at("solver"), c.solver);
    if (j.contains("triplet_counts")) c.triplet_counts = j.at("triplet_counts").get<std::vector<std::size_t>>();
    c.repetitions = j.value("repetitions", c.repetitions);
    if (j.contains("noise_rho")) {
      c.noise_rho = j.at("noise_rho").is_null() ? std::nullopt : std::optional<double>(j.at("noise_rho").get<double>());
    }
    c.n_unseen = j.value("n_unseen", c.n_unseen);
    if (j.contains("fractions")) {
      const auto& f = j.at("fractions");
      c.fractions.train = f.value("train", c.fractions.train);
      c.fractions.validation = f.value("validation", c.fractions.validation);
      c.fractions.test = f.value("test", c.fractions.test);
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("nystrom_m")) {
      c.nystrom_m = j.at("nystrom_m").is_null() ? std::nullopt
                                                 : std::optional<std::size_t>(j.at("nystrom_m").get<std::size_t>());
    }
    c.eval_triplets = j.value("eval_triplets", c.eval_triplets);
    c.delta = j.value("delta", c.delta);
    c.threads = j.value("threads", c.threads);
    if (j.contains("spiral")) {
      const auto& s = j.at("spiral");
      c.spiral.params.a = s.value("a", c.spiral.params.a);
      c.spiral.params.b = s.value("b", c.spiral.params.b);
      c.spiral.params.theta_min = s.value("theta_min", c.spiral.params.theta_min);
      c.spiral.params.theta_max = s.value("theta_max", c.spiral.params.theta_max);
      if (s.contains("sampling")) {
        const auto m = s.at("sampling").get<std::string>();
        if (m != "arc_length" && m != "theta") throw InputError("spiral sampling must be 'arc_length' or 'theta'");
        c.spiral.sampling = m == "theta" ? SpiralSampling::Theta : SpiralSampling::ArcLength;
      }
      c.spiral.distance_scale = s.value("distance_scale", c.spiral.distance_scale);
    }
    if (j.contains("rkhs")) {
      const auto& r = j.at("rkhs");
      c.rkhs.dimension = r.value("dimension", c.rkhs.dimension);
      c.rkhs.rank = r.value("rank", c.rkhs.rank);
      c.rkhs.r0 = r.value("r0", c.rkhs.r0);
      if (r.contains("kernel")) c.rkhs.kernel = kernel_from_json(r.at("kernel"));
    }
    if (j.contains("files")) {
      const auto& f = j.at("files");
      c.files.items = f.value("items", c.files.items);
      c.files.triplets = f.value("triplets", c.files.triplets);
      c.files.id_column = f.value("id_column", c.files.id_column);
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Data for one (repetition, count) cell

/// Item table plus triplet sets. Training labels are the observed ones;
/// validation and test labels are the noiseless truth, and `test_observed`
/// carries the same test triplets with labels drawn like the training ones.
struct CellData {
  ItemMatrix items;
  std::vector<std::size_t> fit_rows;
  TripletSet train, validation, test, test_observed;
};

namespace detail {

enum : std::uint64_t { kStreamOracle = 1, kStreamData = 2, kStreamSplit = 3, kStreamLandmarks = 4 };

struct Labeled {
  SyntheticTriplets data;
  TripletSet truth, observed;
};

inline void append_rows(ItemMatrix& dst, const ItemMatrix& src) {
  const Eigen::Index r = dst.rows();
  dst.conservativeResize(r + src.rows(), src.cols());
  dst.bottomRows(src.rows()) = src;
}

inline TripletSet offset(TripletSet ts, std::size_t by) {
  for (auto& t : ts) {
    t.h += by;
    t.i += by;
    t.j += by;
  }
  return ts;
}

/// Assembles train / validation / test blocks into one table.
inline CellData assemble(const Labeled& tr, const Labeled& va, const Labeled& te) {
  CellData c;
  c.items = tr.data.items;
  const auto n_tr = static_cast<std::size_t>(tr.data.items.rows());
  c.fit_rows.resize(n_tr);
  std::iota(c.fit_rows.begin(), c.fit_rows.end(), std::size_t{0});
  c.train = tr.observed;
  append_rows(c.items, va.data.items);
  c.validation = offset(va.truth, n_tr);
  const auto n_va = static_cast<std::size_t>(va.data.items.rows());
  append_rows(c.items, te.data.items);
  c.test = offset(te.truth, n_tr + n_va);
  c.test_observed = offset(te.observed, n_tr + n_va);
  return c;
}

inline Labeled label(SyntheticTriplets data, const Eigen::VectorXd& margins, const std::optional<double>& rho,
                     std::uint64_t seed) {
  Labeled l{std::move(data), {}, {}};
  l.truth = l.data.triplets;
  label_triplets_exact(l.truth, margins);
  l.observed = l.data.triplets;
  if (rho) {
    label_triplets(l.observed, margins, NoiseLink{*rho}, seed);
  } else {
    l.observed = l.truth;
  }
  return l;
}

}  // namespace detail

/// Scaled squared-geodesic margins used for spiral labels.
inline Eigen::VectorXd spiral_label_margins(const SpiralOracle& oracle, const Eigen::VectorXd& tags,
                                            const TripletSet& triplets, double distance_scale) {
  return spiral_true_margins(oracle, tags, triplets) * (distance_scale * distance_scale);
}

/// Simulated labeled triplets for one block (train, validation or test).
inline detail::Labeled simulate_block(const ExperimentConfig& c, const SpiralOracle* spiral,
                                      const LowRankRkhsOracle* rkhs, std::size_t count, std::uint64_t seed) {
  if (c.source == DataSource::SimulateSpiral) {
    SyntheticTriplets s = sample_triplets(SpiralItemSource{*spiral, c.spiral.sampling}, count, derive_seed(seed, 0));
    const Eigen::VectorXd mg = spiral_label_margins(*spiral, s.tags, s.triplets, c.spiral.distance_scale);
    return detail::label(std::move(s), mg, c.noise_rho, derive_seed(seed, 1));
  }
  SyntheticTriplets s = sample_triplets(GaussianItemSource{rkhs->dimension() > 0 ? static_cast<int>(rkhs->dimension()) : 1},
                                        count, derive_seed(seed, 0));
  const Eigen::VectorXd mg = rkhs_true_margins(*rkhs, s.items, s.triplets);
  return detail::label(std::move(s), mg, c.noise_rho, derive_seed(seed, 1));
}

// ---------------------------------------------------------------------------
// Report

struct CellResult {
  std::string kernel;
  std::size_t kernel_index = 0;
  std::size_t count = 0;
  int repetition = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double train_accuracy = 0.0, validation_accuracy = 0.0, test_accuracy = 0.0;
  double train_risk = 0.0, test_risk = 0.0;
  double feature_bound = 0.0, bound = 0.0;
  int iterations = 0;
  long long embedding_dimension = 0;
  double wall_seconds = 0.0;

  double accuracy_gap() const { return std::abs(train_accuracy - test_accuracy); }
  double risk_gap() const { return test_risk - train_risk; }
};

struct Summary {
  double mean = 0.0, std = 0.0;
  std::size_t n = 0;
};

/// Mean and sample standard deviation (0 for a single value).
inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct AggregateRow {
  std::string kernel;
  std::size_t kernel_index = 0;
  std::size_t count = 0;
  std::size_t failed = 0;
  Summary train_accuracy, validation_accuracy, test_accuracy, accuracy_gap, train_risk, test_risk;
};

struct Report {
  ExperimentConfig config;
  std::vector<CellResult> rows;
  std::vector<AggregateRow> aggregates;
  double wall_seconds = 0.0;

  const AggregateRow* find(std::size_t kernel_index, std::size_t count) const {
    for (const auto& a : aggregates)
      if (a.kernel_index == kernel_index && a.count == count) return &a;
    return nullptr;
  }
};

/// Aggregates successful rows per (kernel, count), in grid order.
inline std::vector<AggregateRow> aggregate(const ExperimentConfig& c, const std::vector<CellResult>& rows) {
  std::vector<AggregateRow> out;
  for (std::size_t k = 0; k < c.kernels.size(); ++k) {
    for (std::size_t count : c.triplet_counts) {
      AggregateRow a;
      a.kernel = c.kernels[k].describe();
      a.kernel_index = k;
      a.count = count;
      std::vector<double> tr, va, te, gap, rtr, rte;
      for (const auto& r : rows) {
        if (r.kernel_index != k || r.count != count) continue;
        if (!r.ok) {
          ++a.failed;
          continue;
        }
        tr.push_back(r.train_accuracy);
        va.push_back(r.validation_accuracy);
        te.push_back(r.test_accuracy);
        gap.push_back(r.accuracy_gap());
        rtr.push_back(r.train_risk);
        rte.push_back(r.test_risk);
      }
      a.train_accuracy = summarize(tr);
      a.validation_accuracy = summarize(va);
      a.test_accuracy = summarize(te);
      a.accuracy_gap = summarize(gap);
      a.train_risk = summarize(rtr);
      a.test_risk = summarize(rte);
      out.push_back(std::move(a));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Running

namespace detail {

inline CellResult run_cell(const ExperimentConfig& c, const CellData& data, std::size_t kernel_index,
                           std::size_t count, int rep, std::uint64_t seed) {
  const auto started = std::chrono::steady_clock::now();
  CellResult r;
  r.kernel = c.kernels[kernel_index].describe();
  r.kernel_index = kernel_index;
  r.count = count;
  r.repetition = rep;
  r.seed = seed;
  try {
    FitOptions opt;
    opt.kernel = c.kernels[kernel_index];
    opt.loss = c.loss;
    opt.constraint = c.constraint;
    opt.solver = c.solver;
    opt.solver.seed = seed;
    opt.nystrom_m = c.nystrom_m;
    opt.seed = derive_seed(seed, kStreamLandmarks);
    const FitResult fit = fit_metric(data.items, data.train, opt, data.fit_rows);
    r.train_accuracy = accuracy_from_embeddings(fit.model, fit.embeddings, data.train);
    r.validation_accuracy =
        data.validation.empty() ? 0.0 : accuracy_from_embeddings(fit.model, fit.embeddings, data.validation);
    r.test_accuracy = accuracy_from_embeddings(fit.model, fit.embeddings, data.test);
    r.train_risk = fit.report.best_risk;
    r.test_risk = risk_from_margins(margins_factored(fit.model.W, make_differences(fit.embeddings, data.test_observed)),
                                    make_differences(fit.embeddings, data.test_observed).y, c.loss);
    r.feature_bound = feature_norm_bound(opt.kernel, data.items);
    r.bound = generalization_bound(c.constraint.kind, loss_lipschitz(c.loss), std::max(r.feature_bound, 1e-300),
                                   c.constraint.lambda, static_cast<double>(data.train.size()), c.delta);
    r.iterations = fit.report.iterations;
    r.embedding_dimension = static_cast<long long>(fit.model.kpca.dimension());
    r.ok = true;
  } catch (const std::exception& e) {
    std::ostringstream msg;
    msg << "cell (kernel=" << r.kernel << ", count=" << count << ", repetition=" << rep << ", seed=" << seed
        << "): " << e.what();
    r.error = msg.str();
    r.ok = false;
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

struct FileData {
  ItemMatrix items;
  TripletSet triplets;
};

/// All cells of one repetition, ordered by (count, kernel).
inline std::vector<CellResult> run_repetition(const ExperimentConfig& c, int rep, const FileData* files) {
  const std::uint64_t rep_seed = derive_seed(c.seed, static_cast<std::uint64_t>(rep));
  std::vector<CellResult> rows;
  const auto fail_all = [&](std::size_t ci, const std::string& what) {
    for (std::size_t k = 0; k < c.kernels.size(); ++k) {
      CellResult r;
      r.kernel = c.kernels[k].describe();
      r.kernel_index = k;
      r.count = c.triplet_counts[ci];
      r.repetition = rep;
      r.seed = derive_seed(derive_seed(rep_seed, kStreamData), ci);
      std::ostringstream msg;
      msg << "cell (kernel=" << r.kernel << ", count=" << r.count << ", repetition=" << rep << ", seed=" << r.seed
          << "): " << what;
      r.error = msg.str();
      rows.push_back(std::move(r));
    }
  };

  std::optional<SpiralOracle> spiral;
  std::optional<LowRankRkhsOracle> rkhs;
  std::optional<SplitResult> split;
  try {
    if (c.source == DataSource::SimulateSpiral) spiral.emplace(c.spiral.params);
    if (c.source == DataSource::SimulateRkhs) {
      rkhs = make_low_rank_rkhs_oracle(c.rkhs.dimension, c.rkhs.rank, c.rkhs.r0, derive_seed(rep_seed, kStreamOracle),
                                       c.rkhs.kernel);
    }
    if (c.source == DataSource::Files) {
      split = split_unseen(static_cast<std::size_t>(files->items.rows()), files->triplets, c.n_unseen, c.fractions,
                           derive_seed(rep_seed, kStreamSplit));
    }
  } catch (const std::exception& e) {
    for (std::size_t ci = 0; ci < c.triplet_counts.size(); ++ci) fail_all(ci, e.what());
    return rows;
  }

  for (std::size_t ci = 0; ci < c.triplet_counts.size(); ++ci) {
    const std::size_t count = c.triplet_counts[ci];
    const std::uint64_t cell_seed = derive_seed(derive_seed(rep_seed, kStreamData), ci);
    CellData data;
    try {
      if (c.source == DataSource::Files) {
        if (count > split->train.size()) {
          throw InputError("requested " + std::to_string(count) + " training triplets but the split has " +
                           std::to_string(split->train.size()));
        }
        data.items = files->items;
        std::vector<char> mask(static_cast<std::size_t>(files->items.rows()), 0);
        for (auto u : split->unseen) mask[u] = 1;
        for (std::size_t a = 0; a < mask.size(); ++a)
          if (!mask[a]) data.fit_rows.push_back(a);
        data.train.assign(split->train.begin(), split->train.begin() + static_cast<std::ptrdiff_t>(count));
        data.validation = split->validation;
        data.test = split->test;
        data.test_observed = split->test;
        if (data.test.empty()) throw InputError("split produced an empty test set");
      } else {
        const SpiralOracle* sp = spiral ? &*spiral : nullptr;
        const LowRankRkhsOracle* rk = rkhs ? &*rkhs : nullptr;
        data = assemble(simulate_block(c, sp, rk, count, derive_seed(cell_seed, 0)),
                        simulate_block(c, sp, rk, c.eval_triplets, derive_seed(cell_seed, 1)),
                        simulate_block(c, sp, rk, c.eval_triplets, derive_seed(cell_seed, 2)));
      }
    } catch (const std::exception& e) {
      fail_all(ci, e.what());
      continue;
    }
    for (std::size_t k = 0; k < c.kernels.size(); ++k) rows.push_back(run_cell(c, data, k, count, rep, cell_seed));
  }
  return rows;
}

}  // namespace detail

/// Runs every (repetition, count, kernel) cell. Repetitions run on worker
/// threads; rows are merged in (kernel, count, repetition) order so the
/// report does not depend on scheduling.
inline Report run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  std::optional<detail::FileData> files;
  if (config.source == DataSource::Files) {
    files.emplace();
    files->items = read_items_csv(config.files.items, config.files.id_column);
    files->triplets = read_triplets_csv(config.files.triplets);
    validate_triplets(files->triplets, static_cast<std::size_t>(files->items.rows()));
  }

  const auto reps = static_cast<std::size_t>(config.repetitions);
  std::vector<std::vector<CellResult>> per_rep(reps);
  unsigned workers = config.threads > 0 ? static_cast<unsigned>(config.threads) : std::thread::hardware_concurrency();
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(reps)));
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t r = next++; r < reps; r = next++) {
      per_rep[r] = detail::run_repetition(config, static_cast<int>(r), files ? &*files : nullptr);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  Report rep;
  rep.config = config;
  for (std::size_t k = 0; k < config.kernels.size(); ++k)
    for (std::size_t count : config.triplet_counts)
      for (std::size_t r = 0; r < reps; ++r)
        for (const auto& row : per_rep[r])
          if (row.kernel_index == k && row.count == count) rep.rows.push_back(row);
  rep.aggregates = aggregate(config, rep.rows);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Kernel parameter sweep

struct SweepResult {
  Kernel best;
  std::size_t best_index = 0;
  /// Mean validation accuracy per grid point at the largest triplet count.
  std::vector<double> validation_accuracy;
  Report report;
};

/// Runs the experiment over `grid` and returns the kernel with the highest
/// mean validation accuracy at the largest triplet count. Ties go to the
/// earliest grid entry.
inline SweepResult sweep_kernel_params(ExperimentConfig config, const std::vector<Kernel>& grid) {
  if (grid.empty()) throw InputError("sweep: empty kernel grid");
  config.kernels = grid;
  SweepResult out;
  out.report = run_experiment(config);
  const std::size_t count = config.triplet_counts.back();
  double best = -1.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const AggregateRow* a = out.report.find(k, count);
    const double v = a && a->validation_accuracy.n > 0 ? a->validation_accuracy.mean : -1.0;
    out.validation_accuracy.push_back(v);
    if (v > best) {
      best = v;
      out.best_index = k;
    }
  }
  if (best < 0.0) throw NumericError("sweep: every grid point failed");
  out.best = grid[out.best_index];
  return out;
}

/// Parameter grid used for model selection on real data: sigma for the
/// Gaussian, alpha for sigmoid and Laplacian, p for the polynomial.
inline std::vector<Kernel> default_kernel_grid() {
  std::vector<Kernel> g;
  for (double s : {0.01, 0.1, 1.0, 10.0}) g.push_back(Kernel::gaussian(s));
  for (double a : {0.01, 0.1, 1.0}) g.push_back(Kernel::sigmoid(1.0, a));
  for (double a : {0.01, 0.1, 1.0}) g.push_back(Kernel::laplacian(a));
  for (int p : {2, 5, 7, 10}) g.push_back(Kernel::polynomial(1.0, p));
  return g;
}

// ---------------------------------------------------------------------------
// Report output

namespace detail {

inline json summary_to_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

}  // namespace detail

inline json report_to_json(const Report& r) {
  json rows = json::array();
  for (const auto& c : r.rows) {
    rows.push_back({{"kernel", c.kernel},
                    {"kernel_index", c.kernel_index},
                    {"count", c.count},
                    {"repetition", c.repetition},
                    {"seed", c.seed},
                    {"ok", c.ok},
                    {"error", c.error},
                    {"train_accuracy", c.train_accuracy},
                    {"validation_accuracy", c.validation_accuracy},
                    {"test_accuracy", c.test_accuracy},
                    {"train_risk", c.train_risk},
                    {"test_risk", c.test_risk},
                    {"feature_bound", c.feature_bound},
                    {"bound", c.bound},
                    {"iterations", c.iterations},
                    {"embedding_dimension", c.embedding_dimension},
                    {"wall_seconds", c.wall_seconds}});
  }
  json aggs = json::array();
  for (const auto& a : r.aggregates) {
    aggs.push_back({{"kernel", a.kernel},
                    {"kernel_index", a.kernel_index},
                    {"count", a.count},
                    {"failed", a.failed},
                    {"train_accuracy", detail::summary_to_json(a.train_accuracy)},
                    {"validation_accuracy", detail::summary_to_json(a.validation_accuracy)},
                    {"test_accuracy", detail::summary_to_json(a.test_accuracy)},
                    {"accuracy_gap", detail::summary_to_json(a.accuracy_gap)},
                    {"train_risk", detail::summary_to_json(a.train_risk)},
                    {"test_risk", detail::summary_to_json(a.test_risk)}});
  }
  return {{"config", experiment_config_to_json(r.config)},
          {"rows", rows},
          {"aggregates", aggs},
          {"wall_seconds", r.wall_seconds}};
}

/// One row per (kernel, count, repetition). Wall times are left out so that
/// identical runs give identical files.
inline void write_results_csv(std::ostream& out, const Report& r) {
  out << "source,kernel,count,repetition,seed,status,train_accuracy,validation_accuracy,test_accuracy,"
         "train_risk,test_risk,feature_bound,bound,iterations,embedding_dimension,error\n";
  const std::string source(to_string(r.config.source));
  for (const auto& c : r.rows) {
    out << source << ',' << detail::csv_quote(c.kernel) << ',' << c.count << ',' << c.repetition << ',' << c.seed
        << ',' << (c.ok ? "ok" : "error") << ',' << detail::format_double(c.train_accuracy) << ','
        << detail::format_double(c.validation_accuracy) << ',' << detail::format_double(c.test_accuracy) << ','
        << detail::format_double(c.train_risk) << ',' << detail::format_double(c.test_risk) << ','
        << detail::format_double(c.feature_bound) << ',' << detail::format_double(c.bound) << ',' << c.iterations
        << ',' << c.embedding_dimension << ',' << detail::csv_quote(c.error) << '\n';
  }
}

inline void write_results_csv(const std::string& path, const Report& r) {
  auto out = detail::open_out(path);
  write_results_csv(out, r);
}

}  // namespace kmetric
