#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <set>
#include <sstream>

#include "kmetric/experiment.hpp"

using namespace kmetric;
namespace fs = std::filesystem;

namespace {

TripletSet all_triplets(std::size_t items, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  TripletSet out;
  while (out.size() < count) {
    Triplet t{uniform_index(rng, items), uniform_index(rng, items), uniform_index(rng, items),
              uniform01(rng) < 0.5 ? 1 : -1};
    if (t.h != t.i && t.h != t.j && t.i != t.j) out.push_back(t);
  }
  return out;
}

ExperimentConfig tiny_rkhs(std::size_t count, int reps) {
  ExperimentConfig c;
  c.source = DataSource::SimulateRkhs;
  c.rkhs.dimension = 5;
  c.triplet_counts = {count};
  c.repetitions = reps;
  c.eval_triplets = 200;
  c.nystrom_m = 100;
  return c;
}

std::string csv_of(const Report& r) {
  std::ostringstream s;
  write_results_csv(s, r);
  return s.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("kmetric_test_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Split, UnseenItemsNeverInTraining) {
  const TripletSet all = all_triplets(100, 3000, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SplitResult s = split_unseen(100, all, 20, SplitFractions{}, seed);
    ASSERT_EQ(s.unseen.size(), 20u);
    EXPECT_EQ(std::set<std::size_t>(s.unseen.begin(), s.unseen.end()).size(), 20u);
    const std::set<std::size_t> u(s.unseen.begin(), s.unseen.end());
    for (const auto& part : {s.train, s.validation})
      for (const auto& t : part) ASSERT_TRUE(!u.count(t.h) && !u.count(t.i) && !u.count(t.j));
    EXPECT_EQ(s.test.size(), 600u);
    // the avoiding pool is divided 3:1
    EXPECT_NEAR(static_cast<double>(s.train.size()) / static_cast<double>(s.validation.size()), 3.0, 0.02);
    // every avoiding triplet outside the test set lands in train or validation
    std::multiset<std::tuple<std::size_t, std::size_t, std::size_t>> test_keys, rest;
    for (const auto& t : s.test) test_keys.insert({t.h, t.i, t.j});
    std::size_t avoiding = 0;
    for (const auto& t : all) {
      const auto key = std::make_tuple(t.h, t.i, t.j);
      if (auto it = test_keys.find(key); it != test_keys.end()) {
        test_keys.erase(it);
        continue;
      }
      avoiding += !u.count(t.h) && !u.count(t.i) && !u.count(t.j);
    }
    EXPECT_EQ(s.train.size() + s.validation.size(), avoiding);
    // test draws from every triplet, so some test triplets touch unseen items
    std::size_t touching = 0;
    for (const auto& t : s.test) touching += u.count(t.h) || u.count(t.i) || u.count(t.j);
    EXPECT_GT(touching, 0u);
  }
}

TEST(Split, ZeroUnseenUsesAllTriplets) {
  const TripletSet all = all_triplets(30, 100, 2);
  const SplitResult s = split_unseen(30, all, 0, SplitFractions{}, 3);
  EXPECT_TRUE(s.unseen.empty());
  EXPECT_EQ(s.train.size() + s.validation.size() + s.test.size(), 100u);
  std::multiset<std::tuple<std::size_t, std::size_t, std::size_t>> a, b;
  for (const auto& t : all) a.insert({t.h, t.i, t.j});
  for (const auto& part : {s.train, s.validation, s.test})
    for (const auto& t : part) b.insert({t.h, t.i, t.j});
  EXPECT_EQ(a, b);
}

TEST(Split, NotEnoughTripletsReportsCounts) {
  const TripletSet all = all_triplets(10, 50, 4);
  try {
    split_unseen(10, all, 9, SplitFractions{}, 5);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("need"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("have"), std::string::npos);
  }
  EXPECT_THROW(split_unseen(10, all, 10, SplitFractions{}, 5), InputError);
  EXPECT_THROW(split_unseen(10, all, 0, SplitFractions{0.8, 0.2, 0.2}, 5), InputError);
}

TEST(Split, Deterministic) {
  const TripletSet all = all_triplets(100, 1000, 6);
  const SplitResult a = split_unseen(100, all, 20, SplitFractions{}, 7);
  const SplitResult b = split_unseen(100, all, 20, SplitFractions{}, 7);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.unseen, b.unseen);
}

TEST(Evaluate, PerfectCoinFlipAndZeroMetric) {
  Rng rng(8);
  ItemMatrix X(300, 2);
  for (Eigen::Index a = 0; a < X.size(); ++a) X.data()[a] = standard_normal(rng);
  const KpcaModel kpca = fit_kpca(Kernel::linear(), X);
  const MetricModel model = make_metric_model(kpca, certify_metric(Eigen::MatrixXd::Identity(2, 2)));
  const Eigen::MatrixXd E = embed_all(kpca, X);

  TripletSet ts = all_triplets(300, 10000, 9);
  for (auto& t : ts) t.y = predict_triplet(Eigen::MatrixXd(Eigen::MatrixXd::Identity(2, 2)), E, t);
  EXPECT_EQ(evaluate(model, ts, X), 1.0);

  for (auto& t : ts) t.y = uniform01(rng) < 0.5 ? 1 : -1;
  EXPECT_NEAR(evaluate(model, ts, X), 0.5, 3 * std::sqrt(0.25 / 10000));

  const MetricModel zero = make_metric_model(kpca, certify_metric(Eigen::MatrixXd::Zero(2, 2)));
  double positive = 0;
  for (const auto& t : ts) positive += t.y == 1;
  EXPECT_DOUBLE_EQ(evaluate(zero, ts, X), positive / static_cast<double>(ts.size()));
  EXPECT_THROW(evaluate(model, {}, X), InputError);
}

TEST(Evaluate, OutOfSampleItemsUseKpcaPath) {
  Rng rng(10);
  ItemMatrix X(40, 3);
  for (Eigen::Index a = 0; a < X.size(); ++a) X.data()[a] = standard_normal(rng);
  const TripletSet ts = all_triplets(40, 200, 11);
  FitOptions opt;
  opt.solver.max_iters = 50;
  const std::vector<std::size_t> fit_rows{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
  TripletSet train;
  for (const auto& t : ts)
    if (t.h < 20 && t.i < 20 && t.j < 20) train.push_back(t);
  const FitResult f = fit_metric(X, train, opt, fit_rows);
  EXPECT_EQ(f.model.kpca.train_items.rows(), 20);
  EXPECT_EQ(f.embeddings.rows(), 40);
  EXPECT_DOUBLE_EQ(evaluate(f.model, ts, X), accuracy_from_embeddings(f.model, f.embeddings, ts));
}

TEST(Experiment, SmokeRunIsFastAndWellFormed) {
  ExperimentConfig c = tiny_rkhs(10, 1);
  const auto t0 = std::chrono::steady_clock::now();
  const Report r = run_experiment(c);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 10.0);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_TRUE(r.rows[0].ok) << r.rows[0].error;
  for (double a : {r.rows[0].train_accuracy, r.rows[0].validation_accuracy, r.rows[0].test_accuracy}) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  const json j = report_to_json(r);
  EXPECT_TRUE(j.contains("config") && j.contains("rows") && j.contains("aggregates"));
  EXPECT_EQ(j["rows"].size(), 1u);
}

TEST(Experiment, AggregatesRecomputeFromRows) {
  ExperimentConfig c = tiny_rkhs(50, 4);
  c.kernels = {Kernel::gaussian(1.0), Kernel::linear()};
  c.triplet_counts = {20, 50};
  const Report r = run_experiment(c);
  ASSERT_EQ(r.rows.size(), 16u);
  const json j = json::parse(report_to_json(r).dump());
  for (const auto& a : j["aggregates"]) {
    std::vector<double> v;
    for (const auto& row : j["rows"])
      if (row["kernel_index"] == a["kernel_index"] && row["count"] == a["count"] && row["ok"].get<bool>())
        v.push_back(row["test_accuracy"].get<double>());
    ASSERT_EQ(v.size(), 4u);
    double mean = 0;
    for (double x : v) mean += x / 4.0;
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(a["test_accuracy"]["mean"].get<double>(), mean, 1e-12);
    EXPECT_NEAR(a["test_accuracy"]["std"].get<double>(), std::sqrt(ss / 3.0), 1e-12);
  }
}

TEST(Experiment, DeterministicAcrossRunsAndThreadCounts) {
  ExperimentConfig c = tiny_rkhs(30, 3);
  c.noise_rho = 1000.0;
  c.threads = 1;
  const std::string a = csv_of(run_experiment(c));
  const std::string b = csv_of(run_experiment(c));
  c.threads = 3;
  const std::string d = csv_of(run_experiment(c));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, d);
  c.seed = 2;
  EXPECT_NE(a, csv_of(run_experiment(c)));
}

TEST(Experiment, SpiralSourceRuns) {
  ExperimentConfig c;
  c.source = DataSource::SimulateSpiral;
  c.kernels = {Kernel::polynomial(1.0, 2)};
  c.triplet_counts = {200};
  c.noise_rho = 30.0;
  c.eval_triplets = 500;
  c.nystrom_m = 200;
  const Report r = run_experiment(c);
  ASSERT_TRUE(r.rows[0].ok) << r.rows[0].error;
  EXPECT_GT(r.rows[0].test_accuracy, 0.6);
  // sqrt((||x||^2 + 1)^2) peaks near the outer end of the spiral
  EXPECT_NEAR(r.rows[0].feature_bound, 1.0 + 16.0 * M_PI * M_PI, 2.0);
}

TEST(Experiment, FailedCellsReportCoordinatesAndOthersContinue) {
  TempDir tmp;
  Rng rng(12);
  ItemMatrix X(60, 2);
  for (Eigen::Index a = 0; a < X.size(); ++a) X.data()[a] = standard_normal(rng);
  TripletSet ts = all_triplets(60, 400, 13);
  for (auto& t : ts)
    t.y = label_from_margin((X.row(t.h) - X.row(t.i)).squaredNorm() - (X.row(t.h) - X.row(t.j)).squaredNorm());
  write_items_csv((tmp.path / "items.csv").string(), X);
  write_triplets_csv((tmp.path / "triplets.csv").string(), ts);

  ExperimentConfig c;
  c.source = DataSource::Files;
  c.files.items = (tmp.path / "items.csv").string();
  c.files.triplets = (tmp.path / "triplets.csv").string();
  c.kernels = {Kernel::linear()};
  c.n_unseen = 5;
  c.triplet_counts = {50, 100000};
  c.seed = 99;
  const Report r = run_experiment(c);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_TRUE(r.rows[0].ok) << r.rows[0].error;
  EXPECT_GT(r.rows[0].test_accuracy, 0.8);
  EXPECT_FALSE(r.rows[1].ok);
  EXPECT_NE(r.rows[1].error.find("count=100000"), std::string::npos);
  EXPECT_NE(r.rows[1].error.find("seed="), std::string::npos);
  EXPECT_EQ(r.aggregates[1].failed, 1u);
}

TEST(Experiment, InvalidConfigRejected) {
  ExperimentConfig c;
  c.triplet_counts = {100, 50};
  EXPECT_THROW(run_experiment(c), InputError);
  c = ExperimentConfig{};
  c.repetitions = 0;
  EXPECT_THROW(run_experiment(c), InputError);
}

TEST(Sweep, SinglePointGridReturnsIt) {
  const SweepResult s = sweep_kernel_params(tiny_rkhs(20, 1), {Kernel::laplacian(0.1)});
  EXPECT_EQ(s.best.describe(), Kernel::laplacian(0.1).describe());
  EXPECT_EQ(s.best_index, 0u);
  EXPECT_THROW(sweep_kernel_params(tiny_rkhs(20, 1), {}), InputError);
}

TEST(Sweep, DefaultGridDimensions) {
  const auto g = default_kernel_grid();
  auto count = [&](KernelFamily f) { return std::count_if(g.begin(), g.end(), [&](const Kernel& k) { return k.family() == f; }); };
  EXPECT_EQ(count(KernelFamily::Gaussian), 4);
  EXPECT_EQ(count(KernelFamily::Sigmoid), 3);
  EXPECT_EQ(count(KernelFamily::Laplacian), 3);
  EXPECT_EQ(count(KernelFamily::Polynomial), 4);
}

TEST(Sweep, RecoversGroundTruthBandwidth) {
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ExperimentConfig c = tiny_rkhs(400, 1);
    c.seed = seed;
    c.nystrom_m = 150;
    const SweepResult s = sweep_kernel_params(c, {Kernel::gaussian(0.01), Kernel::gaussian(1.0), Kernel::gaussian(100.0)});
    hits += s.best_index == 1;
  }
  EXPECT_GE(hits, 8);
}
