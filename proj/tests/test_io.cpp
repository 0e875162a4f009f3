#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "kmetric/experiment.hpp"
#include "kmetric/io.hpp"

using namespace kmetric;
namespace fs = std::filesystem;

TEST(ItemsCsv, RoundTripIsExact) {
  Rng rng(1);
  ItemMatrix X(7, 3);
  for (Eigen::Index a = 0; a < X.size(); ++a) X.data()[a] = standard_normal(rng) * 1e3;
  std::stringstream s;
  write_items_csv(s, X);
  EXPECT_EQ(read_items_csv(s), X);
}

TEST(ItemsCsv, HeaderAndIdColumn) {
  std::stringstream s("id,x,y\nfoo,1,2\nbar,3.5,-4e-3\n\n");
  const ItemMatrix X = read_items_csv(s, true);
  ASSERT_EQ(X.rows(), 2);
  EXPECT_EQ(X(1, 0), 3.5);
  EXPECT_EQ(X(1, 1), -4e-3);
}

TEST(ItemsCsv, MalformedRowsRejected) {
  std::stringstream ragged("1,2\n3\n");
  EXPECT_THROW(read_items_csv(ragged), InputError);
  std::stringstream bad("1,2\n3,x\n");
  EXPECT_THROW(read_items_csv(bad), InputError);
  std::stringstream empty("");
  EXPECT_THROW(read_items_csv(empty), InputError);
  EXPECT_THROW(read_items_csv(std::string("/nonexistent/items.csv")), InputError);
}

TEST(TripletsCsv, RoundTrip) {
  const TripletSet ts{{0, 1, 2, 1}, {5, 3, 4, -1}};
  std::stringstream s;
  write_triplets_csv(s, ts);
  EXPECT_EQ(s.str(), "0,1,2,1\n5,3,4,-1\n");
  EXPECT_EQ(read_triplets_csv(s), ts);
}

TEST(TripletsCsv, InvalidRowsRejected) {
  std::stringstream label("0,1,2,0\n");
  EXPECT_THROW(read_triplets_csv(label), InputError);
  std::stringstream neg("0,-1,2,1\n");
  EXPECT_THROW(read_triplets_csv(neg), InputError);
  std::stringstream shortrow("h,i,j,y\n0,1,2\n");
  EXPECT_THROW(read_triplets_csv(shortrow), InputError);
  std::stringstream header("h,i,j,y\n0,1,2,-1\n");
  EXPECT_EQ(read_triplets_csv(header).size(), 1u);
}

TEST(Json, KernelRoundTrip) {
  for (const auto& k : {Kernel::linear(), Kernel::gaussian(0.1), Kernel::sigmoid(-1.0, 0.3), Kernel::polynomial(2.0, 7),
                        Kernel::laplacian(0.01)}) {
    const Kernel back = kernel_from_json(kernel_to_json(k));
    EXPECT_EQ(back.describe(), k.describe());
    EXPECT_EQ(back(Eigen::Vector2d(0.3, 0.1), Eigen::Vector2d(-1, 2)), k(Eigen::Vector2d(0.3, 0.1), Eigen::Vector2d(-1, 2)));
  }
  EXPECT_THROW(kernel_from_json(json{{"family", "cosine"}}), InputError);
  EXPECT_THROW(kernel_from_json(json{{"family", "gaussian"}, {"sigma", -1}}), InputError);
}

TEST(Json, ModelRoundTripPreservesDistances) {
  Rng rng(2);
  ItemMatrix X(20, 2);
  for (Eigen::Index a = 0; a < X.size(); ++a) X.data()[a] = standard_normal(rng);
  for (bool nystrom : {false, true}) {
    KpcaModel kpca = nystrom ? fit_nystrom_kpca(Kernel::gaussian(1.0), X, 8, 3) : fit_kpca(Kernel::gaussian(1.0), X);
    Eigen::MatrixXd B(kpca.dimension(), 2);
    for (Eigen::Index a = 0; a < B.size(); ++a) B.data()[a] = standard_normal(rng);
    const MetricModel m = make_metric_model(kpca, certify_metric(B * B.transpose()));
    const MetricModel back = metric_model_from_json(json::parse(metric_model_to_json(m).dump()));
    EXPECT_EQ(back.kpca.landmark_indices, m.kpca.landmark_indices);
    for (Eigen::Index a = 1; a < X.rows(); ++a)
      EXPECT_EQ(back.distance_sq(X.row(0), X.row(a)), m.distance_sq(X.row(0), X.row(a)));
  }
}

TEST(Json, ModelRejectsInconsistentShapes) {
  json j = json::parse(R"({"kpca": {"kernel": {"family": "linear"}, "mode": "exact",
    "A": {"rows": 2, "cols": 1, "data": [1, 2]}, "eigenvalues": [1, 2],
    "row_means": [0, 0], "grand_mean": 0, "train_items": {"rows": 2, "cols": 1, "data": [0, 1]}},
    "M": {"rows": 1, "cols": 1, "data": [1]}})");
  EXPECT_THROW(metric_model_from_json(j), InputError);
  EXPECT_THROW(metric_model_from_json(json{{"M", 1}}), InputError);
}

TEST(Json, SolveReportFields) {
  Eigen::MatrixXd E(3, 1);
  E << 0, 1, 2;
  SolverConfig cfg;
  cfg.max_iters = 5;
  cfg.seed = 77;
  const SolveReport r = solve_erm(E, {Triplet{0, 1, 2, -1}}, LossKind::Hinge, ConstraintSpec::frobenius(1.0), cfg);
  const json j = solve_report_to_json(r);
  for (const char* key : {"M", "best_risk", "objective_trace", "violation_trace", "iterations", "wall_seconds",
                          "config", "seed", "constraint", "loss"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["seed"].get<std::uint64_t>(), 77u);
  EXPECT_EQ(j["objective_trace"].size(), static_cast<std::size_t>(r.iterations));
  EXPECT_EQ(matrix_from_json(j["M"]), r.metric.M);
}

TEST(Json, RkhsOracleRoundTrip) {
  const LowRankRkhsOracle o = make_low_rank_rkhs_oracle(4, 2, 10, 9);
  const LowRankRkhsOracle b = rkhs_oracle_from_json(json::parse(rkhs_oracle_to_json(o).dump()));
  EXPECT_EQ(b.G, o.G);
  EXPECT_EQ(b.landmarks, o.landmarks);
}

TEST(Json, ExperimentConfigRoundTrip) {
  ExperimentConfig c;
  c.source = DataSource::SimulateSpiral;
  c.kernels = {Kernel::linear(), Kernel::polynomial(1.0, 2)};
  c.constraint = ConstraintSpec::frobenius(3.0);
  c.triplet_counts = {10, 20, 40};
  c.repetitions = 4;
  c.noise_rho = 30.0;
  c.nystrom_m.reset();
  c.spiral.distance_scale = 0.1;
  c.solver.max_iters = 17;
  const json j = experiment_config_to_json(c);
  const ExperimentConfig b = experiment_config_from_json(json::parse(j.dump()));
  EXPECT_EQ(experiment_config_to_json(b), j);
  EXPECT_FALSE(b.nystrom_m.has_value());
  EXPECT_EQ(b.triplet_counts, c.triplet_counts);
}

TEST(Json, PartialConfigKeepsDefaults) {
  const ExperimentConfig b = experiment_config_from_json(json::parse(R"({"repetitions": 3})"));
  EXPECT_EQ(b.repetitions, 3);
  EXPECT_EQ(b.triplet_counts, ExperimentConfig{}.triplet_counts);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"source": "nowhere"})")), InputError);
}

TEST(Json, SampleConfigsParse) {
  const fs::path dir = fs::path(KMETRIC_SOURCE_DIR) / "configs";
  int seen = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    ++seen;
    ExperimentConfig c = experiment_config_from_json(read_json_file(e.path().string()));
    if (c.source == DataSource::Files) {
      c.files.items = (fs::path(KMETRIC_SOURCE_DIR) / c.files.items).string();
      c.files.triplets = (fs::path(KMETRIC_SOURCE_DIR) / c.files.triplets).string();
    }
    EXPECT_NO_THROW(c.validate()) << e.path();
  }
  EXPECT_GE(seen, 3);
}
