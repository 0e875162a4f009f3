// Command-line front end: simulate data, fit and evaluate metrics, sweep
// kernel parameters, evaluate bounds and run full experiment configs.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kmetric/kmetric.hpp"

namespace fs = std::filesystem;
using namespace kmetric;

namespace {

struct KernelFlags {
  std::string family;
  std::optional<double> sigma, alpha, c;
  std::optional<int> degree;

  void add(CLI::App* app) {
    app->add_option("--kernel", family, "linear | gaussian | sigmoid | polynomial | laplacian");
    app->add_option("--sigma", sigma, "Gaussian bandwidth");
    app->add_option("--alpha", alpha, "sigmoid / Laplacian scale");
    app->add_option("--c", c, "sigmoid / polynomial offset");
    app->add_option("--degree", degree, "polynomial degree");
  }

  bool given() const { return !family.empty(); }

  Kernel kernel() const {
    switch (kernel_family_from_string(family)) {
      case KernelFamily::Linear: return Kernel::linear();
      case KernelFamily::Gaussian: return Kernel::gaussian(sigma.value_or(1.0));
      case KernelFamily::Sigmoid: return Kernel::sigmoid(c.value_or(1.0), alpha.value_or(1.0));
      case KernelFamily::Polynomial: return Kernel::polynomial(c.value_or(1.0), degree.value_or(2));
      case KernelFamily::Laplacian: return Kernel::laplacian(alpha.value_or(1.0));
    }
    throw InputError("unknown kernel '" + family + "'");
  }
};

struct ConstraintFlags {
  std::optional<double> lambda_nuc, lambda_fro;

  void add(CLI::App* app) {
    auto* nuc = app->add_option("--lambda-nuc", lambda_nuc, "nuclear-norm radius");
    auto* fro = app->add_option("--lambda-fro", lambda_fro, "Frobenius-norm radius");
    nuc->excludes(fro);
  }

  std::optional<ConstraintSpec> spec() const {
    if (lambda_nuc) return ConstraintSpec::nuclear(*lambda_nuc);
    if (lambda_fro) return ConstraintSpec::frobenius(*lambda_fro);
    return std::nullopt;
  }
};

struct SolverFlags {
  std::optional<int> max_iters;
  std::optional<double> eta0;
  std::string step;

  void add(CLI::App* app) {
    app->add_option("--max-iters", max_iters, "solver iteration cap");
    app->add_option("--eta0", eta0, "initial step size");
    app->add_option("--step", step, "inverse_sqrt | normalized_inverse_sqrt");
  }

  void apply(SolverConfig& c) const {
    if (max_iters) c.max_iters = *max_iters;
    if (eta0) c.eta0 = *eta0;
    if (!step.empty()) c.step = step_rule_from_string(step);
  }
};

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw InputError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_simulation(const std::string& out, const SyntheticTriplets& s, const json& oracle, double flips) {
  ensure_dir(out);
  write_items_csv(join(out, "items.csv"), s.items);
  write_triplets_csv(join(out, "triplets.csv"), s.triplets);
  json desc = oracle;
  desc["empirical_flip_rate"] = flips;
  write_json_file(join(out, "oracle.json"), desc);
}

std::vector<std::size_t> parse_counts(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    long long v = 0;
    if (!detail::parse_long(detail::trim(tok), v) || v < 1) throw InputError("--triplets: bad count '" + tok + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw InputError("--triplets: no counts given");
  return out;
}

void print_aggregates(const Report& r) {
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& a : r.aggregates) {
    std::cout << a.kernel << "  |S|=" << a.count << "  test " << a.test_accuracy.mean << " +- " << a.test_accuracy.std
              << "  train " << a.train_accuracy.mean << "  validation " << a.validation_accuracy.mean;
    if (a.failed) std::cout << "  failed " << a.failed;
    std::cout << '\n';
  }
  for (const auto& row : r.rows)
    if (!row.ok) std::cerr << "error: " << row.error << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernelized Mahalanobis metric learning from triplet comparisons"};
  app.require_subcommand(1);

  // simulate-spiral
  auto* sim_spiral = app.add_subcommand("simulate-spiral", "sample labeled triplets on a spiral");
  std::size_t ss_count = 1000;
  std::uint64_t ss_seed = 1;
  std::optional<double> ss_rho;
  double ss_scale = SpiralSetup{}.distance_scale;
  double ss_a = 0.0, ss_b = 1.0;
  std::string ss_out, ss_sampling = "arc_length";
  sim_spiral->add_option("--triplets", ss_count, "number of triplets");
  sim_spiral->add_option("--seed", ss_seed, "RNG seed");
  sim_spiral->add_option("--rho", ss_rho, "link sharpness; omit for noiseless labels");
  sim_spiral->add_option("--distance-scale", ss_scale, "multiplier on geodesic distances in margins");
  sim_spiral->add_option("--a", ss_a, "spiral offset a in r = a + b theta");
  sim_spiral->add_option("--b", ss_b, "spiral growth b in r = a + b theta");
  sim_spiral->add_option("--sampling", ss_sampling, "arc_length | theta");
  sim_spiral->add_option("--out", ss_out, "output directory")->required();

  // simulate-rkhs
  auto* sim_rkhs = app.add_subcommand("simulate-rkhs", "sample labeled triplets from a low-rank RKHS metric");
  std::size_t sr_count = 1000;
  std::uint64_t sr_seed = 1;
  std::optional<double> sr_rho;
  int sr_dim = RkhsSetup{}.dimension, sr_rank = 2, sr_r0 = 10;
  std::string sr_out;
  KernelFlags sr_kernel;
  sim_rkhs->add_option("--triplets", sr_count, "number of triplets");
  sim_rkhs->add_option("--seed", sr_seed, "RNG seed");
  sim_rkhs->add_option("--rho", sr_rho, "link sharpness; omit for noiseless labels");
  sim_rkhs->add_option("--dimension", sr_dim, "item dimension d");
  sim_rkhs->add_option("--rank", sr_rank, "rank r of the ground-truth metric");
  sim_rkhs->add_option("--r0", sr_r0, "number of landmarks");
  sr_kernel.add(sim_rkhs);
  sim_rkhs->add_option("--out", sr_out, "output directory")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "learn a metric from items and labeled triplets");
  std::string fit_items, fit_triplets, fit_out, fit_loss = "logistic";
  bool fit_id = false;
  std::optional<std::size_t> fit_m;
  std::uint64_t fit_seed = 1;
  KernelFlags fit_kernel;
  ConstraintFlags fit_constraint;
  SolverFlags fit_solver;
  fit->add_option("--items", fit_items, "items CSV")->required();
  fit->add_option("--triplets", fit_triplets, "triplets CSV (h,i,j,y)")->required();
  fit->add_flag("--id-column", fit_id, "items CSV has a leading id column");
  fit_kernel.add(fit);
  fit_constraint.add(fit);
  fit_solver.add(fit);
  fit->add_option("--loss", fit_loss, "logistic | hinge");
  fit->add_option("--nystrom-m", fit_m, "Nystrom landmark count");
  fit->add_option("--seed", fit_seed, "RNG seed for landmark sampling");
  fit->add_option("--out", fit_out, "output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "accuracy of a fitted model on labeled triplets");
  std::string ev_model, ev_items, ev_triplets, ev_out;
  bool ev_id = false;
  eval->add_option("--model", ev_model, "model.json written by fit")->required();
  eval->add_option("--items", ev_items, "items CSV")->required();
  eval->add_option("--triplets", ev_triplets, "triplets CSV")->required();
  eval->add_flag("--id-column", ev_id, "items CSV has a leading id column");
  eval->add_option("--out", ev_out, "optional JSON result file");

  // shared by sweep and run
  struct RunFlags {
    std::string config, out, loss, triplets;
    std::optional<int> reps;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> nystrom_m;
    std::optional<int> threads;
    KernelFlags kernel;
    ConstraintFlags constraint;
    SolverFlags solver;
  };
  const auto add_run_flags = [](CLI::App* sub, RunFlags& f) {
    sub->add_option("--config", f.config, "experiment config JSON");
    sub->add_option("--out", f.out, "output directory");
    f.kernel.add(sub);
    f.constraint.add(sub);
    f.solver.add(sub);
    sub->add_option("--loss", f.loss, "logistic | hinge");
    sub->add_option("--triplets", f.triplets, "comma-separated triplet counts");
    sub->add_option("--reps", f.reps, "repetitions");
    sub->add_option("--seed", f.seed, "master seed");
    sub->add_option("--nystrom-m", f.nystrom_m, "Nystrom landmark count");
    sub->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  };
  const auto build_config = [](const RunFlags& f) {
    ExperimentConfig c;
    if (!f.config.empty()) {
      c = experiment_config_from_json(read_json_file(f.config));
      // data paths in a config are relative to the config file
      const auto base = std::filesystem::path(f.config).parent_path();
      for (std::string* p : {&c.files.items, &c.files.triplets})
        if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
    }
    if (f.kernel.given()) c.kernels = {f.kernel.kernel()};
    if (auto s = f.constraint.spec()) c.constraint = *s;
    f.solver.apply(c.solver);
    if (!f.loss.empty()) c.loss = loss_from_string(f.loss);
    if (!f.triplets.empty()) c.triplet_counts = parse_counts(f.triplets);
    if (f.reps) c.repetitions = *f.reps;
    if (f.seed) c.seed = *f.seed;
    if (f.nystrom_m) c.nystrom_m = *f.nystrom_m;
    if (f.threads) c.threads = *f.threads;
    c.validate();
    return c;
  };
  const auto write_report = [](const std::string& out, const Report& r) {
    if (out.empty()) return;
    ensure_dir(out);
    write_json_file(join(out, "report.json"), report_to_json(r));
    write_results_csv(join(out, "results.csv"), r);
  };

  auto* sweep = app.add_subcommand("sweep", "select kernel parameters by validation accuracy");
  RunFlags sw;
  bool sw_default_grid = false;
  add_run_flags(sweep, sw);
  sweep->add_flag("--default-grid", sw_default_grid,
                  "sweep sigma {0.01,0.1,1,10}, alpha {0.01,0.1,1}, p {2,5,7,10} instead of the config kernels");

  auto* run = app.add_subcommand("run", "run a full experiment config");
  RunFlags rn;
  add_run_flags(run, rn);

  // bound
  auto* bound = app.add_subcommand("bound", "evaluate the generalization bound");
  std::string bd_norm = "nuclear";
  double bd_alpha = 1.0, bd_B = 1.0, bd_lambda = 1.0, bd_S = 1000.0, bd_delta = 0.05;
  bound->add_option("--norm", bd_norm, "frobenius | nuclear");
  bound->add_option("--alpha", bd_alpha, "Lipschitz constant of the loss");
  bound->add_option("--B", bd_B, "feature norm bound");
  bound->add_option("--lambda", bd_lambda, "norm radius");
  bound->add_option("--S", bd_S, "number of triplets");
  bound->add_option("--delta", bd_delta, "failure probability");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim_spiral) {
      SpiralParams p;
      p.a = ss_a;
      p.b = ss_b;
      if (ss_sampling != "arc_length" && ss_sampling != "theta") throw InputError("--sampling: arc_length or theta");
      const SpiralOracle oracle(p);
      SyntheticTriplets s = sample_triplets(
          SpiralItemSource{oracle, ss_sampling == "theta" ? SpiralSampling::Theta : SpiralSampling::ArcLength},
          ss_count, derive_seed(ss_seed, 0));
      const Eigen::VectorXd mg = spiral_label_margins(oracle, s.tags, s.triplets, ss_scale);
      if (ss_rho) {
        label_triplets(s.triplets, mg, NoiseLink{*ss_rho}, derive_seed(ss_seed, 1));
      } else {
        label_triplets_exact(s.triplets, mg);
      }
      json desc = spiral_to_json(oracle);
      desc["distance_scale"] = ss_scale;
      desc["rho"] = ss_rho ? json(*ss_rho) : json(nullptr);
      desc["seed"] = ss_seed;
      write_simulation(ss_out, s, desc, flip_rate(s.triplets, mg));
      std::ofstream tags(join(ss_out, "tags.csv"));
      for (Eigen::Index k = 0; k < s.tags.size(); ++k) tags << detail::format_double(s.tags(k)) << '\n';
      std::cout << "wrote " << s.triplets.size() << " triplets over " << s.items.rows() << " items to " << ss_out
                << '\n';
    } else if (*sim_rkhs) {
      const Kernel k = sr_kernel.given() ? sr_kernel.kernel() : Kernel::gaussian(1.0);
      const LowRankRkhsOracle oracle = make_low_rank_rkhs_oracle(sr_dim, sr_rank, sr_r0, derive_seed(sr_seed, 0), k);
      SyntheticTriplets s = sample_triplets(GaussianItemSource{sr_dim}, sr_count, derive_seed(sr_seed, 1));
      const Eigen::VectorXd mg = rkhs_true_margins(oracle, s.items, s.triplets);
      if (sr_rho) {
        label_triplets(s.triplets, mg, NoiseLink{*sr_rho}, derive_seed(sr_seed, 2));
      } else {
        label_triplets_exact(s.triplets, mg);
      }
      json desc = rkhs_oracle_to_json(oracle);
      desc["rho"] = sr_rho ? json(*sr_rho) : json(nullptr);
      desc["seed"] = sr_seed;
      write_simulation(sr_out, s, desc, flip_rate(s.triplets, mg));
      std::cout << "wrote " << s.triplets.size() << " triplets over " << s.items.rows() << " items to " << sr_out
                << '\n';
    } else if (*fit) {
      const ItemMatrix items = read_items_csv(fit_items, fit_id);
      const TripletSet triplets = read_triplets_csv(fit_triplets);
      FitOptions opt;
      opt.kernel = fit_kernel.given() ? fit_kernel.kernel() : Kernel::gaussian(1.0);
      opt.loss = loss_from_string(fit_loss);
      if (auto s = fit_constraint.spec()) opt.constraint = *s;
      opt.solver = ExperimentConfig{}.solver;
      fit_solver.apply(opt.solver);
      opt.solver.seed = fit_seed;
      opt.nystrom_m = fit_m;
      opt.seed = fit_seed;
      const FitResult r = fit_metric(items, triplets, opt);
      ensure_dir(fit_out);
      write_json_file(join(fit_out, "model.json"), metric_model_to_json(r.model));
      write_json_file(join(fit_out, "solve_report.json"), solve_report_to_json(r.report));
      std::cout << std::fixed << std::setprecision(4) << "kernel " << opt.kernel.describe() << "  dim "
                << r.model.kpca.dimension() << "  best risk " << r.report.best_risk << "  train accuracy "
                << accuracy_from_embeddings(r.model, r.embeddings, triplets) << "  iterations " << r.report.iterations
                << '\n';
    } else if (*eval) {
      const MetricModel model = metric_model_from_json(read_json_file(ev_model));
      const ItemMatrix items = read_items_csv(ev_items, ev_id);
      const TripletSet triplets = read_triplets_csv(ev_triplets);
      const double acc = evaluate(model, triplets, items);
      std::cout << std::fixed << std::setprecision(4) << "accuracy " << acc << " on " << triplets.size()
                << " triplets\n";
      if (!ev_out.empty()) write_json_file(ev_out, {{"accuracy", acc}, {"triplets", triplets.size()}});
    } else if (*sweep) {
      ExperimentConfig c = build_config(sw);
      const std::vector<Kernel> grid = sw_default_grid ? default_kernel_grid() : c.kernels;
      const SweepResult r = sweep_kernel_params(c, grid);
      std::cout << std::fixed << std::setprecision(4);
      for (std::size_t k = 0; k < grid.size(); ++k)
        std::cout << grid[k].describe() << "  validation " << r.validation_accuracy[k] << '\n';
      std::cout << "best " << r.best.describe() << '\n';
      write_report(sw.out, r.report);
      if (!sw.out.empty()) {
        write_json_file(join(sw.out, "best_kernel.json"), kernel_to_json(r.best));
      }
    } else if (*run) {
      const ExperimentConfig c = build_config(rn);
      const Report r = run_experiment(c);
      print_aggregates(r);
      write_report(rn.out, r);
    } else if (*bound) {
      ConstraintKind kind;
      if (bd_norm == "frobenius") {
        kind = ConstraintKind::Frobenius;
      } else if (bd_norm == "nuclear") {
        kind = ConstraintKind::Nuclear;
      } else {
        throw InputError("--norm must be frobenius or nuclear");
      }
      std::cout << std::setprecision(10) << generalization_bound(kind, bd_alpha, bd_B, bd_lambda, bd_S, bd_delta)
                << '\n';
    }
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
