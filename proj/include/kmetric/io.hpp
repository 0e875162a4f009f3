#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kmetric/error.hpp"
#include "kmetric/kernels.hpp"
#include "kmetric/kpca.hpp"
#include "kmetric/metric.hpp"
#include "kmetric/optimizer.hpp"
#include "kmetric/simulation.hpp"

namespace kmetric {

using json = nlohmann::json;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [p, ec] = std::from_chars(first, last, v);
  return ec == std::errc() && p == last;
}

inline bool parse_long(const std::string& s, long long& v) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [p, ec] = std::from_chars(first, last, v);
  return ec == std::errc() && p == last;
}

inline std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CSV

/// One item per row, d numeric columns. With `id_column` the first column is
/// skipped. A first line that does not parse as numbers is treated as a header.
inline ItemMatrix read_items_csv(std::istream& in, bool id_column = false) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv(line);
    if (id_column) {
      if (fields.size() < 2) throw InputError("items csv line " + std::to_string(lineno) + ": missing values after id");
      fields.erase(fields.begin());
    }
    std::vector<double> row(fields.size());
    bool ok = true;
    for (std::size_t k = 0; k < fields.size() && ok; ++k) ok = detail::parse_double(fields[k], row[k]);
    if (!ok) {
      if (rows.empty() && lineno == 1) continue;  // header
      throw InputError("items csv line " + std::to_string(lineno) + ": non-numeric value");
    }
    if (rows.empty()) dim = row.size();
    if (row.size() != dim) {
      throw InputError("items csv line " + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                       " columns, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("items csv: no items");
  ItemMatrix X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t k = 0; k < dim; ++k) X(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(k)) = rows[a][k];
  return X;
}

inline ItemMatrix read_items_csv(const std::string& path, bool id_column = false) {
  auto in = detail::open_in(path);
  return read_items_csv(in, id_column);
}

inline void write_items_csv(std::ostream& out, const ItemMatrix& X) {
  for (Eigen::Index a = 0; a < X.rows(); ++a) {
    for (Eigen::Index k = 0; k < X.cols(); ++k) {
      if (k) out << ',';
      out << detail::format_double(X(a, k));
    }
    out << '\n';
  }
}

inline void write_items_csv(const std::string& path, const ItemMatrix& X) {
  auto out = detail::open_out(path);
  write_items_csv(out, X);
}

/// Rows "h,i,j,y": 0-based item indices and a label in {-1, 1}.
inline TripletSet read_triplets_csv(std::istream& in) {
  TripletSet ts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    long long v[4];
    bool ok = f.size() == 4;
    for (std::size_t k = 0; k < 4 && ok; ++k) ok = detail::parse_long(f[k], v[k]);
    if (!ok) {
      if (ts.empty() && lineno == 1) continue;  // header
      throw InputError("triplets csv line " + std::to_string(lineno) + ": expected 'h,i,j,y'");
    }
    if (v[0] < 0 || v[1] < 0 || v[2] < 0) {
      throw InputError("triplets csv line " + std::to_string(lineno) + ": negative index");
    }
    if (v[3] != 1 && v[3] != -1) {
      throw InputError("triplets csv line " + std::to_string(lineno) + ": label must be -1 or 1");
    }
    ts.push_back(Triplet{static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]),
                         static_cast<std::size_t>(v[2]), static_cast<int>(v[3])});
  }
  return ts;
}

inline TripletSet read_triplets_csv(const std::string& path) {
  auto in = detail::open_in(path);
  return read_triplets_csv(in);
}

inline void write_triplets_csv(std::ostream& out, const TripletSet& ts) {
  for (const auto& t : ts) out << t.h << ',' << t.i << ',' << t.j << ',' << t.y << '\n';
}

inline void write_triplets_csv(const std::string& path, const TripletSet& ts) {
  auto out = detail::open_out(path);
  write_triplets_csv(out, ts);
}

// ---------------------------------------------------------------------------
// JSON

inline json matrix_to_json(const Eigen::MatrixXd& M) {
  json data = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r)
    for (Eigen::Index c = 0; c < M.cols(); ++c) data.push_back(M(r, c));
  return {{"rows", M.rows()}, {"cols", M.cols()}, {"data", std::move(data)}};
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw InputError("matrix json: data length does not match rows*cols");
  }
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
  return M;
}

inline json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json kernel_to_json(const Kernel& k) {
  json j = {{"family", std::string(to_string(k.family()))}};
  switch (k.family()) {
    case KernelFamily::Linear: break;
    case KernelFamily::Gaussian: j["sigma"] = k.sigma(); break;
    case KernelFamily::Sigmoid: j["c"] = k.c(); j["alpha"] = k.alpha(); break;
    case KernelFamily::Polynomial: j["c"] = k.c(); j["p"] = k.degree(); break;
    case KernelFamily::Laplacian: j["alpha"] = k.alpha(); break;
  }
  return j;
}

inline Kernel kernel_from_json(const json& j) {
  try {
    switch (kernel_family_from_string(j.at("family").get<std::string>())) {
      case KernelFamily::Linear: return Kernel::linear();
      case KernelFamily::Gaussian: return Kernel::gaussian(j.value("sigma", 1.0));
      case KernelFamily::Sigmoid: return Kernel::sigmoid(j.value("c", 1.0), j.value("alpha", 1.0));
      case KernelFamily::Polynomial: return Kernel::polynomial(j.value("c", 1.0), j.value("p", 2));
      case KernelFamily::Laplacian: return Kernel::laplacian(j.value("alpha", 1.0));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("kernel descriptor: ") + e.what());
  }
  throw InputError("kernel descriptor: unknown family");
}

inline json kpca_to_json(const KpcaModel& m) {
  return {{"kernel", kernel_to_json(m.kernel)},
          {"mode", m.mode == KpcaMode::Exact ? "exact" : "nystrom"},
          {"centering", m.centering == OutOfSampleCentering::Consistent ? "consistent" : "none"},
          {"A", matrix_to_json(m.A)},
          {"eigenvalues", vector_to_json(m.eigenvalues)},
          {"row_means", vector_to_json(m.row_means)},
          {"grand_mean", m.grand_mean},
          {"landmark_indices", m.landmark_indices},
          {"train_items", matrix_to_json(m.train_items)},
          {"negative_eigenvalues", m.negative_eigenvalues},
          {"dropped_trace_share", m.dropped_trace_share}};
}

inline KpcaModel kpca_from_json(const json& j) {
  try {
    KpcaModel m;
    m.kernel = kernel_from_json(j.at("kernel"));
    m.mode = j.at("mode").get<std::string>() == "nystrom" ? KpcaMode::Nystrom : KpcaMode::Exact;
    m.centering = j.value("centering", std::string("consistent")) == "none" ? OutOfSampleCentering::None
                                                                             : OutOfSampleCentering::Consistent;
    m.A = matrix_from_json(j.at("A"));
    m.eigenvalues = vector_from_json(j.at("eigenvalues"));
    m.row_means = vector_from_json(j.at("row_means"));
    m.grand_mean = j.at("grand_mean").get<double>();
    m.landmark_indices = j.value("landmark_indices", std::vector<std::size_t>{});
    m.train_items = matrix_from_json(j.at("train_items"));
    m.negative_eigenvalues = j.value("negative_eigenvalues", 0);
    m.dropped_trace_share = j.value("dropped_trace_share", 0.0);
    if (m.A.rows() != m.train_items.rows() || m.row_means.size() != m.train_items.rows() ||
        m.eigenvalues.size() != m.A.cols()) {
      throw InputError("kpca model json: inconsistent dimensions");
    }
    return m;
  } catch (const json::exception& e) {
    throw InputError(std::string("kpca model json: ") + e.what());
  }
}

inline json constraint_to_json(const ConstraintSpec& c) {
  return {{"kind", std::string(to_string(c.kind))}, {"lambda", c.lambda}};
}

inline ConstraintSpec constraint_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "frobenius") return ConstraintSpec::frobenius(j.at("lambda").get<double>());
  if (kind == "nuclear") return ConstraintSpec::nuclear(j.at("lambda").get<double>());
  throw InputError("constraint kind must be 'frobenius' or 'nuclear'");
}

inline json solver_config_to_json(const SolverConfig& c) {
  return {{"max_iters", c.max_iters},           {"eta0", c.eta0},
          {"step", std::string(to_string(c.step))}, {"stop_tolerance", c.stop_tolerance},
          {"stop_window", c.stop_window},       {"seed", c.seed}};
}

inline SolverConfig solver_config_from_json(const json& j, SolverConfig c = {}) {
  c.max_iters = j.value("max_iters", c.max_iters);
  c.eta0 = j.value("eta0", c.eta0);
  if (j.contains("step")) c.step = step_rule_from_string(j.at("step").get<std::string>());
  c.stop_tolerance = j.value("stop_tolerance", c.stop_tolerance);
  c.stop_window = j.value("stop_window", c.stop_window);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

inline json solve_report_to_json(const SolveReport& r) {
  return {{"M", matrix_to_json(r.metric.M)},
          {"best_risk", r.best_risk},
          {"best_iteration", r.best_iteration},
          {"iterations", r.iterations},
          {"stopped_early", r.stopped_early},
          {"objective_trace", r.objective_trace},
          {"violation_trace", r.violation_trace},
          {"wall_seconds", r.wall_seconds},
          {"loss", std::string(to_string(r.loss))},
          {"constraint", constraint_to_json(r.constraint)},
          {"config", solver_config_to_json(r.config)},
          {"seed", r.config.seed}};
}

inline json spiral_to_json(const SpiralOracle& o) {
  const auto& p = o.params();
  return {{"type", "spiral"}, {"a", p.a}, {"b", p.b}, {"theta_min", p.theta_min}, {"theta_max", p.theta_max}};
}

inline json rkhs_oracle_to_json(const LowRankRkhsOracle& o) {
  return {{"type", "rkhs"},
          {"kernel", kernel_to_json(o.kernel)},
          {"rank", o.rank},
          {"landmarks", matrix_to_json(o.landmarks)},
          {"G", matrix_to_json(o.G)}};
}

inline LowRankRkhsOracle rkhs_oracle_from_json(const json& j) {
  LowRankRkhsOracle o;
  o.kernel = kernel_from_json(j.at("kernel"));
  o.rank = j.at("rank").get<int>();
  o.landmarks = matrix_from_json(j.at("landmarks"));
  o.G = matrix_from_json(j.at("G"));
  return o;
}

inline json metric_model_to_json(const MetricModel& m) {
  return {{"kpca", kpca_to_json(m.kpca)}, {"M", matrix_to_json(m.metric.M)}};
}

inline MetricModel metric_model_from_json(const json& j) {
  try {
    KpcaModel kpca = kpca_from_json(j.at("kpca"));
    MetricMatrix metric = certify_metric(matrix_from_json(j.at("M")));
    return make_metric_model(std::move(kpca), std::move(metric));
  } catch (const json::exception& e) {
    throw InputError(std::string("model json: ") + e.what());
  }
}

inline json read_json_file(const std::string& path) {
  auto in = detail::open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("'" + path + "': " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  auto out = detail::open_out(path);
  out << j.dump(2) << '\n';
}

}  // namespace kmetric
