#pragma once

// Experiment runner: every (sampler entry, seed) cell is sampled, scored and
// written to <out>/<experiment>/<label>/<seed>/samples.csv; the experiment
// root gets summary.csv and report.json.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pgm/config.hpp"
#include "pgm/errors.hpp"
#include "pgm/oracles.hpp"
#include "pgm/potentials.hpp"
#include "pgm/samplers.hpp"
#include "pgm/schedule.hpp"

#ifndef PGM_VERSION
#define PGM_VERSION "0.1.0"
#endif

namespace pgm {

struct ExperimentSpec {
  std::string name;
  Json potential;
  Json schedule;
  Json samplers = Json::array();  // entries: sampler fields plus optional label, K, beta
  std::vector<std::string> metrics;
  std::vector<std::uint64_t> seeds{0};
  std::size_t chains = 1000;
  std::size_t hist_bins = 50;  // for mode / edge_ratio
};

inline ExperimentSpec experiment_from_json(const Json& j) {
  ExperimentSpec s;
  s.name = detail::require<std::string>(j, "name");
  s.potential = j.at("potential");
  s.schedule = j.value("schedule", Json::object());
  s.samplers = j.value("samplers", Json::array());
  if (!s.samplers.is_array()) throw ConfigError("experiment: 'samplers' must be an array");
  s.metrics = detail::get_or<std::vector<std::string>>(j, "metrics", {});
  s.seeds = detail::get_or<std::vector<std::uint64_t>>(j, "seeds", s.seeds);
  if (s.seeds.empty()) throw ConfigError("experiment: seeds must be nonempty");
  s.chains = detail::get_or<std::size_t>(j, "chains", s.chains);
  s.hist_bins = detail::get_or<std::size_t>(j, "hist_bins", s.hist_bins);
  static const std::set<std::string> known{"feasibility", "optimality_gap", "mode",
                                           "edge_ratio", "w1", "mean", "std"};
  for (const auto& m : s.metrics) {
    if (!known.count(m)) throw ConfigError("experiment: unknown metric '" + m + "'");
  }
  return s;
}

inline Json to_json(const ExperimentSpec& s) {
  return {{"name", s.name},       {"potential", s.potential}, {"schedule", s.schedule},
          {"samplers", s.samplers}, {"metrics", s.metrics},   {"seeds", s.seeds},
          {"chains", s.chains},   {"hist_bins", s.hist_bins}};
}

// Forward time at which lambda(t) = exp(slope t + offset) equals `lambda`.
inline double time_at_lambda(double slope, double offset, double lambda) {
  return (std::log(lambda) - offset) / slope;
}

inline std::vector<std::string> builtin_experiment_names() {
  return {"truncated-normal", "table1-feasibility", "table2-beta-sweep", "w1-vs-K"};
}

// The toy studies. Tables 1 and 2 use the random instance d = 2, A with
// log-uniform eigenvalues in [0.5, 2] under a random rotation, b uniform in
// [-1, 1]^2, r = 1, instance seed 0.
inline ExperimentSpec builtin_experiment(const std::string& name) {
  const Json ve = {{"kind", "ve"}, {"T", 1.0}, {"K", 100}, {"lambda", "exp(10t-8)"}};
  const Json random_qp = {
      {"f", {{"kind", "random_quadratic"}, {"dim", 2}, {"seed", 0}}},
      {"g", {{"kind", "ball"}, {"r", 1.0}}},
      {"beta", 10.0}};
  Json j;
  if (name == "truncated-normal") {
    // Baselines stop where lambda = 1e-2 (noise standard deviation 0.1).
    const double t_stop = time_at_lambda(10.0, -8.0, 1e-2);
    j = {{"name", name},
         {"potential",
          {{"f", {{"kind", "half_square"}, {"dim", 1}}},
           {"g", {{"kind", "interval"}, {"lo", -1.0}, {"hi", 1.0}}},
           {"beta", 10.0}}},
         {"schedule", ve},
         {"samplers",
          {{{"label", "pgm"}, {"kind", "pgm"}},
           {{"label", "pgm_em"}, {"kind", "pgm_em"}},
           {{"label", "pula"}, {"kind", "pula"}, {"delta_L", 0.005}, {"lambda", 0.01}, {"n_iters", 100}},
           {{"label", "analytic_score_sde"}, {"kind", "analytic_score_sde"}, {"t_stop", t_stop}},
           {{"label", "projected_diffusion"}, {"kind", "projected_diffusion"}, {"t_stop", t_stop}}}},
         {"metrics", {"feasibility", "mode", "edge_ratio", "w1", "mean", "std"}},
         {"seeds", {0}},
         {"chains", 10000}};
  } else if (name == "table1-feasibility") {
    Json cells = Json::array();
    for (int K : {0, 1, 5, 10, 20}) {
      cells.push_back({{"label", "pgm-K" + std::to_string(K)}, {"kind", "pgm"}, {"K", K}});
    }
    j = {{"name", name}, {"potential", random_qp}, {"schedule", ve}, {"samplers", cells},
         {"metrics", {"feasibility"}}, {"seeds", {0}}, {"chains", 10000}};
  } else if (name == "table2-beta-sweep") {
    Json cells = Json::array();
    for (double beta : {0.0, 0.1, 1.0, 2.0, 10.0}) {
      char label[32];
      std::snprintf(label, sizeof label, "pgm-beta%g", beta);
      cells.push_back({{"label", label}, {"kind", "pgm"}, {"K", 10}, {"beta", beta}});
    }
    j = {{"name", name}, {"potential", random_qp}, {"schedule", ve}, {"samplers", cells},
         {"metrics", {"optimality_gap", "feasibility"}}, {"seeds", {0}}, {"chains", 10000}};
  } else if (name == "w1-vs-K") {
    Json cells = Json::array();
    for (int K : {10, 20, 40, 80, 160}) {
      cells.push_back({{"label", "pgm-K" + std::to_string(K)}, {"kind", "pgm"}, {"K", K},
                       {"prox", "joint_exact"}});
    }
    j = {{"name", name},
         {"potential", {{"f", {{"kind", "half_square"}, {"dim", 1}}}, {"g", {{"kind", "zero"}}}, {"beta", 1.0}}},
         {"schedule", ve}, {"samplers", cells}, {"metrics", {"w1"}}, {"seeds", {0}},
         {"chains", 10000}};
  } else {
    throw ConfigError("unknown built-in experiment '" + name + "'");
  }
  return experiment_from_json(j);
}

struct CellResult {
  std::string label;
  std::string sampler;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  double beta = 0.0;
  bool ok = true;
  std::string error;
  std::map<std::string, double> metrics;
  std::vector<std::string> notes;
  Matrix samples;
};

struct ExperimentReport {
  std::string name;
  std::vector<CellResult> cells;
  bool all_ok() const {
    return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok; });
  }
  const CellResult* find(const std::string& label, std::uint64_t seed = 0) const {
    for (const auto& c : cells) {
      if (c.label == label && c.seed == seed) return &c;
    }
    return nullptr;
  }
};

struct Histogram {
  double lo;
  double hi;
  std::vector<std::size_t> counts;
  double width() const { return (hi - lo) / static_cast<double>(counts.size()); }
};

// Samples outside [lo, hi] are dropped.
inline Histogram histogram(const std::vector<double>& xs, double lo, double hi, std::size_t bins) {
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
  for (double x : xs) {
    if (x < lo || x > hi) continue;
    auto i = static_cast<std::size_t>((x - lo) / h.width());
    h.counts[std::min(i, bins - 1)] += 1;
  }
  return h;
}

// Centre of the fullest bin.
inline double histogram_mode(const Histogram& h) {
  const auto it = std::max_element(h.counts.begin(), h.counts.end());
  const auto i = static_cast<double>(it - h.counts.begin());
  return h.lo + (i + 0.5) * h.width();
}

// Mean count of the two outermost bins over the mean count of their inner
// neighbours; well above 1 means mass piles up on the boundary.
inline double edge_ratio(const Histogram& h) {
  const std::size_t n = h.counts.size();
  if (n < 4) return 0.0;
  const double outer = 0.5 * static_cast<double>(h.counts[0] + h.counts[n - 1]);
  const double inner = 0.5 * static_cast<double>(h.counts[1] + h.counts[n - 2]);
  return inner > 0.0 ? outer / inner : (outer > 0.0 ? kInf : 0.0);
}

// Quantile function of exp(-U) for a 1D composite: closed form when U is
// quadratic, otherwise tabulated on dom(g).
inline std::function<double(double)> reference_quantile(const Composite& c) {
  require_dims(1, c.dim(), "reference_quantile");
  const auto* q = c.f().as_quadratic();
  const auto gk = c.g().kind();
  if (q && (gk == ProxKind::zero || gk == ProxKind::quadratic)) {
    double precision = c.beta() * q->A(0, 0);
    double linear = c.beta() * q->b[0];
    if (gk == ProxKind::quadratic) {
      precision += c.g().A()(0, 0);
      linear += c.g().b()[0];
    }
    if (!(precision > 0.0)) throw OracleError("reference: improper Gaussian target");
    return normal_quantile(-linear / precision, 1.0 / std::sqrt(precision));
  }
  if (!c.g().is_compact()) throw OracleError("reference: W1 needs a quadratic or compact target");
  const auto d = density_of(c);
  return quantile_from_density(d, d.lo, d.hi);
}

namespace detail {

inline std::vector<double> column(const Matrix& m, Eigen::Index j) {
  return std::vector<double>(m.col(j).data(), m.col(j).data() + m.rows());
}

inline std::pair<double, double> histogram_range(const Composite& c, const std::vector<double>& xs) {
  if (c.g().kind() == ProxKind::interval) return {c.g().lo(), c.g().hi()};
  if (c.g().kind() == ProxKind::ball) return {-c.g().radius(), c.g().radius()};
  const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
  return {*mn, *mx > *mn ? *mx : *mn + 1.0};
}

}  // namespace detail

inline void compute_metrics(CellResult& cell, const Composite& c, const ExperimentSpec& spec) {
  const Matrix& X = cell.samples;
  for (const auto& m : spec.metrics) {
    if (m == "feasibility") {
      cell.metrics[m] = metrics(X, c).feasibility;
    } else if (m == "optimality_gap") {
      const Vector xstar = constrained_minimizer(c.f(), c.g());
      cell.metrics[m] = *metrics(X, c, xstar).optimality_gap;
    } else if (c.dim() != 1) {
      cell.notes.push_back("metric " + m + " is defined for d = 1 only; skipped");
    } else {
      const auto xs = detail::column(X, 0);
      if (m == "mode" || m == "edge_ratio") {
        const auto [lo, hi] = detail::histogram_range(c, xs);
        const auto h = histogram(xs, lo, hi, spec.hist_bins);
        cell.metrics[m] = m == "mode" ? histogram_mode(h) : edge_ratio(h);
      } else if (m == "w1") {
        cell.metrics[m] = empirical_w1(xs, reference_quantile(c));
      } else if (m == "mean") {
        cell.metrics[m] = X.col(0).mean();
      } else if (m == "std") {
        const double mean = X.col(0).mean();
        cell.metrics[m] = std::sqrt((X.col(0).array() - mean).square().sum() /
                                    static_cast<double>(std::max<Eigen::Index>(X.rows() - 1, 1)));
      }
    }
  }
}

inline void write_samples_csv(const Matrix& X, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  for (Eigen::Index j = 0; j < X.cols(); ++j) out << (j ? "," : "") << "x" << j;
  out << '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", X(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

// One row per (coordinate, bin).
inline void write_histogram_csv(const Matrix& X, const Composite& c, std::size_t bins,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "coord,bin_lo,bin_hi,count,density\n";
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const auto xs = detail::column(X, j);
    const auto [lo, hi] = detail::histogram_range(c, xs);
    const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
    const double a = std::min(lo, *mn);
    const double b = std::max(hi, *mx);
    const auto h = histogram(xs, a, b, bins);
    for (std::size_t i = 0; i < bins; ++i) {
      const double l = a + h.width() * static_cast<double>(i);
      out << j << ',' << l << ',' << l + h.width() << ',' << h.counts[i] << ','
          << static_cast<double>(h.counts[i]) / (static_cast<double>(xs.size()) * h.width()) << '\n';
    }
  }
}

inline Json batch_metadata(const SampleBatch& b, std::size_t dim) {
  return {{"sampler", b.sampler},   {"prox_source", b.prox_source}, {"seed", b.seed},
          {"steps", b.steps},       {"chains", b.samples.rows()},   {"dim", dim},
          {"overshoot_steps", b.overshoot_steps}, {"notes", b.notes}, {"version", PGM_VERSION}};
}

struct RunOptions {
  std::string out_dir;      // empty: nothing is written
  std::size_t emit_hist = 0;  // histogram bins, 0 = none
  std::size_t threads = 1;
  std::optional<std::size_t> chains;  // overrides the spec
  std::optional<std::uint64_t> seed;  // replaces the seed list
  bool write_samples = true;
};

inline CellResult run_cell(const ExperimentSpec& spec, const Json& entry, std::uint64_t seed,
                           std::size_t chains) {
  CellResult cell;
  cell.seed = seed;
  cell.sampler = entry.value("kind", std::string("pgm"));
  cell.label = entry.value("label", cell.sampler);
  try {
    Composite c = composite_from_json(spec.potential);
    if (entry.contains("beta")) c = c.with_beta(entry.at("beta").get<double>());
    cell.beta = c.beta();
    SamplerConfig base;
    base.schedule = schedule_from_json(spec.schedule);
    base.chains = chains;
    base.seed = seed;
    Json fields = entry;
    fields.erase("label");
    fields.erase("beta");
    fields.erase("seed");
    fields.erase("chains");
    const SamplerConfig cfg = sampler_from_json(fields, base);
    const SampleBatch batch = sample(cfg, c);
    cell.steps = batch.steps;
    cell.notes = batch.notes;
    cell.samples = batch.samples;
    compute_metrics(cell, c, spec);
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.error = e.what();
  }
  return cell;
}

inline Json to_json(const ExperimentReport& r, const ExperimentSpec& spec) {
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    Json jc = {{"label", c.label}, {"sampler", c.sampler}, {"seed", c.seed},
               {"steps", c.steps}, {"beta", c.beta},       {"status", c.ok ? "ok" : "failed"},
               {"metrics", c.metrics}, {"notes", c.notes}};
    if (!c.ok) jc["error"] = c.error;
    cells.push_back(jc);
  }
  return {{"header", {{"experiment", r.name}, {"version", PGM_VERSION}, {"spec", to_json(spec)}}},
          {"cells", cells},
          {"status", r.all_ok() ? "ok" : "failed"}};
}

inline void write_summary_csv(const ExperimentReport& r, const std::string& path) {
  std::set<std::string> names;
  for (const auto& c : r.cells) {
    for (const auto& [k, v] : c.metrics) names.insert(k);
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "experiment,label,sampler,seed,steps,beta,status";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  char buf[32];
  for (const auto& c : r.cells) {
    out << r.name << ',' << c.label << ',' << c.sampler << ',' << c.seed << ',' << c.steps << ','
        << c.beta << ',' << (c.ok ? "ok" : "failed");
    for (const auto& n : names) {
      out << ',';
      if (auto it = c.metrics.find(n); it != c.metrics.end()) {
        std::snprintf(buf, sizeof buf, "%.10g", it->second);
        out << buf;
      }
    }
    out << '\n';
  }
}

inline ExperimentReport run_experiment(const ExperimentSpec& spec, const RunOptions& opt = {}) {
  ExperimentReport rep;
  rep.name = spec.name;
  const std::size_t chains = opt.chains.value_or(spec.chains);
  const std::vector<std::uint64_t> seeds =
      opt.seed ? std::vector<std::uint64_t>{*opt.seed} : spec.seeds;
  std::vector<std::pair<std::size_t, std::uint64_t>> jobs;
  for (std::size_t i = 0; i < spec.samplers.size(); ++i) {
    for (auto s : seeds) jobs.emplace_back(i, s);
  }
  rep.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      rep.cells[i] = run_cell(spec, spec.samplers[jobs[i].first], jobs[i].second, chains);
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(opt.threads, jobs.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  if (!opt.out_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path root = fs::path(opt.out_dir) / spec.name;
    fs::create_directories(root);
    const Composite c = composite_from_json(spec.potential);
    for (auto& cell : rep.cells) {
      if (!cell.ok) continue;
      const fs::path dir = root / cell.label / std::to_string(cell.seed);
      fs::create_directories(dir);
      if (opt.write_samples) write_samples_csv(cell.samples, (dir / "samples.csv").string());
      if (opt.emit_hist > 0) {
        write_histogram_csv(cell.samples, c, opt.emit_hist, (dir / "histogram.csv").string());
      }
    }
    write_summary_csv(rep, (root / "summary.csv").string());
    std::ofstream(root / "report.json") << to_json(rep, spec).dump(2) << '\n';
  }
  return rep;
}

}  // namespace pgm
