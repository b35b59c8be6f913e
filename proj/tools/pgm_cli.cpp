// Command-line front end: train, sample, experiment, verify.
//
// Exit codes: 0 success, 1 usage or parse error, 2 run or experiment-cell
// failure, 3 verification failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pgm/config.hpp"
#include "pgm/experiments.hpp"
#include "pgm/proxnet.hpp"
#include "pgm/samplers.hpp"
#include "pgm/verify.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRunFailure = 2;
constexpr int kVerifyFailure = 3;

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> chains;
  std::size_t emit_hist = 0;
  std::size_t threads = 1;
};

int cmd_train(const Common& o) {
  const pgm::Json j = pgm::read_json_file(o.config);
  pgm::TrainConfig cfg = pgm::train_config_from_json(j);
  if (o.seed) cfg.seed = *o.seed;
  const pgm::Json prior_json = j.value("prior", pgm::Json{{"kind", "interval"}, {"dim", 1}});
  const pgm::ProxFriendly g =
      pgm::prox_friendly_from_json(prior_json, prior_json.value("dim", std::size_t{1}));
  const pgm::Schedule s = pgm::schedule_from_json(j.value("schedule", pgm::Json::object()));

  pgm::TrainResult res;
  int code = kOk;
  try {
    res = pgm::train(cfg, pgm::prior_sampler_for(g), s, g.dim());
  } catch (const pgm::TrainingError& e) {
    std::cerr << e.what() << "; writing last stable checkpoint\n";
    res.params = e.checkpoint;
    code = kRunFailure;
  }
  fs::create_directories(o.out);
  pgm::save_params(res.params, (fs::path(o.out) / "params.json").string());
  std::ofstream curve(fs::path(o.out) / "training_curve.csv");
  curve << "epoch,zeta,step,loss\n";
  for (const auto& r : res.curve) {
    curve << r.epoch << ',' << r.zeta << ',' << r.step << ',' << r.loss << '\n';
  }
  std::cout << "wrote " << (fs::path(o.out) / "params.json").string() << " (" << res.curve.size()
            << " epochs)\n";
  if (g.kind() == pgm::ProxKind::interval && g.dim() == 1) {
    const double err = pgm::clamp_error(res.params, g.lo(), g.hi(),
                                        {std::exp(-8.0), std::exp(-4.0), std::exp(-1.0)});
    std::cout << "mean |phi - clamp| over x in [-3, 3], lambda in {e^-8, e^-4, e^-1}: " << err << '\n';
  }
  return code;
}

int cmd_sample(const Common& o) {
  const pgm::Json j = pgm::read_json_file(o.config);
  const pgm::Composite c = pgm::composite_from_json(j.at("potential"));
  pgm::SamplerConfig base;
  base.schedule = pgm::schedule_from_json(j.value("schedule", pgm::Json::object()));
  base.chains = j.value("chains", base.chains);
  base.seed = j.value("seed", base.seed);
  base.threads = o.threads;
  pgm::SamplerConfig cfg = pgm::sampler_from_json(j.value("sampler", pgm::Json::object()), base);
  if (o.seed) cfg.seed = *o.seed;
  if (o.chains) cfg.chains = *o.chains;
  pgm::SampleBatch batch;
  try {
    batch = pgm::sample(cfg, c);
  } catch (const pgm::DivergenceError& e) {
    std::cerr << e.what() << '\n';
    return kRunFailure;
  } catch (const pgm::OracleError& e) {
    std::cerr << e.what() << '\n';
    return kRunFailure;
  }
  fs::create_directories(o.out);
  pgm::write_samples_csv(batch.samples, (fs::path(o.out) / "samples.csv").string());
  std::ofstream(fs::path(o.out) / "samples.json") << pgm::batch_metadata(batch, c.dim()).dump(2) << '\n';
  if (o.emit_hist > 0) {
    pgm::write_histogram_csv(batch.samples, c, o.emit_hist,
                             (fs::path(o.out) / "histogram.csv").string());
  }
  const auto m = pgm::metrics(batch.samples, c);
  std::cout << batch.sampler << ": " << batch.samples.rows() << " chains, " << batch.steps
            << " steps, feasibility " << m.feasibility << '\n';
  return kOk;
}

int cmd_experiment(const Common& o, const std::string& builtin) {
  if (builtin.empty() == o.config.empty()) {
    std::cerr << "experiment: give either a built-in name or --config\n";
    return kUsage;
  }
  const pgm::ExperimentSpec spec = builtin.empty()
                                       ? pgm::experiment_from_json(pgm::read_json_file(o.config))
                                       : pgm::builtin_experiment(builtin);
  pgm::RunOptions opt;
  opt.out_dir = o.out;
  opt.emit_hist = o.emit_hist;
  opt.threads = o.threads;
  opt.chains = o.chains;
  opt.seed = o.seed;
  const auto rep = pgm::run_experiment(spec, opt);
  for (const auto& cell : rep.cells) {
    std::cout << cell.label << " seed=" << cell.seed << (cell.ok ? " ok" : " FAILED");
    for (const auto& [k, v] : cell.metrics) std::cout << ' ' << k << '=' << v;
    if (!cell.ok) std::cout << " (" << cell.error << ')';
    std::cout << '\n';
  }
  std::cout << "report: " << (fs::path(o.out) / spec.name / "report.json").string() << '\n';
  return rep.all_ok() ? kOk : kRunFailure;
}

int cmd_verify(const Common& o) {
  pgm::VerifyOptions opt;
  if (o.seed) opt.seed = *o.seed;
  const auto rep = pgm::verify_all(opt);
  for (const auto& c : rep.checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " measured=" << c.measured
              << " threshold=" << c.threshold << '\n';
  }
  fs::create_directories(o.out);
  const auto path = fs::path(o.out) / "verify.json";
  std::ofstream(path) << pgm::to_json(rep).dump(2) << '\n';
  std::cout << "report: " << path.string() << '\n';
  return rep.passed() ? kOk : kVerifyFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Proximal generative modeling toolkit"};
  app.require_subcommand(1);
  Common o;
  std::string builtin;

  auto add_common = [&o](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", o.config, "JSON configuration file");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--chains", o.chains, "number of chains");
    sub->add_option("--emit-hist", o.emit_hist, "write histogram CSVs with this many bins");
    sub->add_option("--threads", o.threads, "worker threads");
  };
  auto* train = app.add_subcommand("train", "train a proximal network by Moreau score matching");
  add_common(train, true);
  auto* samp = app.add_subcommand("sample", "run a sampler");
  add_common(samp, true);
  auto* exp = app.add_subcommand("experiment", "run an experiment spec or a built-in study");
  add_common(exp, false);
  exp->add_option("name", builtin, "built-in experiment")
      ->check(CLI::IsMember(pgm::builtin_experiment_names()));
  auto* ver = app.add_subcommand("verify", "run the invariant suite");
  add_common(ver, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(o);
    if (*samp) return cmd_sample(o);
    if (*exp) return cmd_experiment(o, builtin);
    if (*ver) return cmd_verify(o);
  } catch (const pgm::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailure;
  }
  return kUsage;
}
