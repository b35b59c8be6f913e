#pragma once

// JSON configuration: schedules, potentials, samplers, training runs and
// experiment specs.

#include <cstdint>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgm/errors.hpp"
#include "pgm/potentials.hpp"
#include "pgm/proxnet.hpp"
#include "pgm/random.hpp"
#include "pgm/samplers.hpp"
#include "pgm/schedule.hpp"

namespace pgm {

using Json = nlohmann::json;

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

namespace detail {

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

template <class T>
T require(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw ConfigError(std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

inline Matrix matrix_from(const Json& j, const char* what) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw ConfigError(std::string(what) + ": empty matrix");
  Matrix M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw ConfigError(std::string(what) + ": ragged matrix");
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
  }
  return M;
}

inline Vector vector_from(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline double polynomial(const std::vector<double>& c, double t) {
  double v = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * t + *it;
  return v;
}

}  // namespace detail

// "exp(10t-8)", "exp(10*t - 8)", "exp(2t)": returns (slope, offset).
inline std::pair<double, double> parse_exp_linear(const std::string& text) {
  static const std::regex re(
      R"(^\s*exp\s*\(\s*([+-]?\d*\.?\d+(?:[eE][+-]?\d+)?)?\s*\*?\s*t\s*(?:([+-])\s*(\d*\.?\d+(?:[eE][+-]?\d+)?))?\s*\)\s*$)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) {
    throw ConfigError("schedule: cannot parse lambda expression '" + text +
                      "' (expected exp(a*t + b))");
  }
  const double slope = m[1].matched ? std::stod(m[1].str()) : 1.0;
  double offset = 0.0;
  if (m[3].matched) offset = (m[2].str() == "-" ? -1.0 : 1.0) * std::stod(m[3].str());
  return {slope, offset};
}

// {"kind": "ve", "T": 1, "K": 100, "lambda": "exp(10t-8)"}
// {"kind": "ve", "T": 1, "K": 100, "lambda": {"t": [...], "lambda": [...]}}
// {"kind": "vp", "T": 1, "K": 100, "beta_min": 0.1, "beta_max": 20}
// {"kind": "custom", "T": 1, "K": 100, "drift": [0, -0.5], "diffusion2": [0, 1]}
//   (polynomial coefficients in t, lowest order first)
inline Schedule schedule_from_json(const Json& j) {
  const auto kind = detail::get_or<std::string>(j, "kind", "ve");
  const double T = detail::get_or<double>(j, "T", 1.0);
  const int K = detail::get_or<int>(j, "K", 100);
  if (kind == "ve") {
    if (!j.contains("lambda")) return Schedule::ve_exp_linear(10.0, -8.0, T, K);
    const Json& lj = j.at("lambda");
    if (lj.is_string()) {
      const auto [slope, offset] = parse_exp_linear(lj.get<std::string>());
      return Schedule::ve_exp_linear(slope, offset, T, K);
    }
    auto ts = detail::require<std::vector<double>>(lj, "t");
    auto ls = detail::require<std::vector<double>>(lj, "lambda");
    if (!ts.empty() && ts.back() != T && j.contains("T")) {
      throw ConfigError("schedule: tabulated lambda must end at T");
    }
    return Schedule::ve_tabulated(std::move(ts), std::move(ls), K);
  }
  if (kind == "vp") {
    return Schedule::vp_linear(detail::get_or<double>(j, "beta_min", 0.1),
                               detail::get_or<double>(j, "beta_max", 20.0), T, K);
  }
  if (kind == "custom") {
    const auto a = detail::require<std::vector<double>>(j, "drift");
    const auto b2 = detail::require<std::vector<double>>(j, "diffusion2");
    return Schedule::custom([a](double t) { return detail::polynomial(a, t); },
                            [b2](double t) { return detail::polynomial(b2, t); }, T, K,
                            detail::get_or<int>(j, "panels_per_cell", 1024));
  }
  throw ConfigError("schedule: unknown kind '" + kind + "'");
}

// Random quadratic 1/2 x^T A x + b^T x: A = Q diag(e) Q^T with log-uniform
// eigenvalues in [eig_lo, eig_hi] and a random rotation Q, b uniform in
// [b_lo, b_hi]^d.
inline Smooth random_quadratic(std::size_t dim, std::uint64_t seed, double eig_lo = 0.5,
                               double eig_hi = 2.0, double b_lo = -1.0, double b_hi = 1.0) {
  Rng rng(seed, 0xa11ce);
  const auto d = static_cast<Eigen::Index>(dim);
  Vector eig(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    eig[i] = std::exp(rng.uniform(std::log(eig_lo), std::log(eig_hi)));
  }
  Matrix G(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) G(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(G);
  const Matrix Q = qr.householderQ();
  Matrix A = Q * eig.asDiagonal() * Q.transpose();
  A = 0.5 * (A + A.transpose());
  Vector b(d);
  for (Eigen::Index i = 0; i < d; ++i) b[i] = rng.uniform(b_lo, b_hi);
  return Smooth::quadratic(A, b);
}

inline Smooth smooth_from_json(const Json& j) {
  const auto kind = detail::require<std::string>(j, "kind");
  if (kind == "quadratic") {
    return Smooth::quadratic(detail::matrix_from(j.at("A"), "f.A"), detail::vector_from(j.at("b")));
  }
  if (kind == "half_square") {
    return Smooth::half_square(detail::get_or<std::size_t>(j, "dim", 1));
  }
  if (kind == "pseudo_huber") {
    return Smooth::pseudo_huber(detail::get_or<double>(j, "delta", 1.0),
                                detail::vector_from(j.at("center")),
                                detail::get_or<double>(j, "ridge", 0.0));
  }
  if (kind == "random_quadratic") {
    return random_quadratic(detail::get_or<std::size_t>(j, "dim", 2),
                            detail::get_or<std::uint64_t>(j, "seed", 0),
                            detail::get_or<double>(j, "eig_lo", 0.5),
                            detail::get_or<double>(j, "eig_hi", 2.0),
                            detail::get_or<double>(j, "b_lo", -1.0),
                            detail::get_or<double>(j, "b_hi", 1.0));
  }
  throw ConfigError("f: unknown kind '" + kind + "'");
}

inline ProxFriendly prox_friendly_from_json(const Json& j, std::size_t dim) {
  const auto kind = detail::require<std::string>(j, "kind");
  dim = detail::get_or<std::size_t>(j, "dim", dim);
  if (kind == "zero") return ProxFriendly::zero(dim);
  if (kind == "interval") {
    return ProxFriendly::interval(dim, detail::get_or<double>(j, "lo", -1.0),
                                  detail::get_or<double>(j, "hi", 1.0));
  }
  if (kind == "ball") return ProxFriendly::ball(dim, detail::get_or<double>(j, "r", 1.0));
  if (kind == "l1") return ProxFriendly::l1(dim, detail::get_or<double>(j, "weight", 1.0));
  if (kind == "quadratic") {
    return ProxFriendly::quadratic(detail::matrix_from(j.at("A"), "g.A"),
                                   detail::vector_from(j.at("b")));
  }
  throw ConfigError("g: unknown kind '" + kind + "'");
}

// {"f": {...}, "g": {...}, "beta": 10}
inline Composite composite_from_json(const Json& j) {
  const Smooth f = smooth_from_json(j.at("f"));
  const ProxFriendly g = j.contains("g") ? prox_friendly_from_json(j.at("g"), f.dim())
                                         : ProxFriendly::zero(f.dim());
  return Composite(f, g, detail::get_or<double>(j, "beta", 1.0));
}

inline SamplerKind sampler_kind_from_string(const std::string& s) {
  for (auto k : {SamplerKind::pgm, SamplerKind::pgm_em, SamplerKind::pula,
                 SamplerKind::prox_point_ode, SamplerKind::projected_diffusion,
                 SamplerKind::analytic_score_sde}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("sampler: unknown kind '" + s + "'");
}

// Sampler fields on top of `base`: kind, chains, seed, threads, prox
// ("analytic" | "joint_exact" | {"learned": "params.json"}), zero_noise,
// keep_trajectories, delta_L, lambda, n_iters, t_stop, quadrature_panels.
inline SamplerConfig sampler_from_json(const Json& j, SamplerConfig base = {}) {
  SamplerConfig c = std::move(base);
  if (j.contains("kind")) c.kind = sampler_kind_from_string(j.at("kind").get<std::string>());
  c.chains = detail::get_or<std::size_t>(j, "chains", c.chains);
  c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed);
  c.threads = detail::get_or<std::size_t>(j, "threads", c.threads);
  c.zero_noise = detail::get_or<bool>(j, "zero_noise", c.zero_noise);
  c.keep_trajectories = detail::get_or<bool>(j, "keep_trajectories", c.keep_trajectories);
  c.delta_L = detail::get_or<double>(j, "delta_L", c.delta_L);
  c.lambda_fixed = detail::get_or<double>(j, "lambda", c.lambda_fixed);
  c.n_iters = detail::get_or<std::size_t>(j, "n_iters", c.n_iters);
  c.t_stop = detail::get_or<double>(j, "t_stop", c.t_stop);
  c.quadrature.panels = detail::get_or<std::size_t>(j, "quadrature_panels", c.quadrature.panels);
  if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"));
  if (j.contains("K")) c.schedule = c.schedule.with_steps(j.at("K").get<int>());
  if (j.contains("prox")) {
    const Json& p = j.at("prox");
    if (p.is_string()) {
      const auto s = p.get<std::string>();
      if (s == "analytic") {
        c.prox = ProxSource::analytic();
      } else if (s == "joint_exact") {
        c.prox = ProxSource::joint_exact();
      } else {
        throw ConfigError("sampler: unknown prox source '" + s + "'");
      }
    } else {
      c.prox = ProxSource::learned(load_params(detail::require<std::string>(p, "learned")));
    }
  }
  if (c.kind == SamplerKind::pula && (!(c.delta_L > 0.0) || !(c.lambda_fixed > 0.0))) {
    throw ConfigError("sampler: pula needs delta_L > 0 and lambda > 0");
  }
  return c;
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.epochs = detail::get_or<std::size_t>(j, "epochs", c.epochs);
  c.realizations = detail::get_or<std::size_t>(j, "realizations", c.realizations);
  c.batch_size = detail::get_or<std::size_t>(j, "batch_size", c.batch_size);
  c.learning_rate = detail::get_or<double>(j, "learning_rate", c.learning_rate);
  c.momentum = detail::get_or<double>(j, "momentum", c.momentum);
  c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed);
  c.hidden = detail::get_or<std::size_t>(j, "hidden", c.hidden);
  c.skip = detail::get_or<bool>(j, "skip", c.skip);
  c.lambda_input_scale = detail::get_or<double>(j, "lambda_input_scale", c.lambda_input_scale);
  c.zeta_start = detail::get_or<double>(j, "zeta_start", c.zeta_start);
  c.zeta_min = detail::get_or<double>(j, "zeta_min", c.zeta_min);
  c.zeta_hold = detail::get_or<double>(j, "zeta_hold", c.zeta_hold);
  c.normalize_lr = detail::get_or<bool>(j, "normalize_lr", c.normalize_lr);
  c.average_hold = detail::get_or<bool>(j, "average_hold", c.average_hold);
  c.optimizer = detail::get_or<std::string>(j, "optimizer", c.optimizer);
  c.cosine_decay = detail::get_or<bool>(j, "cosine_decay", c.cosine_decay);
  c.validate();
  return c;
}

}  // namespace pgm
