#pragma once

// Reverse-time samplers. Every chain owns an RNG stream derived from
// (seed, chain index); chains are processed in fixed blocks so the output does
// not depend on the number of worker threads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pgm/errors.hpp"
#include "pgm/oracles.hpp"
#include "pgm/potentials.hpp"
#include "pgm/proxnet.hpp"
#include "pgm/random.hpp"
#include "pgm/schedule.hpp"

namespace pgm {

enum class SamplerKind { pgm, pgm_em, pula, prox_point_ode, projected_diffusion, analytic_score_sde };

inline std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::pgm: return "pgm";
    case SamplerKind::pgm_em: return "pgm_em";
    case SamplerKind::pula: return "pula";
    case SamplerKind::prox_point_ode: return "prox_point_ode";
    case SamplerKind::projected_diffusion: return "projected_diffusion";
    case SamplerKind::analytic_score_sde: return "analytic_score_sde";
  }
  return "unknown";
}

enum class ProxSourceKind { analytic, learned, joint_exact };

inline std::string to_string(ProxSourceKind k) {
  switch (k) {
    case ProxSourceKind::analytic: return "analytic";
    case ProxSourceKind::learned: return "learned";
    case ProxSourceKind::joint_exact: return "joint_exact";
  }
  return "unknown";
}

// Where P_k comes from: the split prox with the closed-form prox of g
// (analytic), the split prox with the network in place of Prox_g (learned),
// or the exact prox of U (joint_exact).
struct ProxSource {
  ProxSourceKind kind = ProxSourceKind::analytic;
  std::shared_ptr<const ProxNetParams> net;

  static ProxSource analytic() { return {}; }
  static ProxSource joint_exact() { return {ProxSourceKind::joint_exact, nullptr}; }
  static ProxSource learned(ProxNetParams p) {
    return {ProxSourceKind::learned, std::make_shared<const ProxNetParams>(std::move(p))};
  }
};

struct SamplerConfig {
  SamplerKind kind = SamplerKind::pgm;
  Schedule schedule = Schedule::ve_exp_linear(10.0, -8.0, 1.0, 100);
  std::size_t chains = 1000;
  std::uint64_t seed = 0;
  ProxSource prox;
  bool keep_trajectories = false;
  bool zero_noise = false;  // force alpha3 = 0 in pgm
  std::size_t threads = 1;
  std::optional<Matrix> init;  // chains x d starting states

  // pula
  double delta_L = 0.0;
  double lambda_fixed = 0.0;
  std::size_t n_iters = 0;

  // score-based baselines: reverse process stops at forward time t_stop
  double t_stop = 0.0;
  QuadratureOptions quadrature{256, 512, 129, 257, 12.0, 80.0, false};
};

struct SampleBatch {
  Matrix samples;  // chains x d
  std::string sampler;
  std::string prox_source;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::vector<Matrix> trajectory;  // one chains x d matrix per step, optional
  std::size_t overshoot_steps = 0;  // Euler-Maruyama steps with gamma b^2 / sigma^2 >= 1
  std::vector<std::string> notes;
};

namespace detail {

inline constexpr Eigen::Index kBlock = 256;

// Prox of U at every column of Z, per the configured source.
inline Matrix prox_block(const ProxSource& src, const Composite& c, double lambda,
                         const Matrix& Z) {
  Matrix P(Z.rows(), Z.cols());
  switch (src.kind) {
    case ProxSourceKind::analytic:
      for (Eigen::Index j = 0; j < Z.cols(); ++j) P.col(j) = split_prox(c, lambda, Z.col(j));
      break;
    case ProxSourceKind::joint_exact:
      for (Eigen::Index j = 0; j < Z.cols(); ++j) P.col(j) = joint_prox(c, lambda, Z.col(j));
      break;
    case ProxSourceKind::learned: {
      if (!src.net) throw ConfigError("sampler: learned prox source without parameters");
      require_dims(c.dim(), src.net->dim(), "learned prox");
      Matrix Y(Z.rows(), Z.cols());
      for (Eigen::Index j = 0; j < Z.cols(); ++j) {
        Y.col(j) = Z.col(j) - c.beta() * lambda * c.f().grad(Z.col(j));
      }
      P = forward_batch(*src.net, Y, lambda);
      break;
    }
  }
  return P;
}

struct BlockState {
  Eigen::Index first = 0;
  Matrix X;  // d x n
  std::vector<Rng> rngs;
  std::vector<Matrix> trajectory;  // d x n per step
  std::size_t overshoot = 0;
};

inline Matrix noise(BlockState& b) {
  Matrix xi(b.X.rows(), b.X.cols());
  for (Eigen::Index j = 0; j < b.X.cols(); ++j) {
    xi.col(j) = b.rngs[static_cast<std::size_t>(j)].normal_vector(b.X.rows());
  }
  return xi;
}

inline void check_finite(const BlockState& b, const std::string& name, std::size_t step) {
  if (!b.X.allFinite()) throw DivergenceError(name, step);
}

// Runs `body` on every block of chains, using up to cfg.threads workers, and
// assembles the batch. Blocks are fixed-size so threading never changes results.
template <class Body>
SampleBatch run_blocks(const SamplerConfig& cfg, std::size_t dim, const std::string& name,
                       double init_var, Body body) {
  if (cfg.chains == 0) throw ConfigError(name + ": chains must be positive");
  const auto d = static_cast<Eigen::Index>(dim);
  const auto chains = static_cast<Eigen::Index>(cfg.chains);
  if (cfg.init && (cfg.init->rows() != chains || cfg.init->cols() != d)) {
    throw ShapeError(name + ": init must be chains x d");
  }
  const Eigen::Index nblocks = (chains + kBlock - 1) / kBlock;
  std::vector<BlockState> blocks(static_cast<std::size_t>(nblocks));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nblocks));
  std::atomic<Eigen::Index> next{0};

  auto worker = [&]() {
    for (;;) {
      const Eigen::Index bi = next.fetch_add(1);
      if (bi >= nblocks) return;
      auto& b = blocks[static_cast<std::size_t>(bi)];
      try {
        b.first = bi * kBlock;
        const Eigen::Index n = std::min(kBlock, chains - b.first);
        b.X.resize(d, n);
        b.rngs.reserve(static_cast<std::size_t>(n));
        for (Eigen::Index j = 0; j < n; ++j) {
          b.rngs.emplace_back(cfg.seed, static_cast<std::uint64_t>(b.first + j));
          if (cfg.init) {
            b.X.col(j) = cfg.init->row(b.first + j).transpose();
          } else {
            b.X.col(j) = std::sqrt(init_var) * b.rngs.back().normal_vector(d);
          }
        }
        body(b);
      } catch (...) {
        errors[static_cast<std::size_t>(bi)] = std::current_exception();
      }
    }
  };
  const std::size_t nthreads =
      std::max<std::size_t>(1, std::min<std::size_t>(cfg.threads, static_cast<std::size_t>(nblocks)));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  SampleBatch out;
  out.sampler = name;
  out.seed = cfg.seed;
  out.samples.resize(chains, d);
  const std::size_t steps = blocks.front().trajectory.size();
  out.trajectory.assign(steps, Matrix(chains, d));
  for (const auto& b : blocks) {
    out.samples.middleRows(b.first, b.X.cols()) = b.X.transpose();
    for (std::size_t k = 0; k < steps; ++k) {
      out.trajectory[k].middleRows(b.first, b.X.cols()) = b.trajectory[k].transpose();
    }
    out.overshoot_steps = std::max(out.overshoot_steps, b.overshoot);
  }
  return out;
}

}  // namespace detail

// x_{k+1} = alpha1 x_k + alpha2 P_k + alpha3 xi_k with
// P_k = Prox(x_k / mu(tau_k) - beta lambda(tau_k) grad f(x_k / mu(tau_k)), lambda(tau_k)).
inline SampleBatch pgm_sample(const SamplerConfig& cfg, const Composite& c) {
  const Schedule& s = cfg.schedule;
  const auto init = s.eval(s.tau(0));
  const bool noise_free = cfg.zero_noise || cfg.kind == SamplerKind::prox_point_ode;
  const std::string name = cfg.kind == SamplerKind::prox_point_ode ? "prox_point_ode" : "pgm";
  auto batch = detail::run_blocks(cfg, c.dim(), name, init.sigma2, [&](detail::BlockState& b) {
    for (std::size_t k = 0; k < s.steps(); ++k) {
      const auto from = s.eval(s.tau(k));
      const auto a = s.coefficients(k);
      const Matrix P = detail::prox_block(cfg.prox, c, from.lambda, b.X / from.mu);
      Matrix next = a.alpha1 * b.X + a.alpha2 * P;
      if (!noise_free) next += a.alpha3 * detail::noise(b);
      b.X = std::move(next);
      detail::check_finite(b, name, k);
      if (cfg.keep_trajectories) b.trajectory.push_back(b.X);
    }
  });
  batch.prox_source = to_string(cfg.prox.kind);
  batch.steps = s.steps();
  return batch;
}

// Noise-free recursion x_{k+1} = alpha1 x_k + alpha2 P_k.
inline SampleBatch prox_point_ode(const SamplerConfig& cfg, const Composite& c) {
  SamplerConfig ode = cfg;
  ode.kind = SamplerKind::prox_point_ode;
  return pgm_sample(ode, c);
}

// Euler-Maruyama on the reverse SDE with the Moreau score:
// x_{k+1} = (1 - g a - g b^2/sigma^2) x_k + g b^2 mu / sigma^2 P_k + sqrt(g) b xi_k,
// with a, b, mu, sigma evaluated at tau_k and g = t_{k+1} - t_k.
inline SampleBatch em_sample(const SamplerConfig& cfg, const Composite& c) {
  const Schedule& s = cfg.schedule;
  const auto init = s.eval(s.tau(0));
  auto batch = detail::run_blocks(cfg, c.dim(), "pgm_em", init.sigma2, [&](detail::BlockState& b) {
    for (std::size_t k = 0; k < s.steps(); ++k) {
      const double tau = s.tau(k);
      const auto v = s.eval(tau);
      if (v.sigma2 == 0.0) throw DomainError("pgm_em: sigma^2 = 0 on the grid");
      const double gamma = s.grid()[k + 1] - s.grid()[k];
      const double a = s.drift(tau);
      const double b2 = s.diffusion2(tau);
      const double ratio = gamma * b2 / v.sigma2;
      if (ratio >= 1.0) b.overshoot += 1;
      const Matrix P = detail::prox_block(cfg.prox, c, v.lambda, b.X / v.mu);
      Matrix next = (1.0 - gamma * a - ratio) * b.X + (ratio * v.mu) * P;
      if (!cfg.zero_noise) next += std::sqrt(gamma * b2) * detail::noise(b);
      b.X = std::move(next);
      detail::check_finite(b, "pgm_em", k);
      if (cfg.keep_trajectories) b.trajectory.push_back(b.X);
    }
  });
  batch.prox_source = to_string(cfg.prox.kind);
  batch.steps = s.steps();
  if (batch.overshoot_steps > 0) {
    batch.notes.push_back("step size overshoot: gamma b^2 / sigma^2 >= 1 on " +
                          std::to_string(batch.overshoot_steps) + " steps");
  }
  return batch;
}

// Langevin on the fixed-lambda Moreau envelope:
// x_{k+1} = x_k + delta (Prox_U^lambda(x_k) - x_k) / lambda + sqrt(2 delta) xi_k.
inline SampleBatch pula_sample(const SamplerConfig& cfg, const Composite& c, double delta_L,
                               double lambda_fixed, std::size_t n_iters) {
  if (!(delta_L > 0.0) || !(lambda_fixed > 0.0)) {
    throw DomainError("pula: need delta_L > 0 and lambda > 0");
  }
  const double init_var = cfg.schedule.eval(cfg.schedule.tau(0)).sigma2;
  auto batch = detail::run_blocks(cfg, c.dim(), "pula", init_var, [&](detail::BlockState& b) {
    const double drift = delta_L / lambda_fixed;
    const double scale = std::sqrt(2.0 * delta_L);
    for (std::size_t k = 0; k < n_iters; ++k) {
      const Matrix P = detail::prox_block(cfg.prox, c, lambda_fixed, b.X);
      Matrix next = b.X + drift * (P - b.X);
      if (!cfg.zero_noise) next += scale * detail::noise(b);
      b.X = std::move(next);
      detail::check_finite(b, "pula", k);
      if (cfg.keep_trajectories) b.trajectory.push_back(b.X);
    }
  });
  batch.prox_source = to_string(cfg.prox.kind);
  batch.steps = n_iters;
  return batch;
}

inline SampleBatch pula_sample(const SamplerConfig& cfg, const Composite& c) {
  return pula_sample(cfg, c, cfg.delta_L, cfg.lambda_fixed, cfg.n_iters);
}

// Score-based baselines on the reverse SDE, discretised with the same
// exponential-interpolation coefficients as pgm but with the posterior mean
// E[x0 | x_t] (Tweedie, computed by quadrature from the true Stein score) in
// place of the prox. The grid stops at forward time cfg.t_stop. The projected
// variant projects every iterate onto dom(g).
inline SampleBatch baseline_sample(const SamplerConfig& cfg, const Composite& c) {
  if (cfg.kind != SamplerKind::projected_diffusion && cfg.kind != SamplerKind::analytic_score_sde) {
    throw ConfigError("baseline_sample: kind must be projected_diffusion or analytic_score_sde");
  }
  if (c.dim() > 2) throw ShapeError("baseline_sample: quadrature score needs d <= 2");
  const bool project = cfg.kind == SamplerKind::projected_diffusion;
  const std::string name = to_string(cfg.kind);
  const Schedule s = cfg.t_stop > 0.0
                         ? cfg.schedule.stopped_at(cfg.t_stop, static_cast<int>(cfg.schedule.steps()))
                         : cfg.schedule;
  const auto init = s.eval(s.tau(0));
  const std::optional<Density1D> d1 =
      c.dim() == 1 ? std::optional<Density1D>(density_of(c)) : std::nullopt;
  const std::optional<Density2D> d2 =
      c.dim() == 2 ? std::optional<Density2D>(density_of_2d(c)) : std::nullopt;
  auto batch = detail::run_blocks(cfg, c.dim(), name, init.sigma2, [&](detail::BlockState& b) {
    for (std::size_t k = 0; k < s.steps(); ++k) {
      const auto from = s.eval(s.tau(k));
      const auto a = s.coefficients(k);
      Matrix M(b.X.rows(), b.X.cols());
      for (Eigen::Index j = 0; j < b.X.cols(); ++j) {
        if (d1) {
          M(0, j) = posterior_quadrature(*d1, from.mu, from.lambda, b.X(0, j), cfg.quadrature).mean;
        } else {
          M.col(j) = posterior_mean_2d(*d2, from.mu, from.lambda,
                                       Eigen::Vector2d(b.X(0, j), b.X(1, j)), cfg.quadrature);
        }
      }
      Matrix next = a.alpha1 * b.X + a.alpha2 * M + a.alpha3 * detail::noise(b);
      if (project) {
        for (Eigen::Index j = 0; j < next.cols(); ++j) next.col(j) = c.g().project(next.col(j));
      }
      b.X = std::move(next);
      detail::check_finite(b, name, k);
      if (cfg.keep_trajectories) b.trajectory.push_back(b.X);
    }
  });
  batch.prox_source = "quadrature_posterior_mean";
  batch.steps = s.steps();
  batch.notes.push_back("score-based baseline: analytic Stein score by quadrature, early stop at t = " +
                        std::to_string(cfg.t_stop));
  return batch;
}

// Dispatch on cfg.kind.
inline SampleBatch sample(const SamplerConfig& cfg, const Composite& c) {
  switch (cfg.kind) {
    case SamplerKind::pgm: return pgm_sample(cfg, c);
    case SamplerKind::pgm_em: return em_sample(cfg, c);
    case SamplerKind::pula: return pula_sample(cfg, c);
    case SamplerKind::prox_point_ode: return prox_point_ode(cfg, c);
    case SamplerKind::projected_diffusion:
    case SamplerKind::analytic_score_sde: return baseline_sample(cfg, c);
  }
  throw ConfigError("unknown sampler kind");
}

}  // namespace pgm
