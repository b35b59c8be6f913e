#pragma once

// Invariant suite behind the `verify` subcommand. Each check reports the
// measured worst case against its threshold; nothing throws on failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgm/oracles.hpp"
#include "pgm/potentials.hpp"
#include "pgm/proxnet.hpp"
#include "pgm/random.hpp"
#include "pgm/schedule.hpp"

namespace pgm {

struct CheckResult {
  std::string name;
  bool passed = true;
  double measured = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
  std::size_t failures() const {
    return static_cast<std::size_t>(
        std::count_if(checks.begin(), checks.end(), [](const CheckResult& c) { return !c.passed; }));
  }
  const CheckResult* find(const std::string& name) const {
    for (const auto& c : checks) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }
};

using CoefficientFn = std::function<PgmCoefficients(const Schedule&, std::size_t)>;

struct VerifyOptions {
  std::uint64_t seed = 20240601;
  // Replaceable so that a deliberately broken implementation can be checked.
  CoefficientFn coefficients = [](const Schedule& s, std::size_t k) { return s.coefficients(k); };
  bool include_quadrature = true;
};

inline nlohmann::json to_json(const VerifyReport& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) {
    checks.push_back({{"name", c.name}, {"passed", c.passed}, {"measured", c.measured},
                      {"threshold", c.threshold}, {"detail", c.detail}});
  }
  return {{"passed", r.passed()}, {"failures", r.failures()}, {"checks", checks}};
}

namespace detail {

inline std::vector<ProxFriendly> sample_priors(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  Matrix A = Matrix::Identity(n, n) * 0.5;
  A(0, 0) = 2.0;
  return {ProxFriendly::zero(d), ProxFriendly::interval(d, -1.0, 0.5), ProxFriendly::ball(d, 1.3),
          ProxFriendly::l1(d, 0.7), ProxFriendly::quadratic(A, Vector::Constant(n, 0.3))};
}

inline std::vector<Schedule> sample_schedules() {
  return {Schedule::ve_exp_linear(10.0, -8.0, 1.0, 100),
          Schedule::ve_tabulated({0.0, 0.3, 0.7, 1.0}, {1e-3, 0.05, 0.8, 4.0}, 64),
          Schedule::vp_linear(0.1, 20.0, 1.0, 100),
          Schedule::custom([](double t) { return -0.5 * t; }, [](double t) { return t; }, 1.0, 50, 64)};
}

inline void add(VerifyReport& r, std::string name, double measured, double threshold,
                std::string detail = {}) {
  r.checks.push_back({std::move(name), measured <= threshold, measured, threshold, std::move(detail)});
}

}  // namespace detail

inline VerifyReport verify_all(const VerifyOptions& opt = {}) {
  VerifyReport rep;
  Rng rng(opt.seed);

  // Prox: nonexpansive and lands in dom(g).
  {
    double worst = 0.0;
    std::size_t outside = 0;
    for (std::size_t d : {1, 2, 3}) {
      for (const auto& g : detail::sample_priors(d)) {
        for (int i = 0; i < 200; ++i) {
          const double lambda = std::exp(rng.uniform(-5.0, 2.0));
          const Vector x = 3.0 * rng.normal_vector(static_cast<Eigen::Index>(d));
          const Vector y = 3.0 * rng.normal_vector(static_cast<Eigen::Index>(d));
          const Vector px = g.prox(x, lambda);
          const Vector py = g.prox(y, lambda);
          worst = std::max(worst, (px - py).norm() / (x - y).norm());
          if (!std::isfinite(g.value(px))) ++outside;
        }
      }
    }
    detail::add(rep, "prox_nonexpansive", worst, 1.0 + 1e-12, "max |prox x - prox y| / |x - y|");
    detail::add(rep, "prox_in_domain", static_cast<double>(outside), 0.0, "prox outputs outside dom(g)");
  }

  // Envelope gradient identity: finite differences of g^lambda vs (x - prox) / lambda.
  {
    double worst = 0.0;
    for (std::size_t d : {1, 2}) {
      for (const auto& g : detail::sample_priors(d)) {
        for (int i = 0; i < 100; ++i) {
          const double lambda = std::exp(rng.uniform(-3.0, 1.0));
          const Vector x = 2.0 * rng.normal_vector(static_cast<Eigen::Index>(d));
          const Vector grad = (x - g.prox(x, lambda)) / lambda;
          Vector fd(x.size());
          for (Eigen::Index k = 0; k < x.size(); ++k) {
            const double h = 1e-6 * std::max(1.0, std::abs(x[k]));
            Vector xp = x;
            Vector xm = x;
            xp[k] += h;
            xm[k] -= h;
            fd[k] = (moreau_envelope(g, lambda, xp) - moreau_envelope(g, lambda, xm)) / (2.0 * h);
          }
          worst = std::max(worst, (fd - grad).norm() / std::max(1.0, grad.norm()));
        }
      }
    }
    detail::add(rep, "envelope_gradient_identity", worst, 1e-5, "relative error of central differences");
  }

  // Envelope is 1/lambda-smooth.
  {
    double worst = 0.0;
    for (const auto& g : detail::sample_priors(2)) {
      for (int i = 0; i < 200; ++i) {
        const double lambda = std::exp(rng.uniform(-3.0, 1.0));
        const Vector x = 2.0 * rng.normal_vector(2);
        const Vector y = 2.0 * rng.normal_vector(2);
        const Vector gx = (x - g.prox(x, lambda)) / lambda;
        const Vector gy = (y - g.prox(y, lambda)) / lambda;
        worst = std::max(worst, lambda * (gx - gy).norm() / (x - y).norm());
      }
    }
    detail::add(rep, "envelope_gradient_lipschitz", worst, 1.0 + 1e-12, "lambda |grad diff| / |x - y|");
  }

  // Schedules: reconstruction identity and coefficient identities.
  {
    double recon = 0.0;
    double consistency = 0.0;
    double range = 0.0;
    double reduction = 0.0;
    for (const auto& s : detail::sample_schedules()) {
      for (std::size_t k = 0; k <= s.steps(); ++k) {
        const auto v = s.eval(s.grid()[k]);
        recon = std::max(recon, std::abs(v.sigma2 - v.mu * v.mu * v.lambda) / (1.0 + v.sigma2));
      }
      for (std::size_t k = 0; k < s.steps(); ++k) {
        const auto a = opt.coefficients(s, k);
        const auto from = s.eval(s.tau(k));
        const auto to = s.eval(s.tau(k + 1));
        const double rho = to.lambda / from.lambda;
        const double a3 = to.mu * std::sqrt(to.lambda * (1.0 - rho));
        consistency = std::max(consistency, std::abs(a.alpha3 - a3) / std::max(a3, 1e-300));
        consistency = std::max(consistency,
                               std::abs(a.alpha3 * a.alpha3 - to.mu * to.mu * to.lambda * (1.0 - rho)) /
                                   std::max(a3 * a3, 1e-300));
        // Violation of alpha1 in [0, 1], alpha2 >= 0, alpha3 >= 0.
        range = std::max({range, -a.alpha1, a.alpha1 - 1.0, -a.alpha2, -a.alpha3});
        if (s.kind() == ScheduleKind::ve) {
          reduction = std::max({reduction, std::abs(a.alpha1 - rho), std::abs(a.alpha2 - (1.0 - rho))});
        }
      }
    }
    detail::add(rep, "schedule_reconstruction", recon, 1e-12, "|sigma^2 - mu^2 lambda| / (1 + sigma^2)");
    detail::add(rep, "coefficient_consistency", consistency, 1e-12,
                "relative error of alpha3 against mu sqrt(lambda (1 - rho))");
    detail::add(rep, "coefficient_range", range, 0.0, "violation of alpha1 in [0,1], alpha2, alpha3 >= 0");
    detail::add(rep, "ve_pula_reduction", reduction, 0.0, "|(alpha1, alpha2) - (rho, 1 - rho)| on VE");
  }

  // W1 axioms on random sample sets.
  {
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const std::size_t n = 10 + static_cast<std::size_t>(rng.uniform() * 50);
      std::vector<double> a(n), b(n), c(n);
      for (std::size_t k = 0; k < n; ++k) {
        a[k] = rng.normal();
        b[k] = 2.0 * rng.normal() + 0.5;
        c[k] = rng.uniform(-3.0, 3.0);
      }
      const double ab = empirical_w1(a, b);
      const double ba = empirical_w1(b, a);
      const double bc = empirical_w1(b, c);
      const double ac = empirical_w1(a, c);
      worst = std::max({worst, empirical_w1(a, a), std::abs(ab - ba), ac - (ab + bc), -ab});
    }
    detail::add(rep, "w1_metric_axioms", worst, 1e-12, "identity, symmetry, triangle inequality");
  }

  // Gradients of the smooth terms.
  {
    double worst = 0.0;
    std::vector<Smooth> fs{Smooth::pseudo_huber(0.5, Vector::Constant(2, 0.2), 0.1),
                           Smooth::quadratic((Matrix(2, 2) << 2.0, 0.5, 0.5, 1.0).finished(),
                                             Vector::Constant(2, -0.3))};
    for (const auto& f : fs) {
      for (int i = 0; i < 100; ++i) {
        const Vector x = 2.0 * rng.normal_vector(2);
        const Vector g = f.grad(x);
        Vector fd(2);
        for (Eigen::Index k = 0; k < 2; ++k) {
          const double h = 1e-5;
          Vector xp = x;
          Vector xm = x;
          xp[k] += h;
          xm[k] -= h;
          fd[k] = (f.value(xp) - f.value(xm)) / (2.0 * h);
        }
        worst = std::max(worst, (fd - g).norm() / std::max(1.0, g.norm()));
      }
    }
    detail::add(rep, "smooth_gradient", worst, 1e-5, "relative error of central differences");
  }

  // Network loss gradient against central differences.
  {
    ProxNetParams p = init_params(2, 8, opt.seed);
    for (auto& w : p.layers[2].W.reshaped()) w = 0.3 * rng.normal();
    MatchingBatch batch{Matrix(2, 6), Matrix(2, 6), Vector(6)};
    for (Eigen::Index j = 0; j < 6; ++j) {
      batch.x0.col(j) = rng.normal_vector(2) * 0.5;
      batch.lambdas[j] = std::exp(rng.uniform(-4.0, 0.0));
      batch.xt.col(j) = batch.x0.col(j) + std::sqrt(batch.lambdas[j]) * rng.normal_vector(2);
    }
    const double zeta = 0.7;
    const auto lg = matching_loss(p, batch, zeta);
    Vector theta = p.flatten();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double h = 1e-5;
      ProxNetParams q = p;
      Vector tp = theta;
      tp[i] += h;
      q.assign(tp);
      const double up = matching_loss_value(q, batch, zeta);
      tp[i] -= 2.0 * h;
      q.assign(tp);
      const double down = matching_loss_value(q, batch, zeta);
      const double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - lg.grad[i]) / std::max(std::abs(lg.grad[i]), 1e-3));
    }
    detail::add(rep, "matching_loss_gradient", worst, 1e-4, "relative error of central differences");
  }

  // Grid prox against the closed forms.
  {
    double worst = 0.0;
    for (const auto& g : detail::sample_priors(1)) {
      for (int i = 0; i < 10; ++i) {
        const double lambda = std::exp(rng.uniform(-2.0, 1.0));
        const Vector x = Vector::Constant(1, 2.5 * rng.normal());
        worst = std::max(worst, (grid_prox(g, lambda, x, 4.0) - g.prox(x, lambda)).norm());
      }
    }
    detail::add(rep, "grid_prox_agreement", worst, 1e-4, "|grid prox - closed form|");
  }

  if (opt.include_quadrature) {
    // Quadratic targets: Moreau score equals the true score.
    const Schedule s = Schedule::ve_exp_linear(10.0, -8.0, 1.0, 100);
    std::vector<Composite> targets{
        Composite(Smooth::half_square(1), ProxFriendly::zero(1), 1.0),
        Composite(Smooth::quadratic(Matrix::Constant(1, 1, 2.0), Vector::Constant(1, -0.5)),
                  ProxFriendly::quadratic(Matrix::Constant(1, 1, 0.5), Vector::Constant(1, 0.2)), 3.0),
        Composite(Smooth::quadratic((Matrix(2, 2) << 1.5, 0.4, 0.4, 0.8).finished(),
                                    (Vector(2) << 0.3, -0.2).finished()),
                  ProxFriendly::zero(2), 2.0)};
    double worst = 0.0;
    for (const auto& c : targets) {
      for (double t : {0.05, 0.3, 0.6, 0.9}) {
        const auto v = s.eval(t);
        const Vector x = 1.5 * rng.normal_vector(static_cast<Eigen::Index>(c.dim()));
        const Vector truth = true_score(c, v.mu, v.lambda, x);
        worst = std::max(worst, (truth - moreau_score(c, s, t, x, ProxRoute::joint)).norm());
      }
    }
    detail::add(rep, "quadratic_score_equivalence", worst, 1e-6, "max |Moreau score - true score|");

    // Score-gap bound on a non-quadratic target.
    const Composite c(Smooth::quadratic(Matrix::Constant(1, 1, 1.0), Vector::Constant(1, 0.4)),
                      ProxFriendly::interval(1, -1.0, 1.0), 10.0);
    BoundSweep sweep;
    sweep.times = {0.1, 0.4, 0.7, 1.0};
    for (double x : {-2.0, -0.9, 0.0, 0.6, 1.5}) sweep.points.push_back(Vector::Constant(1, x));
    const auto br = bound_checks(c, s, sweep);
    detail::add(rep, "score_gap_bound", static_cast<double>(br.failures), 0.0,
                "points where the measured gap exceeds its bound");
  }
  return rep;
}

}  // namespace pgm
