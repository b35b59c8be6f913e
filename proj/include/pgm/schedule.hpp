#pragma once

// Diffusion schedules: the scaling mu(t), the noise variance sigma^2(t) and the
// proximal parameter lambda(t) = sigma^2(t) / mu^2(t), plus the discretisation
// grid and the exponential-interpolation coefficients used by the samplers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pgm/errors.hpp"

namespace pgm {

enum class ScheduleKind { ve, vp, custom };

inline std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::ve: return "ve";
    case ScheduleKind::vp: return "vp";
    case ScheduleKind::custom: return "custom";
  }
  return "unknown";
}

struct ScheduleValues {
  double mu;
  double sigma2;
  double lambda;
};

struct PgmCoefficients {
  double alpha1;
  double alpha2;
  double alpha3;
};

// Coefficients of one reverse step from reverse time tau_k ("from") to
// tau_{k+1} ("to"):
//   alpha1 = lambda_to mu_to / (lambda_from mu_from)
//   alpha2 = mu_to (1 - lambda_to / lambda_from)
//   alpha3 = mu_to sqrt(lambda_to) sqrt(1 - lambda_to / lambda_from)
inline PgmCoefficients pgm_coefficients(double mu_from, double lambda_from,
                                        double mu_to, double lambda_to) {
  if (lambda_from == 0.0) {
    throw DomainError(
        "pgm_coefficients: lambda(tau_k) = 0 (grid reaches a time where the "
        "schedule has no noise; clamp the grid away from t = 0)");
  }
  if (!(lambda_from > 0.0) || !(lambda_to >= 0.0) || !(mu_from > 0.0) ||
      !(mu_to > 0.0)) {
    throw DomainError("pgm_coefficients: schedule values must be positive");
  }
  const double ratio = lambda_to / lambda_from;
  if (ratio > 1.0) {
    throw DomainError(
        "pgm_coefficients: lambda must not increase along the reverse grid");
  }
  const double gap = 1.0 - ratio;
  return {ratio * mu_to / mu_from, mu_to * gap,
          mu_to * std::sqrt(lambda_to) * std::sqrt(gap)};
}

class Schedule {
 public:
  using Fn = std::function<double(double)>;

  // Pointwise description of a schedule. `lambda` and `log_mu` define the
  // marginals; `drift` a(t) and `diffusion2` b^2(t) define the forward SDE.
  struct Components {
    Fn log_mu;
    Fn lambda;
    Fn drift;
    Fn diffusion2;
  };

  Schedule(ScheduleKind kind, double horizon, Components parts,
           std::vector<double> grid)
      : kind_(kind), horizon_(horizon), parts_(std::move(parts)) {
    if (!(horizon_ > 0.0) || !std::isfinite(horizon_)) {
      throw DomainError("schedule: horizon T must be positive and finite");
    }
    set_grid(std::move(grid));
  }

  // Variance-exploding: mu = 1, sigma^2 = lambda.
  static Schedule ve(Fn lambda, Fn dlambda, double horizon, int steps) {
    Components parts{[](double) { return 0.0; }, std::move(lambda),
                     [](double) { return 0.0; }, std::move(dlambda)};
    Schedule s(ScheduleKind::ve, horizon, std::move(parts), {0.0});
    s.set_grid(s.default_grid(steps));
    return s;
  }

  // lambda(t) = exp(slope * t + offset), e.g. exp(10t - 8).
  static Schedule ve_exp_linear(double slope, double offset, double horizon,
                                int steps) {
    if (slope < 0.0) {
      throw DomainError("schedule: lambda must be nondecreasing (slope >= 0)");
    }
    return ve([=](double t) { return std::exp(slope * t + offset); },
              [=](double t) { return slope * std::exp(slope * t + offset); },
              horizon, steps);
  }

  // Piecewise-linear lambda through (times[i], lambdas[i]); times[0] = 0 and
  // times.back() is the horizon.
  static Schedule ve_tabulated(std::vector<double> times,
                               std::vector<double> lambdas, int steps) {
    if (times.size() < 2 || times.size() != lambdas.size()) {
      throw DomainError("schedule: tabulated lambda needs >= 2 matching points");
    }
    if (times.front() != 0.0) {
      throw DomainError("schedule: tabulated lambda must start at t = 0");
    }
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (!(times[i] > times[i - 1])) {
        throw DomainError("schedule: tabulated times must increase strictly");
      }
      if (lambdas[i] < lambdas[i - 1]) {
        throw DomainError("schedule: tabulated lambda must be nondecreasing");
      }
    }
    if (lambdas.front() < 0.0) {
      throw DomainError("schedule: lambda must be nonnegative");
    }
    auto table = std::make_shared<const std::pair<std::vector<double>,
                                                  std::vector<double>>>(
        std::move(times), std::move(lambdas));
    auto segment = [table](double t) {
      const auto& ts = table->first;
      auto it = std::upper_bound(ts.begin(), ts.end(), t);
      std::size_t i = it == ts.begin() ? 0 : static_cast<std::size_t>(it - ts.begin()) - 1;
      return std::min(i, ts.size() - 2);
    };
    auto lambda = [table, segment](double t) {
      const auto& [ts, ls] = *table;
      const std::size_t i = segment(t);
      const double w = (t - ts[i]) / (ts[i + 1] - ts[i]);
      return ls[i] + w * (ls[i + 1] - ls[i]);
    };
    auto dlambda = [table, segment](double t) {
      const auto& [ts, ls] = *table;
      const std::size_t i = segment(t);
      return (ls[i + 1] - ls[i]) / (ts[i + 1] - ts[i]);
    };
    const double horizon = table->first.back();
    return ve(lambda, dlambda, horizon, steps);
  }

  // Variance-preserving with linear rate beta(t) = beta_min + (beta_max -
  // beta_min) t / T, i.e. a(t) = -beta(t)/2 and b^2(t) = beta(t).
  static Schedule vp_linear(double beta_min, double beta_max, double horizon,
                            int steps) {
    if (beta_min < 0.0 || beta_max < beta_min) {
      throw DomainError("schedule: need 0 <= beta_min <= beta_max");
    }
    const double slope = (beta_max - beta_min) / horizon;
    auto integral = [=](double t) { return beta_min * t + 0.5 * slope * t * t; };
    Components parts{
        [=](double t) { return -0.5 * integral(t); },
        [=](double t) { return std::expm1(integral(t)); },
        [=](double t) { return -0.5 * (beta_min + slope * t); },
        [=](double t) { return beta_min + slope * t; }};
    Schedule s(ScheduleKind::vp, horizon, std::move(parts), {0.0});
    s.set_grid(s.default_grid(steps));
    return s;
  }

  // General drift a(t) and squared diffusion b^2(t). log mu(t) = int_0^t a and
  // lambda(t) = int_0^t b^2(s) / mu^2(s) ds are tabulated by composite Simpson
  // with `panels_per_cell` panels per grid cell.
  static Schedule custom(Fn drift, Fn diffusion2, double horizon, int steps,
                         int panels_per_cell = 1024) {
    if (steps < 1) throw DomainError("schedule: custom kind needs K >= 1");
    auto table = std::make_shared<const IntegralTable>(
        drift, diffusion2, horizon,
        static_cast<std::size_t>(steps) * static_cast<std::size_t>(panels_per_cell));
    Components parts{[table](double t) { return table->log_mu(t); },
                     [table](double t) { return table->lambda(t); },
                     std::move(drift), std::move(diffusion2)};
    Schedule s(ScheduleKind::custom, horizon, std::move(parts), {0.0});
    s.set_grid(s.default_grid(steps));
    return s;
  }

  ScheduleKind kind() const { return kind_; }
  double horizon() const { return horizon_; }
  std::size_t steps() const { return grid_.size() - 1; }
  const std::vector<double>& grid() const { return grid_; }
  double tau(std::size_t k) const { return horizon_ - grid_.at(k); }

  double max_step() const {
    double delta = 0.0;
    for (std::size_t k = 0; k + 1 < grid_.size(); ++k) {
      delta = std::max(delta, grid_[k + 1] - grid_[k]);
    }
    return delta;
  }

  ScheduleValues eval(double t) const {
    check_time(t);
    const double lambda = parts_.lambda(t);
    const double mu = std::exp(parts_.log_mu(t));
    return {mu, mu * mu * lambda, lambda};
  }

  double drift(double t) const {
    check_time(t);
    return parts_.drift(t);
  }

  double diffusion2(double t) const {
    check_time(t);
    return parts_.diffusion2(t);
  }

  PgmCoefficients coefficients(std::size_t k) const {
    if (k + 1 >= grid_.size()) {
      throw DomainError("schedule: step index " + std::to_string(k) +
                        " outside [0, K)");
    }
    const auto from = eval(tau(k));
    const auto to = eval(tau(k + 1));
    return pgm_coefficients(from.mu, from.lambda, to.mu, to.lambda);
  }

  // Same schedule regridded: uniform on [0, T - t_min] with `steps` cells,
  // where t_min = 1e-4 T if lambda(0) = 0 and 0 otherwise.
  Schedule with_steps(int steps) const {
    Schedule copy = *this;
    copy.set_grid(default_grid(steps));
    return copy;
  }

  Schedule with_grid(std::vector<double> grid) const {
    Schedule copy = *this;
    copy.set_grid(std::move(grid));
    return copy;
  }

  // Early stopping used by the score-based baselines: uniform grid on
  // [0, T - t_stop], i.e. the reverse process stops at forward time t_stop.
  Schedule stopped_at(double t_stop, int steps) const {
    if (!(t_stop >= 0.0) || !(t_stop < horizon_)) {
      throw DomainError("schedule: early-stop time must lie in [0, T)");
    }
    return with_grid(uniform_grid(horizon_ - t_stop, steps));
  }

  double grid_clamp() const {
    return parts_.lambda(0.0) > 0.0 ? 0.0 : 1e-4 * horizon_;
  }

 private:
  // Cumulative Simpson tables for custom schedules.
  class IntegralTable {
   public:
    IntegralTable(Fn drift, Fn diffusion2, double horizon, std::size_t panels)
        : drift_(std::move(drift)),
          diffusion2_(std::move(diffusion2)),
          h_(horizon / static_cast<double>(panels)),
          log_mu_(panels + 1, 0.0),
          lambda_(panels + 1, 0.0) {
      for (std::size_t j = 0; j < panels; ++j) {
        const double s = static_cast<double>(j) * h_;
        log_mu_[j + 1] = log_mu_[j] + drift_integral(s, h_);
        lambda_[j + 1] = lambda_[j] + lambda_increment(s, log_mu_[j], h_);
      }
    }

    double log_mu(double t) const {
      const auto [j, s] = locate(t);
      return log_mu_[j] + drift_integral(s, t - s);
    }

    double lambda(double t) const {
      const auto [j, s] = locate(t);
      return lambda_[j] + lambda_increment(s, log_mu_[j], t - s);
    }

   private:
    std::pair<std::size_t, double> locate(double t) const {
      const std::size_t last = log_mu_.size() - 1;
      std::size_t j = static_cast<std::size_t>(std::floor(t / h_));
      j = std::min(j, last);
      return {j, static_cast<double>(j) * h_};
    }

    // Simpson rule for int_s^{s+w} a.
    double drift_integral(double s, double w) const {
      if (w == 0.0) return 0.0;
      return w / 6.0 * (drift_(s) + 4.0 * drift_(s + 0.5 * w) + drift_(s + w));
    }

    // Simpson rule for int_s^{s+w} b^2(r) exp(-2 log mu(r)) dr, with log mu
    // at interior nodes obtained from the panel start by Simpson as well.
    double lambda_increment(double s, double log_mu_s, double w) const {
      if (w == 0.0) return 0.0;
      const double lm_mid = log_mu_s + drift_integral(s, 0.5 * w);
      const double lm_end = log_mu_s + drift_integral(s, w);
      return w / 6.0 *
             (diffusion2_(s) * std::exp(-2.0 * log_mu_s) +
              4.0 * diffusion2_(s + 0.5 * w) * std::exp(-2.0 * lm_mid) +
              diffusion2_(s + w) * std::exp(-2.0 * lm_end));
    }

    Fn drift_;
    Fn diffusion2_;
    double h_;
    std::vector<double> log_mu_;
    std::vector<double> lambda_;
  };

  static std::vector<double> uniform_grid(double end, int steps) {
    if (steps < 0) throw DomainError("schedule: K must be nonnegative");
    std::vector<double> grid(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) {
      grid[static_cast<std::size_t>(k)] =
          steps == 0 ? 0.0 : end * static_cast<double>(k) / steps;
    }
    return grid;
  }

  std::vector<double> default_grid(int steps) const {
    return uniform_grid(horizon_ - grid_clamp(), steps);
  }

  void set_grid(std::vector<double> grid) {
    if (grid.empty() || grid.front() != 0.0) {
      throw DomainError("schedule: grid must start at t_0 = 0");
    }
    for (std::size_t k = 1; k < grid.size(); ++k) {
      if (!(grid[k] > grid[k - 1])) {
        throw DomainError("schedule: grid must be strictly increasing");
      }
    }
    if (grid.back() > horizon_ * (1.0 + 1e-12)) {
      throw DomainError("schedule: grid exceeds the horizon T");
    }
    grid_ = std::move(grid);
  }

  void check_time(double t) const {
    if (!(t >= 0.0) || t > horizon_ * (1.0 + 1e-12)) {
      throw DomainError("schedule: time " + std::to_string(t) +
                        " outside [0, T]");
    }
  }

  ScheduleKind kind_;
  double horizon_;
  Components parts_;
  std::vector<double> grid_;
};

// Range of d log lambda / dt and of the drift a(t) over the grid. Reported as
// a diagnostic; the samplers do not enforce any bound on them.
struct ScheduleDiagnostics {
  double min_log_lambda_rate = std::numeric_limits<double>::infinity();
  double max_log_lambda_rate = -std::numeric_limits<double>::infinity();
  double min_drift = std::numeric_limits<double>::infinity();
  double max_drift = -std::numeric_limits<double>::infinity();
};

inline ScheduleDiagnostics log_derivative_bounds(const Schedule& s) {
  ScheduleDiagnostics d;
  for (std::size_t k = 0; k <= s.steps(); ++k) {
    const double t = s.tau(k);
    const auto v = s.eval(t);
    if (v.lambda > 0.0) {
      // d lambda / dt = b^2 / mu^2
      const double rate = s.diffusion2(t) / (v.mu * v.mu * v.lambda);
      d.min_log_lambda_rate = std::min(d.min_log_lambda_rate, rate);
      d.max_log_lambda_rate = std::max(d.max_log_lambda_rate, rate);
    }
    d.min_drift = std::min(d.min_drift, s.drift(t));
    d.max_drift = std::max(d.max_drift, s.drift(t));
  }
  return d;
}

}  // namespace pgm
