#pragma once

// Brute-force references: grid minimisation of the prox objective, Simpson
// quadrature of Gaussian convolutions (scores and posterior moments),
// empirical Wasserstein-1 distances, sample metrics and the score-gap bounds.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <Eigen/Dense>

#include "pgm/errors.hpp"
#include "pgm/potentials.hpp"
#include "pgm/random.hpp"
#include "pgm/schedule.hpp"

namespace pgm {

struct QuadratureOptions {
  std::size_t panels = 4096;      // 1D composite Simpson panels
  std::size_t panels_2d = 512;    // per axis for tensor Simpson
  std::size_t scan_points = 4097; // coarse scan used to trim the box
  std::size_t scan_points_2d = 257;
  double box_halfwidth = 12.0;    // in units of sqrt(lambda)
  double trim_log_drop = 80.0;
  bool richardson = true;         // double panels until the change is below rel_tol
  double rel_tol = 1e-8;
  std::size_t max_panels = std::size_t{1} << 20;
  std::size_t max_panels_2d = 4096;
};

// Unnormalised log-density on [lo, hi] (either end may be infinite); kinks
// are points where the density is not smooth and are used as panel breaks.
struct Density1D {
  std::function<double(double)> log_density;
  double lo = -kInf;
  double hi = kInf;
  std::vector<double> kinks;
};

struct Density2D {
  std::function<double(double, double)> log_density;
  std::array<double, 2> lo{-kInf, -kInf};
  std::array<double, 2> hi{kInf, kInf};
};

// Composite Simpson on [lo, hi]; `panels` is rounded up to an even number.
inline double simpson(const std::function<double(double)>& f, double lo, double hi,
                      std::size_t panels) {
  if (!(hi > lo)) throw OracleError("simpson: need hi > lo");
  if (panels < 2) panels = 2;
  if (panels % 2 != 0) ++panels;
  const double h = (hi - lo) / static_cast<double>(panels);
  double sum = f(lo) + f(hi);
  for (std::size_t i = 1; i < panels; ++i) {
    sum += (i % 2 == 1 ? 4.0 : 2.0) * f(lo + h * static_cast<double>(i));
  }
  return sum * h / 3.0;
}

// exp(-beta f - g) for a one- or two-dimensional composite.
inline Density1D density_of(const Composite& c) {
  require_dims(1, c.dim(), "density_of");
  Density1D d;
  // Scalar closures: this sits in the inner loop of the quadrature baselines.
  std::function<double(double)> f;
  if (const auto* q = c.f().as_quadratic()) {
    f = [a = q->A(0, 0), b = q->b[0]](double x) { return 0.5 * a * x * x + b * x; };
  } else {
    const auto& h = std::get<PseudoHuber>(c.f().form());
    f = [delta = h.delta, ctr = h.center[0], ridge = h.ridge](double x) {
      const double z = (x - ctr) / delta;
      return delta * delta * (std::sqrt(1.0 + z * z) - 1.0) + 0.5 * ridge * x * x;
    };
  }
  std::function<double(double)> g;
  const ProxFriendly& pg = c.g();
  switch (pg.kind()) {
    case ProxKind::zero:
    case ProxKind::interval:
    case ProxKind::ball:
      g = [](double) { return 0.0; };
      break;
    case ProxKind::l1:
      g = [w = pg.weight()](double x) { return w * std::abs(x); };
      break;
    case ProxKind::quadratic:
      g = [a = pg.A()(0, 0), b = pg.b()[0]](double x) { return 0.5 * a * x * x + b * x; };
      break;
  }
  d.log_density = [f, g, beta = c.beta()](double x) { return -(beta * f(x) + g(x)); };
  switch (c.g().kind()) {
    case ProxKind::interval:
      d.lo = c.g().lo();
      d.hi = c.g().hi();
      break;
    case ProxKind::ball:
      d.lo = -c.g().radius();
      d.hi = c.g().radius();
      break;
    case ProxKind::l1:
      d.kinks.push_back(0.0);
      break;
    default:
      break;
  }
  return d;
}

inline Density2D density_of_2d(const Composite& c) {
  require_dims(2, c.dim(), "density_of_2d");
  Density2D d;
  d.log_density = [c](double x, double y) {
    Vector v(2);
    v << x, y;
    const double gv = c.g().value(v);
    return std::isfinite(gv) ? -(c.beta() * c.f().value(v) + gv) : -kInf;
  };
  if (c.g().kind() == ProxKind::interval) {
    d.lo = {c.g().lo(), c.g().lo()};
    d.hi = {c.g().hi(), c.g().hi()};
  } else if (c.g().kind() == ProxKind::ball) {
    const double r = c.g().radius();
    d.lo = {-r, -r};
    d.hi = {r, r};
  }
  return d;
}

namespace detail {

struct Moments1D {
  double log_mass;
  double mean_offset;  // E[x0] - centre
};

// Log-domain Simpson of w(x) = exp(h(x)) and x w(x) over [lo, hi] split at
// `breaks`, with x measured from `centre`.
inline Moments1D log_moments(const std::function<double(double)>& h, double centre,
                             const std::vector<double>& edges, std::size_t panels) {
  const double total = edges.back() - edges.front();
  std::vector<std::pair<double, double>> terms;  // (log weight, offset)
  terms.reserve(panels + 2 * edges.size());
  double peak = -kInf;
  for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
    const double a = edges[e];
    const double b = edges[e + 1];
    auto n = static_cast<std::size_t>(
        std::ceil(static_cast<double>(panels) * (b - a) / total));
    n = std::max<std::size_t>(n + (n % 2), 2);
    const double step = (b - a) / static_cast<double>(n);
    for (std::size_t i = 0; i <= n; ++i) {
      const double x = i == n ? b : a + step * static_cast<double>(i);
      const double coef = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      const double lw = h(x) + std::log(coef * step / 3.0);
      peak = std::max(peak, lw);
      terms.emplace_back(lw, x - centre);
    }
  }
  if (!std::isfinite(peak)) throw OracleError("quadrature: integrand underflow");
  double mass = 0.0;
  double first = 0.0;
  for (const auto& [lw, off] : terms) {
    const double w = std::exp(lw - peak);
    mass += w;
    first += w * off;
  }
  return {peak + std::log(mass), first / mass};
}

// Box [c - w, c + w] intersected with [lo, hi], then trimmed to the region
// where the integrand is within `drop` of its maximum on a coarse scan.
inline std::pair<double, double> trimmed_box(const std::function<double(double)>& h,
                                             double lo, double hi, std::size_t scan,
                                             double drop) {
  scan = std::max<std::size_t>(scan, 3);
  std::vector<double> vals(scan);
  const double step = (hi - lo) / static_cast<double>(scan - 1);
  double peak = -kInf;
  for (std::size_t i = 0; i < scan; ++i) {
    vals[i] = h(lo + step * static_cast<double>(i));
    peak = std::max(peak, vals[i]);
  }
  if (!std::isfinite(peak)) throw OracleError("quadrature: integrand underflow");
  std::size_t first = scan;
  std::size_t last = 0;
  for (std::size_t i = 0; i < scan; ++i) {
    if (vals[i] >= peak - drop) {
      first = std::min(first, i);
      last = i;
    }
  }
  const std::size_t a = first == 0 ? 0 : first - 1;
  const std::size_t b = std::min(last + 1, scan - 1);
  return {lo + step * static_cast<double>(a),
          b == scan - 1 ? hi : lo + step * static_cast<double>(b)};
}

}  // namespace detail

struct Posterior1D {
  double log_mass;
  double mean;
  double centre;  // x_t / mu
  double mean_offset;
  std::size_t panels;
};

// Moments of p(x0 | x_t) ~ pi0(x0) exp(-(x0 - x_t/mu)^2 / (2 lambda)).
inline Posterior1D posterior_quadrature(const Density1D& pi0, double mu, double lambda,
                                        double xt, const QuadratureOptions& opt = {}) {
  if (!(lambda > 0.0) || !(mu > 0.0)) {
    throw OracleError("posterior quadrature: need lambda > 0 and mu > 0");
  }
  if (!std::isfinite(xt)) throw OracleError("posterior quadrature: non-finite x_t");
  const double centre = xt / mu;
  auto h = [&](double x) {
    const double r = x - centre;
    return pi0.log_density(x) - r * r / (2.0 * lambda);
  };
  const double c = std::clamp(centre, pi0.lo, pi0.hi);
  const double w = opt.box_halfwidth * std::sqrt(lambda);
  double lo = std::max(c - w, pi0.lo);
  double hi = std::min(c + w, pi0.hi);
  if (!(hi > lo)) throw OracleError("posterior quadrature: empty box");
  std::tie(lo, hi) = detail::trimmed_box(h, lo, hi, opt.scan_points, opt.trim_log_drop);
  std::vector<double> edges{lo};
  for (double k : pi0.kinks) {
    if (k > lo && k < hi) edges.push_back(k);
  }
  edges.push_back(hi);
  std::size_t n = opt.panels;
  auto m = detail::log_moments(h, centre, edges, n);
  if (opt.richardson) {
    for (;;) {
      if (2 * n > opt.max_panels) {
        throw OracleError("posterior quadrature: panel doubling did not converge");
      }
      const auto m2 = detail::log_moments(h, centre, edges, 2 * n);
      const double scale = std::max(1.0, std::abs(m2.mean_offset + centre));
      const bool ok = std::abs(m2.mean_offset - m.mean_offset) <= opt.rel_tol * scale &&
                      std::abs(m2.log_mass - m.log_mass) <=
                          opt.rel_tol * std::max(1.0, std::abs(m2.log_mass));
      m = m2;
      n *= 2;
      if (ok) break;
    }
  }
  return {m.log_mass, centre + m.mean_offset, centre, m.mean_offset, n};
}

// Stein score of pi_t at x_t, (mu E[x0 | x_t] - x_t) / sigma^2.
inline double true_score_quadrature(const Density1D& pi0, const Schedule& s, double t,
                                    double xt, const QuadratureOptions& opt = {}) {
  const auto v = s.eval(t);
  const auto post = posterior_quadrature(pi0, v.mu, v.lambda, xt, opt);
  return post.mean_offset / (v.mu * v.lambda);
}

inline double true_score_quadrature(const Density1D& pi0, double mu, double lambda,
                                    double xt, const QuadratureOptions& opt = {}) {
  const auto post = posterior_quadrature(pi0, mu, lambda, xt, opt);
  return post.mean_offset / (mu * lambda);
}

struct PosteriorMoments {
  double mean;
  double mode;
};

// Golden-section maximiser of a unimodal function on [lo, hi].
inline double golden_section_max(const std::function<double(double)>& h, double lo,
                                 double hi, double tol = 1e-13) {
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo;
  double b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double hc = h(c);
  double hd = h(d);
  while (b - a > tol * std::max(1.0, std::abs(a) + std::abs(b))) {
    if (hc >= hd) {
      b = d;
      d = c;
      hd = hc;
      c = b - invphi * (b - a);
      hc = h(c);
    } else {
      a = c;
      c = d;
      hc = hd;
      d = a + invphi * (b - a);
      hd = h(d);
    }
  }
  // Endpoints win ties so that boundary modes are reported exactly.
  const double mid = 0.5 * (a + b);
  double best = mid;
  double hbest = h(mid);
  for (double e : {lo, hi}) {
    if (std::abs(e - mid) <= 2.0 * tol * std::max(1.0, std::abs(e)) + (b - a)) {
      const double he = h(e);
      if (he >= hbest) {
        best = e;
        hbest = he;
      }
    }
  }
  return best;
}

inline PosteriorMoments posterior_moments_quadrature(const Density1D& pi0, double mu,
                                                     double lambda, double xt,
                                                     const QuadratureOptions& opt = {}) {
  const auto post = posterior_quadrature(pi0, mu, lambda, xt, opt);
  const double centre = xt / mu;
  auto h = [&](double x) {
    const double r = x - centre;
    return pi0.log_density(x) - r * r / (2.0 * lambda);
  };
  const double c = std::clamp(centre, pi0.lo, pi0.hi);
  const double w = opt.box_halfwidth * std::sqrt(lambda);
  const double lo = std::max(c - w, pi0.lo);
  const double hi = std::min(c + w, pi0.hi);
  return {post.mean, golden_section_max(h, lo, hi)};
}

inline PosteriorMoments posterior_moments_quadrature(const Density1D& pi0,
                                                     const Schedule& s, double t,
                                                     double xt,
                                                     const QuadratureOptions& opt = {}) {
  const auto v = s.eval(t);
  return posterior_moments_quadrature(pi0, v.mu, v.lambda, xt, opt);
}

namespace detail {

struct Moments2D {
  double log_mass;
  Eigen::Vector2d mean_offset;
};

inline Moments2D log_moments_2d(const std::function<double(double, double)>& h,
                                const Eigen::Vector2d& centre,
                                const std::array<double, 2>& lo,
                                const std::array<double, 2>& hi, std::size_t n) {
  n = std::max<std::size_t>(n + (n % 2), 2);
  const double hx = (hi[0] - lo[0]) / static_cast<double>(n);
  const double hy = (hi[1] - lo[1]) / static_cast<double>(n);
  auto coef = [n](std::size_t i) {
    return (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
  };
  std::vector<double> lw((n + 1) * (n + 1));
  double peak = -kInf;
  for (std::size_t i = 0; i <= n; ++i) {
    const double x = lo[0] + hx * static_cast<double>(i);
    for (std::size_t j = 0; j <= n; ++j) {
      const double y = lo[1] + hy * static_cast<double>(j);
      const double v = h(x, y) + std::log(coef(i) * coef(j));
      lw[i * (n + 1) + j] = v;
      peak = std::max(peak, v);
    }
  }
  if (!std::isfinite(peak)) throw OracleError("quadrature: integrand underflow");
  double mass = 0.0;
  Eigen::Vector2d first = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i <= n; ++i) {
    const double dx = lo[0] + hx * static_cast<double>(i) - centre[0];
    for (std::size_t j = 0; j <= n; ++j) {
      const double dy = lo[1] + hy * static_cast<double>(j) - centre[1];
      const double w = std::exp(lw[i * (n + 1) + j] - peak);
      mass += w;
      first[0] += w * dx;
      first[1] += w * dy;
    }
  }
  return {peak + std::log(mass * hx * hy / 9.0), first / mass};
}

}  // namespace detail

// Posterior mean of x0 given x_t in two dimensions, by tensor Simpson.
inline Eigen::Vector2d posterior_mean_2d(const Density2D& pi0, double mu, double lambda,
                                         const Eigen::Vector2d& xt,
                                         const QuadratureOptions& opt = {}) {
  if (!(lambda > 0.0) || !(mu > 0.0)) {
    throw OracleError("posterior quadrature: need lambda > 0 and mu > 0");
  }
  const Eigen::Vector2d centre = xt / mu;
  auto h = [&](double x, double y) {
    const double rx = x - centre[0];
    const double ry = y - centre[1];
    return pi0.log_density(x, y) - (rx * rx + ry * ry) / (2.0 * lambda);
  };
  const double w = opt.box_halfwidth * std::sqrt(lambda);
  std::array<double, 2> lo{};
  std::array<double, 2> hi{};
  for (int a = 0; a < 2; ++a) {
    const double c = std::clamp(centre[a], pi0.lo[a], pi0.hi[a]);
    lo[a] = std::max(c - w, pi0.lo[a]);
    hi[a] = std::min(c + w, pi0.hi[a]);
    if (!(hi[a] > lo[a])) throw OracleError("posterior quadrature: empty box");
  }
  // Trim each axis using a coarse tensor scan.
  {
    const std::size_t m = std::max<std::size_t>(opt.scan_points_2d, 3);
    std::vector<double> vals(m * m);
    double peak = -kInf;
    for (std::size_t i = 0; i < m; ++i) {
      const double x = lo[0] + (hi[0] - lo[0]) * static_cast<double>(i) / static_cast<double>(m - 1);
      for (std::size_t j = 0; j < m; ++j) {
        const double y = lo[1] + (hi[1] - lo[1]) * static_cast<double>(j) / static_cast<double>(m - 1);
        vals[i * m + j] = h(x, y);
        peak = std::max(peak, vals[i * m + j]);
      }
    }
    if (!std::isfinite(peak)) throw OracleError("quadrature: integrand underflow");
    std::array<std::size_t, 2> first{m, m};
    std::array<std::size_t, 2> last{0, 0};
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        if (vals[i * m + j] >= peak - opt.trim_log_drop) {
          first[0] = std::min(first[0], i);
          last[0] = std::max(last[0], i);
          first[1] = std::min(first[1], j);
          last[1] = std::max(last[1], j);
        }
      }
    }
    for (int a = 0; a < 2; ++a) {
      const double step = (hi[a] - lo[a]) / static_cast<double>(m - 1);
      const std::size_t f = first[a] == 0 ? 0 : first[a] - 1;
      const std::size_t l = std::min(last[a] + 1, m - 1);
      const double new_lo = lo[a] + step * static_cast<double>(f);
      const double new_hi = l == m - 1 ? hi[a] : lo[a] + step * static_cast<double>(l);
      lo[a] = new_lo;
      hi[a] = new_hi;
    }
  }
  std::size_t n = opt.panels_2d;
  auto m = detail::log_moments_2d(h, centre, lo, hi, n);
  if (opt.richardson) {
    for (;;) {
      if (2 * n > opt.max_panels_2d) {
        throw OracleError("posterior quadrature: panel doubling did not converge");
      }
      const auto m2 = detail::log_moments_2d(h, centre, lo, hi, 2 * n);
      const double scale = std::max(1.0, (m2.mean_offset + centre).norm());
      const bool ok = (m2.mean_offset - m.mean_offset).norm() <= opt.rel_tol * scale;
      m = m2;
      n *= 2;
      if (ok) break;
    }
  }
  return centre + m.mean_offset;
}

inline Eigen::Vector2d true_score_quadrature_2d(const Density2D& pi0, double mu,
                                                double lambda, const Eigen::Vector2d& xt,
                                                const QuadratureOptions& opt = {}) {
  const Eigen::Vector2d mean = posterior_mean_2d(pi0, mu, lambda, xt, opt);
  return (mean - xt / mu) / (mu * lambda);
}

// True score of pi_t for a 1D or 2D composite target.
inline Vector true_score(const Composite& c, double mu, double lambda, const Vector& xt,
                         const QuadratureOptions& opt = {}) {
  require_dims(c.dim(), static_cast<std::size_t>(xt.size()), "true_score");
  if (c.dim() == 1) {
    return Vector::Constant(1, true_score_quadrature(density_of(c), mu, lambda, xt[0], opt));
  }
  if (c.dim() == 2) {
    return true_score_quadrature_2d(density_of_2d(c), mu, lambda,
                                    Eigen::Vector2d(xt[0], xt[1]), opt);
  }
  throw ShapeError("true_score: quadrature supports d <= 2 only");
}

// Argmin of objective(u) + |u - x|^2 / (2 lambda) over the box [lo, hi] by a
// regular grid, refined once around the best cell to spacing resolution / 4.
inline Vector grid_prox(const std::function<double(const Vector&)>& objective,
                        double lambda, const Vector& x, const Vector& lo,
                        const Vector& hi, double resolution = 1e-4) {
  const auto d = x.size();
  if (d < 1 || d > 2) throw ShapeError("grid_prox: supports d <= 2 only");
  if (lo.size() != d || hi.size() != d || !(lo.array() < hi.array()).all() ||
      !lo.allFinite() || !hi.allFinite()) {
    throw OracleError("grid_prox: search box must be bounded and nonempty");
  }
  if (!(lambda > 0.0)) throw DomainError("grid_prox: lambda must be positive");
  auto total = [&](const Vector& u) {
    return objective(u) + (u - x).squaredNorm() / (2.0 * lambda);
  };
  auto search = [&](const Vector& a, const Vector& b, std::size_t n) {
    Vector best = a;
    double best_val = kInf;
    Vector u(d);
    const std::size_t ny = d == 2 ? n : 1;
    for (std::size_t i = 0; i < n; ++i) {
      u[0] = a[0] + (b[0] - a[0]) * static_cast<double>(i) / static_cast<double>(n - 1);
      for (std::size_t j = 0; j < ny; ++j) {
        if (d == 2) {
          u[1] = a[1] + (b[1] - a[1]) * static_cast<double>(j) / static_cast<double>(n - 1);
        }
        const double v = total(u);
        if (std::isnan(v) || v == -kInf) {
          throw OracleError("grid_prox: objective unbounded below on the box");
        }
        if (v < best_val) {
          best_val = v;
          best = u;
        }
      }
    }
    if (!std::isfinite(best_val)) {
      throw OracleError("grid_prox: objective infinite everywhere on the box");
    }
    return best;
  };
  const std::size_t coarse = d == 1 ? 4001 : 401;
  const Vector best = search(lo, hi, coarse);
  const Vector cell = (hi - lo) / static_cast<double>(coarse - 1);
  const Vector a = (best - cell).cwiseMax(lo);
  const Vector b = (best + cell).cwiseMin(hi);
  const double span = (b - a).maxCoeff();
  const auto fine = static_cast<std::size_t>(std::ceil(4.0 * span / resolution)) + 1;
  return search(a, b, std::max<std::size_t>(fine, 3));
}

// Grid prox of U = beta f + g on the box of half-width `half_width` around
// the projection of x onto dom(g), cut to the bounding box of dom(g).
inline Vector grid_prox(const Composite& c, double lambda, const Vector& x,
                        double half_width, double resolution = 1e-4) {
  const Vector p = c.g().project(x);
  Vector lo = p.array() - half_width;
  Vector hi = p.array() + half_width;
  if (c.g().kind() == ProxKind::interval) {
    lo = lo.cwiseMax(c.g().lo());
    hi = hi.cwiseMin(c.g().hi());
  } else if (c.g().kind() == ProxKind::ball) {
    lo = lo.cwiseMax(-c.g().radius());
    hi = hi.cwiseMin(c.g().radius());
  }
  return grid_prox([&c](const Vector& u) { return c.value(u); }, lambda, x, lo, hi,
                   resolution);
}

inline Vector grid_prox(const ProxFriendly& g, double lambda, const Vector& x,
                        double half_width, double resolution = 1e-4) {
  const auto d = static_cast<Eigen::Index>(g.dim());
  return grid_prox(Composite(Smooth::quadratic(Matrix::Zero(d, d), Vector::Zero(d)), g, 0.0),
                   lambda, x, half_width, resolution);
}

// W1 between two empirical measures on the line: the integral of |F_a - F_b|.
// For equal sizes this is the mean absolute difference of sorted samples.
inline double empirical_w1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw OracleError("empirical_w1: empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
  }
  const double wa = 1.0 / static_cast<double>(a.size());
  const double wb = 1.0 / static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double fa = 0.0;
  double fb = 0.0;
  double prev = std::min(a.front(), b.front());
  double total = 0.0;
  while (i < a.size() || j < b.size()) {
    const double next = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    total += std::abs(fa - fb) * (next - prev);
    prev = next;
    while (i < a.size() && a[i] == next) {
      fa += wa;
      ++i;
    }
    while (j < b.size() && b[j] == next) {
      fb += wb;
      ++j;
    }
  }
  return total;
}

// W1 between samples and a distribution given by its quantile function,
// coupling sorted samples with quantiles at the midpoints of an n-point grid.
inline double empirical_w1(std::vector<double> samples,
                           const std::function<double(double)>& quantile,
                           std::size_t grid = 10000) {
  if (samples.empty() || grid == 0) throw OracleError("empirical_w1: empty input");
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<double>(samples.size());
  double total = 0.0;
  for (std::size_t j = 0; j < grid; ++j) {
    const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(grid);
    const auto idx = std::min(static_cast<std::size_t>(u * n), samples.size() - 1);
    total += std::abs(samples[idx] - quantile(u));
  }
  return total / static_cast<double>(grid);
}

inline std::function<double(double)> normal_quantile(double mean, double sd) {
  return [dist = boost::math::normal_distribution<double>(mean, sd)](double u) {
    return boost::math::quantile(dist, u);
  };
}

// Quantile function of a 1D density on a bounded support, from a cumulative
// Simpson table with `panels` cells and linear interpolation of the inverse.
inline std::function<double(double)> quantile_from_density(const Density1D& pi0,
                                                           double lo, double hi,
                                                           std::size_t panels = 100000) {
  lo = std::max(lo, pi0.lo);
  hi = std::min(hi, pi0.hi);
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw OracleError("quantile_from_density: need a bounded support");
  }
  const double step = (hi - lo) / static_cast<double>(panels);
  std::vector<double> xs(panels + 1);
  std::vector<double> logp(2 * panels + 1);
  double peak = -kInf;
  for (std::size_t i = 0; i <= 2 * panels; ++i) {
    logp[i] = pi0.log_density(lo + 0.5 * step * static_cast<double>(i));
    peak = std::max(peak, logp[i]);
  }
  if (!std::isfinite(peak)) throw OracleError("quantile_from_density: zero density");
  std::vector<double> cdf(panels + 1, 0.0);
  for (std::size_t i = 0; i < panels; ++i) {
    xs[i] = lo + step * static_cast<double>(i);
    const double a = std::exp(logp[2 * i] - peak);
    const double m = std::exp(logp[2 * i + 1] - peak);
    const double b = std::exp(logp[2 * i + 2] - peak);
    cdf[i + 1] = cdf[i] + step / 6.0 * (a + 4.0 * m + b);
  }
  xs[panels] = hi;
  const double mass = cdf.back();
  for (double& v : cdf) v /= mass;
  return [xs = std::move(xs), cdf = std::move(cdf)](double u) {
    auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.begin()) return xs.front();
    if (it == cdf.end()) return xs.back();
    const auto i = static_cast<std::size_t>(it - cdf.begin());
    const double span = cdf[i] - cdf[i - 1];
    const double w = span > 0.0 ? (u - cdf[i - 1]) / span : 0.0;
    return xs[i - 1] + w * (xs[i] - xs[i - 1]);
  };
}

// argmin of f over dom(g) (g acting as a constraint or regulariser) by
// accelerated proximal gradient, stopped when the step is below `tol`.
inline Vector constrained_minimizer(const Smooth& f, const ProxFriendly& g,
                                    double tol = 1e-10,
                                    std::size_t max_iter = 10000000) {
  require_dims(f.dim(), g.dim(), "constrained_minimizer");
  const double L = f.smoothness();
  if (!(L > 0.0)) throw OracleError("constrained_minimizer: f must have L > 0");
  const double step = 1.0 / L;
  const auto d = static_cast<Eigen::Index>(f.dim());
  Vector x = g.project(Vector::Zero(d));
  Vector y = x;
  double t = 1.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    const Vector next = g.prox(y - step * f.grad(y), step);
    const double change = (next - x).norm();
    if (change <= tol) return next;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    // Restart momentum when the objective would increase. A plain step from
    // x is always accepted; near the optimum its decrease is below rounding.
    if (t > 1.0 && f.value(next) + g.value(next) > f.value(x) + g.value(x)) {
      y = x;
      t = 1.0;
      continue;
    }
    y = next + ((t - 1.0) / t_next) * (next - x);
    x = next;
    t = t_next;
  }
  throw OracleError("constrained_minimizer: no convergence");
}

struct SampleMetrics {
  double feasibility = 0.0;
  std::optional<double> optimality_gap;
};

// Rows of `samples` are chains. Feasibility counts boundary points (within
// 1e-9) as inside; the optimality gap is mean f(x) - f(x*).
inline SampleMetrics metrics(const Matrix& samples, const Composite& c,
                             const std::optional<Vector>& optimum = std::nullopt) {
  require_dims(c.dim(), static_cast<std::size_t>(samples.cols()), "metrics");
  SampleMetrics m;
  if (samples.rows() == 0) return m;
  std::size_t inside = 0;
  double fsum = 0.0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const Vector x = samples.row(i).transpose();
    if (c.g().contains(x, 1e-9)) ++inside;
    fsum += c.f().value(x);
  }
  const auto n = static_cast<double>(samples.rows());
  m.feasibility = static_cast<double>(inside) / n;
  if (optimum) m.optimality_gap = fsum / n - c.f().value(*optimum);
  return m;
}

// |true score - exact Moreau score| <= (1/mu) sqrt(2d / (beta m lambda^2 + lambda)).
inline double score_gap_bound(std::size_t d, double beta, double m, double mu,
                              double lambda) {
  return std::sqrt(2.0 * static_cast<double>(d) / (beta * m * lambda * lambda + lambda)) / mu;
}

// Hypotheses of the splitting bound: beta >= 2 and lambda <= (2 beta^{3/2} L)^{-1}.
inline bool splitting_bound_applies(double beta, double L, double lambda) {
  return beta >= 2.0 && L > 0.0 && lambda <= 1.0 / (2.0 * std::pow(beta, 1.5) * L);
}

// |joint prox - split prox| <= 4 (|grad f(x)| + 1) / (beta L).
inline double splitting_bound(double beta, double L, double grad_norm) {
  return 4.0 * (grad_norm + 1.0) / (beta * L);
}

// Constant of the linear-growth score-error bound M (1 + |x_t|) / sigma^2:
// M = C_f / sqrt(beta), C_f = max{2 sqrt 2, sqrt(2d/m) + 2 sqrt 2 |grad f(0)| / L}.
inline double score_error_constant(const Smooth& f, double beta) {
  const double m = f.strong_convexity();
  if (!(m > 0.0)) return kInf;
  const double d = static_cast<double>(f.dim());
  const Vector g0 = f.grad(Vector::Zero(static_cast<Eigen::Index>(f.dim())));
  const double cf = std::max(2.0 * std::sqrt(2.0),
                             std::sqrt(2.0 * d / m) +
                                 2.0 * std::sqrt(2.0) * g0.norm() / f.smoothness());
  return cf / std::sqrt(beta);
}

struct BoundSweep {
  std::vector<double> times;
  std::vector<Vector> points;
  QuadratureOptions quadrature;
};

struct BoundCheckPoint {
  double t = 0.0;
  Vector xt;
  double lambda = 0.0;
  double gap_exact = 0.0;   // |true score - Moreau score with joint prox|
  double gap_split = 0.0;   // |true score - Moreau score with split prox|
  double bound_gap = 0.0;   // score-gap bound for gap_exact
  std::optional<double> bound_split;     // gap bound plus the splitting term / (mu lambda)
  std::optional<double> bound_constant;  // M (1 + |x_t|) / sigma^2, informational
  bool ok = true;
};

struct BoundCheckReport {
  std::vector<BoundCheckPoint> points;
  std::vector<std::string> notes;
  double max_gap_exact = 0.0;
  double max_gap_split = 0.0;
  double min_margin = kInf;  // min over checks of bound - gap
  std::size_t checks = 0;
  std::size_t failures = 0;
  bool passed() const { return failures == 0; }
};

inline BoundCheckReport bound_checks(const Composite& c, const Schedule& s,
                                     const BoundSweep& sweep) {
  if (c.dim() > 2) throw ShapeError("bound_checks: supports d <= 2 only");
  BoundCheckReport rep;
  const double m = c.f().strong_convexity();
  const double L = c.f().smoothness();
  const double beta = c.beta();
  if (!(m > 0.0) || beta == 0.0) {
    rep.notes.push_back(
        "f is not strongly convex under beta; gap bound degrades to sqrt(2d/lambda)/mu "
        "and the linear-growth constant is vacuous");
  }
  if (!c.g().is_compact()) {
    rep.notes.push_back("dom(g) is unbounded; compactness-dependent checks skipped");
  }
  if (beta < 2.0) {
    rep.notes.push_back("beta < 2; splitting bound not asserted");
  }
  bool split_skipped = false;
  for (double t : sweep.times) {
    const auto v = s.eval(t);
    for (const Vector& xt : sweep.points) {
      BoundCheckPoint p;
      p.t = t;
      p.xt = xt;
      p.lambda = v.lambda;
      const Vector truth = true_score(c, v.mu, v.lambda, xt, sweep.quadrature);
      const Vector exact = moreau_score(c, s, t, xt, ProxRoute::joint);
      const Vector split = moreau_score(c, s, t, xt, ProxRoute::split);
      p.gap_exact = (truth - exact).norm();
      p.gap_split = (truth - split).norm();
      p.bound_gap = score_gap_bound(c.dim(), beta, m, v.mu, v.lambda);
      rep.checks += 1;
      rep.min_margin = std::min(rep.min_margin, p.bound_gap - p.gap_exact);
      if (p.gap_exact > p.bound_gap) p.ok = false;
      if (splitting_bound_applies(beta, L, v.lambda)) {
        const double grad = c.f().grad(xt / v.mu).norm();
        p.bound_split = p.bound_gap + splitting_bound(beta, L, grad) / (v.mu * v.lambda);
        rep.checks += 1;
        rep.min_margin = std::min(rep.min_margin, *p.bound_split - p.gap_split);
        if (p.gap_split > *p.bound_split) p.ok = false;
      } else {
        split_skipped = true;
      }
      const double M = score_error_constant(c.f(), beta);
      if (std::isfinite(M)) p.bound_constant = M * (1.0 + xt.norm()) / v.sigma2;
      rep.max_gap_exact = std::max(rep.max_gap_exact, p.gap_exact);
      rep.max_gap_split = std::max(rep.max_gap_split, p.gap_split);
      if (!p.ok) rep.failures += 1;
      rep.points.push_back(std::move(p));
    }
  }
  if (split_skipped && beta >= 2.0) {
    rep.notes.push_back("lambda above (2 beta^{3/2} L)^{-1} at some times; splitting bound skipped there");
  }
  return rep;
}

}  // namespace pgm
