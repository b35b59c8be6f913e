#pragma once

// Composite potentials U = beta * f + g: a smooth term f with gradient access
// and a prox-friendly term g with a closed-form proximal operator.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <variant>

#include <Eigen/Dense>

#include "pgm/errors.hpp"
#include "pgm/random.hpp"
#include "pgm/schedule.hpp"

namespace pgm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

namespace detail {

inline void require_positive_lambda(double lambda, const char* what) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw DomainError(std::string(what) + ": lambda must be positive, got " +
                      std::to_string(lambda));
  }
}

inline void require_finite(const Vector& x, const char* what) {
  if (!x.allFinite()) throw DomainError(std::string(what) + ": non-finite input");
}

// Extreme eigenvalues of a symmetric PSD matrix.
inline std::pair<double, double> spectrum_bounds(const Matrix& A, const char* what) {
  if (A.rows() != A.cols() || A.rows() == 0) {
    throw ShapeError(std::string(what) + ": matrix must be square and nonempty");
  }
  if (!A.allFinite()) throw DomainError(std::string(what) + ": non-finite matrix");
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw DomainError(std::string(what) + ": matrix must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(A, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (lo < -1e-12 * scale) {
    throw DomainError(std::string(what) + ": matrix must be positive semidefinite");
  }
  return {std::max(lo, 0.0), hi};
}

inline bool is_diagonal(const Matrix& A) {
  return (A - Matrix(A.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
}

inline bool is_isotropic(const Matrix& A) {
  return is_diagonal(A) && A.diagonal().maxCoeff() == A.diagonal().minCoeff();
}

}  // namespace detail

// f(x) = 1/2 x^T A x + b^T x with A symmetric PSD.
struct Quadratic {
  Matrix A;
  Vector b;
};

// f(x) = sum_i delta^2 (sqrt(1 + ((x_i - c_i)/delta)^2) - 1) + ridge/2 |x|^2.
// A smooth stand-in for |x - c|_1; strongly convex only when ridge > 0.
struct PseudoHuber {
  double delta;
  Vector center;
  double ridge;
};

class Smooth {
 public:
  using Form = std::variant<Quadratic, PseudoHuber>;

  explicit Smooth(Form form) : form_(std::move(form)) {
    if (auto* q = std::get_if<Quadratic>(&form_)) {
      require_dims(static_cast<std::size_t>(q->A.rows()),
                   static_cast<std::size_t>(q->b.size()), "quadratic f");
      std::tie(m_, L_) = detail::spectrum_bounds(q->A, "quadratic f");
      dim_ = static_cast<std::size_t>(q->b.size());
    } else {
      const auto& h = std::get<PseudoHuber>(form_);
      if (!(h.delta > 0.0) || !(h.ridge >= 0.0)) {
        throw DomainError("pseudo-huber f: need delta > 0 and ridge >= 0");
      }
      if (h.center.size() == 0) throw ShapeError("pseudo-huber f: empty center");
      m_ = h.ridge;
      L_ = 1.0 + h.ridge;
      dim_ = static_cast<std::size_t>(h.center.size());
    }
  }

  static Smooth quadratic(Matrix A, Vector b) {
    return Smooth(Quadratic{std::move(A), std::move(b)});
  }
  static Smooth pseudo_huber(double delta, Vector center, double ridge) {
    return Smooth(PseudoHuber{delta, std::move(center), ridge});
  }
  // f = 1/2 |x|^2 in dimension d.
  static Smooth half_square(std::size_t d) {
    const auto n = static_cast<Eigen::Index>(d);
    return quadratic(Matrix::Identity(n, n), Vector::Zero(n));
  }

  std::size_t dim() const { return dim_; }
  double smoothness() const { return L_; }
  double strong_convexity() const { return m_; }
  const Form& form() const { return form_; }
  const Quadratic* as_quadratic() const { return std::get_if<Quadratic>(&form_); }

  double value(const Vector& x) const {
    require_dims(dim_, static_cast<std::size_t>(x.size()), "f");
    if (const auto* q = as_quadratic()) return 0.5 * x.dot(q->A * x) + q->b.dot(x);
    const auto& h = std::get<PseudoHuber>(form_);
    double v = 0.5 * h.ridge * x.squaredNorm();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double z = (x[i] - h.center[i]) / h.delta;
      v += h.delta * h.delta * (std::sqrt(1.0 + z * z) - 1.0);
    }
    return v;
  }

  Vector grad(const Vector& x) const {
    require_dims(dim_, static_cast<std::size_t>(x.size()), "grad f");
    if (const auto* q = as_quadratic()) return q->A * x + q->b;
    const auto& h = std::get<PseudoHuber>(form_);
    Vector g = h.ridge * x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double z = (x[i] - h.center[i]) / h.delta;
      g[i] += h.delta * z / std::sqrt(1.0 + z * z);
    }
    return g;
  }

 private:
  Form form_;
  std::size_t dim_ = 0;
  double m_ = 0.0;
  double L_ = 0.0;
};

enum class ProxKind { zero, interval, ball, l1, quadratic };

inline std::string to_string(ProxKind kind) {
  switch (kind) {
    case ProxKind::zero: return "zero";
    case ProxKind::interval: return "interval";
    case ProxKind::ball: return "ball";
    case ProxKind::l1: return "l1";
    case ProxKind::quadratic: return "quadratic";
  }
  return "unknown";
}

// Convex g with a closed-form proximal operator. The interval kind is the
// indicator of the box [lo, hi]^d; the ball kind is the indicator of the
// centred Euclidean ball of radius r.
class ProxFriendly {
 public:
  static ProxFriendly zero(std::size_t d) { return ProxFriendly(ProxKind::zero, d); }

  static ProxFriendly interval(std::size_t d, double lo, double hi) {
    if (!(lo <= hi)) throw DomainError("interval g: need lo <= hi");
    ProxFriendly g(ProxKind::interval, d);
    g.lo_ = lo;
    g.hi_ = hi;
    return g;
  }

  static ProxFriendly ball(std::size_t d, double r) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw DomainError("ball g: need r >= 0");
    ProxFriendly g(ProxKind::ball, d);
    g.radius_ = r;
    return g;
  }

  static ProxFriendly l1(std::size_t d, double weight) {
    if (!(weight >= 0.0)) throw DomainError("l1 g: need weight >= 0");
    ProxFriendly g(ProxKind::l1, d);
    g.weight_ = weight;
    return g;
  }

  // g(u) = 1/2 u^T A u + b^T u.
  static ProxFriendly quadratic(Matrix A, Vector b) {
    require_dims(static_cast<std::size_t>(A.rows()),
                 static_cast<std::size_t>(b.size()), "quadratic g");
    detail::spectrum_bounds(A, "quadratic g");
    ProxFriendly g(ProxKind::quadratic, static_cast<std::size_t>(b.size()));
    g.A_ = std::move(A);
    g.b_ = std::move(b);
    return g;
  }

  ProxKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double radius() const { return radius_; }
  double weight() const { return weight_; }
  const Matrix& A() const { return A_; }
  const Vector& b() const { return b_; }

  bool is_indicator() const {
    return kind_ == ProxKind::interval || kind_ == ProxKind::ball;
  }
  bool is_compact() const { return is_indicator(); }

  double diameter() const {
    switch (kind_) {
      case ProxKind::interval: return (hi_ - lo_) * std::sqrt(static_cast<double>(dim_));
      case ProxKind::ball: return 2.0 * radius_;
      default: return kInf;
    }
  }

  bool contains(const Vector& x, double tol = 0.0) const {
    require_dims(dim_, static_cast<std::size_t>(x.size()), "g.contains");
    switch (kind_) {
      case ProxKind::interval:
        return x.minCoeff() >= lo_ - tol && x.maxCoeff() <= hi_ + tol;
      case ProxKind::ball: return x.norm() <= radius_ + tol;
      default: return x.allFinite();
    }
  }

  // g(x); +inf outside the domain of an indicator.
  double value(const Vector& x) const {
    require_dims(dim_, static_cast<std::size_t>(x.size()), "g");
    switch (kind_) {
      case ProxKind::zero: return 0.0;
      case ProxKind::interval:
      case ProxKind::ball: return contains(x) ? 0.0 : kInf;
      case ProxKind::l1: return weight_ * x.lpNorm<1>();
      case ProxKind::quadratic: return 0.5 * x.dot(A_ * x) + b_.dot(x);
    }
    return kInf;
  }

  Vector prox(const Vector& x, double lambda) const {
    detail::require_positive_lambda(lambda, "prox");
    require_dims(dim_, static_cast<std::size_t>(x.size()), "prox");
    detail::require_finite(x, "prox");
    switch (kind_) {
      case ProxKind::zero: return x;
      case ProxKind::interval: return x.cwiseMax(lo_).cwiseMin(hi_);
      case ProxKind::ball: {
        const double n = x.norm();
        if (n <= radius_) return x;
        Vector u = x * (radius_ / n);
        // Rounding can leave |u| one ulp above r.
        while (u.norm() > radius_) u *= 1.0 - 0x1p-52;
        return u;
      }
      case ProxKind::l1: {
        const double tau = lambda * weight_;
        Vector u(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) {
          const double a = std::abs(x[i]) - tau;
          u[i] = a > 0.0 ? std::copysign(a, x[i]) : 0.0;
        }
        return u;
      }
      case ProxKind::quadratic: {
        const auto n = static_cast<Eigen::Index>(dim_);
        const Matrix M = Matrix::Identity(n, n) + lambda * A_;
        return M.llt().solve(x - lambda * b_);
      }
    }
    return x;
  }

  // Euclidean projection onto dom(g); identity for full-domain kinds.
  Vector project(const Vector& x) const {
    return is_indicator() ? prox(x, 1.0) : x;
  }

 private:
  ProxFriendly(ProxKind kind, std::size_t d) : kind_(kind), dim_(d) {
    if (d == 0) throw ShapeError("g: dimension must be positive");
  }

  ProxKind kind_;
  std::size_t dim_;
  double lo_ = -kInf;
  double hi_ = kInf;
  double radius_ = kInf;
  double weight_ = 0.0;
  Matrix A_;
  Vector b_;
};

// U = beta * f + g.
class Composite {
 public:
  Composite(Smooth f, ProxFriendly g, double beta)
      : f_(std::move(f)), g_(std::move(g)), beta_(beta) {
    require_dims(f_.dim(), g_.dim(), "composite");
    if (!(beta_ >= 0.0) || !std::isfinite(beta_)) {
      throw DomainError("composite: beta must be finite and nonnegative");
    }
  }

  const Smooth& f() const { return f_; }
  const ProxFriendly& g() const { return g_; }
  double beta() const { return beta_; }
  std::size_t dim() const { return f_.dim(); }

  double value(const Vector& x) const { return beta_ * f_.value(x) + g_.value(x); }

  Composite with_beta(double beta) const { return Composite(f_, g_, beta); }

 private:
  Smooth f_;
  ProxFriendly g_;
  double beta_;
};

inline Vector prox(const ProxFriendly& g, double lambda, const Vector& x) {
  return g.prox(x, lambda);
}

inline double moreau_envelope(const ProxFriendly& g, double lambda, const Vector& x) {
  const Vector p = g.prox(x, lambda);
  return g.value(p) + (p - x).squaredNorm() / (2.0 * lambda);
}

// Prox_g^lambda(x - beta lambda grad f(x)).
inline Vector split_prox(const Composite& c, double lambda, const Vector& x) {
  detail::require_positive_lambda(lambda, "split_prox");
  return c.g().prox(x - c.beta() * lambda * c.f().grad(x), lambda);
}

// Exact Prox_U^lambda(x). Closed forms cover: quadratic f with zero or
// quadratic g; diagonal quadratic f with interval or l1 g; isotropic
// quadratic f with ball g. Everything else runs accelerated proximal
// gradient on beta f(u) + |u - x|^2 / (2 lambda) to a 1e-13 step tolerance.
inline Vector joint_prox(const Composite& c, double lambda, const Vector& x) {
  detail::require_positive_lambda(lambda, "joint_prox");
  require_dims(c.dim(), static_cast<std::size_t>(x.size()), "joint_prox");
  const double beta = c.beta();
  const ProxFriendly& g = c.g();
  const auto n = x.size();
  if (const auto* q = c.f().as_quadratic()) {
    const Vector z = x - lambda * beta * q->b;
    switch (g.kind()) {
      case ProxKind::zero:
        return (Matrix::Identity(n, n) + lambda * beta * q->A).llt().solve(z);
      case ProxKind::quadratic:
        return (Matrix::Identity(n, n) + lambda * (beta * q->A + g.A()))
            .llt()
            .solve(z - lambda * g.b());
      case ProxKind::interval:
      case ProxKind::l1:
        if (detail::is_diagonal(q->A)) {
          const Vector scale = (1.0 + lambda * beta * q->A.diagonal().array()).matrix();
          Vector u = z.cwiseQuotient(scale);
          if (g.kind() == ProxKind::interval) return u.cwiseMax(g.lo()).cwiseMin(g.hi());
          for (Eigen::Index i = 0; i < n; ++i) {
            const double a = std::abs(u[i]) - lambda * g.weight() / scale[i];
            u[i] = a > 0.0 ? std::copysign(a, u[i]) : 0.0;
          }
          return u;
        }
        break;
      case ProxKind::ball:
        if (detail::is_isotropic(q->A)) {
          return g.prox(z / (1.0 + lambda * beta * q->A(0, 0)), 1.0);
        }
        break;
    }
  }
  if (beta == 0.0) return g.prox(x, lambda);
  // FISTA on h(u) = beta f(u) + |u - x|^2/(2 lambda), prox of g with step s.
  const double Lh = beta * c.f().smoothness() + 1.0 / lambda;
  const double mh = beta * c.f().strong_convexity() + 1.0 / lambda;
  const double step = 1.0 / Lh;
  const double q = std::sqrt(mh / Lh);
  const double momentum = (1.0 - q) / (1.0 + q);
  Vector u = g.prox(x, lambda);
  Vector v = u;
  for (int it = 0; it < 1000000; ++it) {
    const Vector grad = beta * c.f().grad(v) + (v - x) / lambda;
    const Vector next = g.prox(v - step * grad, step);
    const double change = (next - u).norm();
    v = next + momentum * (next - u);
    u = next;
    if (change <= 1e-13 * (1.0 + u.norm())) return u;
  }
  throw DomainError("joint_prox: inner solve did not converge");
}

enum class ProxRoute { split, joint };

inline Vector composite_prox(const Composite& c, double lambda, const Vector& x,
                             ProxRoute route) {
  return route == ProxRoute::split ? split_prox(c, lambda, x)
                                   : joint_prox(c, lambda, x);
}

// (mu(t) P - x_t) / sigma^2(t) with P the prox of U at x_t / mu(t).
inline Vector moreau_score(const Composite& c, const Schedule& s, double t,
                           const Vector& xt, ProxRoute route = ProxRoute::split) {
  const auto v = s.eval(t);
  if (v.lambda == 0.0) {
    throw DomainError("moreau_score: singular time (lambda(t) = 0)");
  }
  const Vector p = composite_prox(c, v.lambda, xt / v.mu, route);
  return (v.mu * p - xt) / v.sigma2;
}

// Fixed-lambda Moreau score (Prox_U^lambda(x) - x) / lambda.
inline Vector moreau_score_fixed(const Composite& c, double lambda, const Vector& x,
                                 ProxRoute route = ProxRoute::split) {
  return (composite_prox(c, lambda, x, route) - x) / lambda;
}

}  // namespace pgm
