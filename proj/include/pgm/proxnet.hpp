#pragma once

// Learned proximal operator phi(x, lambda): a tanh MLP with layer widths
// [d+1, h, h, d], log(lambda) as the extra input channel and an optional
// residual skip (output = x + correction). Trained by Moreau score matching
// with the kernel loss 1 - N(phi - x0; 0, zeta^2 I).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pgm/errors.hpp"
#include "pgm/potentials.hpp"
#include "pgm/random.hpp"
#include "pgm/schedule.hpp"

namespace pgm {

struct Layer {
  Matrix W;
  Vector b;
};

struct ProxNetParams {
  std::vector<Layer> layers;
  bool skip = true;
  double lambda_input_scale = 0.1;  // log(lambda) is multiplied by this

  std::size_t dim() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().W.rows());
  }

  std::size_t hidden() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().W.rows());
  }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.W.allFinite() || !l.b.allFinite()) return false;
    }
    return true;
  }

  Vector flatten() const {
    Vector v(static_cast<Eigen::Index>(num_params()));
    Eigen::Index k = 0;
    for (const auto& l : layers) {
      v.segment(k, l.W.size()) = l.W.reshaped();
      k += l.W.size();
      v.segment(k, l.b.size()) = l.b;
      k += l.b.size();
    }
    return v;
  }

  void assign(const Vector& v) {
    require_dims(num_params(), static_cast<std::size_t>(v.size()), "proxnet assign");
    Eigen::Index k = 0;
    for (auto& l : layers) {
      l.W.reshaped() = v.segment(k, l.W.size());
      k += l.W.size();
      l.b = v.segment(k, l.b.size());
      k += l.b.size();
    }
  }

  // Checks the [d+1, h, h, d] layout.
  void validate() const {
    if (layers.size() != 3) throw ShapeError("proxnet: expected 3 layers");
    const auto d = layers[2].W.rows();
    const auto h = layers[0].W.rows();
    if (d < 1 || h < 1 || layers[0].W.cols() != d + 1 || layers[1].W.rows() != h ||
        layers[1].W.cols() != h || layers[2].W.cols() != h) {
      throw ShapeError("proxnet: inconsistent layer shapes");
    }
    for (const auto& l : layers) {
      if (l.b.size() != l.W.rows()) throw ShapeError("proxnet: bias size mismatch");
    }
    if (!all_finite()) throw DomainError("proxnet: non-finite weights");
  }
};

// Uniform(+-1/sqrt(fan_in)) weights and biases; the final layer starts at
// zero so the network is the identity (skip) or zero (no skip).
inline ProxNetParams init_params(std::size_t dim, std::size_t hidden, std::uint64_t seed,
                                 bool skip = true, double lambda_input_scale = 0.1) {
  if (dim == 0 || hidden == 0) throw ShapeError("proxnet: dimensions must be positive");
  Rng rng(seed, 0x9e7);
  auto dense = [&rng](std::size_t out, std::size_t in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(in));
    Layer l{Matrix(out, in), Vector(out)};
    for (Eigen::Index j = 0; j < l.W.cols(); ++j) {
      for (Eigen::Index i = 0; i < l.W.rows(); ++i) l.W(i, j) = rng.uniform(-a, a);
    }
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = rng.uniform(-a, a);
    return l;
  };
  ProxNetParams p;
  p.skip = skip;
  p.lambda_input_scale = lambda_input_scale;
  p.layers.push_back(dense(hidden, dim + 1));
  p.layers.push_back(dense(hidden, hidden));
  p.layers.push_back(Layer{Matrix::Zero(dim, hidden), Vector::Zero(dim)});
  return p;
}

namespace detail {

struct ForwardCache {
  Matrix input;  // (d+1) x n
  Matrix h1;     // h x n
  Matrix h2;     // h x n
  Matrix out;    // d x n
};

inline ForwardCache forward_cached(const ProxNetParams& p, const Matrix& X,
                                   const Vector& lambdas) {
  const auto d = static_cast<Eigen::Index>(p.dim());
  if (X.rows() != d) {
    throw ShapeError("proxnet forward: expected dimension " + std::to_string(d) +
                     ", got " + std::to_string(X.rows()));
  }
  if (lambdas.size() != X.cols()) throw ShapeError("proxnet forward: lambda count");
  if (!(lambdas.array() > 0.0).all()) throw DomainError("proxnet forward: lambda must be positive");
  ForwardCache c;
  c.input.resize(d + 1, X.cols());
  c.input.topRows(d) = X;
  c.input.row(d) = p.lambda_input_scale * lambdas.array().log().matrix().transpose();
  c.h1 = ((p.layers[0].W * c.input).colwise() + p.layers[0].b).array().tanh().matrix();
  c.h2 = ((p.layers[1].W * c.h1).colwise() + p.layers[1].b).array().tanh().matrix();
  c.out = (p.layers[2].W * c.h2).colwise() + p.layers[2].b;
  if (p.skip) c.out += X;
  return c;
}

}  // namespace detail

// Batched forward pass; columns of X are points.
inline Matrix forward_batch(const ProxNetParams& p, const Matrix& X, const Vector& lambdas) {
  return detail::forward_cached(p, X, lambdas).out;
}

inline Matrix forward_batch(const ProxNetParams& p, const Matrix& X, double lambda) {
  return forward_batch(p, X, Vector::Constant(X.cols(), lambda));
}

inline Vector forward(const ProxNetParams& p, const Vector& x, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("proxnet forward: lambda must be positive");
  require_dims(p.dim(), static_cast<std::size_t>(x.size()), "proxnet forward");
  return forward_batch(p, Matrix(x), Vector::Constant(1, lambda)).col(0);
}

// Upper bound on the Lipschitz constant of x -> forward(x, lambda): the
// product of spectral norms (tanh is 1-Lipschitz), plus 1 for the skip.
inline double lipschitz_upper_bound(const ProxNetParams& p) {
  const auto d = static_cast<Eigen::Index>(p.dim());
  auto spectral = [](const Matrix& M) {
    return Eigen::JacobiSVD<Matrix>(M).singularValues()(0);
  };
  const double prod = spectral(p.layers[2].W) * spectral(p.layers[1].W) *
                      spectral(p.layers[0].W.leftCols(d));
  return prod + (p.skip ? 1.0 : 0.0);
}

struct MatchingBatch {
  Matrix x0;       // d x n
  Matrix xt;       // d x n
  Vector lambdas;  // n
};

struct LossAndGrad {
  double loss;
  Vector grad;  // same layout as ProxNetParams::flatten
};

// Mean over the batch of 1 - (2 pi zeta^2)^{-d/2} exp(-|phi(x_t, lambda) - x0|^2 / (2 zeta^2)),
// with its exact parameter gradient.
inline LossAndGrad matching_loss(const ProxNetParams& p, const MatchingBatch& batch,
                                 double zeta) {
  if (!(zeta > 0.0)) throw DomainError("matching_loss: zeta must be positive");
  const auto n = batch.xt.cols();
  if (n == 0) throw ShapeError("matching_loss: empty batch");
  if (batch.x0.rows() != batch.xt.rows() || batch.x0.cols() != n) {
    throw ShapeError("matching_loss: x0 and x_t shapes differ");
  }
  const auto c = detail::forward_cached(p, batch.xt, batch.lambdas);
  const double d = static_cast<double>(p.dim());
  const double z2 = zeta * zeta;
  const double norm = std::pow(2.0 * M_PI * z2, -0.5 * d);
  const Matrix r = c.out - batch.x0;
  const Eigen::ArrayXd k = (-r.colwise().squaredNorm().array() / (2.0 * z2)).exp() * norm;
  const double inv_n = 1.0 / static_cast<double>(n);
  LossAndGrad res;
  res.loss = (1.0 - k).mean();

  // d loss / d out = k r / (zeta^2 n)
  const Matrix g3 = r * (k * (inv_n / z2)).matrix().asDiagonal();
  const Matrix a2 = (p.layers[2].W.transpose() * g3).cwiseProduct(
      (1.0 - c.h2.array().square()).matrix());
  const Matrix a1 = (p.layers[1].W.transpose() * a2).cwiseProduct(
      (1.0 - c.h1.array().square()).matrix());

  ProxNetParams grad = p;
  grad.layers[2].W = g3 * c.h2.transpose();
  grad.layers[2].b = g3.rowwise().sum();
  grad.layers[1].W = a2 * c.h1.transpose();
  grad.layers[1].b = a2.rowwise().sum();
  grad.layers[0].W = a1 * c.input.transpose();
  grad.layers[0].b = a1.rowwise().sum();
  res.grad = grad.flatten();
  return res;
}

inline double matching_loss_value(const ProxNetParams& p, const MatchingBatch& batch,
                                  double zeta) {
  if (!(zeta > 0.0)) throw DomainError("matching_loss: zeta must be positive");
  const Matrix out = forward_batch(p, batch.xt, batch.lambdas);
  const double d = static_cast<double>(p.dim());
  const double norm = std::pow(2.0 * M_PI * zeta * zeta, -0.5 * d);
  const Eigen::ArrayXd k =
      (-(out - batch.x0).colwise().squaredNorm().array() / (2.0 * zeta * zeta)).exp() * norm;
  return (1.0 - k).mean();
}

using PriorSampler = std::function<Vector(Rng&)>;

// Draws from exp(-g) for the kinds where it is a proper density: uniform on
// the box or ball (ball by rejection from its bounding box), independent
// Laplace coordinates for l1, and a Gaussian for quadratic g with A > 0.
inline PriorSampler prior_sampler_for(const ProxFriendly& g) {
  const auto d = static_cast<Eigen::Index>(g.dim());
  switch (g.kind()) {
    case ProxKind::interval: {
      if (!std::isfinite(g.lo()) || !std::isfinite(g.hi())) break;
      return [d, lo = g.lo(), hi = g.hi()](Rng& rng) {
        Vector x(d);
        for (Eigen::Index i = 0; i < d; ++i) x[i] = rng.uniform(lo, hi);
        return x;
      };
    }
    case ProxKind::ball:
      return [d, r = g.radius()](Rng& rng) {
        Vector x(d);
        do {
          for (Eigen::Index i = 0; i < d; ++i) x[i] = rng.uniform(-r, r);
        } while (x.norm() > r);
        return x;
      };
    case ProxKind::l1:
      if (!(g.weight() > 0.0)) break;
      return [d, w = g.weight()](Rng& rng) {
        Vector x(d);
        for (Eigen::Index i = 0; i < d; ++i) {
          const double e = -std::log1p(-rng.uniform()) / w;
          x[i] = rng.uniform() < 0.5 ? -e : e;
        }
        return x;
      };
    case ProxKind::quadratic: {
      Eigen::LLT<Matrix> llt(g.A());
      if (llt.info() != Eigen::Success) break;
      const Vector mean = llt.solve(-g.b());
      // Cov = A^{-1}: x = mean + L^{-T} z with A = L L^T.
      const Matrix Lt = llt.matrixU();
      return [mean, Lt](Rng& rng) -> Vector {
        const Vector z = rng.normal_vector(mean.size());
        return mean + Lt.triangularView<Eigen::Upper>().solve(z);
      };
    }
    default:
      break;
  }
  throw DomainError("prior sampler: exp(-g) is not a proper density for g kind " +
                    to_string(g.kind()));
}

struct TrainConfig {
  std::size_t epochs = 3000;
  std::size_t realizations = 8192;  // prior draws reused every epoch
  std::size_t batch_size = 64;
  double learning_rate = 3e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::size_t hidden = 64;
  bool skip = false;
  double lambda_input_scale = 0.1;
  double zeta_start = 1.0;
  double zeta_min = 0.0;     // 0 selects 0.05 sqrt(d)
  double zeta_hold = 0.3;    // fraction of epochs spent at zeta_min
  // Multiply the step by (2 pi zeta^2)^{d/2} zeta^2, cancelling the growth of
  // the gradient as zeta shrinks.
  bool normalize_lr = true;
  // Return the average of the end-of-epoch parameters over the hold phase
  // instead of the last iterate.
  bool average_hold = true;
  // "sgd" (momentum) or "adam"; Adam ignores normalize_lr and momentum.
  std::string optimizer = "adam";
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  // Scale the step by (1 + cos(pi epoch / epochs)) / 2.
  bool cosine_decay = true;

  double zeta_floor(std::size_t dim) const {
    return zeta_min > 0.0 ? zeta_min : 0.05 * std::sqrt(static_cast<double>(dim));
  }

  // First epoch spent at the floor.
  std::size_t hold_start() const {
    const auto ramp = static_cast<std::size_t>(
        std::floor(static_cast<double>(epochs) * (1.0 - zeta_hold)));
    return ramp <= 1 ? 0 : ramp - 1;
  }

  // Geometric anneal from zeta_start to the floor, then constant.
  double zeta(std::size_t epoch, std::size_t dim) const {
    const double floor = zeta_floor(dim);
    const std::size_t ramp = hold_start() + 1;
    if (ramp <= 1 || epoch + 1 >= ramp) return floor;
    const double frac = static_cast<double>(epoch) / static_cast<double>(ramp - 1);
    return zeta_start * std::pow(floor / zeta_start, frac);
  }

  double step_size(double zeta, std::size_t dim) const {
    if (!normalize_lr || optimizer == "adam") return learning_rate;
    return learning_rate * std::pow(2.0 * M_PI * zeta * zeta, 0.5 * static_cast<double>(dim)) *
           zeta * zeta;
  }

  void validate() const {
    if (batch_size == 0 || realizations == 0) throw ConfigError("train: empty batches");
    if (!(learning_rate > 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
      throw ConfigError("train: need learning_rate > 0 and momentum in [0, 1)");
    }
    if (!(zeta_start > 0.0) || zeta_min < 0.0 || zeta_hold < 0.0 || zeta_hold >= 1.0) {
      throw ConfigError("train: invalid zeta schedule");
    }
    if (hidden == 0) throw ConfigError("train: hidden width must be positive");
    if (optimizer != "sgd" && optimizer != "adam") {
      throw ConfigError("train: optimizer must be 'sgd' or 'adam'");
    }
  }
};

struct EpochRecord {
  std::size_t epoch;
  double zeta;
  double step;
  double loss;
};

struct TrainResult {
  ProxNetParams params;
  std::vector<EpochRecord> curve;
};

// Loss became non-finite; `checkpoint` holds the parameters after the last
// finite epoch.
struct TrainingError : Error {
  TrainingError(std::size_t epoch, ProxNetParams last)
      : Error("train: non-finite loss in epoch " + std::to_string(epoch)),
        epoch(epoch),
        checkpoint(std::move(last)) {}
  std::size_t epoch;
  ProxNetParams checkpoint;
};

// Moreau score matching: realisations x0 ~ exp(-g) drawn once; every step
// samples t ~ U[t_min, T], x_t = x0 + sqrt(lambda(t)) xi and descends on the
// kernel loss with Adam or SGD + momentum. Deterministic given cfg.seed.
inline TrainResult train(const TrainConfig& cfg, const PriorSampler& prior,
                         const Schedule& s, std::size_t dim) {
  cfg.validate();
  if (cfg.zeta_start < cfg.zeta_floor(dim)) {
    throw ConfigError("train: zeta_start below the zeta floor");
  }
  TrainResult res;
  res.params = init_params(dim, cfg.hidden, cfg.seed, cfg.skip, cfg.lambda_input_scale);
  if (cfg.epochs == 0) return res;

  Rng data_rng(cfg.seed, 1);
  Rng rng(cfg.seed, 2);
  const auto d = static_cast<Eigen::Index>(dim);
  Matrix data(d, static_cast<Eigen::Index>(cfg.realizations));
  for (Eigen::Index i = 0; i < data.cols(); ++i) {
    const Vector x = prior(data_rng);
    require_dims(dim, static_cast<std::size_t>(x.size()), "prior sample");
    data.col(i) = x;
  }
  const double t_lo = s.grid_clamp();
  const double T = s.horizon();

  Vector theta = res.params.flatten();
  Vector velocity = Vector::Zero(theta.size());
  Vector second = Vector::Zero(theta.size());
  const bool adam = cfg.optimizer == "adam";
  double b1_pow = 1.0, b2_pow = 1.0;
  ProxNetParams work = res.params;
  ProxNetParams stable = res.params;
  Vector tail_sum = Vector::Zero(theta.size());
  std::size_t tail_count = 0;
  std::vector<std::size_t> order(cfg.realizations);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t B = cfg.batch_size;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double zeta = cfg.zeta(epoch, dim);
    double step = cfg.step_size(zeta, dim);
    if (cfg.cosine_decay) {
      step *= 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(cfg.epochs)));
    }
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t n = std::min(B, order.size() - start);
      MatchingBatch batch{Matrix(d, static_cast<Eigen::Index>(n)),
                          Matrix(d, static_cast<Eigen::Index>(n)),
                          Vector(static_cast<Eigen::Index>(n))};
      for (std::size_t j = 0; j < n; ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        const double t = rng.uniform(t_lo, T);
        const double lambda = s.eval(t).lambda;
        batch.lambdas[col] = lambda;
        batch.x0.col(col) = data.col(static_cast<Eigen::Index>(order[start + j]));
        batch.xt.col(col) = batch.x0.col(col) + std::sqrt(lambda) * rng.normal_vector(d);
      }
      work.assign(theta);
      const auto lg = matching_loss(work, batch, zeta);
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
        throw TrainingError(epoch, stable);
      }
      if (adam) {
        b1_pow *= cfg.adam_beta1;
        b2_pow *= cfg.adam_beta2;
        velocity = cfg.adam_beta1 * velocity + (1.0 - cfg.adam_beta1) * lg.grad;
        second = cfg.adam_beta2 * second + (1.0 - cfg.adam_beta2) * lg.grad.cwiseAbs2();
        const double scale = step * std::sqrt(1.0 - b2_pow) / (1.0 - b1_pow);
        theta -= scale * (velocity.array() / (second.array().sqrt() + 1e-8)).matrix();
      } else {
        velocity = cfg.momentum * velocity + lg.grad;
        theta -= step * velocity;
      }
      loss_sum += lg.loss;
      ++batches;
    }
    work.assign(theta);
    if (!work.all_finite()) throw TrainingError(epoch, stable);
    stable = work;
    if (cfg.average_hold && epoch >= cfg.hold_start()) {
      tail_sum += theta;
      ++tail_count;
    }
    res.curve.push_back({epoch, zeta, step, loss_sum / static_cast<double>(batches)});
  }
  res.params = stable;
  if (tail_count > 0) res.params.assign(tail_sum / static_cast<double>(tail_count));
  return res;
}

// Mean |forward(x, lambda) - clamp(x, lo, hi)| over a uniform grid of x in
// [x_lo, x_hi] (d = 1) and the given lambdas.
inline double clamp_error(const ProxNetParams& p, double lo, double hi,
                          const std::vector<double>& lambdas, double x_lo = -3.0,
                          double x_hi = 3.0, std::size_t points = 121) {
  require_dims(1, p.dim(), "clamp_error");
  Matrix X(1, static_cast<Eigen::Index>(points));
  for (std::size_t i = 0; i < points; ++i) {
    X(0, static_cast<Eigen::Index>(i)) =
        x_lo + (x_hi - x_lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  const Matrix target = X.cwiseMax(lo).cwiseMin(hi);
  double total = 0.0;
  for (double lambda : lambdas) {
    total += (forward_batch(p, X, lambda) - target).cwiseAbs().mean();
  }
  return total / static_cast<double>(lambdas.size());
}

inline nlohmann::json to_json(const ProxNetParams& p) {
  nlohmann::json j;
  j["format"] = "pgm-proxnet";
  j["version"] = 1;
  j["activation"] = "tanh";
  j["skip"] = p.skip;
  j["lambda_input_scale"] = p.lambda_input_scale;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : p.layers) {
    nlohmann::json W = nlohmann::json::array();
    for (Eigen::Index i = 0; i < l.W.rows(); ++i) {
      std::vector<double> row(l.W.cols());
      for (Eigen::Index k = 0; k < l.W.cols(); ++k) row[static_cast<std::size_t>(k)] = l.W(i, k);
      W.push_back(row);
    }
    j["layers"].push_back({{"W", W}, {"b", std::vector<double>(l.b.begin(), l.b.end())}});
  }
  return j;
}

inline ProxNetParams params_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw ConfigError("proxnet: unsupported version");
    if (j.at("activation").get<std::string>() != "tanh") {
      throw ConfigError("proxnet: only tanh activation is supported");
    }
    ProxNetParams p;
    p.skip = j.at("skip").get<bool>();
    p.lambda_input_scale = j.value("lambda_input_scale", 0.1);
    for (const auto& lj : j.at("layers")) {
      const auto rows = lj.at("W").get<std::vector<std::vector<double>>>();
      const auto b = lj.at("b").get<std::vector<double>>();
      if (rows.empty()) throw ShapeError("proxnet: empty weight matrix");
      Layer l{Matrix(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(rows.front().size())),
              Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()))};
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) throw ShapeError("proxnet: ragged W");
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
          l.W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
        }
      }
      p.layers.push_back(std::move(l));
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("proxnet: ") + e.what());
  }
}

inline void save_params(const ProxNetParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << to_json(p).dump(1) << '\n';
}

inline ProxNetParams load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return params_from_json(j);
}

}  // namespace pgm
