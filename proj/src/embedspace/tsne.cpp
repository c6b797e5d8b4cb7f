#include <algorithm>
#include <cmath>
#include <limits>

#include "fracgan/common/error.hpp"
#include "fracgan/common/rng.hpp"
#include "fracgan/embedspace/embedspace.hpp"

namespace fracgan::embedspace {

namespace {

constexpr double kPerplexityTolerance = 1e-4;
constexpr int kMaxBisectionSteps = 50;
constexpr double kMinProbability = 1e-12;

Matrix squared_distances(const Matrix& x) {
  Matrix d(x.rows, x.rows);
  for (size_t i = 0; i < x.rows; ++i) {
    for (size_t j = i + 1; j < x.rows; ++j) {
      double s = 0.0;
      for (size_t k = 0; k < x.cols; ++k) {
        const double diff = x(i, k) - x(j, k);
        s += diff * diff;
      }
      d(i, j) = s;
      d(j, i) = s;
    }
  }
  return d;
}

// Conditional row p_{.|i} for precision beta; returns its perplexity.
double conditional_row(const Matrix& d2, size_t i, double beta, std::vector<double>& row) {
  const size_t n = d2.rows;
  double min_d = std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < n; ++j) {
    if (j != i) min_d = std::min(min_d, d2(i, j));
  }
  double sum = 0.0;
  for (size_t j = 0; j < n; ++j) {
    row[j] = j == i ? 0.0 : std::exp(-beta * (d2(i, j) - min_d));
    sum += row[j];
  }
  double entropy = 0.0;
  for (size_t j = 0; j < n; ++j) {
    row[j] /= sum;
    if (row[j] > 0.0) entropy -= row[j] * std::log(row[j]);
  }
  return std::exp(entropy);
}

// Student-t kernel 1 / (1 + |y_i - y_j|^2) with a zero diagonal; `total`
// receives its sum.
Matrix student_kernel(const Matrix& y, double& total) {
  Matrix w(y.rows, y.rows);
  total = 0.0;
  for (size_t i = 0; i < y.rows; ++i) {
    for (size_t j = i + 1; j < y.rows; ++j) {
      double s = 0.0;
      for (size_t k = 0; k < y.cols; ++k) {
        const double diff = y(i, k) - y(j, k);
        s += diff * diff;
      }
      const double v = 1.0 / (1.0 + s);
      w(i, j) = v;
      w(j, i) = v;
      total += 2.0 * v;
    }
  }
  return w;
}

Matrix gradient_scaled(const Matrix& p, const Matrix& y, double exaggeration) {
  double total = 0.0;
  const Matrix w = student_kernel(y, total);
  Matrix g(y.rows, y.cols);
  for (size_t i = 0; i < y.rows; ++i) {
    for (size_t j = 0; j < y.rows; ++j) {
      if (i == j) continue;
      const double coeff = 4.0 * (exaggeration * p(i, j) - w(i, j) / total) * w(i, j);
      for (size_t k = 0; k < y.cols; ++k) g(i, k) += coeff * (y(i, k) - y(j, k));
    }
  }
  return g;
}

void center(Matrix& y) {
  for (size_t k = 0; k < y.cols; ++k) {
    double m = 0.0;
    for (size_t i = 0; i < y.rows; ++i) m += y(i, k);
    m /= static_cast<double>(y.rows);
    for (size_t i = 0; i < y.rows; ++i) y(i, k) -= m;
  }
}

}  // namespace

Affinities joint_affinities(const Matrix& x, double perplexity) {
  const size_t n = x.rows;
  if (n < 2) throw ConfigError("affinities need at least two points");
  if (!(perplexity > 0.0) || perplexity >= static_cast<double>(n)) {
    throw ConfigError("perplexity must be in (0, N)");
  }
  const Matrix d2 = squared_distances(x);
  Affinities a;
  a.p = Matrix(n, n);
  a.perplexity.resize(n);
  a.beta.resize(n);
  std::vector<double> row(n);

  for (size_t i = 0; i < n; ++i) {
    // Bisect on log(beta * scale); the scale puts the search near the
    // point's typical squared distance.
    double mean_d = 0.0;
    for (size_t j = 0; j < n; ++j) mean_d += d2(i, j);
    mean_d /= static_cast<double>(n - 1);
    const double scale = mean_d > 0.0 ? 1.0 / mean_d : 1.0;
    double lo = -50.0, hi = 50.0, u = 0.0;
    double perp = conditional_row(d2, i, scale * std::exp(u), row);
    for (int step = 0; step < kMaxBisectionSteps && std::abs(perp - perplexity) >= kPerplexityTolerance; ++step) {
      // Larger beta -> sharper distribution -> lower perplexity.
      if (perp > perplexity) {
        lo = u;
      } else {
        hi = u;
      }
      u = 0.5 * (lo + hi);
      perp = conditional_row(d2, i, scale * std::exp(u), row);
    }
    a.perplexity[i] = perp;
    a.beta[i] = scale * std::exp(u);
    for (size_t j = 0; j < n; ++j) a.p(i, j) = row[j];
  }

  const double denom = 2.0 * static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      const double v = (a.p(i, j) + a.p(j, i)) / denom;
      a.p(i, j) = v;
      a.p(j, i) = v;
    }
  }
  return a;
}

double tsne_kl(const Matrix& p, const Matrix& y) {
  double total = 0.0;
  const Matrix w = student_kernel(y, total);
  double kl = 0.0;
  for (size_t i = 0; i < p.rows; ++i) {
    for (size_t j = 0; j < p.rows; ++j) {
      if (i == j || p(i, j) <= 0.0) continue;
      const double q = std::max(w(i, j) / total, kMinProbability);
      kl += p(i, j) * std::log(p(i, j) / q);
    }
  }
  return kl;
}

Matrix tsne_gradient(const Matrix& p, const Matrix& y) { return gradient_scaled(p, y, 1.0); }

TsneResult tsne(const Matrix& x, const TsneConfig& config) {
  const size_t n = x.rows;
  if (n < 4) throw ConfigError("t-SNE needs at least 4 points");
  if (config.perplexity >= static_cast<double>(n)) {
    throw ConfigError("perplexity " + std::to_string(config.perplexity) + " must be below the point count " +
                      std::to_string(n));
  }
  if (config.iterations < config.exaggeration_iterations) {
    throw ConfigError("t-SNE iterations must cover the exaggeration window");
  }
  const Matrix p = joint_affinities(x, config.perplexity).p;

  TsneResult result;
  Rng rng(derive_seed(config.seed, 0x75E));
  result.y = Matrix(n, 2);
  for (auto& v : result.y.data) v = config.init_scale * rng.normal();
  center(result.y);

  Matrix update(n, 2), gains(n, 2, 1.0);
  result.kl_history.reserve(static_cast<size_t>(config.iterations) + 1);
  result.kl_history.push_back(tsne_kl(p, result.y));
  for (int it = 0; it < config.iterations; ++it) {
    const double exaggeration = it < config.exaggeration_iterations ? config.early_exaggeration : 1.0;
    const double momentum = it < config.momentum_switch ? config.momentum : config.final_momentum;
    const Matrix g = gradient_scaled(p, result.y, exaggeration);
    for (size_t k = 0; k < g.data.size(); ++k) {
      const bool same_sign = (g.data[k] > 0.0) == (update.data[k] > 0.0);
      gains.data[k] = same_sign ? std::max(gains.data[k] * 0.8, 0.01) : gains.data[k] + 0.2;
      update.data[k] = momentum * update.data[k] - config.learning_rate * gains.data[k] * g.data[k];
      result.y.data[k] += update.data[k];
    }
    center(result.y);
    result.kl_history.push_back(tsne_kl(p, result.y));
  }
  return result;
}

double silhouette_score(const Matrix& points, std::span<const int> labels) {
  const size_t n = points.rows;
  if (labels.size() != n) throw ConfigError("silhouette labels must match the point count");
  auto dist = [&](size_t i, size_t j) {
    double s = 0.0;
    for (size_t k = 0; k < points.cols; ++k) {
      const double d = points(i, k) - points(j, k);
      s += d * d;
    }
    return std::sqrt(s);
  };
  std::vector<int> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw ConfigError("silhouette needs at least two clusters");

  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> sum(classes.size(), 0.0);
    std::vector<size_t> count(classes.size(), 0);
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const size_t c = std::lower_bound(classes.begin(), classes.end(), labels[j]) - classes.begin();
      sum[c] += dist(i, j);
      ++count[c];
    }
    const size_t own = std::lower_bound(classes.begin(), classes.end(), labels[i]) - classes.begin();
    if (count[own] == 0) continue;  // singleton cluster scores 0
    const double a = sum[own] / static_cast<double>(count[own]);
    double b = std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < classes.size(); ++c) {
      if (c != own && count[c] > 0) b = std::min(b, sum[c] / static_cast<double>(count[c]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

}  // namespace fracgan::embedspace
