#include "efaprune/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "efaprune/efa.hpp"
#include "efaprune/error.hpp"
#include "efaprune/linalg.hpp"

namespace efaprune {

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// Number of eigenvalues of the tridiagonal (d, e) strictly below x.
std::size_t sturm_count(const std::vector<double>& d, const std::vector<double>& e, double x) {
  std::size_t count = 0;
  double q = 1.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double off = i == 0 ? 0.0 : e[i - 1] * e[i - 1];
    q = d[i] - x - (i == 0 ? 0.0 : off / q);
    if (q == 0.0) q = -1e-300;
    if (q < 0.0) ++count;
  }
  return count;
}

Tensor random_symmetric(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor m({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) m.at(i, j) = m.at(j, i) = u(rng);
  return m;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), ErrorCode::shape_mismatch,
          "naive_matmul: incompatible shapes");
  Tensor c({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

std::vector<double> bisection_eigenvalues(const Tensor& symmetric) {
  require(symmetric.rank() == 2 && symmetric.dim(0) == symmetric.dim(1), ErrorCode::shape_mismatch,
          "bisection_eigenvalues needs a square matrix");
  const std::size_t n = symmetric.dim(0);
  std::vector<double> a(symmetric.values().begin(), symmetric.values().end());
  auto A = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  // Householder reduction to tridiagonal form.
  for (std::size_t k = 0; k + 2 < n; ++k) {
    double alpha = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) alpha += A(i, k) * A(i, k);
    alpha = std::sqrt(alpha);
    if (alpha == 0.0) continue;
    if (A(k + 1, k) > 0) alpha = -alpha;
    std::vector<double> v(n, 0.0);
    v[k + 1] = A(k + 1, k) - alpha;
    for (std::size_t i = k + 2; i < n; ++i) v[i] = A(i, k);
    double vv = 0.0;
    for (double x : v) vv += x * x;
    if (vv == 0.0) continue;
    // A <- H A H with H = I - 2 v v^T / (v^T v).
    std::vector<double> p(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) p[i] += A(i, j) * v[j];
    for (double& x : p) x *= 2.0 / vv;
    double vp = 0.0;
    for (std::size_t i = 0; i < n; ++i) vp += v[i] * p[i];
    const double kcoef = vp / vv;
    std::vector<double> q(n);
    for (std::size_t i = 0; i < n; ++i) q[i] = p[i] - kcoef * v[i];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) A(i, j) -= v[i] * q[j] + q[i] * v[j];
  }
  std::vector<double> d(n), e(n > 0 ? n - 1 : 0);
  for (std::size_t i = 0; i < n; ++i) d[i] = A(i, i);
  for (std::size_t i = 0; i + 1 < n; ++i) e[i] = A(i + 1, i);
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = (i > 0 ? std::abs(e[i - 1]) : 0.0) + (i + 1 < n ? std::abs(e[i]) : 0.0);
    lo = std::min(lo, d[i] - r);
    hi = std::max(hi, d[i] + r);
  }
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k-th smallest eigenvalue: smallest x with count(x) > k.
    double l = lo - 1.0, h = hi + 1.0;
    for (int it = 0; it < 200 && h - l > 1e-15 * std::max(1.0, std::abs(l) + std::abs(h)); ++it) {
      const double mid = 0.5 * (l + h);
      if (sturm_count(d, e, mid) > k) h = mid;
      else l = mid;
    }
    out[n - 1 - k] = 0.5 * (l + h);
  }
  return out;
}

GradientCheck gradient_check(const ModelSpec& model, const Tensor& batch, std::span<const int> labels,
                             std::size_t samples, std::uint64_t seed, Mode mode, double h) {
  const GradientSnapshot snap = backward(model, batch, labels, mode);
  std::vector<std::string> names;
  for (const auto& [name, t] : model.parameters) names.push_back(name);
  require(!names.empty(), ErrorCode::invalid_argument, "model has no parameters");
  std::mt19937_64 rng(seed);
  ModelSpec probe = model;
  GradientCheck out;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::string& name = names[rng() % names.size()];
    Tensor& p = probe.parameters.at(name);
    const std::size_t idx = static_cast<std::size_t>(rng() % p.size());
    const double orig = p[idx];
    p[idx] = orig + h;
    const double up = mean_loss(probe, batch, labels, mode);
    p[idx] = orig - h;
    const double down = mean_loss(probe, batch, labels, mode);
    p[idx] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = snap.gradients.at(name)[idx];
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-8);
    ++out.sampled;
    if (rel > out.max_relative_error || out.worst_parameter.empty()) {
      out.max_relative_error = std::max(out.max_relative_error, rel);
      out.worst_parameter = name + "[" + std::to_string(idx) + "]";
    }
  }
  return out;
}

LogisticToy make_logistic_toy(std::size_t n, std::uint64_t seed, double theta1, double theta2) {
  require(n >= 2, ErrorCode::invalid_argument, "logistic toy needs at least 2 samples");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LogisticToy toy;
  toy.x.resize(2 * n);
  toy.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    toy.x[2 * i] = gauss(rng);
    toy.x[2 * i + 1] = gauss(rng);
    const double p = sigmoid(theta1 * toy.x[2 * i] + theta2 * toy.x[2 * i + 1]);
    toy.y[i] = unit(rng) < p ? 1 : 0;
  }
  return toy;
}

double logistic_mean_nll(const LogisticToy& toy, std::span<const double> theta) {
  double s = 0.0;
  for (std::size_t i = 0; i < toy.size(); ++i) {
    const double z = theta[0] * toy.x[2 * i] + theta[1] * toy.x[2 * i + 1];
    // log(1 + e^z) - y z, evaluated stably.
    s += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - (toy.y[i] ? z : 0.0);
  }
  return s / static_cast<double>(toy.size());
}

std::vector<double> logistic_gradient(const LogisticToy& toy, std::span<const double> theta) {
  std::vector<double> g(2, 0.0);
  for (std::size_t i = 0; i < toy.size(); ++i) {
    const double r = sigmoid(theta[0] * toy.x[2 * i] + theta[1] * toy.x[2 * i + 1]) - toy.y[i];
    g[0] += r * toy.x[2 * i];
    g[1] += r * toy.x[2 * i + 1];
  }
  for (double& v : g) v /= static_cast<double>(toy.size());
  return g;
}

double fit_logistic(LogisticToy& toy, double tol, std::size_t max_iter) {
  double norm = 0.0;
  for (std::size_t it = 0; it <= max_iter; ++it) {
    const auto g = logistic_gradient(toy, toy.theta);
    norm = std::hypot(g[0], g[1]);
    if (norm < tol || it == max_iter) break;
    double h00 = 0.0, h01 = 0.0, h11 = 0.0;
    for (std::size_t i = 0; i < toy.size(); ++i) {
      const double p = sigmoid(toy.theta[0] * toy.x[2 * i] + toy.theta[1] * toy.x[2 * i + 1]);
      const double w = p * (1.0 - p);
      h00 += w * toy.x[2 * i] * toy.x[2 * i];
      h01 += w * toy.x[2 * i] * toy.x[2 * i + 1];
      h11 += w * toy.x[2 * i + 1] * toy.x[2 * i + 1];
    }
    const double inv_n = 1.0 / static_cast<double>(toy.size());
    h00 *= inv_n;
    h01 *= inv_n;
    h11 *= inv_n;
    const double det = h00 * h11 - h01 * h01;
    require(det > 0.0, ErrorCode::numerical, "logistic Hessian is singular");
    toy.theta[0] -= (h11 * g[0] - h01 * g[1]) / det;
    toy.theta[1] -= (-h01 * g[0] + h00 * g[1]) / det;
  }
  return norm;
}

FisherHessianCheck fisher_hessian_check(std::size_t n, std::uint64_t seed) {
  LogisticToy toy = make_logistic_toy(n, seed);
  FisherHessianCheck out;
  out.gradient_norm = fit_logistic(toy);
  std::vector<std::vector<double>> grads(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = sigmoid(toy.theta[0] * toy.x[2 * i] + toy.theta[1] * toy.x[2 * i + 1]) - toy.y[i];
    grads[i] = {r * toy.x[2 * i], r * toy.x[2 * i + 1]};
  }
  out.fisher = fisher_from_gradients(grads, {"theta1", "theta2"}).matrix;
  out.hessian = hessian_finite_difference([&](std::span<const double> t) { return logistic_mean_nll(toy, t); },
                                          toy.theta);
  Tensor diff(out.fisher.shape());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = out.fisher[i] - out.hessian[i];
  out.relative_frobenius = frobenius_norm(diff) / frobenius_norm(out.hessian);
  return out;
}

std::vector<VerifyResult> run_verification(std::uint64_t seed) {
  std::vector<VerifyResult> results;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  {
    Tensor a({7, 5}), b({5, 3});
    for (double& v : a.values()) v = u(rng);
    for (double& v : b.values()) v = u(rng);
    const Tensor fast = matmul(a, b), ref = naive_matmul(a, b);
    double err = 0.0;
    for (std::size_t i = 0; i < fast.size(); ++i) err = std::max(err, std::abs(fast[i] - ref[i]));
    results.push_back({"matmul-vs-triple-loop", err <= 1e-12, err, 1e-12, "7x5 * 5x3"});
  }
  {
    double err = 0.0, trace_err = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor m = random_symmetric(8, rng);
      const auto jac = sym_eig(m).eigenvalues;
      const auto ref = bisection_eigenvalues(m);
      double sum = 0.0;
      for (std::size_t i = 0; i < 8; ++i) {
        err = std::max(err, std::abs(jac[i] - ref[i]));
        sum += jac[i];
      }
      trace_err = std::max(trace_err, std::abs(sum - trace(m)) / std::max(1e-300, std::abs(trace(m))));
    }
    results.push_back({"eigensolver-vs-sturm-bisection", err <= 1e-8 && trace_err <= 1e-9, err, 1e-8,
                       "10 random 8x8 symmetric; trace rel err " + fmt("%.3g", trace_err)});
  }
  {
    const ModelSpec net = build_model({conv(4, 3, 1, 1), batchnorm(), relu(), conv(5, 3, 1, 1, true), relu(),
                                       avgpool(0), flatten(), linear(3), softmax_xent()},
                                      {2, 5, 5}, 3, seed);
    Tensor batch({4, 2, 5, 5});
    for (double& v : batch.values()) v = u(rng);
    const std::vector<int> labels = {0, 1, 2, 1};
    const GradientCheck g = gradient_check(net, batch, labels, 40, seed);
    results.push_back({"finite-difference-gradients", g.max_relative_error <= 1e-4, g.max_relative_error, 1e-4,
                       std::to_string(g.sampled) + " coordinates, worst " + g.worst_parameter});
  }
  {
    const FisherHessianCheck f = fisher_hessian_check(50000, seed);
    results.push_back({"fisher-vs-hessian", f.gradient_norm < 1e-5 && f.relative_frobenius <= 0.15,
                       f.relative_frobenius, 0.15,
                       "logistic toy, 5e4 samples, gradient norm " + fmt("%.3g", f.gradient_norm)});
  }
  return results;
}

}  // namespace efaprune
