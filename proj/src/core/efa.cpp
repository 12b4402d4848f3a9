#include "efaprune/efa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "efaprune/error.hpp"
#include "efaprune/linalg.hpp"

namespace efaprune {

namespace {

constexpr double kRateSlack = 1e-12;
constexpr std::size_t kMaxHessianParams = 64;
constexpr std::size_t kMaxActivationRows = 4096;

// Masks one weight tensor's gradient in place; returns the mask.
GradientMask mask_tensor(const Tensor& w, Tensor& g, double epsilon) {
  require(w.shape() == g.shape(), ErrorCode::shape_mismatch,
          "gradient shape " + shape_string(g.shape()) + " does not match weight " + shape_string(w.shape()));
  double max_impact = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) max_impact = std::max(max_impact, taylor_impact(w[i], g[i]));
  const double threshold = epsilon * max_impact;
  GradientMask mask(w.size(), 0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double t = taylor_impact(w[i], g[i]);
    if (t < threshold || (t == 0.0 && epsilon > 0.0)) {
      mask[i] = 1;
      g[i] = 0.0;
    }
  }
  return mask;
}

void collect_weight_layers(const std::vector<LayerSpec>& layers, std::vector<const LayerSpec*>& out) {
  for (const auto& l : layers) {
    if (l.kind == LayerKind::conv || l.kind == LayerKind::linear) out.push_back(&l);
    if (l.kind == LayerKind::residual_block) collect_weight_layers(l.block_members, out);
  }
}

std::size_t count_dominant(const std::vector<double>& ratios, double r) {
  if (r >= 1.0) {
    return static_cast<std::size_t>(std::count_if(ratios.begin(), ratios.end(), [](double x) { return x > 0.0; }));
  }
  std::size_t d = 0;
  double cumulative = 0.0;
  while (d < ratios.size() && cumulative < r - kRateSlack) cumulative += ratios[d++];
  return d;
}

void collect_conv_outputs(const std::vector<LayerSpec>& layers, const std::vector<LayerTrace>& traces,
                          std::vector<std::pair<const LayerSpec*, const Tensor*>>& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::conv) out.emplace_back(&layers[i], &traces[i].output);
    if (layers[i].kind == LayerKind::residual_block)
      collect_conv_outputs(layers[i].block_members, traces[i].members, out);
  }
}

}  // namespace

double taylor_impact(double w, double g) { return std::abs(g * w); }

MaskedSnapshot mask_gradients(const GradientSnapshot& snapshot, const ModelSpec& model, double epsilon) {
  require(epsilon >= 0.0, ErrorCode::invalid_argument, "taylor epsilon must be non-negative");
  MaskedSnapshot out;
  out.snapshot = snapshot;
  std::vector<const LayerSpec*> layers;
  collect_weight_layers(model.layers, layers);
  for (const LayerSpec* l : layers) {
    const std::string name = l->name + ".weight";
    auto g = out.snapshot.gradients.find(name);
    require(g != out.snapshot.gradients.end(), ErrorCode::shape_mismatch, "snapshot lacks gradient for " + name);
    out.masks[name] = mask_tensor(model.parameters.at(name), g->second, epsilon);
  }
  return out;
}

GradientMatrix unfold_kernel_gradient(const Tensor& layer_grad, std::string layer, const GradientMask* mask) {
  require(layer_grad.rank() == 4, ErrorCode::shape_mismatch,
          "kernel gradient must be <c_out,c_in,k,k>, got " + shape_string(layer_grad.shape()));
  const std::size_t c_out = layer_grad.dim(0);
  const std::size_t rows = layer_grad.size() / c_out;
  GradientMatrix gm;
  gm.layer = std::move(layer);
  gm.matrix = Tensor({rows, c_out});
  gm.mask.assign(rows * c_out, 0);
  for (std::size_t j = 0; j < c_out; ++j)
    for (std::size_t r = 0; r < rows; ++r) {
      gm.matrix.at(r, j) = layer_grad[j * rows + r];
      if (mask) gm.mask[r * c_out + j] = (*mask)[j * rows + r];
    }
  return gm;
}

Tensor fold_kernel_gradient(const GradientMatrix& gm, const Shape& weight_shape) {
  require(weight_shape.size() == 4 && gm.matrix.rank() == 2 && weight_shape[0] == gm.matrix.dim(1) &&
              shape_volume(weight_shape) == gm.matrix.size(),
          ErrorCode::shape_mismatch, "gradient matrix does not fold into " + shape_string(weight_shape));
  const std::size_t c_out = weight_shape[0];
  const std::size_t rows = gm.matrix.dim(0);
  Tensor out(weight_shape);
  for (std::size_t j = 0; j < c_out; ++j)
    for (std::size_t r = 0; r < rows; ++r) out[j * rows + r] = gm.matrix.at(r, j);
  return out;
}

LayerRedundancy layer_redundancy(const GradientMatrix& gm, double r, bool center) {
  require(r > 0.0 && r <= 1.0, ErrorCode::invalid_argument, "variance contribution rate must be in (0,1]");
  require(gm.matrix.rank() == 2, ErrorCode::shape_mismatch, "gradient matrix must be rank 2");
  const std::size_t c_out = gm.matrix.dim(1);
  // A single observation row has no sample variance; fall back to the
  // second moment so 1-input layers still get a spectrum.
  const bool use_center = center && gm.matrix.dim(0) >= 2;
  SpectralDecomposition s = pca_spectrum(gm.matrix, use_center);
  LayerRedundancy out;
  out.eigenvalues = s.eigenvalues;
  out.degenerate = s.degenerate;
  if (s.degenerate) {
    out.explained_variance.assign(c_out, 0.0);
    out.dominant = 0;
  } else {
    require(!s.explained_variance_ratio.empty(), ErrorCode::numerical,
            "gradient covariance of " + gm.layer + " has negative eigenvalues beyond round-off");
    out.explained_variance = s.explained_variance_ratio;
    out.dominant = count_dominant(out.explained_variance, r);
  }
  out.non_dominant = c_out - out.dominant;
  return out;
}

double filter_pruning_ratio(const std::vector<std::pair<std::size_t, std::size_t>>& per_layer) {
  require(!per_layer.empty(), ErrorCode::invalid_argument, "no layers to compute a pruning ratio over");
  std::size_t non_dominant = 0, total = 0;
  for (auto [nd, t] : per_layer) {
    require(t > 0 && nd <= t, ErrorCode::invalid_argument, "layer totals must be positive and >= non-dominant");
    non_dominant += nd;
    total += t;
  }
  return static_cast<double>(non_dominant) / static_cast<double>(total);
}

void validate(const EFAConfig& c) {
  require(c.variance_rate > 0.0 && c.variance_rate <= 1.0, ErrorCode::invalid_argument,
          "variance rate must be in (0,1]");
  require(std::isfinite(c.taylor_epsilon) && c.taylor_epsilon >= 0.0, ErrorCode::invalid_argument,
          "taylor epsilon must be non-negative");
  require(c.batch_size > 0, ErrorCode::invalid_argument, "calibration batch size must be positive");
}

EFAReport run_efa(const ModelSpec& model, const std::vector<GradientSnapshot>& snapshots, const EFAConfig& config) {
  validate(config);
  require(!snapshots.empty(), ErrorCode::invalid_argument, "no gradient snapshots");
  const std::size_t used = config.calibration_batches == 0 ? snapshots.size()
                                                           : std::min(config.calibration_batches, snapshots.size());
  EFAReport report;
  report.variance_rate = config.variance_rate;
  report.taylor_epsilon = config.taylor_epsilon;
  report.snapshot_count = used;
  std::vector<std::pair<std::size_t, std::size_t>> counts;
  for (const LayerSpec* l : prunable_layers(model)) {
    const std::string name = l->name + ".weight";
    const Tensor& w = model.parameters.at(name);
    std::size_t masked = 0;
    GradientMatrix gm;
    if (config.stack_snapshots) {
      const std::size_t rows = w.size() / w.dim(0);
      gm.layer = l->name;
      gm.matrix = Tensor({rows * used, w.dim(0)});
      gm.mask.assign(gm.matrix.size(), 0);
      for (std::size_t s = 0; s < used; ++s) {
        Tensor g = snapshots[s].gradients.at(name);
        GradientMask mask = mask_tensor(w, g, config.taylor_epsilon);
        masked += static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
        GradientMatrix part = unfold_kernel_gradient(g, l->name, &mask);
        std::copy(part.matrix.values().begin(), part.matrix.values().end(),
                  gm.matrix.values().begin() + static_cast<long>(s * part.matrix.size()));
        std::copy(part.mask.begin(), part.mask.end(), gm.mask.begin() + static_cast<long>(s * part.mask.size()));
      }
    } else {
      Tensor sum(w.shape());
      GradientMask all_masked(w.size(), 1);
      for (std::size_t s = 0; s < used; ++s) {
        Tensor g = snapshots[s].gradients.at(name);
        GradientMask mask = mask_tensor(w, g, config.taylor_epsilon);
        masked += static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
        for (std::size_t i = 0; i < g.size(); ++i) {
          sum[i] += g[i];
          all_masked[i] &= mask[i];
        }
      }
      for (double& v : sum.values()) v /= static_cast<double>(used);
      gm = unfold_kernel_gradient(sum, l->name, &all_masked);
    }
    LayerRedundancy red = layer_redundancy(gm, config.variance_rate, config.center);
    EFALayer row;
    row.layer = l->name;
    row.total_channels = l->out_channels;
    row.dominant = red.dominant;
    row.non_dominant = red.non_dominant;
    row.degenerate = red.degenerate;
    row.masked_fraction = static_cast<double>(masked) / static_cast<double>(w.size() * used);
    row.eigenvalues = std::move(red.eigenvalues);
    row.explained_variance = std::move(red.explained_variance);
    counts.emplace_back(row.non_dominant, row.total_channels);
    report.layers.push_back(std::move(row));
  }
  report.filter_pruning_ratio = filter_pruning_ratio(counts);
  return report;
}

EFAReport analyze(const ModelSpec& model, const Dataset& calibration, const EFAConfig& config) {
  validate(config);
  return run_efa(model, capture_gradient_matrices(model, calibration, config.batch_size), config);
}

EFAReport with_variance_rate(const EFAReport& report, double r) {
  require(r > 0.0 && r <= 1.0, ErrorCode::invalid_argument, "variance contribution rate must be in (0,1]");
  EFAReport out = report;
  out.variance_rate = r;
  std::vector<std::pair<std::size_t, std::size_t>> counts;
  for (auto& l : out.layers) {
    l.dominant = l.degenerate ? 0 : count_dominant(l.explained_variance, r);
    l.non_dominant = l.total_channels - l.dominant;
    counts.emplace_back(l.non_dominant, l.total_channels);
  }
  out.filter_pruning_ratio = filter_pruning_ratio(counts);
  return out;
}

FisherEstimate fisher_from_gradients(const std::vector<std::vector<double>>& per_sample_grads,
                                     std::vector<std::string> parameter_ids) {
  require(per_sample_grads.size() >= 2, ErrorCode::invalid_argument, "Fisher estimate needs at least 2 samples");
  const std::size_t p = per_sample_grads.front().size();
  require(p > 0, ErrorCode::invalid_argument, "empty gradient vectors");
  require(parameter_ids.empty() || parameter_ids.size() == p, ErrorCode::count_mismatch,
          "parameter id count does not match gradient length");
  Tensor obs({per_sample_grads.size(), p});
  for (std::size_t i = 0; i < per_sample_grads.size(); ++i) {
    require(per_sample_grads[i].size() == p, ErrorCode::shape_mismatch,
            "sample " + std::to_string(i) + " has " + std::to_string(per_sample_grads[i].size()) +
                " gradient entries, expected " + std::to_string(p));
    std::copy(per_sample_grads[i].begin(), per_sample_grads[i].end(), obs.data() + i * p);
  }
  FisherEstimate f;
  f.parameter_ids = std::move(parameter_ids);
  f.matrix = covariance(obs, false);
  f.sample_count = per_sample_grads.size();
  return f;
}

Tensor hessian_finite_difference(const ScalarLoss& loss, std::vector<double> theta, double h) {
  require(!theta.empty(), ErrorCode::invalid_argument, "no parameters for the Hessian");
  require(h > 0.0, ErrorCode::invalid_argument, "finite-difference step must be positive");
  const std::size_t p = theta.size();
  auto eval = [&](std::size_t i, double di, std::size_t j, double dj) {
    const double ti = theta[i], tj = theta[j];
    theta[i] += di;
    theta[j] += dj;
    const double v = loss(theta);
    theta[i] = ti;
    theta[j] = tj;
    return v;
  };
  const double f0 = loss(theta);
  Tensor hess({p, p});
  for (std::size_t i = 0; i < p; ++i) {
    hess.at(i, i) = (eval(i, h, i, 0.0) - 2.0 * f0 + eval(i, -h, i, 0.0)) / (h * h);
    for (std::size_t j = i + 1; j < p; ++j) {
      const double v =
          (eval(i, h, j, h) - eval(i, h, j, -h) - eval(i, -h, j, h) + eval(i, -h, j, -h)) / (4.0 * h * h);
      hess.at(i, j) = v;
      hess.at(j, i) = v;
    }
  }
  Tensor sym({p, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) sym.at(i, j) = 0.5 * (hess.at(i, j) + hess.at(j, i));
  require(sym.all_finite(), ErrorCode::numerical, "finite-difference Hessian has non-finite entries");
  return sym;
}

Tensor hessian_finite_difference(const ModelSpec& model, const Tensor& batch, std::span<const int> labels,
                                 const std::vector<ParamId>& param_ids, Mode mode, double h) {
  require(!param_ids.empty() && param_ids.size() <= kMaxHessianParams, ErrorCode::invalid_argument,
          "finite-difference Hessian takes 1..64 coordinates");
  ModelSpec probe = model;
  std::vector<double*> slots;
  std::vector<double> theta;
  for (const auto& [name, index] : param_ids) {
    auto it = probe.parameters.find(name);
    require(it != probe.parameters.end(), ErrorCode::invalid_argument, "unknown parameter " + name);
    require(index < it->second.size(), ErrorCode::invalid_argument, "index out of range for " + name);
    slots.push_back(it->second.data() + index);
    theta.push_back(*slots.back());
  }
  auto loss = [&](std::span<const double> t) {
    for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = t[i];
    return mean_loss(probe, batch, labels, mode);
  };
  return hessian_finite_difference(loss, theta, h);
}

SingularityReport detect_singularities(const ModelSpec& model, const Tensor& batch, double tol) {
  require(tol > 0.0 && tol < 1.0, ErrorCode::invalid_argument, "singularity tolerance must be in (0,1)");
  SingularityReport rep;
  rep.tolerance = tol;
  for (const LayerSpec* l : conv_layers(model.layers)) {
    const Tensor& w = model.parameters.at(l->name + ".weight");
    const std::size_t o = w.dim(0), d = w.size() / o;
    std::vector<double> norms(o);
    for (std::size_t j = 0; j < o; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < d; ++r) s += w[j * d + r] * w[j * d + r];
      norms[j] = std::sqrt(s);
    }
    const double mean = std::accumulate(norms.begin(), norms.end(), 0.0) / static_cast<double>(o);
    for (std::size_t j = 0; j < o; ++j)
      if (norms[j] == 0.0 || norms[j] < tol * mean) rep.elimination.emplace_back(l->name, j);
    for (std::size_t a = 0; a < o; ++a) {
      if (norms[a] == 0.0) continue;
      for (std::size_t b = a + 1; b < o; ++b) {
        if (norms[b] == 0.0) continue;
        double dot = 0.0;
        for (std::size_t r = 0; r < d; ++r) dot += w[a * d + r] * w[b * d + r];
        const double cosine = dot / (norms[a] * norms[b]);
        if (cosine > 1.0 - tol) rep.overlap.push_back({l->name, a, b, cosine});
      }
    }
  }

  std::vector<int> labels(batch.dim(0), 0);
  ForwardResult fwd = forward(model, batch, labels, Mode::eval);
  std::vector<std::pair<const LayerSpec*, const Tensor*>> outputs;
  collect_conv_outputs(model.layers, fwd.layers, outputs);
  for (auto [l, z] : outputs) {
    const std::size_t n = z->dim(0), c = z->dim(1), hw = z->dim(2) * z->dim(3);
    const std::size_t total = n * hw;
    const std::size_t step = (total + kMaxActivationRows - 1) / kMaxActivationRows;
    const std::size_t rows = (total + step - 1) / step;
    Tensor obs({rows, c});
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t s = r * step, img = s / hw, pos = s % hw;
      for (std::size_t ch = 0; ch < c; ++ch) obs.at(r, ch) = (*z)[(img * c + ch) * hw + pos];
    }
    SpectralDecomposition spec = pca_spectrum(obs, rows >= 2);
    const double top = spec.eigenvalues.empty() ? 0.0 : std::max(spec.eigenvalues.front(), 0.0);
    std::size_t rank = 0;
    for (double ev : spec.eigenvalues)
      if (top > 0.0 && ev > tol * tol * top) ++rank;
    rep.linearity.push_back({l->name, c, rank, c - rank});
  }
  return rep;
}

}  // namespace efaprune
