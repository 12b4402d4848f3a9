#include "efaprune/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "efaprune/error.hpp"
#include "efaprune/kernels.hpp"

namespace efaprune {

namespace {

constexpr double kBnEps = 1e-5;

struct Context {
  const ModelSpec& model;
  Mode mode;
  std::span<const int> labels;
};

const Tensor& param(const ModelSpec& m, const std::string& name) {
  auto it = m.parameters.find(name);
  require(it != m.parameters.end(), ErrorCode::shape_mismatch, "missing parameter " + name);
  return it->second;
}

const Tensor& buffer(const ModelSpec& m, const std::string& name) {
  auto it = m.buffers.find(name);
  require(it != m.buffers.end(), ErrorCode::shape_mismatch, "missing buffer " + name);
  return it->second;
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, s, p, oh, ow;
  bool pointwise() const { return k == 1 && s == 1 && p == 0; }
};

ConvGeometry conv_geometry(const Tensor& x, const LayerSpec& l) {
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = l.out_channels;
  g.k = l.kernel;
  g.s = l.stride;
  g.p = l.padding;
  g.oh = (g.h + 2 * g.p - g.k) / g.s + 1;
  g.ow = (g.w + 2 * g.p - g.k) / g.s + 1;
  return g;
}

// col is [c*k*k x oh*ow] for one image.
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t hw = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = col + ((c * g.k + ki) * g.k + kj) * hw;
        for (std::size_t oh = 0; oh < g.oh; ++oh) {
          const long ih = static_cast<long>(oh * g.s + ki) - static_cast<long>(g.p);
          double* dst = row + oh * g.ow;
          if (ih < 0 || ih >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(ih) * g.w;
          for (std::size_t ow = 0; ow < g.ow; ++ow) {
            const long iw = static_cast<long>(ow * g.s + kj) - static_cast<long>(g.p);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.w)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t hw = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c) {
    double* dxc = dx + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = col + ((c * g.k + ki) * g.k + kj) * hw;
        for (std::size_t oh = 0; oh < g.oh; ++oh) {
          const long ih = static_cast<long>(oh * g.s + ki) - static_cast<long>(g.p);
          if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
          double* dst = dxc + static_cast<std::size_t>(ih) * g.w;
          const double* src = row + oh * g.ow;
          for (std::size_t ow = 0; ow < g.ow; ++ow) {
            const long iw = static_cast<long>(ow * g.s + kj) - static_cast<long>(g.p);
            if (iw >= 0 && iw < static_cast<long>(g.w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

Tensor conv_forward(const Tensor& x, const LayerSpec& l, const ModelSpec& m) {
  const ConvGeometry g = conv_geometry(x, l);
  const Tensor& w = param(m, l.name + ".weight");
  const double* bias = l.bias ? param(m, l.name + ".bias").data() : nullptr;
  Tensor y({g.n, g.o, g.oh, g.ow});
  const std::size_t ckk = g.c * g.k * g.k;
  const std::size_t hw = g.oh * g.ow;
  std::vector<double> col(g.pointwise() ? 0 : ckk * hw);
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* xn = x.data() + n * g.c * g.h * g.w;
    const double* cols = xn;
    if (!g.pointwise()) {
      im2col(xn, g, col.data());
      cols = col.data();
    }
    double* yn = y.data() + n * g.o * hw;
    kernels::gemm_nn(g.o, hw, ckk, w.data(), cols, yn, false);
    if (bias)
      for (std::size_t o = 0; o < g.o; ++o)
        for (std::size_t i = 0; i < hw; ++i) yn[o * hw + i] += bias[o];
  }
  return y;
}

Tensor conv_backward(const Tensor& x, const Tensor& dy, const LayerSpec& l, const ModelSpec& m,
                     ParamStore& grads) {
  const ConvGeometry g = conv_geometry(x, l);
  const Tensor& w = param(m, l.name + ".weight");
  Tensor& dw = grads.at(l.name + ".weight");
  double* db = l.bias ? grads.at(l.name + ".bias").data() : nullptr;
  const std::size_t ckk = g.c * g.k * g.k;
  const std::size_t hw = g.oh * g.ow;
  std::vector<double> wt(ckk * g.o);
  kernels::transpose(g.o, ckk, w.data(), wt.data());
  std::vector<double> col(g.pointwise() ? 0 : ckk * hw);
  std::vector<double> dcol(ckk * hw);
  Tensor dx(x.shape());
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* xn = x.data() + n * g.c * g.h * g.w;
    const double* dyn = dy.data() + n * g.o * hw;
    const double* cols = xn;
    if (!g.pointwise()) {
      im2col(xn, g, col.data());
      cols = col.data();
    }
    kernels::gemm_nt(g.o, ckk, hw, dyn, cols, dw.data(), true);
    if (db)
      for (std::size_t o = 0; o < g.o; ++o) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += dyn[o * hw + i];
        db[o] += s;
      }
    double* dxn = dx.data() + n * g.c * g.h * g.w;
    if (g.pointwise()) {
      kernels::gemm_nn(ckk, hw, g.o, wt.data(), dyn, dxn, true);
    } else {
      kernels::gemm_nn(ckk, hw, g.o, wt.data(), dyn, dcol.data(), false);
      col2im_add(dcol.data(), g, dxn);
    }
  }
  return dx;
}

Tensor batchnorm_forward(const Tensor& x, const LayerSpec& l, const Context& ctx, LayerTrace& t) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const double* gamma = param(ctx.model, l.name + ".gamma").data();
  const double* beta = param(ctx.model, l.name + ".beta").data();
  t.mean.assign(c, 0.0);
  t.inv_std.assign(c, 0.0);
  t.batch_var.assign(c, 0.0);
  if (ctx.mode == Mode::train) {
    const double count = static_cast<double>(n * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) s += p[j];
      }
      const double mean = s / count;
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) v += (p[j] - mean) * (p[j] - mean);
      }
      v /= count;
      t.mean[ch] = mean;
      t.batch_var[ch] = v;
      t.inv_std[ch] = 1.0 / std::sqrt(v + kBnEps);
    }
  } else {
    const double* rm = buffer(ctx.model, l.name + ".running_mean").data();
    const double* rv = buffer(ctx.model, l.name + ".running_var").data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      t.mean[ch] = rm[ch];
      t.batch_var[ch] = rv[ch];
      t.inv_std[ch] = 1.0 / std::sqrt(rv[ch] + kBnEps);
    }
  }
  Tensor y(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x.data() + (i * c + ch) * hw;
      double* q = y.data() + (i * c + ch) * hw;
      const double scale = gamma[ch] * t.inv_std[ch];
      const double shift = beta[ch] - t.mean[ch] * scale;
      for (std::size_t j = 0; j < hw; ++j) q[j] = p[j] * scale + shift;
    }
  return y;
}

Tensor batchnorm_backward(const Tensor& x, const Tensor& dy, const LayerSpec& l, const Context& ctx,
                          const LayerTrace& t, ParamStore& grads) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const double* gamma = param(ctx.model, l.name + ".gamma").data();
  double* dgamma = grads.at(l.name + ".gamma").data();
  double* dbeta = grads.at(l.name + ".beta").data();
  const double count = static_cast<double>(n * hw);
  Tensor dx(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mean = t.mean[ch], inv = t.inv_std[ch];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* xp = x.data() + (i * c + ch) * hw;
      const double* dp = dy.data() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        sum_dy += dp[j];
        sum_dy_xhat += dp[j] * (xp[j] - mean) * inv;
      }
    }
    dgamma[ch] += sum_dy_xhat;
    dbeta[ch] += sum_dy;
    for (std::size_t i = 0; i < n; ++i) {
      const double* xp = x.data() + (i * c + ch) * hw;
      const double* dp = dy.data() + (i * c + ch) * hw;
      double* out = dx.data() + (i * c + ch) * hw;
      if (ctx.mode == Mode::train) {
        const double k = gamma[ch] * inv / count;
        for (std::size_t j = 0; j < hw; ++j) {
          const double xhat = (xp[j] - mean) * inv;
          out[j] = k * (count * dp[j] - sum_dy - xhat * sum_dy_xhat);
        }
      } else {
        const double k = gamma[ch] * inv;
        for (std::size_t j = 0; j < hw; ++j) out[j] = k * dp[j];
      }
    }
  }
  return dx;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

Tensor maxpool_forward(const Tensor& x, std::size_t k, LayerTrace& t) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / k, ow = w / k;
  Tensor y({n, c, oh, ow});
  t.argmax.assign(y.size(), 0);
  std::size_t out = 0;
  for (std::size_t i = 0; i < n * c; ++i) {
    const std::size_t base = i * h * w;
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t q = 0; q < ow; ++q, ++out) {
        std::size_t best = base + (r * k) * w + q * k;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const std::size_t idx = base + (r * k + a) * w + q * k + b;
            if (x[idx] > x[best]) best = idx;
          }
        y[out] = x[best];
        t.argmax[out] = best;
      }
  }
  return y;
}

Tensor maxpool_backward(const Tensor& x, const Tensor& dy, const LayerTrace& t) {
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[t.argmax[i]] += dy[i];
  return dx;
}

Tensor avgpool_forward(const Tensor& x, std::size_t kernel) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t kh = kernel == 0 ? h : kernel, kw = kernel == 0 ? w : kernel;
  const std::size_t oh = h / kh, ow = w / kw;
  Tensor y({n, c, oh, ow});
  const double inv = 1.0 / static_cast<double>(kh * kw);
  for (std::size_t i = 0; i < n * c; ++i)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t q = 0; q < ow; ++q) {
        double s = 0.0;
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b) s += x[i * h * w + (r * kh + a) * w + q * kw + b];
        y[(i * oh + r) * ow + q] = s * inv;
      }
  return y;
}

Tensor avgpool_backward(const Tensor& x, const Tensor& dy, std::size_t kernel) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t kh = kernel == 0 ? h : kernel, kw = kernel == 0 ? w : kernel;
  const std::size_t oh = h / kh, ow = w / kw;
  Tensor dx(x.shape());
  const double inv = 1.0 / static_cast<double>(kh * kw);
  for (std::size_t i = 0; i < n * c; ++i)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t q = 0; q < ow; ++q) {
        const double g = dy[(i * oh + r) * ow + q] * inv;
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b) dx[i * h * w + (r * kh + a) * w + q * kw + b] += g;
      }
  return dx;
}

Tensor linear_forward(const Tensor& x, const LayerSpec& l, const ModelSpec& m) {
  const std::size_t n = x.dim(0);
  const Tensor& w = param(m, l.name + ".weight");
  Tensor y({n, l.out_channels, 1, 1});
  kernels::gemm_nt(n, l.out_channels, l.in_channels, x.data(), w.data(), y.data(), false);
  if (l.bias) {
    const double* b = param(m, l.name + ".bias").data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < l.out_channels; ++o) y[i * l.out_channels + o] += b[o];
  }
  return y;
}

Tensor linear_backward(const Tensor& x, const Tensor& dy, const LayerSpec& l, const ModelSpec& m,
                       ParamStore& grads) {
  const std::size_t n = x.dim(0);
  const Tensor& w = param(m, l.name + ".weight");
  kernels::gemm_tn(l.out_channels, l.in_channels, n, dy.data(), x.data(), grads.at(l.name + ".weight").data(), true);
  if (l.bias) {
    double* db = grads.at(l.name + ".bias").data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < l.out_channels; ++o) db[o] += dy[i * l.out_channels + o];
  }
  Tensor dx(x.shape());
  kernels::gemm_nn(n, l.in_channels, l.out_channels, dy.data(), w.data(), dx.data(), false);
  return dx;
}

Tensor softmax_forward(const Tensor& x, std::span<const int> labels, double& loss, std::size_t& correct) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor p(x.shape());
  loss = 0.0;
  correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = x.data() + i * c;
    double* out = p.data() + i * c;
    const double zmax = *std::max_element(z, z + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - zmax);
    const double log_s = std::log(s);
    std::size_t arg = 0;
    for (std::size_t j = 0; j < c; ++j) {
      out[j] = std::exp(z[j] - zmax - log_s);
      if (z[j] > z[arg]) arg = j;
    }
    const auto y = static_cast<std::size_t>(labels[i]);
    loss -= z[y] - zmax - log_s;
    if (arg == y) ++correct;
  }
  loss /= static_cast<double>(n);
  return p;
}

Tensor shortcut(const Tensor& x, const Shape& out_shape) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2);
  const std::size_t oc = out_shape[1], oh = out_shape[2], ow = out_shape[3];
  const std::size_t s = h / oh;
  Tensor y(out_shape);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c && ch < oc; ++ch)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t q = 0; q < ow; ++q) y.at(i, ch, r, q) = x.at(i, ch, r * s, q * s);
  return y;
}

void shortcut_backward_add(const Tensor& dsum, Tensor& dx) {
  const std::size_t n = dx.dim(0), c = dx.dim(1), h = dx.dim(2);
  const std::size_t oc = dsum.dim(1), oh = dsum.dim(2), ow = dsum.dim(3);
  const std::size_t s = h / oh;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c && ch < oc; ++ch)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t q = 0; q < ow; ++q) dx.at(i, ch, r * s, q * s) += dsum.at(i, ch, r, q);
}

Tensor forward_layers(const std::vector<LayerSpec>& layers, const Tensor& input, const Context& ctx,
                      std::vector<LayerTrace>& traces, double& loss, std::size_t& correct) {
  traces.resize(layers.size());
  const Tensor* x = &input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    LayerTrace& t = traces[i];
    switch (l.kind) {
      case LayerKind::conv: t.output = conv_forward(*x, l, ctx.model); break;
      case LayerKind::batchnorm: t.output = batchnorm_forward(*x, l, ctx, t); break;
      case LayerKind::relu: t.output = relu_forward(*x); break;
      case LayerKind::maxpool: t.output = maxpool_forward(*x, l.kernel, t); break;
      case LayerKind::avgpool: t.output = avgpool_forward(*x, l.kernel); break;
      case LayerKind::flatten: t.output = x->reshaped({x->dim(0), x->size() / x->dim(0), 1, 1}); break;
      case LayerKind::linear: t.output = linear_forward(*x, l, ctx.model); break;
      case LayerKind::softmax_xent: t.output = softmax_forward(*x, ctx.labels, loss, correct); break;
      case LayerKind::residual_block: {
        double unused_loss = 0.0;
        std::size_t unused_correct = 0;
        Tensor main = forward_layers(l.block_members, *x, ctx, t.members, unused_loss, unused_correct);
        Tensor sum = shortcut(*x, main.shape());
        for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += main[j];
        t.output = relu_forward(sum);
        break;
      }
    }
    x = &t.output;
  }
  return *x;
}

Tensor backward_layers(const std::vector<LayerSpec>& layers, const Tensor& input, const Context& ctx,
                       const std::vector<LayerTrace>& traces, Tensor dout, ParamStore& grads) {
  for (std::size_t ii = layers.size(); ii-- > 0;) {
    const LayerSpec& l = layers[ii];
    const LayerTrace& t = traces[ii];
    const Tensor& x = ii == 0 ? input : traces[ii - 1].output;
    switch (l.kind) {
      case LayerKind::conv: dout = conv_backward(x, dout, l, ctx.model, grads); break;
      case LayerKind::batchnorm: dout = batchnorm_backward(x, dout, l, ctx, t, grads); break;
      case LayerKind::relu: dout = relu_backward(t.output, dout); break;
      case LayerKind::maxpool: dout = maxpool_backward(x, dout, t); break;
      case LayerKind::avgpool: dout = avgpool_backward(x, dout, l.kernel); break;
      case LayerKind::flatten: dout = dout.reshaped(x.shape()); break;
      case LayerKind::linear: dout = linear_backward(x, dout, l, ctx.model, grads); break;
      case LayerKind::softmax_xent: {
        const std::size_t n = x.dim(0), c = x.dim(1);
        Tensor dz = t.output;
        for (std::size_t i = 0; i < n; ++i) dz[i * c + static_cast<std::size_t>(ctx.labels[i])] -= 1.0;
        const double inv = 1.0 / static_cast<double>(n);
        for (auto& v : dz.values()) v *= inv;
        dout = std::move(dz);
        break;
      }
      case LayerKind::residual_block: {
        Tensor dsum = relu_backward(t.output, dout);
        Tensor dx = backward_layers(l.block_members, x, ctx, t.members, dsum, grads);
        shortcut_backward_add(dsum, dx);
        dout = std::move(dx);
        break;
      }
    }
  }
  return dout;
}

void check_batch(const ModelSpec& model, const Tensor& batch, std::span<const int> labels) {
  require(batch.rank() == 4, ErrorCode::shape_mismatch,
          "layer 0: batch must be <n,c,h,w>, got " + shape_string(batch.shape()));
  require(batch.dim(1) == model.input.channels && batch.dim(2) == model.input.height &&
              batch.dim(3) == model.input.width,
          ErrorCode::shape_mismatch,
          "layer 0: batch " + shape_string(batch.shape()) + " does not match model input " +
              shape_string({model.input.channels, model.input.height, model.input.width}));
  require(labels.size() == batch.dim(0), ErrorCode::shape_mismatch,
          "label count " + std::to_string(labels.size()) + " differs from batch size " + std::to_string(batch.dim(0)));
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < model.num_classes, ErrorCode::invalid_argument,
            "label " + std::to_string(y) + " outside [0," + std::to_string(model.num_classes) + ")");
}

void zero_like(const ParamStore& params, ParamStore& out) {
  for (const auto& [name, t] : params) out.emplace(name, Tensor(t.shape()));
}

void update_stats_rec(const std::vector<LayerSpec>& layers, const std::vector<LayerTrace>& traces,
                      const Tensor& input, ModelSpec& model, double momentum) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.kind == LayerKind::batchnorm) {
      const Tensor& x = i == 0 ? input : traces[i - 1].output;
      const double count = static_cast<double>(x.dim(0) * x.dim(2) * x.dim(3));
      const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
      Tensor& rm = model.buffers.at(l.name + ".running_mean");
      Tensor& rv = model.buffers.at(l.name + ".running_var");
      for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = (1.0 - momentum) * rm[c] + momentum * traces[i].mean[c];
        rv[c] = (1.0 - momentum) * rv[c] + momentum * traces[i].batch_var[c] * unbias;
      }
    } else if (l.kind == LayerKind::residual_block) {
      const Tensor& x = i == 0 ? input : traces[i - 1].output;
      update_stats_rec(l.block_members, traces[i].members, x, model, momentum);
    }
  }
}

}  // namespace

ForwardResult forward(const ModelSpec& model, const Tensor& batch, std::span<const int> labels, Mode mode) {
  check_batch(model, batch, labels);
  ForwardResult r;
  r.input = batch;
  r.mode = mode;
  Context ctx{model, mode, labels};
  forward_layers(model.layers, r.input, ctx, r.layers, r.loss, r.correct);
  return r;
}

GradientSnapshot backward(const ModelSpec& model, const ForwardResult& fwd, std::span<const int> labels) {
  GradientSnapshot snap;
  zero_like(model.parameters, snap.gradients);
  snap.loss = fwd.loss;
  snap.batch_size = fwd.input.dim(0);
  Context ctx{model, fwd.mode, labels};
  backward_layers(model.layers, fwd.input, ctx, fwd.layers, Tensor(fwd.layers.back().output.shape()), snap.gradients);
  return snap;
}

GradientSnapshot backward(const ModelSpec& model, const Tensor& batch, std::span<const int> labels, Mode mode) {
  return backward(model, forward(model, batch, labels, mode), labels);
}

std::vector<GradientSnapshot> capture_gradient_matrices(const ModelSpec& model, const Dataset& calibration,
                                                        std::size_t batch_size) {
  require(calibration.size() > 0, ErrorCode::invalid_argument, "calibration set is empty");
  require(batch_size > 0, ErrorCode::invalid_argument, "batch size must be positive");
  std::vector<GradientSnapshot> out;
  for (std::size_t begin = 0, b = 0; begin < calibration.size(); begin += batch_size, ++b) {
    std::vector<std::size_t> idx(std::min(batch_size, calibration.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const auto labels = batch_labels(calibration, idx);
    GradientSnapshot s = backward(model, batch_images(calibration, idx), labels, Mode::eval);
    s.batch_index = b;
    out.push_back(std::move(s));
  }
  return out;
}

double evaluate_accuracy(const ModelSpec& model, const Dataset& data, std::size_t batch_size) {
  require(data.size() > 0, ErrorCode::invalid_argument, "cannot evaluate on an empty dataset");
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.size() - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const auto labels = batch_labels(data, idx);
    correct += forward(model, batch_images(data, idx), labels, Mode::eval).correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double mean_loss(const ModelSpec& model, const Tensor& batch, std::span<const int> labels, Mode mode) {
  return forward(model, batch, labels, mode).loss;
}

std::vector<Tensor> layer_outputs(const ModelSpec& model, const Tensor& batch, Mode mode) {
  std::vector<int> labels(batch.dim(0), 0);
  ForwardResult r = forward(model, batch, labels, mode);
  std::vector<Tensor> out;
  out.reserve(r.layers.size());
  for (auto& t : r.layers) out.push_back(std::move(t.output));
  return out;
}

void update_running_stats(ModelSpec& model, const ForwardResult& fwd, double momentum) {
  update_stats_rec(model.layers, fwd.layers, fwd.input, model, momentum);
}

}  // namespace efaprune
