#include "efaprune/model.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "efaprune/error.hpp"

namespace efaprune {

namespace {

struct Geometry {
  std::size_t c, h, w;
};

std::string layer_label(const LayerSpec& l) {
  return l.name.empty() ? std::string(layer_kind_name(l.kind))
                        : l.name + " (" + layer_kind_name(l.kind) + ")";
}

[[noreturn]] void shape_error(const std::vector<std::string>& trace, const LayerSpec& l,
                              const std::string& what) {
  std::string msg = "layer " + layer_label(l) + ": " + what + "; trace:";
  for (const auto& t : trace) msg += " " + t;
  fail(ErrorCode::shape_mismatch, msg);
}

// Walks the layers, writing inferred channel counts when `assign` is set and
// otherwise checking that the stored counts agree.
Geometry infer(std::vector<LayerSpec>& layers, Geometry g, bool assign,
               std::vector<std::string>& trace, std::vector<InputShape>* shapes) {
  for (std::size_t idx = 0; idx < layers.size(); ++idx) {
    LayerSpec& l = layers[idx];
    trace.push_back(layer_label(l) + shape_string({g.c, g.h, g.w}));
    auto set_in = [&](std::size_t in) {
      if (assign) {
        l.in_channels = in;
      } else if (l.in_channels != in) {
        shape_error(trace, l,
                    "expects " + std::to_string(l.in_channels) + " input channels but producer gives " +
                        std::to_string(in));
      }
    };
    auto set_out_passthrough = [&] {
      if (assign) {
        l.out_channels = l.in_channels;
      } else if (l.out_channels != l.in_channels) {
        shape_error(trace, l, "channel-preserving layer has in != out");
      }
    };
    switch (l.kind) {
      case LayerKind::conv: {
        set_in(g.c);
        if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0)
          shape_error(trace, l, "conv needs positive out_channels, kernel and stride");
        if (g.h + 2 * l.padding < l.kernel || g.w + 2 * l.padding < l.kernel)
          shape_error(trace, l, "kernel larger than padded input");
        g.h = (g.h + 2 * l.padding - l.kernel) / l.stride + 1;
        g.w = (g.w + 2 * l.padding - l.kernel) / l.stride + 1;
        g.c = l.out_channels;
        break;
      }
      case LayerKind::batchnorm:
      case LayerKind::relu:
        set_in(g.c);
        set_out_passthrough();
        break;
      case LayerKind::maxpool:
        set_in(g.c);
        set_out_passthrough();
        if (l.kernel == 0 || g.h < l.kernel || g.w < l.kernel)
          shape_error(trace, l, "pool window larger than input");
        g.h /= l.kernel;
        g.w /= l.kernel;
        break;
      case LayerKind::avgpool:
        set_in(g.c);
        set_out_passthrough();
        if (l.kernel == 0) {
          g.h = g.w = 1;
        } else {
          if (g.h < l.kernel || g.w < l.kernel) shape_error(trace, l, "pool window larger than input");
          g.h /= l.kernel;
          g.w /= l.kernel;
        }
        break;
      case LayerKind::flatten:
        set_in(g.c);
        if (assign) l.out_channels = g.c * g.h * g.w;
        else if (l.out_channels != g.c * g.h * g.w) shape_error(trace, l, "flatten width mismatch");
        g = {g.c * g.h * g.w, 1, 1};
        break;
      case LayerKind::linear:
        if (g.h != 1 || g.w != 1) shape_error(trace, l, "linear layer needs a flattened input");
        set_in(g.c);
        if (l.out_channels == 0) shape_error(trace, l, "linear needs positive out_features");
        g.c = l.out_channels;
        break;
      case LayerKind::residual_block: {
        set_in(g.c);
        if (l.block_members.empty()) shape_error(trace, l, "empty residual block");
        Geometry out = infer(l.block_members, g, assign, trace, nullptr);
        if (out.c < g.c) shape_error(trace, l, "residual block cannot shrink channels (identity shortcut)");
        if (out.h == 0 || g.h % out.h != 0 || g.w % out.w != 0 || g.h / out.h != g.w / out.w)
          shape_error(trace, l, "residual block spatial stride is not an integer");
        if (assign) l.out_channels = out.c;
        else if (l.out_channels != out.c) shape_error(trace, l, "residual block out_channels mismatch");
        g = out;
        break;
      }
      case LayerKind::softmax_xent:
        set_in(g.c);
        set_out_passthrough();
        if (g.h != 1 || g.w != 1) shape_error(trace, l, "softmax-xent needs a flattened input");
        if (idx + 1 != layers.size()) shape_error(trace, l, "softmax-xent must be the final layer");
        break;
    }
    if (shapes) shapes->push_back({g.c, g.h, g.w});
    trace.pop_back();
  }
  return g;
}

void assign_names(std::vector<LayerSpec>& layers, const std::string& prefix) {
  char buf[32];
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (prefix.empty()) {
      std::snprintf(buf, sizeof buf, "L%03zu", i);
      layers[i].name = buf;
    } else {
      layers[i].name = prefix + "." + std::to_string(i);
    }
    if (layers[i].kind == LayerKind::residual_block) assign_names(layers[i].block_members, layers[i].name);
  }
}

void init_params(const std::vector<LayerSpec>& layers, std::mt19937_64& rng, ParamStore& params,
                 ParamStore& buffers) {
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::conv: {
        const std::size_t fan_in = l.in_channels * l.kernel * l.kernel;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        Tensor w({l.out_channels, l.in_channels, l.kernel, l.kernel});
        for (auto& v : w.values()) v = dist(rng);
        params[l.name + ".weight"] = std::move(w);
        if (l.bias) params[l.name + ".bias"] = Tensor({l.out_channels});
        break;
      }
      case LayerKind::linear: {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(l.in_channels)));
        Tensor w({l.out_channels, l.in_channels});
        for (auto& v : w.values()) v = dist(rng);
        params[l.name + ".weight"] = std::move(w);
        if (l.bias) params[l.name + ".bias"] = Tensor({l.out_channels});
        break;
      }
      case LayerKind::batchnorm:
        params[l.name + ".gamma"] = Tensor({l.in_channels}, 1.0);
        params[l.name + ".beta"] = Tensor({l.in_channels}, 0.0);
        buffers[l.name + ".running_mean"] = Tensor({l.in_channels}, 0.0);
        buffers[l.name + ".running_var"] = Tensor({l.in_channels}, 1.0);
        break;
      case LayerKind::residual_block:
        init_params(l.block_members, rng, params, buffers);
        break;
      default:
        break;
    }
  }
}

void check_params(const std::vector<LayerSpec>& layers, const ModelSpec& m, std::size_t& expected) {
  auto expect = [&](const std::string& name, const Shape& shape, const ParamStore& store) {
    auto it = store.find(name);
    require(it != store.end(), ErrorCode::shape_mismatch, "missing tensor " + name);
    require(it->second.shape() == shape, ErrorCode::shape_mismatch,
            "tensor " + name + " has shape " + shape_string(it->second.shape()) + ", layer expects " +
                shape_string(shape));
  };
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::conv:
        expect(l.name + ".weight", {l.out_channels, l.in_channels, l.kernel, l.kernel}, m.parameters);
        ++expected;
        if (l.bias) expect(l.name + ".bias", {l.out_channels}, m.parameters), ++expected;
        break;
      case LayerKind::linear:
        expect(l.name + ".weight", {l.out_channels, l.in_channels}, m.parameters);
        ++expected;
        if (l.bias) expect(l.name + ".bias", {l.out_channels}, m.parameters), ++expected;
        break;
      case LayerKind::batchnorm:
        expect(l.name + ".gamma", {l.in_channels}, m.parameters);
        expect(l.name + ".beta", {l.in_channels}, m.parameters);
        expect(l.name + ".running_mean", {l.in_channels}, m.buffers);
        expect(l.name + ".running_var", {l.in_channels}, m.buffers);
        expected += 2;
        break;
      case LayerKind::residual_block:
        check_params(l.block_members, m, expected);
        break;
      default:
        break;
    }
  }
}

void collect_convs(const std::vector<LayerSpec>& layers, std::vector<const LayerSpec*>& out) {
  for (const auto& l : layers) {
    if (l.kind == LayerKind::conv) out.push_back(&l);
    if (l.kind == LayerKind::residual_block) collect_convs(l.block_members, out);
  }
}

void accumulate_stats(const std::vector<LayerSpec>& layers, Geometry g, ModelStats& s) {
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::conv: {
        const std::size_t oh = (g.h + 2 * l.padding - l.kernel) / l.stride + 1;
        const std::size_t ow = (g.w + 2 * l.padding - l.kernel) / l.stride + 1;
        const std::uint64_t weights = std::uint64_t{l.out_channels} * l.in_channels * l.kernel * l.kernel;
        s.parameters += weights + (l.bias ? l.out_channels : 0);
        s.flops += weights * oh * ow;
        if (l.prunable) s.filters += l.out_channels;
        g = {l.out_channels, oh, ow};
        break;
      }
      case LayerKind::linear:
        s.parameters += std::uint64_t{l.in_channels} * l.out_channels + (l.bias ? l.out_channels : 0);
        s.flops += std::uint64_t{l.in_channels} * l.out_channels;
        g = {l.out_channels, 1, 1};
        break;
      case LayerKind::batchnorm:
        s.parameters += 2 * l.in_channels;
        break;
      case LayerKind::maxpool:
        g.h /= l.kernel;
        g.w /= l.kernel;
        break;
      case LayerKind::avgpool:
        if (l.kernel == 0) g.h = g.w = 1;
        else g.h /= l.kernel, g.w /= l.kernel;
        break;
      case LayerKind::flatten:
        g = {g.c * g.h * g.w, 1, 1};
        break;
      case LayerKind::residual_block: {
        accumulate_stats(l.block_members, g, s);
        std::vector<std::string> trace;
        auto members = l.block_members;
        g = infer(members, g, true, trace, nullptr);
        break;
      }
      default:
        break;
    }
  }
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::linear: return "linear";
    case LayerKind::residual_block: return "residual-block";
    case LayerKind::flatten: return "flatten";
    case LayerKind::softmax_xent: return "softmax-xent";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (LayerKind k : {LayerKind::conv, LayerKind::batchnorm, LayerKind::relu, LayerKind::maxpool,
                      LayerKind::avgpool, LayerKind::linear, LayerKind::residual_block,
                      LayerKind::flatten, LayerKind::softmax_xent})
    if (name == layer_kind_name(k)) return k;
  fail(ErrorCode::invalid_argument, "unknown layer kind '" + name + "'");
}

Architecture architecture_of(const ModelSpec& model) {
  return {model.layers, model.input, model.num_classes};
}

std::vector<InputShape> infer_shapes(const std::vector<LayerSpec>& layers, InputShape input) {
  auto copy = layers;
  std::vector<std::string> trace;
  std::vector<InputShape> shapes;
  infer(copy, {input.channels, input.height, input.width}, false, trace, &shapes);
  return shapes;
}

ModelSpec build_model(std::vector<LayerSpec> layers, InputShape input, std::size_t num_classes,
                      std::uint64_t seed, bool rename) {
  require(!layers.empty(), ErrorCode::invalid_argument, "model has no layers");
  require(input.channels > 0 && input.height > 0 && input.width > 0, ErrorCode::invalid_argument,
          "input shape must be positive");
  if (rename) assign_names(layers, "");
  std::vector<std::string> trace;
  Geometry out = infer(layers, {input.channels, input.height, input.width}, true, trace, nullptr);
  require(layers.back().kind == LayerKind::softmax_xent, ErrorCode::invalid_argument,
          "model must end with a softmax-xent layer");
  require(out.c == num_classes, ErrorCode::shape_mismatch,
          "model produces " + std::to_string(out.c) + " outputs for " + std::to_string(num_classes) +
              " classes");
  return instantiate({std::move(layers), input, num_classes}, seed);
}

ModelSpec instantiate(const Architecture& arch, std::uint64_t seed) {
  validate_architecture(arch);
  ModelSpec m;
  m.layers = arch.layers;
  m.input = arch.input;
  m.num_classes = arch.num_classes;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  init_params(m.layers, rng, m.parameters, m.buffers);
  return m;
}

void validate_architecture(const Architecture& arch) {
  require(!arch.layers.empty(), ErrorCode::invalid_argument, "model has no layers");
  auto copy = arch.layers;
  std::vector<std::string> trace;
  Geometry out = infer(copy, {arch.input.channels, arch.input.height, arch.input.width}, false, trace, nullptr);
  require(arch.layers.back().kind == LayerKind::softmax_xent, ErrorCode::invalid_argument,
          "model must end with a softmax-xent layer");
  require(out.c == arch.num_classes, ErrorCode::shape_mismatch, "output width does not match class count");
}

void validate(const ModelSpec& model) {
  validate_architecture(architecture_of(model));
  std::size_t expected = 0;
  check_params(model.layers, model, expected);
  require(expected == model.parameters.size(), ErrorCode::shape_mismatch,
          "parameter store holds " + std::to_string(model.parameters.size()) + " tensors, architecture declares " +
              std::to_string(expected));
}

LayerSpec conv(std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t padding,
               bool bias, bool prunable) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.out_channels = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.bias = bias;
  l.prunable = prunable;
  return l;
}

namespace {

LayerSpec plain(LayerKind kind, std::size_t kernel = 1) {
  LayerSpec l;
  l.kind = kind;
  l.kernel = kernel;
  l.stride = kernel;
  return l;
}

}  // namespace

LayerSpec batchnorm() { return plain(LayerKind::batchnorm); }
LayerSpec relu() { return plain(LayerKind::relu); }
LayerSpec maxpool(std::size_t kernel) { return plain(LayerKind::maxpool, kernel); }
LayerSpec avgpool(std::size_t kernel) { return plain(LayerKind::avgpool, kernel); }
LayerSpec flatten() { return plain(LayerKind::flatten); }
LayerSpec linear(std::size_t out_features, bool bias) {
  LayerSpec l = plain(LayerKind::linear);
  l.out_channels = out_features;
  l.bias = bias;
  return l;
}
LayerSpec softmax_xent() { return plain(LayerKind::softmax_xent); }
LayerSpec residual_block(std::vector<LayerSpec> members) {
  LayerSpec l = plain(LayerKind::residual_block);
  l.block_members = std::move(members);
  return l;
}

ModelSpec vgg_a(InputShape input, std::size_t num_classes, std::size_t width_divisor, std::uint64_t seed) {
  require(width_divisor > 0, ErrorCode::invalid_argument, "width divisor must be positive");
  const std::vector<int> cfg = {64, 64, -1, 128, 128, -1, 256, 256, 256, -1, 512, 512, 512, -1, 512, 512, 512};
  std::vector<LayerSpec> layers;
  for (int c : cfg) {
    if (c < 0) {
      layers.push_back(maxpool(2));
      continue;
    }
    layers.push_back(conv(std::max<std::size_t>(1, c / width_divisor), 3, 1, 1));
    layers.push_back(batchnorm());
    layers.push_back(relu());
  }
  layers.push_back(avgpool(0));
  layers.push_back(flatten());
  layers.push_back(linear(num_classes));
  layers.push_back(softmax_xent());
  return build_model(std::move(layers), input, num_classes, seed);
}

ModelSpec resnet_cifar(InputShape input, std::size_t num_classes, std::size_t blocks_per_stage,
                       std::vector<std::size_t> widths, std::uint64_t seed) {
  require(!widths.empty() && blocks_per_stage > 0, ErrorCode::invalid_argument, "empty resnet configuration");
  std::vector<LayerSpec> layers;
  layers.push_back(conv(widths[0], 3, 1, 1, false, false));
  layers.push_back(batchnorm());
  layers.push_back(relu());
  for (std::size_t stage = 0; stage < widths.size(); ++stage) {
    for (std::size_t b = 0; b < blocks_per_stage; ++b) {
      const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
      layers.push_back(residual_block({conv(widths[stage], 3, stride, 1, false, true), batchnorm(), relu(),
                                       conv(widths[stage], 3, 1, 1, false, false), batchnorm()}));
    }
  }
  layers.push_back(avgpool(0));
  layers.push_back(flatten());
  layers.push_back(linear(num_classes));
  layers.push_back(softmax_xent());
  return build_model(std::move(layers), input, num_classes, seed);
}

ModelSpec tiny_cnn(InputShape input, std::size_t num_classes, std::uint64_t seed) {
  std::vector<LayerSpec> layers;
  std::size_t h = input.height, w = input.width;
  const std::size_t widths[6] = {16, 16, 32, 32, 32, 32};
  for (std::size_t i = 0; i < 6; ++i) {
    layers.push_back(conv(widths[i], 3, 1, 1));
    layers.push_back(batchnorm());
    layers.push_back(relu());
    if ((i == 1 || i == 3) && h >= 4 && w >= 4) {
      layers.push_back(maxpool(2));
      h /= 2;
      w /= 2;
    }
  }
  layers.push_back(avgpool(0));
  layers.push_back(flatten());
  layers.push_back(linear(num_classes));
  layers.push_back(softmax_xent());
  return build_model(std::move(layers), input, num_classes, seed);
}

ModelSpec mlp(InputShape input, std::size_t num_classes, const std::vector<std::size_t>& hidden,
              std::uint64_t seed) {
  std::vector<LayerSpec> layers;
  if (input.height != 1 || input.width != 1) layers.push_back(flatten());
  for (std::size_t width : hidden) {
    layers.push_back(conv(width, 1, 1, 0, true, true));
    layers.push_back(relu());
  }
  layers.push_back(flatten());
  layers.push_back(linear(num_classes));
  layers.push_back(softmax_xent());
  return build_model(std::move(layers), input, num_classes, seed);
}

ModelSpec make_preset(const std::string& preset, InputShape input, std::size_t num_classes, std::uint64_t seed) {
  if (preset == "vgg-a") return vgg_a(input, num_classes, 1, seed);
  if (preset == "vgg-a-desk") return vgg_a(input, num_classes, 8, seed);
  if (preset == "resnet56") return resnet_cifar(input, num_classes, 9, {16, 32, 64}, seed);
  if (preset == "resnet56-desk") return resnet_cifar(input, num_classes, 9, {8, 16, 32}, seed);
  if (preset == "tiny-cnn") return tiny_cnn(input, num_classes, seed);
  if (preset == "mlp") return mlp(input, num_classes, {32, 32}, seed);
  fail(ErrorCode::invalid_argument, "unknown model preset '" + preset + "'");
}

std::vector<const LayerSpec*> conv_layers(const std::vector<LayerSpec>& layers) {
  std::vector<const LayerSpec*> out;
  collect_convs(layers, out);
  return out;
}

std::vector<const LayerSpec*> prunable_layers(const ModelSpec& model) {
  std::vector<const LayerSpec*> out;
  for (const LayerSpec* l : conv_layers(model.layers))
    if (l->prunable) out.push_back(l);
  return out;
}

ModelStats model_stats(const Architecture& arch, InputShape input) {
  ModelStats s;
  accumulate_stats(arch.layers, {input.channels, input.height, input.width}, s);
  return s;
}

ModelStats model_stats(const ModelSpec& model, InputShape input) {
  return model_stats(architecture_of(model), input);
}

}  // namespace efaprune
