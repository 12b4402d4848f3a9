#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "efaprune/tensor.hpp"

namespace efaprune {

enum class LayerKind {
  conv,
  batchnorm,
  relu,
  maxpool,
  avgpool,
  linear,
  residual_block,
  flatten,
  softmax_xent,
};

const char* layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

/// One node of a sequential network. Channel fields are filled in by shape
/// inference when the model is built.
///
/// conv:      kernel/stride/padding as usual, optional bias.
/// maxpool:   kernel x kernel window with stride == kernel.
/// avgpool:   kernel == 0 averages the whole feature map.
/// residual_block: block_members run in sequence, the identity shortcut
///            (spatially subsampled, zero-padded on channel increase) is
///            added and a ReLU follows.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = false;
  bool prunable = false;
  std::vector<LayerSpec> block_members;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

using ParamStore = std::map<std::string, Tensor>;

/// Input geometry of a single sample: channels, height, width.
struct InputShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  friend bool operator==(const InputShape&, const InputShape&) = default;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  ParamStore parameters;
  /// Non-trainable state (BatchNorm running statistics).
  ParamStore buffers;
  std::uint64_t seed = 0;
  InputShape input;
  std::size_t num_classes = 0;
};

/// Architecture-only view: everything but the tensors.
struct Architecture {
  std::vector<LayerSpec> layers;
  InputShape input;
  std::size_t num_classes = 0;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

Architecture architecture_of(const ModelSpec& model);

/// Names every layer (L000, L001, ..., blocks as L007.0 ...), infers the
/// channel counts from `input`, validates the chain and initialises all
/// parameters deterministically from `seed` (Kaiming fan-in for conv/linear,
/// BN scale 1 / shift 0). With `rename` off, existing layer names are kept
/// (used by surgery so pruned layers stay traceable to the original).
ModelSpec build_model(std::vector<LayerSpec> layers, InputShape input, std::size_t num_classes,
                      std::uint64_t seed, bool rename = true);

/// Re-initialises parameters and buffers of an already-inferred architecture.
ModelSpec instantiate(const Architecture& arch, std::uint64_t seed);

/// Checks channel compatibility and parameter shapes; throws with the
/// offending layer trace.
void validate(const ModelSpec& model);
void validate_architecture(const Architecture& arch);

/// Output shape <c,h,w> of every top-level layer for the given input.
std::vector<InputShape> infer_shapes(const std::vector<LayerSpec>& layers, InputShape input);

// Layer constructors used by presets and tests.
LayerSpec conv(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
               std::size_t padding = 0, bool bias = false, bool prunable = true);
LayerSpec batchnorm();
LayerSpec relu();
LayerSpec maxpool(std::size_t kernel = 2);
LayerSpec avgpool(std::size_t kernel = 0);
LayerSpec flatten();
LayerSpec linear(std::size_t out_features, bool bias = true);
LayerSpec softmax_xent();
LayerSpec residual_block(std::vector<LayerSpec> members);

/// VGG-A for 32x32 inputs: 13 conv+BN+ReLU layers with channel widths
/// 64,64,128,128,256,256,256,512x6 divided by `width_divisor`, global
/// average pooling and a single linear classifier.
ModelSpec vgg_a(InputShape input, std::size_t num_classes, std::size_t width_divisor = 1,
                std::uint64_t seed = 0);

/// CIFAR ResNet with `blocks_per_stage` basic blocks per stage; only the first
/// conv of each block is prunable. (9, {16,32,64}) is ResNet56.
ModelSpec resnet_cifar(InputShape input, std::size_t num_classes, std::size_t blocks_per_stage,
                       std::vector<std::size_t> widths, std::uint64_t seed = 0);

/// Six conv layers (16,16,32,32,32,32 wide) with BN+ReLU, two 2x2 max-pools
/// when the input is large enough, global average pooling and a classifier.
ModelSpec tiny_cnn(InputShape input, std::size_t num_classes, std::uint64_t seed = 0);

/// Fully connected ReLU network expressed with 1x1 convolutions on a 1x1
/// input, ending in linear. The Frobenius pruning-error bound holds exactly.
ModelSpec mlp(InputShape input, std::size_t num_classes, const std::vector<std::size_t>& hidden,
              std::uint64_t seed = 0);

/// Named preset lookup: vgg-a, vgg-a-desk, resnet56, resnet56-desk, tiny-cnn, mlp.
ModelSpec make_preset(const std::string& preset, InputShape input, std::size_t num_classes,
                      std::uint64_t seed);

/// Depth-first list of pointers to every conv layer (including block members).
std::vector<const LayerSpec*> conv_layers(const std::vector<LayerSpec>& layers);
std::vector<const LayerSpec*> prunable_layers(const ModelSpec& model);

struct ModelStats {
  std::uint64_t filters = 0;
  std::uint64_t parameters = 0;
  std::uint64_t flops = 0;
};

/// filters: sum of out_channels over prunable conv layers; parameters: exact
/// trainable count; flops: multiply-accumulates of conv and linear layers.
ModelStats model_stats(const ModelSpec& model, InputShape input);
ModelStats model_stats(const Architecture& arch, InputShape input);

}  // namespace efaprune
