#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fusenet/config.hpp"
#include "fusenet/layers.hpp"
#include "fusenet/serialize.hpp"

namespace fusenet {

enum class Family { vgg, efficientnet };

std::string to_string(Family family);
Family parse_family(const std::string& text);

struct InputSize {
  std::size_t h = 32;
  std::size_t w = 32;
  std::size_t c = 1;
  bool operator==(const InputSize&) const = default;
};

/// A VGG block: `convs` 3x3 same-padded relu convolutions of `width`
/// channels, then a 2x2 stride-2 max-pool.
struct VggBlock {
  std::size_t convs = 2;
  std::size_t width = 64;
  bool operator==(const VggBlock&) const = default;
};

/// A stage of `repeats` MBConv blocks; only the first block is strided.
struct MBConvStage {
  std::size_t repeats = 1;
  std::size_t width = 16;
  std::size_t expansion = 1;
  std::size_t stride = 1;
  std::size_t kernel = 3;
  std::size_t se_ratio = 4;
  bool operator==(const MBConvStage&) const = default;
};

/// Compound scaling: depth x alpha^phi, width x beta^phi, resolution x gamma^phi.
struct ScalingCoefficients {
  double phi = 0.0;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;

  void validate() const;
  double depth_multiplier() const;
  double width_multiplier() const;
  double resolution_multiplier() const;
  bool operator==(const ScalingCoefficients&) const = default;
};

struct BackboneSpec {
  Family family = Family::vgg;
  std::vector<VggBlock> vgg_blocks;
  std::size_t stem_width = 8;  // efficientnet: 3x3 stem conv
  std::size_t stem_stride = 2;
  std::vector<MBConvStage> stages;
  std::size_t feature_dim = 64;
  InputSize input_size;
  ScalingCoefficients scaling;

  std::size_t conv_layer_count() const;
  /// Throws SpecInvalid naming the first failing position in the chain.
  void validate() const;
  bool operator==(const BackboneSpec&) const = default;
};

/// VGG-16 (13 convs, blocks 2,2,3,3,3) or VGG-19 (16 convs, 2,2,4,4,4).
/// Canonical widths 64..512 are divided by `width_divisor` (min 1).
BackboneSpec vgg_spec(int variant, InputSize input_size, std::size_t feature_dim,
                      std::size_t width_divisor = 1);

/// Applies compound scaling to `base`. Repeats round up, widths round to the
/// nearest multiple of 4 (at least 4), resolution rounds to the nearest even
/// integer. A dimension whose multiplier is exactly 1 is left untouched.
BackboneSpec efficientnet_spec(const std::vector<MBConvStage>& base, std::size_t stem_width,
                               const ScalingCoefficients& coeffs, InputSize input_size,
                               std::size_t feature_dim);

/// Desk-scale defaults: blocks {1,1,2} widths {8,16,32} at 32x32.
BackboneSpec vgg_tiny_spec(std::size_t feature_dim = 64);
/// Three MBConv stages of widths {8,16,24} at 32x32.
BackboneSpec effnet_tiny_spec(std::size_t feature_dim = 32);
std::vector<MBConvStage> effnet_tiny_stages();

/// Keys: family, blocks, widths, feature_dim, input_h, input_w, input_c,
/// alpha, beta, gamma, phi; efficientnet adds expansions, strides, kernels,
/// se_ratios, stem_width, stem_stride. `blocks` holds conv counts (vgg) or
/// stage repeats (efficientnet).
void write_spec(const BackboneSpec& spec, KeyValueConfig& cfg, const std::string& prefix = "");
BackboneSpec read_spec(const KeyValueConfig& cfg, const std::string& prefix = "");

/// Feature extractor instantiated from a BackboneSpec.
class Backbone {
 public:
  static Backbone build(const BackboneSpec& spec, std::uint64_t seed);

  const BackboneSpec& spec() const { return spec_; }

  /// [N,C,H,W] -> [N, feature_dim]. No classification is applied.
  Tensor extract_features(const Tensor& images, bool training = false);

  /// Learnable tensors in a stable order.
  std::vector<NamedTensor> parameters() const;
  /// Parameters plus normalization running statistics.
  std::vector<NamedTensor> state() const;
  /// Copies values from `tensors` by name; throws SpecInvalid when a name is
  /// missing or a shape differs from the BackboneSpec.
  void load_state(const std::vector<NamedTensor>& tensors, const std::string& prefix = "");

 private:
  explicit Backbone(BackboneSpec spec) : spec_(std::move(spec)) {}

  using Visitor =
      std::function<void(const std::string& name, const Tensor& tensor, bool learnable)>;
  void visit(const Visitor& f) const;

  BackboneSpec spec_;
  std::vector<std::vector<Conv2dParams>> vgg_convs_;
  Conv2dParams stem_;
  NormParams stem_norm_;
  std::vector<MBConvParams> blocks_;
  DenseParams projection_;
};

}  // namespace fusenet
