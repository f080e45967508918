#include "fusenet/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "fusenet/error.hpp"
#include "fusenet/ops.hpp"

namespace fusenet {

namespace {

std::size_t round_to_multiple_of_4(double v) {
  return std::max<std::size_t>(4, 4 * static_cast<std::size_t>(std::llround(v / 4.0)));
}

std::size_t round_to_even(double v) { return 2 * static_cast<std::size_t>(std::llround(v / 2.0)); }

std::size_t conv_out(std::size_t size, std::size_t kernel, std::size_t stride,
                     std::size_t padding) {
  const std::size_t padded = size + 2 * padding;
  if (padded < kernel || stride == 0) return 0;
  return (padded - kernel) / stride + 1;
}

using Visitor = std::function<void(const std::string& name, const Tensor& tensor, bool learnable)>;

void visit_conv(const std::string& name, const Conv2dParams& p, const Visitor& f) {
  f(name + ".kernel", p.kernel, true);
  f(name + ".bias", p.bias, true);
}

void visit_norm(const std::string& name, const NormParams& p, const Visitor& f) {
  f(name + ".gamma", p.gamma, true);
  f(name + ".beta", p.beta, true);
  f(name + ".running_mean", p.running_mean, false);
  f(name + ".running_var", p.running_var, false);
}

void visit_dense(const std::string& name, const DenseParams& p, const Visitor& f) {
  f(name + ".weight", p.weight, true);
  f(name + ".bias", p.bias, true);
}

}  // namespace

std::string to_string(Family family) {
  return family == Family::vgg ? "vgg" : "efficientnet";
}

Family parse_family(const std::string& text) {
  if (text == "vgg") return Family::vgg;
  if (text == "efficientnet") return Family::efficientnet;
  throw MalformedConfig("unknown backbone family '" + text + "'");
}

void ScalingCoefficients::validate() const {
  if (!(phi >= 0.0) || !(alpha >= 1.0) || !(beta >= 1.0) || !(gamma >= 1.0)) {
    throw InvalidCoefficients("need phi >= 0 and alpha, beta, gamma >= 1 (got phi=" +
                              format_double(phi) + ", alpha=" + format_double(alpha) +
                              ", beta=" + format_double(beta) + ", gamma=" +
                              format_double(gamma) + ")");
  }
}

double ScalingCoefficients::depth_multiplier() const { return std::pow(alpha, phi); }
double ScalingCoefficients::width_multiplier() const { return std::pow(beta, phi); }
double ScalingCoefficients::resolution_multiplier() const { return std::pow(gamma, phi); }

std::size_t BackboneSpec::conv_layer_count() const {
  std::size_t total = 0;
  if (family == Family::vgg) {
    for (const auto& b : vgg_blocks) total += b.convs;
  } else {
    total = 1;  // stem
    for (const auto& s : stages) total += s.repeats * (s.expansion == 1 ? 2 : 3);
  }
  return total;
}

void BackboneSpec::validate() const {
  if (feature_dim < 1) throw SpecInvalid("feature_dim must be >= 1");
  if (input_size.c < 1 || input_size.h < 1 || input_size.w < 1) {
    throw SpecInvalid("input size must be positive");
  }
  std::size_t h = input_size.h, w = input_size.w;
  if (family == Family::vgg) {
    if (vgg_blocks.empty()) throw SpecInvalid("vgg spec has no blocks");
    for (std::size_t b = 0; b < vgg_blocks.size(); ++b) {
      const auto& block = vgg_blocks[b];
      const std::string where = "block " + std::to_string(b);
      if (block.convs < 1 || block.width < 1) {
        throw SpecInvalid(where + ": conv count and width must be >= 1");
      }
      if (h < 2 || w < 2) {
        throw SpecInvalid(where + ": spatial size " + std::to_string(h) + "x" +
                          std::to_string(w) + " too small for its max-pool");
      }
      h /= 2;
      w /= 2;
    }
    return;
  }
  if (stages.empty()) throw SpecInvalid("efficientnet spec has no stages");
  if (stem_width < 1 || stem_stride < 1) throw SpecInvalid("stem: width and stride must be >= 1");
  h = conv_out(h, 3, stem_stride, 1);
  w = conv_out(w, 3, stem_stride, 1);
  if (h < 1 || w < 1) throw SpecInvalid("stem: degenerate output");
  std::size_t channels = stem_width;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& stage = stages[s];
    const std::string where = "stage " + std::to_string(s);
    if (stage.repeats < 1 || stage.width < 1 || stage.expansion < 1 || stage.stride < 1 ||
        stage.kernel < 1) {
      throw SpecInvalid(where + ": repeats, width, expansion, stride and kernel must be >= 1");
    }
    for (std::size_t r = 0; r < stage.repeats; ++r) {
      const std::string block = where + " block " + std::to_string(r);
      const std::size_t mid = channels * stage.expansion;
      if (stage.se_ratio < 1 || mid % stage.se_ratio != 0) {
        throw SpecInvalid(block + ": SE ratio " + std::to_string(stage.se_ratio) +
                          " does not divide " + std::to_string(mid) + " expanded channels");
      }
      const std::size_t stride = r == 0 ? stage.stride : 1;
      h = conv_out(h, stage.kernel, stride, stage.kernel / 2);
      w = conv_out(w, stage.kernel, stride, stage.kernel / 2);
      if (h < 1 || w < 1) throw SpecInvalid(block + ": degenerate spatial output");
      channels = stage.width;
    }
  }
}

BackboneSpec vgg_spec(int variant, InputSize input_size, std::size_t feature_dim,
                      std::size_t width_divisor) {
  std::vector<std::size_t> convs;
  if (variant == 19) {
    convs = {2, 2, 4, 4, 4};
  } else if (variant == 16) {
    convs = {2, 2, 3, 3, 3};
  } else {
    throw UnknownVariant("VGG variant " + std::to_string(variant) + " (expected 16 or 19)");
  }
  const std::size_t widths[] = {64, 128, 256, 512, 512};
  const std::size_t divisor = std::max<std::size_t>(1, width_divisor);
  BackboneSpec spec;
  spec.family = Family::vgg;
  for (std::size_t b = 0; b < convs.size(); ++b) {
    spec.vgg_blocks.push_back({convs[b], std::max<std::size_t>(1, widths[b] / divisor)});
  }
  spec.feature_dim = feature_dim;
  spec.input_size = input_size;
  const std::size_t min_side = std::size_t{1} << convs.size();
  if (input_size.h < min_side || input_size.w < min_side) {
    throw SpecInvalid("VGG-" + std::to_string(variant) + " needs spatial dims >= " +
                      std::to_string(min_side));
  }
  spec.validate();
  return spec;
}

BackboneSpec efficientnet_spec(const std::vector<MBConvStage>& base, std::size_t stem_width,
                               const ScalingCoefficients& coeffs, InputSize input_size,
                               std::size_t feature_dim) {
  coeffs.validate();
  const double depth = coeffs.depth_multiplier();
  const double width = coeffs.width_multiplier();
  const double resolution = coeffs.resolution_multiplier();
  BackboneSpec spec;
  spec.family = Family::efficientnet;
  spec.stages = base;
  spec.stem_width = stem_width;
  spec.feature_dim = feature_dim;
  spec.input_size = input_size;
  spec.scaling = coeffs;
  for (auto& stage : spec.stages) {
    if (depth != 1.0) {
      stage.repeats = static_cast<std::size_t>(std::ceil(static_cast<double>(stage.repeats) * depth));
    }
    if (width != 1.0) stage.width = round_to_multiple_of_4(static_cast<double>(stage.width) * width);
  }
  if (width != 1.0) spec.stem_width = round_to_multiple_of_4(static_cast<double>(stem_width) * width);
  if (resolution != 1.0) {
    spec.input_size.h = round_to_even(static_cast<double>(input_size.h) * resolution);
    spec.input_size.w = round_to_even(static_cast<double>(input_size.w) * resolution);
  }
  spec.validate();
  return spec;
}

BackboneSpec vgg_tiny_spec(std::size_t feature_dim) {
  BackboneSpec spec;
  spec.family = Family::vgg;
  spec.vgg_blocks = {{1, 8}, {1, 16}, {2, 32}};
  spec.feature_dim = feature_dim;
  spec.input_size = {32, 32, 1};
  return spec;
}

std::vector<MBConvStage> effnet_tiny_stages() {
  return {
      {.repeats = 1, .width = 8, .expansion = 1, .stride = 1, .kernel = 3, .se_ratio = 4},
      {.repeats = 1, .width = 16, .expansion = 4, .stride = 2, .kernel = 3, .se_ratio = 4},
      {.repeats = 1, .width = 24, .expansion = 4, .stride = 2, .kernel = 3, .se_ratio = 4},
  };
}

BackboneSpec effnet_tiny_spec(std::size_t feature_dim) {
  return efficientnet_spec(effnet_tiny_stages(), 8, ScalingCoefficients{}, {32, 32, 1},
                           feature_dim);
}

void write_spec(const BackboneSpec& spec, KeyValueConfig& cfg, const std::string& prefix) {
  cfg.set(prefix + "family", to_string(spec.family));
  std::vector<std::size_t> blocks, widths;
  if (spec.family == Family::vgg) {
    for (const auto& b : spec.vgg_blocks) {
      blocks.push_back(b.convs);
      widths.push_back(b.width);
    }
  } else {
    for (const auto& s : spec.stages) {
      blocks.push_back(s.repeats);
      widths.push_back(s.width);
    }
  }
  cfg.set(prefix + "blocks", blocks);
  cfg.set(prefix + "widths", widths);
  if (spec.family == Family::efficientnet) {
    std::vector<std::size_t> expansions, strides, kernels, se_ratios;
    for (const auto& s : spec.stages) {
      expansions.push_back(s.expansion);
      strides.push_back(s.stride);
      kernels.push_back(s.kernel);
      se_ratios.push_back(s.se_ratio);
    }
    cfg.set(prefix + "expansions", expansions);
    cfg.set(prefix + "strides", strides);
    cfg.set(prefix + "kernels", kernels);
    cfg.set(prefix + "se_ratios", se_ratios);
    cfg.set(prefix + "stem_width", spec.stem_width);
    cfg.set(prefix + "stem_stride", spec.stem_stride);
  }
  cfg.set(prefix + "feature_dim", spec.feature_dim);
  cfg.set(prefix + "input_h", spec.input_size.h);
  cfg.set(prefix + "input_w", spec.input_size.w);
  cfg.set(prefix + "input_c", spec.input_size.c);
  cfg.set(prefix + "alpha", spec.scaling.alpha);
  cfg.set(prefix + "beta", spec.scaling.beta);
  cfg.set(prefix + "gamma", spec.scaling.gamma);
  cfg.set(prefix + "phi", spec.scaling.phi);
}

BackboneSpec read_spec(const KeyValueConfig& cfg, const std::string& prefix) {
  BackboneSpec spec;
  spec.family = parse_family(cfg.get(prefix + "family"));
  const auto blocks = cfg.get_sizes(prefix + "blocks");
  const auto widths = cfg.get_sizes(prefix + "widths");
  if (blocks.size() != widths.size()) {
    throw SpecInvalid("'" + prefix + "blocks' and '" + prefix + "widths' differ in length");
  }
  if (spec.family == Family::vgg) {
    for (std::size_t i = 0; i < blocks.size(); ++i) spec.vgg_blocks.push_back({blocks[i], widths[i]});
  } else {
    const auto expansions = cfg.get_sizes(prefix + "expansions");
    const auto strides = cfg.get_sizes(prefix + "strides");
    const auto kernels = cfg.get_sizes(prefix + "kernels");
    const auto se_ratios = cfg.get_sizes(prefix + "se_ratios");
    for (const auto* list : {&expansions, &strides, &kernels, &se_ratios}) {
      if (list->size() != blocks.size()) {
        throw SpecInvalid("efficientnet stage lists under '" + prefix + "' differ in length");
      }
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      spec.stages.push_back(
          {blocks[i], widths[i], expansions[i], strides[i], kernels[i], se_ratios[i]});
    }
    spec.stem_width = cfg.get_size(prefix + "stem_width");
    spec.stem_stride = cfg.get_size(prefix + "stem_stride");
  }
  spec.feature_dim = cfg.get_size(prefix + "feature_dim");
  spec.input_size = {cfg.get_size(prefix + "input_h"), cfg.get_size(prefix + "input_w"),
                     cfg.get_size(prefix + "input_c")};
  if (cfg.contains(prefix + "phi")) {
    spec.scaling = {cfg.get_double(prefix + "phi"), cfg.get_double(prefix + "alpha"),
                    cfg.get_double(prefix + "beta"), cfg.get_double(prefix + "gamma")};
  }
  spec.validate();
  return spec;
}

Backbone Backbone::build(const BackboneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Backbone b(spec);
  Rng rng(seed);
  std::size_t channels = spec.input_size.c;
  std::size_t h = spec.input_size.h, w = spec.input_size.w;
  std::size_t flat = 0;
  if (spec.family == Family::vgg) {
    for (const auto& block : spec.vgg_blocks) {
      std::vector<Conv2dParams> convs;
      for (std::size_t i = 0; i < block.convs; ++i) {
        convs.push_back(Conv2dParams::kaiming(channels, block.width, 3, 1, 1, false, rng));
        channels = block.width;
      }
      b.vgg_convs_.push_back(std::move(convs));
      h /= 2;
      w /= 2;
    }
    flat = channels * h * w;
  } else {
    b.stem_ = Conv2dParams::kaiming(channels, spec.stem_width, 3, spec.stem_stride, 1, false, rng);
    b.stem_norm_ = NormParams::identity(spec.stem_width);
    channels = spec.stem_width;
    for (const auto& stage : spec.stages) {
      for (std::size_t r = 0; r < stage.repeats; ++r) {
        b.blocks_.push_back(MBConvParams::kaiming(channels, stage.width, stage.expansion,
                                                  stage.kernel, r == 0 ? stage.stride : 1,
                                                  stage.se_ratio, rng));
        channels = stage.width;
      }
    }
    flat = channels;
  }
  b.projection_ = DenseParams::kaiming(flat, spec.feature_dim, rng);
  for (auto& named : b.parameters()) named.second.set_requires_grad(true);
  return b;
}

Tensor Backbone::extract_features(const Tensor& images, bool training) {
  const InputSize& in = spec_.input_size;
  if (images.rank() != 4 || images.dim(1) != in.c || images.dim(2) != in.h ||
      images.dim(3) != in.w) {
    throw ShapeMismatch("backbone expects [N," + std::to_string(in.c) + "," +
                        std::to_string(in.h) + "," + std::to_string(in.w) + "], got " +
                        shape_string(images.shape()));
  }
  const std::size_t n = images.dim(0);
  if (n == 0) return Tensor::zeros(Shape{0, spec_.feature_dim});
  Tensor h = images;
  if (spec_.family == Family::vgg) {
    for (const auto& block : vgg_convs_) {
      for (const auto& conv : block) h = relu(conv2d(h, conv));
      h = maxpool2d(h, 2, 2);
    }
    h = reshape(h, Shape{n, h.size() / n});
  } else {
    h = silu(batch_norm(conv2d(h, stem_), stem_norm_, training));
    for (auto& block : blocks_) h = mbconv(h, block, training);
    h = global_avg_pool(h);
  }
  return dense(h, projection_);
}

void Backbone::visit(const Visitor& f) const {
  if (spec_.family == Family::vgg) {
    for (std::size_t i = 0; i < vgg_convs_.size(); ++i)
      for (std::size_t j = 0; j < vgg_convs_[i].size(); ++j)
        visit_conv("block" + std::to_string(i) + ".conv" + std::to_string(j), vgg_convs_[i][j], f);
  } else {
    visit_conv("stem", stem_, f);
    visit_norm("stem_norm", stem_norm_, f);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string name = "mbconv" + std::to_string(i);
      const auto& blk = blocks_[i];
      if (blk.expand_conv) {
        visit_conv(name + ".expand", *blk.expand_conv, f);
        visit_norm(name + ".expand_norm", *blk.expand_norm, f);
      }
      visit_conv(name + ".depthwise", blk.depthwise_conv, f);
      visit_norm(name + ".depthwise_norm", blk.depthwise_norm, f);
      visit_dense(name + ".se_reduce", blk.se.reduce, f);
      visit_dense(name + ".se_expand", blk.se.expand, f);
      visit_conv(name + ".project", blk.project_conv, f);
      visit_norm(name + ".project_norm", blk.project_norm, f);
    }
  }
  visit_dense("projection", projection_, f);
}

std::vector<NamedTensor> Backbone::parameters() const {
  std::vector<NamedTensor> out;
  visit([&](const std::string& name, const Tensor& t, bool learnable) {
    if (learnable) out.emplace_back(name, t);
  });
  return out;
}

std::vector<NamedTensor> Backbone::state() const {
  std::vector<NamedTensor> out;
  visit([&](const std::string& name, const Tensor& t, bool) { out.emplace_back(name, t); });
  return out;
}

void Backbone::load_state(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  visit([&](const std::string& name, const Tensor& target, bool) {
    const auto it = by_name.find(prefix + name);
    if (it == by_name.end()) throw SpecInvalid("missing tensor '" + prefix + name + "'");
    if (it->second->shape() != target.shape()) {
      throw SpecInvalid("tensor '" + prefix + name + "' has shape " +
                        shape_string(it->second->shape()) + ", spec implies " +
                        shape_string(target.shape()));
    }
    Tensor handle = target;
    const auto src = it->second->values();
    std::copy(src.begin(), src.end(), handle.mutable_values().begin());
  });
}

}  // namespace fusenet
