#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fusenet/backbone.hpp"
#include "fusenet/config.hpp"
#include "fusenet/fusion.hpp"

namespace fusenet {

struct HeadConfig {
  std::size_t seq_len = 8;
  std::size_t hidden = 32;
  std::size_t n_classes = 2;
  bool operator==(const HeadConfig&) const = default;
};

/// One or two backbones feeding a Bi-LSTM head. With two backbones the
/// feature vectors are concatenated, first backbone first.
struct ModelConfig {
  std::vector<BackboneSpec> backbones;
  HeadConfig head;

  std::size_t fused_dim() const;
  InputSize input_size() const { return backbones.at(0).input_size; }
  void validate() const;

  /// Keys: backbones, seq_len, hidden, n_classes, then each spec under
  /// `backbone1.` / `backbone2.`.
  void write(KeyValueConfig& cfg) const;
  static ModelConfig read(const KeyValueConfig& cfg);
  bool operator==(const ModelConfig&) const = default;
};

/// `vgg-tiny` (64 features) fused with `effnet-tiny` (32 features).
ModelConfig fused_tiny_config();

class Model {
 public:
  static Model build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const BiLSTMHead& head() const { return head_; }
  std::vector<Backbone>& backbones() { return backbones_; }

  /// [N,C,H,W] -> fused features [N, fused_dim].
  Tensor features(const Tensor& images, bool training);
  /// Pre-softmax class scores [N, n_classes].
  Tensor logits(const Tensor& images, bool training);
  /// Inference-mode class probabilities [N, n_classes].
  Tensor predict_proba(const Tensor& images);

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& tensors);

  /// Writes `model.cfg`, `params.ftns` and `params.index` into `dir`.
  void save(const std::filesystem::path& dir) const;
  static Model load(const std::filesystem::path& dir);

 private:
  explicit Model(ModelConfig config) : config_(std::move(config)) {}
  std::vector<NamedTensor> head_tensors() const;

  ModelConfig config_;
  std::vector<Backbone> backbones_;
  BiLSTMHead head_;
};

}  // namespace fusenet
