#include "fusenet/model.hpp"

#include <algorithm>
#include <map>

#include "fusenet/error.hpp"
#include "fusenet/ops.hpp"
#include "fusenet/rng.hpp"

namespace fusenet {

namespace {

const char* const kPrefixes[] = {"backbone1.", "backbone2."};

void append_lstm(std::vector<NamedTensor>& out, const std::string& prefix, const LSTMParams& p) {
  const std::pair<const char*, const Tensor*> fields[] = {
      {"w_i", &p.w_i}, {"w_f", &p.w_f}, {"w_o", &p.w_o}, {"w_c", &p.w_c},
      {"u_i", &p.u_i}, {"u_f", &p.u_f}, {"u_o", &p.u_o}, {"u_c", &p.u_c},
      {"b_i", &p.b_i}, {"b_f", &p.b_f}, {"b_o", &p.b_o}, {"b_c", &p.b_c}};
  for (const auto& [name, t] : fields) out.emplace_back(prefix + name, *t);
}

}  // namespace

std::size_t ModelConfig::fused_dim() const {
  std::size_t d = 0;
  for (const auto& b : backbones) d += b.feature_dim;
  return d;
}

void ModelConfig::validate() const {
  if (backbones.empty() || backbones.size() > 2) {
    throw SpecInvalid("a model needs one or two backbones, got " +
                      std::to_string(backbones.size()));
  }
  for (const auto& b : backbones) {
    b.validate();
    if (!(b.input_size == backbones[0].input_size)) {
      throw SpecInvalid("fused backbones must share one input size");
    }
  }
  if (head.seq_len < 1 || head.hidden < 1) throw SpecInvalid("head seq_len and hidden must be >= 1");
  if (head.n_classes != 2) throw SpecInvalid("only binary classification is supported");
}

void ModelConfig::write(KeyValueConfig& cfg) const {
  cfg.set("backbones", backbones.size());
  cfg.set("seq_len", head.seq_len);
  cfg.set("hidden", head.hidden);
  cfg.set("n_classes", head.n_classes);
  for (std::size_t i = 0; i < backbones.size() && i < 2; ++i) {
    write_spec(backbones[i], cfg, kPrefixes[i]);
  }
}

ModelConfig ModelConfig::read(const KeyValueConfig& cfg) {
  ModelConfig config;
  const std::size_t count = cfg.get_size("backbones");
  if (count < 1 || count > 2) throw MalformedConfig("'backbones' must be 1 or 2");
  for (std::size_t i = 0; i < count; ++i) config.backbones.push_back(read_spec(cfg, kPrefixes[i]));
  config.head.seq_len = cfg.get_size("seq_len");
  config.head.hidden = cfg.get_size("hidden");
  config.head.n_classes = cfg.get_size("n_classes");
  config.validate();
  return config;
}

ModelConfig fused_tiny_config() {
  ModelConfig config;
  config.backbones = {vgg_tiny_spec(64), effnet_tiny_spec(32)};
  return config;
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model model(config);
  for (std::size_t i = 0; i < config.backbones.size(); ++i) {
    model.backbones_.push_back(
        Backbone::build(config.backbones[i], derive_seed(seed, kPrefixes[i])));
  }
  Rng rng(derive_seed(seed, "head"));
  model.head_ = BiLSTMHead::build(config.fused_dim(), config.head.seq_len, config.head.hidden,
                                  config.head.n_classes, rng);
  for (auto& named : model.head_tensors()) named.second.set_requires_grad(true);
  return model;
}

Tensor Model::features(const Tensor& images, bool training) {
  Tensor fused = backbones_[0].extract_features(images, training);
  if (backbones_.size() == 2) {
    fused = fuse(fused, backbones_[1].extract_features(images, training)).matrix;
  }
  return fused;
}

Tensor Model::logits(const Tensor& images, bool training) {
  const Tensor seq = to_sequence(features(images, training), head_.seq_len);
  return head_logits(bilstm_forward(seq, head_), head_);
}

Tensor Model::predict_proba(const Tensor& images) { return softmax(logits(images, false)); }

std::vector<NamedTensor> Model::head_tensors() const {
  std::vector<NamedTensor> out;
  append_lstm(out, "head.forward.", head_.forward_params);
  append_lstm(out, "head.backward.", head_.backward_params);
  out.emplace_back("head.output.weight", head_.output.weight);
  out.emplace_back("head.output.bias", head_.output.bias);
  return out;
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < backbones_.size(); ++i) {
    for (auto& [name, t] : backbones_[i].parameters()) out.emplace_back(kPrefixes[i] + name, t);
  }
  for (auto& named : head_tensors()) out.push_back(named);
  return out;
}

std::vector<NamedTensor> Model::state() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < backbones_.size(); ++i) {
    for (auto& [name, t] : backbones_[i].state()) out.emplace_back(kPrefixes[i] + name, t);
  }
  for (auto& named : head_tensors()) out.push_back(named);
  return out;
}

void Model::load_state(const std::vector<NamedTensor>& tensors) {
  for (std::size_t i = 0; i < backbones_.size(); ++i) backbones_[i].load_state(tensors, kPrefixes[i]);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  for (auto& [name, target] : head_tensors()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw SpecInvalid("missing tensor '" + name + "'");
    if (it->second->shape() != target.shape()) {
      throw SpecInvalid("tensor '" + name + "' has shape " + shape_string(it->second->shape()) +
                        ", expected " + shape_string(target.shape()));
    }
    std::copy(it->second->values().begin(), it->second->values().end(),
              target.mutable_values().begin());
  }
}

void Model::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  KeyValueConfig cfg;
  config_.write(cfg);
  cfg.save(dir / "model.cfg");
  save_checkpoint(dir / "params", state());
}

Model Model::load(const std::filesystem::path& dir) {
  const ModelConfig config = ModelConfig::read(KeyValueConfig::load(dir / "model.cfg"));
  Model model = build(config, 0);
  model.load_state(load_checkpoint(dir / "params"));
  return model;
}

}  // namespace fusenet
