#include "fusenet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "fusenet/ops.hpp"
#include "fusenet/rng.hpp"

namespace fusenet {

namespace {

constexpr double kProbabilityFloor = 1e-12;

void require_binary_rows(const Tensor& x, std::span<const int> labels, const char* op) {
  if (x.rank() != 2 || x.dim(1) != 2) {
    throw ShapeMismatch(std::string(op) + " expects [N,2], got " + shape_string(x.shape()));
  }
  if (x.dim(0) != labels.size()) {
    throw ShapeMismatch(std::string(op) + ": " + std::to_string(labels.size()) +
                        " labels for " + std::to_string(x.dim(0)) + " rows");
  }
  if (labels.empty()) throw ShapeMismatch(std::string(op) + " of an empty batch");
  for (int l : labels) {
    if (l != 0 && l != 1) throw InvalidArgument(std::string(op) + ": labels must be 0 or 1");
  }
}

std::vector<std::vector<double>> collect_grads(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    if (p.has_grad()) {
      grads.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      grads.emplace_back(p.size(), 0.0);
    }
  }
  return grads;
}

void require_matching(const std::vector<Tensor>& params,
                      const std::vector<std::vector<double>>& grads, const OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.first.size()) {
    throw ShapeMismatch("optimizer: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() || state.first[i].size() != params[i].size()) {
      throw ShapeMismatch("optimizer: gradient size differs for parameter " + std::to_string(i));
    }
  }
}

}  // namespace

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "adagrad"; }
std::string to_string(LossKind kind) {
  return kind == LossKind::hinge ? "hinge" : "cross_entropy";
}

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "adam") return OptimizerKind::adam;
  if (text == "adagrad") return OptimizerKind::adagrad;
  throw InvalidArgument("unknown optimizer '" + text + "' (adam or adagrad)");
}

LossKind parse_loss(const std::string& text) {
  if (text == "cross_entropy") return LossKind::cross_entropy;
  if (text == "hinge") return LossKind::hinge;
  throw InvalidArgument("unknown loss '" + text + "' (cross_entropy or hinge)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (eval_every < 1) throw InvalidArgument("eval_every must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning_rate must be positive");
  }
  if (!(hinge_margin > 0.0)) throw InvalidArgument("hinge_margin must be positive");
}

TrainConfig TrainConfig::profile(const std::string& name) {
  TrainConfig cfg;
  if (name == "paper-vgg19") {
    cfg.optimizer = OptimizerKind::adagrad;
    cfg.learning_rate = 0.001;
    cfg.loss = LossKind::cross_entropy;
  } else if (name == "paper-fusion") {
    // Stated settings, kept verbatim; lr 0.4 with Adam is prone to divergence.
    cfg.optimizer = OptimizerKind::adam;
    cfg.learning_rate = 0.4;
    cfg.loss = LossKind::hinge;
  } else if (name == "desk-default") {
    cfg.optimizer = OptimizerKind::adam;
    cfg.learning_rate = 0.001;
    cfg.loss = LossKind::cross_entropy;
  } else {
    throw InvalidArgument("unknown profile '" + name +
                          "' (paper-vgg19, paper-fusion or desk-default)");
  }
  return cfg;
}

void TrainConfig::write(KeyValueConfig& cfg) const {
  cfg.set("batch_size", batch_size);
  cfg.set("learning_rate", learning_rate);
  cfg.set("optimizer", to_string(optimizer));
  cfg.set("loss", to_string(loss));
  cfg.set("epochs", epochs);
  cfg.set("seed", std::to_string(seed));
  cfg.set("eval_every", eval_every);
  cfg.set("hinge_margin", hinge_margin);
}

TrainConfig TrainConfig::read(const KeyValueConfig& cfg, TrainConfig base) {
  if (cfg.contains("batch_size")) base.batch_size = cfg.get_size("batch_size");
  if (cfg.contains("learning_rate")) base.learning_rate = cfg.get_double("learning_rate");
  if (cfg.contains("optimizer")) base.optimizer = parse_optimizer(cfg.get("optimizer"));
  if (cfg.contains("loss")) base.loss = parse_loss(cfg.get("loss"));
  if (cfg.contains("epochs")) base.epochs = cfg.get_size("epochs");
  if (cfg.contains("seed")) base.seed = cfg.get_size("seed");
  if (cfg.contains("eval_every")) base.eval_every = cfg.get_size("eval_every");
  if (cfg.contains("hinge_margin")) base.hinge_margin = cfg.get_double("hinge_margin");
  base.validate();
  return base;
}

Tensor cross_entropy(const Tensor& probs, std::span<const int> labels) {
  require_binary_rows(probs, labels, "cross_entropy");
  const std::size_t n = labels.size();
  std::vector<int> targets(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total -= std::log(std::max(probs.values()[2 * i + targets[i]], kProbabilityFloor));
  }
  Tensor result = Tensor::scalar(total / static_cast<double>(n));
  if (should_record({&probs})) {
    record_op({probs}, result, [probs, targets, n](const Tensor& o) {
      const double g = o.grad()[0] / static_cast<double>(n);
      auto gp = probs.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const double p = probs.values()[2 * i + targets[i]];
        if (p > kProbabilityFloor) gp[2 * i + targets[i]] -= g / p;
      }
    });
  }
  return result;
}

Tensor hinge_loss(const Tensor& scores, std::span<const int> labels, double margin) {
  require_binary_rows(scores, labels, "hinge_loss");
  const std::size_t n = labels.size();
  std::vector<int> targets(labels.begin(), labels.end());
  std::vector<bool> active(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s_true = scores.values()[2 * i + targets[i]];
    const double s_other = scores.values()[2 * i + 1 - targets[i]];
    const double violation = margin - (s_true - s_other);
    active[i] = violation > 0.0;
    if (active[i]) total += violation;
  }
  Tensor result = Tensor::scalar(total / static_cast<double>(n));
  if (should_record({&scores})) {
    record_op({scores}, result, [scores, targets, active, n](const Tensor& o) {
      const double g = o.grad()[0] / static_cast<double>(n);
      auto gs = scores.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        if (!active[i]) continue;
        gs[2 * i + targets[i]] -= g;
        gs[2 * i + 1 - targets[i]] += g;
      }
    });
  }
  return result;
}

Tensor compute_loss(const Tensor& logits, std::span<const int> labels, const TrainConfig& cfg) {
  if (cfg.loss == LossKind::hinge) return hinge_loss(logits, labels, cfg.hinge_margin);
  return cross_entropy(softmax(logits), labels);
}

OptimizerState OptimizerState::create(OptimizerKind kind, const std::vector<Tensor>& params) {
  OptimizerState state;
  state.kind = kind;
  for (const auto& p : params) {
    state.first.emplace_back(p.size(), 0.0);
    if (kind == OptimizerKind::adam) state.second.emplace_back(p.size(), 0.0);
  }
  return state;
}

void adagrad_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
                  OptimizerState& state, double lr) {
  require_matching(params, grads, state);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    auto& acc = state.first[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[i][j];
      acc[j] += g * g;
      values[j] -= lr * g / (std::sqrt(acc[j]) + state.epsilon);
    }
  }
  ++state.step;
}

void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
               OptimizerState& state, double lr) {
  require_matching(params, grads, state);
  if (state.second.size() != params.size()) {
    throw ShapeMismatch("adam state has no second-moment buffers");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[i][j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      values[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.epsilon);
    }
  }
}

void EpochCurves::write_csv(std::ostream& out) const {
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_acc)
        << ',' << format_double(r.val_loss) << ',' << format_double(r.val_acc) << '\n';
  }
}

void EpochCurves::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write curves " + path.string());
  write_csv(out);
}

EvalResult evaluate(Model& model, const Dataset& d, const TrainConfig& cfg) {
  if (d.size() == 0) throw InvalidArgument("cannot evaluate an empty dataset");
  EvalResult result;
  std::vector<int> labels;
  double weighted_loss = 0.0;
  for (std::size_t begin = 0; begin < d.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(d.size(), begin + cfg.batch_size);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Batch batch = make_batch(d, idx);
    const Tensor logits = model.logits(batch.images, false);
    weighted_loss += compute_loss(logits, batch.labels, cfg).item() * static_cast<double>(idx.size());
    const Tensor probs = softmax(logits);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      result.predictions.push_back(probs.values()[2 * i + 1] > probs.values()[2 * i] ? kCp : kNormal);
    }
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
  }
  result.matrix = ConfusionMatrix::from_predictions(result.predictions, labels);
  result.loss = weighted_loss / static_cast<double>(d.size());
  result.accuracy = accuracy(result.matrix);
  return result;
}

EpochCurves train(Model& model, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) {
    throw InvalidArgument("train and validation sets must be non-empty");
  }
  std::vector<Tensor> params;
  for (auto& named : model.parameters()) params.push_back(named.second);
  OptimizerState state = OptimizerState::create(cfg.optimizer, params);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));

  EpochCurves curves;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const Batch batch = make_batch(
          train_set, std::span<const std::size_t>(order.data() + begin, end - begin));
      Tape tape;
      Tensor loss;
      {
        Tape::Scope scope(tape);
        loss = compute_loss(model.logits(batch.images, true), batch.labels, cfg);
      }
      if (!std::isfinite(loss.item())) {
        throw DivergedLoss("non-finite training loss in epoch " + std::to_string(epoch), curves);
      }
      backward(loss, tape);
      const auto grads = collect_grads(params);
      for (auto& p : params) p.clear_grad();
      if (cfg.optimizer == OptimizerKind::adam) {
        adam_step(params, grads, state, cfg.learning_rate);
      } else {
        adagrad_step(params, grads, state, cfg.learning_rate);
      }
    }

    if (epoch % cfg.eval_every != 0 && epoch != cfg.epochs) continue;
    const EvalResult on_train = evaluate(model, train_set, cfg);
    const EvalResult on_val = evaluate(model, val_set, cfg);
    const EpochRecord record{epoch, on_train.loss, on_train.accuracy, on_val.loss, on_val.accuracy};
    if (!std::isfinite(record.train_loss) || !std::isfinite(record.val_loss)) {
      throw DivergedLoss("non-finite evaluation loss after epoch " + std::to_string(epoch), curves);
    }
    curves.records.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return curves;
}

}  // namespace fusenet
