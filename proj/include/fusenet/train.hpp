#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fusenet/config.hpp"
#include "fusenet/data.hpp"
#include "fusenet/error.hpp"
#include "fusenet/metrics.hpp"
#include "fusenet/model.hpp"

namespace fusenet {

enum class OptimizerKind { adagrad, adam };
enum class LossKind { cross_entropy, hinge };

std::string to_string(OptimizerKind kind);
std::string to_string(LossKind kind);
OptimizerKind parse_optimizer(const std::string& text);
LossKind parse_loss(const std::string& text);

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  OptimizerKind optimizer = OptimizerKind::adam;
  LossKind loss = LossKind::cross_entropy;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  double hinge_margin = 1.0;

  /// Throws InvalidArgument if batch_size, epochs or eval_every is 0, or the
  /// learning rate is not positive.
  void validate() const;

  /// "paper-vgg19": Adagrad 0.001, cross-entropy. "paper-fusion": Adam 0.4,
  /// hinge. "desk-default": Adam 0.001, cross-entropy. All use batch 32 and
  /// 50 epochs. Throws InvalidArgument for other names.
  static TrainConfig profile(const std::string& name);

  /// Keys: batch_size, learning_rate, optimizer, loss, epochs, seed,
  /// eval_every, hinge_margin.
  void write(KeyValueConfig& cfg) const;
  /// Overrides the fields of `base` present in `cfg`.
  static TrainConfig read(const KeyValueConfig& cfg, TrainConfig base);
};

/// Mean of -log(max(p[i, label_i], 1e-12)) over rows of [N,2] probabilities.
Tensor cross_entropy(const Tensor& probs, std::span<const int> labels);
/// Mean of max(0, margin - (s_true - s_other)) over rows of [N,2] logits.
Tensor hinge_loss(const Tensor& scores, std::span<const int> labels, double margin = 1.0);
/// Loss of `kind` for pre-softmax `logits` (cross-entropy applies softmax first).
Tensor compute_loss(const Tensor& logits, std::span<const int> labels, const TrainConfig& cfg);

/// Adagrad keeps squared-gradient sums in `first`; Adam keeps its moments in
/// `first` and `second` plus the step counter.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;

  static OptimizerState create(OptimizerKind kind, const std::vector<Tensor>& params);
};

/// acc += g^2; p -= lr * g / (sqrt(acc) + eps).
void adagrad_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
                  OptimizerState& state, double lr);
/// Bias-corrected Adam update.
void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
               OptimizerState& state, double lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct EpochCurves {
  std::vector<EpochRecord> records;

  /// Header `epoch,train_loss,train_acc,val_loss,val_acc`; values use the
  /// shortest round-trip decimal form.
  void write_csv(std::ostream& out) const;
  void save_csv(const std::filesystem::path& path) const;
  bool operator==(const EpochCurves&) const = default;
};

class DivergedLoss : public Error {
 public:
  DivergedLoss(const std::string& what, EpochCurves partial)
      : Error("DivergedLoss", what), partial_(std::move(partial)) {}
  const EpochCurves& partial_curves() const { return partial_; }

 private:
  EpochCurves partial_;
};

struct EvalResult {
  std::vector<int> predictions;
  ConfusionMatrix matrix;
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Inference-mode pass in batches; a row predicts CP only if its CP
/// probability is strictly greater (ties go to Normal).
EvalResult evaluate(Model& model, const Dataset& d, const TrainConfig& cfg = {});

/// Called after every evaluated epoch.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `model` in place for cfg.epochs and returns the per-epoch curves.
/// Throws DivergedLoss (carrying the curves so far) on a non-finite loss.
EpochCurves train(Model& model, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace fusenet
