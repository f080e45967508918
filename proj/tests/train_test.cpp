#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "fusenet/ops.hpp"
#include "fusenet/train.hpp"
#include "test_util.hpp"

namespace fusenet {
namespace {

using testing::random_tensor;

const std::vector<int> kLabels{0, 1, 1, 0};

ModelConfig small_config() {
  BackboneSpec vgg;
  vgg.family = Family::vgg;
  vgg.vgg_blocks = {{1, 4}, {1, 8}};
  vgg.feature_dim = 8;
  vgg.input_size = {16, 16, 1};
  const BackboneSpec eff = efficientnet_spec({{1, 8, 1, 1, 3, 4}, {1, 8, 2, 2, 3, 4}}, 8, {},
                                             {16, 16, 1}, 8);
  ModelConfig config;
  config.backbones = {vgg, eff};
  config.head = {4, 8, 2};
  return config;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig cfg = TrainConfig::profile("desk-default");
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.01;
  cfg.seed = 3;
  return cfg;
}

TEST(CrossEntropy, Examples) {
  EXPECT_EQ(cross_entropy(Tensor({2, 2}, {1, 0, 0, 1}), std::vector<int>{0, 1}).item(), 0.0);
  EXPECT_NEAR(cross_entropy(Tensor::full({3, 2}, 0.5), std::vector<int>{0, 1, 1}).item(),
              std::log(2.0), 1e-15);
  // The probability floor keeps a confident miss finite.
  EXPECT_NEAR(cross_entropy(Tensor({1, 2}, {1, 0}), std::vector<int>{1}).item(),
              -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, ShapeErrors) {
  EXPECT_THROW(cross_entropy(Tensor::full({2, 3}, 0.3), std::vector<int>{0, 1}), ShapeMismatch);
  EXPECT_THROW(cross_entropy(Tensor::full({2, 2}, 0.5), std::vector<int>{0}), ShapeMismatch);
}

TEST(CrossEntropy, GradientThroughSoftmaxMatchesFiniteDifferences) {
  Rng rng(1);
  for (int point = 0; point < 10; ++point) {
    const Tensor logits = random_tensor({4, 2}, rng, -3, 3);
    auto f = [](const Tensor& z) { return cross_entropy(softmax(z), kLabels); };
    EXPECT_LT(finite_diff_check(f, logits), 1e-4);
  }
}

TEST(HingeLoss, Examples) {
  EXPECT_EQ(hinge_loss(Tensor({1, 2}, {3, 1}), std::vector<int>{0}).item(), 0.0);
  EXPECT_EQ(hinge_loss(Tensor({1, 2}, {0.7, 0.7}), std::vector<int>{1}).item(), 1.0);
  EXPECT_DOUBLE_EQ(hinge_loss(Tensor({1, 2}, {0.0, 0.5}), std::vector<int>{1}).item(), 0.5);
  EXPECT_DOUBLE_EQ(hinge_loss(Tensor({1, 2}, {0.7, 0.7}), std::vector<int>{1}, 2.5).item(), 2.5);
  EXPECT_THROW(hinge_loss(Tensor::zeros({2, 1}), std::vector<int>{0, 1}), ShapeMismatch);
}

TEST(HingeLoss, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  for (int point = 0; point < 10; ++point) {
    const Tensor scores = random_tensor({4, 2}, rng, -2, 2);
    auto f = [](const Tensor& s) { return hinge_loss(s, kLabels); };
    EXPECT_LT(finite_diff_check(f, scores), 1e-4);
  }
}

TEST(Losses, NonNegativeOnRandomInputs) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor logits = random_tensor({4, 2}, rng, -20, 20);
    EXPECT_GE(cross_entropy(softmax(logits), kLabels).item(), 0.0);
    EXPECT_GE(hinge_loss(logits, kLabels).item(), 0.0);
  }
}

TEST(Adagrad, FirstStepMovesByLearningRateTimesSign) {
  std::vector<Tensor> params{Tensor({3}, {1.0, -2.0, 0.5})};
  const std::vector<std::vector<double>> grads{{0.3, -4.0, 1e-3}};
  OptimizerState state = OptimizerState::create(OptimizerKind::adagrad, params);
  adagrad_step(params, grads, state, 0.01);
  EXPECT_NEAR(params[0][0], 1.0 - 0.01, 1e-8);
  EXPECT_NEAR(params[0][1], -2.0 + 0.01, 1e-8);
  EXPECT_NEAR(params[0][2], 0.5 - 0.01, 1e-6);
}

TEST(Adagrad, ZeroGradientIsAFixedPointAndAccumulatorGrows) {
  Rng rng(4);
  std::vector<Tensor> params{random_tensor({5}, rng)};
  const auto before = testing::to_vector(params[0]);
  OptimizerState state = OptimizerState::create(OptimizerKind::adagrad, params);
  adagrad_step(params, {std::vector<double>(5, 0.0)}, state, 0.1);
  EXPECT_EQ(testing::to_vector(params[0]), before);
  EXPECT_EQ(state.first[0], std::vector<double>(5, 0.0));

  std::vector<double> previous = state.first[0];
  for (int step = 0; step < 20; ++step) {
    std::vector<double> g(5);
    for (double& v : g) v = rng.uniform(-1, 1);
    adagrad_step(params, {g}, state, 0.1);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_GE(state.first[0][j], previous[j]);
    previous = state.first[0];
  }
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  std::vector<Tensor> params{Tensor({3}, {1.0, -2.0, 0.5})};
  OptimizerState state = OptimizerState::create(OptimizerKind::adam, params);
  adam_step(params, {{0.3, -4.0, 0.02}}, state, 0.001);
  EXPECT_NEAR(params[0][0], 1.0 - 0.001, 1e-9);
  EXPECT_NEAR(params[0][1], -2.0 + 0.001, 1e-9);
  EXPECT_NEAR(params[0][2], 0.5 - 0.001, 1e-9);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ZeroGradientAndDeterministicTrajectories) {
  std::vector<Tensor> params{Tensor({2}, {0.25, -0.75})};
  OptimizerState state = OptimizerState::create(OptimizerKind::adam, params);
  adam_step(params, {{0.0, 0.0}}, state, 0.1);
  EXPECT_EQ(testing::to_vector(params[0]), (std::vector<double>{0.25, -0.75}));

  auto trajectory = [] {
    Rng rng(9);
    std::vector<Tensor> p{random_tensor({6}, rng)};
    OptimizerState s = OptimizerState::create(OptimizerKind::adam, p);
    std::vector<double> out;
    for (int step = 0; step < 30; ++step) {
      std::vector<double> g(6);
      for (double& v : g) v = rng.normal();
      adam_step(p, {g}, s, 0.05);
      out.insert(out.end(), p[0].values().begin(), p[0].values().end());
    }
    return out;
  };
  EXPECT_EQ(trajectory(), trajectory());
}

TEST(Optimizers, RejectMismatchedGradients) {
  std::vector<Tensor> params{Tensor::zeros({3})};
  OptimizerState state = OptimizerState::create(OptimizerKind::adam, params);
  EXPECT_THROW(adam_step(params, {{1.0}}, state, 0.1), ShapeMismatch);
  OptimizerState ada = OptimizerState::create(OptimizerKind::adagrad, params);
  EXPECT_THROW(adagrad_step(params, {}, ada, 0.1), ShapeMismatch);
}

TEST(TrainConfig, ProfilesAndRoundTrip) {
  const TrainConfig vgg = TrainConfig::profile("paper-vgg19");
  EXPECT_EQ(vgg.optimizer, OptimizerKind::adagrad);
  EXPECT_EQ(vgg.learning_rate, 0.001);
  EXPECT_EQ(vgg.batch_size, 32u);
  EXPECT_EQ(vgg.epochs, 50u);
  EXPECT_EQ(vgg.loss, LossKind::cross_entropy);
  const TrainConfig fusion = TrainConfig::profile("paper-fusion");
  EXPECT_EQ(fusion.optimizer, OptimizerKind::adam);
  EXPECT_EQ(fusion.learning_rate, 0.4);
  EXPECT_EQ(fusion.loss, LossKind::hinge);
  const TrainConfig desk = TrainConfig::profile("desk-default");
  EXPECT_EQ(desk.optimizer, OptimizerKind::adam);
  EXPECT_EQ(desk.learning_rate, 0.001);
  EXPECT_THROW(TrainConfig::profile("fast"), InvalidArgument);

  TrainConfig custom = fusion;
  custom.seed = 99;
  custom.epochs = 7;
  KeyValueConfig cfg;
  custom.write(cfg);
  const TrainConfig back = TrainConfig::read(cfg, TrainConfig{});
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.epochs, 7u);
  EXPECT_EQ(back.learning_rate, 0.4);
  EXPECT_EQ(back.loss, LossKind::hinge);

  KeyValueConfig bad;
  bad.set("batch_size", std::size_t{0});
  EXPECT_THROW(TrainConfig::read(bad, TrainConfig{}), InvalidArgument);
}

TEST(Curves, CsvHeaderAndRows) {
  EpochCurves curves;
  curves.records.push_back({1, 0.5, 0.75, 0.25, 1.0});
  std::ostringstream out;
  curves.write_csv(out);
  EXPECT_EQ(out.str(), "epoch,train_loss,train_acc,val_loss,val_acc\n1,0.5,0.75,0.25,1\n");
}

TEST(Evaluate, DegenerateClassifiers) {
  const Dataset d = synth_generate(10, 16, 16, 5);
  Model model = Model::build(small_config(), 1);
  // Tensors are shared handles, so copies write through to the model.
  Tensor weight = model.head().output.weight;
  Tensor bias = model.head().output.bias;
  for (double& v : weight.mutable_values()) v = 0.0;

  // Equal logits: ties go to Normal.
  EvalResult tied = evaluate(model, d);
  EXPECT_EQ(tied.matrix, (ConfusionMatrix{0, 0, 10, 10}));

  bias.mutable_values()[1] = 5.0;
  EvalResult all_cp = evaluate(model, d);
  EXPECT_EQ(all_cp.matrix, (ConfusionMatrix{10, 10, 0, 0}));
  EXPECT_EQ(all_cp.matrix.total(), d.size());
  EXPECT_EQ(all_cp.accuracy, 0.5);

  std::vector<int> labels;
  for (const auto& img : d.items) labels.push_back(img.label);
  const ConfusionMatrix perfect = ConfusionMatrix::from_predictions(labels, labels);
  EXPECT_EQ(perfect.fp + perfect.fn, 0u);
}

TEST(Train, OneEpochGivesOneRecordAndCountsPartition) {
  const Dataset d = synth_generate(6, 16, 16, 2);
  const SplitResult split = stratified_split(d, 0.5, 1);
  Model model = Model::build(small_config(), 2);
  std::size_t calls = 0;
  const EpochCurves curves =
      train(model, split.train, split.test, quick_config(1), [&](const EpochRecord&) { ++calls; });
  ASSERT_EQ(curves.records.size(), 1u);
  EXPECT_EQ(calls, 1u);
  EXPECT_EQ(curves.records[0].epoch, 1u);
  for (double acc : {curves.records[0].train_acc, curves.records[0].val_acc}) {
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
  }
  EXPECT_EQ(evaluate(model, split.test).matrix.total(), split.test.size());
}

TEST(Train, BitDeterministicForFixedSeed) {
  const Dataset d = synth_generate(6, 16, 16, 4);
  auto run = [&](std::uint64_t seed) {
    Model model = Model::build(small_config(), 8);
    TrainConfig cfg = quick_config(3);
    cfg.seed = seed;
    const EpochCurves curves = train(model, d, d, cfg);
    std::vector<double> params;
    for (const auto& [name, t] : model.state()) params.insert(params.end(), t.values().begin(), t.values().end());
    return std::tuple{curves, params, evaluate(model, d).matrix};
  };
  const auto a = run(5);
  const auto b = run(5);
  EXPECT_EQ(std::get<0>(a), std::get<0>(b));
  EXPECT_EQ(std::get<1>(a), std::get<1>(b));
  EXPECT_EQ(std::get<2>(a), std::get<2>(b));
  EXPECT_NE(std::get<0>(a), std::get<0>(run(6)));
}

TEST(Train, FullBatchGradientDescentDecreasesLoss) {
  const Dataset d = synth_generate(8, 32, 32, 6);
  const Batch batch = make_batch(d);
  Model model = Model::build(fused_tiny_config(), 4);
  std::vector<Tensor> params;
  for (auto& named : model.parameters()) params.push_back(named.second);
  TrainConfig cfg;
  double previous = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 5; ++step) {
    Tape tape;
    Tensor loss;
    {
      Tape::Scope scope(tape);
      loss = compute_loss(model.logits(batch.images, true), batch.labels, cfg);
    }
    EXPECT_LT(loss.item(), previous) << "step " << step;
    previous = loss.item();
    backward(loss, tape);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      auto v = p.mutable_values();
      for (std::size_t j = 0; j < v.size(); ++j) v[j] -= 0.01 * p.grad()[j];
      p.clear_grad();
    }
  }
}

TEST(Train, DivergenceAbortsWithPartialCurves) {
  const Dataset d = synth_generate(4, 16, 16, 7);
  Model model = Model::build(small_config(), 3);
  auto poison = [&](const EpochRecord& r) {
    if (r.epoch == 2) {
      Tensor w = model.head().output.weight;
      for (double& v : w.mutable_values()) v = std::numeric_limits<double>::quiet_NaN();
    }
  };
  try {
    train(model, d, d, quick_config(5), poison);
    FAIL() << "expected DivergedLoss";
  } catch (const DivergedLoss& e) {
    EXPECT_EQ(e.partial_curves().records.size(), 2u);
    EXPECT_EQ(e.kind(), "DivergedLoss");
  }
}

TEST(Train, RejectsEmptyDataAndBadConfig) {
  const Dataset d = synth_generate(2, 16, 16, 7);
  Model model = Model::build(small_config(), 3);
  EXPECT_THROW(train(model, Dataset{}, d, quick_config(1)), InvalidArgument);
  TrainConfig cfg = quick_config(1);
  cfg.learning_rate = 0.0;
  EXPECT_THROW(train(model, d, d, cfg), InvalidArgument);
  EXPECT_THROW(evaluate(model, Dataset{}), InvalidArgument);
}

}  // namespace
}  // namespace fusenet
