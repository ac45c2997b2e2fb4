#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "m3s/classifier.hpp"
#include "support.hpp"

using namespace m3s;

TEST(Softmax, SymmetricPair) {
  const auto p = softmax(Vec{0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, LargeEqualLogitsDoNotOverflow) {
  const auto p = softmax(Vec{1000.0, 1000.0, 1000.0});
  for (double x : p) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, OneTwoThree) {
  // exp(k) / (e + e^2 + e^3), evaluated in long double.
  const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  const auto p = softmax(Vec{1.0, 2.0, 3.0});
  EXPECT_NEAR(p[0], 0.09003057, 5e-9);
  EXPECT_NEAR(p[1], 0.24472847, 5e-9);
  EXPECT_NEAR(p[2], 0.66524096, 5e-9);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p[k], static_cast<double>(std::exp(k + 1.0L) / z), 1e-15);
}

TEST(Softmax, EmptyInputThrows) { EXPECT_THROW(softmax(Vec{}), Error); }

TEST(Softmax, ExtremeLogitsStayFinite) {
  const auto p = softmax(Vec{-1e308, 0.0, 1e308});
  for (double x : p) EXPECT_TRUE(std::isfinite(x));
  EXPECT_DOUBLE_EQ(p[2], 1.0);
}

TEST(Forward, ZeroNetworkGivesUniformProbs) {
  const auto c = Classifier::zeros({3, {5}, 4, 4, Activation::Tanh});
  const auto f = c.forward(Vec{1.0, -2.0, 3.0});
  for (double e : f.embedding) EXPECT_EQ(e, 0.0);
  for (double p : f.probs) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(Forward, ProbsSumToOne) {
  const auto c = Classifier::create({6, {16, 8}, 5, 7, Activation::ReLU}, 3);
  Rng r(1);
  for (int i = 0; i < 50; ++i) {
    Vec x(6);
    for (auto& v : x) v = r.normal() * 3;
    const auto f = c.forward(x);
    double s = 0;
    for (double p : f.probs) s += p;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Forward, MatchesHandRolledPass) {
  // 4 -> 8 -> 3 -> 2 with ReLU on the hidden layer only.
  const auto c = Classifier::create({4, {8}, 3, 2, Activation::ReLU}, 21);
  const Vec x{0.3, -1.2, 2.0, 0.7};
  const auto& L = c.layers();
  double h[8], e[3], z[2];
  for (int r = 0; r < 8; ++r) {
    double s = L[0].b[r];
    for (int k = 0; k < 4; ++k) s += L[0].w[r * 4 + k] * x[k];
    h[r] = s > 0 ? s : 0;
  }
  for (int r = 0; r < 3; ++r) {
    double s = L[1].b[r];
    for (int k = 0; k < 8; ++k) s += L[1].w[r * 8 + k] * h[k];
    e[r] = s;
  }
  for (int r = 0; r < 2; ++r) {
    double s = L[2].b[r];
    for (int k = 0; k < 3; ++k) s += L[2].w[r * 3 + k] * e[k];
    z[r] = s;
  }
  const double p1 = 1.0 / (1.0 + std::exp(z[0] - z[1]));
  const auto f = c.forward(x);
  for (int r = 0; r < 3; ++r) EXPECT_NEAR(f.embedding[r], e[r], 1e-12);
  for (int r = 0; r < 2; ++r) EXPECT_NEAR(f.logits[r], z[r], 1e-12);
  EXPECT_NEAR(f.probs[1], p1, 1e-12);
  EXPECT_NEAR(f.probs[0], 1.0 - p1, 1e-12);
}

TEST(Forward, DimensionMismatchThrows) {
  const auto c = Classifier::create({4, {8}, 3, 2, Activation::ReLU}, 1);
  EXPECT_THROW(c.forward(Vec{1.0, 2.0}), DimensionError);
}

TEST(Init, UniformFanInBounds) {
  const auto c = Classifier::create({10, {20}, 6, 3, Activation::ReLU}, 5);
  for (const auto& l : c.layers()) {
    const double bound = std::sqrt(6.0 / double(l.in));
    for (double w : l.w) EXPECT_LE(std::abs(w), bound);
    for (double b : l.b) EXPECT_EQ(b, 0.0);
  }
}

TEST(Gradient, MatchesFiniteDifferencesOnThreeSamples) {
  for (auto act : {Activation::ReLU, Activation::Tanh}) {
    auto c = Classifier::create({5, {7, 6}, 4, 3, act}, 13);
    const std::vector<Example> batch{{{0.1, -0.4, 1.2, 0.3, -0.9}, 0}, {{1.1, 0.2, -0.3, 0.8, 0.5}, 2},
                                     {{-0.7, 0.9, 0.4, -1.5, 0.2}, 1}};
    Rng rng(4);
    randomize_biases(c, rng);
    ASSERT_GT(min_hidden_preactivation(c, batch), 1e-3);
    EXPECT_LT(max_gradient_error(c, batch), 1e-4) << to_string(act);
  }
}

TEST(Train, LabelOutsideRangeThrows) {
  const auto c = Classifier::create({2, {4}, 2, 2, Activation::ReLU}, 1);
  const std::vector<Example> bad{{{0.0, 1.0}, 2}};
  EXPECT_THROW(train(c, bad, {}), Error);
  const std::vector<Example> neg{{{0.0, 1.0}, -1}};
  EXPECT_THROW(train(c, neg, {}), Error);
}

TEST(Train, NanLossNamesEpochAndBatch) {
  const auto c = Classifier::create({2, {4}, 2, 2, Activation::ReLU}, 1);
  const std::vector<Example> data{{{0.0, 1.0}, 0}, {{std::nan(""), 1.0}, 1}};
  TrainConfig cfg;
  cfg.batch_size = 1;
  try {
    train(c, data, cfg);
    FAIL() << "expected a training error";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
  }
}

TEST(Train, MemorizesSingleSample) {
  const auto c = Classifier::create({3, {8}, 4, 3, Activation::ReLU}, 2);
  const std::vector<Example> one{{{0.5, -0.2, 0.9}, 2}};
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.patience = 200;
  const auto r = train(c, one, cfg);
  EXPECT_EQ(argmax(r.model.forward(one[0].x).probs), 2u);
}

TEST(Train, SeparatedBlobsReachNearestCentroidAccuracy) {
  Rng rng(4);
  std::vector<Example> data;
  for (int i = 0; i < 200; ++i) {
    const int y = i % 2;
    data.push_back({{(y ? 4.0 : -4.0) + rng.normal(), rng.normal()}, y});
  }
  // Nearest-centroid oracle on the same data.
  double m[2][2] = {{0, 0}, {0, 0}};
  for (const auto& e : data)
    for (int j = 0; j < 2; ++j) m[e.y][j] += e.x[j] / 100.0;
  int oracle = 0;
  for (const auto& e : data) {
    double d0 = 0, d1 = 0;
    for (int j = 0; j < 2; ++j) {
      d0 += (e.x[j] - m[0][j]) * (e.x[j] - m[0][j]);
      d1 += (e.x[j] - m[1][j]) * (e.x[j] - m[1][j]);
    }
    oracle += (d1 < d0) == (e.y == 1);
  }
  const auto r = train(Classifier::create({2, {16, 16}, 4, 2, Activation::ReLU}, 9), data, {});
  int ok = 0;
  for (const auto& e : data) ok += static_cast<int>(argmax(r.model.forward(e.x).probs)) == e.y;
  EXPECT_GE(ok / 200.0, 0.99);
  EXPECT_GE(ok, oracle - 2);
  EXPECT_LE(r.final_loss(), r.initial_loss());
}

TEST(Train, DeterministicPerSeed) {
  Rng rng(8);
  std::vector<Example> data;
  for (int i = 0; i < 64; ++i) data.push_back({{rng.normal(), rng.normal(), rng.normal()}, i % 3});
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.patience = 5;
  cfg.seed = 77;
  const auto c = Classifier::create({3, {8}, 4, 3, Activation::ReLU}, 1);
  EXPECT_EQ(train(c, data, cfg).model, train(c, data, cfg).model);
  cfg.seed = 78;
  EXPECT_FALSE(train(c, data, cfg).model == train(c, data, TrainConfig{5, 32, 0.05, 5, 0.0, 77}).model);
}

TEST(Train, EarlyStoppingReturnsBestValidationModel) {
  Rng rng(2);
  std::vector<Example> data, val;
  for (int i = 0; i < 40; ++i) data.push_back({{rng.normal(), rng.normal()}, static_cast<int>(rng.below(2))});
  for (int i = 0; i < 40; ++i) val.push_back({{rng.normal(), rng.normal()}, static_cast<int>(rng.below(2))});
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.patience = 5;
  cfg.learning_rate = 0.2;
  const auto init = Classifier::create({2, {32}, 8, 2, Activation::ReLU}, 3);
  const auto r = train(init, data, cfg, val);
  EXPECT_TRUE(r.stopped_early);
  ASSERT_LT(r.best_epoch + 1, r.epoch_losses.size());
  // The same run cut off right after the best epoch must give the same model.
  TrainConfig cut = cfg;
  cut.epochs = r.best_epoch + 1;
  cut.patience = 1;
  EXPECT_EQ(train(init, data, cut).model, r.model);
}

TEST(Train, ConfigValidation) {
  const auto c = Classifier::create({2, {4}, 2, 2, Activation::ReLU}, 1);
  const std::vector<Example> data{{{0.0, 1.0}, 0}};
  EXPECT_THROW(train(c, data, TrainConfig{0, 32, 0.05, 1, 0.0, 0}), ConfigError);
  EXPECT_THROW(train(c, data, TrainConfig{5, 32, 0.05, 6, 0.0, 0}), ConfigError);
  EXPECT_THROW(train(c, data, TrainConfig{5, 32, -1.0, 1, 0.0, 0}), ConfigError);
  EXPECT_THROW(train(c, {}, TrainConfig{}), ConfigError);
}

TEST(ExpandOutput, PreservesExistingRowsBitExactly) {
  const auto c = Classifier::create({4, {8}, 5, 3, Activation::ReLU}, 6);
  const auto e = expand_output(c, 4, 99);
  ASSERT_EQ(e.num_classes(), 4u);
  const auto& before = c.layers().back();
  const auto& after = e.layers().back();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t k = 0; k < before.in; ++k) EXPECT_EQ(after.weight(r, k), before.weight(r, k));
    EXPECT_EQ(after.b[r], before.b[r]);
  }
  for (std::size_t i = 0; i + 1 < c.layers().size(); ++i) EXPECT_EQ(e.layers()[i], c.layers()[i]);
  bool nonzero = false;
  for (std::size_t k = 0; k < after.in; ++k) nonzero |= after.weight(3, k) != 0.0;
  EXPECT_TRUE(nonzero);
}

TEST(ExpandOutput, SameSeedSameNewRowsAndShrinkRejected) {
  const auto c = Classifier::create({4, {8}, 5, 3, Activation::ReLU}, 6);
  EXPECT_EQ(expand_output(c, 5, 1), expand_output(c, 5, 1));
  EXPECT_THROW(expand_output(c, 3, 1), ConfigError);
  EXPECT_THROW(expand_output(c, 2, 1), ConfigError);
}

TEST(Checkpoint, ClassifierRoundTripIsBitExact) {
  auto c = Classifier::create({4, {8, 6}, 5, 3, Activation::Tanh}, 6);
  c.set_label_version(4);
  const auto path = (scratch_dir("clf_rt") / "model.json").string();
  save_classifier(c, path);
  EXPECT_EQ(load_classifier(path), c);
}

TEST(Checkpoint, CorruptClassifierFileIsRejected) {
  const auto dir = scratch_dir("clf_bad");
  const auto c = Classifier::create({4, {8}, 5, 3, Activation::ReLU}, 6);
  const std::string text = to_json(c).dump();
  {
    std::ofstream f(dir / "trunc.json");
    f << text.substr(0, text.size() / 2);
  }
  EXPECT_THROW(load_classifier((dir / "trunc.json").string()), CorruptionError);
  auto j = to_json(c);
  j["version"] = 9;
  EXPECT_THROW(classifier_from_json(j), CorruptionError);
  j = to_json(c);
  j["layers"][1]["w"].erase(0);
  EXPECT_THROW(classifier_from_json(j), CorruptionError);
}
