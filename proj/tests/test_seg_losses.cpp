#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "usn/seg_losses.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

using namespace usn;

namespace {

ProbMask random_probs(int side, std::mt19937_64& rng, double lo = 0.1, double hi = 0.9) {
  std::uniform_real_distribution<double> dist(lo, hi);
  ProbMask m(side, side);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = dist(rng);
  return m;
}

ProbMask random_binary(int side, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  ProbMask m(side, side);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = coin(rng);
  return m;
}

// Central finite differences against the analytic gradient at sampled pixels.
double max_fd_rel_error(const std::function<LossGrad(const ProbMask&)>& loss, const ProbMask& at,
                        std::mt19937_64& rng, int probes = 10, double step = 1e-4) {
  const LossGrad base = loss(at);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(at.size()) - 1);
  double worst = 0.0;
  for (int k = 0; k < probes; ++k) {
    const int i = pick(rng);
    ProbMask plus = at, minus = at;
    plus(i) += step;
    minus(i) -= step;
    const double fd = (loss(plus).value - loss(minus).value) / (2.0 * step);
    const double an = base.grad(i);
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
  }
  return worst;
}

}  // namespace

TEST_CASE("dice loss anchors") {
  ProbMask gt(16, 16), pred(16, 16);
  gt.setZero();
  pred.setZero();
  for (int i = 0; i < 100; ++i) gt(i / 16, i % 16) = 1.0;

  SUBCASE("perfect prediction scores zero") {
    CHECK(dice_loss(gt, gt).value == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("disjoint prediction saturates at one") {
    for (int i = 100; i < 200; ++i) pred(i / 16, i % 16) = 1.0;
    CHECK(dice_loss(pred, gt).value > 0.99);
  }
  SUBCASE("half overlap scores one half") {
    for (int i = 50; i < 150; ++i) pred(i / 16, i % 16) = 1.0;
    CHECK(dice_loss(pred, gt).value == doctest::Approx(0.5).epsilon(0.01));
  }
  SUBCASE("dimension mismatch throws") {
    CHECK_THROWS_AS(dice_loss(ProbMask::Zero(8, 8), gt), std::invalid_argument);
  }
}

TEST_CASE("cross entropy anchors") {
  std::mt19937_64 rng(1);
  const ProbMask gt = random_binary(16, rng);

  CHECK(ce_loss(gt, gt).value < 1e-6);  // confident and correct

  const ProbMask half = ProbMask::Constant(16, 16, 0.5);
  CHECK(ce_loss(half, gt).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("focal loss anchors and the gamma=0 reduction") {
  std::mt19937_64 rng(2);
  const ProbMask gt = random_binary(16, rng);
  const ProbMask half = ProbMask::Constant(16, 16, 0.5);
  CHECK(focal_loss(half, gt, 2.0).value == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));

  for (int trial = 0; trial < 5; ++trial) {
    const ProbMask pred = random_probs(16, rng);
    const LossGrad f = focal_loss(pred, gt, 0.0);
    const LossGrad c = ce_loss(pred, gt);
    CHECK(std::abs(f.value - c.value) < 1e-12);
    CHECK((f.grad - c.grad).abs().maxCoeff() < 1e-12);
  }

  CHECK_THROWS_AS(focal_loss(half, gt, -1.0), std::invalid_argument);
}

TEST_CASE("contextual loss identities") {
  const FeatureEmbedding emb;
  std::mt19937_64 rng(3);
  const ProbMask m = random_probs(16, rng);
  CHECK(contextual_loss(m, m, emb).value == doctest::Approx(0.0).epsilon(1e-9));

  // orthogonal by construction under the raw pooling map
  const FeatureEmbedding pooled({2, 4, 8}, 0, 17, /*project=*/false);
  ProbMask top = ProbMask::Zero(16, 16), bottom = ProbMask::Zero(16, 16);
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 16; ++u) {
      top(v, u) = 1.0;
      bottom(v + 8, u) = 1.0;
    }
  CHECK(contextual_loss(top, bottom, pooled).value == doctest::Approx(1.0).epsilon(1e-12));

  const LossGrad degenerate = contextual_loss(ProbMask::Zero(16, 16), m, emb);
  CHECK(degenerate.value == doctest::Approx(1.0));
  CHECK(degenerate.degenerate);
  CHECK(degenerate.grad.abs().maxCoeff() == 0.0);
}

TEST_CASE("seg loss is linear in its weights") {
  const FeatureEmbedding emb;
  std::mt19937_64 rng(4);
  const ProbMask pred = random_probs(16, rng);
  const ProbMask gt = random_binary(16, rng);

  const LossGrad dice_only = seg_loss(pred, gt, emb, {1.0, 0.0, 0.1});
  CHECK(dice_only.value == doctest::Approx(dice_loss(pred, gt).value).epsilon(1e-12));

  const LossGrad cl_only = seg_loss(pred, gt, emb, {0.0, 0.001, 0.1});
  CHECK(cl_only.value ==
        doctest::Approx(0.001 * contextual_loss(pred, gt, emb).value).epsilon(1e-12));

  const LossGrad both = seg_loss(pred, gt, emb, {1.0, 0.001, 0.1});
  CHECK(both.value == doctest::Approx(dice_only.value + cl_only.value).epsilon(1e-12));
  CHECK((both.grad - dice_only.grad - cl_only.grad).abs().maxCoeff() < 1e-12);
}

TEST_CASE("adversarial loss anchors") {
  CHECK(adv_disc_loss(0.5, 0.5) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
  CHECK(adv_disc_loss(0.0, 1.0) < 1e-6);   // perfect discriminator
  CHECK(adv_disc_loss(1.0, 0.0) > 30.0);   // fooled, clipped at 1e-7

  Eigen::VectorXd fake(2), real(2);
  fake << 0.5, 0.5;
  real << 0.5, 0.5;
  CHECK(adv_disc_loss(fake, real) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("generator loss composition") {
  const FeatureEmbedding emb;
  std::mt19937_64 rng(5);
  const ProbMask pred = random_probs(16, rng);
  const ProbMask gt = random_binary(16, rng);

  const LossGrad seg = seg_loss(pred, gt, emb, {1.0, 0.001, 0.0});
  const LossGrad gen0 = gen_loss(pred, gt, emb, 0.3, {1.0, 0.001, 0.0});
  CHECK(gen0.value == doctest::Approx(seg.value).epsilon(1e-12));  // lambda_adv = 0

  const LossGrad fooled = gen_loss(pred, gt, emb, 1.0, {1.0, 0.001, 0.1});
  CHECK(fooled.value == doctest::Approx(seg.value).epsilon(1e-4));  // -log(1) ~ 0
}

TEST_CASE("every gradient matches central finite differences") {
  const FeatureEmbedding emb;
  const ToyDiscriminator disc(4, 11);
  const LossWeights w;
  std::mt19937_64 rng(6);

  for (int trial = 0; trial < 10; ++trial) {
    const ProbMask gt = random_binary(16, rng);
    const ProbMask pred = random_probs(16, rng);

    CHECK(max_fd_rel_error([&](const ProbMask& p) { return dice_loss(p, gt); }, pred, rng) < 1e-4);
    CHECK(max_fd_rel_error([&](const ProbMask& p) { return ce_loss(p, gt); }, pred, rng) < 1e-4);
    CHECK(max_fd_rel_error([&](const ProbMask& p) { return focal_loss(p, gt, 2.0); }, pred, rng) <
          1e-4);
    CHECK(max_fd_rel_error([&](const ProbMask& p) { return contextual_loss(p, gt, emb); }, pred,
                           rng) < 1e-4);
    CHECK(max_fd_rel_error([&](const ProbMask& p) { return seg_loss(p, gt, emb, w); }, pred, rng) <
          1e-4);
    CHECK(max_fd_rel_error(
              [&](const ProbMask& p) { return gen_loss_through_disc(p, gt, emb, disc, w); }, pred,
              rng) < 1e-4);
  }
}

TEST_CASE("losses stay finite and non-negative at saturated probabilities") {
  const FeatureEmbedding emb;
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    ProbMask pred(16, 16);
    std::uniform_int_distribution<int> mode(0, 2);
    std::uniform_real_distribution<double> up(0.0, 1.0);
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      const int m = mode(rng);
      pred(i) = m == 0 ? 0.0 : (m == 1 ? 1.0 : up(rng));
    }
    const ProbMask gt = random_binary(16, rng);
    for (const double v :
         {dice_loss(pred, gt).value, ce_loss(pred, gt).value, focal_loss(pred, gt, 2.0).value,
          contextual_loss(pred, gt, emb).value, seg_loss(pred, gt, emb, {}).value}) {
      CHECK(std::isfinite(v));
      CHECK(v >= -1e-12);
    }
  }
}

TEST_CASE("separable scenes train to high IoU with any loss") {
  ToyDataParams params;
  params.count = 48;
  params.shaft_level = 1.0;
  params.background_level = 0.25;
  params.distractor_count = 0;
  params.speckle_sigma = 0.10;
  params.seed = 77;
  const ToyDataset train = make_toy_dataset(params);
  ToyDataParams vparams = params;
  vparams.count = 16;
  vparams.seed = 78;
  const ToyDataset val = make_toy_dataset(vparams);

  TrainConfig config;
  config.seed = 5;
  for (const LossChoice loss : {LossChoice::kDice, LossChoice::kCe, LossChoice::kFocal}) {
    const TrainResult result = train_toy(train, val, config, loss);
    CHECK(result.history.back().val_iou >= 0.9);
  }
}

TEST_CASE("feature embedding is deterministic") {
  const FeatureEmbedding a;
  const FeatureEmbedding b;
  std::mt19937_64 rng(7);
  const ProbMask m = random_probs(24, rng);
  CHECK((a.embed(m) - b.embed(m)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((a.embed(m) - a.embed(m)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("trainer contracts and schedule") {
  ToyDataParams params;
  params.count = 6;
  params.image_px = 32;
  params.seed = 21;
  const ToyDataset train = make_toy_dataset(params);
  ToyDataParams vparams = params;
  vparams.count = 2;
  vparams.seed = 22;
  const ToyDataset val = make_toy_dataset(vparams);

  SUBCASE("empty dataset throws") {
    CHECK_THROWS_AS(train_toy({}, val, {}, LossChoice::kDice), std::invalid_argument);
  }

  SUBCASE("phase-2 learning rates halve every 8 epochs") {
    TrainConfig config;
    config.phase1.epochs = 2;
    config.run_phase2 = true;
    config.seed = 1;
    const TrainResult result = train_toy(train, val, config, LossChoice::kDice);
    REQUIRE(result.history.size() == 2 + 40);
    const auto lr_at = [&](int epoch) { return result.history[2 + epoch].lr_gen; };
    CHECK(lr_at(0) == doctest::Approx(5e-5));
    CHECK(lr_at(7) == doctest::Approx(5e-5));
    CHECK(lr_at(8) == doctest::Approx(2.5e-5));
    CHECK(lr_at(16) == doctest::Approx(1.25e-5));
    CHECK(lr_at(24) == doctest::Approx(6.25e-6));
    CHECK(lr_at(32) == doctest::Approx(3.125e-6));
    CHECK(result.history[2 + 8].lr_disc == doctest::Approx(0.5e-5));
  }

  SUBCASE("training is deterministic and focal(0) matches ce history") {
    TrainConfig config;
    config.phase1.epochs = 3;
    config.focal_gamma = 0.0;
    config.seed = 9;
    const TrainResult a = train_toy(train, val, config, LossChoice::kCe);
    const TrainResult b = train_toy(train, val, config, LossChoice::kCe);
    const TrainResult f = train_toy(train, val, config, LossChoice::kFocal);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].mean_loss == doctest::Approx(b.history[i].mean_loss).epsilon(1e-15));
      CHECK(a.history[i].mean_loss == doctest::Approx(f.history[i].mean_loss).epsilon(1e-9));
      CHECK(a.history[i].val_iou == doctest::Approx(f.history[i].val_iou).epsilon(1e-9));
    }
    CHECK((a.model.weights - f.model.weights).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("phase 1 training reduces the loss") {
    TrainConfig config;
    config.phase1.epochs = 15;
    config.seed = 3;
    const TrainResult result = train_toy(train, val, config, LossChoice::kDice);
    CHECK(result.history.back().mean_loss < result.history.front().mean_loss);
  }
}

TEST_CASE("toy dataset hits the 1:50 imbalance regime") {
  ToyDataParams params;
  params.count = 12;
  params.seed = 5;
  const ToyDataset data = make_toy_dataset(params);
  double fg = 0.0, total = 0.0;
  for (const auto& label : data.labels) {
    fg += (label >= 0.5).count();
    total += static_cast<double>(label.size());
  }
  const double ratio = fg / (total - fg);
  CHECK(ratio > 1.0 / 120.0);
  CHECK(ratio < 1.0 / 20.0);
}
