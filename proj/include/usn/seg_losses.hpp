#pragma once

#include "usn/image.hpp"
#include "usn/sim_scene.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <vector>

namespace usn {

/// Per-pixel probabilities in [0, 1]; same raster layout as GrayImage.
using ProbMask = Eigen::ArrayXXd;

struct LossGrad {
  double value = 0.0;
  Eigen::ArrayXXd grad;   // d value / d pred, same shape as pred
  bool degenerate = false;  // contextual loss: zero feature vector
};

struct LossWeights {
  double lambda_dice = 1.0;
  double lambda_cl = 0.001;
  double lambda_adv = 0.1;
};

/// Soft Dice with smoothing epsilon 1.0 on the mask-sum scale.
LossGrad dice_loss(const ProbMask& pred, const ProbMask& gt);

/// Mean binary cross-entropy; probabilities clipped to [1e-7, 1 - 1e-7].
LossGrad ce_loss(const ProbMask& pred, const ProbMask& gt);

/// Mean focal loss -(1 - p_t)^gamma log p_t; reduces to ce_loss at gamma = 0.
LossGrad focal_loss(const ProbMask& pred, const ProbMask& gt, double gamma = 2.0);

/// Deterministic stand-in for a pre-trained feature extractor: multi-scale
/// average pooling followed by a fixed seeded linear projection. Projection
/// matrices are generated per input size from the seed and cached; instances
/// are not safe for concurrent first use on a new size.
class FeatureEmbedding {
 public:
  explicit FeatureEmbedding(std::vector<int> scales = {2, 4, 8}, int out_dim = 64,
                            std::uint64_t seed = 17, bool project = true);

  Eigen::VectorXd embed(const ProbMask& m) const;
  /// Adjoint of the (linear) embedding map, for gradient backpropagation.
  Eigen::ArrayXXd backproject(const Eigen::VectorXd& feature_grad, int height, int width) const;

 private:
  std::vector<int> scales_;
  int out_dim_;
  std::uint64_t seed_;
  bool project_;
  mutable std::map<std::pair<int, int>, Eigen::MatrixXd> projections_;

  Eigen::VectorXd pool(const ProbMask& m) const;
  const Eigen::MatrixXd& projection(int height, int width, int in_dim) const;
};

/// 1 - cosine similarity between embedded prediction and ground truth. When
/// either embedding has zero norm the loss is 1 with zero gradient and the
/// result is flagged degenerate.
LossGrad contextual_loss(const ProbMask& pred, const ProbMask& gt, const FeatureEmbedding& emb);

/// lambda_dice * Dice + lambda_cl * contextual.
LossGrad seg_loss(const ProbMask& pred, const ProbMask& gt, const FeatureEmbedding& emb,
                  const LossWeights& w);

/// Discriminator objective: BCE(d_fake, 0) + BCE(d_real, 1), batch-averaged.
double adv_disc_loss(double d_on_fake, double d_on_real);
double adv_disc_loss(const Eigen::VectorXd& d_on_fake, const Eigen::VectorXd& d_on_real);

/// Logistic discriminator over an s x s grid of mean-pooled mask cells.
class ToyDiscriminator {
 public:
  explicit ToyDiscriminator(int grid = 4, std::uint64_t seed = 99);

  double predict(const ProbMask& mask) const;
  Eigen::VectorXd features(const ProbMask& mask) const;  // grid*grid means
  /// d predict / d mask, for generator gradient flow.
  Eigen::ArrayXXd input_gradient(const ProbMask& mask) const;

  /// One gradient step on adv_disc_loss over matched fake/real batches.
  void train_step(const std::vector<ProbMask>& fake, const std::vector<ProbMask>& real,
                  double lr);

  int grid() const { return grid_; }
  Eigen::VectorXd weights;  // grid*grid
  double bias = 0.0;

 private:
  int grid_;
};

/// Generator objective with the discriminator output supplied externally:
/// seg_loss + lambda_adv * BCE(d_on_fake, 1). The gradient covers the
/// prediction's segmentation terms only.
LossGrad gen_loss(const ProbMask& pred, const ProbMask& gt, const FeatureEmbedding& emb,
                  double d_on_fake, const LossWeights& w);

/// Same objective with the full gradient chained through the discriminator.
LossGrad gen_loss_through_disc(const ProbMask& pred, const ProbMask& gt,
                               const FeatureEmbedding& emb, const ToyDiscriminator& disc,
                               const LossWeights& w);

/// Per-pixel logistic model over hand-crafted features: intensity, two
/// oriented line-filter responses, and a 5x5 local mean. Features are
/// standardized with statistics frozen at training time.
class LinearSegmenter {
 public:
  static constexpr int kFeatures = 4;

  Eigen::VectorXd weights = Eigen::VectorXd::Zero(kFeatures);
  double bias = 0.0;
  Eigen::VectorXd feature_mean = Eigen::VectorXd::Zero(kFeatures);
  Eigen::VectorXd feature_scale = Eigen::VectorXd::Ones(kFeatures);

  /// Raw per-pixel features, one column per feature, pixels in column-major
  /// raster order.
  static Eigen::MatrixXd featurize(const GrayImage& image);

  ProbMask predict(const GrayImage& image) const;
  ProbMask predict_standardized(const Eigen::MatrixXd& std_features, int height, int width) const;
  Eigen::MatrixXd standardize(const Eigen::MatrixXd& raw_features) const;
};

enum class LossChoice { kCe, kFocal, kDice, kDiceCl, kFocalCl };
enum class Optimizer { kAdam, kSgd };

struct TrainPhase1Config {
  int epochs = 40;
  int batch_size = 8;
  double lr = 1e-4;
};

struct TrainPhase2Config {
  int epochs = 40;
  int batch_size = 8;
  double lr_gen = 5e-5;
  double lr_disc = 1e-5;
  int halving_period_epochs = 8;
};

struct TrainConfig {
  TrainPhase1Config phase1;
  TrainPhase2Config phase2;
  bool run_phase2 = false;
  Optimizer optimizer = Optimizer::kSgd;  // plain gradient descent
  double focal_gamma = 2.0;
  LossWeights weights;
  double feature_gain = 20.0;  // standardized feature scale
  std::uint64_t seed = 0;
};

struct EpochStats {
  int phase = 1;
  int epoch = 0;
  double mean_loss = 0.0;
  double val_iou = 0.0;
  double lr_gen = 0.0;
  double lr_disc = 0.0;
};

struct ToyDataset {
  std::vector<GrayImage> images;
  std::vector<GrayImage> labels;  // 0/1 valued
};

struct TrainResult {
  LinearSegmenter model;
  ToyDiscriminator disc{4, 99};
  std::vector<EpochStats> history;
};

/// Two-phase trainer: phase 1 minimizes the chosen segmentation loss; phase 2
/// (optional) alternates generator and discriminator updates with the halving
/// learning-rate schedule. Deterministic for a fixed config seed. Throws
/// std::invalid_argument on an empty training set.
TrainResult train_toy(const ToyDataset& train, const ToyDataset& val, const TrainConfig& config,
                      LossChoice loss);

double mean_validation_iou(const LinearSegmenter& model, const ToyDataset& val,
                           double threshold = 0.5);

struct ToyDataParams {
  int count = 64;
  int image_px = 64;
  double pixel_spacing_mm = 0.65;
  double background_level = 0.30;
  double shaft_level = 0.60;
  double distractor_level = 0.55;
  double speckle_sigma = 0.35;
  int distractor_count = 2;
  double needle_angle_range_deg = 15.0;
  std::uint64_t seed = 0;
};

/// Synthetic imbalanced needle scenes (roughly 1:50 foreground:background).
ToyDataset make_toy_dataset(const ToyDataParams& params);

}  // namespace usn
