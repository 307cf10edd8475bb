#include "usn/seg_losses.hpp"

#include "usn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace usn {
namespace {

constexpr double kProbClip = 1e-7;

void check_same_shape(const ProbMask& a, const ProbMask& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(who) + ": dimension mismatch");
  }
}

double clip_prob(double p) { return std::clamp(p, kProbClip, 1.0 - kProbClip); }

}  // namespace

LossGrad dice_loss(const ProbMask& pred, const ProbMask& gt) {
  check_same_shape(pred, gt, "dice_loss");
  constexpr double kEps = 1.0;
  const double inter = (pred * gt).sum();
  const double num = 2.0 * inter + kEps;
  const double den = pred.sum() + gt.sum() + kEps;
  LossGrad out;
  out.value = 1.0 - num / den;
  out.grad = -(2.0 * gt * den - num) / (den * den);
  return out;
}

LossGrad ce_loss(const ProbMask& pred, const ProbMask& gt) {
  check_same_shape(pred, gt, "ce_loss");
  const double n = static_cast<double>(pred.size());
  LossGrad out;
  out.grad = Eigen::ArrayXXd::Zero(pred.rows(), pred.cols());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double p = pred(i);
    const double pc = clip_prob(p);
    const double g = gt(i);
    sum += -(g * std::log(pc) + (1.0 - g) * std::log(1.0 - pc));
    if (p > kProbClip && p < 1.0 - kProbClip) {
      out.grad(i) = (-g / pc + (1.0 - g) / (1.0 - pc)) / n;
    }
  }
  out.value = sum / n;
  return out;
}

LossGrad focal_loss(const ProbMask& pred, const ProbMask& gt, double gamma) {
  check_same_shape(pred, gt, "focal_loss");
  if (gamma < 0.0) throw std::invalid_argument("focal_loss: gamma must be >= 0");
  const double n = static_cast<double>(pred.size());
  LossGrad out;
  out.grad = Eigen::ArrayXXd::Zero(pred.rows(), pred.cols());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double p = pred(i);
    const double pc = clip_prob(p);
    const double g = gt(i);
    const double pt = g > 0.5 ? pc : 1.0 - pc;
    const double one_minus = 1.0 - pt;
    const double pow_g = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);
    sum += -pow_g * std::log(pt);
    if (p > kProbClip && p < 1.0 - kProbClip) {
      double d_pt = -pow_g / pt;
      if (gamma != 0.0) d_pt += gamma * std::pow(one_minus, gamma - 1.0) * std::log(pt);
      out.grad(i) = (g > 0.5 ? d_pt : -d_pt) / n;
    }
  }
  out.value = sum / n;
  return out;
}

FeatureEmbedding::FeatureEmbedding(std::vector<int> scales, int out_dim, std::uint64_t seed,
                                   bool project)
    : scales_(std::move(scales)), out_dim_(out_dim), seed_(seed), project_(project) {
  if (scales_.empty()) throw std::invalid_argument("FeatureEmbedding: need at least one scale");
  for (const int s : scales_) {
    if (s < 1) throw std::invalid_argument("FeatureEmbedding: scales must be >= 1");
  }
}

Eigen::VectorXd FeatureEmbedding::pool(const ProbMask& m) const {
  const int h = static_cast<int>(m.rows());
  const int w = static_cast<int>(m.cols());
  std::vector<double> values;
  for (const int s : scales_) {
    const int ph = (h + s - 1) / s;
    const int pw = (w + s - 1) / s;
    for (int j = 0; j < pw; ++j) {
      for (int i = 0; i < ph; ++i) {
        const int r0 = i * s, r1 = std::min(h, r0 + s);
        const int c0 = j * s, c1 = std::min(w, c0 + s);
        double sum = 0.0;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) sum += m(r, c);
        values.push_back(sum / ((r1 - r0) * (c1 - c0)));
      }
    }
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

const Eigen::MatrixXd& FeatureEmbedding::projection(int height, int width, int in_dim) const {
  const auto key = std::make_pair(height, width);
  auto it = projections_.find(key);
  if (it != projections_.end()) return it->second;
  auto rng = make_rng(derive_seed(seed_, (static_cast<std::uint64_t>(height) << 20) ^
                                             static_cast<std::uint64_t>(width)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(out_dim_, in_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = gauss(rng) * scale;
  return projections_.emplace(key, std::move(m)).first->second;
}

Eigen::VectorXd FeatureEmbedding::embed(const ProbMask& m) const {
  Eigen::VectorXd pooled = pool(m);
  if (!project_) return pooled;
  return projection(static_cast<int>(m.rows()), static_cast<int>(m.cols()),
                    static_cast<int>(pooled.size())) *
         pooled;
}

Eigen::ArrayXXd FeatureEmbedding::backproject(const Eigen::VectorXd& feature_grad, int height,
                                              int width) const {
  Eigen::VectorXd pooled_grad;
  if (project_) {
    // pool() sizes depend only on (height, width, scales)
    int in_dim = 0;
    for (const int s : scales_) in_dim += ((height + s - 1) / s) * ((width + s - 1) / s);
    pooled_grad = projection(height, width, in_dim).transpose() * feature_grad;
  } else {
    pooled_grad = feature_grad;
  }

  Eigen::ArrayXXd grad = Eigen::ArrayXXd::Zero(height, width);
  Eigen::Index k = 0;
  for (const int s : scales_) {
    const int ph = (height + s - 1) / s;
    const int pw = (width + s - 1) / s;
    for (int j = 0; j < pw; ++j) {
      for (int i = 0; i < ph; ++i) {
        const int r0 = i * s, r1 = std::min(height, r0 + s);
        const int c0 = j * s, c1 = std::min(width, c0 + s);
        const double g = pooled_grad(k++) / ((r1 - r0) * (c1 - c0));
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) grad(r, c) += g;
      }
    }
  }
  return grad;
}

LossGrad contextual_loss(const ProbMask& pred, const ProbMask& gt, const FeatureEmbedding& emb) {
  check_same_shape(pred, gt, "contextual_loss");
  const Eigen::VectorXd fp = emb.embed(pred);
  const Eigen::VectorXd fg = emb.embed(gt);
  const double np = fp.norm();
  const double ng = fg.norm();
  LossGrad out;
  if (np < 1e-12 || ng < 1e-12) {
    out.value = 1.0;
    out.grad = Eigen::ArrayXXd::Zero(pred.rows(), pred.cols());
    out.degenerate = true;
    return out;
  }
  const double cosine = fp.dot(fg) / (np * ng);
  out.value = 1.0 - cosine;
  const Eigen::VectorXd dcos_dfp = fg / (np * ng) - cosine * fp / (np * np);
  out.grad = emb.backproject(-dcos_dfp, static_cast<int>(pred.rows()),
                             static_cast<int>(pred.cols()));
  return out;
}

LossGrad seg_loss(const ProbMask& pred, const ProbMask& gt, const FeatureEmbedding& emb,
                  const LossWeights& w) {
  const LossGrad dice = dice_loss(pred, gt);
  const LossGrad cl = contextual_loss(pred, gt, emb);
  LossGrad out;
  out.value = w.lambda_dice * dice.value + w.lambda_cl * cl.value;
  out.grad = w.lambda_dice * dice.grad + w.lambda_cl * cl.grad;
  out.degenerate = cl.degenerate;
  return out;
}

double adv_disc_loss(double d_on_fake, double d_on_real) {
  return -std::log(1.0 - clip_prob(d_on_fake)) - std::log(clip_prob(d_on_real));
}

double adv_disc_loss(const Eigen::VectorXd& d_on_fake, const Eigen::VectorXd& d_on_real) {
  if (d_on_fake.size() != d_on_real.size() || d_on_fake.size() == 0) {
    throw std::invalid_argument("adv_disc_loss: batch sizes must match and be non-empty");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < d_on_fake.size(); ++i) {
    sum += adv_disc_loss(d_on_fake(i), d_on_real(i));
  }
  return sum / static_cast<double>(d_on_fake.size());
}

ToyDiscriminator::ToyDiscriminator(int grid, std::uint64_t seed) : grid_(grid) {
  if (grid < 1) throw std::invalid_argument("ToyDiscriminator: grid must be >= 1");
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.1);
  weights.resize(grid * grid);
  for (Eigen::Index i = 0; i < weights.size(); ++i) weights(i) = gauss(rng);
  bias = 0.0;
}

Eigen::VectorXd ToyDiscriminator::features(const ProbMask& mask) const {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  Eigen::VectorXd f(grid_ * grid_);
  Eigen::Index k = 0;
  for (int i = 0; i < grid_; ++i) {
    for (int j = 0; j < grid_; ++j) {
      const int r0 = i * h / grid_, r1 = std::max(r0 + 1, (i + 1) * h / grid_);
      const int c0 = j * w / grid_, c1 = std::max(c0 + 1, (j + 1) * w / grid_);
      double sum = 0.0;
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) sum += mask(r, c);
      f(k++) = sum / ((r1 - r0) * (c1 - c0));
    }
  }
  return f;
}

double ToyDiscriminator::predict(const ProbMask& mask) const {
  const double z = weights.dot(features(mask)) + bias;
  return 1.0 / (1.0 + std::exp(-z));
}

Eigen::ArrayXXd ToyDiscriminator::input_gradient(const ProbMask& mask) const {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  const double d = predict(mask);
  const double dsig = d * (1.0 - d);
  Eigen::ArrayXXd grad(h, w);
  Eigen::Index k = 0;
  for (int i = 0; i < grid_; ++i) {
    for (int j = 0; j < grid_; ++j) {
      const int r0 = i * h / grid_, r1 = std::max(r0 + 1, (i + 1) * h / grid_);
      const int c0 = j * w / grid_, c1 = std::max(c0 + 1, (j + 1) * w / grid_);
      const double g = dsig * weights(k++) / ((r1 - r0) * (c1 - c0));
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) grad(r, c) = g;
    }
  }
  return grad;
}

void ToyDiscriminator::train_step(const std::vector<ProbMask>& fake,
                                  const std::vector<ProbMask>& real, double lr) {
  if (fake.empty() || fake.size() != real.size()) {
    throw std::invalid_argument("ToyDiscriminator::train_step: batch mismatch");
  }
  Eigen::VectorXd gw = Eigen::VectorXd::Zero(weights.size());
  double gb = 0.0;
  for (std::size_t i = 0; i < fake.size(); ++i) {
    // d/dz of -log(1 - sigma(z)) is sigma(z); of -log sigma(z) is sigma(z) - 1.
    const Eigen::VectorXd ff = features(fake[i]);
    const Eigen::VectorXd fr = features(real[i]);
    const double df = 1.0 / (1.0 + std::exp(-(weights.dot(ff) + bias)));
    const double dr = 1.0 / (1.0 + std::exp(-(weights.dot(fr) + bias)));
    gw += df * ff + (dr - 1.0) * fr;
    gb += df + (dr - 1.0);
  }
  const double n = static_cast<double>(fake.size());
  weights -= lr / n * gw;
  bias -= lr / n * gb;
}

LossGrad gen_loss(const ProbMask& pred, const ProbMask& gt, const FeatureEmbedding& emb,
                  double d_on_fake, const LossWeights& w) {
  LossGrad out = seg_loss(pred, gt, emb, w);
  out.value += w.lambda_adv * (-std::log(clip_prob(d_on_fake)));
  return out;
}

LossGrad gen_loss_through_disc(const ProbMask& pred, const ProbMask& gt,
                               const FeatureEmbedding& emb, const ToyDiscriminator& disc,
                               const LossWeights& w) {
  LossGrad out = seg_loss(pred, gt, emb, w);
  const double d = disc.predict(pred);
  out.value += w.lambda_adv * (-std::log(clip_prob(d)));
  if (d > kProbClip && d < 1.0 - kProbClip) {
    out.grad += (-w.lambda_adv / d) * disc.input_gradient(pred);
  }
  return out;
}

Eigen::MatrixXd LinearSegmenter::featurize(const GrayImage& image) {
  const int h = static_cast<int>(image.rows());
  const int w = static_cast<int>(image.cols());
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return i;
  };
  Eigen::MatrixXd f(static_cast<Eigen::Index>(h) * w, kFeatures);
  Eigen::Index k = 0;
  for (int u = 0; u < w; ++u) {  // column-major raster order
    for (int v = 0; v < h; ++v) {
      const double c = image(v, u);
      const double ridge_h = 2.0 * c - image(reflect(v - 2, h), u) - image(reflect(v + 2, h), u);
      const double ridge_v = 2.0 * c - image(v, reflect(u - 2, w)) - image(v, reflect(u + 2, w));
      double box = 0.0;
      for (int dv = -2; dv <= 2; ++dv)
        for (int du = -2; du <= 2; ++du) box += image(reflect(v + dv, h), reflect(u + du, w));
      f(k, 0) = c;
      f(k, 1) = ridge_h;
      f(k, 2) = ridge_v;
      f(k, 3) = box / 25.0;
      ++k;
    }
  }
  return f;
}

Eigen::MatrixXd LinearSegmenter::standardize(const Eigen::MatrixXd& raw) const {
  Eigen::MatrixXd out = raw;
  for (int j = 0; j < kFeatures; ++j) {
    out.col(j) = (raw.col(j).array() - feature_mean(j)) / feature_scale(j);
  }
  return out;
}

ProbMask LinearSegmenter::predict_standardized(const Eigen::MatrixXd& std_features, int height,
                                               int width) const {
  Eigen::VectorXd z = std_features * weights;
  z.array() += bias;
  Eigen::ArrayXd p = 1.0 / (1.0 + (-z.array()).exp());
  return Eigen::Map<ProbMask>(p.data(), height, width);
}

ProbMask LinearSegmenter::predict(const GrayImage& image) const {
  return predict_standardized(standardize(featurize(image)), static_cast<int>(image.rows()),
                              static_cast<int>(image.cols()));
}

double mean_validation_iou(const LinearSegmenter& model, const ToyDataset& val, double threshold) {
  if (val.images.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < val.images.size(); ++i) {
    const ProbMask pred = model.predict(val.images[i]);
    long inter = 0, uni = 0;
    for (Eigen::Index k = 0; k < pred.size(); ++k) {
      const bool p = pred(k) >= threshold;
      const bool g = val.labels[i](k) >= 0.5;
      inter += p && g;
      uni += p || g;
    }
    sum += uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
  }
  return sum / static_cast<double>(val.images.size());
}

namespace {

struct AdamState {
  Eigen::VectorXd m, v;
  double mb = 0.0, vb = 0.0;
  long t = 0;
};

void optimizer_step(Optimizer opt, AdamState& state, Eigen::VectorXd& w, double& b,
                    const Eigen::VectorXd& gw, double gb, double lr) {
  if (opt == Optimizer::kSgd) {
    w -= lr * gw;
    b -= lr * gb;
    return;
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (state.m.size() != w.size()) {
    state.m = Eigen::VectorXd::Zero(w.size());
    state.v = Eigen::VectorXd::Zero(w.size());
  }
  ++state.t;
  state.m = beta1 * state.m + (1.0 - beta1) * gw;
  state.v = beta2 * state.v + (1.0 - beta2) * gw.cwiseProduct(gw);
  state.mb = beta1 * state.mb + (1.0 - beta1) * gb;
  state.vb = beta2 * state.vb + (1.0 - beta2) * gb * gb;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  w -= (lr * (state.m / bc1).array() / ((state.v / bc2).array().sqrt() + eps)).matrix();
  b -= lr * (state.mb / bc1) / (std::sqrt(state.vb / bc2) + eps);
}

}  // namespace

TrainResult train_toy(const ToyDataset& train, const ToyDataset& val, const TrainConfig& config,
                      LossChoice loss) {
  if (train.images.empty()) throw std::invalid_argument("train_toy: empty dataset");
  if (train.images.size() != train.labels.size()) {
    throw std::invalid_argument("train_toy: image/label count mismatch");
  }

  TrainResult result;
  const int n = static_cast<int>(train.images.size());
  const int h = static_cast<int>(train.images[0].rows());
  const int w = static_cast<int>(train.images[0].cols());

  // Frozen feature statistics from the training set.
  std::vector<Eigen::MatrixXd> raw(n);
  for (int i = 0; i < n; ++i) raw[i] = LinearSegmenter::featurize(train.images[i]);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(LinearSegmenter::kFeatures);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(LinearSegmenter::kFeatures);
  long total = 0;
  for (const auto& f : raw) {
    mean += f.colwise().sum().transpose();
    sq += f.array().square().colwise().sum().matrix().transpose();
    total += f.rows();
  }
  mean /= static_cast<double>(total);
  for (int j = 0; j < LinearSegmenter::kFeatures; ++j) {
    const double var = sq(j) / total - mean(j) * mean(j);
    const double sd = std::sqrt(std::max(var, 1e-12));
    result.model.feature_scale(j) = sd / config.feature_gain;
  }
  result.model.feature_mean = mean;

  std::vector<Eigen::MatrixXd> feats(n);
  for (int i = 0; i < n; ++i) feats[i] = result.model.standardize(raw[i]);
  raw.clear();

  // Start from the foreground prior so the bias does not have to soak up the
  // class imbalance during the short schedule.
  double pos = 0.0;
  for (const auto& l : train.labels) pos += (l >= 0.5).count();
  const double rate = std::clamp(pos / (static_cast<double>(total)), 1e-4, 1.0 - 1e-4);
  result.model.bias = std::log(rate / (1.0 - rate));

  const FeatureEmbedding emb;
  result.disc = ToyDiscriminator(4, derive_seed(config.seed, 7));
  auto rng = make_rng(config.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto eval_loss = [&](const ProbMask& pred, const GrayImage& label) {
    switch (loss) {
      case LossChoice::kCe: return ce_loss(pred, label);
      case LossChoice::kFocal: return focal_loss(pred, label, config.focal_gamma);
      case LossChoice::kDice: return dice_loss(pred, label);
      case LossChoice::kDiceCl: return seg_loss(pred, label, emb, config.weights);
      case LossChoice::kFocalCl: {
        LossGrad out = focal_loss(pred, label, config.focal_gamma);
        const LossGrad cl = contextual_loss(pred, label, emb);
        out.value += config.weights.lambda_cl * cl.value;
        out.grad += config.weights.lambda_cl * cl.grad;
        return out;
      }
    }
    throw std::logic_error("train_toy: unknown loss");
  };

  AdamState gen_state;
  auto run_batch = [&](const std::vector<int>& batch, int phase, double lr_gen, double lr_disc,
                       double& loss_sum) {
    Eigen::VectorXd gw = Eigen::VectorXd::Zero(LinearSegmenter::kFeatures);
    double gb = 0.0;
    std::vector<ProbMask> fakes;
    std::vector<ProbMask> reals;
    for (const int idx : batch) {
      const ProbMask pred = result.model.predict_standardized(feats[idx], h, w);
      LossGrad lg = phase == 1
                        ? eval_loss(pred, train.labels[idx])
                        : gen_loss_through_disc(pred, train.labels[idx], emb, result.disc,
                                                config.weights);
      loss_sum += lg.value;
      const Eigen::Map<const Eigen::ArrayXd> gp(lg.grad.data(), lg.grad.size());
      const Eigen::Map<const Eigen::ArrayXd> pv(pred.data(), pred.size());
      const Eigen::ArrayXd gz = gp * pv * (1.0 - pv);
      gw += feats[idx].transpose() * gz.matrix();
      gb += gz.sum();
      if (phase == 2) {
        fakes.push_back(pred);
        reals.push_back(train.labels[idx]);
      }
    }
    const double bsz = static_cast<double>(batch.size());
    optimizer_step(config.optimizer, gen_state, result.model.weights, result.model.bias,
                   gw / bsz, gb / bsz, lr_gen);
    if (phase == 2) result.disc.train_step(fakes, reals, lr_disc);
  };

  for (int epoch = 0; epoch < config.phase1.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (int s = 0; s < n; s += config.phase1.batch_size) {
      const std::vector<int> batch(order.begin() + s,
                                   order.begin() + std::min(n, s + config.phase1.batch_size));
      run_batch(batch, 1, config.phase1.lr, 0.0, loss_sum);
      ++batches;
    }
    EpochStats st;
    st.phase = 1;
    st.epoch = epoch;
    st.mean_loss = loss_sum / n;
    st.val_iou = mean_validation_iou(result.model, val);
    st.lr_gen = config.phase1.lr;
    result.history.push_back(st);
  }

  if (config.run_phase2) {
    for (int epoch = 0; epoch < config.phase2.epochs; ++epoch) {
      const double factor = std::pow(0.5, epoch / config.phase2.halving_period_epochs);
      const double lr_gen = config.phase2.lr_gen * factor;
      const double lr_disc = config.phase2.lr_disc * factor;
      std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      for (int s = 0; s < n; s += config.phase2.batch_size) {
        const std::vector<int> batch(order.begin() + s,
                                     order.begin() + std::min(n, s + config.phase2.batch_size));
        run_batch(batch, 2, lr_gen, lr_disc, loss_sum);
      }
      EpochStats st;
      st.phase = 2;
      st.epoch = epoch;
      st.mean_loss = loss_sum / n;
      st.val_iou = mean_validation_iou(result.model, val);
      st.lr_gen = lr_gen;
      st.lr_disc = lr_disc;
      result.history.push_back(st);
    }
  }
  return result;
}

ToyDataset make_toy_dataset(const ToyDataParams& params) {
  ToyDataset data;
  const int px = params.image_px;
  CalibrationMap cal;
  cal.width = px;
  cal.height = px;
  cal.pixel_spacing_u = params.pixel_spacing_mm;
  cal.pixel_spacing_v = params.pixel_spacing_mm;
  cal.image_origin_in_p = Vec3(-0.5 * px * params.pixel_spacing_mm, 0.0, 0.0);
  ProbeModel probe;
  probe.footprint_mm = cal.footprint_mm();
  probe.depth_mm = cal.depth_mm();

  for (int i = 0; i < params.count; ++i) {
    auto rng = make_rng(derive_seed(params.seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    NeedleModel needle;
    const double angle = deg_to_rad((2.0 * unit(rng) - 1.0) * params.needle_angle_range_deg);
    needle.direction = Vec3(std::cos(angle), 0.0, std::sin(angle));
    const double z0 = (0.30 + 0.40 * unit(rng)) * probe.depth_mm;
    needle.entry_point = Vec3(-0.45 * probe.footprint_mm, 0.0, z0);
    needle.inserted_length_mm = (0.55 + 0.25 * unit(rng)) * probe.footprint_mm;
    needle.diameter_mm = 1.3;

    IntensityParams ip;
    ip.background_level = params.background_level;
    ip.shaft_level = params.shaft_level;
    ip.distractor_level = params.distractor_level;
    ip.speckle_sigma = params.speckle_sigma;
    ip.distractor_count = params.distractor_count;
    const RigidTransform pose;  // identity: probe frame == base frame
    data.images.push_back(render_intensity(needle, pose, probe, cal, ip,
                                           derive_seed(params.seed, 1000 + i)));
    data.labels.push_back(to_gray(render_mask(needle, pose, probe, cal).mask));
  }
  return data;
}

}  // namespace usn
