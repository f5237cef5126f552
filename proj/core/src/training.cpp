#include "lcp/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "lcp/error.hpp"

namespace lcp {

using ad::Tensor;

// ---- data ----------------------------------------------------------------

std::vector<Window> build_windows(int frames, int np, int nl) {
  if (np < 1 || nl < 1) throw UsageError("window lengths must be >= 1");
  if (frames < np + nl) {
    throw DataError("sequence of " + std::to_string(frames) + " frames is shorter than np + nl = " +
                    std::to_string(np + nl));
  }
  std::vector<Window> out(static_cast<std::size_t>(frames - (np + nl) + 1));
  for (std::size_t i = 0; i < out.size(); ++i) out[i].past_begin = static_cast<int>(i);
  return out;
}

std::vector<Window> build_windows(const ChannelSequence& seq, int np, int nl) {
  return build_windows(seq.h.frames, np, nl);
}

Dataset make_dataset(std::span<const FrameBlock> sequences, int np, int nl,
                     std::size_t max_samples) {
  if (sequences.empty()) throw DataError("no sequences to window");
  Dataset ds;
  ds.np = np;
  ds.nl = nl;
  ds.rx = sequences.front().rx;
  ds.tx = sequences.front().tx;
  for (const auto& seq : sequences) {
    if (seq.rx != ds.rx || seq.tx != ds.tx) throw DataError("sequences with mixed antenna counts");
    for (const auto& w : build_windows(seq.frames, np, nl)) {
      if (max_samples != 0 && ds.samples.size() >= max_samples) return ds;
      ds.samples.push_back({seq.slice(w.past_begin, np), seq.slice(w.past_begin + np, nl)});
    }
  }
  return ds;
}

Tensor pack_features(const FrameBlock& block) {
  const auto per = static_cast<std::size_t>(block.entries_per_frame());
  std::vector<double> v(block.values.size() * 2);
  for (std::size_t i = 0; i < block.values.size(); ++i) {
    v[2 * i] = block.values[i].real();
    v[2 * i + 1] = block.values[i].imag();
  }
  return Tensor::from({static_cast<std::size_t>(block.frames), 2 * per}, std::move(v));
}

FrameBlock unpack_features(std::span<const double> values, int frames, int rx, int tx) {
  FrameBlock out(frames, rx, tx);
  if (values.size() != out.values.size() * 2) {
    throw ShapeError(std::to_string(values.size()) + " packed values for " +
                     std::to_string(frames) + "x" + std::to_string(rx) + "x" + std::to_string(tx));
  }
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = {values[2 * i], values[2 * i + 1]};
  }
  return out;
}

InputScaler fit_scaler(std::span<const FrameBlock> clean_blocks) {
  if (clean_blocks.empty()) throw DataError("cannot fit a scaler on no data");
  const auto f = static_cast<std::size_t>(2 * clean_blocks.front().entries_per_frame());
  std::vector<double> sum(f, 0.0);
  std::vector<double> sq(f, 0.0);
  std::size_t count = 0;
  for (const auto& b : clean_blocks) {
    if (static_cast<std::size_t>(2 * b.entries_per_frame()) != f) {
      throw ShapeError("scaler input with mixed feature widths");
    }
    for (int n = 0; n < b.frames; ++n) {
      const auto fr = b.frame(n);
      for (std::size_t e = 0; e < fr.size(); ++e) {
        sum[2 * e] += fr[e].real();
        sum[2 * e + 1] += fr[e].imag();
        sq[2 * e] += fr[e].real() * fr[e].real();
        sq[2 * e + 1] += fr[e].imag() * fr[e].imag();
      }
      ++count;
    }
  }
  InputScaler s;
  s.mean.resize(f);
  s.stddev.resize(f);
  for (std::size_t i = 0; i < f; ++i) {
    const double m = sum[i] / static_cast<double>(count);
    const double var = std::max(0.0, sq[i] / static_cast<double>(count) - m * m);
    s.mean[i] = m;
    s.stddev[i] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Tensor standardize(const Tensor& features, const InputScaler& scaler) {
  if (scaler.empty()) return features;
  const std::size_t c = features.cols();
  if (scaler.mean.size() != c || scaler.stddev.size() != c) {
    throw ShapeError("scaler width " + std::to_string(scaler.mean.size()) + " for " +
                     std::to_string(c) + " features");
  }
  std::vector<double> v(features.data().begin(), features.data().end());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = (v[i] - scaler.mean[i % c]) / scaler.stddev[i % c];
  }
  return Tensor::from(features.shape(), std::move(v));
}

double draw_snr_db(const SnrRange& range, Rng& rng) {
  if (!(range.low_db <= range.high_db)) throw UsageError("SNR range low must be <= high");
  if (range.low_db == range.high_db) return range.low_db;
  std::uniform_real_distribution<double> dist(range.low_db, range.high_db);
  return dist(rng);
}

namespace {

CMatrix effective_cov(const CMatrix& cov, int rt) {
  if (cov.size() == 0) return CMatrix::Identity(rt, rt);
  return cov;
}

Sample corrupt_with_filter(const Sample& s, double snr_db, const CMatrix& filter, Rng& rng) {
  Sample out;
  out.past = apply_filter(ls_estimate(add_awgn(s.past, snr_db, rng)), filter);
  out.future = s.future;
  out.input_snr_db = snr_db;
  return out;
}

}  // namespace

Sample corrupt(const Sample& sample, double snr_db, const CMatrix& cov, Rng& rng) {
  const CMatrix filter =
      mmse_filter(effective_cov(cov, sample.past.entries_per_frame()), snr_db);
  return corrupt_with_filter(sample, snr_db, filter, rng);
}

Sample augment(const Sample& sample, const SnrRange& range, const CMatrix& cov, Rng& rng) {
  return corrupt(sample, draw_snr_db(range, rng), cov, rng);
}

// ---- losses -----------------------------------------------------------------

std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "wmse"; }

LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "wmse") return LossKind::wmse;
  throw UsageError("unknown loss '" + s + "' (expected mse or wmse)");
}

double wmse_weight(int n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

namespace {

void check_loss_shapes(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape() || pred.rank() != 2 || pred.cols() % 2 != 0) {
    throw ShapeError("loss on " + ad::shape_str(pred.shape()) + " vs " +
                     ad::shape_str(target.shape()));
  }
}

// 1 / (R T N_L) where a packed row holds 2RT reals.
double loss_norm(const Tensor& pred) {
  return 1.0 / (static_cast<double>(pred.cols() / 2) * static_cast<double>(pred.rows()));
}

}  // namespace

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  check_loss_shapes(pred, target);
  const Tensor diff = ad::sub(pred, target);
  return ad::scale(ad::sum(ad::mul(diff, diff)), loss_norm(pred));
}

Tensor wmse_loss(const Tensor& pred, const Tensor& target) {
  check_loss_shapes(pred, target);
  const std::size_t rows = pred.rows();
  const std::size_t cols = pred.cols();
  std::vector<double> w(rows * cols);
  for (std::size_t n = 0; n < rows; ++n) {
    std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(n * cols), cols,
                wmse_weight(static_cast<int>(n) + 1));
  }
  const Tensor weights = Tensor::from(pred.shape(), std::move(w));
  const Tensor diff = ad::sub(pred, target);
  return ad::scale(ad::sum(ad::mul(ad::mul(diff, diff), weights)), loss_norm(pred));
}

Tensor loss_fn(LossKind kind, const Tensor& pred, const Tensor& target) {
  return kind == LossKind::mse ? mse_loss(pred, target) : wmse_loss(pred, target);
}

namespace {

double weighted_block_error(const FrameBlock& pred, const FrameBlock& target, bool weighted) {
  if (!pred.same_shape(target) || pred.frames < 1) {
    throw ShapeError("loss on mismatched frame blocks");
  }
  double s = 0.0;
  for (int n = 0; n < pred.frames; ++n) {
    const auto a = pred.frame(n);
    const auto b = target.frame(n);
    double e = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) e += std::norm(a[i] - b[i]);
    s += (weighted ? wmse_weight(n + 1) : 1.0) * e;
  }
  return s / (static_cast<double>(pred.entries_per_frame()) * pred.frames);
}

}  // namespace

double mse(const FrameBlock& pred, const FrameBlock& target) {
  return weighted_block_error(pred, target, false);
}

double wmse(const FrameBlock& pred, const FrameBlock& target) {
  return weighted_block_error(pred, target, true);
}

// ---- optimization -------------------------------------------------------------

AdamW::AdamW(std::vector<NamedTensor> params, AdamWOptions opts)
    : params_(std::move(params)), opts_(opts) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void AdamW::step(double lr, double weight_decay) {
  ++step_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& t = params_[k].tensor;
    auto theta = t.mutable_data();
    const bool has = t.has_grad();
    const std::span<const double> g = has ? t.grad() : std::span<const double>{};
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * gi;
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * (mhat / (std::sqrt(vhat) + opts_.eps) + weight_decay * theta[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double onecycle_lr(std::int64_t step, std::int64_t total_steps, double max_lr) {
  if (total_steps < 1 || step < 0 || step >= total_steps) {
    throw UsageError("onecycle step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + ")");
  }
  if (total_steps == 1) return max_lr;
  constexpr double pi = std::numbers::pi;
  const double initial = max_lr / 25.0;
  const double floor = max_lr / 1e4;
  const double last = static_cast<double>(total_steps - 1);
  const double warm_end = 0.3 * last;
  const auto s = static_cast<double>(step);
  if (s <= warm_end) {
    const double t = warm_end > 0.0 ? s / warm_end : 1.0;
    return initial + (max_lr - initial) * 0.5 * (1.0 - std::cos(pi * t));
  }
  const double t = (s - warm_end) / (last - warm_end);
  return floor + (max_lr - floor) * 0.5 * (1.0 + std::cos(pi * t));
}

// ---- training loops ---------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw UsageError("invalid train config '" + key + "': " + why);
  };
  if (!(max_lr > 0.0)) fail("max_lr", "must be > 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (epochs < 0) fail("epochs", "must be >= 0");
  if (!(aug_snr.low_db <= aug_snr.high_db)) fail("snr_low_db", "must be <= snr_high_db");
}

namespace {

void check_dataset_fits(const Dataset& ds, const ModelConfig& cfg, const char* which) {
  if (ds.np != cfg.np || ds.nl != cfg.nl || ds.rx != cfg.rx || ds.tx != cfg.tx) {
    throw DataError(std::string(which) + " dataset dims (np=" + std::to_string(ds.np) +
                    ", nl=" + std::to_string(ds.nl) + ", rx=" + std::to_string(ds.rx) +
                    ", tx=" + std::to_string(ds.tx) + ") do not match the model (np=" +
                    std::to_string(cfg.np) + ", nl=" + std::to_string(cfg.nl) +
                    ", rx=" + std::to_string(cfg.rx) + ", tx=" + std::to_string(cfg.tx) + ")");
  }
}

double test_mse(const ModelParams& params, const Dataset& inputs) {
  if (inputs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& sample : inputs.samples) s += mse(predict(params, sample.past), sample.future);
  return s / static_cast<double>(inputs.size());
}

}  // namespace

Dataset prepare_test_inputs(const Dataset& test_set, std::optional<double> snr_db,
                            const CMatrix& cov, std::uint64_t seed) {
  if (!snr_db) return test_set;
  Dataset out = test_set;
  if (test_set.empty()) return out;
  Rng rng = make_stream(seed, "test-noise");
  const CMatrix filter = mmse_filter(effective_cov(cov, test_set.rx * test_set.tx), *snr_db);
  for (auto& s : out.samples) s = corrupt_with_filter(s, *snr_db, filter, rng);
  return out;
}

FrameBlock predict(const ModelParams& params, const FrameBlock& past) {
  ad::NoGradGuard no_grad;
  const Tensor x = standardize(pack_features(past), params.scaler);
  const Tensor y = forward(x, params);
  return unpack_features(y.data(), params.config.nl, params.config.rx, params.config.tx);
}

std::vector<FrameBlock> predict_all(const ModelParams& params, const Dataset& inputs) {
  std::vector<FrameBlock> out;
  out.reserve(inputs.size());
  for (const auto& s : inputs.samples) out.push_back(predict(params, s.past));
  return out;
}

TrainResult train(const ModelParams& init, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg, const CMatrix& cov, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  check_dataset_fits(train_set, init.config, "training");
  if (!test_set.empty()) check_dataset_fits(test_set, init.config, "test");

  TrainResult result;
  ModelParams params = init.clone();
  if (params.scaler.empty()) {
    std::vector<FrameBlock> pasts;
    pasts.reserve(train_set.size());
    for (const auto& s : train_set.samples) pasts.push_back(s.past);
    params.scaler = fit_scaler(pasts);
  }
  if (cfg.epochs == 0) {
    result.best = params.clone();
    result.last = std::move(params);
    return result;
  }

  const int rt = train_set.rx * train_set.tx;
  const CMatrix est_cov = effective_cov(cov, rt);
  const Dataset test_inputs = prepare_test_inputs(test_set, cfg.test_snr_db, est_cov, cfg.seed);

  Rng shuffle_rng = make_stream(cfg.seed, "shuffle");
  Rng augment_rng = make_stream(cfg.seed, "augment");

  // Pre-packed clean targets; inputs change per epoch under augmentation.
  std::vector<Tensor> targets;
  targets.reserve(train_set.size());
  for (const auto& s : train_set.samples) targets.push_back(pack_features(s.future));

  const auto n = train_set.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>((n + batch - 1) / batch);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  AdamW opt(params.named());
  opt.zero_grad();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    double lr = 0.0;
    for (std::size_t first = 0; first < n; first += batch) {
      const std::size_t last = std::min(n, first + batch);
      const double inv_b = 1.0 / static_cast<double>(last - first);
      for (std::size_t i = first; i < last; ++i) {
        const std::size_t idx = order[i];
        const Sample& clean = train_set.samples[idx];
        Sample noisy;
        const FrameBlock* past = &clean.past;
        if (cfg.augment) {
          noisy = augment(clean, cfg.aug_snr, est_cov, augment_rng);
          past = &noisy.past;
        }
        const Tensor x = standardize(pack_features(*past), params.scaler);
        const Tensor loss = loss_fn(cfg.loss, forward(x, params), targets[idx]);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1));
        }
        epoch_loss += value;
        ad::backward(ad::scale(loss, inv_b));
      }
      lr = onecycle_lr(opt.steps(), total_steps, cfg.max_lr);
      opt.step(lr, cfg.weight_decay);
      opt.zero_grad();
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = epoch_loss / static_cast<double>(n);
    rec.test_loss = test_mse(params, test_inputs);
    rec.lr = lr;
    if (!std::isfinite(rec.train_loss)) throw NumericError("training diverged");
    result.curve.push_back(rec);
    const double score = test_inputs.empty() ? rec.train_loss : rec.test_loss;
    if (score < best) {
      best = score;
      result.best = params.clone();
      result.best_epoch = rec.epoch;
    }
    if (on_epoch) on_epoch(rec);
  }
  if (result.best_epoch < 0) result.best = params.clone();
  result.last = std::move(params);
  return result;
}

TrainResult fine_tune(const ModelParams& pretrained, const Dataset& train_set,
                      const Dataset& test_set, const TrainConfig& cfg, const CMatrix& cov,
                      const EpochCallback& on_epoch) {
  check_dataset_fits(train_set, pretrained.config, "fine-tune");
  TrainConfig tuned = cfg;
  tuned.max_lr = cfg.max_lr / 10.0;
  return train(pretrained, train_set, test_set, tuned, cov, on_epoch);
}

// ---- ablation -------------------------------------------------------------------

std::vector<std::size_t> draw_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_stream(seed, "shuffle-ablation");
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

Dataset apply_time_permutation(const Dataset& ds, std::span<const std::size_t> perm) {
  if (perm.size() != static_cast<std::size_t>(ds.np)) {
    throw ShapeError("permutation of length " + std::to_string(perm.size()) + " for np " +
                     std::to_string(ds.np));
  }
  Dataset out = ds;
  for (auto& s : out.samples) {
    const FrameBlock src = s.past;
    for (int i = 0; i < ds.np; ++i) {
      const auto from = src.frame(static_cast<int>(perm[static_cast<std::size_t>(i)]));
      std::copy(from.begin(), from.end(), s.past.frame(i).begin());
    }
  }
  return out;
}

ShuffledDataset shuffle_ablation(const Dataset& ds, std::uint64_t seed) {
  ShuffledDataset out;
  out.permutation = draw_permutation(static_cast<std::size_t>(ds.np), seed);
  out.data = apply_time_permutation(ds, out.permutation);
  return out;
}

}  // namespace lcp
