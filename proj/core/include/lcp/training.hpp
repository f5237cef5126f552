#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "lcp/autodiff.hpp"
#include "lcp/channel_sim.hpp"
#include "lcp/model.hpp"

namespace lcp {

// ---- data ----------------------------------------------------------------

struct Sample {
  FrameBlock past;    // model input, possibly noise-corrupted and re-estimated
  FrameBlock future;  // always the clean channel
  double input_snr_db = std::numeric_limits<double>::infinity();
};

struct Dataset {
  int np = 0;
  int nl = 0;
  int rx = 0;
  int tx = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

struct Window {
  int past_begin = 0;  // past = [past_begin, past_begin + np), future follows
};

/// Stride-1 windows; F frames give F - (np + nl) + 1 of them.
std::vector<Window> build_windows(int frames, int np, int nl);
std::vector<Window> build_windows(const ChannelSequence& seq, int np, int nl);

/// Windows every sequence in order. max_samples == 0 keeps all of them.
Dataset make_dataset(std::span<const FrameBlock> sequences, int np, int nl,
                     std::size_t max_samples = 0);

// Frame n packs as [Re h11, Im h11, Re h12, ..., Im hRT].
ad::Tensor pack_features(const FrameBlock& block);
FrameBlock unpack_features(std::span<const double> values, int frames, int rx, int tx);

InputScaler fit_scaler(std::span<const FrameBlock> clean_blocks);
ad::Tensor standardize(const ad::Tensor& features, const InputScaler& scaler);

struct SnrRange {
  double low_db = 0.0;
  double high_db = 20.0;
};

double draw_snr_db(const SnrRange& range, Rng& rng);

/// past <- MMSE(past + noise at a Uniform[low, high] dB SNR); future untouched.
Sample augment(const Sample& sample, const SnrRange& range, const CMatrix& cov, Rng& rng);
/// Same as augment() at one fixed SNR.
Sample corrupt(const Sample& sample, double snr_db, const CMatrix& cov, Rng& rng);

// ---- losses -------------------------------------------------------------

enum class LossKind { mse, wmse };

std::string to_string(LossKind k);
LossKind parse_loss(const std::string& s);

// Weight of future frame n (1-based) in the weighted loss: n^-1/2.
double wmse_weight(int n);

/// Packed [nl x 2RT] tensors; normalized by R*T*nl.
ad::Tensor mse_loss(const ad::Tensor& pred, const ad::Tensor& target);
ad::Tensor wmse_loss(const ad::Tensor& pred, const ad::Tensor& target);
ad::Tensor loss_fn(LossKind kind, const ad::Tensor& pred, const ad::Tensor& target);

double mse(const FrameBlock& pred, const FrameBlock& target);
double wmse(const FrameBlock& pred, const FrameBlock& target);

// ---- optimization --------------------------------------------------------

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamW {
 public:
  explicit AdamW(std::vector<NamedTensor> params, AdamWOptions opts = {});

  // Applies one decoupled update from the gradients currently stored on the
  // parameters: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
  void step(double lr, double weight_decay);
  void zero_grad();
  std::int64_t steps() const { return step_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamWOptions opts_;
  std::int64_t step_ = 0;
};

/// Cosine warm-up from max_lr/25 to max_lr over the first 30% of steps, then
/// cosine anneal to max_lr/1e4 at the last step.
double onecycle_lr(std::int64_t step, std::int64_t total_steps, double max_lr);

// ---- training loops ------------------------------------------------------------

struct TrainConfig {
  double max_lr = 4e-4;
  int batch_size = 64;
  double weight_decay = 0.01;
  int epochs = 100;
  LossKind loss = LossKind::mse;
  bool augment = true;
  SnrRange aug_snr{0.0, 20.0};
  // Test inputs are MMSE estimates at this SNR; unset means clean inputs.
  std::optional<double> test_snr_db;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;  // plain MSE on the test set
  double lr = 0.0;
};

struct TrainResult {
  ModelParams best;  // lowest test loss
  ModelParams last;
  std::vector<EpochRecord> curve;
  int best_epoch = -1;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Fits the input scaler on the training pasts when params carry none.
TrainResult train(const ModelParams& init, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg, const CMatrix& cov, const EpochCallback& on_epoch = {});

/// Continues from a checkpoint at max_lr / 10.
TrainResult fine_tune(const ModelParams& pretrained, const Dataset& train_set,
                      const Dataset& test_set, const TrainConfig& cfg, const CMatrix& cov,
                      const EpochCallback& on_epoch = {});

/// Test-set inputs as the evaluation sees them (clean or corrupted at a fixed SNR).
Dataset prepare_test_inputs(const Dataset& test_set, std::optional<double> snr_db,
                            const CMatrix& cov, std::uint64_t seed);

/// Predicts the future block for one past block (applies the scaler, no graph).
FrameBlock predict(const ModelParams& params, const FrameBlock& past);
std::vector<FrameBlock> predict_all(const ModelParams& params, const Dataset& inputs);

// ---- ablation ----------------------------------------------------------------------

struct ShuffledDataset {
  Dataset data;
  std::vector<std::size_t> permutation;  // new past row i = old row permutation[i]
};

std::vector<std::size_t> draw_permutation(std::size_t n, std::uint64_t seed);
Dataset apply_time_permutation(const Dataset& ds, std::span<const std::size_t> perm);
ShuffledDataset shuffle_ablation(const Dataset& ds, std::uint64_t seed);

}  // namespace lcp
