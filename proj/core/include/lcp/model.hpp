#pragma once

// Encoder-only channel predictor: per-frame embedding, a stack of
// (time mixer + FFN) post-norm residual layers, and a separable linear head.
// The time mixer is either the time-axis MLP (TMLP) or multi-head
// self-attention for the baseline.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lcp/autodiff.hpp"
#include "lcp/rng.hpp"

namespace lcp {

enum class Mixer { tmlp, attention };

std::string to_string(Mixer m);
Mixer parse_mixer(const std::string& s);

struct ModelConfig {
  int np = 90;      // input frames
  int nl = 10;      // predicted frames
  int d = 512;      // model width
  int layers = 6;   // encoder layers; 0 is allowed and makes the encoder the identity
  int rx = 2;
  int tx = 4;
  Mixer mixer = Mixer::tmlp;
  int heads = 8;         // attention only
  bool pos_enc = true;   // attention only

  void validate() const;
  int features() const { return 2 * rx * tx; }
  bool operator==(const ModelConfig&) const = default;
};

struct TmlpWeights {
  ad::Tensor w1, b1, w2, b2;  // [np x np], [np], [np x np], [np]
};

struct AttentionWeights {
  ad::Tensor wq, wk, wv, wo;  // [d x d] each
};

struct EncoderLayer {
  TmlpWeights tmlp;
  AttentionWeights attn;
  ad::Tensor ffn_wa, ffn_ba, ffn_wb, ffn_bb;
  ad::Tensor norm1_gain, norm1_bias, norm2_gain, norm2_bias;
};

/// Per-feature input standardization fitted on clean training data.
struct InputScaler {
  std::vector<double> mean;
  std::vector<double> stddev;
  bool empty() const { return mean.empty(); }
};

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

struct ModelParams {
  ModelConfig config;
  ad::Tensor emb_w, emb_b;
  std::vector<EncoderLayer> layers;
  ad::Tensor head_time, head_channels;
  InputScaler scaler;

  // Trainable tensors in a fixed order with stable names.
  std::vector<NamedTensor> named() const;
  ModelParams clone() const;
};

inline constexpr double kLayerNormEps = 1e-5;

/// Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit norm gains.
ModelParams init_params(const ModelConfig& cfg, Rng& rng);

ad::Tensor positional_encoding(int n, int d);

ad::Tensor embed(const ad::Tensor& past, const ModelParams& params);
ad::Tensor tmlp_forward(const ad::Tensor& x, const TmlpWeights& w);
ad::Tensor attention_forward(const ad::Tensor& x, const AttentionWeights& w, int heads);
ad::Tensor ffn_forward(const ad::Tensor& x, const EncoderLayer& layer);
ad::Tensor encoder_forward(const ad::Tensor& f0, const ModelParams& params);
ad::Tensor head_forward(const ad::Tensor& f, const ad::Tensor& w_time,
                        const ad::Tensor& w_channels);
/// [np x 2RT] features -> [nl x 2RT] predictions.
ad::Tensor forward(const ad::Tensor& past_features, const ModelParams& params);

/// Weights for which forward(P X) == forward(X), where (P X) row i is X row perm[i].
ModelParams permute_weights(const ModelParams& params, std::span<const std::size_t> perm);

std::uint64_t count_params(const ModelParams& params);
std::uint64_t count_params(const ModelConfig& cfg);
std::uint64_t head_param_count(const ModelConfig& cfg);

struct MultCount {
  std::uint64_t embed = 0;
  std::uint64_t mixer = 0;
  std::uint64_t ffn = 0;
  std::uint64_t head = 0;
  // Everything except the embedding, which the closed form leaves out.
  std::uint64_t total() const { return mixer + ffn + head; }
  bool operator==(const MultCount&) const = default;
};

MultCount count_mults(const ModelConfig& cfg);
std::uint64_t mixer_mults_per_layer(const ModelConfig& cfg);
/// Runs one no-grad forward and tallies the matmul multiplications.
MultCount tally_mults(const ModelParams& params);

}  // namespace lcp
