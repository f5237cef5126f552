#include "lcp/model.hpp"

#include <cmath>
#include <numeric>

#include "lcp/error.hpp"

namespace lcp {

using ad::Tensor;

std::string to_string(Mixer m) { return m == Mixer::tmlp ? "tmlp" : "attention"; }

Mixer parse_mixer(const std::string& s) {
  if (s == "tmlp") return Mixer::tmlp;
  if (s == "attention") return Mixer::attention;
  throw UsageError("unknown mixer '" + s + "' (expected tmlp or attention)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw UsageError("invalid model config '" + key + "': " + why);
  };
  if (np < 1) fail("np", "must be >= 1");
  if (nl < 1) fail("nl", "must be >= 1");
  if (d < 1) fail("d", "must be >= 1");
  if (layers < 0) fail("layers", "must be >= 0");
  if (rx < 1) fail("rx", "must be >= 1");
  if (tx < 1) fail("tx", "must be >= 1");
  if (mixer == Mixer::attention) {
    if (heads < 1) fail("heads", "must be >= 1");
    if (d % heads != 0) fail("heads", "must divide d");
  }
}

namespace {

Tensor uniform_weight(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return Tensor::from({rows, cols}, std::move(v), true);
}

Tensor zeros_vec(std::size_t n) { return Tensor::zeros({n}, true); }

Tensor ones_vec(std::size_t n) { return Tensor::from({n}, std::vector<double>(n, 1.0), true); }

void expect_shape(const Tensor& t, const ad::Shape& s, const std::string& what) {
  if (t.shape() != s) {
    throw ShapeError(what + " is " + ad::shape_str(t.shape()) + ", expected " + ad::shape_str(s));
  }
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto np = static_cast<std::size_t>(cfg.np);
  const auto nl = static_cast<std::size_t>(cfg.nl);
  const auto d = static_cast<std::size_t>(cfg.d);
  const auto f = static_cast<std::size_t>(cfg.features());

  ModelParams p;
  p.config = cfg;
  p.emb_w = uniform_weight(f, d, rng);
  p.emb_b = zeros_vec(d);
  for (int i = 0; i < cfg.layers; ++i) {
    EncoderLayer layer;
    if (cfg.mixer == Mixer::tmlp) {
      layer.tmlp.w1 = uniform_weight(np, np, rng);
      layer.tmlp.b1 = zeros_vec(np);
      layer.tmlp.w2 = uniform_weight(np, np, rng);
      layer.tmlp.b2 = zeros_vec(np);
    } else {
      layer.attn.wq = uniform_weight(d, d, rng);
      layer.attn.wk = uniform_weight(d, d, rng);
      layer.attn.wv = uniform_weight(d, d, rng);
      layer.attn.wo = uniform_weight(d, d, rng);
    }
    layer.ffn_wa = uniform_weight(d, d, rng);
    layer.ffn_ba = zeros_vec(d);
    layer.ffn_wb = uniform_weight(d, d, rng);
    layer.ffn_bb = zeros_vec(d);
    layer.norm1_gain = ones_vec(d);
    layer.norm1_bias = zeros_vec(d);
    layer.norm2_gain = ones_vec(d);
    layer.norm2_bias = zeros_vec(d);
    p.layers.push_back(std::move(layer));
  }
  p.head_time = uniform_weight(np, nl, rng);
  p.head_channels = uniform_weight(d, f, rng);
  return p;
}

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  out.push_back({"embed.w", emb_w});
  out.push_back({"embed.b", emb_b});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string pre = "layer" + std::to_string(i) + ".";
    if (config.mixer == Mixer::tmlp) {
      out.push_back({pre + "tmlp.w1", l.tmlp.w1});
      out.push_back({pre + "tmlp.b1", l.tmlp.b1});
      out.push_back({pre + "tmlp.w2", l.tmlp.w2});
      out.push_back({pre + "tmlp.b2", l.tmlp.b2});
    } else {
      out.push_back({pre + "attn.wq", l.attn.wq});
      out.push_back({pre + "attn.wk", l.attn.wk});
      out.push_back({pre + "attn.wv", l.attn.wv});
      out.push_back({pre + "attn.wo", l.attn.wo});
    }
    out.push_back({pre + "ffn.wa", l.ffn_wa});
    out.push_back({pre + "ffn.ba", l.ffn_ba});
    out.push_back({pre + "ffn.wb", l.ffn_wb});
    out.push_back({pre + "ffn.bb", l.ffn_bb});
    out.push_back({pre + "norm1.gain", l.norm1_gain});
    out.push_back({pre + "norm1.bias", l.norm1_bias});
    out.push_back({pre + "norm2.gain", l.norm2_gain});
    out.push_back({pre + "norm2.bias", l.norm2_bias});
  }
  out.push_back({"head.time", head_time});
  out.push_back({"head.channels", head_channels});
  return out;
}

ModelParams ModelParams::clone() const {
  auto copy = [](const Tensor& t) { return t.defined() ? t.clone(true) : Tensor(); };
  ModelParams p;
  p.config = config;
  p.scaler = scaler;
  p.emb_w = copy(emb_w);
  p.emb_b = copy(emb_b);
  for (const auto& l : layers) {
    EncoderLayer c;
    c.tmlp = {copy(l.tmlp.w1), copy(l.tmlp.b1), copy(l.tmlp.w2), copy(l.tmlp.b2)};
    c.attn = {copy(l.attn.wq), copy(l.attn.wk), copy(l.attn.wv), copy(l.attn.wo)};
    c.ffn_wa = copy(l.ffn_wa);
    c.ffn_ba = copy(l.ffn_ba);
    c.ffn_wb = copy(l.ffn_wb);
    c.ffn_bb = copy(l.ffn_bb);
    c.norm1_gain = copy(l.norm1_gain);
    c.norm1_bias = copy(l.norm1_bias);
    c.norm2_gain = copy(l.norm2_gain);
    c.norm2_bias = copy(l.norm2_bias);
    p.layers.push_back(std::move(c));
  }
  p.head_time = copy(head_time);
  p.head_channels = copy(head_channels);
  return p;
}

Tensor positional_encoding(int n, int d) {
  std::vector<double> v(static_cast<std::size_t>(n) * d);
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
      v[static_cast<std::size_t>(pos) * d + i] =
          (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  }
  return Tensor::from({static_cast<std::size_t>(n), static_cast<std::size_t>(d)}, std::move(v));
}

Tensor embed(const Tensor& past, const ModelParams& params) {
  const auto& cfg = params.config;
  expect_shape(past, {static_cast<std::size_t>(cfg.np), static_cast<std::size_t>(cfg.features())},
               "past features");
  ad::MultScope scope(ad::MultCategory::embed);
  Tensor e = ad::add(ad::matmul(past, params.emb_w), params.emb_b);
  if (cfg.mixer == Mixer::attention && cfg.pos_enc) {
    e = ad::add(e, positional_encoding(cfg.np, cfg.d));
  }
  return e;
}

Tensor tmlp_forward(const Tensor& x, const TmlpWeights& w) {
  if (x.rank() != 2) throw ShapeError("tmlp input must be a matrix");
  const std::size_t n = x.rows();
  expect_shape(w.w1, {n, n}, "tmlp W1");
  expect_shape(w.w2, {n, n}, "tmlp W2");
  ad::MultScope scope(ad::MultCategory::mixer);
  // Rows of x^T are feature channels; the MLP runs along time.
  const Tensor hidden = ad::relu(ad::add(ad::matmul(ad::transpose(x), w.w1), w.b1));
  return ad::transpose(ad::add(ad::matmul(hidden, w.w2), w.b2));
}

Tensor attention_forward(const Tensor& x, const AttentionWeights& w, int heads) {
  if (x.rank() != 2) throw ShapeError("attention input must be a matrix");
  const std::size_t d = x.cols();
  if (heads < 1 || d % static_cast<std::size_t>(heads) != 0) {
    throw ShapeError("attention width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  for (const Tensor* t : {&w.wq, &w.wk, &w.wv, &w.wo}) expect_shape(*t, {d, d}, "attention weight");
  ad::MultScope scope(ad::MultCategory::mixer);

  const Tensor q = ad::matmul(x, w.wq);
  const Tensor k = ad::matmul(x, w.wk);
  const Tensor v = ad::matmul(x, w.wv);
  const std::size_t dk = d / static_cast<std::size_t>(heads);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    const Tensor qh = ad::slice_cols(q, h * dk, (h + 1) * dk);
    const Tensor kh = ad::slice_cols(k, h * dk, (h + 1) * dk);
    const Tensor vh = ad::slice_cols(v, h * dk, (h + 1) * dk);
    const Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dk);
    outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
  }
  const Tensor cat = heads == 1 ? outs.front() : ad::concat_cols(outs);
  return ad::matmul(cat, w.wo);
}

Tensor ffn_forward(const Tensor& x, const EncoderLayer& layer) {
  ad::MultScope scope(ad::MultCategory::ffn);
  const Tensor hidden = ad::relu(ad::add(ad::matmul(x, layer.ffn_wa), layer.ffn_ba));
  return ad::add(ad::matmul(hidden, layer.ffn_wb), layer.ffn_bb);
}

Tensor encoder_forward(const Tensor& f0, const ModelParams& params) {
  const auto& cfg = params.config;
  Tensor f = f0;
  for (const auto& layer : params.layers) {
    const Tensor mixed = cfg.mixer == Mixer::tmlp ? tmlp_forward(f, layer.tmlp)
                                                  : attention_forward(f, layer.attn, cfg.heads);
    f = ad::layer_norm(ad::add(mixed, f), layer.norm1_gain, layer.norm1_bias, kLayerNormEps);
    f = ad::layer_norm(ad::add(ffn_forward(f, layer), f), layer.norm2_gain, layer.norm2_bias,
                       kLayerNormEps);
  }
  return f;
}

Tensor head_forward(const Tensor& f, const Tensor& w_time, const Tensor& w_channels) {
  if (f.rank() != 2) throw ShapeError("head input must be a matrix");
  if (w_time.rank() != 2 || w_time.rows() != f.rows()) {
    throw ShapeError("head W_time " + ad::shape_str(w_time.shape()) + " for input " +
                     ad::shape_str(f.shape()));
  }
  if (w_channels.rank() != 2 || w_channels.rows() != f.cols()) {
    throw ShapeError("head W_channels " + ad::shape_str(w_channels.shape()) + " for input " +
                     ad::shape_str(f.shape()));
  }
  ad::MultScope scope(ad::MultCategory::head);
  return ad::matmul(ad::transpose(ad::matmul(ad::transpose(f), w_time)), w_channels);
}

Tensor forward(const Tensor& past_features, const ModelParams& params) {
  const Tensor e = embed(past_features, params);
  const Tensor f = encoder_forward(e, params);
  return head_forward(f, params.head_time, params.head_channels);
}

namespace {

Tensor permute_rows(const Tensor& w, std::span<const std::size_t> perm) {
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  std::vector<double> v(rows * cols);
  const auto src = w.data();
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(src.data() + perm[i] * cols, cols, v.data() + i * cols);
  }
  return Tensor::from(w.shape(), std::move(v), true);
}

Tensor permute_cols(const Tensor& w, std::span<const std::size_t> perm) {
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  std::vector<double> v(rows * cols);
  const auto src = w.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < cols; ++i) v[r * cols + i] = src[r * cols + perm[i]];
  }
  return Tensor::from(w.shape(), std::move(v), true);
}

}  // namespace

ModelParams permute_weights(const ModelParams& params, std::span<const std::size_t> perm) {
  const auto& cfg = params.config;
  if (cfg.mixer != Mixer::tmlp) throw UsageError("permute_weights requires the tmlp mixer");
  const auto np = static_cast<std::size_t>(cfg.np);
  if (perm.size() != np) throw ShapeError("permutation length differs from np");
  std::vector<bool> hit(np, false);
  for (auto p : perm) {
    if (p >= np || hit[p]) throw DataError("not a permutation of 0..np-1");
    hit[p] = true;
  }

  // With X' = P X: X'^T (P W1) = X^T W1, and W2 P^T, b2 P^T put the mixer
  // output back in permuted order so the residual stream stays P F.
  ModelParams out = params.clone();
  for (auto& layer : out.layers) {
    layer.tmlp.w1 = permute_rows(layer.tmlp.w1, perm);
    layer.tmlp.w2 = permute_cols(layer.tmlp.w2, perm);
    std::vector<double> b2(np);
    const auto src = layer.tmlp.b2.data();
    for (std::size_t i = 0; i < np; ++i) b2[i] = src[perm[i]];
    layer.tmlp.b2 = Tensor::from({np}, std::move(b2), true);
  }
  out.head_time = permute_rows(out.head_time, perm);
  return out;
}

std::uint64_t count_params(const ModelParams& params) {
  std::uint64_t n = 0;
  for (const auto& t : params.named()) n += t.tensor.size();
  return n;
}

std::uint64_t head_param_count(const ModelConfig& cfg) {
  const std::uint64_t np = cfg.np, nl = cfg.nl, d = cfg.d, rt = cfg.rx * cfg.tx;
  return np * nl + 2 * d * rt;
}

std::uint64_t count_params(const ModelConfig& cfg) {
  const std::uint64_t np = cfg.np, d = cfg.d, f = cfg.features();
  const std::uint64_t mixer = cfg.mixer == Mixer::tmlp ? 2 * np * np + 2 * np : 4 * d * d;
  const std::uint64_t ffn = 2 * d * d + 2 * d;
  const std::uint64_t norms = 4 * d;
  return f * d + d + static_cast<std::uint64_t>(cfg.layers) * (mixer + ffn + norms) +
         head_param_count(cfg);
}

std::uint64_t mixer_mults_per_layer(const ModelConfig& cfg) {
  const std::uint64_t n = cfg.np, d = cfg.d;
  return cfg.mixer == Mixer::tmlp ? 2 * n * n * d : 4 * n * d * d + 2 * n * n * d;
}

MultCount count_mults(const ModelConfig& cfg) {
  const std::uint64_t layers = cfg.layers, np = cfg.np, nl = cfg.nl, d = cfg.d;
  const std::uint64_t rt = cfg.rx * cfg.tx;
  MultCount c;
  c.embed = np * 2 * rt * d;
  c.mixer = layers * mixer_mults_per_layer(cfg);
  c.ffn = layers * 2 * np * d * d;
  c.head = np * nl * d + 2 * nl * rt * d;
  return c;
}

MultCount tally_mults(const ModelParams& params) {
  const auto& cfg = params.config;
  ad::NoGradGuard no_grad;
  const Tensor x = Tensor::zeros(
      {static_cast<std::size_t>(cfg.np), static_cast<std::size_t>(cfg.features())});
  ad::MultCounter counter;
  (void)forward(x, params);
  const auto& t = counter.tally();
  MultCount c;
  c.embed = t.get(ad::MultCategory::embed);
  c.mixer = t.get(ad::MultCategory::mixer);
  c.ffn = t.get(ad::MultCategory::ffn);
  c.head = t.get(ad::MultCategory::head);
  return c;
}

}  // namespace lcp
