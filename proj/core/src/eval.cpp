#include "lcp/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "lcp/error.hpp"
#include "lcp/io.hpp"
#include "lcp/training.hpp"

namespace lcp {

double to_db(double linear) { return 10.0 * std::log10(linear); }
double from_db(double db) { return std::pow(10.0, db / 10.0); }

std::vector<double> per_frame_mse(std::span<const FrameBlock> preds,
                                  std::span<const FrameBlock> targets) {
  if (preds.empty()) throw DataError("per-frame MSE over an empty set");
  if (preds.size() != targets.size()) throw ShapeError("prediction and target counts differ");
  const FrameBlock& ref = targets.front();
  std::vector<double> out(static_cast<std::size_t>(ref.frames), 0.0);
  for (std::size_t s = 0; s < preds.size(); ++s) {
    if (!preds[s].same_shape(ref) || !targets[s].same_shape(ref)) {
      throw ShapeError("per-frame MSE over blocks of different shapes");
    }
    for (int n = 0; n < ref.frames; ++n) {
      const auto a = preds[s].frame(n);
      const auto b = targets[s].frame(n);
      double e = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) e += std::norm(a[i] - b[i]);
      out[static_cast<std::size_t>(n)] += e;
    }
  }
  const double denom = static_cast<double>(preds.size()) * ref.entries_per_frame();
  for (auto& v : out) v /= denom;
  return out;
}

FrameBlock persistence_baseline(const FrameBlock& past, int nl) {
  if (past.frames < 1) throw DataError("persistence needs at least one past frame");
  FrameBlock out(nl, past.rx, past.tx);
  const auto last = past.frame(past.frames - 1);
  for (int k = 0; k < nl; ++k) std::copy(last.begin(), last.end(), out.frame(k).begin());
  return out;
}

FrameBlock linear_extrap_baseline(const FrameBlock& past, int nl) {
  if (past.frames < 2) throw DataError("linear extrapolation needs at least two past frames");
  FrameBlock out(nl, past.rx, past.tx);
  const auto h1 = past.frame(past.frames - 1);
  const auto h0 = past.frame(past.frames - 2);
  for (int k = 0; k < nl; ++k) {
    auto dst = out.frame(k);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = h1[i] + double(k + 1) * (h1[i] - h0[i]);
  }
  return out;
}

std::vector<cdouble> receive_combiner(int rx) {
  return std::vector<cdouble>(static_cast<std::size_t>(rx), 1.0 / std::sqrt(double(rx)));
}

namespace {

std::vector<cdouble> combine(std::span<const cdouble> h, int rx, int tx) {
  const auto w = receive_combiner(rx);
  std::vector<cdouble> g(static_cast<std::size_t>(tx));
  for (int i = 0; i < rx; ++i) {
    for (int j = 0; j < tx; ++j) g[j] += w[i] * h[static_cast<std::size_t>(i * tx + j)];
  }
  return g;
}

}  // namespace

std::optional<std::vector<cdouble>> mrt_beamformer(std::span<const cdouble> h, int rx, int tx) {
  auto g = combine(h, rx, tx);
  double norm = 0.0;
  for (const auto& x : g) norm += std::norm(x);
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) return std::nullopt;
  for (auto& x : g) x = std::conj(x) / norm;
  return g;
}

cdouble effective_gain(std::span<const cdouble> h, std::span<const cdouble> v, int rx, int tx) {
  const auto g = combine(h, rx, tx);
  cdouble a{};
  for (int j = 0; j < tx; ++j) a += g[j] * v[j];
  return a;
}

CapacityResult mrt_capacity(std::span<const FrameBlock> preds, std::span<const FrameBlock> truths,
                            double snr_db) {
  if (preds.size() != truths.size()) throw ShapeError("prediction and target counts differ");
  const double gamma0 = from_db(snr_db);
  CapacityResult r;
  double total = 0.0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    if (!preds[s].same_shape(truths[s])) throw ShapeError("capacity over mismatched blocks");
    for (int n = 0; n < preds[s].frames; ++n) {
      const auto v = mrt_beamformer(preds[s].frame(n), preds[s].rx, preds[s].tx);
      if (!v) {
        ++r.frames_skipped;
        continue;
      }
      const cdouble a = effective_gain(truths[s].frame(n), *v, truths[s].rx, truths[s].tx);
      total += std::log2(1.0 + std::norm(a) * gamma0);
      ++r.frames_used;
    }
  }
  if (r.frames_used > 0) r.mean_bits = total / static_cast<double>(r.frames_used);
  return r;
}

namespace {

MultCount layerwise(const ModelParams& params, std::vector<MultCount>& per_layer) {
  using ad::Tensor;
  const auto& cfg = params.config;
  ad::NoGradGuard no_grad;
  MultCount c;
  Tensor f;
  {
    ad::MultCounter counter;
    f = embed(Tensor::zeros({static_cast<std::size_t>(cfg.np),
                             static_cast<std::size_t>(cfg.features())}),
              params);
    c.embed = counter.tally().total();
  }
  for (const auto& layer : params.layers) {
    MultCount lc;
    {
      ad::MultCounter counter;
      const Tensor mixed = cfg.mixer == Mixer::tmlp ? tmlp_forward(f, layer.tmlp)
                                                    : attention_forward(f, layer.attn, cfg.heads);
      lc.mixer = counter.tally().total();
      f = ad::layer_norm(ad::add(mixed, f), layer.norm1_gain, layer.norm1_bias, kLayerNormEps);
    }
    {
      ad::MultCounter counter;
      const Tensor ff = ffn_forward(f, layer);
      lc.ffn = counter.tally().total();
      f = ad::layer_norm(ad::add(ff, f), layer.norm2_gain, layer.norm2_bias, kLayerNormEps);
    }
    c.mixer += lc.mixer;
    c.ffn += lc.ffn;
    per_layer.push_back(lc);
  }
  {
    ad::MultCounter counter;
    (void)head_forward(f, params.head_time, params.head_channels);
    c.head = counter.tally().total();
  }
  return c;
}

}  // namespace

ComplexityReport verify_complexity(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ComplexityReport rep;
  rep.config = cfg;
  rep.closed_form = count_mults(cfg);

  Rng rng = make_stream(seed, "init");
  const ModelParams params = init_params(cfg, rng);
  rep.instrumented = tally_mults(params);
  rep.params = count_params(params);
  rep.head_params = params.head_time.size() + params.head_channels.size();

  std::vector<MultCount> per_layer;
  const MultCount lw = layerwise(params, per_layer);
  const std::uint64_t mixer_expected = mixer_mults_per_layer(cfg);
  const std::uint64_t ffn_expected = 2ULL * cfg.np * cfg.d * cfg.d;
  for (std::size_t i = 0; i < per_layer.size(); ++i) {
    if (per_layer[i].mixer != mixer_expected) {
      rep.discrepancies.push_back({int(i), "mixer", mixer_expected, per_layer[i].mixer});
    }
    if (per_layer[i].ffn != ffn_expected) {
      rep.discrepancies.push_back({int(i), "ffn", ffn_expected, per_layer[i].ffn});
    }
  }
  if (lw.embed != rep.closed_form.embed) {
    rep.discrepancies.push_back({-1, "embed", rep.closed_form.embed, lw.embed});
  }
  if (lw.head != rep.closed_form.head) {
    rep.discrepancies.push_back({-2, "head", rep.closed_form.head, lw.head});
  }

  ModelConfig attn = cfg;
  attn.mixer = Mixer::attention;
  if (attn.d % attn.heads != 0) attn.heads = 1;
  ModelConfig tmlp = cfg;
  tmlp.mixer = Mixer::tmlp;
  rep.attention_total = count_mults(attn).total();
  rep.tmlp_mixer_per_layer = mixer_mults_per_layer(tmlp);
  rep.attention_mixer_per_layer = mixer_mults_per_layer(attn);
  rep.mixer_ratio = static_cast<double>(rep.tmlp_mixer_per_layer) /
                    static_cast<double>(rep.attention_mixer_per_layer);
  return rep;
}

LatencyStats bench_inference(const ModelParams& params, int repeats, int warmup) {
  if (repeats < 1) throw UsageError("bench needs at least one timed repeat");
  using ad::Tensor;
  const auto& cfg = params.config;
  Rng rng = make_stream(7, "bench-input");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(cfg.np) * cfg.features());
  for (auto& v : x) v = gauss(rng);
  const Tensor input =
      Tensor::from({static_cast<std::size_t>(cfg.np), static_cast<std::size_t>(cfg.features())},
                   std::move(x));

  ad::NoGradGuard no_grad;
  double sink = 0.0;
  for (int i = 0; i < warmup; ++i) sink += forward(input, params).data()[0];

  std::vector<double> ms(static_cast<std::size_t>(repeats));
  for (auto& t : ms) {
    const auto start = std::chrono::steady_clock::now();
    sink += forward(input, params).data()[0];
    const auto stop = std::chrono::steady_clock::now();
    t = std::chrono::duration<double, std::milli>(stop - start).count();
  }
  if (!std::isfinite(sink)) throw NumericError("benchmark forward produced non-finite output");

  LatencyStats s;
  s.repeats = repeats;
  double total = 0.0;
  for (double t : ms) total += t;
  s.mean_ms = total / repeats;
  std::sort(ms.begin(), ms.end());
  const auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * repeats)) - 1;
    return ms[std::min(idx, ms.size() - 1)];
  };
  s.median_ms = repeats % 2 ? ms[repeats / 2] : 0.5 * (ms[repeats / 2 - 1] + ms[repeats / 2]);
  s.p95_ms = at(0.95);
  s.mults_per_ms = static_cast<double>(count_mults(cfg).total()) / s.median_ms;
  return s;
}

PredictorMetrics summarize(std::string name, std::span<const FrameBlock> preds,
                           std::span<const FrameBlock> targets, double capacity_snr_db) {
  PredictorMetrics m;
  m.name = std::move(name);
  m.per_frame_mse = per_frame_mse(preds, targets);
  double s = 0.0;
  for (double v : m.per_frame_mse) {
    m.per_frame_mse_db.push_back(to_db(v));
    s += v;
  }
  m.mean_mse = s / static_cast<double>(m.per_frame_mse.size());
  m.capacity = mrt_capacity(preds, targets, capacity_snr_db);
  return m;
}

void write_report_csv(const std::string& path, const MetricsReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "predictor,metric,index,value\n";
  for (const auto& p : report.predictors) {
    for (std::size_t i = 0; i < p.per_frame_mse.size(); ++i) {
      os << p.name << ",mse," << i + 1 << ',' << p.per_frame_mse[i] << '\n';
    }
    for (std::size_t i = 0; i < p.per_frame_mse_db.size(); ++i) {
      os << p.name << ",mse_db," << i + 1 << ',' << p.per_frame_mse_db[i] << '\n';
    }
    os << p.name << ",mean_mse,," << p.mean_mse << '\n';
    os << p.name << ",mean_mse_db,," << to_db(p.mean_mse) << '\n';
    os << p.name << ",capacity_bps_hz,," << p.capacity.mean_bits << '\n';
    os << p.name << ",capacity_skipped,," << p.capacity.frames_skipped << '\n';
  }
  const std::string model = report.predictors.empty() ? "model" : report.predictors.front().name;
  if (report.latency) {
    os << model << ",latency_median_ms,," << report.latency->median_ms << '\n';
    os << model << ",latency_p95_ms,," << report.latency->p95_ms << '\n';
    os << model << ",mults_per_ms,," << report.latency->mults_per_ms << '\n';
  }
  if (report.mults) {
    os << model << ",mults_total,," << report.mults->total() << '\n';
    os << model << ",mults_embed,," << report.mults->embed << '\n';
  }
  if (report.params) os << model << ",params,," << *report.params << '\n';
  write_file_atomic(path, os.str());
}

}  // namespace lcp
