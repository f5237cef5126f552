#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lcp/channel_sim.hpp"
#include "lcp/model.hpp"

namespace lcp {

double to_db(double linear);
double from_db(double db);

/// Mean complex squared error per future frame, over samples and entries.
std::vector<double> per_frame_mse(std::span<const FrameBlock> preds,
                                  std::span<const FrameBlock> targets);

// Reference predictors on a past block of np frames.
FrameBlock persistence_baseline(const FrameBlock& past, int nl);
FrameBlock linear_extrap_baseline(const FrameBlock& past, int nl);

// MRT beamforming with the fixed receive combiner w = (1/sqrt(R), ..., 1/sqrt(R)).
std::vector<cdouble> receive_combiner(int rx);
/// v = (w H)^H / ||(w H)^H||; nullopt when w H vanishes.
std::optional<std::vector<cdouble>> mrt_beamformer(std::span<const cdouble> h, int rx, int tx);
/// a = w H v
cdouble effective_gain(std::span<const cdouble> h, std::span<const cdouble> v, int rx, int tx);

struct CapacityResult {
  double mean_bits = 0.0;  // bits/s/Hz over the frames that produced a beamformer
  std::size_t frames_used = 0;
  std::size_t frames_skipped = 0;  // predicted w H was zero
};

/// v comes from the prediction, a from the true channel.
CapacityResult mrt_capacity(std::span<const FrameBlock> preds, std::span<const FrameBlock> truths,
                            double snr_db);

struct LayerDiscrepancy {
  int layer = 0;  // -1 embedding, -2 head
  std::string part;
  std::uint64_t expected = 0;
  std::uint64_t measured = 0;
};

struct ComplexityReport {
  ModelConfig config;
  MultCount closed_form;
  MultCount instrumented;
  std::vector<LayerDiscrepancy> discrepancies;
  std::uint64_t attention_total = 0;  // same dims with the attention mixer
  std::uint64_t tmlp_mixer_per_layer = 0;
  std::uint64_t attention_mixer_per_layer = 0;
  double mixer_ratio = 0.0;  // tmlp / attention, per layer
  std::uint64_t params = 0;
  std::uint64_t head_params = 0;

  bool ok() const { return discrepancies.empty() && closed_form == instrumented; }
};

/// Runs instrumented forwards of both mixers and compares against the
/// closed-form counts, layer by layer.
ComplexityReport verify_complexity(const ModelConfig& cfg, std::uint64_t seed = 1);

struct LatencyStats {
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double mean_ms = 0.0;
  int repeats = 0;
  double mults_per_ms = 0.0;
};

/// Batch-1 forward latency on this thread after `warmup` untimed runs.
LatencyStats bench_inference(const ModelParams& params, int repeats = 100, int warmup = 10);

struct PredictorMetrics {
  std::string name;
  std::vector<double> per_frame_mse;
  std::vector<double> per_frame_mse_db;
  double mean_mse = 0.0;
  CapacityResult capacity;
};

PredictorMetrics summarize(std::string name, std::span<const FrameBlock> preds,
                           std::span<const FrameBlock> targets, double capacity_snr_db);

struct MetricsReport {
  std::vector<PredictorMetrics> predictors;
  std::optional<LatencyStats> latency;
  std::optional<MultCount> mults;
  std::optional<std::uint64_t> params;
};

/// Long-format CSV: predictor,metric,index,value
void write_report_csv(const std::string& path, const MetricsReport& report);

}  // namespace lcp
