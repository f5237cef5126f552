#pragma once

// Run configuration for the command-line tool: a sectioned "key = value"
// text file, then per-key overrides from the command line.
//
//   [sim]        rx tx paths frame_period_s carrier_hz speeds_kmh num_frames
//                train_frames draws delay_spread_ns
//   [estimation] snr_db cov_source
//   [model]      np nl d layers mixer heads pos_enc
//   [train]      max_lr batch_size weight_decay epochs loss augment snr_low_db
//                snr_high_db test_snr_db max_samples
//   [eval]       input_snr_db capacity_snr_db bench_repeats max_samples
//   [run]        seed out

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lcp/channel_sim.hpp"
#include "lcp/model.hpp"
#include "lcp/training.hpp"

namespace lcp::cli {

struct RunConfig {
  SimConfig sim;
  std::vector<double> speeds_kmh{30.0};
  int train_frames = 10000;  // the rest of each sequence is the test split
  int draws = 1;             // independent path sets per speed

  EstimationConfig estimation;
  ModelConfig model;

  TrainConfig train;
  std::size_t max_train_samples = 0;  // 0 keeps every window

  std::optional<double> eval_input_snr_db;  // unset: clean inputs
  double capacity_snr_db = 10.0;
  int bench_repeats = 100;
  std::size_t max_eval_samples = 0;

  std::uint64_t seed = 1;
  std::string out = "out";

  void validate() const;
};

/// Every recognized key as "section.key".
std::vector<std::string> config_keys();

/// Sets one key from text. Throws UsageError naming the key when the key is
/// unknown or the value does not parse.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_key(const RunConfig& cfg, const std::string& key);

/// Applies a config file's text on top of cfg. `origin` prefixes messages.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);
/// "section.key=value"
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Full config in the file format, every key present.
std::string dump_config(const RunConfig& cfg);

}  // namespace lcp::cli
