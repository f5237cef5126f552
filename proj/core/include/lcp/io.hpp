#pragma once

// On-disk formats.
//
// LCP1 dataset (little-endian):
//   "LCP1" | u32 version = 1 | u32 num_samples | u32 frames_per_sample | u32 R | u32 T
//   then num_samples * frames * R * T complex entries as interleaved f32 (re, im),
//   sample-major, frame-major, row-major over [R x T].
//   A "<path>.json" sidecar records the simulation settings.
//
// LCKP checkpoint (little-endian):
//   "LCKP" | u32 version = 1 | u32 len | len bytes of "key = value" model config text
//   then, until end of file, per tensor:
//   u32 name_len | name | u32 rank | u32 dims[rank] | f32 data[prod(dims)]

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lcp/channel_sim.hpp"
#include "lcp/model.hpp"

namespace lcp {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes to "<path>.tmp" and renames over path.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

void write_lcp1(const std::string& path, std::span<const FrameBlock> samples);
std::vector<FrameBlock> read_lcp1(const std::string& path);

struct DatasetMeta {
  SimConfig sim;
  std::vector<double> speeds_kmh;  // one per sample
  std::string split;               // "train", "test", "imported", ...
};

std::string sidecar_path(const std::string& dataset_path);
void write_sidecar(const std::string& dataset_path, const DatasetMeta& meta);
DatasetMeta read_sidecar(const std::string& dataset_path);

std::string model_config_text(const ModelConfig& cfg);
ModelConfig parse_model_config_text(const std::string& text);

void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

// Measured CSI: each CSV row is one frame of R*T (re, im) pairs, row-major.
// A non-numeric first line is treated as a header.
FrameBlock import_csv(const std::string& path, int rx, int tx);
// Headerless interleaved f32 (re, im) frames.
FrameBlock import_raw(const std::string& path, int rx, int tx);

}  // namespace lcp
