#pragma once

// Time-varying clustered MIMO channel simulator with Jakes Doppler, pilot
// noise, and LS / MMSE channel estimation.

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lcp/rng.hpp"

namespace lcp {

using cdouble = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;

inline constexpr double kSpeedOfLight = 2.99792458e8;

struct SimConfig {
  int rx = 2;
  int tx = 4;
  int paths = 23;
  double frame_period_s = 0.625e-3;
  double carrier_hz = 3.5e9;
  double speed_kmh = 30.0;
  int num_frames = 11000;
  std::uint64_t seed = 1;
  double delay_spread_ns = 100.0;  // metadata only; a flat channel has no delay axis

  void validate() const;
  // f_d = v * fc / c
  double max_doppler_hz() const;
};

struct Path {
  cdouble gain;
  double doppler_hz = 0.0;
  double aoa = 0.0;
  double aod = 0.0;
};

using PathSet = std::vector<Path>;

/// Dense complex block of shape [frames x rx x tx], row-major within a frame.
struct FrameBlock {
  int frames = 0;
  int rx = 0;
  int tx = 0;
  std::vector<cdouble> values;

  FrameBlock() = default;
  FrameBlock(int frames, int rx, int tx);

  int entries_per_frame() const { return rx * tx; }
  std::size_t size() const { return values.size(); }

  cdouble& at(int n, int i, int j) { return values[index(n, i, j)]; }
  const cdouble& at(int n, int i, int j) const { return values[index(n, i, j)]; }

  std::span<cdouble> frame(int n);
  std::span<const cdouble> frame(int n) const;

  FrameBlock slice(int first_frame, int count) const;
  bool same_shape(const FrameBlock& other) const {
    return frames == other.frames && rx == other.rx && tx == other.tx;
  }

 private:
  std::size_t index(int n, int i, int j) const {
    return (static_cast<std::size_t>(n) * rx + i) * tx + j;
  }
};

struct ChannelSequence {
  FrameBlock h;
  SimConfig meta;
};

enum class CovSource { identity, sample };

struct EstimationConfig {
  double snr_db = 15.0;
  CovSource cov_source = CovSource::sample;
};

PathSet sample_path_set(const SimConfig& cfg, Rng& rng);

// Half-wavelength ULA response, a_k = exp(-j*pi*k*sin(angle)).
std::vector<cdouble> steering_vector(double angle, int n_elems);

ChannelSequence generate_sequence(const SimConfig& cfg, const PathSet& paths);

/// Normalized autocorrelation averaged over sequences, entries and frame
/// offsets. Element 0 is exactly 1.
std::vector<double> autocorrelation_estimate(std::span<const ChannelSequence> sequences,
                                             int max_lag);

double bessel_j0(double x);

FrameBlock add_awgn(const FrameBlock& clean, double snr_db, Rng& rng);
ChannelSequence add_awgn(const ChannelSequence& seq, double snr_db, Rng& rng);

// The pilot is an identity-scaled diagonal, so the LS estimate is the
// observation itself.
FrameBlock ls_estimate(const FrameBlock& noisy);
ChannelSequence ls_estimate(const ChannelSequence& noisy);

/// Per-frame linear MMSE filter W = R (R + I/gamma0)^-1.
CMatrix mmse_filter(const CMatrix& r_hh, double snr_db);
FrameBlock apply_filter(const FrameBlock& ls, const CMatrix& filter);
FrameBlock mmse_estimate(const FrameBlock& ls, const EstimationConfig& cfg, const CMatrix& r_hh);
ChannelSequence mmse_estimate(const ChannelSequence& ls, const EstimationConfig& cfg,
                              const CMatrix& r_hh);

CMatrix sample_covariance(std::span<const FrameBlock> blocks);
CMatrix sample_covariance(std::span<const ChannelSequence> train);

double mean_power(const FrameBlock& block);

}  // namespace lcp
