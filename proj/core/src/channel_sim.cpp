#include "lcp/channel_sim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "lcp/error.hpp"

namespace lcp {

namespace {

constexpr double kPi = std::numbers::pi;

void require_frames(const FrameBlock& b, const char* what) {
  if (b.frames < 0 || b.rx < 1 || b.tx < 1 ||
      b.values.size() != static_cast<std::size_t>(b.frames) * b.rx * b.tx) {
    throw ShapeError(std::string(what) + ": inconsistent frame block");
  }
}

}  // namespace

void SimConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw UsageError("invalid sim config '" + key + "': " + why);
  };
  if (rx < 1) fail("rx", "must be >= 1");
  if (tx < 1) fail("tx", "must be >= 1");
  if (paths < 1) fail("paths", "must be >= 1");
  if (!(frame_period_s > 0.0)) fail("frame_period_s", "must be > 0");
  if (!(carrier_hz > 0.0)) fail("carrier_hz", "must be > 0");
  if (!(speed_kmh >= 0.0)) fail("speed_kmh", "must be >= 0");
  if (num_frames < 1) fail("num_frames", "must be >= 1");
}

double SimConfig::max_doppler_hz() const {
  return (speed_kmh / 3.6) * carrier_hz / kSpeedOfLight;
}

FrameBlock::FrameBlock(int frames_, int rx_, int tx_)
    : frames(frames_), rx(rx_), tx(tx_),
      values(static_cast<std::size_t>(frames_) * rx_ * tx_) {}

std::span<cdouble> FrameBlock::frame(int n) {
  return {values.data() + static_cast<std::size_t>(n) * rx * tx,
          static_cast<std::size_t>(rx * tx)};
}

std::span<const cdouble> FrameBlock::frame(int n) const {
  return {values.data() + static_cast<std::size_t>(n) * rx * tx,
          static_cast<std::size_t>(rx * tx)};
}

FrameBlock FrameBlock::slice(int first_frame, int count) const {
  if (first_frame < 0 || count < 0 || first_frame + count > frames) {
    throw ShapeError("frame slice [" + std::to_string(first_frame) + ", " +
                     std::to_string(first_frame + count) + ") out of " +
                     std::to_string(frames) + " frames");
  }
  FrameBlock out(count, rx, tx);
  const auto per = static_cast<std::size_t>(rx) * tx;
  std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(first_frame * per),
              count * per, out.values.begin());
  return out;
}

PathSet sample_path_set(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  const double fd = cfg.max_doppler_hz();

  PathSet paths(static_cast<std::size_t>(cfg.paths));
  double power = 0.0;
  for (auto& p : paths) {
    p.gain = {gauss(rng), gauss(rng)};
    p.doppler_hz = fd * std::cos(angle(rng));
    p.aoa = angle(rng);
    p.aod = angle(rng);
    power += std::norm(p.gain);
  }
  // A zero draw is measure-zero; fall back to equal power rather than divide by it.
  if (!(power > 0.0)) {
    for (auto& p : paths) p.gain = {1.0, 0.0};
    power = static_cast<double>(paths.size());
  }
  const double scale = 1.0 / std::sqrt(power);
  for (auto& p : paths) p.gain *= scale;
  return paths;
}

std::vector<cdouble> steering_vector(double angle, int n_elems) {
  if (n_elems < 1) throw ShapeError("steering vector needs at least one element");
  std::vector<cdouble> a(static_cast<std::size_t>(n_elems));
  const double s = std::sin(angle);
  for (int k = 0; k < n_elems; ++k) {
    a[static_cast<std::size_t>(k)] = std::polar(1.0, -kPi * k * s);
  }
  return a;
}

ChannelSequence generate_sequence(const SimConfig& cfg, const PathSet& paths) {
  cfg.validate();
  const int rt = cfg.rx * cfg.tx;

  // Per-path spatial signature A(theta) A^H(phi), scaled by the gain.
  std::vector<std::vector<cdouble>> signatures;
  signatures.reserve(paths.size());
  for (const auto& p : paths) {
    const auto a_rx = steering_vector(p.aoa, cfg.rx);
    const auto a_tx = steering_vector(p.aod, cfg.tx);
    std::vector<cdouble> s(static_cast<std::size_t>(rt));
    for (int i = 0; i < cfg.rx; ++i) {
      for (int j = 0; j < cfg.tx; ++j) {
        s[static_cast<std::size_t>(i * cfg.tx + j)] = p.gain * a_rx[i] * std::conj(a_tx[j]);
      }
    }
    signatures.push_back(std::move(s));
  }

  ChannelSequence seq{FrameBlock(cfg.num_frames, cfg.rx, cfg.tx), cfg};
  for (int n = 0; n < cfg.num_frames; ++n) {
    auto frame = seq.h.frame(n);
    for (std::size_t l = 0; l < paths.size(); ++l) {
      const cdouble rot =
          std::polar(1.0, -2.0 * kPi * paths[l].doppler_hz * n * cfg.frame_period_s);
      const auto& s = signatures[l];
      for (int e = 0; e < rt; ++e) frame[e] += rot * s[static_cast<std::size_t>(e)];
    }
  }
  return seq;
}

std::vector<double> autocorrelation_estimate(std::span<const ChannelSequence> sequences,
                                             int max_lag) {
  if (sequences.empty()) throw DataError("autocorrelation needs at least one sequence");
  if (max_lag < 0) throw UsageError("max_lag must be >= 0");

  std::vector<cdouble> acc(static_cast<std::size_t>(max_lag) + 1);
  for (const auto& seq : sequences) {
    const auto& h = seq.h;
    require_frames(h, "autocorrelation");
    if (h.frames <= max_lag) {
      throw DataError("sequence of " + std::to_string(h.frames) +
                      " frames is too short for lag " + std::to_string(max_lag));
    }
    const int per = h.entries_per_frame();
    for (int tau = 0; tau <= max_lag; ++tau) {
      cdouble s{};
      const int count = h.frames - tau;
      for (int n = 0; n < count; ++n) {
        const auto a = h.frame(n);
        const auto b = h.frame(n + tau);
        for (int e = 0; e < per; ++e) s += a[e] * std::conj(b[e]);
      }
      acc[static_cast<std::size_t>(tau)] += s / static_cast<double>(count * per);
    }
  }

  std::vector<double> rho(acc.size());
  const double norm0 = acc[0].real();
  if (!(norm0 > 0.0)) throw NumericError("autocorrelation of an all-zero channel");
  for (std::size_t t = 0; t < acc.size(); ++t) rho[t] = acc[t].real() / norm0;
  rho[0] = 1.0;
  return rho;
}

double bessel_j0(double x) {
  const double ax = std::abs(x);
  if (ax <= 8.0) {
    // Power series sum_k (-1)^k (x^2/4)^k / (k!)^2.
    const double q = 0.25 * ax * ax;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k < 80; ++k) {
      term *= -q / (static_cast<double>(k) * k);
      sum += term;
      if (std::abs(term) < 1e-17 * std::max(1.0, std::abs(sum))) break;
    }
    return sum;
  }
  // Hankel asymptotic expansion, truncated at the smallest term.
  // a_k = prod_{m=1..k} (2m-1)^2 / (8 m)
  double p = 1.0;
  double q = 0.0;
  double a = 1.0;
  double xk = 1.0;
  double last = 1.0;
  for (int k = 1; k < 60; ++k) {
    a *= static_cast<double>((2 * k - 1) * (2 * k - 1)) / (8.0 * k);
    xk *= ax;
    const double t = a / xk;
    if (t > last) break;
    last = t;
    // k odd feeds Q with sign (-1)^((k-1)/2) * -1, k even feeds P with sign (-1)^(k/2)
    if (k % 2 == 1) {
      q += (((k - 1) / 2) % 2 == 0 ? -t : t);
    } else {
      p += ((k / 2) % 2 == 1 ? -t : t);
    }
    if (t < 1e-17) break;
  }
  const double chi = ax - 0.25 * kPi;
  return std::sqrt(2.0 / (kPi * ax)) * (p * std::cos(chi) - q * std::sin(chi));
}

double mean_power(const FrameBlock& block) {
  if (block.values.empty()) return 0.0;
  double s = 0.0;
  for (const auto& v : block.values) s += std::norm(v);
  return s / static_cast<double>(block.values.size());
}

FrameBlock add_awgn(const FrameBlock& clean, double snr_db, Rng& rng) {
  if (!std::isfinite(snr_db)) throw UsageError("snr_db must be finite");
  require_frames(clean, "add_awgn");
  const double noise_var = mean_power(clean) / std::pow(10.0, snr_db / 10.0);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5 * noise_var));
  FrameBlock out = clean;
  for (auto& v : out.values) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    v += cdouble(re, im);
  }
  return out;
}

ChannelSequence add_awgn(const ChannelSequence& seq, double snr_db, Rng& rng) {
  return {add_awgn(seq.h, snr_db, rng), seq.meta};
}

FrameBlock ls_estimate(const FrameBlock& noisy) {
  require_frames(noisy, "ls_estimate");
  return noisy;
}

ChannelSequence ls_estimate(const ChannelSequence& noisy) {
  return {ls_estimate(noisy.h), noisy.meta};
}

CMatrix mmse_filter(const CMatrix& r_hh, double snr_db) {
  if (!std::isfinite(snr_db)) throw UsageError("snr_db must be finite");
  if (r_hh.rows() != r_hh.cols() || r_hh.rows() == 0) {
    throw ShapeError("R_HH must be square and non-empty");
  }
  const double gamma0 = std::pow(10.0, snr_db / 10.0);
  const CMatrix system =
      r_hh + CMatrix::Identity(r_hh.rows(), r_hh.cols()) * cdouble(1.0 / gamma0, 0.0);
  Eigen::PartialPivLU<CMatrix> lu(system);
  const double rcond = lu.rcond();
  if (!(rcond > 1e-14)) {
    throw NumericError("MMSE system R_HH + I/gamma0 is singular (rcond " +
                       std::to_string(rcond) + ")");
  }
  // system and R_HH are Hermitian, so R system^-1 = (system^-1 R)^H.
  CMatrix filter = lu.solve(r_hh).adjoint();
  if (!filter.allFinite()) throw NumericError("MMSE filter is not finite");
  return filter;
}

FrameBlock apply_filter(const FrameBlock& ls, const CMatrix& filter) {
  require_frames(ls, "apply_filter");
  const int rt = ls.entries_per_frame();
  if (filter.rows() != rt || filter.cols() != rt) {
    throw ShapeError("filter is " + std::to_string(filter.rows()) + "x" +
                     std::to_string(filter.cols()) + ", frames carry " + std::to_string(rt) +
                     " entries");
  }
  FrameBlock out(ls.frames, ls.rx, ls.tx);
  for (int n = 0; n < ls.frames; ++n) {
    Eigen::Map<const Eigen::VectorXcd> in(ls.frame(n).data(), rt);
    Eigen::Map<Eigen::VectorXcd> dst(out.frame(n).data(), rt);
    dst.noalias() = filter * in;
  }
  return out;
}

FrameBlock mmse_estimate(const FrameBlock& ls, const EstimationConfig& cfg, const CMatrix& r_hh) {
  const int rt = ls.entries_per_frame();
  if (cfg.cov_source == CovSource::identity) {
    return apply_filter(ls, mmse_filter(CMatrix::Identity(rt, rt), cfg.snr_db));
  }
  return apply_filter(ls, mmse_filter(r_hh, cfg.snr_db));
}

ChannelSequence mmse_estimate(const ChannelSequence& ls, const EstimationConfig& cfg,
                              const CMatrix& r_hh) {
  return {mmse_estimate(ls.h, cfg, r_hh), ls.meta};
}

CMatrix sample_covariance(std::span<const FrameBlock> blocks) {
  if (blocks.empty()) throw DataError("sample covariance needs training frames");
  const int rx = blocks.front().rx;
  const int tx = blocks.front().tx;
  const int rt = rx * tx;
  CMatrix acc = CMatrix::Zero(rt, rt);
  long total = 0;
  for (const auto& b : blocks) {
    require_frames(b, "sample_covariance");
    if (b.rx != rx || b.tx != tx) throw ShapeError("mixed antenna shapes in covariance input");
    for (int n = 0; n < b.frames; ++n) {
      Eigen::Map<const Eigen::VectorXcd> v(b.frame(n).data(), rt);
      acc.noalias() += v * v.adjoint();
    }
    total += b.frames;
  }
  if (total < rt) {
    throw DataError("sample covariance needs at least " + std::to_string(rt) + " frames, got " +
                    std::to_string(total));
  }
  acc /= static_cast<double>(total);
  const CMatrix herm = 0.5 * (acc + acc.adjoint());
  return herm;
}

CMatrix sample_covariance(std::span<const ChannelSequence> train) {
  std::vector<FrameBlock> blocks;
  blocks.reserve(train.size());
  for (const auto& s : train) blocks.push_back(s.h);
  return sample_covariance(std::span<const FrameBlock>(blocks));
}

}  // namespace lcp
