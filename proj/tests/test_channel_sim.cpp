#include <doctest.h>

#include <cmath>
#include <numbers>

#include "lcp/channel_sim.hpp"
#include "lcp/error.hpp"
#include "oracles.hpp"

using namespace lcp;

namespace {

SimConfig small_cfg(double speed, int frames, int rx = 1, int tx = 1) {
  SimConfig c;
  c.rx = rx;
  c.tx = tx;
  c.speed_kmh = speed;
  c.num_frames = frames;
  return c;
}

// Speed giving f_d * Ts = target for the default carrier and frame period.
double speed_for(double fd_ts) {
  const SimConfig c;
  const double fd = fd_ts / c.frame_period_s;
  return fd * kSpeedOfLight / c.carrier_hz * 3.6;
}

}  // namespace

TEST_CASE("sample_path_set: zero speed means zero Doppler") {
  SimConfig c = small_cfg(0.0, 10);
  c.paths = 1;
  Rng rng(3);
  const auto p = sample_path_set(c, rng);
  REQUIRE(p.size() == 1);
  CHECK(p[0].doppler_hz == 0.0);
  CHECK(std::norm(p[0].gain) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("sample_path_set: gains are power-normalized for any config") {
  Rng rng(11);
  for (int paths : {1, 2, 5, 23, 64}) {
    for (double speed : {0.0, 30.0, 300.0}) {
      SimConfig c = small_cfg(speed, 10);
      c.paths = paths;
      const auto p = sample_path_set(c, rng);
      double s = 0.0;
      for (const auto& x : p) s += std::norm(x.gain);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("sample_path_set: Doppler bounded by f_d at 60 km/h, 3.5 GHz") {
  SimConfig c = small_cfg(60.0, 10);
  c.paths = 23;
  c.carrier_hz = 3.5e9;
  const double fd = c.max_doppler_hz();
  CHECK(fd == doctest::Approx(194.57).epsilon(1e-4));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    for (const auto& p : sample_path_set(c, rng)) CHECK(std::abs(p.doppler_hz) <= fd + 1e-9);
  }
}

TEST_CASE("sample_path_set is deterministic under a seed") {
  SimConfig c = small_cfg(50.0, 10);
  Rng a(42), b(42);
  const auto pa = sample_path_set(c, a);
  const auto pb = sample_path_set(c, b);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].gain == pb[i].gain);
    CHECK(pa[i].doppler_hz == pb[i].doppler_hz);
    CHECK(pa[i].aoa == pb[i].aoa);
  }
}

TEST_CASE("invalid sim config is rejected") {
  SimConfig c;
  c.rx = 0;
  Rng rng(1);
  CHECK_THROWS_AS(sample_path_set(c, rng), UsageError);
  c = SimConfig{};
  c.frame_period_s = 0.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("steering_vector") {
  for (auto v : steering_vector(0.0, 4)) CHECK(std::abs(v - cdouble(1.0, 0.0)) < 1e-15);
  const auto a = steering_vector(std::numbers::pi / 2, 2);
  CHECK(std::abs(a[0] - cdouble(1.0, 0.0)) < 1e-15);
  CHECK(std::abs(a[1] - cdouble(-1.0, 0.0)) < 1e-15);
  for (double ang : {0.3, 1.1, 2.7, 5.9}) {
    for (auto v : steering_vector(ang, 8)) CHECK(std::abs(v) == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(steering_vector(0.0, 0), ShapeError);
}

TEST_CASE("generate_sequence: static channel is constant") {
  SimConfig c = small_cfg(0.0, 50, 2, 4);
  Rng rng(5);
  const auto seq = generate_sequence(c, sample_path_set(c, rng));
  for (int n = 1; n < seq.h.frames; ++n) {
    for (int e = 0; e < 8; ++e) CHECK(seq.h.frame(n)[e] == seq.h.frame(0)[e]);
  }
}

TEST_CASE("generate_sequence: single scalar path has the closed form") {
  SimConfig c = small_cfg(120.0, 64);
  PathSet paths{{cdouble(1.0, 0.0), 150.0, 0.0, 0.0}};
  const auto seq = generate_sequence(c, paths);
  for (int n = 0; n < 64; ++n) {
    const cdouble expected =
        std::exp(cdouble(0.0, -2.0 * std::numbers::pi * 150.0 * n * c.frame_period_s));
    CHECK(std::abs(seq.h.at(n, 0, 0) - expected) < 1e-12);
  }
}

TEST_CASE("generate_sequence: full-size shape") {
  SimConfig c = small_cfg(30.0, 11000, 2, 4);
  Rng rng(1);
  const auto seq = generate_sequence(c, sample_path_set(c, rng));
  CHECK(seq.h.frames == 11000);
  CHECK(seq.h.rx == 2);
  CHECK(seq.h.tx == 4);
  CHECK(seq.h.values.size() == 11000u * 8u);
  for (const auto& v : seq.h.values) REQUIRE(std::isfinite(v.real()));
}

TEST_CASE("bessel_j0 against independent oracles") {
  CHECK(bessel_j0(0.0) == 1.0);
  const double root = oracle::bisect([](double x) { return oracle::j0_quadrature(x); }, 2.0, 3.0);
  CHECK(std::abs(root - 2.404825557695773) < 1e-9);
  CHECK(std::abs(bessel_j0(2.404825557695773)) < 1e-7);

  const double x = 100.0;
  const double asym = std::sqrt(2.0 / (std::numbers::pi * x)) * std::cos(x - std::numbers::pi / 4);
  CHECK(std::abs(bessel_j0(x) - asym) < 1e-3);

  for (double v = -30.0; v <= 60.0; v += 0.173) {
    CHECK(std::abs(bessel_j0(v) - oracle::j0_quadrature(v)) < 1e-7);
    CHECK(std::abs(bessel_j0(v) - std::cyl_bessel_j(0.0, std::abs(v))) < 1e-7);
  }
  // Both sides of the series/asymptotic switch.
  for (double v : {7.999, 8.0, 8.001, 8.5, 12.0}) {
    CHECK(std::abs(bessel_j0(v) - std::cyl_bessel_j(0.0, v)) < 1e-7);
  }
}

TEST_CASE("autocorrelation_estimate") {
  SUBCASE("lag zero is one and a static channel stays at one") {
    SimConfig c = small_cfg(0.0, 60, 2, 2);
    std::vector<ChannelSequence> seqs;
    Rng rng(9);
    for (int i = 0; i < 20; ++i) seqs.push_back(generate_sequence(c, sample_path_set(c, rng)));
    const auto rho = autocorrelation_estimate(seqs, 20);
    CHECK(rho[0] == 1.0);
    for (double r : rho) CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("Jakes ensemble follows J0 at f_d Ts = 0.01") {
    SimConfig c = small_cfg(speed_for(0.01), 120);
    std::vector<ChannelSequence> seqs;
    Rng rng(2024);
    for (int i = 0; i < 10000; ++i) seqs.push_back(generate_sequence(c, sample_path_set(c, rng)));
    const auto rho = autocorrelation_estimate(seqs, 50);
    double worst = 0.0;
    for (int tau = 0; tau <= 50; ++tau) {
      worst = std::max(worst,
                       std::abs(rho[tau] - oracle::j0_quadrature(2 * std::numbers::pi * 0.01 * tau)));
    }
    CHECK(worst <= 0.03);
  }
  SUBCASE("errors") {
    std::vector<ChannelSequence> none;
    CHECK_THROWS_AS(autocorrelation_estimate(none, 3), DataError);
    SimConfig c = small_cfg(10.0, 5);
    Rng rng(1);
    std::vector<ChannelSequence> one{generate_sequence(c, sample_path_set(c, rng))};
    CHECK_THROWS_AS(autocorrelation_estimate(one, 5), DataError);
  }
}

TEST_CASE("add_awgn") {
  SimConfig c = small_cfg(30.0, 20000, 2, 4);
  Rng rng(3);
  const auto seq = generate_sequence(c, sample_path_set(c, rng));

  SUBCASE("vanishing noise at 300 dB") {
    Rng n(1);
    const auto out = add_awgn(seq.h, 300.0, n);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      CHECK(std::abs(out.values[i] - seq.h.values[i]) <= 1e-10 * std::abs(seq.h.values[i]) + 1e-300);
    }
  }
  SUBCASE("0 dB noise power matches signal power") {
    Rng n(2);
    const auto out = add_awgn(seq.h, 0.0, n);
    double noise = 0.0;
    for (std::size_t i = 0; i < out.values.size(); ++i) noise += std::norm(out.values[i] - seq.h.values[i]);
    noise /= static_cast<double>(out.values.size());
    REQUIRE(out.values.size() >= 100000u);
    const double ratio = noise / mean_power(seq.h);
    CHECK(ratio >= 0.95);
    CHECK(ratio <= 1.05);
  }
  SUBCASE("same seed, same output") {
    Rng a(77), b(77);
    CHECK(add_awgn(seq.h, 5.0, a).values == add_awgn(seq.h, 5.0, b).values);
  }
  SUBCASE("non-finite SNR") {
    Rng a(1);
    CHECK_THROWS_AS(add_awgn(seq.h, std::nan(""), a), UsageError);
  }
}

TEST_CASE("ls_estimate is the observation") {
  SimConfig c = small_cfg(30.0, 40, 2, 4);
  Rng rng(8);
  const auto seq = generate_sequence(c, sample_path_set(c, rng));
  const auto ls = ls_estimate(seq);
  CHECK(ls.h.values == seq.h.values);
  CHECK(ls.h.same_shape(seq.h));
  Rng n(9);
  const auto noisy = add_awgn(seq.h, 3.0, n);
  CHECK(ls_estimate(noisy).values == noisy.values);
}

TEST_CASE("mmse_estimate") {
  SimConfig c = small_cfg(30.0, 200, 2, 4);
  Rng rng(4);
  const auto seq = generate_sequence(c, sample_path_set(c, rng));
  const CMatrix eye = CMatrix::Identity(8, 8);

  SUBCASE("high SNR with identity covariance is nearly LS") {
    const auto out = mmse_estimate(seq.h, {60.0, CovSource::sample}, eye);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      num += std::norm(out.values[i] - seq.h.values[i]);
      den += std::norm(seq.h.values[i]);
    }
    CHECK(std::sqrt(num / den) <= 1e-4);
  }
  SUBCASE("identity covariance at 0 dB halves the estimate") {
    const auto out = mmse_estimate(seq.h, {0.0, CovSource::identity}, CMatrix());
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      CHECK(std::abs(out.values[i] - 0.5 * seq.h.values[i]) < 1e-12);
    }
  }
  SUBCASE("singular system is reported") {
    // R = -I/gamma0 makes R + I/gamma0 exactly zero.
    const CMatrix r = -0.1 * eye;
    CHECK_THROWS_AS(mmse_estimate(seq.h, {10.0, CovSource::sample}, r), NumericError);
  }
  SUBCASE("wrong covariance size") {
    CHECK_THROWS_AS(mmse_estimate(seq.h, {10.0, CovSource::sample}, CMatrix::Identity(4, 4)),
                    ShapeError);
  }
}

TEST_CASE("MMSE beats LS with a sample covariance at every tested SNR") {
  SimConfig c = small_cfg(60.0, 20000, 2, 4);
  Rng rng(12);
  const auto seq = generate_sequence(c, sample_path_set(c, rng));
  const FrameBlock train = seq.h.slice(0, 10000);
  const FrameBlock held = seq.h.slice(10000, 10000);
  const CMatrix r = sample_covariance(std::span<const FrameBlock>(&train, 1));
  for (double snr : {0.0, 5.0, 10.0, 15.0, 20.0}) {
    Rng n(static_cast<std::uint64_t>(snr) + 100);
    const auto noisy = add_awgn(held, snr, n);
    const auto ls = ls_estimate(noisy);
    const auto mm = mmse_estimate(ls, {snr, CovSource::sample}, r);
    double e_ls = 0.0, e_mm = 0.0;
    for (std::size_t i = 0; i < held.values.size(); ++i) {
      e_ls += std::norm(ls.values[i] - held.values[i]);
      e_mm += std::norm(mm.values[i] - held.values[i]);
    }
    CHECK(e_mm < e_ls);
  }
}

TEST_CASE("sample_covariance") {
  SUBCASE("static unit scalar channel") {
    FrameBlock b(10, 1, 1);
    for (auto& v : b.values) v = 1.0;
    const CMatrix r = sample_covariance(std::span<const FrameBlock>(&b, 1));
    CHECK(r.rows() == 1);
    CHECK(std::abs(r(0, 0) - cdouble(1.0, 0.0)) < 1e-15);
  }
  SUBCASE("Hermitian and trace near RT for a Jakes ensemble") {
    SimConfig c = small_cfg(60.0, 400, 2, 4);
    Rng rng(21);
    std::vector<ChannelSequence> seqs;
    for (int i = 0; i < 300; ++i) seqs.push_back(generate_sequence(c, sample_path_set(c, rng)));
    const CMatrix r = sample_covariance(seqs);
    CHECK((r - r.adjoint()).norm() <= 1e-12);
    CHECK(std::abs(r.trace().real() - 8.0) <= 0.05 * 8.0);
  }
  SUBCASE("too few frames") {
    FrameBlock b(3, 2, 2);
    CHECK_THROWS_AS(sample_covariance(std::span<const FrameBlock>(&b, 1)), DataError);
    CHECK_THROWS_AS(sample_covariance(std::span<const FrameBlock>()), DataError);
  }
}
