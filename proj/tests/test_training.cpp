#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lcp/error.hpp"
#include "lcp/eval.hpp"
#include "lcp/training.hpp"
#include "oracles.hpp"

using namespace lcp;
using namespace lcp::ad;

namespace {

FrameBlock simulate(double speed_kmh, int frames, std::uint64_t seed, int rx = 2, int tx = 2) {
  SimConfig c;
  c.rx = rx;
  c.tx = tx;
  c.speed_kmh = speed_kmh;
  c.num_frames = frames;
  Rng rng = make_stream(seed, "sim");
  return generate_sequence(c, sample_path_set(c, rng)).h;
}

ModelConfig small_model(int np = 8, int nl = 3, int rx = 2, int tx = 2) {
  ModelConfig m;
  m.np = np;
  m.nl = nl;
  m.d = 12;
  m.layers = 1;
  m.rx = rx;
  m.tx = tx;
  return m;
}

TrainConfig quick_train(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.max_lr = 3e-3;
  t.augment = false;
  t.seed = 5;
  return t;
}

double mean_test_mse(const ModelParams& p, const Dataset& ds) {
  double s = 0.0;
  for (const auto& smp : ds.samples) s += mse(predict(p, smp.past), smp.future);
  return s / static_cast<double>(ds.size());
}

bool same_values(const ModelParams& a, const ModelParams& b) {
  const auto x = a.named(), y = b.named();
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::equal(x[i].tensor.data().begin(), x[i].tensor.data().end(),
                    y[i].tensor.data().begin()))
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("build_windows") {
  CHECK(build_windows(10000, 90, 10).size() == 9901);
  const auto one = build_windows(100, 90, 10);
  REQUIRE(one.size() == 1);
  CHECK(one[0].past_begin == 0);
  CHECK_THROWS_AS(build_windows(99, 90, 10), DataError);
  const auto w = build_windows(20, 5, 3);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i].past_begin == static_cast<int>(i));
}

TEST_CASE("make_dataset slices consecutive frames") {
  const FrameBlock h = simulate(30.0, 40, 1);
  const Dataset ds = make_dataset(std::span<const FrameBlock>(&h, 1), 8, 3);
  CHECK(ds.size() == 30);
  const Sample& s = ds.samples[7];
  CHECK(s.past.frames == 8);
  CHECK(s.future.frames == 3);
  CHECK(s.past.at(0, 1, 1) == h.at(7, 1, 1));
  CHECK(s.future.at(0, 0, 1) == h.at(15, 0, 1));
  CHECK(make_dataset(std::span<const FrameBlock>(&h, 1), 8, 3, 10).size() == 10);
}

TEST_CASE("feature packing order and round trip") {
  FrameBlock b(2, 1, 2);
  b.at(0, 0, 0) = {1, 2};
  b.at(0, 0, 1) = {3, 4};
  b.at(1, 0, 0) = {5, 6};
  b.at(1, 0, 1) = {7, 8};
  const Tensor t = pack_features(b);
  CHECK(t.shape() == Shape{2, 4});
  for (std::size_t i = 0; i < 8; ++i) CHECK(t.data()[i] == static_cast<double>(i + 1));
  const FrameBlock back = unpack_features(t.data(), 2, 1, 2);
  CHECK(back.values == b.values);
  CHECK_THROWS_AS(unpack_features(t.data(), 3, 1, 2), ShapeError);
}

TEST_CASE("scaler standardizes each feature") {
  const FrameBlock h = simulate(30.0, 500, 2);
  const InputScaler sc = fit_scaler(std::span<const FrameBlock>(&h, 1));
  REQUIRE(sc.mean.size() == 8);
  const Tensor z = standardize(pack_features(h), sc);
  for (std::size_t c = 0; c < 8; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) m += z.at(r, c);
    m /= static_cast<double>(z.rows());
    for (std::size_t r = 0; r < z.rows(); ++r) v += (z.at(r, c) - m) * (z.at(r, c) - m);
    v /= static_cast<double>(z.rows());
    CHECK(std::abs(m) < 1e-10);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  }
  FrameBlock flat(10, 1, 1);
  const InputScaler fs = fit_scaler(std::span<const FrameBlock>(&flat, 1));
  CHECK(fs.stddev[0] == 1.0);
}

TEST_CASE("augment") {
  const FrameBlock h = simulate(30.0, 40, 3);
  const Dataset ds = make_dataset(std::span<const FrameBlock>(&h, 1), 8, 3);
  const Sample& s = ds.samples[0];
  const CMatrix eye = CMatrix::Identity(4, 4);

  SUBCASE("vanishing noise leaves the past nearly clean") {
    Rng rng(1);
    const Sample a = augment(s, {300.0, 300.0}, eye, rng);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.past.values.size(); ++i) {
      num += std::norm(a.past.values[i] - s.past.values[i]);
      den += std::norm(s.past.values[i]);
    }
    CHECK(std::sqrt(num / den) <= 1e-4);
    CHECK(a.input_snr_db == 300.0);
  }
  SUBCASE("future is bit-identical") {
    Rng rng(2);
    const Sample a = augment(s, {0.0, 20.0}, eye, rng);
    CHECK(a.future.values == s.future.values);
    CHECK(a.past.values != s.past.values);
  }
  SUBCASE("drawn SNR averages to the range midpoint") {
    Rng rng(3);
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const double snr = draw_snr_db({0.0, 20.0}, rng);
      CHECK(snr >= 0.0);
      CHECK(snr <= 20.0);
      sum += snr;
    }
    CHECK(std::abs(sum / 10000.0 - 10.0) <= 0.2);
  }
  SUBCASE("bad range") {
    Rng rng(4);
    CHECK_THROWS_AS(draw_snr_db({5.0, 1.0}, rng), UsageError);
  }
}

TEST_CASE("mse_loss") {
  std::mt19937_64 g(1);
  const Tensor a = oracle::random_tensor({4, 6}, g, false);
  CHECK(mse_loss(a, a).item() == 0.0);
  CHECK(mse_loss(Tensor::zeros({1, 2}), Tensor::from({1, 2}, {1.0, 0.0})).item() == 1.0);

  const Tensor b = oracle::random_tensor({4, 6}, g, false);
  double s = 0.0;
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t e = 0; e < 3; ++e) {
      const double dr = a.at(n, 2 * e) - b.at(n, 2 * e);
      const double di = a.at(n, 2 * e + 1) - b.at(n, 2 * e + 1);
      s += dr * dr + di * di;
    }
  CHECK(std::abs(mse_loss(a, b).item() - s / 12.0) < 1e-10);
  CHECK_THROWS_AS(mse_loss(a, Tensor::zeros({4, 4})), ShapeError);
}

TEST_CASE("wmse_loss") {
  CHECK(wmse_weight(1) == 1.0);
  CHECK(wmse_weight(4) == 0.5);

  const Tensor zero = Tensor::zeros({10, 2});
  std::vector<double> v1(20, 0.0), v9(20, 0.0);
  v1[0] = 1.0;
  v9[8 * 2] = 1.0;
  const double l1 = wmse_loss(Tensor::from({10, 2}, v1), zero).item();
  const double l9 = wmse_loss(Tensor::from({10, 2}, v9), zero).item();
  CHECK(l9 / l1 == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  // Equal per-frame errors: wmse = mse * mean(n^-1/2).
  std::mt19937_64 g(2);
  const Tensor a = oracle::random_tensor({1, 6}, g, false);
  std::vector<double> rep;
  for (int n = 0; n < 10; ++n) rep.insert(rep.end(), a.data().begin(), a.data().end());
  const Tensor pred = Tensor::from({10, 6}, rep);
  const Tensor target = Tensor::zeros({10, 6});
  double mean_w = 0.0;
  for (int n = 1; n <= 10; ++n) mean_w += 1.0 / std::sqrt(static_cast<double>(n));
  mean_w /= 10.0;
  CHECK(wmse_loss(pred, target).item() ==
        doctest::Approx(mse_loss(pred, target).item() * mean_w).epsilon(1e-13));

  // Block-level versions agree with the tensor losses.
  const FrameBlock pb = unpack_features(pred.data(), 10, 1, 3);
  const FrameBlock tb(10, 1, 3);
  CHECK(wmse(pb, tb) == doctest::Approx(wmse_loss(pred, target).item()).epsilon(1e-13));
  CHECK(mse(pb, tb) == doctest::Approx(mse_loss(pred, target).item()).epsilon(1e-13));
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 g(3);
  Tensor p = oracle::random_tensor({5, 4}, g);
  const Tensor t = oracle::random_tensor({5, 4}, g, false);
  for (LossKind k : {LossKind::mse, LossKind::wmse}) {
    p.zero_grad();
    backward(loss_fn(k, p, t));
    CHECK(oracle::fd_gradient_error([&] { return loss_fn(k, p, t).item(); }, {p}) < 1e-7);
  }
}

TEST_CASE("AdamW") {
  SUBCASE("zero gradient without decay leaves parameters") {
    Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    w.zero_grad();
    AdamW opt({{"w", w}});
    opt.step(0.1, 0.0);
    CHECK(w.data()[0] == 1.0);
    CHECK(w.data()[1] == -2.0);
  }
  SUBCASE("zero gradient with decay is pure shrinkage") {
    Tensor w = Tensor::from({2}, {1.0, -2.0}, true);
    w.zero_grad();
    AdamW opt({{"w", w}});
    opt.step(0.1, 0.01);
    CHECK(w.data()[0] == doctest::Approx(1.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));
    CHECK(w.data()[1] == doctest::Approx(-2.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));
  }
  SUBCASE("quadratic bowl against the scalar recursion") {
    Tensor w = Tensor::from({1}, {1.0}, true);
    AdamW opt({{"w", w}});
    double theta = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 200; ++t) {
      opt.zero_grad();
      backward(sum(mul(w, w)));
      opt.step(0.1, 0.0);
      const double gr = 2.0 * theta;
      m = 0.9 * m + 0.1 * gr;
      v = 0.999 * v + 0.001 * gr * gr;
      theta -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(std::abs(w.data()[0]) < 1e-2);
    CHECK(w.data()[0] == doctest::Approx(theta).epsilon(1e-12));
    CHECK(opt.steps() == 200);
  }
}

TEST_CASE("onecycle_lr") {
  const double max_lr = 4e-4;
  const std::int64_t total = 1001;
  CHECK(onecycle_lr(0, total, max_lr) == doctest::Approx(max_lr / 25).epsilon(1e-15));
  CHECK(onecycle_lr(300, total, max_lr) == doctest::Approx(max_lr).epsilon(1e-15));
  CHECK(std::abs(onecycle_lr(total - 1, total, max_lr) - max_lr / 1e4) <= 1e-9);
  double prev = 0.0;
  for (std::int64_t s = 0; s <= 300; ++s) {
    const double lr = onecycle_lr(s, total, max_lr);
    CHECK(lr >= prev);
    prev = lr;
  }
  for (std::int64_t s = 301; s < total; ++s) {
    const double lr = onecycle_lr(s, total, max_lr);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(onecycle_lr(total, total, max_lr), UsageError);
  CHECK_THROWS_AS(onecycle_lr(-1, total, max_lr), UsageError);
}

TEST_CASE("train") {
  const FrameBlock h = simulate(30.0, 260, 7);
  const FrameBlock train_h = h.slice(0, 200), test_h = h.slice(200, 60);
  const Dataset tr = make_dataset(std::span<const FrameBlock>(&train_h, 1), 8, 3);
  const Dataset te = make_dataset(std::span<const FrameBlock>(&test_h, 1), 8, 3);
  Rng rng = make_stream(1, "init");
  const ModelParams init = init_params(small_model(), rng);

  SUBCASE("zero epochs returns the initialization") {
    const TrainResult r = train(init, tr, te, quick_train(0), CMatrix());
    CHECK(same_values(r.last, init));
    CHECK(r.curve.empty());
    CHECK_FALSE(r.last.scaler.empty());
  }
  SUBCASE("same seed, same curve; loss decreases") {
    TrainConfig cfg = quick_train(4);
    cfg.augment = true;
    const TrainResult a = train(init, tr, te, cfg, CMatrix());
    const TrainResult b = train(init, tr, te, cfg, CMatrix());
    REQUIRE(a.curve.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a.curve[i].train_loss == b.curve[i].train_loss);
      CHECK(a.curve[i].test_loss == b.curve[i].test_loss);
      CHECK(a.curve[i].lr == b.curve[i].lr);
    }
    CHECK(same_values(a.last, b.last));
    CHECK(a.curve.back().train_loss < a.curve.front().train_loss);
    CHECK(a.best_epoch >= 1);
  }
  SUBCASE("dimension mismatch is reported") {
    Rng r2(3);
    const ModelParams other = init_params(small_model(8, 4), r2);
    CHECK_THROWS_AS(train(other, tr, te, quick_train(1), CMatrix()), DataError);
    CHECK_THROWS_AS(train(init, Dataset{}, te, quick_train(1), CMatrix()), DataError);
  }
}

TEST_CASE("fine_tune on 750 samples improves held-out error") {
  const ModelConfig mc = small_model(8, 3, 2, 4);
  // Pretrain at one speed, adapt to a different channel realization and speed.
  const FrameBlock pre = simulate(20.0, 400, 21, 2, 4);
  const Dataset pre_ds = make_dataset(std::span<const FrameBlock>(&pre, 1), 8, 3);
  Rng rng = make_stream(2, "init");
  const TrainResult base = train(init_params(mc, rng), pre_ds, Dataset{}, quick_train(3), CMatrix());

  const FrameBlock meas = simulate(45.0, 750 + 10 + 50 + 10, 22, 2, 4);
  const FrameBlock ft_h = meas.slice(0, 760), held_h = meas.slice(760, 60);
  const Dataset ft = make_dataset(std::span<const FrameBlock>(&ft_h, 1), 8, 3);
  const Dataset held = make_dataset(std::span<const FrameBlock>(&held_h, 1), 8, 3, 50);
  REQUIRE(ft.size() == 750);
  REQUIRE(held.size() == 50);

  const double before = mean_test_mse(base.last, held);
  const TrainResult tuned = fine_tune(base.last, ft, held, quick_train(3), CMatrix());
  CHECK(mean_test_mse(tuned.best, held) <= before);

  const TrainResult none = fine_tune(base.last, ft, held, quick_train(0), CMatrix());
  CHECK(same_values(none.last, base.last));

  const FrameBlock wrong = simulate(45.0, 100, 23, 1, 4);
  const Dataset wrong_ds = make_dataset(std::span<const FrameBlock>(&wrong, 1), 8, 3);
  CHECK_THROWS_AS(fine_tune(base.last, wrong_ds, Dataset{}, quick_train(1), CMatrix()), DataError);
}

TEST_CASE("prepare_test_inputs is deterministic and leaves targets clean") {
  const FrameBlock h = simulate(30.0, 60, 9);
  const Dataset ds = make_dataset(std::span<const FrameBlock>(&h, 1), 8, 3);
  const Dataset a = prepare_test_inputs(ds, 5.0, CMatrix(), 3);
  const Dataset b = prepare_test_inputs(ds, 5.0, CMatrix(), 3);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(a.samples[i].past.values == b.samples[i].past.values);
    CHECK(a.samples[i].future.values == ds.samples[i].future.values);
  }
  CHECK(prepare_test_inputs(ds, std::nullopt, CMatrix(), 3).samples[0].past.values ==
        ds.samples[0].past.values);
}

TEST_CASE("shuffle ablation") {
  const FrameBlock h = simulate(30.0, 260, 11);
  const FrameBlock train_h = h.slice(0, 200), test_h = h.slice(200, 60);
  const Dataset tr = make_dataset(std::span<const FrameBlock>(&train_h, 1), 8, 3);
  const Dataset te = make_dataset(std::span<const FrameBlock>(&test_h, 1), 8, 3);

  SUBCASE("identity permutation leaves the dataset unchanged") {
    std::vector<std::size_t> id(8);
    std::iota(id.begin(), id.end(), 0);
    const Dataset same = apply_time_permutation(tr, id);
    for (std::size_t i = 0; i < tr.size(); ++i)
      CHECK(same.samples[i].past.values == tr.samples[i].past.values);
  }
  SUBCASE("one shared permutation across samples, targets untouched") {
    const ShuffledDataset s = shuffle_ablation(tr, 4);
    CHECK(s.permutation == draw_permutation(8, 4));
    for (std::size_t i = 0; i < tr.size(); ++i) {
      for (int n = 0; n < 8; ++n) {
        const auto got = s.data.samples[i].past.frame(n);
        const auto want = tr.samples[i].past.frame(static_cast<int>(s.permutation[n]));
        CHECK(std::equal(got.begin(), got.end(), want.begin()));
      }
      CHECK(s.data.samples[i].future.values == tr.samples[i].future.values);
    }
    CHECK_THROWS_AS(apply_time_permutation(tr, std::vector<std::size_t>(3)), ShapeError);
  }
  SUBCASE("shuffled training ends within 10% of the unshuffled run") {
    Rng rng = make_stream(3, "init");
    const ModelParams init = init_params(small_model(), rng);
    const TrainConfig cfg = quick_train(6);
    const auto perm = draw_permutation(8, 9);
    const TrainResult plain = train(init, tr, te, cfg, CMatrix());
    const TrainResult shuf = train(init, apply_time_permutation(tr, perm),
                                   apply_time_permutation(te, perm), cfg, CMatrix());
    const double a = plain.curve.back().test_loss, b = shuf.curve.back().test_loss;
    CHECK(std::abs(b - a) <= 0.1 * a);

    // Starting from the permuted initialization the two runs are the same
    // optimization problem, up to rounding.
    const TrainResult mirrored = train(permute_weights(init, perm), apply_time_permutation(tr, perm),
                                       apply_time_permutation(te, perm), cfg, CMatrix());
    CHECK(mirrored.curve.back().test_loss == doctest::Approx(a).epsilon(1e-6));
  }
}
