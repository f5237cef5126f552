#pragma once

// Test-only reference implementations. Nothing here calls into the code under
// test except to read parameter buffers, so each oracle stays an independent
// route to the expected value.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "lcp/autodiff.hpp"

namespace oracle {

// J0(x) = (1/pi) * integral_0^pi cos(x sin t) dt, trapezoid rule (spectrally
// accurate for this periodic integrand).
inline double j0_quadrature(double x, int n = 4000) {
  const double h = std::numbers::pi / n;
  double s = 0.5 * (1.0 + std::cos(x * std::sin(std::numbers::pi)));
  for (int i = 1; i < n; ++i) s += std::cos(x * std::sin(i * h));
  return s * h / std::numbers::pi;
}

inline double bisect(const std::function<double(double)>& f, double lo, double hi) {
  double flo = f(lo);
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if ((fm < 0) == (flo < 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const lcp::ad::Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline std::vector<double> to_vec(const lcp::ad::Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat o(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) o[i][j] += a[i][k] * b[k][j];
  return o;
}

inline Mat transpose(const Mat& a) {
  Mat o(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) o[j][i] = a[i][j];
  return o;
}

inline Mat add_row(Mat a, const std::vector<double>& b) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return a;
}

inline Mat add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Mat relu(Mat a) {
  for (auto& row : a)
    for (auto& v : row) v = std::max(v, 0.0);
  return a;
}

inline Mat layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b,
                      double eps) {
  Mat o = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    double mean = 0.0;
    for (double v : x[r]) mean += v;
    mean /= x[r].size();
    double var = 0.0;
    for (double v : x[r]) var += (v - mean) * (v - mean);
    var /= x[r].size();
    for (std::size_t c = 0; c < x[r].size(); ++c)
      o[r][c] = g[c] * (x[r][c] - mean) / std::sqrt(var + eps) + b[c];
  }
  return o;
}

inline double max_abs_diff(const Mat& a, const lcp::ad::Tensor& t) {
  double m = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[r].size(); ++c) m = std::max(m, std::abs(a[r][c] - t.at(r, c)));
  return m;
}

// Central finite differences of f() with respect to every element of the
// given tensors, compared with their stored .grad(). Returns the worst
// per-tensor relative error ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, floor).
// The floor keeps analytically-zero gradients (a per-row bias ahead of a
// layer norm, for instance) from turning rounding noise into a large ratio.
inline double fd_gradient_error(const std::function<double()>& f,
                                std::vector<lcp::ad::Tensor> wrt, double eps = 1e-5,
                                double floor = 1e-6) {
  double worst = 0.0;
  for (auto& t : wrt) {
    auto data = t.mutable_data();
    const auto g = t.grad();
    double diff2 = 0.0, ad2 = 0.0, fd2 = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + eps;
      const double up = f();
      data[i] = orig - eps;
      const double down = f();
      data[i] = orig;
      const double fd = (up - down) / (2 * eps);
      diff2 += (fd - g[i]) * (fd - g[i]);
      ad2 += g[i] * g[i];
      fd2 += fd * fd;
    }
    const double denom = std::max({std::sqrt(ad2), std::sqrt(fd2), floor});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

inline lcp::ad::Tensor random_tensor(lcp::ad::Shape shape, std::mt19937_64& rng,
                                     bool requires_grad = true, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(lcp::ad::numel(shape));
  for (auto& x : v) x = g(rng);
  return lcp::ad::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace oracle
