#include "stochsplit/fft.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace stochsplit {

FftPlan::FftPlan(std::size_t n) : n_(n) {
  if (n == 0 || !std::has_single_bit(n))
    throw std::invalid_argument("FFT length " + std::to_string(n) + " is not a power of two");
  const int bits = std::countr_zero(n);
  bitrev_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
    bitrev_[i] = r;
  }
  twiddles_.resize(n / 2 + 1);
  for (std::size_t k = 0; k < twiddles_.size(); ++k) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddles_[k] = {std::cos(ang), std::sin(ang)};
  }
}

void FftPlan::forward(std::span<std::complex<double>> data) const { transform(data, false); }

void FftPlan::inverse(std::span<std::complex<double>> data) const {
  transform(data, true);
  const double scale = 1.0 / static_cast<double>(n_);
  for (auto& z : data) z *= scale;
}

void FftPlan::transform(std::span<std::complex<double>> data, bool inverse) const {
  if (data.size() != n_) throw std::invalid_argument("FFT input length does not match plan");
  for (std::size_t i = 0; i < n_; ++i)
    if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
  // Explicit real arithmetic: std::complex operator* goes through the
  // Annex G NaN-recovery path, which dominates the butterfly cost.
  auto* z = reinterpret_cast<double*>(data.data());
  const double sign = inverse ? -1.0 : 1.0;
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n_ / len;
    for (std::size_t start = 0; start < n_; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const double wr = twiddles_[k * stride].real();
        const double wi = sign * twiddles_[k * stride].imag();
        double* a = z + 2 * (start + k);
        double* b = z + 2 * (start + k + half);
        const double tr = wr * b[0] - wi * b[1];
        const double ti = wr * b[1] + wi * b[0];
        b[0] = a[0] - tr;
        b[1] = a[1] - ti;
        a[0] += tr;
        a[1] += ti;
      }
    }
  }
}

std::vector<std::complex<double>> fft(std::vector<std::complex<double>> v) {
  FftPlan(v.size()).forward(v);
  return v;
}

std::vector<std::complex<double>> ifft(std::vector<std::complex<double>> v) {
  FftPlan(v.size()).inverse(v);
  return v;
}

}  // namespace stochsplit
