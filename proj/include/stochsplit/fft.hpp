#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace stochsplit {

/// In-place iterative radix-2 FFT of a fixed power-of-two length.
///
/// Forward is unnormalized, sum_k v_k e^{-2 pi i jk/N}; inverse uses e^{+...}
/// and divides by N. Twiddles are evaluated once per plan directly from
/// cos/sin (no recurrence), so a plan is immutable and shareable.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);

  std::size_t size() const noexcept { return n_; }
  void forward(std::span<std::complex<double>> data) const;
  void inverse(std::span<std::complex<double>> data) const;

 private:
  void transform(std::span<std::complex<double>> data, bool inverse) const;

  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<std::complex<double>> twiddles_;
};

std::vector<std::complex<double>> fft(std::vector<std::complex<double>> v);
std::vector<std::complex<double>> ifft(std::vector<std::complex<double>> v);

}  // namespace stochsplit
