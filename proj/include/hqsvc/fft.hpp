#pragma once

#include <complex>
#include <vector>

#include "hqsvc/common.hpp"

namespace hqsvc {

// In-place iterative radix-2 FFT. n must be a power of two.
template <typename T>
void fft_inplace(std::vector<std::complex<T>>& a, bool inverse) {
  const std::size_t n = a.size();
  check(n > 0 && (n & (n - 1)) == 0, "fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
    const std::complex<T> wlen(static_cast<T>(std::cos(ang)),
                               static_cast<T>(std::sin(ang)));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<T> w(1, 0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        std::complex<T> u = a[i + j];
        std::complex<T> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const T inv = static_cast<T>(1.0 / static_cast<double>(n));
    for (auto& x : a) x *= inv;
  }
}

// Real forward transform: n real samples -> n/2+1 bins.
template <typename T>
std::vector<std::complex<T>> rfft(const std::vector<T>& x) {
  std::vector<std::complex<T>> a(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = {x[i], T(0)};
  fft_inplace(a, false);
  a.resize(x.size() / 2 + 1);
  return a;
}

// Inverse of rfft: n/2+1 bins -> n real samples (hermitian extension).
template <typename T>
std::vector<T> irfft(const std::vector<std::complex<T>>& bins, std::size_t n) {
  check(bins.size() == n / 2 + 1, "irfft: bin count must be n/2+1");
  std::vector<std::complex<T>> a(n);
  for (std::size_t k = 0; k < bins.size(); ++k) a[k] = bins[k];
  for (std::size_t k = 1; k < n / 2; ++k) a[n - k] = std::conj(a[k]);
  fft_inplace(a, true);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

}  // namespace hqsvc
