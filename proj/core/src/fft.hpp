#pragma once

#include "cellflow/common.hpp"

#include <fftw3.h>

#include <complex>
#include <mutex>
#include <vector>

namespace cellflow::detail {

inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

inline int wavenumber(int j, int n) { return j < n / 2 ? j : j - n; }
inline int slot(int k, int n) { return k >= 0 ? k : k + n; }

// Unnormalised 2-D complex transforms. Plans are created under a lock and
// executed on caller arrays, so one object may serve several threads.
class Fft2 {
 public:
  using cplx = std::complex<double>;

  explicit Fft2(int n) : n_(n) {
    std::vector<cplx> a(static_cast<std::size_t>(n) * n), b(a.size());
    auto* pa = reinterpret_cast<fftw_complex*>(a.data());
    auto* pb = reinterpret_cast<fftw_complex*>(b.data());
    std::lock_guard lock(fftw_plan_mutex());
    fwd_ = fftw_plan_dft_2d(n, n, pa, pb, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    bwd_ = fftw_plan_dft_2d(n, n, pa, pb, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!fwd_ || !bwd_) throw NumericalError("FFTW plan creation failed");
  }
  ~Fft2() {
    std::lock_guard lock(fftw_plan_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }
  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;

  void forward(const std::vector<cplx>& in, std::vector<cplx>& out) const { run(fwd_, in, out); }
  void backward(const std::vector<cplx>& in, std::vector<cplx>& out) const { run(bwd_, in, out); }
  int n() const { return n_; }

  // Fourier coefficients c_k of a real grid function, f = sum c_k e^{i w k.x}.
  std::vector<cplx> spectrum(const std::vector<double>& values) const {
    std::vector<cplx> in(values.begin(), values.end()), out;
    forward(in, out);
    const double norm = 1.0 / static_cast<double>(in.size());
    for (auto& c : out) c *= norm;
    return out;
  }

  // Real part of the synthesis sum over all coefficients.
  std::vector<double> synthesize(const std::vector<cplx>& coeffs) const {
    std::vector<cplx> out;
    backward(coeffs, out);
    std::vector<double> v(out.size());
    for (std::size_t q = 0; q < out.size(); ++q) v[q] = out[q].real();
    return v;
  }

 private:
  void run(fftw_plan p, const std::vector<cplx>& in, std::vector<cplx>& out) const {
    out.resize(in.size());
    fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in.data())),
                     reinterpret_cast<fftw_complex*>(out.data()));
  }

  int n_;
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
};

}  // namespace cellflow::detail
