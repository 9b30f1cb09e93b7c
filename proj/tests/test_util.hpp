#ifndef CMBDET_TESTS_TEST_UTIL_HPP_
#define CMBDET_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <functional>
#include <vector>

#include "cmbdet/nn/tensor.hpp"
#include "cmbdet/rng.hpp"
#include "cmbdet/volume.hpp"

namespace cmbtest {

inline cmb::Volume3D make_volume(cmb::GridSize g, const std::vector<float>& values,
                                 cmb::Spacing sp = {1, 1, 1},
                                 cmb::Modality m = cmb::Modality::SWI) {
  cmb::Volume3D v(g, sp, m);
  v.data() = values;
  return v;
}

inline cmb::nn::Tensor random_tensor(int c, int nz, int ny, int nx, cmb::Rng& rng,
                                     double lo = -1.0, double hi = 1.0) {
  cmb::nn::Tensor t(c, nz, ny, nx);
  for (auto& v : t.v) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Central-difference check against an analytic gradient, measuring the
// actually-representable step so float32 storage does not bias the result.
// Returns the worst relative error over the probed entries.
inline double fd_check(std::vector<float>& x, const std::vector<double>& analytic,
                       const std::function<double()>& eval, double h,
                       const std::vector<std::size_t>& probe) {
  double worst = 0.0;
  for (std::size_t i : probe) {
    const float orig = x[i];
    const float xp = static_cast<float>(orig + h);
    const float xm = static_cast<float>(orig - h);
    x[i] = xp;
    const double fp = eval();
    x[i] = xm;
    const double fm = eval();
    x[i] = orig;
    const double actual_h = static_cast<double>(xp) - static_cast<double>(xm);
    const double fd = (fp - fm) / actual_h;
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

inline double fd_check_dbl(std::vector<double>& x, const std::vector<double>& analytic,
                           const std::function<double()>& eval, double h) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = eval();
    x[i] = orig - h;
    const double fm = eval();
    x[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace cmbtest

#endif  // CMBDET_TESTS_TEST_UTIL_HPP_
