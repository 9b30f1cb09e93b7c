#ifndef CMBDET_NN_MODULES_HPP_
#define CMBDET_NN_MODULES_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "cmbdet/nn/tensor.hpp"
#include "cmbdet/rng.hpp"

namespace cmb::nn {

// Trainable parameter with gradient and momentum buffers.
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;
  std::vector<float> momentum;

  void resize(std::size_t n) {
    value.assign(n, 0.0f);
    grad.assign(n, 0.0f);
    momentum.assign(n, 0.0f);
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

using ParamRefs = std::vector<Param*>;

// 3D convolution, stride 1, same padding for k=3, optional fused ReLU.
// Weight layout: (cout, cin*k^3) row-major, matching the im2col rows.
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(const std::string& name, int cin, int cout, int k, bool relu,
         bool bias = true);

  void init(Rng& rng);
  void collect(ParamRefs& out);

  Tensor forward(const Tensor& x);
  // Accumulates weight gradients and returns dL/dx.
  Tensor backward(const Tensor& dy);

  int cin() const { return cin_; }
  int cout() const { return cout_; }
  Param& weight() { return w_; }
  Param& bias() { return b_; }

 private:
  int cin_ = 0, cout_ = 0, k_ = 3;
  bool relu_ = false, has_bias_ = true;
  Param w_, b_;
  Tensor in_cache_, out_cache_;
};

// 2x2x2 max pooling, stride 2. Spatial dims must be even.
class MaxPool3d {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

 private:
  std::vector<std::uint32_t> argmax_;
  int in_nz_ = 0, in_ny_ = 0, in_nx_ = 0, c_ = 0;
};

// Nearest-neighbor 2x upsampling.
class Upsample2x {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

 private:
  int in_nz_ = 0, in_ny_ = 0, in_nx_ = 0, c_ = 0;
};

// Trilinear resize to an arbitrary grid with endpoint alignment.
class TrilinearResize {
 public:
  Tensor forward(const Tensor& x, int nz, int ny, int nx);
  Tensor backward(const Tensor& dy);

 private:
  int in_nz_ = 0, in_ny_ = 0, in_nx_ = 0, c_ = 0;
  int out_nz_ = 0, out_ny_ = 0, out_nx_ = 0;
};

// Per-position L2 normalization across channels with a learnable
// per-channel scale (ParseNet style).
class L2NormScale {
 public:
  L2NormScale() = default;
  explicit L2NormScale(const std::string& name, int channels);

  void collect(ParamRefs& out);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

 private:
  int c_ = 0;
  Param gamma_;
  Tensor in_cache_;
  std::vector<float> inv_norm_;
};

// Channel concatenation of two tensors on the same grid.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& dy, int ca, Tensor& da, Tensor& db);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Softmax over the channel axis (per spatial position).
Tensor softmax_channels(const Tensor& x);

}  // namespace cmb::nn

#endif  // CMBDET_NN_MODULES_HPP_
