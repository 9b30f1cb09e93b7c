#ifndef CMBDET_NN_UNET_HPP_
#define CMBDET_NN_UNET_HPP_

#include <string>

#include "cmbdet/nn/modules.hpp"

namespace cmb::nn {

// The three decoder-side feature maps, coarsest first. `coarse` is the
// bottleneck at 1/4 resolution, `mid` at 1/2, `fine` at full resolution.
struct UNetLevels {
  Tensor coarse, mid, fine;
};

// 3-level U-Net backbone: two 3x3x3 conv+ReLU blocks per encoder level,
// nearest upsampling + 1x1x1 reduction + skip concatenation + one 3x3x3
// conv per decoder level. Channel widths are (C, 2C, 4C).
class UNet3d {
 public:
  UNet3d() = default;
  UNet3d(const std::string& name, int in_channels, int base_channels);

  void init(Rng& rng);
  void collect(ParamRefs& out);

  int in_channels() const { return in_ch_; }
  int base_channels() const { return base_; }
  // Spatial dims must be divisible by this (two pooling stages).
  static constexpr int kDivisor = 4;

  UNetLevels forward(const Tensor& x);
  // Any of the level gradients may be an empty tensor (treated as zero).
  Tensor backward(const UNetLevels& grads);

 private:
  int in_ch_ = 0, base_ = 0;
  Conv3d enc1a_, enc1b_, enc2a_, enc2b_, enc3a_, enc3b_;
  Conv3d red2_, red1_, dec2_, dec1_;
  MaxPool3d pool1_, pool2_;
  Upsample2x up2_, up1_;
};

inline void add_inplace(Tensor& a, const Tensor& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

}  // namespace cmb::nn

#endif  // CMBDET_NN_UNET_HPP_
