#include "cmbdet/nn/unet.hpp"

#include <stdexcept>

namespace cmb::nn {

UNet3d::UNet3d(const std::string& name, int in_channels, int base_channels)
    : in_ch_(in_channels),
      base_(base_channels),
      enc1a_(name + ".enc1a", in_channels, base_channels, 3, true),
      enc1b_(name + ".enc1b", base_channels, base_channels, 3, true),
      enc2a_(name + ".enc2a", base_channels, 2 * base_channels, 3, true),
      enc2b_(name + ".enc2b", 2 * base_channels, 2 * base_channels, 3, true),
      enc3a_(name + ".enc3a", 2 * base_channels, 4 * base_channels, 3, true),
      enc3b_(name + ".enc3b", 4 * base_channels, 4 * base_channels, 3, true),
      red2_(name + ".red2", 4 * base_channels, 2 * base_channels, 1, true),
      red1_(name + ".red1", 2 * base_channels, base_channels, 1, true),
      dec2_(name + ".dec2", 4 * base_channels, 2 * base_channels, 3, true),
      dec1_(name + ".dec1", 2 * base_channels, base_channels, 3, true) {}

void UNet3d::init(Rng& rng) {
  for (Conv3d* c : {&enc1a_, &enc1b_, &enc2a_, &enc2b_, &enc3a_, &enc3b_, &red2_,
                    &red1_, &dec2_, &dec1_})
    c->init(rng);
}

void UNet3d::collect(ParamRefs& out) {
  for (Conv3d* c : {&enc1a_, &enc1b_, &enc2a_, &enc2b_, &enc3a_, &enc3b_, &red2_,
                    &red1_, &dec2_, &dec1_})
    c->collect(out);
}

UNetLevels UNet3d::forward(const Tensor& x) {
  if (x.nz % kDivisor || x.ny % kDivisor || x.nx % kDivisor)
    throw std::invalid_argument(
        "UNet3d: spatial dims must be divisible by 4; pad the crop");
  UNetLevels out;
  Tensor e1 = enc1b_.forward(enc1a_.forward(x));
  Tensor e2 = enc2b_.forward(enc2a_.forward(pool1_.forward(e1)));
  out.coarse = enc3b_.forward(enc3a_.forward(pool2_.forward(e2)));
  Tensor r2 = red2_.forward(up2_.forward(out.coarse));
  out.mid = dec2_.forward(concat_channels(r2, e2));
  Tensor r1 = red1_.forward(up1_.forward(out.mid));
  out.fine = dec1_.forward(concat_channels(r1, e1));
  return out;
}

Tensor UNet3d::backward(const UNetLevels& grads) {
  Tensor dc1 = dec1_.backward(grads.fine);
  Tensor dr1, de1;
  split_channels(dc1, base_, dr1, de1);

  Tensor dmid = up1_.backward(red1_.backward(dr1));
  if (!grads.mid.v.empty()) add_inplace(dmid, grads.mid);

  Tensor dc2 = dec2_.backward(dmid);
  Tensor dr2, de2;
  split_channels(dc2, 2 * base_, dr2, de2);

  Tensor dcoarse = up2_.backward(red2_.backward(dr2));
  if (!grads.coarse.v.empty()) add_inplace(dcoarse, grads.coarse);

  Tensor dp2 = enc3a_.backward(enc3b_.backward(dcoarse));
  add_inplace(de2, pool2_.backward(dp2));

  Tensor dp1 = enc2a_.backward(enc2b_.backward(de2));
  add_inplace(de1, pool1_.backward(dp1));

  return enc1a_.backward(enc1b_.backward(de1));
}

}  // namespace cmb::nn
