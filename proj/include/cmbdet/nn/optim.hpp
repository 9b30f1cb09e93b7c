#ifndef CMBDET_NN_OPTIM_HPP_
#define CMBDET_NN_OPTIM_HPP_

#include "cmbdet/nn/modules.hpp"

namespace cmb::nn {

// SGD with classical momentum: v = m*v + g, w -= lr*v.
class Sgd {
 public:
  Sgd(ParamRefs params, double lr, double momentum)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad() {
    for (Param* p : params_) p->zero_grad();
  }

  void step() {
    const float lr = static_cast<float>(lr_);
    const float m = static_cast<float>(momentum_);
    for (Param* p : params_) {
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        p->momentum[i] = m * p->momentum[i] + p->grad[i];
        p->value[i] -= lr * p->momentum[i];
      }
    }
  }

 private:
  ParamRefs params_;
  double lr_;
  double momentum_;
};

// Step decay: lr = base * gamma^(epoch / step_size).
struct StepLr {
  double base_lr = 0.01;
  int step_size = 50;
  double gamma = 0.5;

  double at_epoch(int epoch) const {
    double lr = base_lr;
    for (int e = step_size; e <= epoch; e += step_size) lr *= gamma;
    return lr;
  }
};

}  // namespace cmb::nn

#endif  // CMBDET_NN_OPTIM_HPP_
