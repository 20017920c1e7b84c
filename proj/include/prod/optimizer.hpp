#ifndef PROD_OPTIMIZER_HPP_
#define PROD_OPTIMIZER_HPP_

#include <vector>

#include "prod/tensor.hpp"

namespace prod {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  // Linear warmup over warmup_ratio of total_steps, then linear decay to 0.
  double warmup_ratio = 0.1;
  std::size_t total_steps = 1;
};

// Decoupled-weight-decay Adam with bias correction and a linear
// warmup/decay schedule.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  void zero_grad();
  void step();

  std::size_t steps_taken() const { return t_; }
  double current_lr() const;  // lr that the NEXT step will use

 private:
  std::vector<Tensor> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace prod

#endif  // PROD_OPTIMIZER_HPP_
