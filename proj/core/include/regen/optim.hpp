#pragma once

#include <vector>

#include "regen/autograd.hpp"

namespace regen::optim {

struct AdamOptions {
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<ad::Var> params, AdamOptions opt = {});
  void zero_grad();
  void step(double lr);
  long steps() const { return t_; }

 private:
  std::vector<ad::Var> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
class Sgd {
 public:
  Sgd(std::vector<ad::Var> params, double momentum, double weight_decay);
  void zero_grad();
  void step(double lr);

 private:
  std::vector<ad::Var> params_;
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

// base_lr * (1 - iter/max_iter)^power; zero once iter >= max_iter.
double poly_lr(double base_lr, long iter, long max_iter, double power);

}  // namespace regen::optim
