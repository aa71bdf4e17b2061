#pragma once

// Differentiable tensor operations. Every function returns a new Var; inputs
// are never mutated (batch_norm's running statistics are the one exception and
// live outside the graph).

#include <cstdint>
#include <span>
#include <vector>

#include "regen/autograd.hpp"

namespace regen::ad {

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
// slope*x + (1-slope)*softplus(x): a rectifier without a kink, so central
// differences stay valid everywhere. slope = 0 gives softplus.
Var smooth_leaky_relu(const Var& x, double slope);
Var tanh(const Var& x);
Var exp(const Var& x);
Var detach(const Var& x);

// Forward value of `hard`, gradient routed to `soft` unchanged.
Var straight_through(const Var& hard, const Var& soft);

// ---- broadcasting ----
// x: (N,C,H,W); v: (N,C,1,1) added to every spatial position.
Var add_spatial(const Var& x, const Var& v);

// ---- reductions (to scalar) ----
Var sum(const Var& x);
Var mean(const Var& x);
Var mean_abs_diff(const Var& a, const Var& b);
// Weighted sum of scalar Vars; terms with zero weight are skipped.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

// ---- layers ----
enum class Padding { kReflect, kZero };

struct Conv2dOptions {
  int stride = 1;
  int pad = 1;
  Padding padding = Padding::kReflect;
};

// x: (N,Cin,H,W); weight: (Cout,Cin,k,k); bias: (1,Cout,1,1) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt = {});

// x: (N,Din,1,1); weight: (Dout,Din,1,1); bias: (1,Dout,1,1).
Var linear(const Var& x, const Var& weight, const Var& bias);

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Training mode normalizes with batch statistics and updates `state`;
// evaluation mode uses the running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
               bool training);

Var upsample_nearest2x(const Var& x);
Var avg_pool2x(const Var& x);
Var global_avg_pool(const Var& x);

// Channel range [begin, end).
Var slice_channels(const Var& x, int begin, int end);

Var softmax_channels(const Var& x);

// Mean of -log p[label] over pixels whose label != ignore; p is (N,C,H,W).
// Returns 0 when every pixel is ignored.
Var nll_of_probs(const Var& probs, std::span<const std::uint8_t> labels, std::uint8_t ignore);

}  // namespace regen::ad
