#include "regen/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace regen::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Eigen picks its vectorisation peeling from operand addresses, so products on
// mapped std::vector storage could round differently between identical runs.
// Operands go through Eigen-owned, aligned copies instead.
void matmul(const double* a, int ar, int ac, bool ta, const double* b, int br, int bc, bool tb,
            double* dst, bool accumulate) {
  const RowMat lhs = ConstMapMat(a, ar, ac);
  const RowMat rhs = ConstMapMat(b, br, bc);
  RowMat c;
  if (ta && tb) {
    c.noalias() = lhs.transpose() * rhs.transpose();
  } else if (ta) {
    c.noalias() = lhs.transpose() * rhs;
  } else if (tb) {
    c.noalias() = lhs * rhs.transpose();
  } else {
    c.noalias() = lhs * rhs;
  }
  const double* src = c.data();
  const auto n = static_cast<std::size_t>(c.size());
  if (accumulate) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
  } else {
    std::copy(src, src + n, dst);
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
  }
}

// Accumulates g into the gradient of input i when that input requires it.
template <typename F>
void accumulate_into(Node& self, std::size_t i, F&& f) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return;
  f(in.ensure_grad());
}

template <typename Fwd, typename Bwd>
Var unary(const Var& x, Fwd fwd, Bwd dydx) {
  std::vector<double> out(x.size());
  auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [dydx](Node& self) {
    const auto& xv = self.inputs[0]->value;
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dydx(xv[i], self.value[i]);
    });
  });
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// For each (kernel offset, output coordinate) the source coordinate or -1 for
// a zero-padded tap.
std::vector<int> tap_map(int in, int out, int k, int stride, int pad, Padding mode) {
  std::vector<int> map(static_cast<std::size_t>(k) * out);
  for (int kk = 0; kk < k; ++kk) {
    for (int o = 0; o < out; ++o) {
      int src = o * stride + kk - pad;
      if (src < 0 || src >= in) src = mode == Padding::kReflect ? reflect_index(src, in) : -1;
      map[static_cast<std::size_t>(kk) * out + o] = src;
    }
  }
  return map;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      accumulate_into(self, k, [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate_into(self, 1, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    });
    accumulate_into(self, 1, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    });
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var smooth_leaky_relu(const Var& x, double slope) {
  return unary(
      x,
      [slope](double v) {
        const double softplus = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
        return slope * v + (1.0 - slope) * softplus;
      },
      [slope](double v, double) {
        const double sigmoid = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return slope + (1.0 - slope) * sigmoid;
      });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var detach(const Var& x) {
  return Var::leaf(x.shape(), std::vector<double>(x.value().begin(), x.value().end()));
}

Var straight_through(const Var& hard, const Var& soft) {
  require_same_shape(hard, soft, "straight_through");
  std::vector<double> out(hard.value().begin(), hard.value().end());
  return make_result(hard.shape(), std::move(out), {soft}, [](Node& self) {
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

// --------------------------------------------------------------- broadcasting

Var add_spatial(const Var& x, const Var& v) {
  const Shape s = x.shape();
  if (v.shape() != Shape{s.n, s.c, 1, 1}) {
    throw std::invalid_argument("add_spatial: vector shape " + v.shape().str() +
                                " incompatible with " + s.str());
  }
  std::vector<double> out(x.value().begin(), x.value().end());
  const std::size_t plane = s.plane();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(s.n) * s.c; ++nc) {
    for (std::size_t p = 0; p < plane; ++p) out[nc * plane + p] += v.value()[nc];
  }
  return make_result(s, std::move(out), {x, v}, [plane](Node& self) {
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate_into(self, 1, [&](std::vector<double>& g) {
      for (std::size_t nc = 0; nc < g.size(); ++nc) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += self.grad[nc * plane + p];
        g[nc] += acc;
      }
    });
  });
}

// ----------------------------------------------------------------- reductions

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value()) total += v;
  return make_result(Shape{}, {total}, {x}, [](Node& self) {
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (double& gi : g) gi += self.grad[0];
    });
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  for (double v : x.value()) total += v;
  return make_result(Shape{}, {total / n}, {x}, [n](Node& self) {
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (double& gi : g) gi += self.grad[0] / n;
    });
  });
}

Var mean_abs_diff(const Var& a, const Var& b) {
  require_same_shape(a, b, "mean_abs_diff");
  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a.value()[i] - b.value()[i]);
  return make_result(Shape{}, {total / n}, {a, b}, [n](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const double g0 = self.grad[0] / n;
    auto sign = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * sign(av[i] - bv[i]);
    });
    accumulate_into(self, 1, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= g0 * sign(av[i] - bv[i]);
    });
  });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("weighted_sum: size mismatch");
  std::vector<Var> used;
  std::vector<double> w;
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (weights[i] == 0.0) continue;
    if (terms[i].size() != 1) throw std::invalid_argument("weighted_sum: non-scalar term");
    used.push_back(terms[i]);
    w.push_back(weights[i]);
    total += weights[i] * terms[i].item();
  }
  return make_result(Shape{}, {total}, used, [w](Node& self) {
    for (std::size_t k = 0; k < w.size(); ++k) {
      accumulate_into(self, k, [&](std::vector<double>& g) { g[0] += w[k] * self.grad[0]; });
    }
  });
}

// --------------------------------------------------------------------- layers

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw std::invalid_argument("conv2d: weight " + ws.str() + " incompatible with input " +
                                xs.str());
  }
  const int k = ws.h;
  const int cout = ws.n;
  const int ho = (xs.h + 2 * opt.pad - k) / opt.stride + 1;
  const int wo = (xs.w + 2 * opt.pad - k) / opt.stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: input too small " + xs.str());
  if (bias.defined() && bias.size() != static_cast<std::size_t>(cout)) {
    throw std::invalid_argument("conv2d: bias size mismatch");
  }

  const auto ymap = tap_map(xs.h, ho, k, opt.stride, opt.pad, opt.padding);
  const auto xmap = tap_map(xs.w, wo, k, opt.stride, opt.pad, opt.padding);
  const int kdim = xs.c * k * k;
  const int odim = ho * wo;
  const std::size_t in_plane = xs.plane();

  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(xs.n) * kdim * odim);
  std::vector<double> out(static_cast<std::size_t>(xs.n) * cout * odim);
  for (int n = 0; n < xs.n; ++n) {
    double* col = cols->data() + static_cast<std::size_t>(n) * kdim * odim;
    const double* xin = x.value().data() + static_cast<std::size_t>(n) * xs.c * in_plane;
    for (int ci = 0; ci < xs.c; ++ci) {
      const double* plane = xin + ci * in_plane;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          double* row = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * odim;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = ymap[static_cast<std::size_t>(ky) * ho + oy];
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = xmap[static_cast<std::size_t>(kx) * wo + ox];
              row[oy * wo + ox] = (iy < 0 || ix < 0) ? 0.0 : plane[iy * xs.w + ix];
            }
          }
        }
      }
    }
    double* o = out.data() + static_cast<std::size_t>(n) * cout * odim;
    matmul(weight.value().data(), cout, kdim, false, col, kdim, odim, false, o, false);
    if (bias.defined()) {
      for (int co = 0; co < cout; ++co) {
        const double b = bias.value()[co];
        for (int i = 0; i < odim; ++i) o[static_cast<std::size_t>(co) * odim + i] += b;
      }
    }
  }

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const Shape out_shape{xs.n, cout, ho, wo};
  return make_result(
      out_shape, std::move(out), inputs,
      [=, ymap = std::move(ymap), xmap = std::move(xmap)](Node& self) {
        const Node& xin = *self.inputs[0];
        const Node& win = *self.inputs[1];
        std::vector<double> dcol(static_cast<std::size_t>(kdim) * odim);
        for (int n = 0; n < xs.n; ++n) {
          const double* dout = self.grad.data() + static_cast<std::size_t>(n) * cout * odim;
          const double* col = cols->data() + static_cast<std::size_t>(n) * kdim * odim;
          accumulate_into(self, 1, [&](std::vector<double>& g) {
            matmul(dout, cout, odim, false, col, kdim, odim, true, g.data(), true);
          });
          if (self.inputs.size() > 2) {
            accumulate_into(self, 2, [&](std::vector<double>& g) {
              for (int co = 0; co < cout; ++co) {
                double acc = 0.0;
                for (int i = 0; i < odim; ++i) acc += dout[static_cast<std::size_t>(co) * odim + i];
                g[co] += acc;
              }
            });
          }
          if (xin.requires_grad) {
            matmul(win.value.data(), cout, kdim, true, dout, cout, odim, false, dcol.data(), false);
            auto& gx = self.inputs[0]->ensure_grad();
            double* gplane_base = gx.data() + static_cast<std::size_t>(n) * xs.c * in_plane;
            for (int ci = 0; ci < xs.c; ++ci) {
              double* gplane = gplane_base + ci * in_plane;
              for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                  const double* row =
                      dcol.data() + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * odim;
                  for (int oy = 0; oy < ho; ++oy) {
                    const int iy = ymap[static_cast<std::size_t>(ky) * ho + oy];
                    if (iy < 0) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                      const int ix = xmap[static_cast<std::size_t>(kx) * wo + ox];
                      if (ix >= 0) gplane[iy * xs.w + ix] += row[oy * wo + ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (xs.h != 1 || xs.w != 1 || ws.c != xs.c) {
    throw std::invalid_argument("linear: input " + xs.str() + " incompatible with weight " +
                                ws.str());
  }
  const int din = xs.c;
  const int dout = ws.n;
  std::vector<double> out(static_cast<std::size_t>(xs.n) * dout);
  matmul(x.value().data(), xs.n, din, false, weight.value().data(), dout, din, true, out.data(),
         false);
  for (int n = 0; n < xs.n; ++n) {
    for (int j = 0; j < dout; ++j) out[static_cast<std::size_t>(n) * dout + j] += bias.value()[j];
  }
  return make_result(Shape{xs.n, dout, 1, 1}, std::move(out), {x, weight, bias},
                     [=](Node& self) {
                       const double* g = self.grad.data();
                       const double* xv = self.inputs[0]->value.data();
                       const double* wv = self.inputs[1]->value.data();
                       accumulate_into(self, 0, [&](std::vector<double>& gx) {
                         matmul(g, xs.n, dout, false, wv, dout, din, false, gx.data(), true);
                       });
                       accumulate_into(self, 1, [&](std::vector<double>& gw) {
                         matmul(g, xs.n, dout, true, xv, xs.n, din, false, gw.data(), true);
                       });
                       accumulate_into(self, 2, [&](std::vector<double>& gb) {
                         for (int n = 0; n < xs.n; ++n)
                           for (int j = 0; j < dout; ++j)
                             gb[j] += g[static_cast<std::size_t>(n) * dout + j];
                       });
                     });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  const std::size_t groups = static_cast<std::size_t>(s.n) * s.c;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  std::vector<double> out(x.size());
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    const double* xv = x.value().data() + gidx * plane;
    double m = 0.0;
    for (std::size_t p = 0; p < plane; ++p) m += xv[p];
    m /= static_cast<double>(plane);
    double v = 0.0;
    for (std::size_t p = 0; p < plane; ++p) v += (xv[p] - m) * (xv[p] - m);
    v /= static_cast<double>(plane);
    const double is = 1.0 / std::sqrt(v + eps);
    (*inv_std)[gidx] = is;
    const int c = static_cast<int>(gidx % s.c);
    for (std::size_t p = 0; p < plane; ++p) {
      const double xh = (xv[p] - m) * is;
      (*xhat)[gidx * plane + p] = xh;
      out[gidx * plane + p] = gamma.value()[c] * xh + beta.value()[c];
    }
  }
  return make_result(s, std::move(out), {x, gamma, beta}, [=](Node& self) {
    const auto& gam = self.inputs[1]->value;
    const double m = static_cast<double>(plane);
    for (std::size_t gidx = 0; gidx < groups; ++gidx) {
      const int c = static_cast<int>(gidx % s.c);
      const double* dy = self.grad.data() + gidx * plane;
      const double* xh = xhat->data() + gidx * plane;
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (std::size_t p = 0; p < plane; ++p) {
        sum_dy += dy[p];
        sum_dy_xh += dy[p] * xh[p];
      }
      accumulate_into(self, 1, [&](std::vector<double>& g) { g[c] += sum_dy_xh; });
      accumulate_into(self, 2, [&](std::vector<double>& g) { g[c] += sum_dy; });
      accumulate_into(self, 0, [&](std::vector<double>& g) {
        const double k = gam[c] * (*inv_std)[gidx] / m;
        for (std::size_t p = 0; p < plane; ++p) {
          g[gidx * plane + p] += k * (m * dy[p] - sum_dy - xh[p] * sum_dy_xh);
        }
      });
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
               bool training) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  const std::size_t count = plane * s.n;
  if (state.running_mean.size() != static_cast<std::size_t>(s.c)) {
    throw std::invalid_argument("batch_norm: running stats sized for " +
                                std::to_string(state.running_mean.size()) + " channels, input " +
                                s.str());
  }
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(s.c);
  std::vector<double> out(x.size());
  auto at = [&](int n, int c) { return (static_cast<std::size_t>(n) * s.c + c) * plane; };

  for (int c = 0; c < s.c; ++c) {
    double m, v;
    if (training) {
      m = 0.0;
      for (int n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < plane; ++p) m += x.value()[at(n, c) + p];
      m /= static_cast<double>(count);
      v = 0.0;
      for (int n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = x.value()[at(n, c) + p] - m;
          v += d * d;
        }
      v /= static_cast<double>(count);
      const double unbiased = count > 1 ? v * count / (count - 1) : v;
      state.running_mean[c] = (1 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      m = state.running_mean[c];
      v = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(v + state.eps);
    (*inv_std)[c] = is;
    for (int n = 0; n < s.n; ++n) {
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = at(n, c) + p;
        const double xh = (x.value()[i] - m) * is;
        (*xhat)[i] = xh;
        out[i] = gamma.value()[c] * xh + beta.value()[c];
      }
    }
  }

  return make_result(s, std::move(out), {x, gamma, beta}, [=](Node& self) {
    const auto& gam = self.inputs[1]->value;
    const double m = static_cast<double>(count);
    for (int c = 0; c < s.c; ++c) {
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          sum_dy += self.grad[base + p];
          sum_dy_xh += self.grad[base + p] * (*xhat)[base + p];
        }
      }
      accumulate_into(self, 1, [&](std::vector<double>& g) { g[c] += sum_dy_xh; });
      accumulate_into(self, 2, [&](std::vector<double>& g) { g[c] += sum_dy; });
      accumulate_into(self, 0, [&](std::vector<double>& g) {
        const double is = (*inv_std)[c];
        for (int n = 0; n < s.n; ++n) {
          const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            const double dy = self.grad[base + p];
            if (training) {
              g[base + p] += gam[c] * is / m * (m * dy - sum_dy - (*xhat)[base + p] * sum_dy_xh);
            } else {
              g[base + p] += gam[c] * is * dy;
            }
          }
        }
      });
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Shape s = x.shape();
  const Shape o{s.n, s.c, s.h * 2, s.w * 2};
  std::vector<double> out(o.size());
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(s.n) * s.c; ++nc) {
    const double* src = x.value().data() + nc * s.plane();
    double* dst = out.data() + nc * o.plane();
    for (int y = 0; y < o.h; ++y)
      for (int xx = 0; xx < o.w; ++xx) dst[y * o.w + xx] = src[(y / 2) * s.w + xx / 2];
  }
  return make_result(o, std::move(out), {x}, [s, o](Node& self) {
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (std::size_t nc = 0; nc < static_cast<std::size_t>(s.n) * s.c; ++nc) {
        const double* src = self.grad.data() + nc * o.plane();
        double* dst = g.data() + nc * s.plane();
        for (int y = 0; y < o.h; ++y)
          for (int xx = 0; xx < o.w; ++xx) dst[(y / 2) * s.w + xx / 2] += src[y * o.w + xx];
      }
    });
  });
}

Var avg_pool2x(const Var& x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw std::invalid_argument("avg_pool2x: odd size " + s.str());
  const Shape o{s.n, s.c, s.h / 2, s.w / 2};
  std::vector<double> out(o.size(), 0.0);
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(s.n) * s.c; ++nc) {
    const double* src = x.value().data() + nc * s.plane();
    double* dst = out.data() + nc * o.plane();
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx) dst[(y / 2) * o.w + xx / 2] += 0.25 * src[y * s.w + xx];
  }
  return make_result(o, std::move(out), {x}, [s, o](Node& self) {
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (std::size_t nc = 0; nc < static_cast<std::size_t>(s.n) * s.c; ++nc) {
        const double* src = self.grad.data() + nc * o.plane();
        double* dst = g.data() + nc * s.plane();
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) dst[y * s.w + xx] += 0.25 * src[(y / 2) * o.w + xx / 2];
      }
    });
  });
}

Var global_avg_pool(const Var& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  std::vector<double> out(static_cast<std::size_t>(s.n) * s.c);
  for (std::size_t nc = 0; nc < out.size(); ++nc) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += x.value()[nc * plane + p];
    out[nc] = acc / static_cast<double>(plane);
  }
  return make_result(Shape{s.n, s.c, 1, 1}, std::move(out), {x}, [plane](Node& self) {
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
        const double d = self.grad[nc] / static_cast<double>(plane);
        for (std::size_t p = 0; p < plane; ++p) g[nc * plane + p] += d;
      }
    });
  });
}

Var slice_channels(const Var& x, int begin, int end) {
  const Shape s = x.shape();
  if (begin < 0 || end > s.c || begin >= end) {
    throw std::invalid_argument("slice_channels: bad range for " + s.str());
  }
  const Shape o{s.n, end - begin, s.h, s.w};
  const std::size_t plane = s.plane();
  std::vector<double> out(o.size());
  for (int n = 0; n < s.n; ++n) {
    const double* src = x.value().data() + (static_cast<std::size_t>(n) * s.c + begin) * plane;
    std::copy(src, src + o.c * plane, out.data() + static_cast<std::size_t>(n) * o.c * plane);
  }
  return make_result(o, std::move(out), {x}, [s, o, begin, plane](Node& self) {
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (int n = 0; n < s.n; ++n) {
        double* dst = g.data() + (static_cast<std::size_t>(n) * s.c + begin) * plane;
        const double* src = self.grad.data() + static_cast<std::size_t>(n) * o.c * plane;
        for (std::size_t i = 0; i < o.c * plane; ++i) dst[i] += src[i];
      }
    });
  });
}

Var softmax_channels(const Var& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  std::vector<double> out(x.size());
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = -INFINITY;
      for (int c = 0; c < s.c; ++c) mx = std::max(mx, x.value()[base + c * plane + p]);
      double z = 0.0;
      for (int c = 0; c < s.c; ++c) {
        const double e = std::exp(x.value()[base + c * plane + p] - mx);
        out[base + c * plane + p] = e;
        z += e;
      }
      for (int c = 0; c < s.c; ++c) out[base + c * plane + p] /= z;
    }
  }
  return make_result(s, std::move(out), {x}, [s, plane](Node& self) {
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      for (int n = 0; n < s.n; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          double dot = 0.0;
          for (int c = 0; c < s.c; ++c)
            dot += self.grad[base + c * plane + p] * self.value[base + c * plane + p];
          for (int c = 0; c < s.c; ++c) {
            const std::size_t i = base + c * plane + p;
            g[i] += self.value[i] * (self.grad[i] - dot);
          }
        }
      }
    });
  });
}

Var nll_of_probs(const Var& probs, std::span<const std::uint8_t> labels, std::uint8_t ignore) {
  const Shape s = probs.shape();
  const std::size_t plane = s.plane();
  if (labels.size() != static_cast<std::size_t>(s.n) * plane) {
    throw std::invalid_argument("nll_of_probs: label count does not match " + s.str());
  }
  constexpr double kFloor = 1e-300;
  std::vector<std::size_t> picks;  // flat probability index per valid pixel
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::uint8_t y = labels[static_cast<std::size_t>(n) * plane + p];
      if (y == ignore) continue;
      if (y >= s.c) {
        throw std::invalid_argument("nll_of_probs: label " + std::to_string(y) +
                                    " out of range for " + std::to_string(s.c) + " classes");
      }
      const std::size_t i = (static_cast<std::size_t>(n) * s.c + y) * plane + p;
      picks.push_back(i);
      total -= std::log(std::max(probs.value()[i], kFloor));
    }
  }
  const double count = static_cast<double>(picks.size());
  const double value = picks.empty() ? 0.0 : total / count;
  return make_result(Shape{}, {value}, {probs}, [picks = std::move(picks), count](Node& self) {
    if (picks.empty()) return;
    accumulate_into(self, 0, [&](std::vector<double>& g) {
      const auto& pv = self.inputs[0]->value;
      for (std::size_t i : picks) {
        if (pv[i] > kFloor) g[i] -= self.grad[0] / (count * pv[i]);
      }
    });
  });
}

}  // namespace regen::ad
