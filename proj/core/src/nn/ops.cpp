#include "sam/nn/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <fmt/format.h>

#include "sam/errors.hpp"

namespace sam::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

struct Dims {
  int batch = 1;
  int c = 0;
  int h = 0;
  int w = 0;
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t item() const { return plane() * c; }
};

Dims spatial_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  throw ShapeError(fmt::format("{}: expected [C,H,W] or [B,C,H,W], got {}", op, shape_str(s)));
}

Shape make_spatial_shape(const Shape& like, int c, int h, int w) {
  if (like.size() == 4) return {like[0], c, h, w};
  return {c, h, w};
}

void require_same_size(const Var& a, const Var& b, const char* op) {
  if (a.value().size() != b.value().size()) {
    throw ShapeError(fmt::format("{}: {} vs {}", op, shape_str(a.shape()), shape_str(b.shape())));
  }
}

struct Tap {
  int i0;
  int i1;
  double l0;
  double l1;
};

// Half-pixel-centre bilinear sampling without antialiasing; constants are preserved.
std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = std::min(static_cast<int>(src), in - 1);
    int i1 = std::min(i0 + 1, in - 1);
    double l1 = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l1, l1};
  }
  return taps;
}

void resize_forward(const double* in, double* out, int planes, int h, int w, int oh, int ow,
                    const std::vector<Tap>& ty, const std::vector<Tap>& tx) {
  for (int p = 0; p < planes; ++p) {
    const double* src = in + static_cast<std::size_t>(p) * h * w;
    double* dst = out + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      const double* r0 = src + static_cast<std::size_t>(a.i0) * w;
      const double* r1 = src + static_cast<std::size_t>(a.i1) * w;
      for (int x = 0; x < ow; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        dst[y * ow + x] = a.l0 * (b.l0 * r0[b.i0] + b.l1 * r0[b.i1]) +
                          a.l1 * (b.l0 * r1[b.i0] + b.l1 * r1[b.i1]);
      }
    }
  }
}

void resize_backward(const double* gout, double* gin, int planes, int h, int w, int oh, int ow,
                     const std::vector<Tap>& ty, const std::vector<Tap>& tx) {
  for (int p = 0; p < planes; ++p) {
    double* dst = gin + static_cast<std::size_t>(p) * h * w;
    const double* g = gout + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      double* r0 = dst + static_cast<std::size_t>(a.i0) * w;
      double* r1 = dst + static_cast<std::size_t>(a.i1) * w;
      for (int x = 0; x < ow; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        const double v = g[y * ow + x];
        r0[b.i0] += a.l0 * b.l0 * v;
        r0[b.i1] += a.l0 * b.l1 * v;
        r1[b.i0] += a.l1 * b.l0 * v;
        r1[b.i1] += a.l1 * b.l1 * v;
      }
    }
  }
}

void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int oh, int ow,
            double* col) {
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < c; ++ci) {
    const double* plane = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * p;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          double* drow = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + ow, 0.0);
            continue;
          }
          const double* srow = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int c, int h, int w, int k, int stride, int pad, int oh, int ow,
            double* x) {
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  for (int ci = 0; ci < c; ++ci) {
    double* plane = x + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * p;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          double* drow = plane + static_cast<std::size_t>(iy) * w;
          const double* srow = src + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_size(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return make_result(std::move(out), {a, b}, [](Node& n) {
    n.inputs[0]->accumulate(n.grad);
    n.inputs[1]->accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_size(a, b, "sub");
  Tensor out = a.value();
  out -= b.value();
  return make_result(std::move(out), {a, b}, [](Node& n) {
    n.inputs[0]->accumulate(n.grad);
    if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(n.grad * -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_size(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& n) {
    Node& x = *n.inputs[0];
    Node& y = *n.inputs[1];
    if (x.requires_grad) {
      Tensor g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y.value[i];
      x.accumulate(g);
    }
    if (y.requires_grad) {
      Tensor g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= x.value[i];
      y.accumulate(g);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value() * s;
  return make_result(std::move(out), {a}, [s](Node& n) { n.inputs[0]->accumulate(n.grad * s); });
}

Var add_masked(const Var& x, const Tensor& mask, const Var& delta) {
  require_same_size(x, delta, "add_masked");
  const Dims d = spatial_dims(x.shape(), "add_masked");
  if (mask.size() != d.plane()) {
    throw ShapeError(fmt::format("add_masked: mask {} does not match feature {}",
                                 shape_str(mask.shape()), shape_str(x.shape())));
  }
  Tensor out = x.value();
  const std::size_t plane = d.plane();
  const std::size_t planes = out.size() / plane;
  for (std::size_t p = 0; p < planes; ++p) {
    double* o = out.data() + p * plane;
    const double* dl = delta.value().data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) o[i] += mask[i] * dl[i];
  }
  return make_result(std::move(out), {x, delta}, [mask, plane, planes](Node& n) {
    n.inputs[0]->accumulate(n.grad);
    if (n.inputs[1]->requires_grad) {
      Tensor g = n.grad;
      for (std::size_t p = 0; p < planes; ++p) {
        double* gp = g.data() + p * plane;
        for (std::size_t i = 0; i < plane; ++i) gp[i] *= mask[i];
      }
      n.inputs[1]->accumulate(g);
    }
  });
}

Var sum(const Var& a) {
  return make_result(Tensor::scalar(sum(a.value())), {a}, [](Node& n) {
    n.inputs[0]->accumulate(Tensor(n.inputs[0]->value.shape(), n.grad[0]));
  });
}

Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  return make_result(Tensor::scalar(sum(a.value()) / count), {a}, [count](Node& n) {
    n.inputs[0]->accumulate(Tensor(n.inputs[0]->value.shape(), n.grad[0] / count));
  });
}

Var sum_squares(const Var& a) {
  return make_result(Tensor::scalar(squared_norm(a.value())), {a}, [](Node& n) {
    n.inputs[0]->accumulate(n.inputs[0]->value * (2.0 * n.grad[0]));
  });
}

Var mse(const Var& a, const Var& b) {
  require_same_size(a, b, "mse");
  const double count = static_cast<double>(a.value().size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  return make_result(Tensor::scalar(s / count), {a, b}, [count](Node& n) {
    Tensor diff = n.inputs[0]->value - n.inputs[1]->value;
    diff *= 2.0 * n.grad[0] / count;
    if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(diff);
    if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(diff * -1.0);
  });
}

Var leaky_relu(const Var& x, double negative_slope, double gain) {
  Tensor out = x.value();
  for (double& v : out.values()) v = (v >= 0 ? v : v * negative_slope) * gain;
  return make_result(std::move(out), {x}, [negative_slope, gain](Node& n) {
    Tensor g = n.grad;
    const Tensor& in = n.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= (in[i] >= 0 ? gain : negative_slope * gain);
    n.inputs[0]->accumulate(g);
  });
}

Var relu(const Var& x) { return leaky_relu(x, 0.0, 1.0); }

Var softplus(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 30 ? v : std::log1p(std::exp(v));
  return make_result(std::move(out), {x}, [](Node& n) {
    Tensor g = n.grad;
    const Tensor& in = n.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 / (1.0 + std::exp(-in[i]));
    n.inputs[0]->accumulate(g);
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& n) {
    n.inputs[0]->accumulate(n.grad.reshaped(n.inputs[0]->value.shape()));
  });
}

Var row(const Var& x, int r) {
  if (x.value().rank() != 2 || r < 0 || r >= x.shape()[0]) {
    throw ShapeError(fmt::format("row {} of {}", r, shape_str(x.shape())));
  }
  const int d = x.shape()[1];
  std::vector<double> vals(x.value().data() + static_cast<std::size_t>(r) * d,
                           x.value().data() + static_cast<std::size_t>(r + 1) * d);
  return make_result(Tensor({d}, std::move(vals)), {x}, [r, d](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int i = 0; i < d; ++i) g[static_cast<std::size_t>(r) * d + i] += n.grad[static_cast<std::size_t>(i)];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (weight.value().rank() != 2) throw ShapeError("linear: weight must be [out,in]");
  const int out_f = weight.shape()[0];
  const int in_f = weight.shape()[1];
  const int batch = x.value().rank() == 2 ? x.shape()[0] : 1;
  if (x.value().size() != static_cast<std::size_t>(batch) * in_f) {
    throw ShapeError(fmt::format("linear: input {} vs weight {}", shape_str(x.shape()),
                                 shape_str(weight.shape())));
  }
  if (bias && bias.value().size() != static_cast<std::size_t>(out_f)) {
    throw ShapeError("linear: bias size mismatch");
  }
  Shape out_shape = x.value().rank() == 2 ? Shape{batch, out_f} : Shape{out_f};
  Tensor out(out_shape);
  ConstMatMap xm(x.value().data(), batch, in_f);
  ConstMatMap wm(weight.value().data(), out_f, in_f);
  MatMap om(out.data(), batch, out_f);
  om.noalias() = xm * wm.transpose();
  if (bias) {
    for (int b = 0; b < batch; ++b)
      for (int o = 0; o < out_f; ++o) om(b, o) += bias.value()[static_cast<std::size_t>(o)];
  }
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [batch, in_f, out_f](Node& n) {
    ConstMatMap gm(n.grad.data(), batch, out_f);
    Node& xn = *n.inputs[0];
    Node& wn = *n.inputs[1];
    if (xn.requires_grad) {
      Tensor g(xn.value.shape());
      MatMap(g.data(), batch, in_f).noalias() = gm * ConstMatMap(wn.value.data(), out_f, in_f);
      xn.accumulate(g);
    }
    if (wn.requires_grad) {
      Tensor g(wn.value.shape());
      MatMap(g.data(), out_f, in_f).noalias() = gm.transpose() * ConstMatMap(xn.value.data(), batch, in_f);
      wn.accumulate(g);
    }
    if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
      Tensor g({out_f});
      for (int b = 0; b < batch; ++b)
        for (int o = 0; o < out_f; ++o) g[static_cast<std::size_t>(o)] += gm(b, o);
      n.inputs[2]->accumulate(g);
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions options) {
  const Dims d = spatial_dims(x.shape(), "conv2d");
  if (weight.value().rank() != 4 || weight.shape()[1] != d.c || weight.shape()[2] != weight.shape()[3]) {
    throw ShapeError(fmt::format("conv2d: weight {} incompatible with input {}",
                                 shape_str(weight.shape()), shape_str(x.shape())));
  }
  const int co = weight.shape()[0];
  const int k = weight.shape()[2];
  const int s = options.stride;
  const int pad = options.padding;
  const int oh = (d.h + 2 * pad - k) / s + 1;
  const int ow = (d.w + 2 * pad - k) / s + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: empty output");
  if (bias && bias.value().size() != static_cast<std::size_t>(co)) {
    throw ShapeError("conv2d: bias size mismatch");
  }
  const int kk = d.c * k * k;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
  const bool direct = (k == 1 && s == 1 && pad == 0);

  Tensor out(make_spatial_shape(x.shape(), co, oh, ow));
  auto cols = std::make_shared<std::vector<double>>();
  if (!direct) cols->resize(static_cast<std::size_t>(d.batch) * kk * p);
  ConstMatMap wm(weight.value().data(), co, kk);
  for (int b = 0; b < d.batch; ++b) {
    const double* xb = x.value().data() + b * d.item();
    const double* colb = xb;
    if (!direct) {
      double* dst = cols->data() + static_cast<std::size_t>(b) * kk * p;
      im2col(xb, d.c, d.h, d.w, k, s, pad, oh, ow, dst);
      colb = dst;
    }
    MatMap om(out.data() + static_cast<std::size_t>(b) * co * p, co, static_cast<Eigen::Index>(p));
    om.noalias() = wm * ConstMatMap(colb, kk, static_cast<Eigen::Index>(p));
    if (bias) {
      for (int o = 0; o < co; ++o) om.row(o).array() += bias.value()[static_cast<std::size_t>(o)];
    }
  }

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs),
                     [d, co, k, s, pad, oh, ow, kk, p, direct, cols](Node& n) {
    Node& xn = *n.inputs[0];
    Node& wn = *n.inputs[1];
    ConstMatMap wm(wn.value.data(), co, kk);
    Tensor gx;
    Tensor gw;
    if (xn.requires_grad) gx = Tensor(xn.value.shape());
    if (wn.requires_grad) gw = Tensor(wn.value.shape());
    std::vector<double> gcol(direct ? 0 : static_cast<std::size_t>(kk) * p);
    for (int b = 0; b < d.batch; ++b) {
      ConstMatMap gm(n.grad.data() + static_cast<std::size_t>(b) * co * p, co,
                     static_cast<Eigen::Index>(p));
      const double* colb = direct ? xn.value.data() + b * d.item()
                                  : cols->data() + static_cast<std::size_t>(b) * kk * p;
      if (wn.requires_grad) {
        MatMap(gw.data(), co, kk).noalias() +=
            gm * ConstMatMap(colb, kk, static_cast<Eigen::Index>(p)).transpose();
      }
      if (xn.requires_grad) {
        if (direct) {
          MatMap(gx.data() + b * d.item(), kk, static_cast<Eigen::Index>(p)).noalias() =
              wm.transpose() * gm;
        } else {
          MatMap(gcol.data(), kk, static_cast<Eigen::Index>(p)).noalias() = wm.transpose() * gm;
          col2im(gcol.data(), d.c, d.h, d.w, k, s, pad, oh, ow, gx.data() + b * d.item());
        }
      }
    }
    if (xn.requires_grad) xn.accumulate(gx);
    if (wn.requires_grad) wn.accumulate(gw);
    if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
      Tensor gb({co});
      for (int b = 0; b < d.batch; ++b)
        for (int o = 0; o < co; ++o) {
          const double* gp = n.grad.data() + (static_cast<std::size_t>(b) * co + o) * p;
          double acc = 0.0;
          for (std::size_t i = 0; i < p; ++i) acc += gp[i];
          gb[static_cast<std::size_t>(o)] += acc;
        }
      n.inputs[2]->accumulate(gb);
    }
  });
}

Var modulate(const Var& weight, const Var& style, bool demodulate, double eps) {
  if (weight.value().rank() != 4 || style.value().size() != static_cast<std::size_t>(weight.shape()[1])) {
    throw ShapeError(fmt::format("modulate: weight {} with style {}", shape_str(weight.shape()),
                                 shape_str(style.shape())));
  }
  const int co = weight.shape()[0];
  const int ci = weight.shape()[1];
  const int kk = weight.shape()[2] * weight.shape()[3];
  const std::size_t per_out = static_cast<std::size_t>(ci) * kk;
  Tensor wm = weight.value();
  for (int o = 0; o < co; ++o)
    for (int i = 0; i < ci; ++i) {
      double* w = wm.data() + o * per_out + static_cast<std::size_t>(i) * kk;
      const double sv = style.value()[static_cast<std::size_t>(i)];
      for (int t = 0; t < kk; ++t) w[t] *= sv;
    }
  std::vector<double> demod(static_cast<std::size_t>(co), 1.0);
  Tensor out = wm;
  if (demodulate) {
    for (int o = 0; o < co; ++o) {
      double ss = 0.0;
      const double* w = wm.data() + o * per_out;
      for (std::size_t t = 0; t < per_out; ++t) ss += w[t] * w[t];
      demod[static_cast<std::size_t>(o)] = 1.0 / std::sqrt(ss + eps);
      double* ow = out.data() + o * per_out;
      for (std::size_t t = 0; t < per_out; ++t) ow[t] *= demod[static_cast<std::size_t>(o)];
    }
  }
  return make_result(std::move(out), {weight, style},
                     [co, ci, kk, per_out, demodulate, wm = std::move(wm),
                      demod = std::move(demod)](Node& n) {
    Tensor gm = n.grad;
    if (demodulate) {
      for (int o = 0; o < co; ++o) {
        const double dv = demod[static_cast<std::size_t>(o)];
        double* g = gm.data() + o * per_out;
        const double* w = wm.data() + o * per_out;
        double dot = 0.0;
        for (std::size_t t = 0; t < per_out; ++t) dot += g[t] * w[t];
        const double c3 = dv * dv * dv * dot;
        for (std::size_t t = 0; t < per_out; ++t) g[t] = dv * g[t] - w[t] * c3;
      }
    }
    Node& wn = *n.inputs[0];
    Node& sn = *n.inputs[1];
    if (sn.requires_grad) {
      Tensor gs(sn.value.shape());
      for (int o = 0; o < co; ++o)
        for (int i = 0; i < ci; ++i) {
          const double* g = gm.data() + o * per_out + static_cast<std::size_t>(i) * kk;
          const double* w = wn.value.data() + o * per_out + static_cast<std::size_t>(i) * kk;
          double acc = 0.0;
          for (int t = 0; t < kk; ++t) acc += g[t] * w[t];
          gs[static_cast<std::size_t>(i)] += acc;
        }
      sn.accumulate(gs);
    }
    if (wn.requires_grad) {
      for (int o = 0; o < co; ++o)
        for (int i = 0; i < ci; ++i) {
          double* g = gm.data() + o * per_out + static_cast<std::size_t>(i) * kk;
          const double sv = sn.value[static_cast<std::size_t>(i)];
          for (int t = 0; t < kk; ++t) g[t] *= sv;
        }
      wn.accumulate(gm);
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Dims d = spatial_dims(x.shape(), "upsample_nearest2x");
  const int oh = d.h * 2;
  const int ow = d.w * 2;
  Tensor out(make_spatial_shape(x.shape(), d.c, oh, ow));
  const std::size_t planes = static_cast<std::size_t>(d.batch) * d.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.value().data() + p * d.plane();
    double* dst = out.data() + p * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(y / 2) * d.w + xx / 2];
  }
  return make_result(std::move(out), {x}, [d, planes, oh, ow](Node& n) {
    Tensor g(n.inputs[0]->value.shape());
    for (std::size_t p = 0; p < planes; ++p) {
      double* dst = g.data() + p * d.plane();
      const double* src = n.grad.data() + p * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) dst[(y / 2) * d.w + xx / 2] += src[y * ow + xx];
    }
    n.inputs[0]->accumulate(g);
  });
}

Var avg_pool2x(const Var& x) {
  const Dims d = spatial_dims(x.shape(), "avg_pool2x");
  if (d.h % 2 || d.w % 2) throw ShapeError("avg_pool2x: odd spatial size " + shape_str(x.shape()));
  const int oh = d.h / 2;
  const int ow = d.w / 2;
  Tensor out(make_spatial_shape(x.shape(), d.c, oh, ow));
  const std::size_t planes = static_cast<std::size_t>(d.batch) * d.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.value().data() + p * d.plane();
    double* dst = out.data() + p * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const double* r0 = src + (2 * y) * d.w + 2 * xx;
        dst[y * ow + xx] = 0.25 * (r0[0] + r0[1] + r0[d.w] + r0[d.w + 1]);
      }
  }
  return make_result(std::move(out), {x}, [d, planes, oh, ow](Node& n) {
    Tensor g(n.inputs[0]->value.shape());
    for (std::size_t p = 0; p < planes; ++p) {
      double* dst = g.data() + p * d.plane();
      const double* src = n.grad.data() + p * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const double v = 0.25 * src[y * ow + xx];
          double* r0 = dst + (2 * y) * d.w + 2 * xx;
          r0[0] += v;
          r0[1] += v;
          r0[d.w] += v;
          r0[d.w + 1] += v;
        }
    }
    n.inputs[0]->accumulate(g);
  });
}

Var max_pool2x(const Var& x) {
  const Dims d = spatial_dims(x.shape(), "max_pool2x");
  if (d.h % 2 || d.w % 2) throw ShapeError("max_pool2x: odd spatial size " + shape_str(x.shape()));
  const int oh = d.h / 2;
  const int ow = d.w / 2;
  Tensor out(make_spatial_shape(x.shape(), d.c, oh, ow));
  const std::size_t planes = static_cast<std::size_t>(d.batch) * d.c;
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.value().data() + p * d.plane();
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        std::size_t best = static_cast<std::size_t>(2 * y) * d.w + 2 * xx;
        for (std::size_t cand : {best + 1, best + d.w, best + d.w + 1})
          if (src[cand] > src[best]) best = cand;
        const std::size_t o = p * oh * ow + static_cast<std::size_t>(y) * ow + xx;
        out[o] = src[best];
        (*argmax)[o] = p * d.plane() + best;
      }
  }
  return make_result(std::move(out), {x}, [argmax](Node& n) {
    Tensor g(n.inputs[0]->value.shape());
    for (std::size_t o = 0; o < n.grad.size(); ++o) g[(*argmax)[o]] += n.grad[o];
    n.inputs[0]->accumulate(g);
  });
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  if (x.rank() < 2) throw ShapeError("resize_bilinear: rank < 2");
  const int h = x.dim(-2);
  const int w = x.dim(-1);
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_h;
  shape[shape.size() - 1] = out_w;
  Tensor out(shape);
  const int planes = static_cast<int>(x.size() / (static_cast<std::size_t>(h) * w));
  resize_forward(x.data(), out.data(), planes, h, w, out_h, out_w, bilinear_taps(h, out_h),
                 bilinear_taps(w, out_w));
  return out;
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  const int h = x.value().dim(-2);
  const int w = x.value().dim(-1);
  if (h == out_h && w == out_w) return x;
  Tensor out = resize_bilinear(x.value(), out_h, out_w);
  const int planes = static_cast<int>(x.value().size() / (static_cast<std::size_t>(h) * w));
  return make_result(std::move(out), {x}, [h, w, out_h, out_w, planes](Node& n) {
    Tensor g(n.inputs[0]->value.shape());
    resize_backward(n.grad.data(), g.data(), planes, h, w, out_h, out_w, bilinear_taps(h, out_h),
                    bilinear_taps(w, out_w));
    n.inputs[0]->accumulate(g);
  });
}

Var normalize_channels(const Var& x, double eps) {
  const Dims d = spatial_dims(x.shape(), "normalize_channels");
  const std::size_t plane = d.plane();
  Tensor out = x.value();
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(d.batch) * plane);
  for (int b = 0; b < d.batch; ++b) {
    const double* xb = x.value().data() + b * d.item();
    double* ob = out.data() + b * d.item();
    for (std::size_t i = 0; i < plane; ++i) {
      double ss = 0.0;
      for (int c = 0; c < d.c; ++c) ss += xb[c * plane + i] * xb[c * plane + i];
      const double nrm = std::sqrt(ss);
      (*norms)[b * plane + i] = nrm;
      const double inv = 1.0 / (nrm + eps);
      for (int c = 0; c < d.c; ++c) ob[c * plane + i] *= inv;
    }
  }
  return make_result(std::move(out), {x}, [d, plane, eps, norms](Node& n) {
    const Tensor& xv = n.inputs[0]->value;
    Tensor g(xv.shape());
    for (int b = 0; b < d.batch; ++b) {
      const double* xb = xv.data() + b * d.item();
      const double* gb = n.grad.data() + b * d.item();
      double* ob = g.data() + b * d.item();
      for (std::size_t i = 0; i < plane; ++i) {
        const double nrm = (*norms)[b * plane + i];
        const double ne = nrm + eps;
        double dot = 0.0;
        for (int c = 0; c < d.c; ++c) dot += gb[c * plane + i] * xb[c * plane + i];
        const double k2 = nrm > 0 ? dot / (ne * ne * nrm) : 0.0;
        for (int c = 0; c < d.c; ++c)
          ob[c * plane + i] = gb[c * plane + i] / ne - xb[c * plane + i] * k2;
      }
    }
    n.inputs[0]->accumulate(g);
  });
}

Var weighted_channel_sum(const Var& x, const Tensor& weights) {
  const Dims d = spatial_dims(x.shape(), "weighted_channel_sum");
  if (weights.size() != static_cast<std::size_t>(d.c)) {
    throw ShapeError("weighted_channel_sum: weight count mismatch");
  }
  const std::size_t plane = d.plane();
  Tensor out(make_spatial_shape(x.shape(), 1, d.h, d.w));
  for (int b = 0; b < d.batch; ++b)
    for (int c = 0; c < d.c; ++c) {
      const double* src = x.value().data() + b * d.item() + c * plane;
      double* dst = out.data() + b * plane;
      const double wc = weights[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < plane; ++i) dst[i] += wc * src[i];
    }
  return make_result(std::move(out), {x}, [d, plane, weights](Node& n) {
    Tensor g(n.inputs[0]->value.shape());
    for (int b = 0; b < d.batch; ++b)
      for (int c = 0; c < d.c; ++c) {
        double* dst = g.data() + b * d.item() + c * plane;
        const double* src = n.grad.data() + b * plane;
        const double wc = weights[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < plane; ++i) dst[i] = wc * src[i];
      }
    n.inputs[0]->accumulate(g);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Dims da = spatial_dims(a.shape(), "concat_channels");
  const Dims db = spatial_dims(b.shape(), "concat_channels");
  if (da.batch != db.batch || da.h != db.h || da.w != db.w || a.value().rank() != b.value().rank()) {
    throw ShapeError(fmt::format("concat_channels: {} with {}", shape_str(a.shape()),
                                 shape_str(b.shape())));
  }
  const int c = da.c + db.c;
  Tensor out(make_spatial_shape(a.shape(), c, da.h, da.w));
  for (int bi = 0; bi < da.batch; ++bi) {
    double* dst = out.data() + static_cast<std::size_t>(bi) * c * da.plane();
    std::copy_n(a.value().data() + bi * da.item(), da.item(), dst);
    std::copy_n(b.value().data() + bi * db.item(), db.item(), dst + da.item());
  }
  return make_result(std::move(out), {a, b}, [da, db, c](Node& n) {
    for (int which = 0; which < 2; ++which) {
      Node& in = *n.inputs[static_cast<std::size_t>(which)];
      if (!in.requires_grad) continue;
      const Dims& di = which == 0 ? da : db;
      const std::size_t offset = which == 0 ? 0 : da.item();
      Tensor g(in.value.shape());
      for (int bi = 0; bi < da.batch; ++bi) {
        const double* src = n.grad.data() + static_cast<std::size_t>(bi) * c * da.plane() + offset;
        std::copy_n(src, di.item(), g.data() + bi * di.item());
      }
      in.accumulate(g);
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Dims d = spatial_dims(x.shape(), "global_avg_pool");
  Shape out_shape = x.value().rank() == 4 ? Shape{d.batch, d.c} : Shape{d.c};
  Tensor out(out_shape);
  const std::size_t plane = d.plane();
  for (std::size_t p = 0; p < out.size(); ++p) {
    const double* src = x.value().data() + p * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    out[p] = acc / static_cast<double>(plane);
  }
  return make_result(std::move(out), {x}, [plane](Node& n) {
    Tensor g(n.inputs[0]->value.shape());
    for (std::size_t p = 0; p < n.grad.size(); ++p) {
      const double v = n.grad[p] / static_cast<double>(plane);
      std::fill_n(g.data() + p * plane, plane, v);
    }
    n.inputs[0]->accumulate(g);
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
               bool training) {
  const Dims d = spatial_dims(x.shape(), "batch_norm");
  const std::size_t plane = d.plane();
  const std::size_t count = plane * d.batch;
  if (state.running_mean.empty()) {
    state.running_mean = Tensor({d.c}, 0.0);
    state.running_var = Tensor({d.c}, 1.0);
  }
  std::vector<double> mu(static_cast<std::size_t>(d.c));
  std::vector<double> inv(static_cast<std::size_t>(d.c));
  const bool batch_stats = training && count > 1;
  for (int c = 0; c < d.c; ++c) {
    double m = state.running_mean[static_cast<std::size_t>(c)];
    double v = state.running_var[static_cast<std::size_t>(c)];
    if (batch_stats) {
      double s = 0.0;
      double ss = 0.0;
      for (int b = 0; b < d.batch; ++b) {
        const double* src = x.value().data() + b * d.item() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          s += src[i];
          ss += src[i] * src[i];
        }
      }
      m = s / static_cast<double>(count);
      v = std::max(ss / static_cast<double>(count) - m * m, 0.0);
      const double unbiased = v * static_cast<double>(count) / static_cast<double>(count - 1);
      auto& rm = state.running_mean[static_cast<std::size_t>(c)];
      auto& rv = state.running_var[static_cast<std::size_t>(c)];
      rm = (1 - state.momentum) * rm + state.momentum * m;
      rv = (1 - state.momentum) * rv + state.momentum * unbiased;
    }
    mu[static_cast<std::size_t>(c)] = m;
    inv[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(v + state.eps);
  }
  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (int b = 0; b < d.batch; ++b)
    for (int c = 0; c < d.c; ++c) {
      const std::size_t off = b * d.item() + c * plane;
      const double gm = gamma.value()[static_cast<std::size_t>(c)];
      const double bt = beta.value()[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x.value()[off + i] - mu[static_cast<std::size_t>(c)]) * inv[static_cast<std::size_t>(c)];
        xhat[off + i] = xh;
        out[off + i] = gm * xh + bt;
      }
    }
  return make_result(std::move(out), {x, gamma, beta},
                     [d, plane, count, batch_stats, inv = std::move(inv),
                      xhat = std::move(xhat)](Node& n) {
    Node& xn = *n.inputs[0];
    Node& gn = *n.inputs[1];
    Node& bn = *n.inputs[2];
    Tensor gg({d.c});
    Tensor gb({d.c});
    for (int b = 0; b < d.batch; ++b)
      for (int c = 0; c < d.c; ++c) {
        const std::size_t off = b * d.item() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          gg[static_cast<std::size_t>(c)] += n.grad[off + i] * xhat[off + i];
          gb[static_cast<std::size_t>(c)] += n.grad[off + i];
        }
      }
    if (xn.requires_grad) {
      Tensor gx(xn.value.shape());
      for (int b = 0; b < d.batch; ++b)
        for (int c = 0; c < d.c; ++c) {
          const std::size_t off = b * d.item() + c * plane;
          const double k = gn.value[static_cast<std::size_t>(c)] * inv[static_cast<std::size_t>(c)];
          for (std::size_t i = 0; i < plane; ++i) {
            if (batch_stats) {
              const double m = static_cast<double>(count);
              gx[off + i] = k / m *
                            (m * n.grad[off + i] - gb[static_cast<std::size_t>(c)] -
                             xhat[off + i] * gg[static_cast<std::size_t>(c)]);
            } else {
              gx[off + i] = k * n.grad[off + i];
            }
          }
        }
      xn.accumulate(gx);
    }
    if (gn.requires_grad) gn.accumulate(gg);
    if (bn.requires_grad) bn.accumulate(gb);
  });
}

}  // namespace sam::nn
