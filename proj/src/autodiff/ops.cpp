#include "micronas/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "micronas/errors.hpp"

namespace micronas::ad {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

bool wants_grad(const std::shared_ptr<Node>& n) { return n->requires_grad; }

struct ConvGeometry {
  std::int64_t out = 0;
  std::int64_t pad_before = 0;
};

ConvGeometry conv_geometry(std::int64_t in, std::int64_t k, std::int64_t stride, Padding padding) {
  ConvGeometry g;
  if (padding == Padding::Same) {
    g.out = (in + stride - 1) / stride;
    std::int64_t total = std::max<std::int64_t>((g.out - 1) * stride + k - in, 0);
    g.pad_before = total / 2;
  } else {
    if (k > in) throw ShapeError("kernel/window larger than input under valid padding");
    g.out = (in - k) / stride + 1;
  }
  return g;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!wants_grad(p)) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    double sign = 1.0;
    for (auto& p : self.parents) {
      if (wants_grad(p)) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
      }
      sign = -1.0;
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa)) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (wants_grad(pb)) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_constant(const Tensor& a, double c) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v += c;
  return make_result("add_constant", a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("mul_scalar: multiplier must have one element");
  const double sv = s.item();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= sv;
  return make_result("mul_scalar", a.shape(), std::move(out), {a, s}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& ps = self.parents[1];
    if (wants_grad(pa)) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ps->value[0];
    }
    if (wants_grad(ps)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa->value[i];
      ps->accumulate(0, acc);
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result("sum", Shape{1}, {s}, {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor dot_constant(const Tensor& a, std::span<const double> coeffs) {
  if (static_cast<std::int64_t>(coeffs.size()) != a.numel()) {
    throw ShapeError("dot_constant: coefficient count does not match tensor size");
  }
  std::vector<double> c(coeffs.begin(), coeffs.end());
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += a.values()[i] * c[i];
  return make_result("dot_constant", Shape{1}, {s}, {a}, [c = std::move(c)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * c[i];
  });
}

Tensor maximum(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw ShapeError("maximum of an empty list");
  std::size_t best = 0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].numel() != 1) throw ShapeError("maximum expects single-element tensors");
    if (scalars[i].item() > scalars[best].item()) best = i;
  }
  return make_result("maximum", Shape{1}, {scalars[best].item()}, scalars, [best](Node& self) {
    auto& p = self.parents[best];
    if (wants_grad(p)) p->accumulate(0, self.grad[0]);
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result("relu", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p->value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              Padding padding, int groups) {
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (is.rank() != 4) throw ShapeError("conv2d: input must be NHWC, got " + is.str());
  if (ws.rank() != 4) throw ShapeError("conv2d: weight must be [kh,kw,cin/groups,cout]");
  if (stride <= 0) throw ShapeError("conv2d: stride must be positive");
  if (groups <= 0) throw ShapeError("conv2d: groups must be positive");
  const std::int64_t n = is.dim(0), h = is.dim(1), w = is.dim(2), cin = is.dim(3);
  const std::int64_t kh = ws.dim(0), kw = ws.dim(1), cig = ws.dim(2), cout = ws.dim(3);
  if (cin % groups != 0) throw ShapeError("conv2d: groups do not divide input channels");
  if (cout % groups != 0) throw ShapeError("conv2d: groups do not divide output channels");
  if (cig != cin / groups) {
    throw ShapeError("conv2d: weight expects " + std::to_string(cig * groups) +
                     " input channels, input has " + std::to_string(cin));
  }
  if (bias.numel() != cout) throw ShapeError("conv2d: bias length must equal output channels");
  const auto gh = conv_geometry(h, kh, stride, padding);
  const auto gw = conv_geometry(w, kw, stride, padding);
  const std::int64_t oh = gh.out, ow = gw.out, cog = cout / groups;

  auto x = input.values();
  auto wt = weight.values();
  auto b = bias.values();
  std::vector<double> out(static_cast<std::size_t>(n * oh * ow * cout));
  for (std::int64_t bi = 0; bi < n; ++bi) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xo = 0; xo < ow; ++xo) {
        double* o = &out[static_cast<std::size_t>(((bi * oh + y) * ow + xo) * cout)];
        for (std::int64_t c = 0; c < cout; ++c) o[c] = b[c];
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          const std::int64_t iy = y * stride + ky - gh.pad_before;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const std::int64_t ix = xo * stride + kx - gw.pad_before;
            if (ix < 0 || ix >= w) continue;
            const double* xi = &x[static_cast<std::size_t>(((bi * h + iy) * w + ix) * cin)];
            const double* wk = &wt[static_cast<std::size_t>((ky * kw + kx) * cig * cout)];
            for (std::int64_t g = 0; g < groups; ++g) {
              for (std::int64_t ci = 0; ci < cig; ++ci) {
                const double xv = xi[g * cig + ci];
                if (xv == 0.0) continue;
                const double* wr = wk + ci * cout + g * cog;
                double* og = o + g * cog;
                for (std::int64_t co = 0; co < cog; ++co) og[co] += xv * wr[co];
              }
            }
          }
        }
      }
    }
  }
  Shape out_shape({n, oh, ow, cout});
  return make_result(
      "conv2d", out_shape, std::move(out), {input, weight, bias},
      [=](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        const bool gx = wants_grad(px), gwt = wants_grad(pw), gb = wants_grad(pb);
        std::vector<double>* dx = gx ? &px->grad_buffer() : nullptr;
        std::vector<double>* dw = gwt ? &pw->grad_buffer() : nullptr;
        std::vector<double>* db = gb ? &pb->grad_buffer() : nullptr;
        const auto& xv = px->value;
        const auto& wv = pw->value;
        for (std::int64_t bi = 0; bi < n; ++bi) {
          for (std::int64_t y = 0; y < oh; ++y) {
            for (std::int64_t xo = 0; xo < ow; ++xo) {
              const double* go = &self.grad[static_cast<std::size_t>(((bi * oh + y) * ow + xo) * cout)];
              if (db) {
                for (std::int64_t c = 0; c < cout; ++c) (*db)[c] += go[c];
              }
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t iy = y * stride + ky - gh.pad_before;
                if (iy < 0 || iy >= h) continue;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const std::int64_t ix = xo * stride + kx - gw.pad_before;
                  if (ix < 0 || ix >= w) continue;
                  const std::size_t xbase = static_cast<std::size_t>(((bi * h + iy) * w + ix) * cin);
                  const std::size_t wbase = static_cast<std::size_t>((ky * kw + kx) * cig * cout);
                  for (std::int64_t g = 0; g < groups; ++g) {
                    for (std::int64_t ci = 0; ci < cig; ++ci) {
                      const std::size_t xi = xbase + g * cig + ci;
                      const std::size_t wr = wbase + ci * cout + g * cog;
                      const double* gog = go + g * cog;
                      if (dx) {
                        double acc = 0.0;
                        for (std::int64_t co = 0; co < cog; ++co) acc += gog[co] * wv[wr + co];
                        (*dx)[xi] += acc;
                      }
                      if (dw) {
                        const double xval = xv[xi];
                        if (xval == 0.0) continue;
                        for (std::int64_t co = 0; co < cog; ++co) (*dw)[wr + co] += xval * gog[co];
                      }
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (is.rank() < 2) throw ShapeError("dense: input must be [N, ...]");
  if (ws.rank() != 2) throw ShapeError("dense: weight must be [in, out]");
  const std::int64_t n = is.dim(0);
  const std::int64_t f = input.numel() / n;
  const std::int64_t o = ws.dim(1);
  if (ws.dim(0) != f) {
    throw ShapeError("dense: input has " + std::to_string(f) + " features, weight expects " +
                     std::to_string(ws.dim(0)));
  }
  if (bias.numel() != o) throw ShapeError("dense: bias length must equal output features");
  auto x = input.values();
  auto wv = weight.values();
  auto b = bias.values();
  std::vector<double> out(static_cast<std::size_t>(n * o));
  for (std::int64_t i = 0; i < n; ++i) {
    double* row = &out[static_cast<std::size_t>(i * o)];
    for (std::int64_t j = 0; j < o; ++j) row[j] = b[j];
    for (std::int64_t k = 0; k < f; ++k) {
      const double xv = x[static_cast<std::size_t>(i * f + k)];
      const double* wr = &wv[static_cast<std::size_t>(k * o)];
      for (std::int64_t j = 0; j < o; ++j) row[j] += xv * wr[j];
    }
  }
  return make_result("dense", Shape({n, o}), std::move(out), {input, weight, bias},
                     [n, f, o](Node& self) {
                       auto& px = self.parents[0];
                       auto& pw = self.parents[1];
                       auto& pb = self.parents[2];
                       if (wants_grad(pb)) {
                         auto& db = pb->grad_buffer();
                         for (std::int64_t i = 0; i < n; ++i)
                           for (std::int64_t j = 0; j < o; ++j) db[j] += self.grad[i * o + j];
                       }
                       if (wants_grad(px)) {
                         auto& dx = px->grad_buffer();
                         for (std::int64_t i = 0; i < n; ++i)
                           for (std::int64_t k = 0; k < f; ++k) {
                             double acc = 0.0;
                             for (std::int64_t j = 0; j < o; ++j)
                               acc += self.grad[i * o + j] * pw->value[k * o + j];
                             dx[i * f + k] += acc;
                           }
                       }
                       if (wants_grad(pw)) {
                         auto& dw = pw->grad_buffer();
                         for (std::int64_t i = 0; i < n; ++i)
                           for (std::int64_t k = 0; k < f; ++k) {
                             const double xv = px->value[i * f + k];
                             for (std::int64_t j = 0; j < o; ++j) dw[k * o + j] += xv * self.grad[i * o + j];
                           }
                       }
                     });
}

Tensor avg_pool2d(const Tensor& input, int window_h, int window_w, int stride, Padding padding) {
  const auto& is = input.shape();
  if (is.rank() != 4) throw ShapeError("avg_pool2d: input must be NHWC");
  if (window_h <= 0 || window_w <= 0 || stride <= 0) {
    throw ShapeError("avg_pool2d: window and stride must be positive");
  }
  const std::int64_t n = is.dim(0), h = is.dim(1), w = is.dim(2), c = is.dim(3);
  if (padding == Padding::Valid && (window_h > h || window_w > w)) {
    throw ShapeError("avg_pool2d: window " + std::to_string(window_h) + "x" +
                     std::to_string(window_w) + " larger than input " + is.str());
  }
  const auto gh = conv_geometry(h, window_h, stride, padding);
  const auto gw = conv_geometry(w, window_w, stride, padding);
  const std::int64_t oh = gh.out, ow = gw.out;
  auto x = input.values();
  std::vector<double> out(static_cast<std::size_t>(n * oh * ow * c), 0.0);
  // taps per output position, shared by forward and backward
  std::vector<double> inv_count(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y) {
    for (std::int64_t xo = 0; xo < ow; ++xo) {
      std::int64_t cnt = 0;
      for (std::int64_t ky = 0; ky < window_h; ++ky) {
        const std::int64_t iy = y * stride + ky - gh.pad_before;
        if (iy < 0 || iy >= h) continue;
        for (std::int64_t kx = 0; kx < window_w; ++kx) {
          const std::int64_t ix = xo * stride + kx - gw.pad_before;
          if (ix >= 0 && ix < w) ++cnt;
        }
      }
      inv_count[y * ow + xo] = 1.0 / static_cast<double>(cnt);
    }
  }
  auto visit = [=](auto&& fn) {
    for (std::int64_t bi = 0; bi < n; ++bi)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xo = 0; xo < ow; ++xo)
          for (std::int64_t ky = 0; ky < window_h; ++ky) {
            const std::int64_t iy = y * stride + ky - gh.pad_before;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t kx = 0; kx < window_w; ++kx) {
              const std::int64_t ix = xo * stride + kx - gw.pad_before;
              if (ix < 0 || ix >= w) continue;
              fn(static_cast<std::size_t>(((bi * oh + y) * ow + xo) * c),
                 static_cast<std::size_t>(((bi * h + iy) * w + ix) * c),
                 inv_count[y * ow + xo]);
            }
          }
  };
  visit([&](std::size_t o, std::size_t i, double k) {
    for (std::int64_t ch = 0; ch < c; ++ch) out[o + ch] += x[i + ch] * k;
  });
  return make_result("avg_pool2d", Shape({n, oh, ow, c}), std::move(out), {input},
                     [visit, c](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       visit([&](std::size_t o, std::size_t i, double k) {
                         for (std::int64_t ch = 0; ch < c; ++ch) g[i + ch] += self.grad[o + ch] * k;
                       });
                     });
}

Tensor global_avg_pool(const Tensor& input) {
  const auto& is = input.shape();
  if (is.rank() != 4) throw ShapeError("global_avg_pool: input must be NHWC");
  return avg_pool2d(input, static_cast<int>(is.dim(1)), static_cast<int>(is.dim(2)), 1,
                    Padding::Valid);
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const auto& s = logits.shape();
  if (s.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [N, K]");
  const std::int64_t n = s.dim(0), k = s.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: label count does not match batch");
  }
  for (int l : labels) {
    if (l < 0 || l >= k) throw ShapeError("softmax_cross_entropy: label " + std::to_string(l) + " out of range");
  }
  auto z = logits.values();
  std::vector<double> probs(static_cast<std::size_t>(n * k));
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = &z[static_cast<std::size_t>(i * k)];
    const double m = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - m);
    const double log_denom = std::log(denom);
    for (std::int64_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - m - log_denom);
    loss += -(row[labels[i]] - m - log_denom);
  }
  loss /= static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result("softmax_cross_entropy", Shape{1}, {loss}, {logits},
                     [probs = std::move(probs), lab = std::move(lab), n, k](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       const double scale = self.grad[0] / static_cast<double>(n);
                       for (std::int64_t i = 0; i < n; ++i)
                         for (std::int64_t j = 0; j < k; ++j) {
                           const double target = (j == lab[i]) ? 1.0 : 0.0;
                           g[i * k + j] += scale * (probs[i * k + j] - target);
                         }
                     });
}

Tensor softmax(const Tensor& v, double temperature) {
  if (!(temperature > 0.0)) throw NumericError("softmax: temperature must be positive");
  if (v.shape().rank() != 1) throw ShapeError("softmax: expects a 1-D tensor");
  auto x = v.values();
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp((x[i] - m) / temperature);
    denom += out[i];
  }
  for (auto& o : out) o /= denom;
  return make_result("softmax", v.shape(), out, {v}, [temperature](Node& self) {
    const auto& p = self.value;
    double dotp = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dotp += self.grad[i] * p[i];
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < p.size(); ++i) g[i] += p[i] * (self.grad[i] - dotp) / temperature;
  });
}

Tensor weighted_sum(const std::vector<Tensor>& inputs, const Tensor& weights) {
  if (inputs.empty()) throw ShapeError("weighted_sum: no inputs");
  if (weights.numel() != static_cast<std::int64_t>(inputs.size())) {
    throw ShapeError("weighted_sum: weight count does not match input count");
  }
  for (auto& t : inputs) require_same_shape("weighted_sum", inputs[0], t);
  auto wv = weights.values();
  std::vector<double> out(static_cast<std::size_t>(inputs[0].numel()), 0.0);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto v = inputs[k].values();
    const double wk = wv[k];
    if (wk == 0.0) continue;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wk * v[i];
  }
  std::vector<Tensor> parents(inputs);
  parents.push_back(weights);
  const std::size_t kk = inputs.size();
  return make_result("weighted_sum", inputs[0].shape(), std::move(out), parents, [kk](Node& self) {
    auto& pw = self.parents[kk];
    for (std::size_t k = 0; k < kk; ++k) {
      auto& pk = self.parents[k];
      if (wants_grad(pk)) {
        const double wk = pw->value[k];
        auto& g = pk->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += wk * self.grad[i];
      }
      if (wants_grad(pw)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pk->value[i];
        pw->accumulate(k, acc);
      }
    }
  });
}

Tensor channel_mask(const Tensor& input, std::int64_t active_channels) {
  const auto& s = input.shape();
  const std::int64_t c = s.dims().back();
  if (active_channels <= 0 || active_channels > c) {
    throw ShapeError("channel_mask: active channels " + std::to_string(active_channels) +
                     " outside (0, " + std::to_string(c) + "]");
  }
  std::vector<double> out(input.values().begin(), input.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (static_cast<std::int64_t>(i % c) >= active_channels) out[i] = 0.0;
  }
  return make_result("channel_mask", s, std::move(out), {input}, [c, active_channels](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (static_cast<std::int64_t>(i % c) < active_channels) g[i] += self.grad[i];
    }
  });
}

Tensor channel_scale(const Tensor& input, const Tensor& gamma) {
  const std::int64_t c = input.shape().dims().back();
  if (gamma.numel() != c) throw ShapeError("channel_scale: gamma length must equal channel count");
  auto x = input.values();
  auto gv = gamma.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * gv[i % c];
  return make_result("channel_scale", input.shape(), std::move(out), {input, gamma}, [c](Node& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    if (wants_grad(px)) {
      auto& g = px->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pg->value[i % c];
    }
    if (wants_grad(pg)) {
      auto& g = pg->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % c] += self.grad[i] * px->value[i];
    }
  });
}

Tensor fake_quant(const Tensor& input, int bits, const Tensor& range_min, const Tensor& range_max,
                  QuantMode mode) {
  if (bits != 4 && bits != 8) throw ShapeError("fake_quant: bits must be 4 or 8");
  if (range_min.numel() != 1 || range_max.numel() != 1) {
    throw ShapeError("fake_quant: range endpoints must be scalars");
  }
  const double rmin = range_min.item();
  const double rmax = range_max.item();
  if (!(rmin < rmax)) throw NumericError("fake_quant: degenerate range [" + std::to_string(rmin) +
                                         ", " + std::to_string(rmax) + "]");
  double lo, hi, step, offset;
  if (mode == QuantMode::Symmetric) {
    if (std::abs(rmin + rmax) > 1e-12 * std::max(1.0, rmax)) {
      throw NumericError("fake_quant: symmetric mode needs range_min == -range_max");
    }
    const double levels = static_cast<double>((1 << (bits - 1)) - 1);
    step = rmax / levels;
    lo = -rmax;
    hi = rmax;
    offset = 0.0;
  } else {
    const double levels = static_cast<double>((1 << bits) - 1);
    step = (rmax - rmin) / levels;
    const double zero_point = std::clamp(std::nearbyint(-rmin / step), 0.0, levels);
    lo = -zero_point * step;
    hi = lo + levels * step;
    offset = lo;
  }
  auto x = input.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = std::clamp(x[i], lo, hi);
    out[i] = std::nearbyint((c - offset) / step) * step + offset;
  }
  return make_result("fake_quant", input.shape(), std::move(out), {input, range_min, range_max},
                     [lo, hi](Node& self) {
                       auto& px = self.parents[0];
                       auto& pmin = self.parents[1];
                       auto& pmax = self.parents[2];
                       double gmin = 0.0, gmax = 0.0;
                       std::vector<double>* dx = wants_grad(px) ? &px->grad_buffer() : nullptr;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         const double v = px->value[i];
                         if (v < lo) {
                           gmin += self.grad[i];
                         } else if (v > hi) {
                           gmax += self.grad[i];
                         } else if (dx) {
                           (*dx)[i] += self.grad[i];
                         }
                       }
                       if (wants_grad(pmin)) pmin->accumulate(0, gmin);
                       if (wants_grad(pmax)) pmax->accumulate(0, gmax);
                     });
}

}  // namespace micronas::ad
