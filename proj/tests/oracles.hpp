// Independent reference implementations used by the tests. None of these
// call into the library's cost or kernel code.
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "micronas/supernet/supernet.hpp"

namespace oracle {

// Plain loop-nest NHWC convolution, TF-style same padding.
inline std::vector<double> conv2d(const std::vector<double>& x, int N, int H, int W, int C, const std::vector<double>& w,
                                  int KH, int KW, int CO, const std::vector<double>& b, int stride, bool same,
                                  int groups, int& OH, int& OW) {
  int pad_t = 0, pad_l = 0;
  if (same) {
    OH = (H + stride - 1) / stride;
    OW = (W + stride - 1) / stride;
    pad_t = std::max(0, (OH - 1) * stride + KH - H) / 2;
    pad_l = std::max(0, (OW - 1) * stride + KW - W) / 2;
  } else {
    OH = (H - KH) / stride + 1;
    OW = (W - KW) / stride + 1;
  }
  const int cig = C / groups, cog = CO / groups;
  std::vector<double> y(static_cast<std::size_t>(N) * OH * OW * CO, 0.0);
  for (int n = 0; n < N; ++n)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow)
        for (int co = 0; co < CO; ++co) {
          const int g = co / cog;
          double acc = b[co];
          for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw)
              for (int ci = 0; ci < cig; ++ci) {
                const int ih = oh * stride + kh - pad_t, iw = ow * stride + kw - pad_l;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x[((static_cast<std::size_t>(n) * H + ih) * W + iw) * C + g * cig + ci] *
                       w[((static_cast<std::size_t>(kh) * KW + kw) * cig + ci) * CO + co];
              }
          y[((static_cast<std::size_t>(n) * OH + oh) * OW + ow) * CO + co] = acc;
        }
  return y;
}

inline std::vector<double> avg_pool(const std::vector<double>& x, int N, int H, int W, int C, int KH, int KW,
                                    int stride, bool same, int& OH, int& OW) {
  int pad_t = 0, pad_l = 0;
  if (same) {
    OH = (H + stride - 1) / stride;
    OW = (W + stride - 1) / stride;
    pad_t = std::max(0, (OH - 1) * stride + KH - H) / 2;
    pad_l = std::max(0, (OW - 1) * stride + KW - W) / 2;
  } else {
    OH = (H - KH) / stride + 1;
    OW = (W - KW) / stride + 1;
  }
  std::vector<double> y(static_cast<std::size_t>(N) * OH * OW * C, 0.0);
  for (int n = 0; n < N; ++n)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow)
        for (int c = 0; c < C; ++c) {
          double acc = 0.0;
          int cnt = 0;
          for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
              const int ih = oh * stride + kh - pad_t, iw = ow * stride + kw - pad_l;
              if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
              acc += x[((static_cast<std::size_t>(n) * H + ih) * W + iw) * C + c];
              ++cnt;
            }
          y[((static_cast<std::size_t>(n) * OH + oh) * OW + ow) * C + c] = acc / cnt;
        }
  return y;
}

struct Costs {
  std::int64_t ops = 0;
  std::int64_t params = 0;
  std::int64_t param_bytes = 0;
  std::int64_t peak_working = 0;
  std::vector<std::int64_t> node_working;
};

// Walks the layer list of a decision-free network with its own shape
// propagation and per-layer formulas. Biases at 4 bytes, weights packed.
inline Costs layer_costs(const micronas::Supernet& net, int bits = 8) {
  using micronas::LayerKind;
  struct S {
    std::int64_t h, w, c;
  };
  auto packed = [bits](std::int64_t n) { return (n * bits + 7) / 8; };
  auto el = [](const S& s) { return s.h * s.w * s.c; };
  auto spatial = [](std::int64_t in, int k, int s, bool same) { return same ? (in + s - 1) / s : (in - k) / s + 1; };
  Costs r;
  auto node = [&](std::vector<std::int64_t> ins, std::int64_t out) {
    std::int64_t t = packed(out);
    for (auto i : ins) t += packed(i);
    r.node_working.push_back(t);
    r.peak_working = std::max(r.peak_working, t);
  };
  auto weights = [&](std::int64_t wcount, std::int64_t bcount) {
    r.params += wcount + bcount;
    r.param_bytes += packed(wcount) + 4 * bcount;
  };
  const auto& in = net.input_shape();
  S cur{in[0], in[1], in[2]};
  const S input = cur;
  std::vector<S> outs;
  for (const auto& L : net.layers()) {
    const bool same = L.padding == micronas::ad::Padding::Same;
    const std::int64_t kk = static_cast<std::int64_t>(L.kernel_h) * L.kernel_w;
    switch (L.kind) {
      case LayerKind::Conv2D: {
        S o{spatial(cur.h, L.kernel_h, L.stride, same), spatial(cur.w, L.kernel_w, L.stride, same), L.channels.fixed};
        r.ops += 2 * o.h * o.w * o.c * kk * cur.c;
        weights(kk * cur.c * o.c, o.c);
        node({el(cur)}, el(o));
        cur = o;
        break;
      }
      case LayerKind::DepthwiseSeparableBlock: {
        S m{spatial(cur.h, L.kernel_h, L.stride, same), spatial(cur.w, L.kernel_w, L.stride, same), cur.c};
        r.ops += 2 * m.h * m.w * m.c * kk;
        weights(kk * cur.c, cur.c);
        node({el(cur)}, el(m));
        S o{m.h, m.w, L.channels.fixed};
        r.ops += 2 * o.h * o.w * o.c * m.c;
        weights(m.c * o.c, o.c);
        node({el(m)}, el(o));
        cur = o;
        break;
      }
      case LayerKind::InvertedBottleneckBlock: {
        const std::int64_t e = L.expansion.fixed;
        S a{cur.h, cur.w, e};
        r.ops += 2 * a.h * a.w * e * cur.c;
        weights(cur.c * e, e);
        node({el(cur)}, el(a));
        S m{spatial(cur.h, L.kernel_h, L.stride, same), spatial(cur.w, L.kernel_w, L.stride, same), e};
        r.ops += 2 * m.h * m.w * e * kk;
        weights(kk * e, e);
        node({el(a)}, el(m));
        S o{m.h, m.w, L.channels.fixed};
        r.ops += 2 * o.h * o.w * o.c * e;
        weights(e * o.c, o.c);
        node({el(m)}, el(o));
        cur = o;
        break;
      }
      case LayerKind::AvgPool: {
        S o{spatial(cur.h, L.kernel_h, L.stride, same), spatial(cur.w, L.kernel_w, L.stride, same), cur.c};
        node({el(cur)}, el(o));
        cur = o;
        break;
      }
      case LayerKind::GlobalAvgPool: {
        S o{1, 1, cur.c};
        node({el(cur)}, el(o));
        cur = o;
        break;
      }
      case LayerKind::AddSkip: {
        const S other = L.from < 0 ? input : outs.at(static_cast<std::size_t>(L.from));
        node({el(cur), el(other)}, el(cur));
        break;
      }
      case LayerKind::FullyConnected: {
        S o{1, 1, L.channels.fixed};
        r.ops += 2 * el(cur) * o.c;
        weights(el(cur) * o.c, o.c);
        node({el(cur)}, o.c);
        cur = o;
        break;
      }
      case LayerKind::Input:
        break;
    }
    outs.push_back(cur);
  }
  return r;
}

// Exhaustive pair counting AUC.
inline double auc_pairs(const std::vector<double>& s, const std::vector<int>& f) {
  double credit = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (f[i] == 1 && f[j] == 0) {
        pairs += 1;
        credit += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return credit / pairs;
}

// Closed-form simple regression via the normal equations.
inline void normal_equations(const std::vector<double>& x, const std::vector<double>& y, double& slope,
                             double& intercept, double& r2) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  intercept = (sy - slope * sx) / n;
  const double my = sy / n;
  double tot = 0, res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    tot += (y[i] - my) * (y[i] - my);
    const double e = y[i] - slope * x[i] - intercept;
    res += e * e;
  }
  r2 = 1.0 - res / tot;
}

}  // namespace oracle
