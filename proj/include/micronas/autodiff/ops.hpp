#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "micronas/autodiff/tensor.hpp"

namespace micronas::ad {

enum class Padding { Same, Valid };

// Elementwise arithmetic. Shapes must match exactly unless noted.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_constant(const Tensor& a, double c);
/// a * s where s is a single-element tensor.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
Tensor neg(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// <a, c> for a constant coefficient vector of matching length.
Tensor dot_constant(const Tensor& a, std::span<const double> coeffs);
/// Maximum over single-element tensors; the gradient goes to the first maximal one.
Tensor maximum(const std::vector<Tensor>& scalars);

Tensor relu(const Tensor& x);

/// NHWC convolution. weight is [kh, kw, C_in/groups, C_out], bias is [C_out].
/// Same padding follows the TF convention (extra padding at the end).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              Padding padding, int groups = 1);

/// Affine map over the flattened trailing dimensions: [N, ...] x [F, O] + [O].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Average pooling on NHWC. With Same padding each output averages only the
/// in-bounds taps.
Tensor avg_pool2d(const Tensor& input, int window_h, int window_w, int stride, Padding padding);
/// [N,H,W,C] -> [N,1,1,C]
Tensor global_avg_pool(const Tensor& input);

/// Mean cross-entropy of a [N, K] logit batch against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// softmax(v / temperature) over a 1-D tensor.
Tensor softmax(const Tensor& v, double temperature = 1.0);

/// sum_k weights[k] * inputs[k]; all inputs share one shape, weights is [K].
Tensor weighted_sum(const std::vector<Tensor>& inputs, const Tensor& weights);

/// Zeroes trailing channels (last dimension) at index >= active_channels.
Tensor channel_mask(const Tensor& input, std::int64_t active_channels);

/// Per-channel multiplier over the last dimension; gamma is [C].
Tensor channel_scale(const Tensor& input, const Tensor& gamma);

enum class QuantMode {
  Symmetric,   // signed narrow range [-(2^(b-1)-1), 2^(b-1)-1], zero maps to zero
  Asymmetric,  // 2^b levels with the zero point nudged onto the grid
};

/// Quantize-dequantize with round-half-to-even. The input gradient is the
/// straight-through estimate (pass inside the range, zero outside); the range
/// endpoints collect the gradient of values clamped to them.
Tensor fake_quant(const Tensor& input, int bits, const Tensor& range_min, const Tensor& range_max,
                  QuantMode mode = QuantMode::Asymmetric);

}  // namespace micronas::ad
