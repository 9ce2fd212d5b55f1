#pragma once

#include <cstddef>
#include <optional>

#include "i2v/tensor.hpp"

namespace i2v::attention {

// Frozen spatial self-attention projections, all [d, d].
struct SelfAttentionParams {
  Tensor w_q, w_k, w_v, w_o;

  std::size_t width() const { return w_q.dim(0); }
};

// Frozen condition attention. wc_q is [d, d]; wc_k and wc_v map the
// condition width to the channel width, [d_cond, d].
struct CrossAttentionParams {
  Tensor wc_q, wc_k, wc_v;
};

/// The trainable cross-frame branch attached to one self-attention layer.
/// wp_q queries frame 1's keys; wp_o projects the result back into the
/// residual stream.
struct AdapterParams {
  Tensor wp_q, wp_o;
};

// Frame-axis attention with a pre-norm; sinusoidal positions are added to the
// normalized input before the Q/K/V projections.
struct TemporalAttentionParams {
  Tensor w_q, w_k, w_v, w_o;  // [d, d]
  Tensor norm_gamma, norm_beta;  // [d]
  Tensor positions;  // [max_frames, d]
  std::size_t groups = 4;
  bool use_positional_encoding = true;
};

// Standard transformer sinusoid table, [length, width].
Tensor sinusoidal_table(std::size_t length, std::size_t width);

/// softmax(Q K^T / sqrt(d)) V with Q, K, V projected from x.
///
/// x is [tokens, d] or [batch, tokens, d]. The output projection W_O is not
/// applied here; fused_block_output applies it.
Tensor self_attention(const Tensor& x, const SelfAttentionParams& p);

// x: [..., tokens, d]; cond: [cond_tokens, d_cond].
Tensor cross_attention(const Tensor& x, const Tensor& cond, const CrossAttentionParams& p);

/// Cross-frame attention: queries from frame i through wp_q, keys and values
/// from frame 1 through the frozen W_K and W_V.
Tensor adapter_attention(const Tensor& x_i, const Tensor& x_1, const SelfAttentionParams& sa,
                         const AdapterParams& ad);

// self_attention(x_i) W_O + adapter_attention(x_i, x_1) Wp_O
Tensor fused_block_output(const Tensor& x_i, const Tensor& x_1, const SelfAttentionParams& sa,
                          const AdapterParams& ad);

/// Batched form over whole clips. x is [clips, frames, tokens, d]; frame 0 of
/// each clip is the reference. Without an adapter this is plain
/// self-attention followed by W_O, with no extra terms.
Tensor video_self_attention(const Tensor& x, const SelfAttentionParams& sa,
                            const std::optional<AdapterParams>& ad);

/// x is [frames, tokens, d] or [clips, frames, tokens, d]. Every spatial token
/// attends across frames independently; the result is added to x.
Tensor temporal_attention(const Tensor& x, const TemporalAttentionParams& p);

// wp_q copies sa.w_q, wp_o is zero; both require gradients.
AdapterParams init_adapter(const SelfAttentionParams& sa);

// Group norm over the channel (last) axis of token-major features [n, tokens, d].
Tensor group_norm_tokens(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta);

}  // namespace i2v::attention
