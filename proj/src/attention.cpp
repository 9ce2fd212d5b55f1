#include "i2v/attention.hpp"

#include <cmath>

#include "i2v/errors.hpp"

namespace i2v::attention {

namespace {

void require_square(const Tensor& w, std::size_t d, const char* name) {
  if (w.shape() != Shape{d, d}) {
    throw DimensionError(std::string(name) + " must be [" + std::to_string(d) + "x" +
                         std::to_string(d) + "], got " + shape_str(w.shape()));
  }
}

void require_width(const Tensor& x, std::size_t d, const char* op) {
  if (x.rank() < 2 || x.shape().back() != d) {
    throw DimensionError(std::string(op) + ": expected [..., tokens, " + std::to_string(d) + "], got " +
                         shape_str(x.shape()));
  }
}

// softmax(q k^T / sqrt(d)) v; k and v may be shared ([keys, d]) or batched.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  const Tensor scores = scale(matmul(q, transpose_last2(k)), inv_sqrt_d);
  return matmul(softmax_lastdim(scores), v);
}

void check_self(const SelfAttentionParams& p) {
  const std::size_t d = p.width();
  require_square(p.w_q, d, "W_Q");
  require_square(p.w_k, d, "W_K");
  require_square(p.w_v, d, "W_V");
  require_square(p.w_o, d, "W_O");
}

void check_adapter(const AdapterParams& ad, std::size_t d) {
  require_square(ad.wp_q, d, "Wp_Q");
  require_square(ad.wp_o, d, "Wp_O");
}

}  // namespace

Tensor sinusoidal_table(std::size_t length, std::size_t width) {
  std::vector<double> pe(length * width);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) * freq;
      pe[pos * width + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({length, width}, std::move(pe));
}

Tensor self_attention(const Tensor& x, const SelfAttentionParams& p) {
  check_self(p);
  require_width(x, p.width(), "self_attention");
  if (x.rank() > 3) throw DimensionError("self_attention: rank must be 2 or 3, got " + shape_str(x.shape()));
  return attend(matmul(x, p.w_q), matmul(x, p.w_k), matmul(x, p.w_v));
}

Tensor cross_attention(const Tensor& x, const Tensor& cond, const CrossAttentionParams& p) {
  const std::size_t d = p.wc_q.dim(0);
  require_square(p.wc_q, d, "Wc_Q");
  require_width(x, d, "cross_attention");
  if (cond.rank() != 2 || p.wc_k.rank() != 2 || cond.dim(1) != p.wc_k.dim(0) || p.wc_k.dim(1) != d ||
      p.wc_v.shape() != p.wc_k.shape()) {
    throw DimensionError("cross_attention: condition " + shape_str(cond.shape()) +
                         " incompatible with projections " + shape_str(p.wc_k.shape()));
  }
  return attend(matmul(x, p.wc_q), matmul(cond, p.wc_k), matmul(cond, p.wc_v));
}

Tensor adapter_attention(const Tensor& x_i, const Tensor& x_1, const SelfAttentionParams& sa,
                         const AdapterParams& ad) {
  check_self(sa);
  check_adapter(ad, sa.width());
  if (x_i.shape() != x_1.shape()) {
    throw DimensionError("adapter_attention: frame shapes " + shape_str(x_i.shape()) + " and " +
                         shape_str(x_1.shape()) + " differ");
  }
  require_width(x_i, sa.width(), "adapter_attention");
  return attend(matmul(x_i, ad.wp_q), matmul(x_1, sa.w_k), matmul(x_1, sa.w_v));
}

Tensor fused_block_output(const Tensor& x_i, const Tensor& x_1, const SelfAttentionParams& sa,
                          const AdapterParams& ad) {
  const Tensor base = matmul(self_attention(x_i, sa), sa.w_o);
  return add(base, matmul(adapter_attention(x_i, x_1, sa, ad), ad.wp_o));
}

Tensor video_self_attention(const Tensor& x, const SelfAttentionParams& sa,
                            const std::optional<AdapterParams>& ad) {
  check_self(sa);
  const std::size_t d = sa.width();
  if (x.rank() != 4 || x.dim(3) != d) {
    throw DimensionError("video_self_attention: expected [clips, frames, tokens, " + std::to_string(d) +
                         "], got " + shape_str(x.shape()));
  }
  const std::size_t clips = x.dim(0);
  const std::size_t frames = x.dim(1);
  const std::size_t tokens = x.dim(2);
  const Tensor flat = reshape(x, {clips * frames, tokens, d});
  const Tensor k = matmul(flat, sa.w_k);
  const Tensor v = matmul(flat, sa.w_v);
  Tensor out = matmul(attend(matmul(flat, sa.w_q), k, v), sa.w_o);
  if (ad) {
    check_adapter(*ad, d);
    // Keys and values of frame 0, shared by every frame of the clip.
    auto first = [&](const Tensor& t) {
      return reshape(slice(reshape(t, {clips, frames, tokens, d}), 1, 0, 1), {clips, tokens, d});
    };
    const Tensor q = reshape(matmul(flat, ad->wp_q), {clips, frames * tokens, d});
    const Tensor cross = reshape(attend(q, first(k), first(v)), {clips * frames, tokens, d});
    out = add(out, matmul(cross, ad->wp_o));
  }
  return reshape(out, x.shape());
}

Tensor group_norm_tokens(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() != 3) throw DimensionError("group_norm_tokens: expected [n, tokens, d], got " + shape_str(x.shape()));
  return permute(group_norm(permute(x, {0, 2, 1}), groups, gamma, beta), {0, 2, 1});
}

Tensor temporal_attention(const Tensor& x, const TemporalAttentionParams& p) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw DimensionError("temporal_attention: expected [frames, tokens, d] or [clips, frames, tokens, d], got " +
                         shape_str(x.shape()));
  }
  const bool batched = x.rank() == 4;
  const std::size_t clips = batched ? x.dim(0) : 1;
  const std::size_t frames = x.dim(batched ? 1 : 0);
  const std::size_t tokens = x.dim(batched ? 2 : 1);
  const std::size_t d = x.shape().back();
  require_square(p.w_q, d, "temporal W_Q");
  require_square(p.w_k, d, "temporal W_K");
  require_square(p.w_v, d, "temporal W_V");
  require_square(p.w_o, d, "temporal W_O");
  if (frames > p.positions.dim(0)) {
    throw ConfigError("temporal_attention: " + std::to_string(frames) + " frames exceed the positional table of " +
                      std::to_string(p.positions.dim(0)));
  }
  if (p.positions.dim(1) != d) throw DimensionError("temporal_attention: positional table width mismatch");

  const Tensor x4 = reshape(x, {clips, frames, tokens, d});
  const Tensor normed = reshape(group_norm_tokens(reshape(x, {clips * frames, tokens, d}), p.groups,
                                                  p.norm_gamma, p.norm_beta),
                                {clips, frames, tokens, d});
  // One sequence over frames per (clip, token).
  const Tensor seq = reshape(permute(normed, {0, 2, 1, 3}), {clips * tokens, frames, d});
  const Tensor in = p.use_positional_encoding ? add(seq, slice(p.positions, 0, 0, frames)) : seq;
  const Tensor mixed = matmul(attend(matmul(in, p.w_q), matmul(in, p.w_k), matmul(in, p.w_v)), p.w_o);
  const Tensor back = permute(reshape(mixed, {clips, tokens, frames, d}), {0, 2, 1, 3});
  return reshape(add(x4, back), x.shape());
}

AdapterParams init_adapter(const SelfAttentionParams& sa) {
  AdapterParams ad{sa.w_q.clone(), Tensor::zeros({sa.width(), sa.width()})};
  ad.wp_q.set_requires_grad(true);
  ad.wp_o.set_requires_grad(true);
  return ad;
}

}  // namespace i2v::attention
