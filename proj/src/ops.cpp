#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "i2v/errors.hpp"
#include "i2v/tensor.hpp"

namespace i2v {

namespace {

using Impl = detail::TensorImpl;
using ImplPtr = std::shared_ptr<Impl>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor finish(std::string_view op, Shape shape, std::vector<double> data, bool track,
              Tape::BackwardFn fn) {
  Tensor out(std::move(shape), std::move(data), track);
  if (track) Tape::active()->record(op, out.impl(), std::move(fn));
  return out;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined operand");
}

// Index of b for every element of a under right-aligned broadcasting.
std::vector<std::uint32_t> broadcast_map(const Shape& a, const Shape& b, const char* op) {
  if (b.size() > a.size()) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " to " +
                         shape_str(a));
  }
  const std::size_t rank = a.size();
  const std::size_t offset = rank - b.size();
  std::vector<std::size_t> bstride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > offset;) {
    const std::size_t be = b[i - offset];
    if (be != a[i] && be != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " to " +
                           shape_str(a));
    }
    bstride[i] = (be == 1) ? 0 : stride;
    stride *= be;
  }
  std::vector<std::uint32_t> map(shape_numel(a));
  std::vector<std::size_t> counter(rank, 0);
  std::size_t bi = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    map[i] = static_cast<std::uint32_t>(bi);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      bi += bstride[ax];
      if (counter[ax] < a[ax]) break;
      bi -= bstride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return map;
}

enum class Pointwise { kAdd, kSub, kMul };

// out[i] = f(x[i], y[idx(i)]) for either indexing scheme.
template <class Idx>
void pointwise_forward(std::span<const double> x, std::span<const double> y, std::vector<double>& out,
                       Pointwise kind, Idx idx) {
  switch (kind) {
    case Pointwise::kAdd:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[idx(i)];
      break;
    case Pointwise::kSub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[idx(i)];
      break;
    case Pointwise::kMul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[idx(i)];
      break;
  }
}

template <class Idx>
void pointwise_backward(const Impl& o, Impl& a, Impl& b, Pointwise kind, Idx idx) {
  const auto& g = o.grad;
  if (a.requires_grad) {
    auto ga = a.grad_buffer();
    if (kind == Pointwise::kMul) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data[idx(i)];
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  }
  if (b.requires_grad) {
    auto gb = b.grad_buffer();
    switch (kind) {
      case Pointwise::kAdd:
        for (std::size_t i = 0; i < g.size(); ++i) gb[idx(i)] += g[i];
        break;
      case Pointwise::kSub:
        for (std::size_t i = 0; i < g.size(); ++i) gb[idx(i)] -= g[i];
        break;
      case Pointwise::kMul:
        for (std::size_t i = 0; i < g.size(); ++i) gb[idx(i)] += g[i] * a.data[i];
        break;
    }
  }
}

Tensor pointwise(const Tensor& a, const Tensor& b, Pointwise kind, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  const bool same = a.shape() == b.shape();
  std::vector<std::uint32_t> map;
  if (!same) map = broadcast_map(a.shape(), b.shape(), op);
  std::vector<double> out(a.numel());
  auto identity = [](std::size_t i) { return i; };
  if (same) {
    pointwise_forward(a.data(), b.data(), out, kind, identity);
  } else {
    pointwise_forward(a.data(), b.data(), out, kind, [&map](std::size_t i) -> std::size_t { return map[i]; });
  }
  const bool track = tracking({&a, &b});
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  return finish(op, a.shape(), std::move(out), track,
                [ai, bi, kind, same, map = std::move(map), identity](const Impl& o) {
                  if (same) {
                    pointwise_backward(o, *ai, *bi, kind, identity);
                  } else {
                    pointwise_backward(o, *ai, *bi, kind, [&map](std::size_t i) -> std::size_t { return map[i]; });
                  }
                });
}

}  // namespace

// ---- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  };
  if (as.size() < 2 || bs.size() < 2) throw mismatch();
  const bool track = tracking({&a, &b});
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();

  if (bs.size() == 2) {
    const std::size_t k = as.back();
    if (bs[0] != k) throw mismatch();
    const std::size_t m = a.numel() / k;
    const std::size_t n = bs[1];
    std::vector<double> out(m * n);
    MapMat(out.data(), m, n).noalias() =
        CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
    Shape os = as;
    os.back() = n;
    return finish("matmul", std::move(os), std::move(out), track, [ai, bi, m, k, n](const Impl& o) {
      CMapMat g(o.grad.data(), m, n);
      if (ai->requires_grad) {
        MapMat(ai->grad_buffer().data(), m, k).noalias() += g * CMapMat(bi->data.data(), k, n).transpose();
      }
      if (bi->requires_grad) {
        MapMat(bi->grad_buffer().data(), k, n).noalias() += CMapMat(ai->data.data(), m, k).transpose() * g;
      }
    });
  }

  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1]) throw mismatch();
  const std::size_t batch = as[0];
  const std::size_t m = as[1];
  const std::size_t k = as[2];
  const std::size_t n = bs[2];
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    MapMat(out.data() + i * m * n, m, n).noalias() =
        CMapMat(a.data().data() + i * m * k, m, k) * CMapMat(b.data().data() + i * k * n, k, n);
  }
  return finish("matmul", {batch, m, n}, std::move(out), track,
                [ai, bi, batch, m, k, n](const Impl& o) {
                  for (std::size_t i = 0; i < batch; ++i) {
                    CMapMat g(o.grad.data() + i * m * n, m, n);
                    if (ai->requires_grad) {
                      MapMat(ai->grad_buffer().data() + i * m * k, m, k).noalias() +=
                          g * CMapMat(bi->data.data() + i * k * n, k, n).transpose();
                    }
                    if (bi->requires_grad) {
                      MapMat(bi->grad_buffer().data() + i * k * n, k, n).noalias() +=
                          CMapMat(ai->data.data() + i * m * k, m, k).transpose() * g;
                    }
                  }
                });
}

// ---- softmax ----------------------------------------------------------------

Tensor softmax_lastdim(const Tensor& x) {
  require_defined(x, "softmax_lastdim");
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.numel() / len;
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * len;
    double* dst = out.data() + r * len;
    const double mx = *std::max_element(src, src + len);
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      dst[j] = std::exp(src[j] - mx);
      total += dst[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < len; ++j) dst[j] *= inv;
  }
  ImplPtr xi = x.impl();
  return finish("softmax_lastdim", x.shape(), std::move(out), tracking({&x}),
                [xi, rows, len](const Impl& o) {
                  auto gx = xi->grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* yr = o.data.data() + r * len;
                    const double* gr = o.grad.data() + r * len;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < len; ++j) dot += gr[j] * yr[j];
                    for (std::size_t j = 0; j < len; ++j) gx[r * len + j] += yr[j] * (gr[j] - dot);
                  }
                });
}

// ---- conv2d -----------------------------------------------------------------

namespace {

void im2col(const double* img, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
            std::size_t pad, std::size_t ho, std::size_t wo, double* col) {
  const std::size_t hw = ho * wo;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = col + ((c * k + ki) * k + kj) * hw;
        for (std::size_t y = 0; y < ho; ++y) {
          const long sy = static_cast<long>(y + ki) - static_cast<long>(pad);
          double* dst = row + y * wo;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = img + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t x = 0; x < wo; ++x) {
            const long sx = static_cast<long>(x + kj) - static_cast<long>(pad);
            dst[x] = (sx < 0 || sx >= static_cast<long>(w)) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
                std::size_t pad, std::size_t ho, std::size_t wo, double* img) {
  const std::size_t hw = ho * wo;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = col + ((c * k + ki) * k + kj) * hw;
        for (std::size_t y = 0; y < ho; ++y) {
          const long sy = static_cast<long>(y + ki) - static_cast<long>(pad);
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          double* dst = img + (c * h + static_cast<std::size_t>(sy)) * w;
          const double* src = row + y * wo;
          for (std::size_t x = 0; x < wo; ++x) {
            const long sx = static_cast<long>(x + kj) - static_cast<long>(pad);
            if (sx >= 0 && sx < static_cast<long>(w)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t padding) {
  require_defined(x, "conv2d");
  require_defined(kernel, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if ((xs.size() != 3 && xs.size() != 4) || ks.size() != 4 || ks[2] != ks[3]) {
    throw DimensionError("conv2d: bad shapes " + shape_str(xs) + " and kernel " + shape_str(ks));
  }
  const bool batched = xs.size() == 4;
  const std::size_t n = batched ? xs[0] : 1;
  const std::size_t cin = xs[batched ? 1 : 0];
  const std::size_t h = xs[batched ? 2 : 1];
  const std::size_t w = xs[batched ? 3 : 2];
  const std::size_t cout = ks[0];
  const std::size_t k = ks[2];
  if (ks[1] != cin) {
    throw DimensionError("conv2d: input channels " + std::to_string(cin) + " of " + shape_str(xs) +
                         " do not match kernel " + shape_str(ks));
  }
  if (k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd, got " + shape_str(ks));
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw DimensionError("conv2d: kernel " + shape_str(ks) + " larger than padded input " +
                         shape_str(xs));
  }
  const std::size_t ho = h + 2 * padding - k + 1;
  const std::size_t wo = w + 2 * padding - k + 1;
  const std::size_t kdim = cin * k * k;
  const std::size_t hw = ho * wo;
  const bool direct = (k == 1 && padding == 0);

  const bool track = tracking({&x, &kernel});
  const bool keep_cols = track && kernel.requires_grad() && !direct;
  auto cols = std::make_shared<std::vector<double>>();
  std::vector<double> scratch;
  if (!direct) {
    if (keep_cols) {
      cols->resize(n * kdim * hw);
    } else {
      scratch.resize(kdim * hw);
    }
  }

  std::vector<double> out(n * cout * hw);
  CMapMat wmat(kernel.data().data(), cout, kdim);
  for (std::size_t i = 0; i < n; ++i) {
    const double* img = x.data().data() + i * cin * h * w;
    const double* col = img;
    if (!direct) {
      double* dst = keep_cols ? cols->data() + i * kdim * hw : scratch.data();
      im2col(img, cin, h, w, k, padding, ho, wo, dst);
      col = dst;
    }
    MapMat(out.data() + i * cout * hw, cout, hw).noalias() = wmat * CMapMat(col, kdim, hw);
  }

  Shape os = batched ? Shape{n, cout, ho, wo} : Shape{cout, ho, wo};
  ImplPtr xi = x.impl();
  ImplPtr ki = kernel.impl();
  return finish("conv2d", std::move(os), std::move(out), track,
                [xi, ki, cols, n, cin, h, w, cout, k, padding, ho, wo, kdim, hw, direct](const Impl& o) {
                  CMapMat wm(ki->data.data(), cout, kdim);
                  if (ki->requires_grad) {
                    MapMat gw(ki->grad_buffer().data(), cout, kdim);
                    std::vector<double> scratch;
                    for (std::size_t i = 0; i < n; ++i) {
                      const double* col = nullptr;
                      if (direct) {
                        col = xi->data.data() + i * cin * h * w;
                      } else if (!cols->empty()) {
                        col = cols->data() + i * kdim * hw;
                      } else {
                        scratch.resize(kdim * hw);
                        im2col(xi->data.data() + i * cin * h * w, cin, h, w, k, padding, ho, wo,
                               scratch.data());
                        col = scratch.data();
                      }
                      gw.noalias() += CMapMat(o.grad.data() + i * cout * hw, cout, hw) *
                                      CMapMat(col, kdim, hw).transpose();
                    }
                  }
                  if (xi->requires_grad) {
                    auto gx = xi->grad_buffer();
                    std::vector<double> dcol(direct ? 0 : kdim * hw);
                    for (std::size_t i = 0; i < n; ++i) {
                      CMapMat gy(o.grad.data() + i * cout * hw, cout, hw);
                      double* gimg = gx.data() + i * cin * h * w;
                      if (direct) {
                        MapMat(gimg, kdim, hw).noalias() += wm.transpose() * gy;
                      } else {
                        MapMat(dcol.data(), kdim, hw).noalias() = wm.transpose() * gy;
                        col2im_add(dcol.data(), cin, h, w, k, padding, ho, wo, gimg);
                      }
                    }
                  }
                });
}

// ---- pointwise ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return pointwise(a, b, Pointwise::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return pointwise(a, b, Pointwise::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return pointwise(a, b, Pointwise::kMul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  require_defined(x, "scale");
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * factor;
  ImplPtr xi = x.impl();
  return finish("scale", x.shape(), std::move(out), tracking({&x}), [xi, factor](const Impl& o) {
    auto g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
  });
}

Tensor silu(const Tensor& x) {
  require_defined(x, "silu");
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] / (1.0 + std::exp(-in[i]));
  ImplPtr xi = x.impl();
  return finish("silu", x.shape(), std::move(out), tracking({&x}), [xi](const Impl& o) {
    auto g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xi->data[i];
      const double s = 1.0 / (1.0 + std::exp(-v));
      g[i] += o.grad[i] * s * (1.0 + v * (1.0 - s));
    }
  });
}

// ---- group norm ---------------------------------------------------------------

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_defined(x, "group_norm");
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw DimensionError("group_norm: need [n,c,...], got " + shape_str(xs));
  const std::size_t n = xs[0];
  const std::size_t c = xs[1];
  if (groups == 0 || c % groups != 0) {
    throw DimensionError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                         std::to_string(groups) + " groups");
  }
  const bool affine = gamma.defined();
  if (affine && (gamma.shape() != Shape{c} || !beta.defined() || beta.shape() != Shape{c})) {
    throw DimensionError("group_norm: affine parameters must be [" + std::to_string(c) + "]");
  }
  const std::size_t spatial = x.numel() / (n * c);
  const std::size_t per_group = (c / groups) * spatial;
  auto in = x.data();
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(n * groups);
  std::vector<double> out(in.size());
  for (std::size_t b = 0; b < n * groups; ++b) {
    const double* src = in.data() + b * per_group;
    double mean = 0.0;
    for (std::size_t j = 0; j < per_group; ++j) mean += src[j];
    mean /= static_cast<double>(per_group);
    double var = 0.0;
    for (std::size_t j = 0; j < per_group; ++j) var += (src[j] - mean) * (src[j] - mean);
    var /= static_cast<double>(per_group);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[b] = is;
    double* xh = xhat->data() + b * per_group;
    for (std::size_t j = 0; j < per_group; ++j) xh[j] = (src[j] - mean) * is;
  }
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t ch = (i / spatial) % c;
    out[i] = affine ? (*xhat)[i] * gamma.data()[ch] + beta.data()[ch] : (*xhat)[i];
  }
  const bool track = tracking({&x, &gamma, &beta});
  ImplPtr xi = x.impl();
  ImplPtr gi = affine ? gamma.impl() : nullptr;
  ImplPtr bi = affine ? beta.impl() : nullptr;
  return finish("group_norm", xs, std::move(out), track,
                [xi, gi, bi, xhat, inv_std, n, c, groups, spatial, per_group](const Impl& o) {
                  const auto& g = o.grad;
                  if (gi && gi->requires_grad) {
                    auto gg = gi->grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) gg[(i / spatial) % c] += g[i] * (*xhat)[i];
                  }
                  if (bi && bi->requires_grad) {
                    auto gb = bi->grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[(i / spatial) % c] += g[i];
                  }
                  if (!xi->requires_grad) return;
                  auto gx = xi->grad_buffer();
                  std::vector<double> dxhat(per_group);
                  for (std::size_t b = 0; b < n * groups; ++b) {
                    const std::size_t base = b * per_group;
                    double mean_d = 0.0;
                    double mean_dx = 0.0;
                    for (std::size_t j = 0; j < per_group; ++j) {
                      const std::size_t i = base + j;
                      const double scale_c = gi ? gi->data[(i / spatial) % c] : 1.0;
                      dxhat[j] = g[i] * scale_c;
                      mean_d += dxhat[j];
                      mean_dx += dxhat[j] * (*xhat)[i];
                    }
                    mean_d /= static_cast<double>(per_group);
                    mean_dx /= static_cast<double>(per_group);
                    const double is = (*inv_std)[b];
                    for (std::size_t j = 0; j < per_group; ++j) {
                      const std::size_t i = base + j;
                      gx[i] += is * (dxhat[j] - mean_d - (*xhat)[i] * mean_dx);
                    }
                  }
                });
}

// ---- layout -----------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  ImplPtr xi = x.impl();
  return finish("reshape", shape, std::move(out), tracking({&x}), [xi](const Impl& o) {
    auto g = xi->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

namespace {

// Source offset of every output element of a permutation.
std::vector<std::uint32_t> permute_map(const Shape& in, const std::vector<std::size_t>& axes) {
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in[i + 1];
  Shape out(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  std::vector<std::uint32_t> map(shape_numel(in));
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    map[i] = static_cast<std::uint32_t>(src);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      src += stride[ax];
      if (counter[ax] < out[ax]) break;
      src -= stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  require_defined(x, "permute");
  const Shape& xs = x.shape();
  std::vector<std::size_t> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(xs.size());
  std::iota(iota.begin(), iota.end(), 0);
  if (sorted != iota) throw DimensionError("permute: invalid axis order for " + shape_str(xs));
  Shape os(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) os[i] = xs[axes[i]];
  auto map = std::make_shared<std::vector<std::uint32_t>>(permute_map(xs, axes));
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[(*map)[i]];
  ImplPtr xi = x.impl();
  return finish("permute", std::move(os), std::move(out), tracking({&x}), [xi, map](const Impl& o) {
    auto g = xi->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*map)[i]] += o.grad[i];
  });
}

Tensor transpose_last2(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  if (axes.size() < 2) throw DimensionError("transpose_last2: rank < 2");
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined(x, "slice");
  const Shape& xs = x.shape();
  if (axis >= xs.size() || begin >= end || end > xs[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " of " + shape_str(xs));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t len = end - begin;
  const std::size_t full = xs[axis];
  Shape os = xs;
  os[axis] = len;
  auto in = x.data();
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(in.data() + (o * full + begin) * inner, len * inner, out.data() + o * len * inner);
  }
  ImplPtr xi = x.impl();
  return finish("slice", std::move(os), std::move(out), tracking({&x}),
                [xi, outer, inner, len, full, begin](const Impl& o) {
                  auto g = xi->grad_buffer();
                  for (std::size_t b = 0; b < outer; ++b) {
                    const double* src = o.grad.data() + b * len * inner;
                    double* dst = g.data() + (b * full + begin) * inner;
                    for (std::size_t j = 0; j < len * inner; ++j) dst[j] += src[j];
                  }
                });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = s0;
    if (a.size() != b.size()) throw DimensionError("concat: rank mismatch");
    total += a[axis];
    a[axis] = b[axis] = 0;
    if (a != b) {
      throw DimensionError("concat: " + shape_str(p.shape()) + " vs " + shape_str(s0) +
                           " along axis " + std::to_string(axis));
    }
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape os = s0;
  os[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    offsets.push_back(off);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * len * inner, len * inner,
                  out.data() + (o * total + off) * inner);
    }
    off += len;
  }
  bool track = false;
  std::vector<ImplPtr> impls;
  for (const auto& p : parts) {
    track = track || tracking({&p});
    impls.push_back(p.impl());
  }
  return finish("concat", std::move(os), std::move(out), track,
                [impls, offsets, outer, inner, total, axis](const Impl& o) {
                  for (std::size_t k = 0; k < impls.size(); ++k) {
                    if (!impls[k]->requires_grad) continue;
                    const std::size_t len = impls[k]->shape[axis];
                    auto g = impls[k]->grad_buffer();
                    for (std::size_t b = 0; b < outer; ++b) {
                      const double* src = o.grad.data() + (b * total + offsets[k]) * inner;
                      double* dst = g.data() + b * len * inner;
                      for (std::size_t j = 0; j < len * inner; ++j) dst[j] += src[j];
                    }
                  }
                });
}

Tensor sum_all(const Tensor& x) {
  require_defined(x, "sum_all");
  double total = 0.0;
  for (double v : x.data()) total += v;
  ImplPtr xi = x.impl();
  return finish("sum_all", {1}, {total}, tracking({&x}), [xi](const Impl& o) {
    auto g = xi->grad_buffer();
    const double s = o.grad[0];
    for (auto& v : g) v += s;
  });
}

}  // namespace i2v
