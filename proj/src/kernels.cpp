#include "stnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace stnet::kernels {

namespace {

// C[i, :] += sum_k A(i, k) * B[k, :], where A(i, k) = a[i * a_row + k * a_col].
// Each output element accumulates its k terms in ascending k order.
template <typename T>
void gemm_acc(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, std::int64_t a_row, std::int64_t a_col,
              const T* b, std::int64_t ldb, T* c, std::int64_t ldc) {
  std::int64_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* __restrict c0 = c + (i + 0) * ldc;
    T* __restrict c1 = c + (i + 1) * ldc;
    T* __restrict c2 = c + (i + 2) * ldc;
    T* __restrict c3 = c + (i + 3) * ldc;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T a0 = a[(i + 0) * a_row + kk * a_col];
      const T a1 = a[(i + 1) * a_row + kk * a_col];
      const T a2 = a[(i + 2) * a_row + kk * a_col];
      const T a3 = a[(i + 3) * a_row + kk * a_col];
      const T* __restrict bk = b + kk * ldb;
      for (std::int64_t j = 0; j < n; ++j) {
        const T bv = bk[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict ci = c + i * ldc;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T ai = a[i * a_row + kk * a_col];
      const T* __restrict bk = b + kk * ldb;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += ai * bk[j];
    }
  }
}

template <typename T>
T dot(const T* __restrict a, const T* __restrict b, std::int64_t n) {
  T acc[8] = {};
  std::int64_t p = 0;
  for (; p + 8 <= n; p += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[p + l] * b[p + l];
  }
  T tail{0};
  for (; p < n; ++p) tail += a[p] * b[p];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

std::array<std::int64_t, 3> expand_param(const std::vector<int>& v, int rank, int fallback, const char* what) {
  std::array<std::int64_t, 3> out{fallback, fallback, fallback};
  const int off = 3 - rank;
  for (int d = 0; d < rank; ++d) {
    int value = fallback;
    if (v.size() == 1) {
      value = v[0];
    } else if (static_cast<int>(v.size()) == rank) {
      value = v[static_cast<std::size_t>(d)];
    } else if (!v.empty()) {
      throw ShapeError(std::string(what) + " has " + std::to_string(v.size()) + " entries, expected 1 or " +
                       std::to_string(rank));
    }
    out[static_cast<std::size_t>(off + d)] = value;
  }
  return out;
}

// Writes the columns for one sample/group: rows ordered (c, kd, kh, kw),
// kernel innermost. `x` points at the group's first input channel.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::int64_t cig, T* col, std::int64_t ld) {
  const auto [D, H, W] = g.in;
  const auto [Kd, Kh, Kw] = g.kernel;
  const auto [Sd, Sh, Sw] = g.stride;
  const auto [Pd, Ph, Pw] = g.pad;
  const auto [Od, Oh, Ow] = g.out;
  for (std::int64_t c = 0; c < cig; ++c) {
    const T* xc = x + c * D * H * W;
    for (std::int64_t kd = 0; kd < Kd; ++kd)
      for (std::int64_t kh = 0; kh < Kh; ++kh)
        for (std::int64_t kw = 0; kw < Kw; ++kw) {
          const std::int64_t row = ((c * Kd + kd) * Kh + kh) * Kw + kw;
          T* dst = col + row * ld;
          for (std::int64_t od = 0; od < Od; ++od) {
            const std::int64_t id = od * Sd - Pd + kd;
            if (id < 0 || id >= D) {
              std::fill(dst, dst + Oh * Ow, T{0});
              dst += Oh * Ow;
              continue;
            }
            for (std::int64_t oh = 0; oh < Oh; ++oh) {
              const std::int64_t ih = oh * Sh - Ph + kh;
              if (ih < 0 || ih >= H) {
                std::fill(dst, dst + Ow, T{0});
                dst += Ow;
                continue;
              }
              const T* src = xc + (id * H + ih) * W;
              for (std::int64_t ow = 0; ow < Ow; ++ow) {
                const std::int64_t iw = ow * Sw - Pw + kw;
                *dst++ = (iw >= 0 && iw < W) ? src[iw] : T{0};
              }
            }
          }
        }
  }
}

template <typename T>
void col2im_add(const T* col, std::int64_t ld, const ConvGeometry& g, std::int64_t cig, T* dx) {
  const auto [D, H, W] = g.in;
  const auto [Kd, Kh, Kw] = g.kernel;
  const auto [Sd, Sh, Sw] = g.stride;
  const auto [Pd, Ph, Pw] = g.pad;
  const auto [Od, Oh, Ow] = g.out;
  for (std::int64_t c = 0; c < cig; ++c) {
    T* xc = dx + c * D * H * W;
    for (std::int64_t kd = 0; kd < Kd; ++kd)
      for (std::int64_t kh = 0; kh < Kh; ++kh)
        for (std::int64_t kw = 0; kw < Kw; ++kw) {
          const std::int64_t row = ((c * Kd + kd) * Kh + kh) * Kw + kw;
          const T* src = col + row * ld;
          for (std::int64_t od = 0; od < Od; ++od) {
            const std::int64_t id = od * Sd - Pd + kd;
            if (id < 0 || id >= D) {
              src += Oh * Ow;
              continue;
            }
            for (std::int64_t oh = 0; oh < Oh; ++oh) {
              const std::int64_t ih = oh * Sh - Ph + kh;
              if (ih < 0 || ih >= H) {
                src += Ow;
                continue;
              }
              T* dst = xc + (id * H + ih) * W;
              for (std::int64_t ow = 0; ow < Ow; ++ow, ++src) {
                const std::int64_t iw = ow * Sw - Pw + kw;
                if (iw >= 0 && iw < W) dst[iw] += *src;
              }
            }
          }
        }
  }
}

// Samples per GEMM call: enough columns to amortize the kernel on the deep,
// spatially small stages.
std::int64_t conv_chunk(const ConvGeometry& g) {
  const std::int64_t p = g.out_spatial();
  return std::clamp<std::int64_t>(512 / std::max<std::int64_t>(p, 1), 1, g.batch);
}

void require_same_shape(const Shape& a, const Shape& b, const std::string& what) {
  if (a != b) throw ShapeError(what + ": shape " + shape_str(a) + " != " + shape_str(b));
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

Shape ConvGeometry::out_shape() const {
  Shape s{batch, c_out};
  for (int d = 3 - rank; d < 3; ++d) s.push_back(out[static_cast<std::size_t>(d)]);
  return s;
}

ConvGeometry conv_geometry(const Shape& x, const Shape& w, int rank, const ConvOptions& opt) {
  if (rank < 1 || rank > 3) throw ShapeError("conv: spatial rank must be 1, 2 or 3, got " + std::to_string(rank));
  if (static_cast<int>(x.size()) != rank + 2) {
    throw ShapeError("conv: input " + shape_str(x) + " must have rank " + std::to_string(rank + 2) +
                     " [B, C_in, spatial...]");
  }
  if (static_cast<int>(w.size()) != rank + 2) {
    throw ShapeError("conv: weight " + shape_str(w) + " must have rank " + std::to_string(rank + 2) +
                     " [C_out, C_in/G, kernel...]");
  }
  ConvGeometry g;
  g.rank = rank;
  g.batch = x[0];
  g.c_in = x[1];
  g.c_out = w[0];
  g.groups = opt.groups;
  if (g.groups < 1) throw ShapeError("conv: groups must be >= 1, got " + std::to_string(g.groups));
  if (g.c_in % g.groups != 0) {
    throw ShapeError("conv: groups " + std::to_string(g.groups) + " does not divide input channels (axis 1) = " +
                     std::to_string(g.c_in));
  }
  if (g.c_out % g.groups != 0) {
    throw ShapeError("conv: groups " + std::to_string(g.groups) + " does not divide output channels (weight axis 0) = " +
                     std::to_string(g.c_out));
  }
  if (w[1] * g.groups != g.c_in) {
    throw ShapeError("conv: input channels (axis 1) = " + std::to_string(g.c_in) + " but weight axis 1 = " +
                     std::to_string(w[1]) + " with groups " + std::to_string(g.groups));
  }
  g.stride = expand_param(opt.stride, rank, 1, "conv stride");
  g.pad = expand_param(opt.padding, rank, 0, "conv padding");
  const int off = 3 - rank;
  for (int d = 0; d < rank; ++d) {
    const auto slot = static_cast<std::size_t>(off + d);
    g.in[slot] = x[static_cast<std::size_t>(2 + d)];
    g.kernel[slot] = w[static_cast<std::size_t>(2 + d)];
    if (g.stride[slot] < 1) throw ShapeError("conv: stride on spatial axis " + std::to_string(d) + " must be >= 1");
    if (g.pad[slot] < 0) throw ShapeError("conv: padding on spatial axis " + std::to_string(d) + " must be >= 0");
    const std::int64_t padded = g.in[slot] + 2 * g.pad[slot];
    if (g.kernel[slot] > padded) {
      throw ShapeError("conv: kernel extent " + std::to_string(g.kernel[slot]) + " on spatial axis " +
                       std::to_string(d) + " (tensor axis " + std::to_string(2 + d) + ") exceeds padded input " +
                       std::to_string(padded));
    }
    g.out[slot] = (padded - g.kernel[slot]) / g.stride[slot] + 1;
  }
  return g;
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const ConvGeometry& g) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.c_out)) {
    throw ShapeError("conv: bias " + shape_str(bias->shape()) + " must be [" + std::to_string(g.c_out) + "]");
  }
  Tensor<T> y(g.out_shape());
  const std::int64_t cig = g.c_in / g.groups;
  const std::int64_t cog = g.c_out / g.groups;
  const std::int64_t kc = cig * g.kernel_volume();
  const std::int64_t P = g.out_spatial();
  const std::int64_t inS = g.in_spatial();
  const std::int64_t nb_max = conv_chunk(g);

  std::vector<T> col(static_cast<std::size_t>(kc * nb_max * P));
  std::vector<T> yb(static_cast<std::size_t>(cog * nb_max * P));
  for (std::int64_t n0 = 0; n0 < g.batch; n0 += nb_max) {
    const std::int64_t nb = std::min(nb_max, g.batch - n0);
    const std::int64_t ld = nb * P;
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      for (std::int64_t s = 0; s < nb; ++s) {
        im2col(x.ptr() + ((n0 + s) * g.c_in + grp * cig) * inS, g, cig, col.data() + s * P, ld);
      }
      std::fill(yb.begin(), yb.begin() + cog * ld, T{0});
      gemm_acc(cog, ld, kc, w.ptr() + grp * cog * kc, kc, 1, col.data(), ld, yb.data(), ld);
      for (std::int64_t s = 0; s < nb; ++s) {
        for (std::int64_t o = 0; o < cog; ++o) {
          const std::int64_t oc = grp * cog + o;
          const T bv = bias ? (*bias)[oc] : T{0};
          const T* src = yb.data() + o * ld + s * P;
          T* dst = y.ptr() + ((n0 + s) * g.c_out + oc) * P;
          for (std::int64_t p = 0; p < P; ++p) dst[p] = src[p] + bv;
        }
      }
    }
  }
  return y;
}

template <typename T>
void conv_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, const ConvGeometry& g, Tensor<T>* dx,
                   Tensor<T>* dw, Tensor<T>* dbias) {
  require_same_shape(dy.shape(), g.out_shape(), "conv backward");
  const std::int64_t cig = g.c_in / g.groups;
  const std::int64_t cog = g.c_out / g.groups;
  const std::int64_t kc = cig * g.kernel_volume();
  const std::int64_t P = g.out_spatial();
  const std::int64_t inS = g.in_spatial();
  const std::int64_t nb_max = conv_chunk(g);

  if (dbias) {
    for (std::int64_t oc = 0; oc < g.c_out; ++oc) {
      T acc{0};
      for (std::int64_t n = 0; n < g.batch; ++n) {
        const T* src = dy.ptr() + (n * g.c_out + oc) * P;
        for (std::int64_t p = 0; p < P; ++p) acc += src[p];
      }
      (*dbias)[oc] += acc;
    }
  }
  if (!dx && !dw) return;

  std::vector<T> col(static_cast<std::size_t>(kc * nb_max * P));
  std::vector<T> dyb(static_cast<std::size_t>(cog * nb_max * P));
  for (std::int64_t n0 = 0; n0 < g.batch; n0 += nb_max) {
    const std::int64_t nb = std::min(nb_max, g.batch - n0);
    const std::int64_t ld = nb * P;
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      for (std::int64_t s = 0; s < nb; ++s) {
        for (std::int64_t o = 0; o < cog; ++o) {
          const T* src = dy.ptr() + ((n0 + s) * g.c_out + grp * cog + o) * P;
          std::copy(src, src + P, dyb.data() + o * ld + s * P);
        }
      }
      if (dw) {
        for (std::int64_t s = 0; s < nb; ++s) {
          im2col(x.ptr() + ((n0 + s) * g.c_in + grp * cig) * inS, g, cig, col.data() + s * P, ld);
        }
        T* dwg = dw->ptr() + grp * cog * kc;
        for (std::int64_t o = 0; o < cog; ++o) {
          for (std::int64_t r = 0; r < kc; ++r) {
            dwg[o * kc + r] += dot(dyb.data() + o * ld, col.data() + r * ld, ld);
          }
        }
      }
      if (dx) {
        std::fill(col.begin(), col.begin() + kc * ld, T{0});
        gemm_acc(kc, ld, cog, w.ptr() + grp * cog * kc, 1, kc, dyb.data(), ld, col.data(), ld);
        for (std::int64_t s = 0; s < nb; ++s) {
          col2im_add(col.data() + s * P, ld, g, cig, dx->ptr() + ((n0 + s) * g.c_in + grp * cig) * inS);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& run_mean,
                            Tensor<T>& run_var, Mode mode, const BatchNormOptions& opt, BatchNormSaved<T>* saved) {
  if (!(opt.eps > 0.0)) throw ValidationError("batchnorm: eps must be positive, got " + std::to_string(opt.eps));
  if (x.rank() < 2) throw ShapeError("batchnorm: input " + shape_str(x.shape()) + " needs a channel axis");
  const std::int64_t B = x.dim(0);
  const std::int64_t C = x.dim(1);
  const std::int64_t P = x.numel() / (B * C);
  for (const Tensor<T>* t : {&gamma, &beta, static_cast<const Tensor<T>*>(&run_mean),
                             static_cast<const Tensor<T>*>(&run_var)}) {
    if (t->rank() != 1 || t->dim(0) != C) {
      throw ShapeError("batchnorm: parameter " + shape_str(t->shape()) + " must be [" + std::to_string(C) +
                       "] to match channel axis 1");
    }
  }
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv(static_cast<std::size_t>(C));
  const auto m = static_cast<double>(B * P);
  const T mom = static_cast<T>(opt.momentum);

  for (std::int64_t c = 0; c < C; ++c) {
    T mean_c, inv_c;
    if (mode == Mode::Train) {
      double s = 0.0;
      for (std::int64_t n = 0; n < B; ++n) {
        const T* src = x.ptr() + (n * C + c) * P;
        for (std::int64_t p = 0; p < P; ++p) s += src[p];
      }
      const double mean = s / m;
      double ss = 0.0;
      for (std::int64_t n = 0; n < B; ++n) {
        const T* src = x.ptr() + (n * C + c) * P;
        for (std::int64_t p = 0; p < P; ++p) {
          const double d = static_cast<double>(src[p]) - mean;
          ss += d * d;
        }
      }
      const double var = ss / m;
      mean_c = static_cast<T>(mean);
      const T norm_var = static_cast<T>(var + opt.eps);
      inv_c = T{1} / std::sqrt(norm_var);
      run_mean[c] = mom * run_mean[c] + (T{1} - mom) * mean_c;
      run_var[c] = mom * run_var[c] + (T{1} - mom) * norm_var;
    } else {
      mean_c = run_mean[c];
      inv_c = T{1} / std::sqrt(run_var[c]);
    }
    inv[static_cast<std::size_t>(c)] = inv_c;
    const T gm = gamma[c];
    const T bt = beta[c];
    for (std::int64_t n = 0; n < B; ++n) {
      const std::int64_t base = (n * C + c) * P;
      for (std::int64_t p = 0; p < P; ++p) {
        const T h = (x[base + p] - mean_c) * inv_c;
        xhat[base + p] = h;
        y[base + p] = gm * h + bt;
      }
    }
  }
  if (saved) {
    saved->xhat = std::move(xhat);
    saved->inv_std = std::move(inv);
  }
  return y;
}

template <typename T>
void batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormSaved<T>& saved, Mode mode,
                        Tensor<T>* dx, Tensor<T>* dgamma, Tensor<T>* dbeta) {
  const Tensor<T>& xhat = saved.xhat;
  require_same_shape(dy.shape(), xhat.shape(), "batchnorm backward");
  const std::int64_t B = dy.dim(0);
  const std::int64_t C = dy.dim(1);
  const std::int64_t P = dy.numel() / (B * C);
  const T m = static_cast<T>(B * P);
  for (std::int64_t c = 0; c < C; ++c) {
    T sum_dy{0}, sum_dy_xhat{0};
    for (std::int64_t n = 0; n < B; ++n) {
      const std::int64_t base = (n * C + c) * P;
      for (std::int64_t p = 0; p < P; ++p) {
        sum_dy += dy[base + p];
        sum_dy_xhat += dy[base + p] * xhat[base + p];
      }
    }
    if (dgamma) (*dgamma)[c] += sum_dy_xhat;
    if (dbeta) (*dbeta)[c] += sum_dy;
    if (!dx) continue;
    const T inv = saved.inv_std[static_cast<std::size_t>(c)];
    const T gm = gamma[c];
    for (std::int64_t n = 0; n < B; ++n) {
      const std::int64_t base = (n * C + c) * P;
      if (mode == Mode::Train) {
        const T k = gm * inv / m;
        for (std::int64_t p = 0; p < P; ++p) {
          (*dx)[base + p] += k * (m * dy[base + p] - sum_dy - xhat[base + p] * sum_dy_xhat);
        }
      } else {
        const T k = gm * inv;
        for (std::int64_t p = 0; p < P; ++p) (*dx)[base + p] += k * dy[base + p];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

Shape PoolGeometry::out_shape() const {
  Shape s{batch, channels};
  for (int d = 3 - rank; d < 3; ++d) s.push_back(out[static_cast<std::size_t>(d)]);
  return s;
}

PoolGeometry pool_geometry(const Shape& x, int rank, std::span<const int> window, std::span<const int> stride) {
  if (rank < 1 || rank > 3) throw ShapeError("pool: spatial rank must be 1, 2 or 3");
  if (static_cast<int>(x.size()) != rank + 2) {
    throw ShapeError("pool: input " + shape_str(x) + " must have rank " + std::to_string(rank + 2));
  }
  PoolGeometry g;
  g.rank = rank;
  g.batch = x[0];
  g.channels = x[1];
  const std::vector<int> win(window.begin(), window.end());
  const std::vector<int> str(stride.begin(), stride.end());
  g.window = expand_param(win, rank, 1, "pool window");
  g.stride = str.empty() ? g.window : expand_param(str, rank, 1, "pool stride");
  const int off = 3 - rank;
  for (int d = 0; d < rank; ++d) {
    const auto slot = static_cast<std::size_t>(off + d);
    g.in[slot] = x[static_cast<std::size_t>(2 + d)];
    if (g.window[slot] < 1 || g.stride[slot] < 1) throw ShapeError("pool: window and stride must be >= 1");
    if (g.window[slot] > g.in[slot]) {
      throw ShapeError("pool: window " + std::to_string(g.window[slot]) + " exceeds input dim " +
                       std::to_string(g.in[slot]) + " on spatial axis " + std::to_string(d));
    }
    g.out[slot] = (g.in[slot] - g.window[slot]) / g.stride[slot] + 1;
  }
  return g;
}

template <typename T>
Tensor<T> pool_forward(const Tensor<T>& x, PoolKind kind, const PoolGeometry& g, std::vector<std::int64_t>* argmax) {
  Tensor<T> y(g.out_shape());
  const auto [D, H, W] = g.in;
  const auto [Kd, Kh, Kw] = g.window;
  const auto [Sd, Sh, Sw] = g.stride;
  const auto [Od, Oh, Ow] = g.out;
  if (argmax) argmax->assign(static_cast<std::size_t>(y.numel()), 0);
  const T inv_area = T{1} / static_cast<T>(Kd * Kh * Kw);
  std::int64_t o = 0;
  for (std::int64_t nc = 0; nc < g.batch * g.channels; ++nc) {
    const std::int64_t base = nc * D * H * W;
    for (std::int64_t od = 0; od < Od; ++od)
      for (std::int64_t oh = 0; oh < Oh; ++oh)
        for (std::int64_t ow = 0; ow < Ow; ++ow, ++o) {
          T best{0};
          std::int64_t best_at = -1;
          T sum{0};
          for (std::int64_t kd = 0; kd < Kd; ++kd)
            for (std::int64_t kh = 0; kh < Kh; ++kh)
              for (std::int64_t kw = 0; kw < Kw; ++kw) {
                const std::int64_t at = base + ((od * Sd + kd) * H + (oh * Sh + kh)) * W + (ow * Sw + kw);
                const T v = x[at];
                if (kind == PoolKind::Max) {
                  if (best_at < 0 || v > best) {
                    best = v;
                    best_at = at;
                  }
                } else {
                  sum += v;
                }
              }
          if (kind == PoolKind::Max) {
            y[o] = best;
            if (argmax) (*argmax)[static_cast<std::size_t>(o)] = best_at;
          } else {
            y[o] = sum * inv_area;
          }
        }
  }
  return y;
}

template <typename T>
void pool_backward(const Tensor<T>& dy, PoolKind kind, const PoolGeometry& g, const std::vector<std::int64_t>& argmax,
                   Tensor<T>* dx) {
  require_same_shape(dy.shape(), g.out_shape(), "pool backward");
  if (kind == PoolKind::Max) {
    for (std::int64_t o = 0; o < dy.numel(); ++o) (*dx)[argmax[static_cast<std::size_t>(o)]] += dy[o];
    return;
  }
  const auto [D, H, W] = g.in;
  const auto [Kd, Kh, Kw] = g.window;
  const auto [Sd, Sh, Sw] = g.stride;
  const auto [Od, Oh, Ow] = g.out;
  const T inv_area = T{1} / static_cast<T>(Kd * Kh * Kw);
  std::int64_t o = 0;
  for (std::int64_t nc = 0; nc < g.batch * g.channels; ++nc) {
    const std::int64_t base = nc * D * H * W;
    for (std::int64_t od = 0; od < Od; ++od)
      for (std::int64_t oh = 0; oh < Oh; ++oh)
        for (std::int64_t ow = 0; ow < Ow; ++ow, ++o) {
          const T share = dy[o] * inv_area;
          for (std::int64_t kd = 0; kd < Kd; ++kd)
            for (std::int64_t kh = 0; kh < Kh; ++kh)
              for (std::int64_t kw = 0; kw < Kw; ++kw) {
                (*dx)[base + ((od * Sd + kd) * H + (oh * Sh + kh)) * W + (ow * Sw + kw)] += share;
              }
        }
  }
}

template <typename T>
Tensor<T> global_pool_forward(const Tensor<T>& x, PoolKind kind, std::vector<std::int64_t>* argmax) {
  if (x.rank() < 3) throw ShapeError("global pool: input " + shape_str(x.shape()) + " needs at least one spatial axis");
  const std::int64_t B = x.dim(0);
  const std::int64_t C = x.dim(1);
  const std::int64_t P = x.numel() / (B * C);
  Tensor<T> y({B, C});
  if (argmax) argmax->assign(static_cast<std::size_t>(B * C), 0);
  for (std::int64_t nc = 0; nc < B * C; ++nc) {
    const T* src = x.ptr() + nc * P;
    if (kind == PoolKind::Avg) {
      T s{0};
      for (std::int64_t p = 0; p < P; ++p) s += src[p];
      y[nc] = s / static_cast<T>(P);
    } else {
      std::int64_t best = 0;
      for (std::int64_t p = 1; p < P; ++p) {
        if (src[p] > src[best]) best = p;
      }
      y[nc] = src[best];
      if (argmax) (*argmax)[static_cast<std::size_t>(nc)] = nc * P + best;
    }
  }
  return y;
}

template <typename T>
void global_pool_backward(const Tensor<T>& dy, const Shape& x_shape, PoolKind kind,
                          const std::vector<std::int64_t>& argmax, Tensor<T>* dx) {
  const std::int64_t B = x_shape[0];
  const std::int64_t C = x_shape[1];
  const std::int64_t P = shape_numel(x_shape) / (B * C);
  for (std::int64_t nc = 0; nc < B * C; ++nc) {
    if (kind == PoolKind::Max) {
      (*dx)[argmax[static_cast<std::size_t>(nc)]] += dy[nc];
    } else {
      const T share = dy[nc] / static_cast<T>(P);
      T* dst = dx->ptr() + nc * P;
      for (std::int64_t p = 0; p < P; ++p) dst[p] += share;
    }
  }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  if (x.rank() != 2) throw ShapeError("linear: input " + shape_str(x.shape()) + " must be [B, D]");
  if (w.rank() != 2 || w.dim(0) != x.dim(1)) {
    throw ShapeError("linear: weight " + shape_str(w.shape()) + " must be [" + std::to_string(x.dim(1)) +
                     ", O] to match input axis 1");
  }
  const std::int64_t B = x.dim(0), D = x.dim(1), O = w.dim(1);
  if (bias && (bias->rank() != 1 || bias->dim(0) != O)) {
    throw ShapeError("linear: bias " + shape_str(bias->shape()) + " must be [" + std::to_string(O) + "]");
  }
  Tensor<T> y({B, O});
  gemm_acc(B, O, D, x.ptr(), D, 1, w.ptr(), O, y.ptr(), O);
  if (bias) {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t o = 0; o < O; ++o) y[b * O + o] += (*bias)[o];
  }
  return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw,
                     Tensor<T>* dbias) {
  const std::int64_t B = x.dim(0), D = x.dim(1), O = w.dim(1);
  if (dx) {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t d = 0; d < D; ++d) (*dx)[b * D + d] += dot(dy.ptr() + b * O, w.ptr() + d * O, O);
  }
  if (dw) gemm_acc(D, O, B, x.ptr(), 1, D, dy.ptr(), O, dw->ptr(), O);
  if (dbias) {
    for (std::int64_t o = 0; o < O; ++o) {
      T s{0};
      for (std::int64_t b = 0; b < B; ++b) s += dy[b * O + o];
      (*dbias)[o] += s;
    }
  }
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx) {
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    if (x[i] > T{0}) (*dx)[i] += dy[i];
  }
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax: logits " + shape_str(logits.shape()) + " must be [B, K]");
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::int64_t b = 0; b < B; ++b) {
    const T* z = logits.ptr() + b * K;
    const T mx = *std::max_element(z, z + K);
    T s{0};
    for (std::int64_t k = 0; k < K; ++k) s += std::exp(z[k] - mx);
    for (std::int64_t k = 0; k < K; ++k) p[b * K + k] = std::exp(z[k] - mx) / s;
  }
  return p;
}

template <typename T>
T softmax_xent_forward(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* probs) {
  if (logits.rank() != 2) throw ShapeError("softmax_xent: logits " + shape_str(logits.shape()) + " must be [B, K]");
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(B));
  }
  Tensor<T> p(logits.shape());
  T total{0};
  for (std::int64_t b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= K) {
      throw ValidationError("softmax_xent: label " + std::to_string(y) + " out of range [0, " + std::to_string(K) +
                            ")");
    }
    const T* z = logits.ptr() + b * K;
    const T mx = *std::max_element(z, z + K);
    T s{0};
    for (std::int64_t k = 0; k < K; ++k) s += std::exp(z[k] - mx);
    const T lse = mx + std::log(s);
    for (std::int64_t k = 0; k < K; ++k) p[b * K + k] = std::exp(z[k] - lse);
    total += lse - z[y];
  }
  if (probs) *probs = std::move(p);
  return total / static_cast<T>(B);
}

template <typename T>
void softmax_xent_backward(const Tensor<T>& probs, std::span<const int> labels, T dloss, Tensor<T>* dlogits) {
  const std::int64_t B = probs.dim(0), K = probs.dim(1);
  const T scale = dloss / static_cast<T>(B);
  for (std::int64_t b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    for (std::int64_t k = 0; k < K; ++k) {
      (*dlogits)[b * K + k] += scale * (probs[b * K + k] - (k == y ? T{1} : T{0}));
    }
  }
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::span<const int> perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: permutation rank mismatch");
  std::vector<int> seen(static_cast<std::size_t>(r), 0);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]++) throw ShapeError("permute: invalid permutation");
  }
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<std::int64_t> in_stride(static_cast<std::size_t>(r), 1);
  for (int d = r - 2; d >= 0; --d) {
    in_stride[static_cast<std::size_t>(d)] = in_stride[static_cast<std::size_t>(d + 1)] * x.shape()[static_cast<std::size_t>(d + 1)];
  }
  std::vector<std::int64_t> stride(static_cast<std::size_t>(r));
  for (int d = 0; d < r; ++d) {
    out_shape[static_cast<std::size_t>(d)] = x.shape()[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
    stride[static_cast<std::size_t>(d)] = in_stride[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
  }
  Tensor<T> y(out_shape);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t src = 0;
  for (std::int64_t o = 0; o < y.numel(); ++o) {
    y[o] = x[src];
    for (int d = r - 1; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      if (++idx[du] < out_shape[du]) {
        src += stride[du];
        break;
      }
      src -= stride[du] * (out_shape[du] - 1);
      idx[du] = 0;
    }
  }
  return y;
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) throw ShapeError("mean_axis: axis out of range for " + shape_str(x.shape()));
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::int64_t A = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> y(out_shape);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t a = 0; a < A; ++a)
      for (std::int64_t i = 0; i < inner; ++i) y[o * inner + i] += x[(o * A + a) * inner + i];
  const T inv = T{1} / static_cast<T>(A);
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] *= inv;
  return y;
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>* const> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor<T>& first = *parts[0];
  if (axis < 0) axis += first.rank();
  if (axis < 0 || axis >= first.rank()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first.shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const Tensor<T>* p : parts) {
    if (p->rank() != first.rank()) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < first.rank(); ++d) {
      if (d != axis && p->dim(d) != first.dim(d)) {
        throw ShapeError("concat: axis " + std::to_string(d) + " differs: " + shape_str(p->shape()) + " vs " +
                         shape_str(first.shape()));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += p->dim(axis);
  }
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first.dim(d);
  for (int d = axis + 1; d < first.rank(); ++d) inner *= first.dim(d);
  Tensor<T> y(out_shape);
  T* dst = y.ptr();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (const Tensor<T>* p : parts) {
      const std::int64_t slab = p->dim(axis) * inner;
      const T* src = p->ptr() + o * slab;
      dst = std::copy(src, src + slab, dst);
    }
  }
  return y;
}

template <typename T>
Tensor<T> gather_last(const Tensor<T>& x, std::span<const std::int64_t> index) {
  const std::int64_t L = x.dim(-1);
  const std::int64_t rows = x.numel() / L;
  Shape out_shape = x.shape();
  out_shape.back() = static_cast<std::int64_t>(index.size());
  Tensor<T> y(out_shape);
  const auto n = static_cast<std::int64_t>(index.size());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t t = 0; t < n; ++t) {
      const std::int64_t src = index[static_cast<std::size_t>(t)];
      if (src < 0 || src >= L) throw ShapeError("gather_last: index out of range");
      y[r * n + t] = x[r * L + src];
    }
  return y;
}

template <typename T>
void gather_last_backward(const Tensor<T>& dy, std::span<const std::int64_t> index, Tensor<T>* dx) {
  const std::int64_t L = dx->dim(-1);
  const std::int64_t rows = dx->numel() / L;
  const auto n = static_cast<std::int64_t>(index.size());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t t = 0; t < n; ++t) (*dx)[r * L + index[static_cast<std::size_t>(t)]] += dy[r * n + t];
}

std::vector<std::int64_t> nearest_resample_index(std::int64_t length, std::int64_t target) {
  if (length < 1 || target < 1) throw ValidationError("resample: lengths must be >= 1");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(target));
  for (std::int64_t t = 0; t < target; ++t) idx[static_cast<std::size_t>(t)] = (t * length) / target;
  return idx;
}

#define STNET_INSTANTIATE(T)                                                                                        \
  template Tensor<T> conv_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const ConvGeometry&);      \
  template void conv_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvGeometry&,           \
                              Tensor<T>*, Tensor<T>*, Tensor<T>*);                                                 \
  template Tensor<T> batchnorm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,           \
                                       Tensor<T>&, Mode, const BatchNormOptions&, BatchNormSaved<T>*);             \
  template void batchnorm_backward(const Tensor<T>&, const Tensor<T>&, const BatchNormSaved<T>&, Mode, Tensor<T>*, \
                                   Tensor<T>*, Tensor<T>*);                                                        \
  template Tensor<T> pool_forward(const Tensor<T>&, PoolKind, const PoolGeometry&, std::vector<std::int64_t>*);    \
  template void pool_backward(const Tensor<T>&, PoolKind, const PoolGeometry&, const std::vector<std::int64_t>&,   \
                              Tensor<T>*);                                                                         \
  template Tensor<T> global_pool_forward(const Tensor<T>&, PoolKind, std::vector<std::int64_t>*);                  \
  template void global_pool_backward(const Tensor<T>&, const Shape&, PoolKind, const std::vector<std::int64_t>&,   \
                                     Tensor<T>*);                                                                  \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                         \
  template void linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*,      \
                                Tensor<T>*);                                                                       \
  template Tensor<T> relu_forward(const Tensor<T>&);                                                               \
  template void relu_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                                     \
  template Tensor<T> softmax(const Tensor<T>&);                                                                    \
  template T softmax_xent_forward(const Tensor<T>&, std::span<const int>, Tensor<T>*);                             \
  template void softmax_xent_backward(const Tensor<T>&, std::span<const int>, T, Tensor<T>*);                      \
  template Tensor<T> permute(const Tensor<T>&, std::span<const int>);                                              \
  template Tensor<T> mean_axis(const Tensor<T>&, int);                                                             \
  template Tensor<T> concat(std::span<const Tensor<T>* const>, int);                                               \
  template Tensor<T> gather_last(const Tensor<T>&, std::span<const std::int64_t>);                                 \
  template void gather_last_backward(const Tensor<T>&, std::span<const std::int64_t>, Tensor<T>*);

STNET_INSTANTIATE(float)
STNET_INSTANTIATE(double)

#undef STNET_INSTANTIATE

}  // namespace stnet::kernels
