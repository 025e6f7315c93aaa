#ifndef MTNET_OPS_HPP_
#define MTNET_OPS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "mtnet/gemm.hpp"
#include "mtnet/tensor.hpp"

namespace mtnet {

using Triple = std::array<int, 3>;

namespace detail {

template <class T>
bool any_requires_grad(const std::initializer_list<TensorPtr<T>>& ts) {
  for (auto& t : ts)
    if (t->requires_grad) return true;
  return false;
}

template <class T>
void attach(const TensorPtr<T>& out, std::initializer_list<TensorPtr<T>> parents,
            std::function<void(const Tensor<T>&)> backprop) {
  if (!any_requires_grad(parents)) return;
  out->requires_grad = true;
  out->parents.assign(parents.begin(), parents.end());
  out->backprop = std::move(backprop);
}

// Scatters an [N,C,D,H,W] image into a [C*kd*kh*kw, od*oh*ow] patch matrix
// for one sample; zero padding outside the volume.
template <class T>
void im2col(const T* img, int C, int D, int H, int W, const Triple& k,
            const Triple& stride, const Triple& pad, const Triple& out_dims,
            T* col) {
  const int od = out_dims[0], oh = out_dims[1], ow = out_dims[2];
  const std::int64_t ov = std::int64_t(od) * oh * ow;
  std::int64_t row = 0;
  for (int c = 0; c < C; ++c)
    for (int zd = 0; zd < k[0]; ++zd)
      for (int zh = 0; zh < k[1]; ++zh)
        for (int zw = 0; zw < k[2]; ++zw, ++row) {
          T* dst = col + row * ov;
          const T* src = img + std::int64_t(c) * D * H * W;
          std::int64_t idx = 0;
          for (int d = 0; d < od; ++d) {
            const int id = d * stride[0] - pad[0] + zd;
            for (int h = 0; h < oh; ++h) {
              const int ih = h * stride[1] - pad[1] + zh;
              const bool in_dh = id >= 0 && id < D && ih >= 0 && ih < H;
              for (int w = 0; w < ow; ++w, ++idx) {
                const int iw = w * stride[2] - pad[2] + zw;
                dst[idx] = (in_dh && iw >= 0 && iw < W)
                               ? src[(std::int64_t(id) * H + ih) * W + iw]
                               : T(0);
              }
            }
          }
        }
}

// Adjoint of im2col: accumulates the patch matrix back into the image.
template <class T>
void col2im(const T* col, int C, int D, int H, int W, const Triple& k,
            const Triple& stride, const Triple& pad, const Triple& out_dims,
            T* img) {
  const int od = out_dims[0], oh = out_dims[1], ow = out_dims[2];
  const std::int64_t ov = std::int64_t(od) * oh * ow;
  std::int64_t row = 0;
  for (int c = 0; c < C; ++c)
    for (int zd = 0; zd < k[0]; ++zd)
      for (int zh = 0; zh < k[1]; ++zh)
        for (int zw = 0; zw < k[2]; ++zw, ++row) {
          const T* src = col + row * ov;
          T* dst = img + std::int64_t(c) * D * H * W;
          std::int64_t idx = 0;
          for (int d = 0; d < od; ++d) {
            const int id = d * stride[0] - pad[0] + zd;
            for (int h = 0; h < oh; ++h) {
              const int ih = h * stride[1] - pad[1] + zh;
              const bool in_dh = id >= 0 && id < D && ih >= 0 && ih < H;
              for (int w = 0; w < ow; ++w, ++idx) {
                const int iw = w * stride[2] - pad[2] + zw;
                if (in_dh && iw >= 0 && iw < W)
                  dst[(std::int64_t(id) * H + ih) * W + iw] += src[idx];
              }
            }
          }
        }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution and friends
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> conv3d(const TensorPtr<T>& input, const TensorPtr<T>& kernel,
                    const TensorPtr<T>& bias, const Triple& stride = {1, 1, 1},
                    const Triple& pad = {0, 0, 0}) {
  require_shape(input->shape.size() == 5,
                "conv3d input must be [N,C,D,H,W], got " +
                    shape_str(input->shape));
  require_shape(kernel->shape.size() == 5,
                "conv3d kernel must be [F,C,kd,kh,kw], got " +
                    shape_str(kernel->shape));
  const int N = input->shape[0], C = input->shape[1], D = input->shape[2],
            H = input->shape[3], W = input->shape[4];
  const int F = kernel->shape[0];
  require_shape(kernel->shape[1] == C,
                "conv3d channel mismatch: input has " + std::to_string(C) +
                    " channels, kernel expects " +
                    std::to_string(kernel->shape[1]));
  require_shape(bias->shape == Shape{F},
                "conv3d bias must be [F]=" + std::to_string(F) + ", got " +
                    shape_str(bias->shape));
  const Triple k = {kernel->shape[2], kernel->shape[3], kernel->shape[4]};
  for (int a = 0; a < 3; ++a) {
    require_shape(stride[a] >= 1, "conv3d stride must be >= 1");
    require_shape(pad[a] >= 0, "conv3d padding must be >= 0");
  }
  const Triple in_dims = {D, H, W};
  Triple out_dims;
  for (int a = 0; a < 3; ++a) {
    const int span = in_dims[a] + 2 * pad[a] - k[a];
    require_shape(span >= 0 && span / stride[a] + 1 >= 1,
                  "conv3d produces an empty output along axis " +
                      std::to_string(a) + " for input " +
                      shape_str(input->shape) + " and kernel " +
                      shape_str(kernel->shape));
    out_dims[a] = span / stride[a] + 1;
  }
  const int od = out_dims[0], oh = out_dims[1], ow = out_dims[2];
  const std::int64_t CK = std::int64_t(C) * k[0] * k[1] * k[2];
  const std::int64_t OV = std::int64_t(od) * oh * ow;
  const std::int64_t in_sz = std::int64_t(C) * D * H * W;

  auto out = zeros<T>({N, F, od, oh, ow});
  std::vector<T> col(CK * OV);
  for (int n = 0; n < N; ++n) {
    detail::im2col(input->data.data() + n * in_sz, C, D, H, W, k, stride, pad,
                   out_dims, col.data());
    T* o = out->data.data() + std::int64_t(n) * F * OV;
    gemm(false, false, F, int(OV), int(CK), T(1), kernel->data.data(), int(CK),
         col.data(), int(OV), T(0), o, int(OV));
    for (int f = 0; f < F; ++f) {
      const T b = bias->data[f];
      for (std::int64_t i = 0; i < OV; ++i) o[f * OV + i] += b;
    }
  }

  detail::attach<T>(out, {input, kernel, bias}, [=](const Tensor<T>& self) {
    std::vector<T> col(CK * OV);
    std::vector<T> colg;
    if (input->requires_grad) colg.resize(CK * OV);
    for (int n = 0; n < N; ++n) {
      const T* g = self.grad.data() + std::int64_t(n) * F * OV;
      if (bias->requires_grad)
        for (int f = 0; f < F; ++f) {
          T s = 0;
          for (std::int64_t i = 0; i < OV; ++i) s += g[f * OV + i];
          bias->grad[f] += s;
        }
      if (kernel->requires_grad) {
        detail::im2col(input->data.data() + n * in_sz, C, D, H, W, k, stride,
                       pad, out_dims, col.data());
        gemm(false, true, F, int(CK), int(OV), T(1), g, int(OV), col.data(),
             int(OV), T(1), kernel->grad.data(), int(CK));
      }
      if (input->requires_grad) {
        gemm(true, false, int(CK), int(OV), F, T(1), kernel->data.data(),
             int(CK), g, int(OV), T(0), colg.data(), int(OV));
        detail::col2im(colg.data(), C, D, H, W, k, stride, pad, out_dims,
                       input->grad.data() + n * in_sz);
      }
    }
  });
  return out;
}

template <class T>
TensorPtr<T> upsample3d_nearest(const TensorPtr<T>& input, const Triple& factor) {
  require_shape(input->shape.size() == 5,
                "upsample3d input must be [N,C,D,H,W]");
  for (int a = 0; a < 3; ++a)
    require_shape(factor[a] >= 1, "upsample factor must be >= 1");
  const int N = input->shape[0], C = input->shape[1], D = input->shape[2],
            H = input->shape[3], W = input->shape[4];
  const int OD = D * factor[0], OH = H * factor[1], OW = W * factor[2];
  auto out = zeros<T>({N, C, OD, OH, OW});
  const std::int64_t in_sp = std::int64_t(D) * H * W;
  const std::int64_t out_sp = std::int64_t(OD) * OH * OW;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = input->data.data() + nc * in_sp;
    T* dst = out->data.data() + nc * out_sp;
    for (int d = 0; d < OD; ++d)
      for (int h = 0; h < OH; ++h)
        for (int w = 0; w < OW; ++w)
          dst[(std::int64_t(d) * OH + h) * OW + w] =
              src[(std::int64_t(d / factor[0]) * H + h / factor[1]) * W +
                  w / factor[2]];
  }
  detail::attach<T>(out, {input}, [=](const Tensor<T>& self) {
    for (int nc = 0; nc < N * C; ++nc) {
      const T* g = self.grad.data() + nc * out_sp;
      T* gi = input->grad.data() + nc * in_sp;
      for (int d = 0; d < OD; ++d)
        for (int h = 0; h < OH; ++h)
          for (int w = 0; w < OW; ++w)
            gi[(std::int64_t(d / factor[0]) * H + h / factor[1]) * W +
               w / factor[2]] += g[(std::int64_t(d) * OH + h) * OW + w];
    }
  });
  return out;
}

namespace detail {

template <class T>
TensorPtr<T> pool3d(const TensorPtr<T>& input, const Triple& window, bool max) {
  require_shape(input->shape.size() == 5, "pool3d input must be [N,C,D,H,W]");
  const int N = input->shape[0], C = input->shape[1], D = input->shape[2],
            H = input->shape[3], W = input->shape[4];
  const Triple dims = {D, H, W};
  for (int a = 0; a < 3; ++a)
    require_shape(window[a] >= 1 && dims[a] % window[a] == 0,
                  "pool window " + std::to_string(window[a]) +
                      " does not divide spatial dim " + std::to_string(dims[a]));
  const int od = D / window[0], oh = H / window[1], ow = W / window[2];
  auto out = zeros<T>({N, C, od, oh, ow});
  const std::int64_t in_sp = std::int64_t(D) * H * W;
  const std::int64_t out_sp = std::int64_t(od) * oh * ow;
  const T wsize = T(window[0]) * window[1] * window[2];
  auto argmax = max ? std::make_shared<std::vector<std::int64_t>>(
                          std::size_t(N) * C * out_sp)
                    : nullptr;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = input->data.data() + nc * in_sp;
    T* dst = out->data.data() + nc * out_sp;
    std::int64_t oidx = 0;
    for (int d = 0; d < od; ++d)
      for (int h = 0; h < oh; ++h)
        for (int w = 0; w < ow; ++w, ++oidx) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          T sum = 0;
          for (int zd = 0; zd < window[0]; ++zd)
            for (int zh = 0; zh < window[1]; ++zh)
              for (int zw = 0; zw < window[2]; ++zw) {
                const std::int64_t idx =
                    (std::int64_t(d * window[0] + zd) * H + h * window[1] + zh) *
                        W +
                    w * window[2] + zw;
                const T v = src[idx];
                sum += v;
                if (v > best) {  // first occurrence wins ties
                  best = v;
                  best_idx = idx;
                }
              }
          if (max) {
            dst[oidx] = best;
            (*argmax)[nc * out_sp + oidx] = best_idx;
          } else {
            dst[oidx] = sum / wsize;
          }
        }
  }
  detail::attach<T>(out, {input}, [=](const Tensor<T>& self) {
    for (int nc = 0; nc < N * C; ++nc) {
      const T* g = self.grad.data() + nc * out_sp;
      T* gi = input->grad.data() + nc * in_sp;
      if (max) {
        for (std::int64_t o = 0; o < out_sp; ++o)
          gi[(*argmax)[nc * out_sp + o]] += g[o];
      } else {
        std::int64_t oidx = 0;
        for (int d = 0; d < od; ++d)
          for (int h = 0; h < oh; ++h)
            for (int w = 0; w < ow; ++w, ++oidx) {
              const T share = g[oidx] / wsize;
              for (int zd = 0; zd < window[0]; ++zd)
                for (int zh = 0; zh < window[1]; ++zh)
                  for (int zw = 0; zw < window[2]; ++zw)
                    gi[(std::int64_t(d * window[0] + zd) * H + h * window[1] +
                        zh) *
                           W +
                       w * window[2] + zw] += share;
            }
      }
    }
  });
  return out;
}

}  // namespace detail

template <class T>
TensorPtr<T> maxpool3d(const TensorPtr<T>& input, const Triple& window) {
  return detail::pool3d(input, window, true);
}

template <class T>
TensorPtr<T> avgpool3d(const TensorPtr<T>& input, const Triple& window) {
  return detail::pool3d(input, window, false);
}

template <class T>
TensorPtr<T> global_avg_pool(const TensorPtr<T>& input) {
  require_shape(input->shape.size() == 5, "global pool input must be 5-d");
  const int N = input->shape[0], C = input->shape[1];
  const std::int64_t sp =
      std::int64_t(input->shape[2]) * input->shape[3] * input->shape[4];
  auto out = zeros<T>({N, C});
  for (int nc = 0; nc < N * C; ++nc) {
    T s = 0;
    const T* src = input->data.data() + nc * sp;
    for (std::int64_t i = 0; i < sp; ++i) s += src[i];
    out->data[nc] = s / T(sp);
  }
  detail::attach<T>(out, {input}, [=](const Tensor<T>& self) {
    for (int nc = 0; nc < N * C; ++nc) {
      const T share = self.grad[nc] / T(sp);
      T* gi = input->grad.data() + nc * sp;
      for (std::int64_t i = 0; i < sp; ++i) gi[i] += share;
    }
  });
  return out;
}

template <class T>
TensorPtr<T> global_max_pool(const TensorPtr<T>& input) {
  require_shape(input->shape.size() == 5, "global pool input must be 5-d");
  const int N = input->shape[0], C = input->shape[1];
  const std::int64_t sp =
      std::int64_t(input->shape[2]) * input->shape[3] * input->shape[4];
  auto out = zeros<T>({N, C});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(std::size_t(N) * C);
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = input->data.data() + nc * sp;
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < sp; ++i)
      if (src[i] > src[best]) best = i;
    out->data[nc] = src[best];
    (*argmax)[nc] = best;
  }
  detail::attach<T>(out, {input}, [=](const Tensor<T>& self) {
    for (int nc = 0; nc < N * C; ++nc)
      input->grad[nc * sp + (*argmax)[nc]] += self.grad[nc];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dense / activations
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> dense(const TensorPtr<T>& x, const TensorPtr<T>& w,
                   const TensorPtr<T>& b) {
  require_shape(x->shape.size() == 2 && w->shape.size() == 2,
                "dense expects x [N,K] and w [K,M]");
  const int N = x->shape[0], K = x->shape[1], M = w->shape[1];
  require_shape(w->shape[0] == K,
                "dense inner dimension mismatch: x " + shape_str(x->shape) +
                    " vs w " + shape_str(w->shape));
  require_shape(b->shape == Shape{M}, "dense bias must be [M]");
  auto out = zeros<T>({N, M});
  gemm(false, false, N, M, K, T(1), x->data.data(), K, w->data.data(), M, T(0),
       out->data.data(), M);
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < M; ++m) out->data[n * M + m] += b->data[m];
  detail::attach<T>(out, {x, w, b}, [=](const Tensor<T>& self) {
    if (x->requires_grad)
      gemm(false, true, N, K, M, T(1), self.grad.data(), M, w->data.data(), M,
           T(1), x->grad.data(), K);
    if (w->requires_grad)
      gemm(true, false, K, M, N, T(1), x->data.data(), K, self.grad.data(), M,
           T(1), w->grad.data(), M);
    if (b->requires_grad)
      for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) b->grad[m] += self.grad[n * M + m];
  });
  return out;
}

namespace detail {

template <class T, class F, class DF>
TensorPtr<T> unary_op(const TensorPtr<T>& x, F&& fwd, DF&& dfdx) {
  auto out = zeros<T>(x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i)
    out->data[i] = fwd(x->data[i]);
  detail::attach<T>(out, {x},
                    [x, dfdx = std::forward<DF>(dfdx)](const Tensor<T>& self) {
                      for (std::size_t i = 0; i < x->data.size(); ++i)
                        x->grad[i] += self.grad[i] * dfdx(x->data[i]);
                    });
  return out;
}

}  // namespace detail

template <class T>
TensorPtr<T> relu(const TensorPtr<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
TensorPtr<T> sigmoid(const TensorPtr<T>& x) {
  return detail::unary_op(
      x,
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T v) {
        const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                              : std::exp(v) / (T(1) + std::exp(v));
        return s * (T(1) - s);
      });
}

template <class T>
TensorPtr<T> abs_t(const TensorPtr<T>& x) {
  // subgradient 0 at the kink
  return detail::unary_op(
      x, [](T v) { return std::abs(v); },
      [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
TensorPtr<T> log10_t(const TensorPtr<T>& x) {
  const T inv_ln10 = T(1) / std::log(T(10));
  return detail::unary_op(
      x, [](T v) { return std::log10(v); },
      [inv_ln10](T v) { return inv_ln10 / v; });
}

template <class T>
TensorPtr<T> clamp_min(const TensorPtr<T>& x, T lo) {
  return detail::unary_op(
      x, [lo](T v) { return v < lo ? lo : v; },
      [lo](T v) { return v < lo ? T(0) : T(1); });
}

template <class T>
TensorPtr<T> clamp_max(const TensorPtr<T>& x, T hi) {
  return detail::unary_op(
      x, [hi](T v) { return v > hi ? hi : v; },
      [hi](T v) { return v > hi ? T(0) : T(1); });
}

template <class T>
TensorPtr<T> scale(const TensorPtr<T>& x, T c) {
  return detail::unary_op(x, [c](T v) { return c * v; },
                          [c](T) { return c; });
}

template <class T>
TensorPtr<T> add_const(const TensorPtr<T>& x, T c) {
  return detail::unary_op(x, [c](T v) { return v + c; }, [](T) { return T(1); });
}

template <class T>
TensorPtr<T> softmax(const TensorPtr<T>& x) {
  require_shape(x->shape.size() == 2, "softmax expects [N,K] logits");
  const int N = x->shape[0], K = x->shape[1];
  auto out = zeros<T>({N, K});
  for (int n = 0; n < N; ++n) {
    const T* row = x->data.data() + n * K;
    T mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    T sum = 0;
    for (int k = 0; k < K; ++k) {
      const T e = std::exp(row[k] - mx);
      out->data[n * K + k] = e;
      sum += e;
    }
    for (int k = 0; k < K; ++k) out->data[n * K + k] /= sum;
  }
  // capture probabilities by value; out itself must not be captured
  auto probs = std::make_shared<std::vector<T>>(out->data);
  detail::attach<T>(out, {x}, [=](const Tensor<T>& self) {
    for (int n = 0; n < N; ++n) {
      const T* p = probs->data() + n * K;
      const T* g = self.grad.data() + n * K;
      T dot = 0;
      for (int k = 0; k < K; ++k) dot += g[k] * p[k];
      for (int k = 0; k < K; ++k) x->grad[n * K + k] += p[k] * (g[k] - dot);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise binary, broadcast, concat, reductions, reshape
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void require_same_shape(const TensorPtr<T>& a, const TensorPtr<T>& b,
                        const char* op) {
  require_shape(a->shape == b->shape,
                std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                    " vs " + shape_str(b->shape));
}

}  // namespace detail

template <class T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  detail::require_same_shape(a, b, "add");
  auto out = zeros<T>(a->shape);
  for (std::size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] + b->data[i];
  detail::attach<T>(out, {a, b}, [=](const Tensor<T>& self) {
    if (a->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        a->grad[i] += self.grad[i];
    if (b->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        b->grad[i] += self.grad[i];
  });
  return out;
}

template <class T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  detail::require_same_shape(a, b, "sub");
  auto out = zeros<T>(a->shape);
  for (std::size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] - b->data[i];
  detail::attach<T>(out, {a, b}, [=](const Tensor<T>& self) {
    if (a->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        a->grad[i] += self.grad[i];
    if (b->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        b->grad[i] -= self.grad[i];
  });
  return out;
}

template <class T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  detail::require_same_shape(a, b, "mul");
  auto out = zeros<T>(a->shape);
  for (std::size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] * b->data[i];
  detail::attach<T>(out, {a, b}, [=](const Tensor<T>& self) {
    if (a->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        a->grad[i] += self.grad[i] * b->data[i];
    if (b->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        b->grad[i] += self.grad[i] * a->data[i];
  });
  return out;
}

template <class T>
TensorPtr<T> div(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  detail::require_same_shape(a, b, "div");
  auto out = zeros<T>(a->shape);
  for (std::size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] / b->data[i];
  detail::attach<T>(out, {a, b}, [=](const Tensor<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T inv = T(1) / b->data[i];
      if (a->requires_grad) a->grad[i] += self.grad[i] * inv;
      if (b->requires_grad)
        b->grad[i] -= self.grad[i] * a->data[i] * inv * inv;
    }
  });
  return out;
}

// x - s with scalar s broadcast over x.
template <class T>
TensorPtr<T> sub_bcast(const TensorPtr<T>& x, const TensorPtr<T>& s) {
  require_shape(s->size() == 1, "sub_bcast expects a scalar second argument");
  auto out = zeros<T>(x->shape);
  const T sv = s->data[0];
  for (std::size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = x->data[i] - sv;
  detail::attach<T>(out, {x, s}, [=](const Tensor<T>& self) {
    T sum = 0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (x->requires_grad) x->grad[i] += self.grad[i];
      sum += self.grad[i];
    }
    if (s->requires_grad) s->grad[0] -= sum;
  });
  return out;
}

template <class T>
TensorPtr<T> broadcast_mul_channels(const TensorPtr<T>& x,
                                    const TensorPtr<T>& g) {
  require_shape(x->shape.size() == 5 && g->shape.size() == 2,
                "broadcast_mul_channels expects x [N,C,D,H,W] and gate [N,C]");
  const int N = x->shape[0], C = x->shape[1];
  require_shape(g->shape[0] == N && g->shape[1] == C,
                "broadcast_mul_channels gate shape " + shape_str(g->shape) +
                    " incompatible with input " + shape_str(x->shape));
  const std::int64_t sp =
      std::int64_t(x->shape[2]) * x->shape[3] * x->shape[4];
  auto out = zeros<T>(x->shape);
  for (int nc = 0; nc < N * C; ++nc) {
    const T gv = g->data[nc];
    const T* src = x->data.data() + nc * sp;
    T* dst = out->data.data() + nc * sp;
    for (std::int64_t i = 0; i < sp; ++i) dst[i] = src[i] * gv;
  }
  detail::attach<T>(out, {x, g}, [=](const Tensor<T>& self) {
    for (int nc = 0; nc < N * C; ++nc) {
      const T* gr = self.grad.data() + nc * sp;
      if (x->requires_grad) {
        const T gv = g->data[nc];
        T* gx = x->grad.data() + nc * sp;
        for (std::int64_t i = 0; i < sp; ++i) gx[i] += gr[i] * gv;
      }
      if (g->requires_grad) {
        const T* src = x->data.data() + nc * sp;
        T s = 0;
        for (std::int64_t i = 0; i < sp; ++i) s += gr[i] * src[i];
        g->grad[nc] += s;
      }
    }
  });
  return out;
}

template <class T>
TensorPtr<T> broadcast_mul_spatial(const TensorPtr<T>& x,
                                   const TensorPtr<T>& mask) {
  require_shape(x->shape.size() == 5 && mask->shape.size() == 5 &&
                    mask->shape[1] == 1,
                "broadcast_mul_spatial expects x [N,C,D,H,W], mask [N,1,D,H,W]");
  const int N = x->shape[0], C = x->shape[1];
  require_shape(mask->shape[0] == N && mask->shape[2] == x->shape[2] &&
                    mask->shape[3] == x->shape[3] &&
                    mask->shape[4] == x->shape[4],
                "broadcast_mul_spatial mask shape " + shape_str(mask->shape) +
                    " incompatible with input " + shape_str(x->shape));
  const std::int64_t sp =
      std::int64_t(x->shape[2]) * x->shape[3] * x->shape[4];
  auto out = zeros<T>(x->shape);
  for (int n = 0; n < N; ++n) {
    const T* m = mask->data.data() + n * sp;
    for (int c = 0; c < C; ++c) {
      const T* src = x->data.data() + (std::int64_t(n) * C + c) * sp;
      T* dst = out->data.data() + (std::int64_t(n) * C + c) * sp;
      for (std::int64_t i = 0; i < sp; ++i) dst[i] = src[i] * m[i];
    }
  }
  detail::attach<T>(out, {x, mask}, [=](const Tensor<T>& self) {
    for (int n = 0; n < N; ++n) {
      const T* m = mask->data.data() + n * sp;
      for (int c = 0; c < C; ++c) {
        const std::int64_t off = (std::int64_t(n) * C + c) * sp;
        const T* gr = self.grad.data() + off;
        if (x->requires_grad) {
          T* gx = x->grad.data() + off;
          for (std::int64_t i = 0; i < sp; ++i) gx[i] += gr[i] * m[i];
        }
        if (mask->requires_grad) {
          const T* src = x->data.data() + off;
          T* gm = mask->grad.data() + n * sp;
          for (std::int64_t i = 0; i < sp; ++i) gm[i] += gr[i] * src[i];
        }
      }
    }
  });
  return out;
}

template <class T>
TensorPtr<T> concat_channels(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  require_shape(a->shape.size() == b->shape.size() && a->shape.size() >= 2,
                "concat_channels rank mismatch");
  for (std::size_t i = 0; i < a->shape.size(); ++i)
    if (i != 1)
      require_shape(a->shape[i] == b->shape[i],
                    "concat_channels non-channel dims differ: " +
                        shape_str(a->shape) + " vs " + shape_str(b->shape));
  const int N = a->shape[0], Ca = a->shape[1], Cb = b->shape[1];
  std::int64_t sp = 1;
  for (std::size_t i = 2; i < a->shape.size(); ++i) sp *= a->shape[i];
  Shape out_shape = a->shape;
  out_shape[1] = Ca + Cb;
  auto out = zeros<T>(out_shape);
  for (int n = 0; n < N; ++n) {
    std::copy_n(a->data.data() + std::int64_t(n) * Ca * sp, Ca * sp,
                out->data.data() + std::int64_t(n) * (Ca + Cb) * sp);
    std::copy_n(b->data.data() + std::int64_t(n) * Cb * sp, Cb * sp,
                out->data.data() + std::int64_t(n) * (Ca + Cb) * sp + Ca * sp);
  }
  detail::attach<T>(out, {a, b}, [=](const Tensor<T>& self) {
    for (int n = 0; n < N; ++n) {
      const T* g = self.grad.data() + std::int64_t(n) * (Ca + Cb) * sp;
      if (a->requires_grad) {
        T* ga = a->grad.data() + std::int64_t(n) * Ca * sp;
        for (std::int64_t i = 0; i < Ca * sp; ++i) ga[i] += g[i];
      }
      if (b->requires_grad) {
        T* gb = b->grad.data() + std::int64_t(n) * Cb * sp;
        for (std::int64_t i = 0; i < Cb * sp; ++i) gb[i] += g[Ca * sp + i];
      }
    }
  });
  return out;
}

template <class T>
TensorPtr<T> channel_mean(const TensorPtr<T>& x) {
  require_shape(x->shape.size() == 5, "channel_mean expects [N,C,D,H,W]");
  const int N = x->shape[0], C = x->shape[1];
  const std::int64_t sp =
      std::int64_t(x->shape[2]) * x->shape[3] * x->shape[4];
  auto out = zeros<T>({N, 1, x->shape[2], x->shape[3], x->shape[4]});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = x->data.data() + (std::int64_t(n) * C + c) * sp;
      T* dst = out->data.data() + std::int64_t(n) * sp;
      for (std::int64_t i = 0; i < sp; ++i) dst[i] += src[i] / T(C);
    }
  detail::attach<T>(out, {x}, [=](const Tensor<T>& self) {
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        T* gx = x->grad.data() + (std::int64_t(n) * C + c) * sp;
        const T* g = self.grad.data() + std::int64_t(n) * sp;
        for (std::int64_t i = 0; i < sp; ++i) gx[i] += g[i] / T(C);
      }
  });
  return out;
}

template <class T>
TensorPtr<T> channel_max(const TensorPtr<T>& x) {
  require_shape(x->shape.size() == 5, "channel_max expects [N,C,D,H,W]");
  const int N = x->shape[0], C = x->shape[1];
  const std::int64_t sp =
      std::int64_t(x->shape[2]) * x->shape[3] * x->shape[4];
  auto out = zeros<T>({N, 1, x->shape[2], x->shape[3], x->shape[4]});
  auto argmax =
      std::make_shared<std::vector<int>>(std::size_t(N) * sp);
  for (int n = 0; n < N; ++n)
    for (std::int64_t i = 0; i < sp; ++i) {
      int best = 0;
      T bv = x->data[(std::int64_t(n) * C) * sp + i];
      for (int c = 1; c < C; ++c) {
        const T v = x->data[(std::int64_t(n) * C + c) * sp + i];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out->data[std::int64_t(n) * sp + i] = bv;
      (*argmax)[std::int64_t(n) * sp + i] = best;
    }
  detail::attach<T>(out, {x}, [=](const Tensor<T>& self) {
    for (int n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < sp; ++i) {
        const int c = (*argmax)[std::int64_t(n) * sp + i];
        x->grad[(std::int64_t(n) * C + c) * sp + i] +=
            self.grad[std::int64_t(n) * sp + i];
      }
  });
  return out;
}

template <class T>
TensorPtr<T> sum_all(const TensorPtr<T>& x) {
  auto out = zeros<T>({1});
  T s = 0;
  for (T v : x->data) s += v;
  out->data[0] = s;
  detail::attach<T>(out, {x}, [=](const Tensor<T>& self) {
    const T g = self.grad[0];
    for (auto& gv : x->grad) gv += g;
  });
  return out;
}

template <class T>
TensorPtr<T> mean_all(const TensorPtr<T>& x) {
  const T n = T(x->data.size());
  auto out = zeros<T>({1});
  T s = 0;
  for (T v : x->data) s += v;
  out->data[0] = s / n;
  detail::attach<T>(out, {x}, [=](const Tensor<T>& self) {
    const T g = self.grad[0] / n;
    for (auto& gv : x->grad) gv += g;
  });
  return out;
}

template <class T>
TensorPtr<T> reshape(const TensorPtr<T>& x, Shape new_shape) {
  require_shape(numel(new_shape) == x->size(),
                "reshape from " + shape_str(x->shape) + " to " +
                    shape_str(new_shape) + " changes element count");
  auto out = make_tensor<T>(std::move(new_shape), x->data);
  detail::attach<T>(out, {x}, [=](const Tensor<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      x->grad[i] += self.grad[i];
  });
  return out;
}

// Extracts sample i of the batch axis as a [1,...] tensor.
template <class T>
TensorPtr<T> slice_batch(const TensorPtr<T>& x, int i) {
  require_shape(!x->shape.empty() && i >= 0 && i < x->shape[0],
                "slice_batch index out of range");
  const std::int64_t sz = x->size() / x->shape[0];
  Shape out_shape = x->shape;
  out_shape[0] = 1;
  std::vector<T> vals(x->data.begin() + i * sz, x->data.begin() + (i + 1) * sz);
  auto out = make_tensor<T>(std::move(out_shape), std::move(vals));
  detail::attach<T>(out, {x}, [=](const Tensor<T>& self) {
    for (std::int64_t j = 0; j < sz; ++j)
      x->grad[i * sz + j] += self.grad[j];
  });
  return out;
}

}  // namespace mtnet

#endif  // MTNET_OPS_HPP_
