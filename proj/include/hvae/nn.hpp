#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "hvae/autodiff.hpp"
#include "hvae/tensor.hpp"

namespace hvae::nn {

using ad::Var;

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;

namespace detail {

// col has layout [C*kh*kw, OH*OW] for one sample.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int OH, int OW,
            T* col) {
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* dst = col + static_cast<long>((c * kh + ki) * kw + kj) * OH * OW;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst + static_cast<long>(oy) * OW, dst + static_cast<long>(oy + 1) * OW, T(0));
                        continue;
                    }
                    const T* src_row = x + static_cast<long>(c) * H * W + static_cast<long>(iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        const int ix = ox * stride + kj - pad;
                        dst[static_cast<long>(oy) * OW + ox] = (ix >= 0 && ix < W) ? src_row[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accum(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, int OH,
                  int OW, T* dx) {
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* src = col + static_cast<long>((c * kh + ki) * kw + kj) * OH * OW;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= H) continue;
                    T* dst_row = dx + static_cast<long>(c) * H * W + static_cast<long>(iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        const int ix = ox * stride + kj - pad;
                        if (ix >= 0 && ix < W) dst_row[ix] += src[static_cast<long>(oy) * OW + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-D convolution, NCHW input, OIHW weights, optional bias. im2col + GEMM;
/// the column buffer is rebuilt in the backward pass instead of being stored,
/// trading a little compute for activation memory.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1, int pad = -1) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    require(xs.size() == 4 && ws.size() == 4, "conv2d expects NCHW input and OIHW weights");
    const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const int O = ws[0], kh = ws[2], kw = ws[3];
    require(ws[1] == C, "conv2d channel mismatch: input " + shape_str(xs) + " weights " + shape_str(ws));
    if (pad < 0) pad = kh / 2;  // 'same' for odd kernels at stride 1
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    const int K = C * kh * kw;
    const long plane = static_cast<long>(OH) * OW;
    const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);

    Tensor<T> out(Shape{N, O, OH, OW});
    {
        ConstMapRM<T> wm(w.value().data(), O, K);
        std::vector<T> col(pointwise ? 0 : static_cast<size_t>(K) * plane);
        for (int n = 0; n < N; ++n) {
            const T* xn = x.value().data() + static_cast<long>(n) * C * H * W;
            MapRM<T> yn(out.data() + static_cast<long>(n) * O * plane, O, plane);
            if (pointwise) {
                ConstMapRM<T> cm(xn, K, plane);
                yn.noalias() = wm * cm;
            } else {
                detail::im2col(xn, C, H, W, kh, kw, stride, pad, OH, OW, col.data());
                ConstMapRM<T> cm(col.data(), K, plane);
                yn.noalias() = wm * cm;
            }
        }
        if (b.defined()) {
            require(b.numel() == O, "conv2d bias size mismatch");
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < O; ++o) {
                    T* row = out.data() + (static_cast<long>(n) * O + o) * plane;
                    const T bo = b.value()[o];
                    for (long i = 0; i < plane; ++i) row[i] += bo;
                }
        }
    }

    std::vector<Var<T>> parents{x, w};
    if (b.defined()) parents.push_back(b);
    const bool has_bias = b.defined();
    return ad::make_op<T>(std::move(out), std::move(parents),
                      [=](ad::Node<T>& node) {
                          ad::Node<T>& xn = *node.parents[0];
                          ad::Node<T>& wn = *node.parents[1];
                          ConstMapRM<T> wm(wn.value.data(), O, K);

                          if (has_bias) {
                              ad::Node<T>& bn = *node.parents[2];
                              if (bn.requires_grad) {
                                  bn.ensure_grad();
                                  for (int n = 0; n < N; ++n)
                                      for (int o = 0; o < O; ++o) {
                                          const T* row = node.grad.data() + (static_cast<long>(n) * O + o) * plane;
                                          T s = T(0);
                                          for (long i = 0; i < plane; ++i) s += row[i];
                                          bn.grad[o] += s;
                                      }
                              }
                          }

                          if (xn.requires_grad) xn.ensure_grad();
                          if (wn.requires_grad) wn.ensure_grad();

                          std::vector<T> col(pointwise ? 0 : static_cast<size_t>(K) * plane);
                          std::vector<T> dcol(static_cast<size_t>(K) * plane);
                          for (int n = 0; n < N; ++n) {
                              const T* xv = xn.value.data() + static_cast<long>(n) * C * H * W;
                              ConstMapRM<T> dyn(node.grad.data() + static_cast<long>(n) * O * plane, O, plane);
                              if (wn.requires_grad) {
                                  MapRM<T> dwm(wn.grad.data(), O, K);
                                  if (pointwise) {
                                      ConstMapRM<T> cm(xv, K, plane);
                                      dwm.noalias() += dyn * cm.transpose();
                                  } else {
                                      detail::im2col(xv, C, H, W, kh, kw, stride, pad, OH, OW, col.data());
                                      ConstMapRM<T> cm(col.data(), K, plane);
                                      dwm.noalias() += dyn * cm.transpose();
                                  }
                              }
                              if (xn.requires_grad) {
                                  T* dxn = xn.grad.data() + static_cast<long>(n) * C * H * W;
                                  if (pointwise) {
                                      MapRM<T> dxm(dxn, K, plane);
                                      dxm.noalias() += wm.transpose() * dyn;
                                  } else {
                                      MapRM<T> dcm(dcol.data(), K, plane);
                                      dcm.noalias() = wm.transpose() * dyn;
                                      detail::col2im_accum(dcol.data(), C, H, W, kh, kw, stride, pad, OH, OW, dxn);
                                  }
                              }
                          }
                      });
}

/// Nearest-neighbor 2x upsampling.
template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
    const Shape& s = x.shape();
    require(s.size() == 4, "upsample expects NCHW");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor<T> out(Shape{N, C, 2 * H, 2 * W});
    for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
        const T* src = x.value().data() + nc * H * W;
        T* dst = out.data() + nc * 4L * H * W;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                const T v = src[static_cast<long>(y) * W + xx];
                T* d = dst + (2L * y) * (2 * W) + 2 * xx;
                d[0] = v;
                d[1] = v;
                d[2 * W] = v;
                d[2 * W + 1] = v;
            }
    }
    return ad::make_op<T>(std::move(out), {x}, [N, C, H, W](ad::Node<T>& node) {
        ad::Node<T>& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
            T* dst = p.grad.data() + nc * H * W;
            const T* g = node.grad.data() + nc * 4L * H * W;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    const T* gp = g + (2L * y) * (2 * W) + 2 * xx;
                    dst[static_cast<long>(y) * W + xx] += gp[0] + gp[1] + gp[2 * W] + gp[2 * W + 1];
                }
        }
    });
}

/// Bilinear upsampling by an integer factor (half-pixel centers, edges
/// clamped). Backward scatters the interpolation weights.
template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int factor) {
    require(factor >= 1, "bilinear factor must be >= 1");
    const Shape& s = x.shape();
    require(s.size() == 4, "upsample expects NCHW");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const int OH = H * factor, OW = W * factor;

    // Precompute per-axis source indices and weights.
    std::vector<int> y0(OH), x0(OW);
    std::vector<T> ty(OH), tx(OW);
    auto axis = [factor](int n_in, int i_out, int& i0, T& t) {
        const double src = (i_out + 0.5) / factor - 0.5;
        double f = std::floor(src);
        double frac = src - f;
        int i = static_cast<int>(f);
        if (i < 0) { i = 0; frac = 0.0; }
        if (i >= n_in - 1) { i = n_in - 1; frac = 0.0; }
        i0 = i;
        t = static_cast<T>(frac);
    };
    for (int oy = 0; oy < OH; ++oy) axis(H, oy, y0[oy], ty[oy]);
    for (int ox = 0; ox < OW; ++ox) axis(W, ox, x0[ox], tx[ox]);

    Tensor<T> out(Shape{N, C, OH, OW});
    for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
        const T* src = x.value().data() + nc * H * W;
        T* dst = out.data() + nc * static_cast<long>(OH) * OW;
        for (int oy = 0; oy < OH; ++oy) {
            const int yy = y0[oy];
            const int yy1 = std::min(yy + 1, H - 1);
            const T wy = ty[oy];
            for (int ox = 0; ox < OW; ++ox) {
                const int xx = x0[ox];
                const int xx1 = std::min(xx + 1, W - 1);
                const T wx = tx[ox];
                const T v00 = src[static_cast<long>(yy) * W + xx];
                const T v01 = src[static_cast<long>(yy) * W + xx1];
                const T v10 = src[static_cast<long>(yy1) * W + xx];
                const T v11 = src[static_cast<long>(yy1) * W + xx1];
                dst[static_cast<long>(oy) * OW + ox] =
                    (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    }
    return ad::make_op<T>(std::move(out), {x}, [N, C, H, W, OH, OW, y0, x0, ty, tx](ad::Node<T>& node) {
        ad::Node<T>& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
            T* dst = p.grad.data() + nc * H * W;
            const T* g = node.grad.data() + nc * static_cast<long>(OH) * OW;
            for (int oy = 0; oy < OH; ++oy) {
                const int yy = y0[oy];
                const int yy1 = std::min(yy + 1, H - 1);
                const T wy = ty[oy];
                for (int ox = 0; ox < OW; ++ox) {
                    const int xx = x0[ox];
                    const int xx1 = std::min(xx + 1, W - 1);
                    const T wx = tx[ox];
                    const T gv = g[static_cast<long>(oy) * OW + ox];
                    dst[static_cast<long>(yy) * W + xx] += (1 - wy) * (1 - wx) * gv;
                    dst[static_cast<long>(yy) * W + xx1] += (1 - wy) * wx * gv;
                    dst[static_cast<long>(yy1) * W + xx] += wy * (1 - wx) * gv;
                    dst[static_cast<long>(yy1) * W + xx1] += wy * wx * gv;
                }
            }
        }
    });
}

/// Broadcast a [C,H,W] (or [1,C,H,W]) tensor across the batch dimension.
template <typename T>
Var<T> broadcast_batch(const Var<T>& x, int N) {
    Shape s = x.shape();
    require(s.size() == 4 && s[0] == 1, "broadcast_batch expects [1,C,H,W]");
    const long plane = x.numel();
    Tensor<T> out(Shape{N, s[1], s[2], s[3]});
    for (int n = 0; n < N; ++n)
        std::copy(x.value().data(), x.value().data() + plane, out.data() + static_cast<long>(n) * plane);
    return ad::make_op<T>(std::move(out), {x}, [N, plane](ad::Node<T>& node) {
        ad::Node<T>& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int n = 0; n < N; ++n) {
            const T* g = node.grad.data() + static_cast<long>(n) * plane;
            for (long i = 0; i < plane; ++i) p.grad[i] += g[i];
        }
    });
}

/// Batch slice [n0, n1) of an NCHW tensor.
template <typename T>
Var<T> slice_batch(const Var<T>& x, int n0, int n1) {
    const Shape& s = x.shape();
    require(s.size() == 4 && 0 <= n0 && n0 < n1 && n1 <= s[0], "bad batch slice");
    const long plane = static_cast<long>(s[1]) * s[2] * s[3];
    Tensor<T> out(Shape{n1 - n0, s[1], s[2], s[3]});
    std::copy(x.value().data() + n0 * plane, x.value().data() + n1 * plane, out.data());
    return ad::make_op<T>(std::move(out), {x}, [n0, plane](ad::Node<T>& node) {
        ad::Node<T>& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        T* dst = p.grad.data() + n0 * plane;
        for (long i = 0; i < node.grad.numel(); ++i) dst[i] += node.grad[i];
    });
}

/// Channel slice [c0, c1) of an NCHW tensor.
template <typename T>
Var<T> slice_channels(const Var<T>& x, int c0, int c1) {
    const Shape& s = x.shape();
    require(s.size() == 4 && 0 <= c0 && c0 < c1 && c1 <= s[1], "bad channel slice");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const int Cs = c1 - c0;
    const long hw = static_cast<long>(H) * W;
    Tensor<T> out(Shape{N, Cs, H, W});
    for (int n = 0; n < N; ++n)
        std::copy(x.value().data() + (static_cast<long>(n) * C + c0) * hw,
                  x.value().data() + (static_cast<long>(n) * C + c1) * hw,
                  out.data() + static_cast<long>(n) * Cs * hw);
    return ad::make_op<T>(std::move(out), {x}, [N, C, c0, Cs, hw](ad::Node<T>& node) {
        ad::Node<T>& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int n = 0; n < N; ++n) {
            const T* g = node.grad.data() + static_cast<long>(n) * Cs * hw;
            T* dst = p.grad.data() + (static_cast<long>(n) * C + c0) * hw;
            for (long i = 0; i < static_cast<long>(Cs) * hw; ++i) dst[i] += g[i];
        }
    });
}

}  // namespace hvae::nn
