#include "lpr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "blas.hpp"
#include "lpr/error.hpp"

namespace lpr::ops {

namespace {

template <typename Scalar>
using Impl = detail::TensorImpl<Scalar>;

template <typename Scalar>
void require_rank(const Tensor<Scalar>& t, int rank, const char* op, const char* what)
{
    if (!t.defined() || t.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + (t.defined() ? shape_str(t.shape()) : "undefined"));
    }
}

template <typename Scalar>
void im2col(const Scalar* img, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, Scalar* col)
{
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        const Scalar* src = img + static_cast<std::ptrdiff_t>(c) * height * width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                Scalar* dst = col + static_cast<std::ptrdiff_t>((c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    Scalar* row = dst + oy * out_w;
                    if (iy < 0 || iy >= height) {
                        std::fill(row, row + out_w, Scalar(0));
                        continue;
                    }
                    const Scalar* srow = src + static_cast<std::ptrdiff_t>(iy) * width;
                    if (stride == 1) {
                        for (int ox = 0; ox < out_w; ++ox) {
                            const int ix = ox - pad + kx;
                            row[ox] = (ix >= 0 && ix < width) ? srow[ix] : Scalar(0);
                        }
                    } else {
                        for (int ox = 0; ox < out_w; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            row[ox] = (ix >= 0 && ix < width) ? srow[ix] : Scalar(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename Scalar>
void col2im_add(const Scalar* col, int channels, int height, int width, int k, int stride, int pad,
                int out_h, int out_w, Scalar* img)
{
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        Scalar* dst = img + static_cast<std::ptrdiff_t>(c) * height * width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const Scalar* src = col + static_cast<std::ptrdiff_t>((c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= height) continue;
                    Scalar* drow = dst + static_cast<std::ptrdiff_t>(iy) * width;
                    const Scalar* srow = src + oy * out_w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < width) drow[ix] += srow[ox];
                    }
                }
            }
        }
    }
}

// Elementwise unary op helper: fwd(x) -> y, bwd(x, y) -> dy/dx.
template <typename Scalar, typename Fwd, typename Deriv>
Tensor<Scalar> unary(const char* name, const Tensor<Scalar>& x, Fwd fwd, Deriv deriv)
{
    auto in = x.data();
    std::vector<Scalar> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    auto xi = x.impl();
    return make_op_result<Scalar>(name, x.shape(), std::move(out), {x},
                                  [xi, deriv](const Impl<Scalar>& o) {
                                      auto gx = xi->grad_sink();
                                      if (gx.empty()) return;
                                      for (std::size_t i = 0; i < gx.size(); ++i) {
                                          gx[i] += o.grad[i] * deriv(xi->data[i], o.data[i]);
                                      }
                                  });
}

}  // namespace

int conv_out_size(int in, int kernel, int stride, int padding)
{
    if (kernel < 1 || stride < 1 || padding < 0) {
        throw ArgumentError("invalid window: kernel " + std::to_string(kernel) + ", stride " +
                            std::to_string(stride) + ", padding " + std::to_string(padding));
    }
    int span = in + 2 * padding - kernel;
    if (span < 0) return 0;
    return span / stride + 1;
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, int stride, int padding)
{
    require_rank(input, 4, "conv2d", "input");
    require_rank(weight, 4, "conv2d", "weight");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int oc = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != c || weight.dim(3) != k) {
        throw ShapeError("conv2d: input " + shape_str(input.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    }
    if (bias.defined() && bias.numel() != oc) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(oc) + " output channels");
    }
    const int oh = conv_out_size(h, k, stride, padding);
    const int ow = conv_out_size(w, k, stride, padding);
    if (oh < 1 || ow < 1) {
        throw ShapeError("conv2d: empty output for input " + shape_str(input.shape()) + " and weight " +
                         shape_str(weight.shape()));
    }
    const int plane = oh * ow;
    const int ckk = c * k * k;
    const bool direct = (k == 1 && stride == 1 && padding == 0);

    std::vector<Scalar> out(static_cast<std::size_t>(n) * oc * plane);
    std::vector<Scalar> col(direct ? 0 : static_cast<std::size_t>(ckk) * plane);
    const Scalar* x = input.data().data();
    const Scalar* wt = weight.data().data();
    for (int b = 0; b < n; ++b) {
        const Scalar* xb = x + static_cast<std::ptrdiff_t>(b) * c * h * w;
        const Scalar* src = xb;
        if (!direct) {
            im2col(xb, c, h, w, k, stride, padding, oh, ow, col.data());
            src = col.data();
        }
        Scalar* yb = out.data() + static_cast<std::ptrdiff_t>(b) * oc * plane;
        detail::gemm(false, false, oc, plane, ckk, Scalar(1), wt, ckk, src, plane, Scalar(0), yb, plane);
        if (bias.defined()) {
            auto bd = bias.data();
            for (int o = 0; o < oc; ++o) {
                Scalar* row = yb + static_cast<std::ptrdiff_t>(o) * plane;
                for (int i = 0; i < plane; ++i) row[i] += bd[o];
            }
        }
    }

    auto xi = input.impl();
    auto wi = weight.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    std::vector<Tensor<Scalar>> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_op_result<Scalar>(
        "conv2d", {n, oc, oh, ow}, std::move(out), inputs,
        [=](const Impl<Scalar>& o) {
            const Scalar* gy = o.grad.data();
            if (bi) {
                auto gb = bi->grad_sink();
                if (!gb.empty()) {
                    for (int b = 0; b < n; ++b) {
                        for (int oo = 0; oo < oc; ++oo) {
                            const Scalar* row = gy + (static_cast<std::ptrdiff_t>(b) * oc + oo) * plane;
                            Scalar s = 0;
                            for (int i = 0; i < plane; ++i) s += row[i];
                            gb[oo] += s;
                        }
                    }
                }
            }
            auto gw = wi->grad_sink();
            auto gx = xi->grad_sink();
            std::vector<Scalar> buf(direct ? 0 : static_cast<std::size_t>(ckk) * plane);
            for (int b = 0; b < n; ++b) {
                const Scalar* gyb = gy + static_cast<std::ptrdiff_t>(b) * oc * plane;
                const Scalar* xb = xi->data.data() + static_cast<std::ptrdiff_t>(b) * c * h * w;
                if (!gw.empty()) {
                    const Scalar* src = xb;
                    if (!direct) {
                        im2col(xb, c, h, w, k, stride, padding, oh, ow, buf.data());
                        src = buf.data();
                    }
                    detail::gemm(false, true, oc, ckk, plane, Scalar(1), gyb, plane, src, plane,
                                 Scalar(1), gw.data(), ckk);
                }
                if (!gx.empty()) {
                    Scalar* gxb = gx.data() + static_cast<std::ptrdiff_t>(b) * c * h * w;
                    if (direct) {
                        detail::gemm(true, false, ckk, plane, oc, Scalar(1), wi->data.data(), ckk,
                                     gyb, plane, Scalar(1), gxb, plane);
                    } else {
                        detail::gemm(true, false, ckk, plane, oc, Scalar(1), wi->data.data(), ckk,
                                     gyb, plane, Scalar(0), buf.data(), plane);
                        col2im_add(buf.data(), c, h, w, k, stride, padding, oh, ow, gxb);
                    }
                }
            }
        });
}

template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, Tensor<Scalar>& running_mean,
                          Tensor<Scalar>& running_var, bool training, double momentum, double eps)
{
    if (!input.defined() || input.rank() < 2) throw ShapeError("batch_norm: input needs rank >= 2");
    const int n = input.dim(0), c = input.dim(1);
    const std::int64_t inner = input.numel() / (static_cast<std::int64_t>(n) * std::max(c, 1));
    for (const Tensor<Scalar>* t : {&gamma, &beta, static_cast<const Tensor<Scalar>*>(&running_mean),
                                    static_cast<const Tensor<Scalar>*>(&running_var)}) {
        if (!t->defined() || t->numel() != c) {
            throw ShapeError("batch_norm: per-channel tensor does not match " + std::to_string(c) +
                             " channels of input " + shape_str(input.shape()));
        }
    }
    const std::int64_t count = static_cast<std::int64_t>(n) * inner;
    auto x = input.data();
    std::vector<Scalar> mean(c), invstd(c);
    if (training) {
        if (count < 1) throw ShapeError("batch_norm: empty batch");
        for (int ch = 0; ch < c; ++ch) {
            double s = 0, ss = 0;
            for (int b = 0; b < n; ++b) {
                const Scalar* p = x.data() + (static_cast<std::int64_t>(b) * c + ch) * inner;
                for (std::int64_t i = 0; i < inner; ++i) s += p[i];
            }
            double m = s / static_cast<double>(count);
            for (int b = 0; b < n; ++b) {
                const Scalar* p = x.data() + (static_cast<std::int64_t>(b) * c + ch) * inner;
                for (std::int64_t i = 0; i < inner; ++i) {
                    double d = p[i] - m;
                    ss += d * d;
                }
            }
            double var = ss / static_cast<double>(count);
            mean[ch] = static_cast<Scalar>(m);
            invstd[ch] = static_cast<Scalar>(1.0 / std::sqrt(var + eps));
            double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
            auto rm = running_mean.data();
            auto rv = running_var.data();
            rm[ch] = static_cast<Scalar>((1.0 - momentum) * rm[ch] + momentum * m);
            rv[ch] = static_cast<Scalar>((1.0 - momentum) * rv[ch] + momentum * unbiased);
        }
    } else {
        auto rm = running_mean.data();
        auto rv = running_var.data();
        for (int ch = 0; ch < c; ++ch) {
            mean[ch] = rm[ch];
            invstd[ch] = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + eps));
        }
    }

    auto g = gamma.data();
    auto be = beta.data();
    std::vector<Scalar> xhat(x.size()), out(x.size());
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
                Scalar xh = (x[off + i] - mean[ch]) * invstd[ch];
                xhat[off + i] = xh;
                out[off + i] = g[ch] * xh + be[ch];
            }
        }
    }

    auto xi = input.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    return make_op_result<Scalar>(
        "batch_norm", input.shape(), std::move(out), {input, gamma, beta},
        [=, xhat = std::move(xhat), invstd = std::move(invstd)](const Impl<Scalar>& o) {
            const auto& gy = o.grad;
            auto ggam = gi->grad_sink();
            auto gbet = bi->grad_sink();
            auto gx = xi->grad_sink();
            for (int ch = 0; ch < c; ++ch) {
                double sdy = 0, sdyx = 0;
                for (int b = 0; b < n; ++b) {
                    const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * inner;
                    for (std::int64_t i = 0; i < inner; ++i) {
                        sdy += gy[off + i];
                        sdyx += gy[off + i] * xhat[off + i];
                    }
                }
                if (!ggam.empty()) ggam[ch] += static_cast<Scalar>(sdyx);
                if (!gbet.empty()) gbet[ch] += static_cast<Scalar>(sdy);
                if (gx.empty()) continue;
                const Scalar gch = gi->data[ch];
                for (int b = 0; b < n; ++b) {
                    const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * inner;
                    if (training) {
                        // d xhat = dy * gamma; dx = invstd/M (M dxhat - sum dxhat - xhat sum(dxhat xhat))
                        const double mcount = static_cast<double>(count);
                        for (std::int64_t i = 0; i < inner; ++i) {
                            double v = mcount * gy[off + i] - sdy - xhat[off + i] * sdyx;
                            gx[off + i] += static_cast<Scalar>(gch * invstd[ch] * v / mcount);
                        }
                    } else {
                        for (std::int64_t i = 0; i < inner; ++i) {
                            gx[off + i] += gy[off + i] * gch * invstd[ch];
                        }
                    }
                }
            }
        });
}

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& x, double slope)
{
    const auto s = static_cast<Scalar>(slope);
    return unary<Scalar>(
        "leaky_relu", x, [s](Scalar v) { return v > 0 ? v : v * s; },
        [s](Scalar v, Scalar) { return v > 0 ? Scalar(1) : s; });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x)
{
    return unary<Scalar>(
        "relu", x, [](Scalar v) { return v > 0 ? v : Scalar(0); },
        [](Scalar v, Scalar) { return v > 0 ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x)
{
    return unary<Scalar>(
        "sigmoid", x, [](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); },
        [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& x, int kernel, int stride, int padding)
{
    require_rank(x, 4, "max_pool2d", "input");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = conv_out_size(h, kernel, stride, padding);
    const int ow = conv_out_size(w, kernel, stride, padding);
    if (oh < 1 || ow < 1) throw ShapeError("max_pool2d: empty output for " + shape_str(x.shape()));
    std::vector<Scalar> out(static_cast<std::size_t>(n) * c * oh * ow);
    std::vector<std::int64_t> arg(out.size(), -1);
    auto in = x.data();
    for (int p = 0; p < n * c; ++p) {
        const std::int64_t base = static_cast<std::int64_t>(p) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                Scalar best = -std::numeric_limits<Scalar>::infinity();
                std::int64_t bi = -1;
                for (int ky = 0; ky < kernel; ++ky) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < kernel; ++kx) {
                        const int ix = ox * stride - padding + kx;
                        if (ix < 0 || ix >= w) continue;
                        const std::int64_t idx = base + static_cast<std::int64_t>(iy) * w + ix;
                        if (bi < 0 || in[idx] > best) {
                            best = in[idx];
                            bi = idx;
                        }
                    }
                }
                const std::size_t o = (static_cast<std::size_t>(p) * oh + oy) * ow + ox;
                out[o] = bi < 0 ? Scalar(0) : best;
                arg[o] = bi;
            }
        }
    }
    auto xi = x.impl();
    return make_op_result<Scalar>("max_pool2d", {n, c, oh, ow}, std::move(out), {x},
                                  [xi, arg = std::move(arg)](const Impl<Scalar>& o) {
                                      auto gx = xi->grad_sink();
                                      if (gx.empty()) return;
                                      for (std::size_t i = 0; i < arg.size(); ++i) {
                                          if (arg[i] >= 0) gx[arg[i]] += o.grad[i];
                                      }
                                  });
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x)
{
    require_rank(x, 4, "global_avg_pool", "input");
    const int n = x.dim(0), c = x.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    if (plane == 0) throw ShapeError("global_avg_pool: empty spatial extent");
    auto in = x.data();
    std::vector<Scalar> out(static_cast<std::size_t>(n) * c);
    for (std::size_t p = 0; p < out.size(); ++p) {
        double s = 0;
        for (std::int64_t i = 0; i < plane; ++i) s += in[p * plane + i];
        out[p] = static_cast<Scalar>(s / static_cast<double>(plane));
    }
    auto xi = x.impl();
    return make_op_result<Scalar>("global_avg_pool", {n, c, 1, 1}, std::move(out), {x},
                                  [xi, plane](const Impl<Scalar>& o) {
                                      auto gx = xi->grad_sink();
                                      if (gx.empty()) return;
                                      const Scalar inv = Scalar(1) / static_cast<Scalar>(plane);
                                      for (std::size_t p = 0; p < o.grad.size(); ++p) {
                                          for (std::int64_t i = 0; i < plane; ++i) {
                                              gx[p * plane + i] += o.grad[p] * inv;
                                          }
                                      }
                                  });
}

template <typename Scalar>
Tensor<Scalar> upsample2x(const Tensor<Scalar>& x)
{
    require_rank(x, 4, "upsample2x", "input");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = 2 * h, ow = 2 * w;
    auto in = x.data();
    std::vector<Scalar> out(static_cast<std::size_t>(n) * c * oh * ow);
    for (int p = 0; p < n * c; ++p) {
        for (int y = 0; y < oh; ++y) {
            const Scalar* src = in.data() + (static_cast<std::int64_t>(p) * h + y / 2) * w;
            Scalar* dst = out.data() + (static_cast<std::int64_t>(p) * oh + y) * ow;
            for (int xx = 0; xx < ow; ++xx) dst[xx] = src[xx / 2];
        }
    }
    auto xi = x.impl();
    return make_op_result<Scalar>("upsample2x", {n, c, oh, ow}, std::move(out), {x},
                                  [=](const Impl<Scalar>& o) {
                                      auto gx = xi->grad_sink();
                                      if (gx.empty()) return;
                                      for (int p = 0; p < n * c; ++p) {
                                          for (int y = 0; y < oh; ++y) {
                                              Scalar* dst = gx.data() +
                                                            (static_cast<std::int64_t>(p) * h + y / 2) * w;
                                              const Scalar* src =
                                                  o.grad.data() + (static_cast<std::int64_t>(p) * oh + y) * ow;
                                              for (int xx = 0; xx < ow; ++xx) dst[xx / 2] += src[xx];
                                          }
                                      }
                                  });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    auto da = a.data();
    auto db = b.data();
    std::vector<Scalar> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
    auto ai = a.impl();
    auto bi = b.impl();
    return make_op_result<Scalar>("add", a.shape(), std::move(out), {a, b},
                                  [ai, bi](const Impl<Scalar>& o) {
                                      for (auto* t : {ai.get(), bi.get()}) {
                                          auto g = t->grad_sink();
                                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                      }
                                  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    auto da = a.data();
    auto db = b.data();
    std::vector<Scalar> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
    auto ai = a.impl();
    auto bi = b.impl();
    return make_op_result<Scalar>("mul", a.shape(), std::move(out), {a, b},
                                  [ai, bi](const Impl<Scalar>& o) {
                                      auto ga = ai->grad_sink();
                                      for (std::size_t i = 0; i < ga.size(); ++i) {
                                          ga[i] += o.grad[i] * bi->data[i];
                                      }
                                      auto gb = bi->grad_sink();
                                      for (std::size_t i = 0; i < gb.size(); ++i) {
                                          gb[i] += o.grad[i] * ai->data[i];
                                      }
                                  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, double factor)
{
    const auto f = static_cast<Scalar>(factor);
    return unary<Scalar>(
        "scale", x, [f](Scalar v) { return v * f; }, [f](Scalar, Scalar) { return f; });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x)
{
    double s = 0;
    for (Scalar v : x.data()) s += v;
    auto xi = x.impl();
    return make_op_result<Scalar>("sum", {}, {static_cast<Scalar>(s)}, {x},
                                  [xi](const Impl<Scalar>& o) {
                                      auto g = xi->grad_sink();
                                      for (auto& v : g) v += o.grad[0];
                                  });
}

template <typename Scalar>
Tensor<Scalar> add_scalars(const std::vector<Tensor<Scalar>>& terms)
{
    Scalar s = 0;
    std::vector<std::shared_ptr<Impl<Scalar>>> impls;
    for (const auto& t : terms) {
        if (t.numel() != 1) throw ShapeError("add_scalars: non-scalar term " + shape_str(t.shape()));
        s += t.item();
        impls.push_back(t.impl());
    }
    return make_op_result<Scalar>("add_scalars", {}, {s}, terms,
                                  [impls](const Impl<Scalar>& o) {
                                      for (const auto& t : impls) {
                                          auto g = t->grad_sink();
                                          if (!g.empty()) g[0] += o.grad[0];
                                      }
                                  });
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& parts)
{
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    for (const auto& p : parts) require_rank(p, 4, "concat_channels", "input");
    const int n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    int total = 0;
    for (const auto& p : parts) {
        if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
            throw ShapeError("concat_channels: " + shape_str(p.shape()) + " incompatible with " +
                             shape_str(parts[0].shape()));
        }
        total += p.dim(1);
    }
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    std::vector<Scalar> out(static_cast<std::size_t>(n) * total * plane);
    std::vector<std::shared_ptr<Impl<Scalar>>> impls;
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        const int pc = p.dim(1);
        auto src = p.data();
        for (int b = 0; b < n; ++b) {
            std::copy_n(src.data() + static_cast<std::int64_t>(b) * pc * plane, pc * plane,
                        out.data() + (static_cast<std::int64_t>(b) * total + off) * plane);
        }
        impls.push_back(p.impl());
        offsets.push_back(off);
        off += pc;
    }
    return make_op_result<Scalar>(
        "concat_channels", {n, total, h, w}, std::move(out), parts,
        [=](const Impl<Scalar>& o) {
            for (std::size_t k = 0; k < impls.size(); ++k) {
                auto g = impls[k]->grad_sink();
                if (g.empty()) continue;
                const int pc = impls[k]->shape[1];
                for (int b = 0; b < n; ++b) {
                    const Scalar* src = o.grad.data() + (static_cast<std::int64_t>(b) * total + offsets[k]) * plane;
                    Scalar* dst = g.data() + static_cast<std::int64_t>(b) * pc * plane;
                    for (std::int64_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
                }
            }
        });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape)
{
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<Scalar> out(x.data().begin(), x.data().end());
    auto xi = x.impl();
    return make_op_result<Scalar>("reshape", std::move(shape), std::move(out), {x},
                                  [xi](const Impl<Scalar>& o) {
                                      auto g = xi->grad_sink();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                  });
}

template <typename Scalar>
Tensor<Scalar> select_batch(const Tensor<Scalar>& x, int index)
{
    if (!x.defined() || x.rank() < 1) throw ShapeError("select_batch: input needs rank >= 1");
    if (index < 0 || index >= x.dim(0)) {
        throw ArgumentError("select_batch: index " + std::to_string(index) + " outside " + shape_str(x.shape()));
    }
    const std::size_t chunk = static_cast<std::size_t>(x.numel() / x.dim(0));
    const std::size_t offset = chunk * index;
    std::vector<Scalar> out(x.data().begin() + offset, x.data().begin() + offset + chunk);
    Shape shape = x.shape();
    shape[0] = 1;
    auto xi = x.impl();
    return make_op_result<Scalar>("select_batch", std::move(shape), std::move(out), {x},
                                  [xi, offset](const Impl<Scalar>& o) {
                                      auto g = xi->grad_sink();
                                      if (g.empty()) return;
                                      for (std::size_t i = 0; i < o.grad.size(); ++i) g[offset + i] += o.grad[i];
                                  });
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias)
{
    if (!x.defined() || x.rank() < 2) throw ShapeError("linear: input needs rank >= 2");
    require_rank(weight, 2, "linear", "weight");
    const int n = x.dim(0);
    const int k = static_cast<int>(x.numel() / std::max(n, 1));
    const int out_features = weight.dim(0);
    if (weight.dim(1) != k) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    }
    if (bias.defined() && bias.numel() != out_features) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
    }
    std::vector<Scalar> out(static_cast<std::size_t>(n) * out_features);
    if (bias.defined()) {
        auto b = bias.data();
        for (int r = 0; r < n; ++r) std::copy(b.begin(), b.end(), out.begin() + r * out_features);
    }
    if (n > 0 && k > 0) {
        detail::gemm(false, true, n, out_features, k, Scalar(1), x.data().data(), k, weight.data().data(), k,
                     bias.defined() ? Scalar(1) : Scalar(0), out.data(), out_features);
    }
    auto xi = x.impl();
    auto wi = weight.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    std::vector<Tensor<Scalar>> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_op_result<Scalar>(
        "linear", {n, out_features}, std::move(out), inputs, [=](const Impl<Scalar>& o) {
            if (n == 0) return;
            auto gx = xi->grad_sink();
            if (!gx.empty()) {
                detail::gemm(false, false, n, k, out_features, Scalar(1), o.grad.data(), out_features,
                             wi->data.data(), k, Scalar(1), gx.data(), k);
            }
            auto gw = wi->grad_sink();
            if (!gw.empty()) {
                detail::gemm(true, false, out_features, k, n, Scalar(1), o.grad.data(), out_features,
                             xi->data.data(), k, Scalar(1), gw.data(), k);
            }
            if (bi) {
                auto gb = bi->grad_sink();
                if (!gb.empty()) {
                    for (int r = 0; r < n; ++r) {
                        for (int j = 0; j < out_features; ++j) gb[j] += o.grad[r * out_features + j];
                    }
                }
            }
        });
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x)
{
    if (!x.defined() || x.rank() < 1 || x.dim(-1) == 0) {
        throw ShapeError("softmax: empty class axis");
    }
    const int len = x.dim(-1);
    const std::int64_t rows = x.numel() / len;
    auto in = x.data();
    std::vector<Scalar> out(in.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const Scalar* src = in.data() + r * len;
        Scalar* dst = out.data() + r * len;
        Scalar m = *std::max_element(src, src + len);
        double s = 0;
        for (int i = 0; i < len; ++i) {
            dst[i] = std::exp(src[i] - m);
            s += dst[i];
        }
        for (int i = 0; i < len; ++i) dst[i] = static_cast<Scalar>(dst[i] / s);
    }
    auto xi = x.impl();
    return make_op_result<Scalar>("softmax", x.shape(), std::move(out), {x},
                                  [xi, len, rows](const Impl<Scalar>& o) {
                                      auto g = xi->grad_sink();
                                      if (g.empty()) return;
                                      for (std::int64_t r = 0; r < rows; ++r) {
                                          const Scalar* y = o.data.data() + r * len;
                                          const Scalar* gy = o.grad.data() + r * len;
                                          double dot = 0;
                                          for (int i = 0; i < len; ++i) dot += gy[i] * y[i];
                                          for (int i = 0; i < len; ++i) {
                                              g[r * len + i] += y[i] * (gy[i] - static_cast<Scalar>(dot));
                                          }
                                      }
                                  });
}

template <typename Scalar>
Tensor<Scalar> roi_pool(const Tensor<Scalar>& feature, std::span<const RoiBox> rois, int pooled_h,
                        int pooled_w, double spatial_scale)
{
    require_rank(feature, 4, "roi_pool", "feature");
    if (feature.dim(0) != 1) throw ShapeError("roi_pool: feature batch must be 1");
    if (pooled_h < 1 || pooled_w < 1) throw ArgumentError("roi_pool: pooled size must be >= 1");
    const int c = feature.dim(1), h = feature.dim(2), w = feature.dim(3);
    const int n = static_cast<int>(rois.size());
    const std::int64_t cells = static_cast<std::int64_t>(pooled_h) * pooled_w;
    std::vector<Scalar> out(static_cast<std::size_t>(n) * c * cells);
    std::vector<std::int64_t> arg(out.size());
    auto in = feature.data();
    for (int r = 0; r < n; ++r) {
        const auto& roi = rois[static_cast<std::size_t>(r)];
        if (roi.x2 < 0 || roi.y2 < 0 || roi.x1 * spatial_scale > w || roi.y1 * spatial_scale > h) {
            throw ArgumentError("roi_pool: region (" + std::to_string(roi.x1) + "," + std::to_string(roi.y1) +
                                "," + std::to_string(roi.x2) + "," + std::to_string(roi.y2) +
                                ") lies outside the feature map");
        }
        // Rounded to cells; a region touching the far border rounds onto the last cell.
        const int x1 = std::clamp(static_cast<int>(std::round(roi.x1 * spatial_scale)), 0, w - 1);
        const int y1 = std::clamp(static_cast<int>(std::round(roi.y1 * spatial_scale)), 0, h - 1);
        const int x2 = std::clamp(static_cast<int>(std::round(roi.x2 * spatial_scale)), x1, w - 1);
        const int y2 = std::clamp(static_cast<int>(std::round(roi.y2 * spatial_scale)), y1, h - 1);
        const double roi_w = std::max(x2 - x1 + 1, 1);
        const double roi_h = std::max(y2 - y1 + 1, 1);
        const double bin_w = roi_w / pooled_w;
        const double bin_h = roi_h / pooled_h;
        for (int py = 0; py < pooled_h; ++py) {
            int hs = static_cast<int>(std::floor(py * bin_h)) + y1;
            int he = static_cast<int>(std::ceil((py + 1) * bin_h)) + y1;
            hs = std::clamp(hs, 0, h - 1);
            he = std::clamp(he, hs + 1, h);
            for (int px = 0; px < pooled_w; ++px) {
                int ws = static_cast<int>(std::floor(px * bin_w)) + x1;
                int we = static_cast<int>(std::ceil((px + 1) * bin_w)) + x1;
                ws = std::clamp(ws, 0, w - 1);
                we = std::clamp(we, ws + 1, w);
                for (int ch = 0; ch < c; ++ch) {
                    const std::int64_t base = static_cast<std::int64_t>(ch) * h * w;
                    std::int64_t best_idx = base + static_cast<std::int64_t>(hs) * w + ws;
                    Scalar best = in[best_idx];
                    for (int yy = hs; yy < he; ++yy) {
                        for (int xx = ws; xx < we; ++xx) {
                            const std::int64_t idx = base + static_cast<std::int64_t>(yy) * w + xx;
                            if (in[idx] > best) {
                                best = in[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    const std::size_t o = ((static_cast<std::size_t>(r) * c + ch) * pooled_h + py) * pooled_w + px;
                    out[o] = best;
                    arg[o] = best_idx;
                }
            }
        }
    }
    auto fi = feature.impl();
    return make_op_result<Scalar>("roi_pool", {n, c, pooled_h, pooled_w}, std::move(out), {feature},
                                  [fi, arg = std::move(arg)](const Impl<Scalar>& o) {
                                      auto g = fi->grad_sink();
                                      if (g.empty()) return;
                                      for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += o.grad[i];
                                  });
}

#define LPR_INSTANTIATE_OPS(S)                                                                      \
    template Tensor<S> conv2d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int);   \
    template Tensor<S> batch_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Tensor<S>&, \
                                     Tensor<S>&, bool, double, double);                            \
    template Tensor<S> leaky_relu<S>(const Tensor<S>&, double);                                    \
    template Tensor<S> relu<S>(const Tensor<S>&);                                                  \
    template Tensor<S> sigmoid<S>(const Tensor<S>&);                                               \
    template Tensor<S> max_pool2d<S>(const Tensor<S>&, int, int, int);                             \
    template Tensor<S> global_avg_pool<S>(const Tensor<S>&);                                       \
    template Tensor<S> upsample2x<S>(const Tensor<S>&);                                            \
    template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                                 \
    template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                                 \
    template Tensor<S> scale<S>(const Tensor<S>&, double);                                         \
    template Tensor<S> sum<S>(const Tensor<S>&);                                                   \
    template Tensor<S> add_scalars<S>(const std::vector<Tensor<S>>&);                              \
    template Tensor<S> concat_channels<S>(const std::vector<Tensor<S>>&);                          \
    template Tensor<S> reshape<S>(const Tensor<S>&, Shape);                                        \
    template Tensor<S> select_batch<S>(const Tensor<S>&, int);                                     \
    template Tensor<S> linear<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);            \
    template Tensor<S> softmax<S>(const Tensor<S>&);                                               \
    template Tensor<S> roi_pool<S>(const Tensor<S>&, std::span<const RoiBox>, int, int, double);

LPR_INSTANTIATE_OPS(float)
LPR_INSTANTIATE_OPS(double)

#undef LPR_INSTANTIATE_OPS

}  // namespace lpr::ops
