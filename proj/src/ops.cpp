#include "tilemark/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tilemark/error.hpp"

namespace tilemark::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  require(s.size() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                " input, got " + shape_string(s));
}

template <typename T>
bool wants_grad(const NodePtr<T>& n) {
  return n && n->requires_grad;
}

template <typename T>
void im2col(const T* x, int channels, int height, int width, int k, int pad, int dil,
            int out_h, int out_w, T* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + static_cast<std::ptrdiff_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy - pad + ky * dil;
          T* row = dst + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, T(0));
            continue;
          }
          const T* src = xc + iy * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox - pad + kx * dil;
            row[ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int channels, int height, int width, int k, int pad, int dil,
                int out_h, int out_w, T* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    T* xc = x + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + static_cast<std::ptrdiff_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy - pad + ky * dil;
          if (iy < 0 || iy >= height) continue;
          const T* row = src + oy * out_w;
          T* dst = xc + iy * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox - pad + kx * dil;
            if (ix >= 0 && ix < width) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              ConvGeometry geometry) {
  require_rank(x.shape(), 4, "conv2d");
  require_rank(weight.shape(), 4, "conv2d weight");
  const int batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const int out_ch = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != channels || weight.dim(3) != k) {
    throw ConfigError("conv2d: weight " + shape_string(weight.shape()) +
                      " does not fit input " + shape_string(x.shape()));
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(out_ch)) {
    throw ConfigError("conv2d: bias size does not match output channels");
  }
  const int pad = geometry.padding, dil = geometry.dilation;
  if (dil < 1 || pad < 0) throw ConfigError("conv2d: invalid padding/dilation");
  const int out_h = height + 2 * pad - dil * (k - 1);
  const int out_w = width + 2 * pad - dil * (k - 1);
  require(out_h >= 1 && out_w >= 1, "conv2d: kernel larger than padded input");

  const int plane_out = out_h * out_w;
  const int patch = channels * k * k;
  const bool direct = (k == 1 && pad == 0);
  std::vector<T> out(static_cast<std::size_t>(batch) * out_ch * plane_out);
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(patch) * plane_out);
  ConstMatMap<T> wm(weight.data().data(), out_ch, patch);
  for (int n = 0; n < batch; ++n) {
    const T* xn = x.data().data() + static_cast<std::ptrdiff_t>(n) * channels * height * width;
    if (!direct) im2col(xn, channels, height, width, k, pad, dil, out_h, out_w, col.data());
    ConstMatMap<T> cm(direct ? xn : col.data(), patch, plane_out);
    MatMap<T> om(out.data() + static_cast<std::ptrdiff_t>(n) * out_ch * plane_out, out_ch,
                 plane_out);
    om.noalias() = wm * cm;
    if (bias.defined()) {
      for (int o = 0; o < out_ch; ++o) om.row(o).array() += bias.data()[o];
    }
  }

  return make_result<T>(
      {batch, out_ch, out_h, out_w}, std::move(out),
      {x.shared(), weight.shared(), bias.defined() ? bias.shared() : nullptr},
      [=](Node<T>& self) {
        const auto& xin = self.inputs[0];
        const auto& win = self.inputs[1];
        const auto& bin = self.inputs[2];
        ConstMatMap<T> wmat(win->value.data(), out_ch, patch);
        std::vector<T> colbuf(direct ? 0 : static_cast<std::size_t>(patch) * plane_out);
        std::vector<T> dcol(static_cast<std::size_t>(patch) * plane_out);
        for (int n = 0; n < batch; ++n) {
          ConstMatMap<T> dy(self.grad.data() + static_cast<std::ptrdiff_t>(n) * out_ch * plane_out,
                            out_ch, plane_out);
          const T* xn =
              xin->value.data() + static_cast<std::ptrdiff_t>(n) * channels * height * width;
          if (wants_grad(win)) {
            if (!direct) im2col(xn, channels, height, width, k, pad, dil, out_h, out_w,
                                colbuf.data());
            ConstMatMap<T> cm(direct ? xn : colbuf.data(), patch, plane_out);
            MatMap<T> dw(win->grad_buffer().data(), out_ch, patch);
            dw.noalias() += dy * cm.transpose();
          }
          if (wants_grad(bin)) {
            auto& db = bin->grad_buffer();
            for (int o = 0; o < out_ch; ++o) db[o] += dy.row(o).sum();
          }
          if (wants_grad(xin)) {
            T* dxn = xin->grad_buffer().data() +
                     static_cast<std::ptrdiff_t>(n) * channels * height * width;
            if (direct) {
              MatMap<T> dx(dxn, patch, plane_out);
              dx.noalias() += wmat.transpose() * dy;
            } else {
              MatMap<T> dc(dcol.data(), patch, plane_out);
              dc.noalias() = wmat.transpose() * dy;
              col2im_add(dcol.data(), channels, height, width, k, pad, dil, out_h, out_w, dxn);
            }
          }
        }
      });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Var<T>& running_mean, Var<T>& running_var,
                  const BatchNormOptions& options) {
  require_rank(x.shape(), 4, "batch_norm");
  const int batch = x.dim(0), channels = x.dim(1);
  const int plane = x.dim(2) * x.dim(3);
  const auto c_size = static_cast<std::size_t>(channels);
  if (gamma.numel() != c_size || beta.numel() != c_size || running_mean.numel() != c_size ||
      running_var.numel() != c_size) {
    throw ConfigError("batch_norm: parameter sizes do not match " + std::to_string(channels) +
                      " channels");
  }
  const std::size_t count = static_cast<std::size_t>(batch) * plane;
  const auto& xv = x.data();
  std::vector<T> xhat(xv.size());
  std::vector<T> invstd(c_size);
  std::vector<T> out(xv.size());

  for (int c = 0; c < channels; ++c) {
    double mu = 0.0, var = 0.0;
    if (options.training) {
      for (int n = 0; n < batch; ++n) {
        const T* p = xv.data() + (static_cast<std::size_t>(n) * channels + c) * plane;
        for (int i = 0; i < plane; ++i) mu += p[i];
      }
      mu /= static_cast<double>(count);
      for (int n = 0; n < batch; ++n) {
        const T* p = xv.data() + (static_cast<std::size_t>(n) * channels + c) * plane;
        for (int i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * count / (count - 1.0) : var;
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      rm[c] = static_cast<T>(options.momentum * rm[c] + (1.0 - options.momentum) * mu);
      rv[c] = static_cast<T>(options.momentum * rv[c] + (1.0 - options.momentum) * unbiased);
    } else {
      mu = running_mean.data()[c];
      var = running_var.data()[c];
    }
    const double is = 1.0 / std::sqrt(var + options.eps);
    invstd[c] = static_cast<T>(is);
    const T g = gamma.data()[c], b = beta.data()[c];
    for (int n = 0; n < batch; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (int i = 0; i < plane; ++i) {
        const T h = static_cast<T>((xv[base + i] - mu) * is);
        xhat[base + i] = h;
        out[base + i] = g * h + b;
      }
    }
  }

  const bool training = options.training;
  return make_result<T>(
      x.shape(), std::move(out), {x.shared(), gamma.shared(), beta.shared()},
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](Node<T>& self) {
        const auto& xin = self.inputs[0];
        const auto& gin = self.inputs[1];
        const auto& bin = self.inputs[2];
        const auto& dy = self.grad;
        for (int c = 0; c < channels; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int n = 0; n < batch; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
            for (int i = 0; i < plane; ++i) {
              sum_dy += dy[base + i];
              sum_dy_xhat += static_cast<double>(dy[base + i]) * xhat[base + i];
            }
          }
          if (wants_grad(gin)) gin->grad_buffer()[c] += static_cast<T>(sum_dy_xhat);
          if (wants_grad(bin)) bin->grad_buffer()[c] += static_cast<T>(sum_dy);
          if (!wants_grad(xin)) continue;
          auto& dx = xin->grad_buffer();
          const double g = gin->value[c];
          const double is = invstd[c];
          const double m = static_cast<double>(count);
          for (int n = 0; n < batch; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
            for (int i = 0; i < plane; ++i) {
              const std::size_t j = base + i;
              if (training) {
                dx[j] += static_cast<T>(g * is / m *
                                        (m * dy[j] - sum_dy - xhat[j] * sum_dy_xhat));
              } else {
                dx[j] += static_cast<T>(g * is * dy[j]);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  std::vector<T> out(x.numel());
  const auto& xv = x.data();
  // NaN passes through so divergence stays visible downstream.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] < T(0) ? T(0) : xv[i];
  return make_result<T>(x.shape(), std::move(out), {x.shared()}, [](Node<T>& self) {
    auto& in = self.inputs[0];
    auto& dx = in->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (in->value[i] > T(0)) dx[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  // Saturates strictly inside (0, 1) so probabilities never hit 0 or 1.
  const T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  std::vector<T> out(x.numel());
  const auto& xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xv[i];
    T s;
    if (v >= T(0)) {
      s = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      s = e / (T(1) + e);
    }
    out[i] = std::clamp(s, lo, hi);
  }
  return make_result<T>(x.shape(), std::move(out), {x.shared()}, [](Node<T>& self) {
    auto& dx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T y = self.value[i];
      dx[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a.shared(), b.shared()},
                        [](Node<T>& self) {
                          for (int k = 0; k < 2; ++k) {
                            if (!wants_grad(self.inputs[k])) continue;
                            auto& d = self.inputs[k]->grad_buffer();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
                          }
                        });
}

template <typename T>
Var<T> add_trailing(const Var<T>& x, const Var<T>& b) {
  const std::size_t block = b.numel();
  require(block > 0 && x.numel() % block == 0,
          "add_trailing: " + shape_string(b.shape()) + " does not tile " +
              shape_string(x.shape()));
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + b.data()[i % block];
  return make_result<T>(x.shape(), std::move(out), {x.shared(), b.shared()},
                        [block](Node<T>& self) {
                          if (wants_grad(self.inputs[0])) {
                            auto& d = self.inputs[0]->grad_buffer();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
                          }
                          if (wants_grad(self.inputs[1])) {
                            auto& d = self.inputs[1]->grad_buffer();
                            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                              d[i % block] += self.grad[i];
                            }
                          }
                        });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return make_result<T>(x.shape(), std::move(out), {x.shared()}, [factor](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> mul_channel_broadcast(const Var<T>& x, const Var<T>& a) {
  require_rank(x.shape(), 4, "mul_channel_broadcast");
  const int batch = x.dim(0), channels = x.dim(1);
  const int plane = x.dim(2) * x.dim(3);
  require(a.shape() == Shape{batch, 1, x.dim(2), x.dim(3)},
          "mul_channel_broadcast: gate " + shape_string(a.shape()) + " does not fit " +
              shape_string(x.shape()));
  std::vector<T> out(x.numel());
  for (int n = 0; n < batch; ++n) {
    const T* an = a.data().data() + static_cast<std::size_t>(n) * plane;
    for (int c = 0; c < channels; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (int i = 0; i < plane; ++i) out[base + i] = x.data()[base + i] * an[i];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x.shared(), a.shared()},
      [batch, channels, plane](Node<T>& self) {
        const auto& xin = self.inputs[0];
        const auto& ain = self.inputs[1];
        for (int n = 0; n < batch; ++n) {
          const std::size_t abase = static_cast<std::size_t>(n) * plane;
          for (int c = 0; c < channels; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
            if (wants_grad(xin)) {
              auto& dx = xin->grad_buffer();
              for (int i = 0; i < plane; ++i) dx[base + i] += self.grad[base + i] * ain->value[abase + i];
            }
            if (wants_grad(ain)) {
              auto& da = ain->grad_buffer();
              for (int i = 0; i < plane; ++i) da[abase + i] += self.grad[base + i] * xin->value[base + i];
            }
          }
        }
      });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 4, "concat_channels");
  require_rank(b.shape(), 4, "concat_channels");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const int batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  const std::size_t sa = ca * plane, sb = cb * plane;
  std::vector<T> out(a.numel() + b.numel());
  for (int n = 0; n < batch; ++n) {
    std::copy_n(a.data().data() + n * sa, sa, out.data() + n * (sa + sb));
    std::copy_n(b.data().data() + n * sb, sb, out.data() + n * (sa + sb) + sa);
  }
  return make_result<T>({batch, ca + cb, a.dim(2), a.dim(3)}, std::move(out),
                        {a.shared(), b.shared()}, [batch, sa, sb](Node<T>& self) {
                          for (int n = 0; n < batch; ++n) {
                            const T* g = self.grad.data() + n * (sa + sb);
                            if (wants_grad(self.inputs[0])) {
                              T* d = self.inputs[0]->grad_buffer().data() + n * sa;
                              for (std::size_t i = 0; i < sa; ++i) d[i] += g[i];
                            }
                            if (wants_grad(self.inputs[1])) {
                              T* d = self.inputs[1]->grad_buffer().data() + n * sb;
                              for (std::size_t i = 0; i < sb; ++i) d[i] += g[sa + i];
                            }
                          }
                        });
}

template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  require_rank(x.shape(), 4, "max_pool2");
  const int batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  if (height % 2 || width % 2) {
    throw ShapeError("max_pool2: odd spatial size " + shape_string(x.shape()));
  }
  const int oh = height / 2, ow = width / 2;
  std::vector<T> out(static_cast<std::size_t>(batch) * channels * oh * ow);
  std::vector<std::uint32_t> argmax(out.size());
  const auto& xv = x.data();
  std::size_t o = 0;
  for (int nc = 0; nc < batch * channels; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * height * width;
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx, ++o) {
        std::size_t best = base + (2 * y) * width + 2 * xx;
        const std::size_t cand[3] = {best + 1, best + width, best + width + 1};
        for (std::size_t c : cand) {
          if (xv[c] > xv[best] || std::isnan(xv[c])) best = c;
        }
        out[o] = xv[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return make_result<T>({batch, channels, oh, ow}, std::move(out), {x.shared()},
                        [argmax = std::move(argmax)](Node<T>& self) {
                          auto& dx = self.inputs[0]->grad_buffer();
                          for (std::size_t i = 0; i < argmax.size(); ++i) {
                            dx[argmax[i]] += self.grad[i];
                          }
                        });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
  require_rank(x.shape(), 4, "upsample_nearest2");
  const int batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const int oh = height * 2, ow = width * 2;
  std::vector<T> out(static_cast<std::size_t>(batch) * channels * oh * ow);
  const auto& xv = x.data();
  for (int nc = 0; nc < batch * channels; ++nc) {
    const T* src = xv.data() + static_cast<std::size_t>(nc) * height * width;
    T* dst = out.data() + static_cast<std::size_t>(nc) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(y / 2) * width + xx / 2];
    }
  }
  return make_result<T>(
      {batch, channels, oh, ow}, std::move(out), {x.shared()},
      [batch, channels, height, width](Node<T>& self) {
        auto& dx = self.inputs[0]->grad_buffer();
        const int ow2 = width * 2;
        for (int nc = 0; nc < batch * channels; ++nc) {
          T* dst = dx.data() + static_cast<std::size_t>(nc) * height * width;
          const T* g = self.grad.data() + static_cast<std::size_t>(nc) * 4 * height * width;
          for (int y = 0; y < 2 * height; ++y) {
            for (int xx = 0; xx < ow2; ++xx) dst[(y / 2) * width + xx / 2] += g[y * ow2 + xx];
          }
        }
      });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x.shared()}, [](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
  });
}

template <typename T>
Var<T> permute(const Var<T>& x, std::span<const int> perm) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  require(perm.size() == rank, "permute: rank mismatch");
  std::vector<bool> seen(rank, false);
  for (int p : perm) {
    require(p >= 0 && static_cast<std::size_t>(p) < rank && !seen[p], "permute: invalid perm");
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];

  const std::size_t n = x.numel();
  std::vector<std::uint32_t> src(n);
  std::vector<int> idx(rank, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < rank; ++i) s += idx[i] * in_stride[perm[i]];
    src[o] = static_cast<std::uint32_t>(s);
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<T> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = x.data()[src[o]];
  return make_result<T>(std::move(out_shape), std::move(out), {x.shared()},
                        [src = std::move(src)](Node<T>& self) {
                          auto& d = self.inputs[0]->grad_buffer();
                          for (std::size_t o = 0; o < src.size(); ++o) d[src[o]] += self.grad[o];
                        });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(weight.shape(), 2, "linear weight");
  const int in = weight.dim(0), out_dim = weight.dim(1);
  if (x.rank() < 1 || x.dim(-1) != in) {
    throw ConfigError("linear: input " + shape_string(x.shape()) + " does not fit weight " +
                      shape_string(weight.shape()));
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(out_dim)) {
    throw ConfigError("linear: bias size mismatch");
  }
  const int rows = static_cast<int>(x.numel() / in);
  std::vector<T> out(static_cast<std::size_t>(rows) * out_dim);
  MatMap<T> om(out.data(), rows, out_dim);
  om.noalias() = ConstMatMap<T>(x.data().data(), rows, in) *
                 ConstMatMap<T>(weight.data().data(), in, out_dim);
  if (bias.defined()) {
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(),
                                                                          out_dim);
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  return make_result<T>(
      std::move(shape), std::move(out),
      {x.shared(), weight.shared(), bias.defined() ? bias.shared() : nullptr},
      [rows, in, out_dim](Node<T>& self) {
        const auto& xin = self.inputs[0];
        const auto& win = self.inputs[1];
        const auto& bin = self.inputs[2];
        ConstMatMap<T> dy(self.grad.data(), rows, out_dim);
        if (wants_grad(xin)) {
          MatMap<T>(xin->grad_buffer().data(), rows, in).noalias() +=
              dy * ConstMatMap<T>(win->value.data(), in, out_dim).transpose();
        }
        if (wants_grad(win)) {
          MatMap<T>(win->grad_buffer().data(), in, out_dim).noalias() +=
              ConstMatMap<T>(xin->value.data(), rows, in).transpose() * dy;
        }
        if (wants_grad(bin)) {
          auto& db = bin->grad_buffer();
          for (int j = 0; j < out_dim; ++j) db[j] += dy.col(j).sum();
        }
      });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b) {
  require_rank(a.shape(), 3, "bmm");
  require_rank(b.shape(), 3, "bmm");
  const int batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int n = transpose_b ? b.dim(1) : b.dim(2);
  const int kb = transpose_b ? b.dim(2) : b.dim(1);
  require(b.dim(0) == batch && kb == k,
          "bmm: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t sa = static_cast<std::size_t>(m) * k, sb = static_cast<std::size_t>(k) * n,
                    so = static_cast<std::size_t>(m) * n;
  std::vector<T> out(batch * so);
  for (int i = 0; i < batch; ++i) {
    ConstMatMap<T> am(a.data().data() + i * sa, m, k);
    MatMap<T> om(out.data() + i * so, m, n);
    if (transpose_b) {
      om.noalias() = am * ConstMatMap<T>(b.data().data() + i * sb, n, k).transpose();
    } else {
      om.noalias() = am * ConstMatMap<T>(b.data().data() + i * sb, k, n);
    }
  }
  return make_result<T>(
      {batch, m, n}, std::move(out), {a.shared(), b.shared()},
      [=](Node<T>& self) {
        const auto& ain = self.inputs[0];
        const auto& bin = self.inputs[1];
        for (int i = 0; i < batch; ++i) {
          ConstMatMap<T> dy(self.grad.data() + i * so, m, n);
          ConstMatMap<T> am(ain->value.data() + i * sa, m, k);
          if (transpose_b) {
            ConstMatMap<T> bm(bin->value.data() + i * sb, n, k);
            if (wants_grad(ain)) MatMap<T>(ain->grad_buffer().data() + i * sa, m, k).noalias() += dy * bm;
            if (wants_grad(bin)) MatMap<T>(bin->grad_buffer().data() + i * sb, n, k).noalias() += dy.transpose() * am;
          } else {
            ConstMatMap<T> bm(bin->value.data() + i * sb, k, n);
            if (wants_grad(ain)) MatMap<T>(ain->grad_buffer().data() + i * sa, m, k).noalias() += dy * bm.transpose();
            if (wants_grad(bin)) MatMap<T>(bin->grad_buffer().data() + i * sb, k, n).noalias() += am.transpose() * dy;
          }
        }
      });
}

template <typename T>
Var<T> softmax_last(const Var<T>& x) {
  const int d = x.dim(-1);
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * d;
    T* o = out.data() + r * d;
    const T mx = *std::max_element(in, in + d);
    T total = 0;
    for (int j = 0; j < d; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (int j = 0; j < d; ++j) o[j] /= total;
  }
  return make_result<T>(x.shape(), std::move(out), {x.shared()}, [d, rows](Node<T>& self) {
    auto& dx = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * d;
      const T* g = self.grad.data() + r * d;
      T dot = 0;
      for (int j = 0; j < d; ++j) dot += g[j] * y[j];
      for (int j = 0; j < d; ++j) dx[r * d + j] += y[j] * (g[j] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm_last(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  const int d = x.dim(-1);
  if (gamma.numel() != static_cast<std::size_t>(d) || beta.numel() != static_cast<std::size_t>(d)) {
    throw ConfigError("layer_norm: parameter size does not match width " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<T> xhat(x.numel()), out(x.numel()), invstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * d;
    double mu = 0, var = 0;
    for (int j = 0; j < d; ++j) mu += in[j];
    mu /= d;
    for (int j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    invstd[r] = static_cast<T>(is);
    for (int j = 0; j < d; ++j) {
      const T h = static_cast<T>((in[j] - mu) * is);
      xhat[r * d + j] = h;
      out[r * d + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x.shared(), gamma.shared(), beta.shared()},
      [d, rows, xhat = std::move(xhat), invstd = std::move(invstd)](Node<T>& self) {
        const auto& xin = self.inputs[0];
        const auto& gin = self.inputs[1];
        const auto& bin = self.inputs[2];
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = self.grad.data() + r * d;
          const T* h = xhat.data() + r * d;
          if (wants_grad(gin)) {
            auto& dg = gin->grad_buffer();
            for (int j = 0; j < d; ++j) dg[j] += g[j] * h[j];
          }
          if (wants_grad(bin)) {
            auto& db = bin->grad_buffer();
            for (int j = 0; j < d; ++j) db[j] += g[j];
          }
          if (!wants_grad(xin)) continue;
          double sum_dh = 0, sum_dh_h = 0;
          for (int j = 0; j < d; ++j) {
            const double dh = static_cast<double>(g[j]) * gin->value[j];
            sum_dh += dh;
            sum_dh_h += dh * h[j];
          }
          auto& dx = xin->grad_buffer();
          for (int j = 0; j < d; ++j) {
            const double dh = static_cast<double>(g[j]) * gin->value[j];
            dx[r * d + j] += static_cast<T>(invstd[r] / d * (d * dh - sum_dh - h[j] * sum_dh_h));
          }
        }
      });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = std::accumulate(x.data().begin(), x.data().end(), T(0));
  return make_result<T>({1}, {total}, {x.shared()}, [](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (auto& v : d) v += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

#define TILEMARK_INSTANTIATE_OPS(T)                                                         \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);        \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Var<T>&, Var<T>&, \
                             const BatchNormOptions&);                                      \
  template Var<T> relu(const Var<T>&);                                                      \
  template Var<T> sigmoid(const Var<T>&);                                                   \
  template Var<T> add(const Var<T>&, const Var<T>&);                                        \
  template Var<T> add_trailing(const Var<T>&, const Var<T>&);                               \
  template Var<T> scale(const Var<T>&, T);                                                  \
  template Var<T> mul_channel_broadcast(const Var<T>&, const Var<T>&);                      \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                            \
  template Var<T> max_pool2(const Var<T>&);                                                 \
  template Var<T> upsample_nearest2(const Var<T>&);                                         \
  template Var<T> reshape(const Var<T>&, Shape);                                            \
  template Var<T> permute(const Var<T>&, std::span<const int>);                             \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                      \
  template Var<T> bmm(const Var<T>&, const Var<T>&, bool);                                  \
  template Var<T> softmax_last(const Var<T>&);                                              \
  template Var<T> layer_norm_last(const Var<T>&, const Var<T>&, const Var<T>&, double);     \
  template Var<T> sum(const Var<T>&);                                                       \
  template Var<T> mean(const Var<T>&);

TILEMARK_INSTANTIATE_OPS(float)
TILEMARK_INSTANTIATE_OPS(double)

}  // namespace tilemark::ops
