#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "pdcn/layer.hpp"

namespace pdcn {

namespace detail {

inline void expect_rank(const Shape& s, std::size_t rank, const char* who) {
  if (s.rank() != rank)
    throw ShapeError(std::string(who) + " expects a rank-" + std::to_string(rank) + " input, got " + s.str());
}

inline Shape with_batch(std::size_t n, const Shape& per_sample) {
  std::vector<std::size_t> d{n};
  d.insert(d.end(), per_sample.dims().begin(), per_sample.dims().end());
  return Shape(std::move(d));
}

inline Shape per_sample(const Shape& s) {
  return Shape(std::vector<std::size_t>(s.dims().begin() + 1, s.dims().end()));
}

}  // namespace detail

/// 2-D cross-correlation over (N, H, W, C) maps with an (Kh, Kw, C, F) kernel
/// and a per-filter bias.
template <class T>
class Conv2D final : public Layer<T> {
 public:
  using typename Layer<T>::TensorT;

  Conv2D(std::size_t filters, std::size_t kernel, std::size_t in_channels, std::size_t stride, Padding padding,
         std::uint64_t seed)
      : filters_(filters), kernel_(kernel), in_channels_(in_channels), stride_(stride), padding_(padding) {
    if (filters < 1 || kernel < 1 || in_channels < 1 || stride < 1) throw ShapeError("conv2d hyperparameters must be >= 1");
    this->add_param("kernel", tensor_new<T>(Shape(std::vector<std::size_t>{kernel, kernel, in_channels, filters}),
                                            Init::he_normal(seed)));
    this->add_param("bias", TensorT::zeros(Shape(std::vector<std::size_t>{filters})));
  }

  LayerKind kind() const override { return LayerKind::conv2d; }
  std::size_t filters() const { return filters_; }
  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }
  std::size_t in_channels() const { return in_channels_; }
  Padding padding() const { return padding_; }

  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 3, "conv2d");
    if (in[2] != in_channels_)
      throw ShapeError("conv2d expects " + std::to_string(in_channels_) + " input channels, got " + in.str());
    auto e = infer_out_extent({in[0], in[1], kernel_, kernel_, stride_, padding_});
    return Shape(std::vector<std::size_t>{e.height, e.width, filters_});
  }

 protected:
  TensorT do_forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t) override {
    const TensorT& x = *inputs[0];
    detail::expect_rank(x.shape(), 4, "conv2d");
    const Shape out_ps = output_shape(detail::per_sample(x.shape()));
    const std::size_t n = x.dim(0), ho = out_ps[0], wo = out_ps[1];
    TensorT y(detail::with_batch(n, out_ps));
    const auto& w = this->params_[0].value;
    const auto& b = this->params_[1].value;
    const std::size_t rows = ho * wo, cols = patch_cols();
    std::vector<T> col;
    const std::size_t in_img = x.dim(1) * x.dim(2) * x.dim(3);
    for (std::size_t i = 0; i < n; ++i) {
      T* yo = y.raw() + i * rows * filters_;
      for (std::size_t r = 0; r < rows; ++r) std::copy(b.raw(), b.raw() + filters_, yo + r * filters_);
      const T* a = im2col(x.raw() + i * in_img, x.dim(1), x.dim(2), ho, wo, col);
      kernel::gemm_nn(rows, filters_, cols, a, w.raw(), yo, true);
    }
    if (mode == Mode::train) {
      input_ = x;
      this->mark_cached(y.shape());
    }
    return y;
  }

  std::vector<TensorT> do_backward(const TensorT& dy, bool need_input_grad) override {
    const TensorT& x = input_;
    const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t ho = dy.dim(1), wo = dy.dim(2);
    const std::size_t rows = ho * wo, cols = patch_cols();
    const std::size_t in_img = h * wd * in_channels_;
    auto& w = this->params_[0];
    auto& b = this->params_[1];
    const bool param_grads = this->trainable_;

    TensorT dx;
    std::vector<T> wt;
    if (need_input_grad) {
      dx = TensorT::zeros_like(x);
      wt = kernel::transpose(cols, filters_, w.value.raw());
    }
    std::vector<T> col, dcol;
    for (std::size_t i = 0; i < n; ++i) {
      const T* g = dy.raw() + i * rows * filters_;
      if (param_grads) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t f = 0; f < filters_; ++f) b.grad[f] += g[r * filters_ + f];
        const T* a = im2col(x.raw() + i * in_img, h, wd, ho, wo, col);
        kernel::gemm_tn(rows, filters_, cols, a, g, w.grad.raw(), true);
      }
      if (need_input_grad) {
        T* dxi = dx.raw() + i * in_img;
        if (is_pointwise()) {
          kernel::gemm_nn(rows, cols, filters_, g, wt.data(), dxi, true);
        } else {
          dcol.assign(rows * cols, T{0});
          kernel::gemm_nn(rows, cols, filters_, g, wt.data(), dcol.data(), false);
          col2im(dcol.data(), h, wd, ho, wo, dxi);
        }
      }
    }
    std::vector<TensorT> out;
    out.push_back(std::move(dx));
    return out;
  }

  void release_cache() override { input_ = TensorT(); }

 private:
  std::size_t patch_cols() const { return kernel_ * kernel_ * in_channels_; }
  bool is_pointwise() const { return kernel_ == 1 && stride_ == 1; }

  /// Patch matrix (Ho*Wo, K*K*C) for one image; returns the image itself for 1x1/stride-1.
  const T* im2col(const T* img, std::size_t h, std::size_t wd, std::size_t ho, std::size_t wo,
                  std::vector<T>& col) const {
    if (is_pointwise()) return img;
    const std::size_t cols = patch_cols();
    col.assign(ho * wo * cols, T{0});
    const std::size_t pt = detail::pad_before(h, kernel_, stride_, padding_);
    const std::size_t pl = detail::pad_before(wd, kernel_, stride_, padding_);
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T* dst = col.data() + (oy * wo + ox) * cols;
        for (std::size_t ky = 0; ky < kernel_; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pt);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pl);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            const T* src = img + (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * in_channels_;
            std::copy(src, src + in_channels_, dst + (ky * kernel_ + kx) * in_channels_);
          }
        }
      }
    }
    return col.data();
  }

  void col2im(const T* dcol, std::size_t h, std::size_t wd, std::size_t ho, std::size_t wo, T* dimg) const {
    const std::size_t cols = patch_cols();
    const std::size_t pt = detail::pad_before(h, kernel_, stride_, padding_);
    const std::size_t pl = detail::pad_before(wd, kernel_, stride_, padding_);
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const T* src = dcol + (oy * wo + ox) * cols;
        for (std::size_t ky = 0; ky < kernel_; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pt);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pl);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            T* dst = dimg + (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * in_channels_;
            const T* s = src + (ky * kernel_ + kx) * in_channels_;
            for (std::size_t c = 0; c < in_channels_; ++c) dst[c] += s[c];
          }
        }
      }
    }
  }

  std::size_t filters_, kernel_, in_channels_, stride_;
  Padding padding_;
  TensorT input_;
};

/// Batch normalization over the last (channel) axis.
///
/// A trainable layer in train mode normalizes by batch statistics and folds
/// them into the moving averages; in eval mode, or while frozen, it uses the
/// moving statistics and leaves them untouched.
template <class T>
class BatchNorm final : public Layer<T> {
 public:
  using typename Layer<T>::TensorT;

  static constexpr double kDefaultMomentum = 0.99;
  static constexpr double kDefaultEpsilon = 1e-3;

  explicit BatchNorm(std::size_t channels, double momentum = kDefaultMomentum, double epsilon = kDefaultEpsilon)
      : channels_(channels), momentum_(momentum), epsilon_(epsilon) {
    if (channels < 1) throw ShapeError("batchnorm needs at least one channel");
    const Shape s(std::vector<std::size_t>{channels});
    this->add_param("gamma", TensorT::ones(s));
    this->add_param("beta", TensorT::zeros(s));
    this->add_state("moving_mean", TensorT::zeros(s));
    this->add_state("moving_variance", TensorT::ones(s));
  }

  LayerKind kind() const override { return LayerKind::batchnorm; }
  std::size_t channels() const { return channels_; }
  double momentum() const { return momentum_; }
  double epsilon() const { return epsilon_; }

  Shape output_shape(const Shape& in) const override {
    if (in.back() != channels_)
      throw ShapeError("batchnorm expects " + std::to_string(channels_) + " channels, got " + in.str());
    return in;
  }

 protected:
  TensorT do_forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t) override {
    const TensorT& x = *inputs[0];
    if (x.rank() < 2) throw ShapeError("batchnorm expects a batched input");
    output_shape(detail::per_sample(x.shape()));
    const std::size_t c = channels_, m = x.size() / c;
    const auto& gamma = this->params_[0].value;
    const auto& beta = this->params_[1].value;
    auto& mmean = this->state_[0].value;
    auto& mvar = this->state_[1].value;
    TensorT y(x.shape());

    batch_stats_ = mode == Mode::train && this->trainable_;
    inv_std_.assign(c, 0.0);
    if (batch_stats_) {
      std::vector<double> mean(c, 0.0), var(c, 0.0);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t k = 0; k < c; ++k) mean[k] += static_cast<double>(x[r * c + k]);
      for (std::size_t k = 0; k < c; ++k) mean[k] /= static_cast<double>(m);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t k = 0; k < c; ++k) {
          const double d = static_cast<double>(x[r * c + k]) - mean[k];
          var[k] += d * d;
        }
      for (std::size_t k = 0; k < c; ++k) {
        var[k] /= static_cast<double>(m);
        inv_std_[k] = 1.0 / std::sqrt(var[k] + epsilon_);
        mmean[k] = static_cast<T>(momentum_ * static_cast<double>(mmean[k]) + (1.0 - momentum_) * mean[k]);
        mvar[k] = static_cast<T>(momentum_ * static_cast<double>(mvar[k]) + (1.0 - momentum_) * var[k]);
      }
      xhat_ = TensorT(x.shape());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t i = r * c + k;
          const T xh = static_cast<T>((static_cast<double>(x[i]) - mean[k]) * inv_std_[k]);
          xhat_[i] = xh;
          y[i] = gamma[k] * xh + beta[k];
        }
    } else {
      std::vector<T> scale(c), shift(c);
      for (std::size_t k = 0; k < c; ++k) {
        inv_std_[k] = 1.0 / std::sqrt(static_cast<double>(mvar[k]) + epsilon_);
        scale[k] = static_cast<T>(static_cast<double>(gamma[k]) * inv_std_[k]);
        shift[k] = static_cast<T>(static_cast<double>(beta[k]) -
                                  static_cast<double>(mmean[k]) * static_cast<double>(gamma[k]) * inv_std_[k]);
      }
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t k = 0; k < c; ++k) y[r * c + k] = x[r * c + k] * scale[k] + shift[k];
    }
    if (mode == Mode::train) this->mark_cached(y.shape());
    return y;
  }

  std::vector<TensorT> do_backward(const TensorT& dy, bool need_input_grad) override {
    const std::size_t c = channels_, m = dy.size() / c;
    auto& gamma = this->params_[0];
    auto& beta = this->params_[1];
    TensorT dx;
    if (batch_stats_) {
      std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t i = r * c + k;
          sum_dy[k] += static_cast<double>(dy[i]);
          sum_dy_xhat[k] += static_cast<double>(dy[i]) * static_cast<double>(xhat_[i]);
        }
      for (std::size_t k = 0; k < c; ++k) {
        gamma.grad[k] += static_cast<T>(sum_dy_xhat[k]);
        beta.grad[k] += static_cast<T>(sum_dy[k]);
      }
      if (need_input_grad) {
        dx = TensorT(dy.shape());
        const double md = static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t k = 0; k < c; ++k) {
            const std::size_t i = r * c + k;
            const double g = static_cast<double>(gamma.value[k]) * inv_std_[k] / md;
            dx[i] = static_cast<T>(g * (md * static_cast<double>(dy[i]) - sum_dy[k] -
                                        static_cast<double>(xhat_[i]) * sum_dy_xhat[k]));
          }
      }
    } else if (need_input_grad) {
      dx = TensorT(dy.shape());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t k = 0; k < c; ++k)
          dx[r * c + k] = static_cast<T>(static_cast<double>(dy[r * c + k]) *
                                         static_cast<double>(gamma.value[k]) * inv_std_[k]);
    }
    std::vector<TensorT> out;
    out.push_back(std::move(dx));
    return out;
  }

  void release_cache() override { xhat_ = TensorT(); }

 private:
  std::size_t channels_;
  double momentum_, epsilon_;
  bool batch_stats_ = false;
  std::vector<double> inv_std_;
  TensorT xhat_;
};

/// Rectifier; the subgradient at exactly zero is zero.
template <class T>
class ReLU final : public Layer<T> {
 public:
  using typename Layer<T>::TensorT;
  LayerKind kind() const override { return LayerKind::relu; }
  Shape output_shape(const Shape& in) const override { return in; }

 protected:
  TensorT do_forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t) override {
    const TensorT& x = *inputs[0];
    TensorT y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} || std::isnan(x[i]) ? x[i] : T{0};
    if (mode == Mode::train) {
      mask_.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) mask_[i] = x[i] > T{0};
      this->mark_cached(y.shape());
    }
    return y;
  }

  std::vector<TensorT> do_backward(const TensorT& dy, bool need_input_grad) override {
    std::vector<TensorT> out(1);
    if (need_input_grad) {
      out[0] = TensorT(dy.shape());
      for (std::size_t i = 0; i < dy.size(); ++i) out[0][i] = mask_[i] ? dy[i] : T{0};
    }
    return out;
  }

  void release_cache() override { mask_.clear(); }

 private:
  std::vector<std::uint8_t> mask_;
};

/// Max pooling; padded positions never win. Backward routes each upstream value
/// to the recorded argmax (first maximum in scan order).
template <class T>
class MaxPool2D final : public Layer<T> {
 public:
  using typename Layer<T>::TensorT;

  MaxPool2D(std::size_t window, std::size_t stride, Padding padding)
      : window_(window), stride_(stride), padding_(padding) {}

  LayerKind kind() const override { return LayerKind::maxpool2d; }
  std::size_t window() const { return window_; }
  std::size_t stride() const { return stride_; }
  Padding padding() const { return padding_; }

  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 3, "maxpool2d");
    auto e = infer_out_extent({in[0], in[1], window_, window_, stride_, padding_});
    return Shape(std::vector<std::size_t>{e.height, e.width, in[2]});
  }

 protected:
  TensorT do_forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t) override {
    const TensorT& x = *inputs[0];
    detail::expect_rank(x.shape(), 4, "maxpool2d");
    const Shape ops = output_shape(detail::per_sample(x.shape()));
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::size_t ho = ops[0], wo = ops[1];
    const std::size_t pt = detail::pad_before(h, window_, stride_, padding_);
    const std::size_t pl = detail::pad_before(w, window_, stride_, padding_);
    TensorT y(detail::with_batch(n, ops));
    const bool train = mode == Mode::train;
    if (train) argmax_.assign(y.size(), 0);
    std::vector<std::size_t> best_idx(c);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          T* out = y.raw() + ((i * ho + oy) * wo + ox) * c;
          std::fill(out, out + c, -std::numeric_limits<T>::infinity());
          for (std::size_t ky = 0; ky < window_; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pt);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < window_; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pl);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t base = ((i * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * c;
              for (std::size_t k = 0; k < c; ++k) {
                if (x[base + k] > out[k]) {
                  out[k] = x[base + k];
                  best_idx[k] = base + k;
                }
              }
            }
          }
          if (train) {
            const std::size_t o = ((i * ho + oy) * wo + ox) * c;
            for (std::size_t k = 0; k < c; ++k) argmax_[o + k] = best_idx[k];
          }
        }
    if (train) {
      in_shape_ = x.shape();
      this->mark_cached(y.shape());
    }
    return y;
  }

  std::vector<TensorT> do_backward(const TensorT& dy, bool need_input_grad) override {
    std::vector<TensorT> out(1);
    if (need_input_grad) {
      out[0] = TensorT(in_shape_);
      for (std::size_t i = 0; i < dy.size(); ++i) out[0][argmax_[i]] += dy[i];
    }
    return out;
  }

  void release_cache() override { argmax_.clear(); }

 private:
  std::size_t window_, stride_;
  Padding padding_;
  std::vector<std::size_t> argmax_;
  Shape in_shape_;
};

/// (N, H, W, C) -> (N, C) spatial mean.
template <class T>
class GlobalAvgPool final : public Layer<T> {
 public:
  using typename Layer<T>::TensorT;
  LayerKind kind() const override { return LayerKind::globalavgpool; }
  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 3, "globalavgpool");
    return Shape(std::vector<std::size_t>{in[2]});
  }

 protected:
  TensorT do_forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t) override {
    const TensorT& x = *inputs[0];
    detail::expect_rank(x.shape(), 4, "globalavgpool");
    const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
    TensorT y(Shape(std::vector<std::size_t>{n, c}));
    std::vector<double> acc(c);
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < c; ++k) acc[k] += static_cast<double>(x[(i * hw + p) * c + k]);
      for (std::size_t k = 0; k < c; ++k) y[i * c + k] = static_cast<T>(acc[k] / static_cast<double>(hw));
    }
    if (mode == Mode::train) {
      in_shape_ = x.shape();
      this->mark_cached(y.shape());
    }
    return y;
  }

  std::vector<TensorT> do_backward(const TensorT& dy, bool need_input_grad) override {
    std::vector<TensorT> out(1);
    if (!need_input_grad) return out;
    const std::size_t n = in_shape_[0], hw = in_shape_[1] * in_shape_[2], c = in_shape_[3];
    out[0] = TensorT(in_shape_);
    const T inv = static_cast<T>(1.0 / static_cast<double>(hw));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < c; ++k) out[0][(i * hw + p) * c + k] = dy[i * c + k] * inv;
    return out;
  }

 private:
  Shape in_shape_;
};

template <class T>
class Flatten final : public Layer<T> {
 public:
  using typename Layer<T>::TensorT;
  LayerKind kind() const override { return LayerKind::flatten; }
  Shape output_shape(const Shape& in) const override { return Shape(std::vector<std::size_t>{in.numel()}); }

 protected:
  TensorT do_forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t) override {
    const TensorT& x = *inputs[0];
    const std::size_t n = x.dim(0);
    TensorT y = x.reshaped(Shape(std::vector<std::size_t>{n, x.size() / n}));
    if (mode == Mode::train) {
      in_shape_ = x.shape();
      this->mark_cached(y.shape());
    }
    return y;
  }

  std::vector<TensorT> do_backward(const TensorT& dy, bool need_input_grad) override {
    std::vector<TensorT> out(1);
    if (need_input_grad) out[0] = dy.reshaped(in_shape_);
    return out;
  }

 private:
  Shape in_shape_;
};

/// Fully connected layer: (N, in) x (in, units) + bias.
template <class T>
class Dense final : public Layer<T> {
 public:
  using typename Layer<T>::TensorT;

  Dense(std::size_t units, std::size_t in_features, std::uint64_t seed) : units_(units), in_(in_features) {
    if (units < 1 || in_features < 1) throw ShapeError("dense extents must be >= 1");
    this->add_param("kernel",
                    tensor_new<T>(Shape(std::vector<std::size_t>{in_features, units}), Init::he_normal(seed)));
    this->add_param("bias", TensorT::zeros(Shape(std::vector<std::size_t>{units})));
  }

  LayerKind kind() const override { return LayerKind::dense; }
  std::size_t units() const { return units_; }
  std::size_t in_features() const { return in_; }

  Shape output_shape(const Shape& in) const override {
    if (in.rank() != 1 || in[0] != in_)
      throw ShapeError("dense expects " + std::to_string(in_) + " input features, got " + in.str());
    return Shape(std::vector<std::size_t>{units_});
  }

 protected:
  TensorT do_forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t) override {
    const TensorT& x = *inputs[0];
    detail::expect_rank(x.shape(), 2, "dense");
    output_shape(detail::per_sample(x.shape()));
    const std::size_t n = x.dim(0);
    TensorT y(Shape(std::vector<std::size_t>{n, units_}));
    const auto& b = this->params_[1].value;
    for (std::size_t i = 0; i < n; ++i) std::copy(b.raw(), b.raw() + units_, y.raw() + i * units_);
    kernel::gemm_nn(n, units_, in_, x.raw(), this->params_[0].value.raw(), y.raw(), true);
    if (mode == Mode::train) {
      input_ = x;
      this->mark_cached(y.shape());
    }
    return y;
  }

  std::vector<TensorT> do_backward(const TensorT& dy, bool need_input_grad) override {
    const std::size_t n = dy.dim(0);
    auto& w = this->params_[0];
    auto& b = this->params_[1];
    if (this->trainable_) {
      kernel::gemm_tn(n, units_, in_, input_.raw(), dy.raw(), w.grad.raw(), true);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < units_; ++j) b.grad[j] += dy[i * units_ + j];
    }
    std::vector<TensorT> out(1);
    if (need_input_grad) {
      out[0] = TensorT(input_.shape());
      auto wt = kernel::transpose(in_, units_, w.value.raw());
      kernel::gemm_nn(n, in_, units_, dy.raw(), wt.data(), out[0].raw(), false);
    }
    return out;
  }

  void release_cache() override { input_ = TensorT(); }

 private:
  std::size_t units_, in_;
  TensorT input_;
};

/// Inverted dropout: train mode zeroes each value with probability `rate` and
/// scales survivors by 1 / (1 - rate); eval mode is the identity.
template <class T>
class Dropout final : public Layer<T> {
 public:
  using typename Layer<T>::TensorT;

  explicit Dropout(double rate) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) throw ShapeError("dropout rate must lie in [0, 1)");
  }

  LayerKind kind() const override { return LayerKind::dropout; }
  double rate() const { return rate_; }
  Shape output_shape(const Shape& in) const override { return in; }

 protected:
  TensorT do_forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t seed) override {
    const TensorT& x = *inputs[0];
    if (mode == Mode::eval) return x;
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    mask_.resize(x.size());
    TensorT y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = u(rng) >= rate_ ? scale : T{0};
      y[i] = x[i] * mask_[i];
    }
    this->mark_cached(y.shape());
    return y;
  }

  std::vector<TensorT> do_backward(const TensorT& dy, bool need_input_grad) override {
    std::vector<TensorT> out(1);
    if (need_input_grad) {
      out[0] = TensorT(dy.shape());
      for (std::size_t i = 0; i < dy.size(); ++i) out[0][i] = dy[i] * mask_[i];
    }
    return out;
  }

  void release_cache() override { mask_.clear(); }

 private:
  double rate_;
  std::vector<T> mask_;
};

/// Row-wise softmax over the last axis, with max subtraction.
template <class T>
class Softmax final : public Layer<T> {
 public:
  using typename Layer<T>::TensorT;
  LayerKind kind() const override { return LayerKind::softmax; }
  Shape output_shape(const Shape& in) const override { return in; }

  static TensorT apply(const TensorT& x) {
    const std::size_t c = x.shape().back(), rows = x.size() / c;
    TensorT y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* in = x.raw() + r * c;
      T* out = y.raw() + r * c;
      const double mx = static_cast<double>(*std::max_element(in, in + c));
      double sum = 0.0;
      for (std::size_t k = 0; k < c; ++k) sum += std::exp(static_cast<double>(in[k]) - mx);
      for (std::size_t k = 0; k < c; ++k) out[k] = static_cast<T>(std::exp(static_cast<double>(in[k]) - mx) / sum);
    }
    return y;
  }

 protected:
  TensorT do_forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t) override {
    TensorT y = apply(*inputs[0]);
    if (mode == Mode::train) {
      output_ = y;
      this->mark_cached(y.shape());
    }
    return y;
  }

  std::vector<TensorT> do_backward(const TensorT& dy, bool need_input_grad) override {
    std::vector<TensorT> out(1);
    if (!need_input_grad) return out;
    const std::size_t c = dy.shape().back(), rows = dy.size() / c;
    out[0] = TensorT(dy.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k)
        dot += static_cast<double>(dy[r * c + k]) * static_cast<double>(output_[r * c + k]);
      for (std::size_t k = 0; k < c; ++k)
        out[0][r * c + k] =
            static_cast<T>(static_cast<double>(output_[r * c + k]) * (static_cast<double>(dy[r * c + k]) - dot));
    }
    return out;
  }

  void release_cache() override { output_ = TensorT(); }

 private:
  TensorT output_;
};

/// Elementwise sum of two equally shaped inputs (residual merge).
template <class T>
class Add final : public Layer<T> {
 public:
  using typename Layer<T>::TensorT;
  LayerKind kind() const override { return LayerKind::add; }
  std::size_t num_inputs() const override { return 2; }
  Shape output_shape(const Shape& in) const override { return in; }

 protected:
  TensorT do_forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t) override {
    if (inputs[0]->shape() != inputs[1]->shape())
      throw ShapeError("add operands differ: " + inputs[0]->shape().str() + " vs " + inputs[1]->shape().str());
    TensorT y(inputs[0]->shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = (*inputs[0])[i] + (*inputs[1])[i];
    if (mode == Mode::train) this->mark_cached(y.shape());
    return y;
  }

  std::vector<TensorT> do_backward(const TensorT& dy, bool need_input_grad) override {
    std::vector<TensorT> out(2);
    if (need_input_grad) {
      out[0] = dy;
      out[1] = dy;
    }
    return out;
  }
};

}  // namespace pdcn
