#pragma once

// Differentiable building blocks with explicit backward passes. Activations
// are C x H x W tensors; convolutions lower to a matrix product via im2col.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>

#include "evwsss/tensor.hpp"

namespace evwsss::nn {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Views a rank-3 tensor as a (C) x (H*W) matrix, or a rank-2 tensor as-is.
template <class T>
MatrixMap<T> as_matrix(Tensor<T>& t) {
  const auto rows = static_cast<Eigen::Index>(t.dim(0));
  return MatrixMap<T>(t.data(), rows, static_cast<Eigen::Index>(t.size()) / rows);
}
template <class T>
ConstMatrixMap<T> as_matrix(const Tensor<T>& t) {
  const auto rows = static_cast<Eigen::Index>(t.dim(0));
  return ConstMatrixMap<T>(t.data(), rows, static_cast<Eigen::Index>(t.size()) / rows);
}
template <class T>
Eigen::Map<const ColVector<T>> as_vector(const Tensor<T>& t) {
  return Eigen::Map<const ColVector<T>>(t.data(), static_cast<Eigen::Index>(t.size()));
}
template <class T>
Eigen::Map<ColVector<T>> as_vector(Tensor<T>& t) {
  return Eigen::Map<ColVector<T>>(t.data(), static_cast<Eigen::Index>(t.size()));
}

struct ConvGeometry {
  std::size_t in_ch = 0, in_h = 0, in_w = 0;
  std::size_t kernel = 3, stride = 1, pad = 1;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return in_ch * kernel * kernel; }
};

template <class T>
void im2col(const Tensor<T>& in, const ConvGeometry& g, Tensor<T>& cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  cols = Tensor<T>({g.patch(), oh * ow});
  T* out = cols.data();
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = out + ((c * g.kernel + ky) * g.kernel + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.in_h) &&
                                ix < static_cast<std::ptrdiff_t>(g.in_w);
            row[oy * ow + ox] = inside ? in(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) : T{};
          }
        }
      }
}

// Adjoint of im2col: scatters column gradients back onto the input grid.
template <class T>
void col2im_add(const Tensor<T>& cols, const ConvGeometry& g, Tensor<T>& grad_in) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const T* src = cols.data();
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = src + ((c * g.kernel + ky) * g.kernel + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            grad_in(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) += row[oy * ow + ox];
          }
        }
      }
}

inline ConvGeometry geometry_for(const std::vector<std::size_t>& in_shape, std::size_t kernel, std::size_t stride) {
  return {in_shape[0], in_shape[1], in_shape[2], kernel, stride, kernel / 2};
}

// weight: out x in x k x k, bias: out. Keeps the im2col buffer for backward.
template <class T>
Tensor<T> conv2d(const Tensor<T>& in, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 Tensor<T>& cols) {
  const ConvGeometry g = geometry_for(in.shape(), weight.dim(2), stride);
  if (weight.dim(1) != g.in_ch) throw ArgumentError("conv2d: channel mismatch");
  im2col(in, g, cols);
  Tensor<T> out({weight.dim(0), g.out_h(), g.out_w()});
  ConstMatrixMap<T> w(weight.data(), static_cast<Eigen::Index>(weight.dim(0)), static_cast<Eigen::Index>(g.patch()));
  auto o = as_matrix(out);
  o.noalias() = w * as_matrix(cols);
  o.colwise() += as_vector(bias);
  return out;
}

// Accumulates parameter gradients; adds the input gradient when grad_in is given.
template <class T>
void conv2d_backward(const std::vector<std::size_t>& in_shape, const Tensor<T>& cols, const Tensor<T>& weight,
                     std::size_t stride, const Tensor<T>& grad_out, Tensor<T>& grad_weight, Tensor<T>& grad_bias,
                     Tensor<T>* grad_in) {
  const ConvGeometry g = geometry_for(in_shape, weight.dim(2), stride);
  const auto oc = static_cast<Eigen::Index>(weight.dim(0));
  const auto patch = static_cast<Eigen::Index>(g.patch());
  auto go = as_matrix(grad_out);
  MatrixMap<T>(grad_weight.data(), oc, patch).noalias() += go * as_matrix(cols).transpose();
  as_vector(grad_bias) += go.rowwise().sum();
  if (grad_in) {
    Tensor<T> dcols({g.patch(), g.out_h() * g.out_w()});
    as_matrix(dcols).noalias() = ConstMatrixMap<T>(weight.data(), oc, patch).transpose() * go;
    col2im_add(dcols, g, *grad_in);
  }
}

template <class T>
Tensor<T> upsample2(const Tensor<T>& in) {
  const std::size_t C = in.dim(0), H = in.dim(1), W = in.dim(2);
  Tensor<T> out({C, 2 * H, 2 * W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < 2 * H; ++y) {
      const T* src = &in(c, y / 2, 0);
      T* dst = &out(c, y, 0);
      for (std::size_t x = 0; x < 2 * W; ++x) dst[x] = src[x / 2];
    }
  return out;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& grad_out) {
  const std::size_t C = grad_out.dim(0), H = grad_out.dim(1) / 2, W = grad_out.dim(2) / 2;
  Tensor<T> g({C, H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t x = 0; x < 2 * W; ++x) g(c, y / 2, x / 2) += grad_out(c, y, x);
  return g;
}

template <class T>
void relu_inplace(Tensor<T>& t) {
  for (auto& v : t.values()) v = v > T{} ? v : T{};
}

// grad *= (activation > 0), where `activation` is the relu output.
template <class T>
void relu_backward_inplace(const Tensor<T>& activation, Tensor<T>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activation[i] > T{})) grad[i] = T{};
}

template <class T>
T sigmoid(T v) {
  return T{1} / (T{1} + std::exp(-v));
}

}  // namespace evwsss::nn
