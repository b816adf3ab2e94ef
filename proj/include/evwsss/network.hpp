#pragma once

// Recurrent encoder, U-Net-style decoder and the cross-branch projection pair.
//
// One branch:
//   per recurrent step t (voxel grid V_t, B x H x W):
//     e1 = relu(conv3x3/2(V_t))          hidden   x H/2 x W/2
//     e2 = relu(conv3x3/2(e1))           2*hidden x H/4 x W/4
//     x  = relu(conv3x3(e2))             D        x H/4 x W/4
//     h  = gru(x, h)                     1x1 convolutional GRU, h_0 = 0
//   features Z = h after the last step; skip = e1 of the last step
//   decoder:
//     u      = relu(up2(lateral1x1(Z)) + conv3x3(skip))
//     logits = up2(conv3x3(u))           C x H x W

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "evwsss/errors.hpp"
#include "evwsss/layers.hpp"
#include "evwsss/rng.hpp"
#include "evwsss/tensor.hpp"

namespace evwsss::nn {

struct NetworkConfig {
  int num_classes = 6;
  int feature_dim = 32;  // D
  int stride = 4;        // fixed by the trunk: two stride-2 stages
  int recurrent_steps = 2;
  int hidden_width = 8;
  int num_bins = 5;
  int height = 64;
  int width = 64;
  std::uint64_t init_seed = 0;

  std::size_t feature_h() const { return static_cast<std::size_t>(height / stride); }
  std::size_t feature_w() const { return static_cast<std::size_t>(width / stride); }

  void validate() const {
    if (stride != 4) throw ArgumentError("network: stride is fixed at 4 by the trunk");
    if (height % stride != 0 || width % stride != 0)
      throw ArgumentError("network: input size must be divisible by the stride");
    if (feature_dim < num_classes) throw ArgumentError("network: feature_dim must be >= num_classes");
    if (num_classes < 2 || hidden_width < 1 || num_bins < 1 || recurrent_steps < 1)
      throw ArgumentError("network: bad size parameter");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Parameters of one encoder/decoder branch.
template <class T>
struct BranchParams {
  Tensor<T> enc1_w, enc1_b, enc2_w, enc2_b, enc3_w, enc3_b;
  Tensor<T> gru_wz, gru_uz, gru_bz, gru_wr, gru_ur, gru_br, gru_wn, gru_un, gru_bn;
  Tensor<T> lat_w, lat_b, skip_w, skip_b, out_w, out_b;

  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  BranchParams zeros_like() const {
    BranchParams z = *this;
    z.visit([](std::string_view, Tensor<T>& t) { t.fill(T{}); });
    return z;
  }

  friend bool operator==(const BranchParams&, const BranchParams&) = default;

 private:
  template <class Self, class F>
  static void visit_impl(Self& s, F& f) {
    f("enc1.weight", s.enc1_w), f("enc1.bias", s.enc1_b);
    f("enc2.weight", s.enc2_w), f("enc2.bias", s.enc2_b);
    f("enc3.weight", s.enc3_w), f("enc3.bias", s.enc3_b);
    f("gru.wz", s.gru_wz), f("gru.uz", s.gru_uz), f("gru.bz", s.gru_bz);
    f("gru.wr", s.gru_wr), f("gru.ur", s.gru_ur), f("gru.br", s.gru_br);
    f("gru.wn", s.gru_wn), f("gru.un", s.gru_un), f("gru.bn", s.gru_bn);
    f("dec.lateral.weight", s.lat_w), f("dec.lateral.bias", s.lat_b);
    f("dec.skip.weight", s.skip_w), f("dec.skip.bias", s.skip_b);
    f("dec.out.weight", s.out_w), f("dec.out.bias", s.out_b);
  }
};

namespace detail {

template <class T>
Tensor<T> scaled_normal(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(stddev * rng.normal());
  return t;
}

}  // namespace detail

// Fixed-seed He/Glorot-style scaled-normal init; biases start at zero.
template <class T>
BranchParams<T> init_branch(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const auto B = static_cast<std::size_t>(cfg.num_bins), c1 = static_cast<std::size_t>(cfg.hidden_width),
             c2 = 2 * c1, D = static_cast<std::size_t>(cfg.feature_dim), C = static_cast<std::size_t>(cfg.num_classes);
  auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  auto lecun = [](std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); };
  BranchParams<T> p;
  p.enc1_w = detail::scaled_normal<T>({c1, B, 3, 3}, he(B * 9), rng);
  p.enc1_b = Tensor<T>({c1});
  p.enc2_w = detail::scaled_normal<T>({c2, c1, 3, 3}, he(c1 * 9), rng);
  p.enc2_b = Tensor<T>({c2});
  p.enc3_w = detail::scaled_normal<T>({D, c2, 3, 3}, he(c2 * 9), rng);
  p.enc3_b = Tensor<T>({D});
  for (auto* w : {&p.gru_wz, &p.gru_uz, &p.gru_wr, &p.gru_ur, &p.gru_wn, &p.gru_un})
    *w = detail::scaled_normal<T>({D, D}, lecun(D), rng);
  p.gru_bz = Tensor<T>({D});
  p.gru_br = Tensor<T>({D});
  p.gru_bn = Tensor<T>({D});
  p.lat_w = detail::scaled_normal<T>({c2, D}, he(D), rng);
  p.lat_b = Tensor<T>({c2});
  p.skip_w = detail::scaled_normal<T>({c2, c1, 3, 3}, he(c1 * 9), rng);
  p.skip_b = Tensor<T>({c2});
  p.out_w = detail::scaled_normal<T>({C, c2, 3, 3}, lecun(c2 * 9), rng);
  p.out_b = Tensor<T>({C});
  return p;
}

// Intermediate values of one recurrent step, kept for backpropagation.
template <class T>
struct StepCache {
  Tensor<T> input, cols1, e1, cols2, e2, cols3, x;
  Tensor<T> h_prev, z, r, n, rh, h;
};

template <class T>
struct EncoderTrace {
  std::vector<StepCache<T>> steps;
  const Tensor<T>& features() const { return steps.back().h; }
  const Tensor<T>& skip() const { return steps.back().e1; }
};

template <class T>
struct DecoderTrace {
  Tensor<T> lateral, cols_skip, u, cols_out;
};

namespace detail {

template <class T>
void check_voxels(const NetworkConfig& cfg, const std::vector<Tensor<T>>& voxels) {
  if (voxels.empty()) throw ArgumentError("encode: empty voxel sequence");
  const std::vector<std::size_t> expected{static_cast<std::size_t>(cfg.num_bins), static_cast<std::size_t>(cfg.height),
                                          static_cast<std::size_t>(cfg.width)};
  for (const auto& v : voxels) require_shape(v, expected, "encode: voxel grid");
}

}  // namespace detail

// Folds the voxel sequence through the trunk and the gated recurrent cell.
template <class T>
EncoderTrace<T> encode(const NetworkConfig& cfg, const BranchParams<T>& p, const std::vector<Tensor<T>>& voxels) {
  detail::check_voxels(cfg, voxels);
  const std::size_t D = static_cast<std::size_t>(cfg.feature_dim);
  EncoderTrace<T> trace;
  Tensor<T> h({D, cfg.feature_h(), cfg.feature_w()});
  for (const auto& v : voxels) {
    StepCache<T> s;
    s.input = v;
    s.e1 = conv2d(v, p.enc1_w, p.enc1_b, 2, s.cols1);
    relu_inplace(s.e1);
    s.e2 = conv2d(s.e1, p.enc2_w, p.enc2_b, 2, s.cols2);
    relu_inplace(s.e2);
    s.x = conv2d(s.e2, p.enc3_w, p.enc3_b, 1, s.cols3);
    relu_inplace(s.x);

    s.h_prev = h;
    s.z = Tensor<T>(h.shape());
    s.r = Tensor<T>(h.shape());
    s.n = Tensor<T>(h.shape());
    s.rh = Tensor<T>(h.shape());
    s.h = Tensor<T>(h.shape());
    auto X = as_matrix(s.x);
    auto Hp = as_matrix(s.h_prev);
    auto Z = as_matrix(s.z);
    auto R = as_matrix(s.r);
    auto N = as_matrix(s.n);
    auto RH = as_matrix(s.rh);
    Z.noalias() = as_matrix(p.gru_wz) * X;
    Z.noalias() += as_matrix(p.gru_uz) * Hp;
    Z.colwise() += as_vector(p.gru_bz);
    R.noalias() = as_matrix(p.gru_wr) * X;
    R.noalias() += as_matrix(p.gru_ur) * Hp;
    R.colwise() += as_vector(p.gru_br);
    for (auto& val : s.z.values()) val = sigmoid(val);
    for (auto& val : s.r.values()) val = sigmoid(val);
    RH = R.cwiseProduct(Hp);
    N.noalias() = as_matrix(p.gru_wn) * X;
    N.noalias() += as_matrix(p.gru_un) * RH;
    N.colwise() += as_vector(p.gru_bn);
    for (auto& val : s.n.values()) val = std::tanh(val);
    for (std::size_t i = 0; i < s.h.size(); ++i) s.h[i] = (T{1} - s.z[i]) * s.n[i] + s.z[i] * s.h_prev[i];
    h = s.h;
    trace.steps.push_back(std::move(s));
  }
  return trace;
}

template <class T>
Tensor<T> decode(const NetworkConfig& cfg, const BranchParams<T>& p, const Tensor<T>& features, const Tensor<T>& skip,
                 DecoderTrace<T>& trace) {
  require_shape(features, {static_cast<std::size_t>(cfg.feature_dim), cfg.feature_h(), cfg.feature_w()},
                "decode: features");
  require_shape(skip, {static_cast<std::size_t>(cfg.hidden_width), 2 * cfg.feature_h(), 2 * cfg.feature_w()},
                "decode: skip");
  trace.lateral = Tensor<T>({p.lat_w.dim(0), cfg.feature_h(), cfg.feature_w()});
  auto L = as_matrix(trace.lateral);
  L.noalias() = as_matrix(p.lat_w) * as_matrix(features);
  L.colwise() += as_vector(p.lat_b);
  trace.u = conv2d(skip, p.skip_w, p.skip_b, 1, trace.cols_skip);
  trace.u += upsample2(trace.lateral);
  relu_inplace(trace.u);
  return upsample2(conv2d(trace.u, p.out_w, p.out_b, 1, trace.cols_out));
}

template <class T>
Tensor<T> decode(const NetworkConfig& cfg, const BranchParams<T>& p, const Tensor<T>& features, const Tensor<T>& skip) {
  DecoderTrace<T> trace;
  return decode(cfg, p, features, skip, trace);
}

// Gradients of the decoder given dL/dlogits. Accumulates into `grads`;
// returns dL/dfeatures and adds dL/dskip into grad_skip.
template <class T>
Tensor<T> decode_backward(const BranchParams<T>& p, const Tensor<T>& features, const Tensor<T>& skip,
                          const DecoderTrace<T>& trace, const Tensor<T>& grad_logits, BranchParams<T>& grads,
                          Tensor<T>& grad_skip) {
  Tensor<T> g_out = upsample2_backward(grad_logits);
  Tensor<T> g_u(trace.u.shape());
  conv2d_backward(trace.u.shape(), trace.cols_out, p.out_w, 1, g_out, grads.out_w, grads.out_b, &g_u);
  relu_backward_inplace(trace.u, g_u);
  conv2d_backward(skip.shape(), trace.cols_skip, p.skip_w, 1, g_u, grads.skip_w, grads.skip_b, &grad_skip);
  Tensor<T> g_lat = upsample2_backward(g_u);
  auto GL = as_matrix(g_lat);
  as_matrix(grads.lat_w).noalias() += GL * as_matrix(features).transpose();
  as_vector(grads.lat_b) += GL.rowwise().sum();
  Tensor<T> g_feat(features.shape());
  as_matrix(g_feat).noalias() = as_matrix(p.lat_w).transpose() * GL;
  return g_feat;
}

// Backpropagation through time over all recurrent steps.
template <class T>
void encode_backward(const BranchParams<T>& p, const EncoderTrace<T>& trace, const Tensor<T>& grad_features,
                     const Tensor<T>& grad_skip, BranchParams<T>& grads) {
  Tensor<T> g_h = grad_features;
  for (std::size_t k = trace.steps.size(); k-- > 0;) {
    const StepCache<T>& s = trace.steps[k];
    const std::size_t n = s.h.size();
    Tensor<T> a_z(s.h.shape()), a_r(s.h.shape()), a_n(s.h.shape()), g_hprev(s.h.shape());
    for (std::size_t i = 0; i < n; ++i) {
      const T gh = g_h[i];
      a_z[i] = gh * (s.h_prev[i] - s.n[i]) * s.z[i] * (T{1} - s.z[i]);
      a_n[i] = gh * (T{1} - s.z[i]) * (T{1} - s.n[i] * s.n[i]);
      g_hprev[i] = gh * s.z[i];
    }
    auto X = as_matrix(s.x);
    auto Hp = as_matrix(s.h_prev);
    auto AN = as_matrix(a_n);
    auto AZ = as_matrix(a_z);
    auto AR = as_matrix(a_r);
    auto GHp = as_matrix(g_hprev);
    as_matrix(grads.gru_wn).noalias() += AN * X.transpose();
    as_matrix(grads.gru_un).noalias() += AN * as_matrix(s.rh).transpose();
    as_vector(grads.gru_bn) += AN.rowwise().sum();
    Tensor<T> g_rh(s.h.shape());
    as_matrix(g_rh).noalias() = as_matrix(p.gru_un).transpose() * AN;
    for (std::size_t i = 0; i < n; ++i) {
      a_r[i] = g_rh[i] * s.h_prev[i] * s.r[i] * (T{1} - s.r[i]);
      g_hprev[i] += g_rh[i] * s.r[i];
    }
    as_matrix(grads.gru_wz).noalias() += AZ * X.transpose();
    as_matrix(grads.gru_uz).noalias() += AZ * Hp.transpose();
    as_vector(grads.gru_bz) += AZ.rowwise().sum();
    as_matrix(grads.gru_wr).noalias() += AR * X.transpose();
    as_matrix(grads.gru_ur).noalias() += AR * Hp.transpose();
    as_vector(grads.gru_br) += AR.rowwise().sum();
    GHp.noalias() += as_matrix(p.gru_uz).transpose() * AZ;
    GHp.noalias() += as_matrix(p.gru_ur).transpose() * AR;

    Tensor<T> g_x(s.x.shape());
    auto GX = as_matrix(g_x);
    GX.noalias() = as_matrix(p.gru_wn).transpose() * AN;
    GX.noalias() += as_matrix(p.gru_wz).transpose() * AZ;
    GX.noalias() += as_matrix(p.gru_wr).transpose() * AR;
    relu_backward_inplace(s.x, g_x);
    Tensor<T> g_e2(s.e2.shape());
    conv2d_backward(s.e2.shape(), s.cols3, p.enc3_w, 1, g_x, grads.enc3_w, grads.enc3_b, &g_e2);
    relu_backward_inplace(s.e2, g_e2);
    Tensor<T> g_e1(s.e1.shape());
    conv2d_backward(s.e1.shape(), s.cols2, p.enc2_w, 2, g_e2, grads.enc2_w, grads.enc2_b, &g_e1);
    if (k + 1 == trace.steps.size()) g_e1 += grad_skip;
    relu_backward_inplace(s.e1, g_e1);
    conv2d_backward<T>(s.input.shape(), s.cols1, p.enc1_w, 2, g_e1, grads.enc1_w, grads.enc1_b, nullptr);
    g_h = std::move(g_hprev);
  }
}

// Full branch forward pass with everything needed for backward.
template <class T>
struct BranchPass {
  EncoderTrace<T> encoder;
  DecoderTrace<T> decoder;
  Tensor<T> logits;
  const Tensor<T>& features() const { return encoder.features(); }
};

template <class T>
BranchPass<T> forward(const NetworkConfig& cfg, const BranchParams<T>& p, const std::vector<Tensor<T>>& voxels) {
  BranchPass<T> pass;
  pass.encoder = encode(cfg, p, voxels);
  pass.logits = decode(cfg, p, pass.encoder.features(), pass.encoder.skip(), pass.decoder);
  return pass;
}

// grad_features carries any loss terms attached directly to Z (may be empty).
template <class T>
void backward(const BranchParams<T>& p, const BranchPass<T>& pass, const Tensor<T>& grad_logits,
              const Tensor<T>* grad_features, BranchParams<T>& grads) {
  Tensor<T> g_skip(pass.encoder.skip().shape());
  Tensor<T> g_feat = decode_backward(p, pass.features(), pass.encoder.skip(), pass.decoder, grad_logits, grads, g_skip);
  if (grad_features) g_feat += *grad_features;
  encode_backward(p, pass.encoder, g_feat, g_skip, grads);
}

// Two channel-wise affine maps between the branches' feature spaces.
template <class T>
struct ProjectionPair {
  Tensor<T> f2b_w, f2b_b, b2f_w, b2f_b;

  template <class F>
  void visit(F&& f) {
    f("proj.f2b.weight", f2b_w), f("proj.f2b.bias", f2b_b), f("proj.b2f.weight", b2f_w), f("proj.b2f.bias", b2f_b);
  }
  template <class F>
  void visit(F&& f) const {
    f("proj.f2b.weight", f2b_w), f("proj.f2b.bias", f2b_b), f("proj.b2f.weight", b2f_w), f("proj.b2f.bias", b2f_b);
  }
  std::size_t dim() const { return f2b_w.dim(0); }

  ProjectionPair zeros_like() const {
    ProjectionPair z = *this;
    z.visit([](std::string_view, Tensor<T>& t) { t.fill(T{}); });
    return z;
  }

  friend bool operator==(const ProjectionPair&, const ProjectionPair&) = default;
};

enum class Direction { ForwardToBackward, BackwardToForward };

// Identity plus N(0, noise^2) perturbation, zero bias.
template <class T>
ProjectionPair<T> init_projection(std::size_t dim, double noise, std::uint64_t seed) {
  Rng rng(seed);
  ProjectionPair<T> p;
  for (auto* w : {&p.f2b_w, &p.b2f_w}) {
    *w = detail::scaled_normal<T>({dim, dim}, noise, rng);
    for (std::size_t i = 0; i < dim; ++i) (*w)(i, i) += T{1};
  }
  p.f2b_b = Tensor<T>({dim});
  p.b2f_b = Tensor<T>({dim});
  return p;
}

// Applies the selected map along the leading (channel) axis of v, which may
// be a D-vector or a D x H x W feature map.
template <class T>
Tensor<T> project(const ProjectionPair<T>& pair, const Tensor<T>& v, Direction dir) {
  const auto& w = dir == Direction::ForwardToBackward ? pair.f2b_w : pair.b2f_w;
  const auto& b = dir == Direction::ForwardToBackward ? pair.f2b_b : pair.b2f_b;
  if (v.rank() == 0 || v.dim(0) != w.dim(1)) throw ArgumentError("project: channel dimension mismatch");
  Tensor<T> out(v.shape());
  const auto D = static_cast<Eigen::Index>(v.dim(0));
  const auto cols = static_cast<Eigen::Index>(v.size()) / D;
  MatrixMap<T> o(out.data(), D, cols);
  o.noalias() = as_matrix(w) * ConstMatrixMap<T>(v.data(), D, cols);
  o.colwise() += as_vector(b);
  return out;
}

// Rescales a voxel grid to unit RMS over its nonzero entries.
template <class T>
Tensor<T> normalize_voxels(const Tensor<double>& grid) {
  double sq = 0.0;
  std::size_t nz = 0;
  for (double v : grid.values())
    if (v != 0.0) {
      sq += v * v;
      ++nz;
    }
  const double scale = nz ? 1.0 / std::sqrt(sq / static_cast<double>(nz)) : 1.0;
  Tensor<T> out(grid.shape());
  for (std::size_t i = 0; i < grid.size(); ++i) out[i] = static_cast<T>(grid[i] * scale);
  return out;
}

}  // namespace evwsss::nn
