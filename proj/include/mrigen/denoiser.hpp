#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrigen/core.hpp"
#include "mrigen/rng.hpp"
#include "mrigen/vocab.hpp"

namespace mrigen {

// Conditionally constrained epsilon-predictor at desk scale:
//   1xIxI -> stem conv (c1) -> down1 [res c1->c1, attn, conv s2] -> I/2
//   -> down2 [res c1->c2, attn, conv s2] -> I/4
//   -> mid [res, attn, res]
//   -> up2 [nearest x2, concat skip2, res 2*c2->c1, attn] -> I/2
//   -> up1 [nearest x2, concat skip1, res 2*c1->c1, attn] -> I
//   -> GN -> SiLU -> conv c1->1.
// Skips are tapped after each down level's attention, before downsampling.
// Feature maps are stored channels-by-pixels (C x H*W, row-major).

struct DenoiserConfig {
  int image_size = 32;    // divisible by 4
  int base_channels = 16; // c1; level-2 width is 2*c1
  int text_dim = 32;
  int time_dim = 64;      // even
  int attn_dim = 32;
  int gn_groups = 8;      // must divide base_channels
  int vocab_size = 33;

  bool operator==(const DenoiserConfig&) const = default;

  void validate() const;
  std::string manifest_string() const;
  std::uint64_t manifest_hash() const;

  /// Shrunk net for gradient-check speed.
  static DenoiserConfig reduced() {
    DenoiserConfig c;
    c.image_size = 8;
    c.base_channels = 4;
    c.text_dim = 8;
    c.time_dim = 16;
    c.attn_dim = 8;
    c.gn_groups = 2;
    return c;
  }
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---- layer parameter blocks -------------------------------------------------

template <class S>
struct Conv2d {
  Mat<S> w;  // out_ch x (in_ch*k*k)
  Mat<S> b;  // out_ch x 1
  int in_ch = 0, out_ch = 0, k = 3, stride = 1, pad = 1;
};

template <class S>
struct GroupNorm {
  Mat<S> gamma;  // C x 1
  Mat<S> beta;   // C x 1
  int groups = 1;
};

template <class S>
struct LinearLayer {
  Mat<S> w;  // out x in
  Mat<S> b;  // out x 1
};

template <class S>
struct CrossAttn {
  Mat<S> wq;  // C x d_attn
  Mat<S> wk;  // d_txt x d_attn
  Mat<S> wv;  // d_txt x d_attn
  Mat<S> wo;  // d_attn x C
};

template <class S>
struct ResBlock {
  GroupNorm<S> gn1;
  Conv2d<S> conv1;
  LinearLayer<S> tproj;  // time_dim -> out_ch
  GroupNorm<S> gn2;
  Conv2d<S> conv2;
  bool has_skip = false;
  Conv2d<S> skip;  // 1x1 when channel count changes
};

// ---- parameter manifest -----------------------------------------------------

template <class S>
struct DenoiserParams {
  DenoiserConfig cfg;
  std::uint64_t trained_steps = 0;

  Mat<S> token_emb;  // V x d_txt
  LinearLayer<S> time_fc1, time_fc2;
  Conv2d<S> stem;
  ResBlock<S> down1_res;
  CrossAttn<S> down1_attn;
  Conv2d<S> down1_ds;
  ResBlock<S> down2_res;
  CrossAttn<S> down2_attn;
  Conv2d<S> down2_ds;
  ResBlock<S> mid_res1;
  CrossAttn<S> mid_attn;
  ResBlock<S> mid_res2;
  ResBlock<S> up2_res;
  CrossAttn<S> up2_attn;
  ResBlock<S> up1_res;
  CrossAttn<S> up1_attn;
  GroupNorm<S> out_gn;
  Conv2d<S> out_conv;

  template <class F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&n](const std::string&, const Mat<S>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  void set_zero() {
    for_each_tensor([](const std::string&, Mat<S>& m) { m.setZero(); });
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&ok](const std::string&, const Mat<S>& m) { ok = ok && m.allFinite(); });
    return ok;
  }

 private:
  template <class Self, class F>
  static void visit_res(Self& r, const std::string& p, F& f) {
    f(p + ".gn1.gamma", r.gn1.gamma);
    f(p + ".gn1.beta", r.gn1.beta);
    f(p + ".conv1.w", r.conv1.w);
    f(p + ".conv1.b", r.conv1.b);
    f(p + ".tproj.w", r.tproj.w);
    f(p + ".tproj.b", r.tproj.b);
    f(p + ".gn2.gamma", r.gn2.gamma);
    f(p + ".gn2.beta", r.gn2.beta);
    f(p + ".conv2.w", r.conv2.w);
    f(p + ".conv2.b", r.conv2.b);
    if (r.has_skip) {
      f(p + ".skip.w", r.skip.w);
      f(p + ".skip.b", r.skip.b);
    }
  }

  template <class Self, class F>
  static void visit_attn(Self& a, const std::string& p, F& f) {
    f(p + ".wq", a.wq);
    f(p + ".wk", a.wk);
    f(p + ".wv", a.wv);
    f(p + ".wo", a.wo);
  }

  template <class Self, class F>
  static void visit(Self& p, F& f) {
    f(std::string("token_emb"), p.token_emb);
    f(std::string("time_fc1.w"), p.time_fc1.w);
    f(std::string("time_fc1.b"), p.time_fc1.b);
    f(std::string("time_fc2.w"), p.time_fc2.w);
    f(std::string("time_fc2.b"), p.time_fc2.b);
    f(std::string("stem.w"), p.stem.w);
    f(std::string("stem.b"), p.stem.b);
    visit_res(p.down1_res, "down1.res", f);
    visit_attn(p.down1_attn, "down1.attn", f);
    f(std::string("down1.ds.w"), p.down1_ds.w);
    f(std::string("down1.ds.b"), p.down1_ds.b);
    visit_res(p.down2_res, "down2.res", f);
    visit_attn(p.down2_attn, "down2.attn", f);
    f(std::string("down2.ds.w"), p.down2_ds.w);
    f(std::string("down2.ds.b"), p.down2_ds.b);
    visit_res(p.mid_res1, "mid.res1", f);
    visit_attn(p.mid_attn, "mid.attn", f);
    visit_res(p.mid_res2, "mid.res2", f);
    visit_res(p.up2_res, "up2.res", f);
    visit_attn(p.up2_attn, "up2.attn", f);
    visit_res(p.up1_res, "up1.res", f);
    visit_attn(p.up1_attn, "up1.attn", f);
    f(std::string("out.gn.gamma"), p.out_gn.gamma);
    f(std::string("out.gn.beta"), p.out_gn.beta);
    f(std::string("out.conv.w"), p.out_conv.w);
    f(std::string("out.conv.b"), p.out_conv.b);
  }
};

template <class S>
std::vector<Mat<S>*> collect_tensors(DenoiserParams<S>& p) {
  std::vector<Mat<S>*> out;
  p.for_each_tensor([&out](const std::string&, Mat<S>& m) { out.push_back(&m); });
  return out;
}

template <class S>
std::vector<const Mat<S>*> collect_tensors(const DenoiserParams<S>& p) {
  std::vector<const Mat<S>*> out;
  p.for_each_tensor([&out](const std::string&, const Mat<S>& m) { out.push_back(&m); });
  return out;
}

// ---- construction -----------------------------------------------------------

inline void DenoiserConfig::validate() const {
  if (image_size < 8 || image_size % 4 != 0) {
    throw DataError("denoiser: image_size must be >= 8 and divisible by 4");
  }
  if (base_channels < 1 || gn_groups < 1 || base_channels % gn_groups != 0) {
    throw DataError("denoiser: gn_groups must divide base_channels");
  }
  if (time_dim < 2 || time_dim % 2 != 0) throw DataError("denoiser: time_dim must be even");
  if (text_dim < 1 || attn_dim < 1) throw DataError("denoiser: bad embedding dims");
  if (vocab_size < Vocabulary::instance().size()) {
    throw DataError("denoiser: vocab_size smaller than the closed vocabulary");
  }
}

namespace detail {

template <class S>
Conv2d<S> make_conv(int in_ch, int out_ch, int k, int stride, int pad) {
  Conv2d<S> c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.k = k;
  c.stride = stride;
  c.pad = pad;
  c.w.setZero(out_ch, in_ch * k * k);
  c.b.setZero(out_ch, 1);
  return c;
}

template <class S>
GroupNorm<S> make_gn(int ch, int groups) {
  GroupNorm<S> g;
  g.groups = groups;
  g.gamma.setZero(ch, 1);
  g.beta.setZero(ch, 1);
  return g;
}

template <class S>
LinearLayer<S> make_linear(int in, int out) {
  LinearLayer<S> l;
  l.w.setZero(out, in);
  l.b.setZero(out, 1);
  return l;
}

template <class S>
ResBlock<S> make_res(int in_ch, int out_ch, int groups, int time_dim) {
  ResBlock<S> r;
  r.gn1 = make_gn<S>(in_ch, groups);
  r.conv1 = make_conv<S>(in_ch, out_ch, 3, 1, 1);
  r.tproj = make_linear<S>(time_dim, out_ch);
  r.gn2 = make_gn<S>(out_ch, groups);
  r.conv2 = make_conv<S>(out_ch, out_ch, 3, 1, 1);
  r.has_skip = in_ch != out_ch;
  if (r.has_skip) r.skip = make_conv<S>(in_ch, out_ch, 1, 1, 0);
  return r;
}

template <class S>
CrossAttn<S> make_attn(int ch, int text_dim, int attn_dim) {
  CrossAttn<S> a;
  a.wq.setZero(ch, attn_dim);
  a.wk.setZero(text_dim, attn_dim);
  a.wv.setZero(text_dim, attn_dim);
  a.wo.setZero(attn_dim, ch);
  return a;
}

}  // namespace detail

/// All tensors allocated at manifest shapes, zero-valued.
template <class S>
DenoiserParams<S> make_zero_params(const DenoiserConfig& cfg) {
  cfg.validate();
  using namespace detail;
  const int c1 = cfg.base_channels;
  const int c2 = 2 * c1;
  DenoiserParams<S> p;
  p.cfg = cfg;
  p.token_emb.setZero(cfg.vocab_size, cfg.text_dim);
  p.time_fc1 = make_linear<S>(cfg.time_dim, cfg.time_dim);
  p.time_fc2 = make_linear<S>(cfg.time_dim, cfg.time_dim);
  p.stem = make_conv<S>(1, c1, 3, 1, 1);
  p.down1_res = make_res<S>(c1, c1, cfg.gn_groups, cfg.time_dim);
  p.down1_attn = make_attn<S>(c1, cfg.text_dim, cfg.attn_dim);
  p.down1_ds = make_conv<S>(c1, c1, 3, 2, 1);
  p.down2_res = make_res<S>(c1, c2, cfg.gn_groups, cfg.time_dim);
  p.down2_attn = make_attn<S>(c2, cfg.text_dim, cfg.attn_dim);
  p.down2_ds = make_conv<S>(c2, c2, 3, 2, 1);
  p.mid_res1 = make_res<S>(c2, c2, cfg.gn_groups, cfg.time_dim);
  p.mid_attn = make_attn<S>(c2, cfg.text_dim, cfg.attn_dim);
  p.mid_res2 = make_res<S>(c2, c2, cfg.gn_groups, cfg.time_dim);
  p.up2_res = make_res<S>(2 * c2, c1, cfg.gn_groups, cfg.time_dim);
  p.up2_attn = make_attn<S>(c1, cfg.text_dim, cfg.attn_dim);
  p.up1_res = make_res<S>(2 * c1, c1, cfg.gn_groups, cfg.time_dim);
  p.up1_attn = make_attn<S>(c1, cfg.text_dim, cfg.attn_dim);
  p.out_gn = detail::make_gn<S>(c1, cfg.gn_groups);
  p.out_conv = make_conv<S>(c1, 1, 3, 1, 1);
  return p;
}

inline std::string DenoiserConfig::manifest_string() const {
  std::string s = "mrigen-unet-v1;img=" + std::to_string(image_size) +
                  ";base=" + std::to_string(base_channels) + ";txt=" + std::to_string(text_dim) +
                  ";time=" + std::to_string(time_dim) + ";attn=" + std::to_string(attn_dim) +
                  ";groups=" + std::to_string(gn_groups) + ";vocab=" + std::to_string(vocab_size) + ";";
  const auto p = make_zero_params<float>(*this);
  p.for_each_tensor([&s](const std::string& name, const Mat<float>& m) {
    s += name + ":" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ";";
  });
  return s;
}

inline std::uint64_t DenoiserConfig::manifest_hash() const { return fnv1a64(manifest_string()); }

/// Symmetric uniform fan-in init; the output conv stays zero so that the
/// initial epsilon prediction is identically zero. Pass zero_out_conv=false
/// to randomize it as well (gradient-check fixtures need nonzero output
/// weights, otherwise upstream gradients vanish).
template <class S>
DenoiserParams<S> init_denoiser(const DenoiserConfig& cfg, std::uint64_t seed,
                                bool zero_out_conv = true) {
  DenoiserParams<S> p = make_zero_params<S>(cfg);
  Rng rng(seed);
  auto fill_uniform = [&rng](Mat<S>& m, double bound) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = static_cast<S>(rng.uniform(-bound, bound));
      }
    }
  };
  auto init_conv = [&fill_uniform](Conv2d<S>& c) { fill_uniform(c.w, 1.0 / std::sqrt(double(c.in_ch) * c.k * c.k)); };
  auto init_linear = [&fill_uniform](LinearLayer<S>& l) { fill_uniform(l.w, 1.0 / std::sqrt(double(l.w.cols()))); };
  auto init_gn = [](GroupNorm<S>& g) { g.gamma.setOnes(); };
  auto init_res = [&](ResBlock<S>& r) {
    init_gn(r.gn1);
    init_conv(r.conv1);
    init_linear(r.tproj);
    init_gn(r.gn2);
    init_conv(r.conv2);
    if (r.has_skip) init_conv(r.skip);
  };
  auto init_attn = [&fill_uniform](CrossAttn<S>& a) {
    fill_uniform(a.wq, 1.0 / std::sqrt(double(a.wq.rows())));
    fill_uniform(a.wk, 1.0 / std::sqrt(double(a.wk.rows())));
    fill_uniform(a.wv, 1.0 / std::sqrt(double(a.wv.rows())));
    fill_uniform(a.wo, 1.0 / std::sqrt(double(a.wo.rows())));
  };

  fill_uniform(p.token_emb, 1.0 / std::sqrt(double(cfg.text_dim)));
  init_linear(p.time_fc1);
  init_linear(p.time_fc2);
  init_conv(p.stem);
  init_res(p.down1_res);
  init_attn(p.down1_attn);
  init_conv(p.down1_ds);
  init_res(p.down2_res);
  init_attn(p.down2_attn);
  init_conv(p.down2_ds);
  init_res(p.mid_res1);
  init_attn(p.mid_attn);
  init_res(p.mid_res2);
  init_res(p.up2_res);
  init_attn(p.up2_attn);
  init_res(p.up1_res);
  init_attn(p.up1_attn);
  init_gn(p.out_gn);
  if (!zero_out_conv) init_conv(p.out_conv);
  return p;
}

template <class To, class From>
DenoiserParams<To> cast_params(const DenoiserParams<From>& src) {
  DenoiserParams<To> dst = make_zero_params<To>(src.cfg);
  dst.trained_steps = src.trained_steps;
  auto dt = collect_tensors(dst);
  auto st = collect_tensors(src);
  for (std::size_t i = 0; i < dt.size(); ++i) *dt[i] = st[i]->template cast<To>();
  return dst;
}

// ---- layer forward / backward ----------------------------------------------
// Parameter gradients accumulate (+=); activation gradients overwrite.

template <class S>
struct ConvCache {
  Mat<S> cols;
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

template <class S>
void im2col(const Mat<S>& x, int H, int W, int k, int stride, int pad, Mat<S>& cols) {
  const int C = static_cast<int>(x.rows());
  const int oh = (H + 2 * pad - k) / stride + 1;
  const int ow = (W + 2 * pad - k) / stride + 1;
  cols.resize(static_cast<Eigen::Index>(C) * k * k, static_cast<Eigen::Index>(oh) * ow);
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          S* dst = cols.data() + static_cast<std::size_t>(row) * cols.cols() + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + ow, S(0));
            continue;
          }
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            dst[ox] = (ix >= 0 && ix < W) ? x(c, iy * W + ix) : S(0);
          }
        }
      }
    }
  }
}

template <class S>
void col2im_add(const Mat<S>& dcols, int C, int H, int W, int k, int stride, int pad, Mat<S>& dx) {
  const int oh = (H + 2 * pad - k) / stride + 1;
  const int ow = (W + 2 * pad - k) / stride + 1;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          const S* src = dcols.data() + static_cast<std::size_t>(row) * dcols.cols() + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < W) dx(c, iy * W + ix) += src[ox];
          }
        }
      }
    }
  }
}

template <class S>
Mat<S> conv2d_forward(const Conv2d<S>& conv, const Mat<S>& x, int H, int W, ConvCache<S>& cache) {
  cache.in_h = H;
  cache.in_w = W;
  im2col(x, H, W, conv.k, conv.stride, conv.pad, cache.cols);
  cache.out_h = (H + 2 * conv.pad - conv.k) / conv.stride + 1;
  cache.out_w = (W + 2 * conv.pad - conv.k) / conv.stride + 1;
  Mat<S> y = conv.w * cache.cols;
  y.colwise() += conv.b.col(0);
  return y;
}

template <class S>
void conv2d_backward(const Conv2d<S>& conv, const ConvCache<S>& cache, const Mat<S>& dy,
                     Mat<S>& dw, Mat<S>& db, Mat<S>* dx) {
  dw.noalias() += dy * cache.cols.transpose();
  db.col(0) += dy.rowwise().sum();
  if (dx != nullptr) {
    const Mat<S> dcols = conv.w.transpose() * dy;
    dx->setZero(conv.in_ch, static_cast<Eigen::Index>(cache.in_h) * cache.in_w);
    col2im_add(dcols, conv.in_ch, cache.in_h, cache.in_w, conv.k, conv.stride, conv.pad, *dx);
  }
}

inline constexpr double kGnEps = 1e-5;

template <class S>
struct GnCache {
  Mat<S> xhat;
  std::vector<S> inv_std;  // per group
};

template <class S>
Mat<S> groupnorm_forward(const GroupNorm<S>& gn, const Mat<S>& x, GnCache<S>& cache) {
  const int C = static_cast<int>(x.rows());
  const int N = static_cast<int>(x.cols());
  const int cg = C / gn.groups;
  cache.xhat.resize(C, N);
  cache.inv_std.assign(static_cast<std::size_t>(gn.groups), S(0));
  Mat<S> y(C, N);
  for (int g = 0; g < gn.groups; ++g) {
    const auto block = x.middleRows(g * cg, cg);
    const S mean = block.mean();
    const S var = (block.array() - mean).square().mean();
    const S inv_std = S(1) / std::sqrt(var + S(kGnEps));
    cache.inv_std[static_cast<std::size_t>(g)] = inv_std;
    cache.xhat.middleRows(g * cg, cg) = ((block.array() - mean) * inv_std).matrix();
    for (int c = g * cg; c < (g + 1) * cg; ++c) {
      y.row(c) = (gn.gamma(c, 0) * cache.xhat.row(c).array() + gn.beta(c, 0)).matrix();
    }
  }
  return y;
}

template <class S>
void groupnorm_backward(const GroupNorm<S>& gn, const GnCache<S>& cache, const Mat<S>& dy,
                        Mat<S>& dgamma, Mat<S>& dbeta, Mat<S>& dx) {
  const int C = static_cast<int>(dy.rows());
  const int N = static_cast<int>(dy.cols());
  const int cg = C / gn.groups;
  dx.resize(C, N);
  Mat<S> dxhat(cg, N);
  for (int g = 0; g < gn.groups; ++g) {
    const auto xhat_b = cache.xhat.middleRows(g * cg, cg);
    const auto dy_b = dy.middleRows(g * cg, cg);
    for (int i = 0; i < cg; ++i) {
      const int c = g * cg + i;
      dgamma(c, 0) += dy_b.row(i).cwiseProduct(xhat_b.row(i)).sum();
      dbeta(c, 0) += dy_b.row(i).sum();
      dxhat.row(i) = dy_b.row(i) * gn.gamma(c, 0);
    }
    const S m = static_cast<S>(cg) * static_cast<S>(N);
    const S mean_dxhat = dxhat.sum() / m;
    const S mean_dxhat_xhat = dxhat.cwiseProduct(xhat_b).sum() / m;
    dx.middleRows(g * cg, cg) =
        (cache.inv_std[static_cast<std::size_t>(g)] *
         (dxhat.array() - mean_dxhat - xhat_b.array() * mean_dxhat_xhat))
            .matrix();
  }
}

template <class S>
Mat<S> silu_forward(const Mat<S>& x, Mat<S>& cache_x) {
  cache_x = x;
  return (x.array() / (S(1) + (-x.array()).exp())).matrix();
}

template <class S>
Mat<S> silu_backward(const Mat<S>& dy, const Mat<S>& x) {
  const auto s = (S(1) / (S(1) + (-x.array()).exp()));
  return (dy.array() * s * (S(1) + x.array() * (S(1) - s))).matrix();
}

template <class S>
struct AttnCache {
  Mat<S> x;     // C x N input
  Mat<S> q;     // N x d_attn
  Mat<S> k;     // L x d_attn
  Mat<S> v;     // L x d_attn
  Mat<S> attn;  // N x L, rows sum to 1
  Mat<S> h;     // N x d_attn
};

/// Queries from image positions, keys/values from the text embedding; the
/// attended value is projected back and added to the input (residual).
template <class S>
Mat<S> cross_attn_forward(const CrossAttn<S>& a, const Mat<S>& x, const Mat<S>& text,
                          AttnCache<S>& cache) {
  const S scale = S(1) / std::sqrt(static_cast<S>(a.wq.cols()));
  cache.x = x;
  cache.q.noalias() = x.transpose() * a.wq;           // N x da
  cache.k.noalias() = text * a.wk;                    // L x da
  cache.v.noalias() = text * a.wv;                    // L x da
  Mat<S> logits = cache.q * cache.k.transpose() * scale;  // N x L
  cache.attn.resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const S mx = logits.row(r).maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (logits.row(r).array() - mx).exp();
    cache.attn.row(r) = (e / e.sum()).matrix();
  }
  cache.h.noalias() = cache.attn * cache.v;           // N x da
  Mat<S> out = x;
  out.noalias() += (cache.h * a.wo).transpose();      // residual
  return out;
}

template <class S>
void cross_attn_backward(const CrossAttn<S>& a, const AttnCache<S>& cache, const Mat<S>& text,
                         const Mat<S>& dy, Mat<S>& dwq, Mat<S>& dwk, Mat<S>& dwv, Mat<S>& dwo,
                         Mat<S>& dx, Mat<S>& dtext) {
  const S scale = S(1) / std::sqrt(static_cast<S>(a.wq.cols()));
  const Mat<S> dO = dy.transpose();                 // N x C
  dwo.noalias() += cache.h.transpose() * dO;        // da x C
  const Mat<S> dH = dO * a.wo.transpose();          // N x da
  Mat<S> dA = dH * cache.v.transpose();             // N x L
  const Mat<S> dV = cache.attn.transpose() * dH;    // L x da
  // softmax rows
  for (Eigen::Index r = 0; r < dA.rows(); ++r) {
    const S dot = dA.row(r).cwiseProduct(cache.attn.row(r)).sum();
    dA.row(r) = (cache.attn.row(r).array() * (dA.row(r).array() - dot)).matrix();
  }
  const Mat<S> dQ = dA * cache.k * scale;           // N x da
  const Mat<S> dK = dA.transpose() * cache.q * scale;  // L x da
  dwq.noalias() += cache.x * dQ;                    // C x da
  dwk.noalias() += text.transpose() * dK;
  dwv.noalias() += text.transpose() * dV;
  dtext.noalias() += dK * a.wk.transpose() + dV * a.wv.transpose();  // L x d_txt
  dx = dy;                                          // residual path
  dx.noalias() += a.wq * dQ.transpose();            // C x N
}

template <class S>
struct ResCache {
  GnCache<S> gn1;
  Mat<S> silu1_x;
  ConvCache<S> conv1;
  GnCache<S> gn2;
  Mat<S> silu2_x;
  ConvCache<S> conv2;
  ConvCache<S> skip;
};

template <class S>
Mat<S> resblock_forward(const ResBlock<S>& r, const Mat<S>& x, int H, int W, const Mat<S>& temb,
                        ResCache<S>& cache) {
  Mat<S> h = groupnorm_forward(r.gn1, x, cache.gn1);
  h = silu_forward(h, cache.silu1_x);
  h = conv2d_forward(r.conv1, h, H, W, cache.conv1);
  Mat<S> u = r.tproj.w * temb;
  u += r.tproj.b;
  h.colwise() += u.col(0);
  Mat<S> h2 = groupnorm_forward(r.gn2, h, cache.gn2);
  h2 = silu_forward(h2, cache.silu2_x);
  h2 = conv2d_forward(r.conv2, h2, H, W, cache.conv2);
  if (r.has_skip) {
    h2 += conv2d_forward(r.skip, x, H, W, cache.skip);
  } else {
    h2 += x;
  }
  return h2;
}

template <class S>
struct ResGrads {
  Mat<S>*dgn1_gamma, *dgn1_beta, *dconv1_w, *dconv1_b, *dtproj_w, *dtproj_b;
  Mat<S>*dgn2_gamma, *dgn2_beta, *dconv2_w, *dconv2_b, *dskip_w, *dskip_b;
};

template <class S>
ResGrads<S> res_grads(ResBlock<S>& g) {
  return {&g.gn1.gamma, &g.gn1.beta, &g.conv1.w, &g.conv1.b, &g.tproj.w, &g.tproj.b,
          &g.gn2.gamma, &g.gn2.beta, &g.conv2.w, &g.conv2.b,
          g.has_skip ? &g.skip.w : nullptr, g.has_skip ? &g.skip.b : nullptr};
}

template <class S>
void resblock_backward(const ResBlock<S>& r, const ResCache<S>& cache, const Mat<S>& dy,
                       const Mat<S>& temb, ResGrads<S> g, Mat<S>& dx, Mat<S>& dtemb) {
  Mat<S> dh;
  conv2d_backward(r.conv2, cache.conv2, dy, *g.dconv2_w, *g.dconv2_b, &dh);
  dh = silu_backward(dh, cache.silu2_x);
  Mat<S> dpre2;
  groupnorm_backward(r.gn2, cache.gn2, dh, *g.dgn2_gamma, *g.dgn2_beta, dpre2);
  const Mat<S> du = dpre2.rowwise().sum();
  g.dtproj_w->noalias() += du * temb.transpose();
  g.dtproj_b->col(0) += du.col(0);
  dtemb.noalias() += r.tproj.w.transpose() * du;
  Mat<S> ds1;
  conv2d_backward(r.conv1, cache.conv1, dpre2, *g.dconv1_w, *g.dconv1_b, &ds1);
  ds1 = silu_backward(ds1, cache.silu1_x);
  groupnorm_backward(r.gn1, cache.gn1, ds1, *g.dgn1_gamma, *g.dgn1_beta, dx);
  if (r.has_skip) {
    Mat<S> dx_skip;
    conv2d_backward(r.skip, cache.skip, dy, *g.dskip_w, *g.dskip_b, &dx_skip);
    dx += dx_skip;
  } else {
    dx += dy;
  }
}

template <class S>
Mat<S> upsample2(const Mat<S>& x, int H, int W) {
  const int C = static_cast<int>(x.rows());
  Mat<S> y(C, static_cast<Eigen::Index>(4) * H * W);
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const S v = x(c, i * W + j);
        const int base = (2 * i) * (2 * W) + 2 * j;
        y(c, base) = v;
        y(c, base + 1) = v;
        y(c, base + 2 * W) = v;
        y(c, base + 2 * W + 1) = v;
      }
    }
  }
  return y;
}

template <class S>
Mat<S> upsample2_backward(const Mat<S>& dy, int H, int W) {
  // H, W are the input (small) dims
  const int C = static_cast<int>(dy.rows());
  Mat<S> dx(C, static_cast<Eigen::Index>(H) * W);
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const int base = (2 * i) * (2 * W) + 2 * j;
        dx(c, i * W + j) = dy(c, base) + dy(c, base + 1) + dy(c, base + 2 * W) + dy(c, base + 2 * W + 1);
      }
    }
  }
  return dx;
}

// ---- conditioning -----------------------------------------------------------

/// Interleaved [sin(t*w_k), cos(t*w_k)] pairs, w_k = 10000^(-2k/d).
inline Eigen::VectorXd sinusoidal_time_embedding(int t, int d) {
  Eigen::VectorXd e(d);
  for (int k = 0; k < d / 2; ++k) {
    const double w = std::pow(10000.0, -2.0 * k / static_cast<double>(d));
    e(2 * k) = std::sin(t * w);
    e(2 * k + 1) = std::cos(t * w);
  }
  return e;
}

template <class S>
Mat<S> embed_text(const TokenSeq& tokens, const DenoiserParams<S>& p) {
  Mat<S> out(kTokenSeqLen, p.cfg.text_dim);
  for (int i = 0; i < kTokenSeqLen; ++i) {
    const int id = tokens.ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= p.cfg.vocab_size) throw DataError("embed_text: token id out of range");
    out.row(i) = p.token_emb.row(id);
  }
  return out;
}

template <class S>
struct TimeEmbCache {
  Mat<S> e;     // d x 1 sinusoid
  Mat<S> z1;    // pre-activation
  Mat<S> s;     // silu(z1)
  Mat<S> temb;  // d x 1
};

template <class S>
Mat<S> embed_time_cached(int t, const DenoiserParams<S>& p, TimeEmbCache<S>& cache) {
  const Eigen::VectorXd e = sinusoidal_time_embedding(t, p.cfg.time_dim);
  cache.e = e.cast<S>();
  cache.z1 = p.time_fc1.w * cache.e + p.time_fc1.b;
  cache.s = silu_forward(cache.z1, cache.z1);  // cache.z1 doubles as the silu input
  cache.temb = p.time_fc2.w * cache.s + p.time_fc2.b;
  return cache.temb;
}

template <class S>
Mat<S> embed_time(int t, const DenoiserParams<S>& p) {
  TimeEmbCache<S> cache;
  return embed_time_cached(t, p, cache);
}

template <class S>
void embed_time_backward(const DenoiserParams<S>& p, const TimeEmbCache<S>& cache,
                         const Mat<S>& dtemb, DenoiserParams<S>& g) {
  g.time_fc2.w.noalias() += dtemb * cache.s.transpose();
  g.time_fc2.b += dtemb;
  Mat<S> ds = p.time_fc2.w.transpose() * dtemb;
  ds = silu_backward(ds, cache.z1);
  g.time_fc1.w.noalias() += ds * cache.e.transpose();
  g.time_fc1.b += ds;
}

template <class S>
struct CondContext {
  Mat<S> text_emb;  // 8 x d_txt
  Mat<S> t_emb;     // d_t x 1
};

template <class S>
CondContext<S> make_context(const DenoiserParams<S>& p, const TokenSeq& tokens, int t) {
  return {embed_text(tokens, p), embed_time(t, p)};
}

// ---- full network -----------------------------------------------------------

template <class S>
struct UnetCache {
  int isize = 0;
  Mat<S> text;  // 8 x d_txt
  TimeEmbCache<S> time;
  TokenSeq tokens{};
  ConvCache<S> stem;
  ResCache<S> d1r;
  AttnCache<S> d1a;
  ConvCache<S> d1ds;
  ResCache<S> d2r;
  AttnCache<S> d2a;
  ConvCache<S> d2ds;
  ResCache<S> m1;
  AttnCache<S> ma;
  ResCache<S> m2;
  ResCache<S> u2r;
  AttnCache<S> u2a;
  ResCache<S> u1r;
  AttnCache<S> u1a;
  GnCache<S> outg;
  Mat<S> out_silu_x;
  ConvCache<S> outc;
};

namespace detail {
template <class S>
void ensure_finite(const Mat<S>& m, const char* layer) {
  if (!m.allFinite()) {
    throw NumericError(std::string("non-finite activations in layer '") + layer + "'");
  }
}
}  // namespace detail

/// Core pass from precomputed embeddings. x is 1 x (I*I).
template <class S>
Mat<S> unet_forward_core(const DenoiserParams<S>& p, const Mat<S>& x, const Mat<S>& text_emb,
                         const Mat<S>& temb, UnetCache<S>& c) {
  const int I = p.cfg.image_size;
  if (x.rows() != 1 || x.cols() != static_cast<Eigen::Index>(I) * I) {
    throw DataError("unet_forward: input must be 1x" + std::to_string(I * I));
  }
  detail::ensure_finite(x, "input");
  c.isize = I;
  c.text = text_emb;
  const int I2 = I / 2;
  const int I4 = I / 4;

  Mat<S> h = conv2d_forward(p.stem, x, I, I, c.stem);
  detail::ensure_finite(h, "stem");
  h = resblock_forward(p.down1_res, h, I, I, temb, c.d1r);
  h = cross_attn_forward(p.down1_attn, h, text_emb, c.d1a);
  detail::ensure_finite(h, "down1");
  const Mat<S> skip1 = h;  // c1 x I*I
  h = conv2d_forward(p.down1_ds, h, I, I, c.d1ds);

  h = resblock_forward(p.down2_res, h, I2, I2, temb, c.d2r);
  h = cross_attn_forward(p.down2_attn, h, text_emb, c.d2a);
  detail::ensure_finite(h, "down2");
  const Mat<S> skip2 = h;  // c2 x I2*I2
  h = conv2d_forward(p.down2_ds, h, I2, I2, c.d2ds);

  h = resblock_forward(p.mid_res1, h, I4, I4, temb, c.m1);
  h = cross_attn_forward(p.mid_attn, h, text_emb, c.ma);
  h = resblock_forward(p.mid_res2, h, I4, I4, temb, c.m2);
  detail::ensure_finite(h, "mid");

  Mat<S> up = upsample2(h, I4, I4);  // c2 x I2*I2
  Mat<S> cat(up.rows() + skip2.rows(), up.cols());
  cat << up, skip2;
  h = resblock_forward(p.up2_res, cat, I2, I2, temb, c.u2r);
  h = cross_attn_forward(p.up2_attn, h, text_emb, c.u2a);
  detail::ensure_finite(h, "up2");

  up = upsample2(h, I2, I2);  // c1 x I*I
  Mat<S> cat1(up.rows() + skip1.rows(), up.cols());
  cat1 << up, skip1;
  h = resblock_forward(p.up1_res, cat1, I, I, temb, c.u1r);
  h = cross_attn_forward(p.up1_attn, h, text_emb, c.u1a);
  detail::ensure_finite(h, "up1");

  h = groupnorm_forward(p.out_gn, h, c.outg);
  h = silu_forward(h, c.out_silu_x);
  h = conv2d_forward(p.out_conv, h, I, I, c.outc);
  detail::ensure_finite(h, "out");
  return h;  // 1 x I*I
}

/// Backward through the core graph; parameter grads accumulate into `g`.
/// dtext (8 x d_txt) and dtemb (d_t x 1) receive the conditioning grads.
template <class S>
void unet_backward_core(const DenoiserParams<S>& p, const UnetCache<S>& c, const Mat<S>& d_out,
                        DenoiserParams<S>& g, Mat<S>& dtext, Mat<S>& dtemb, Mat<S>* dx_in) {
  const int I = c.isize;
  const int I2 = I / 2;
  const int I4 = I / 4;
  const int c1 = p.cfg.base_channels;
  const int c2 = 2 * c1;
  dtext.setZero(kTokenSeqLen, p.cfg.text_dim);
  dtemb.setZero(p.cfg.time_dim, 1);

  Mat<S> d;
  conv2d_backward(p.out_conv, c.outc, d_out, g.out_conv.w, g.out_conv.b, &d);
  d = silu_backward(d, c.out_silu_x);
  Mat<S> dh;
  groupnorm_backward(p.out_gn, c.outg, d, g.out_gn.gamma, g.out_gn.beta, dh);

  Mat<S> dres;
  cross_attn_backward(p.up1_attn, c.u1a, c.text, dh, g.up1_attn.wq, g.up1_attn.wk, g.up1_attn.wv,
                      g.up1_attn.wo, dres, dtext);
  Mat<S> dcat1;
  resblock_backward(p.up1_res, c.u1r, dres, c.time.temb, res_grads(g.up1_res), dcat1, dtemb);
  const Mat<S> dskip1 = dcat1.bottomRows(c1);
  Mat<S> dup = upsample2_backward(Mat<S>(dcat1.topRows(c1)), I2, I2);

  cross_attn_backward(p.up2_attn, c.u2a, c.text, dup, g.up2_attn.wq, g.up2_attn.wk, g.up2_attn.wv,
                      g.up2_attn.wo, dres, dtext);
  Mat<S> dcat2;
  resblock_backward(p.up2_res, c.u2r, dres, c.time.temb, res_grads(g.up2_res), dcat2, dtemb);
  const Mat<S> dskip2 = dcat2.bottomRows(c2);
  dup = upsample2_backward(Mat<S>(dcat2.topRows(c2)), I4, I4);

  resblock_backward(p.mid_res2, c.m2, dup, c.time.temb, res_grads(g.mid_res2), d, dtemb);
  cross_attn_backward(p.mid_attn, c.ma, c.text, d, g.mid_attn.wq, g.mid_attn.wk, g.mid_attn.wv,
                      g.mid_attn.wo, dh, dtext);
  resblock_backward(p.mid_res1, c.m1, dh, c.time.temb, res_grads(g.mid_res1), d, dtemb);

  Mat<S> da2;
  conv2d_backward(p.down2_ds, c.d2ds, d, g.down2_ds.w, g.down2_ds.b, &da2);
  da2 += dskip2;  // skip reuse of the down2 attention output
  cross_attn_backward(p.down2_attn, c.d2a, c.text, da2, g.down2_attn.wq, g.down2_attn.wk,
                      g.down2_attn.wv, g.down2_attn.wo, d, dtext);
  resblock_backward(p.down2_res, c.d2r, d, c.time.temb, res_grads(g.down2_res), dh, dtemb);

  Mat<S> da1;
  conv2d_backward(p.down1_ds, c.d1ds, dh, g.down1_ds.w, g.down1_ds.b, &da1);
  da1 += dskip1;
  cross_attn_backward(p.down1_attn, c.d1a, c.text, da1, g.down1_attn.wq, g.down1_attn.wk,
                      g.down1_attn.wv, g.down1_attn.wo, d, dtext);
  resblock_backward(p.down1_res, c.d1r, d, c.time.temb, res_grads(g.down1_res), dh, dtemb);

  conv2d_backward(p.stem, c.stem, dh, g.stem.w, g.stem.b, dx_in);
}

/// eps prediction from a conditioning context.
template <class S>
Mat<S> unet_forward(const DenoiserParams<S>& p, const Mat<S>& x, const CondContext<S>& ctx) {
  UnetCache<S> cache;
  return unet_forward_core(p, x, ctx.text_emb, ctx.t_emb, cache);
}

/// eps prediction straight from tokens and timestep.
template <class S>
Mat<S> unet_forward(const DenoiserParams<S>& p, const Mat<S>& x, const TokenSeq& tokens, int t) {
  UnetCache<S> cache;
  cache.tokens = tokens;
  const Mat<S> text = embed_text(tokens, p);
  const Mat<S> temb = embed_time_cached(t, p, cache.time);
  return unet_forward_core(p, x, text, temb, cache);
}

// ---- MSE training loss over noised samples -----------------------------------

template <class S>
struct NoisedSample {
  Mat<S> x_t;  // 1 x N
  TokenSeq tokens{};
  int t = 1;
  Mat<S> eps;  // 1 x N target
};

/// Mean over batch and pixels of (eps_pred - eps)^2. When `grads` is given it
/// is zeroed first and receives d(loss)/d(params), including the token
/// embedding rows and the time MLP.
template <class S>
S den_loss(const DenoiserParams<S>& p, std::span<const NoisedSample<S>> batch,
           DenoiserParams<S>* grads = nullptr) {
  if (batch.empty()) throw DataError("den_loss: empty batch");
  if (grads != nullptr) grads->set_zero();
  const S npix = static_cast<S>(batch[0].x_t.cols());
  const S bsz = static_cast<S>(batch.size());
  S loss = 0;
  UnetCache<S> cache;
  Mat<S> dtext, dtemb;
  for (const auto& item : batch) {
    cache.tokens = item.tokens;
    const Mat<S> text = embed_text(item.tokens, p);
    const Mat<S> temb = embed_time_cached(item.t, p, cache.time);
    const Mat<S> pred = unet_forward_core(p, item.x_t, text, temb, cache);
    const Mat<S> resid = pred - item.eps;
    loss += resid.squaredNorm() / (npix * bsz);
    if (grads != nullptr) {
      const Mat<S> d_out = resid * (S(2) / (npix * bsz));
      unet_backward_core<S>(p, cache, d_out, *grads, dtext, dtemb, nullptr);
      for (int i = 0; i < kTokenSeqLen; ++i) {
        grads->token_emb.row(item.tokens.ids[static_cast<std::size_t>(i)]) += dtext.row(i);
      }
      embed_time_backward(p, cache.time, dtemb, *grads);
    }
  }
  return loss;
}

// ---- finite-difference gradient validation -----------------------------------

namespace detail {

template <class S>
std::vector<NoisedSample<double>> upcast_batch(std::span<const NoisedSample<S>> batch) {
  std::vector<NoisedSample<double>> out;
  out.reserve(batch.size());
  for (const auto& s : batch) {
    out.push_back({s.x_t.template cast<double>(), s.tokens, s.t, s.eps.template cast<double>()});
  }
  return out;
}

}  // namespace detail

/// Central finite differences on >= n_coords randomly chosen parameters
/// against the analytic gradient of the MSE loss; returns the max relative
/// error. In single precision the reference derivative is evaluated on a
/// double copy of the same parameter values, isolating the accumulated
/// error of the float gradient path.
template <class S>
double check_gradients(const DenoiserParams<S>& params, std::span<const NoisedSample<S>> batch,
                       int n_coords = 200, std::uint64_t seed = 20240901) {
  DenoiserParams<S> analytic = make_zero_params<S>(params.cfg);
  den_loss<S>(params, batch, &analytic);

  DenoiserParams<double> pd = cast_params<double>(params);
  const std::vector<NoisedSample<double>> bd = detail::upcast_batch<S>(batch);
  const std::span<const NoisedSample<double>> bds(bd);

  auto tensors = collect_tensors(pd);
  auto grad_tensors = collect_tensors(std::as_const(analytic));
  std::vector<std::size_t> sizes;
  std::size_t total = 0;
  for (const auto* t : tensors) {
    sizes.push_back(static_cast<std::size_t>(t->size()));
    total += sizes.back();
  }

  Rng rng(seed);
  double max_rel = 0.0;
  for (int c = 0; c < n_coords; ++c) {
    std::size_t flat = rng.below(total);
    std::size_t ti = 0;
    while (flat >= sizes[ti]) {
      flat -= sizes[ti];
      ++ti;
    }
    double* slot = tensors[ti]->data() + flat;
    const double theta = *slot;
    const double h = 1e-5 * std::max(1.0, std::abs(theta));
    *slot = theta + h;
    const double lp = den_loss<double>(pd, bds, nullptr);
    *slot = theta - h;
    const double lm = den_loss<double>(pd, bds, nullptr);
    *slot = theta;
    const double numeric = (lp - lm) / (2.0 * h);
    const double a = static_cast<double>(grad_tensors[ti]->data()[flat]);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  return max_rel;
}

}  // namespace mrigen
