#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mrigen/core.hpp"
#include "mrigen/denoiser.hpp"
#include "mrigen/rng.hpp"
#include "mrigen/schedule.hpp"
#include "mrigen/vocab.hpp"

namespace mrigen {

struct SampleStats {
  long cond_evals = 0;
  long uncond_evals = 0;
};

namespace detail {

template <class S>
Mat<S> standard_normal_row(Rng& rng, Eigen::Index n) {
  Mat<S> m(1, n);
  for (Eigen::Index i = 0; i < n; ++i) m(0, i) = static_cast<S>(rng.normal());
  return m;
}

/// Classifier-free guidance: w=1 never touches the unconditional branch.
template <class S>
Mat<S> guided_eps(const DenoiserParams<S>& p, const Mat<S>& x, const TokenSeq& cond, int t,
                  double w, SampleStats* stats) {
  Mat<S> eps = unet_forward(p, x, cond, t);
  if (stats != nullptr) ++stats->cond_evals;
  if (w != 1.0) {
    const Mat<S> eps_u = unet_forward(p, x, null_tokens(), t);
    if (stats != nullptr) ++stats->uncond_evals;
    eps = eps_u + static_cast<S>(w) * (eps - eps_u);
  }
  return eps;
}

template <class S>
ImageSlice to_image(const Mat<S>& x, int isize) {
  ImageSlice out;
  out.data.resize(isize, isize);
  for (int r = 0; r < isize; ++r) {
    for (int c = 0; c < isize; ++c) {
      const double v = std::clamp(static_cast<double>(x(0, r * isize + c)), -1.0, 1.0);
      out.data(r, c) = static_cast<float>((v + 1.0) / 2.0);
    }
  }
  return out;
}

}  // namespace detail

/// Ancestral DDPM sampling with sigma_t = sqrt(beta_t); no noise at t=1.
/// The [-1,1] result maps to a [0,1] slice.
template <class S>
ImageSlice sample_ddpm(const DenoiserParams<S>& p, const std::string& prompt,
                       const NoiseSchedule& sched, std::uint64_t seed, double guidance_scale = 1.0,
                       SampleStats* stats = nullptr) {
  const TokenSeq cond = tokenize(prompt);
  const int isize = p.cfg.image_size;
  const Eigen::Index n = static_cast<Eigen::Index>(isize) * isize;
  Rng rng(seed);
  Mat<S> x = detail::standard_normal_row<S>(rng, n);
  for (int t = sched.T; t >= 1; --t) {
    Mat<S> eps;
    try {
      eps = detail::guided_eps(p, x, cond, t, guidance_scale, stats);
    } catch (const NumericError& e) {
      throw NumericError("sample_ddpm at step t=" + std::to_string(t) + ": " + e.what());
    }
    const double a = sched.alpha_at(t);
    const double ab = sched.alpha_bar_at(t);
    const double b = sched.beta_at(t);
    x = ((x.template cast<double>() - (b / std::sqrt(1.0 - ab)) * eps.template cast<double>()) /
         std::sqrt(a))
            .template cast<S>();
    if (t > 1) {
      x += static_cast<S>(std::sqrt(b)) * detail::standard_normal_row<S>(rng, n);
    }
    if (!x.allFinite()) {
      throw NumericError("sample_ddpm: non-finite state at step t=" + std::to_string(t));
    }
  }
  return detail::to_image(x, isize);
}

/// Evenly spaced 1..T subsequence including both endpoints.
inline std::vector<int> ddim_timesteps(int T, int n_steps) {
  if (n_steps < 1 || n_steps > T) throw DataError("ddim_timesteps: need 1 <= n_steps <= T");
  std::vector<int> taus;
  taus.reserve(static_cast<std::size_t>(n_steps));
  if (n_steps == 1) {
    taus.push_back(T);
    return taus;
  }
  for (int i = 0; i < n_steps; ++i) {
    const double pos = 1.0 + static_cast<double>(i) * (T - 1) / (n_steps - 1.0);
    const int t = static_cast<int>(std::llround(pos));
    if (!taus.empty() && t <= taus.back()) throw DataError("ddim_timesteps: non-increasing subsequence");
    taus.push_back(t);
  }
  return taus;
}

/// Per-jump noise scales sigma_i = eta * sqrt(1 - abar_cur/abar_prev); at the
/// full-step count this equals the DDPM choice sqrt(beta_t) step for step.
inline Eigen::VectorXd ddim_sigma_table(const NoiseSchedule& sched, int n_steps, double eta) {
  const auto taus = ddim_timesteps(sched.T, n_steps);
  Eigen::VectorXd sigma(static_cast<Eigen::Index>(taus.size()));
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const double ab_cur = sched.alpha_bar_at(taus[i]);
    const double ab_prev = i == 0 ? 1.0 : sched.alpha_bar_at(taus[i - 1]);
    sigma(static_cast<Eigen::Index>(i)) = eta * std::sqrt(1.0 - ab_cur / ab_prev);
  }
  return sigma;
}

/// x0-prediction DDIM update over the timestep subsequence; eta=0 is fully
/// deterministic given x_T. The direction coefficient is clamped at zero
/// where the variance choice overshoots.
template <class S>
ImageSlice sample_ddim(const DenoiserParams<S>& p, const std::string& prompt,
                       const NoiseSchedule& sched, int n_steps, double eta, std::uint64_t seed,
                       double guidance_scale = 1.0, SampleStats* stats = nullptr) {
  if (eta < 0.0 || eta > 1.0) throw DataError("sample_ddim: eta must be in [0,1]");
  const TokenSeq cond = tokenize(prompt);
  const auto taus = ddim_timesteps(sched.T, n_steps);
  const Eigen::VectorXd sigma = ddim_sigma_table(sched, n_steps, eta);
  const int isize = p.cfg.image_size;
  const Eigen::Index n = static_cast<Eigen::Index>(isize) * isize;
  Rng rng(seed);
  Mat<S> x = detail::standard_normal_row<S>(rng, n);
  for (int i = static_cast<int>(taus.size()) - 1; i >= 0; --i) {
    const int t = taus[static_cast<std::size_t>(i)];
    Mat<S> eps;
    try {
      eps = detail::guided_eps(p, x, cond, t, guidance_scale, stats);
    } catch (const NumericError& e) {
      throw NumericError("sample_ddim at step t=" + std::to_string(t) + ": " + e.what());
    }
    const double ab_cur = sched.alpha_bar_at(t);
    const double ab_to = i == 0 ? 1.0 : sched.alpha_bar_at(taus[static_cast<std::size_t>(i - 1)]);
    const double sg = i == 0 ? 0.0 : sigma(i);  // the jump to t=0 adds no noise
    const Eigen::RowVectorXd xd = x.template cast<double>().row(0);
    const Eigen::RowVectorXd ed = eps.template cast<double>().row(0);
    const Eigen::RowVectorXd x0_hat = (xd - std::sqrt(1.0 - ab_cur) * ed) / std::sqrt(ab_cur);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_to - sg * sg));
    Eigen::RowVectorXd next = std::sqrt(ab_to) * x0_hat + dir * ed;
    if (sg > 0.0) {
      next += sg * detail::standard_normal_row<double>(rng, n).row(0);
    }
    x = next.template cast<S>();
    if (!x.allFinite()) {
      throw NumericError("sample_ddim: non-finite state at step t=" + std::to_string(t));
    }
  }
  return detail::to_image(x, isize);
}

}  // namespace mrigen
