#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrigen/checkpoint.hpp"
#include "mrigen/core.hpp"
#include "mrigen/denoiser.hpp"
#include "mrigen/manifest.hpp"
#include "mrigen/optim.hpp"
#include "mrigen/prompt.hpp"
#include "mrigen/rng.hpp"
#include "mrigen/sampler.hpp"
#include "mrigen/schedule.hpp"
#include "mrigen/vocab.hpp"

namespace mrigen {

struct TrainItem {
  ImageMat image01;  // [0,1] intensities, image_size x image_size
  TokenSeq tokens{};
};

struct LossCurve {
  std::vector<std::pair<long, double>> points;  // (step, loss), steps strictly increasing

  void to_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    os << "step,loss\n";
    char buf[64];
    for (const auto& [step, loss] : points) {
      std::snprintf(buf, sizeof(buf), "%ld,%.9g\n", step, loss);
      os << buf;
    }
  }
};

template <class S>
struct TrainResult {
  DenoiserParams<S> params;
  LossCurve curve;
};

namespace detail {

template <class S>
Mat<S> to_diffusion_row(const ImageMat& img) {
  // [0,1] image -> [-1,1] row vector
  Mat<S> row(1, img.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < img.rows(); ++r) {
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      row(0, k++) = static_cast<S>(2.0f * img(r, c) - 1.0f);
    }
  }
  return row;
}

template <class S>
void add_scaled(DenoiserParams<S>& dst, const DenoiserParams<S>& src, S scale) {
  auto d = collect_tensors(dst);
  auto s = collect_tensors(src);
  for (std::size_t i = 0; i < d.size(); ++i) *d[i] += scale * *s[i];
}

template <class S>
void scale_params(DenoiserParams<S>& p, S scale) {
  auto t = collect_tensors(p);
  for (auto* m : t) *m *= scale;
}

template <class S>
std::vector<std::uint8_t> frozen_mask(const DenoiserParams<S>& p, bool train_text_embedding) {
  std::vector<std::uint8_t> mask;
  p.for_each_tensor([&](const std::string& name, const Mat<S>&) {
    mask.push_back(!train_text_embedding && name == "token_emb" ? 1 : 0);
  });
  return mask;
}

}  // namespace detail

/// Draws (t, eps, conditioning dropout) per batch item, forms x_t by the
/// closed-form forward process and returns the mean MSE between predicted
/// and injected noise. Per-item draw order: t, dropout, noise field.
template <class S>
S training_loss(const DenoiserParams<S>& params, std::span<const TrainItem> batch,
                const NoiseSchedule& sched, Rng& rng, double cond_dropout_prob,
                DenoiserParams<S>* grads = nullptr) {
  if (batch.empty()) throw DataError("training_loss: empty batch");
  std::vector<NoisedSample<S>> samples;
  samples.reserve(batch.size());
  for (const auto& item : batch) {
    NoisedSample<S> s;
    s.t = rng.uniform_int(1, sched.T);
    const bool drop = rng.uniform() < cond_dropout_prob;
    s.tokens = drop ? null_tokens() : item.tokens;
    const Mat<S> x0 = detail::to_diffusion_row<S>(item.image01);
    s.eps.resize(1, x0.cols());
    for (Eigen::Index i = 0; i < x0.cols(); ++i) s.eps(0, i) = static_cast<S>(rng.normal());
    s.x_t = q_sample(x0, s.t, s.eps, sched);
    samples.push_back(std::move(s));
  }
  const S loss = den_loss<S>(params, samples, grads);
  if (!std::isfinite(static_cast<double>(loss))) {
    throw NumericError("training_loss: non-finite loss");
  }
  return loss;
}

/// max_steps optimizer steps; each step averages grad_accum_steps micro-batch
/// gradients (batch_size items drawn uniformly from the dataset) before one
/// AdamW update. A numeric failure saves the last finite parameter state to
/// cfg.abort_checkpoint_path (when set) and rethrows.
template <class S>
TrainResult<S> train(DenoiserParams<S> params, std::span<const TrainItem> data,
                     const NoiseSchedule& sched, const TrainConfig& cfg) {
  if (data.empty()) throw DataError("train: empty dataset");
  cfg.validate();
  Rng rng(cfg.seed);
  AdamW<S> opt(collect_tensors(std::as_const(params)));
  const auto frozen = detail::frozen_mask(params, cfg.train_text_embedding);
  auto param_ptrs = collect_tensors(params);

  DenoiserParams<S> grads = make_zero_params<S>(params.cfg);
  DenoiserParams<S> accum = make_zero_params<S>(params.cfg);
  const auto accum_ptrs = collect_tensors(std::as_const(accum));
  LossCurve curve;
  curve.points.reserve(static_cast<std::size_t>(cfg.max_steps));

  std::vector<TrainItem> micro(static_cast<std::size_t>(cfg.batch_size));
  for (long step = 0; step < cfg.max_steps; ++step) {
    const double lr = lr_at(step, cfg);
    accum.set_zero();
    double step_loss = 0.0;
    try {
      for (int k = 0; k < cfg.grad_accum_steps; ++k) {
        for (int b = 0; b < cfg.batch_size; ++b) {
          micro[static_cast<std::size_t>(b)] = data[rng.below(data.size())];
        }
        const S loss = training_loss<S>(params, micro, sched, rng, cfg.cond_dropout_prob, &grads);
        detail::add_scaled(accum, grads, S(1));
        step_loss += static_cast<double>(loss);
      }
    } catch (const NumericError& e) {
      if (!cfg.abort_checkpoint_path.empty()) {
        save_checkpoint(cfg.abort_checkpoint_path, params);
      }
      throw NumericError("train aborted at step " + std::to_string(step + 1) + ": " + e.what());
    }
    detail::scale_params(accum, S(1) / static_cast<S>(cfg.grad_accum_steps));
    step_loss /= cfg.grad_accum_steps;
    opt.step(param_ptrs, accum_ptrs, lr, frozen);
    curve.points.emplace_back(step + 1, step_loss);
  }
  params.trained_steps += static_cast<std::uint64_t>(cfg.max_steps);
  return {std::move(params), std::move(curve)};
}

inline constexpr int kPriorSampleSteps = 50;  // DDIM, eta=0

/// Identifier-bound fine-tuning with prior preservation: the instance items
/// train under "<identifier> <prompt>", and lambda_prior weights an extra MSE
/// term on class samples generated from the incoming parameters before any
/// update. lambda_prior=0 is exactly train() on the instance set. The text
/// embedding table is frozen here unless train_text_embedding opts in.
template <class S>
TrainResult<S> train_dreambooth(DenoiserParams<S> params, std::span<const DatasetItem> instance_set,
                                const std::string& identifier, const std::string& class_prompt,
                                double lambda_prior, const NoiseSchedule& sched, TrainConfig cfg,
                                bool train_text_embedding = false) {
  if (instance_set.empty()) throw DataError("train_dreambooth: empty instance set");
  if (!is_registered_identifier(identifier)) {
    throw DataError("train_dreambooth: unregistered identifier '" + identifier + "'");
  }
  if (params.trained_steps == 0) {
    throw DataError("train_dreambooth: parameters are not pre-trained");
  }
  if (lambda_prior < 0) throw DataError("train_dreambooth: lambda_prior must be >= 0");
  cfg.validate();
  cfg.train_text_embedding = train_text_embedding;
  tokenize(class_prompt);  // must be well-formed

  std::vector<TrainItem> instance_items;
  instance_items.reserve(instance_set.size());
  for (const auto& item : instance_set) {
    instance_items.push_back(TrainItem{item.image.data, tokenize(build_prompt(item.meta, identifier))});
  }

  if (lambda_prior == 0.0) {
    return train(std::move(params), instance_items, sched, cfg);
  }

  // Self-supervision set: N_prior = |instance_set| class samples from the
  // current parameters, generated before any update.
  const TokenSeq class_tokens = tokenize(class_prompt);
  std::vector<TrainItem> prior_items;
  prior_items.reserve(instance_set.size());
  for (std::size_t i = 0; i < instance_set.size(); ++i) {
    const ImageSlice sample = sample_ddim(params, class_prompt, sched, kPriorSampleSteps, 0.0,
                                          derive_seed(cfg.seed, 0xD0B0 + i));
    prior_items.push_back(TrainItem{sample.data, class_tokens});
  }

  Rng rng(cfg.seed);
  Rng prior_rng(derive_seed(cfg.seed, 0x9121));
  AdamW<S> opt(collect_tensors(std::as_const(params)));
  const auto frozen = detail::frozen_mask(params, cfg.train_text_embedding);
  auto param_ptrs = collect_tensors(params);

  DenoiserParams<S> grads = make_zero_params<S>(params.cfg);
  DenoiserParams<S> accum = make_zero_params<S>(params.cfg);
  const auto accum_ptrs = collect_tensors(std::as_const(accum));
  LossCurve curve;

  std::vector<TrainItem> micro(static_cast<std::size_t>(cfg.batch_size));
  for (long step = 0; step < cfg.max_steps; ++step) {
    const double lr = lr_at(step, cfg);
    accum.set_zero();
    double step_loss = 0.0;
    try {
      for (int k = 0; k < cfg.grad_accum_steps; ++k) {
        for (int b = 0; b < cfg.batch_size; ++b) {
          micro[static_cast<std::size_t>(b)] = instance_items[rng.below(instance_items.size())];
        }
        const S inst_loss = training_loss<S>(params, micro, sched, rng, cfg.cond_dropout_prob, &grads);
        detail::add_scaled(accum, grads, S(1));
        for (int b = 0; b < cfg.batch_size; ++b) {
          micro[static_cast<std::size_t>(b)] = prior_items[prior_rng.below(prior_items.size())];
        }
        const S prior_loss =
            training_loss<S>(params, micro, sched, prior_rng, cfg.cond_dropout_prob, &grads);
        detail::add_scaled(accum, grads, static_cast<S>(lambda_prior));
        step_loss += static_cast<double>(inst_loss) + lambda_prior * static_cast<double>(prior_loss);
      }
    } catch (const NumericError& e) {
      if (!cfg.abort_checkpoint_path.empty()) {
        save_checkpoint(cfg.abort_checkpoint_path, params);
      }
      throw NumericError("dreambooth aborted at step " + std::to_string(step + 1) + ": " + e.what());
    }
    detail::scale_params(accum, S(1) / static_cast<S>(cfg.grad_accum_steps));
    step_loss /= cfg.grad_accum_steps;
    opt.step(param_ptrs, accum_ptrs, lr, frozen);
    curve.points.emplace_back(step + 1, step_loss);
  }
  params.trained_steps += static_cast<std::uint64_t>(cfg.max_steps);
  return {std::move(params), std::move(curve)};
}

}  // namespace mrigen
