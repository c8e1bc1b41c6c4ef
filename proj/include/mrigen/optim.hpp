#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mrigen/core.hpp"
#include "mrigen/denoiser.hpp"

namespace mrigen {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

enum class LrSchedule { Constant, Cosine };

LrSchedule lr_schedule_from_string(const std::string& s);
std::string to_string(LrSchedule s);

enum class Precision { Single, Double };

Precision precision_from_string(const std::string& s);
std::string to_string(Precision p);

struct TrainConfig {
  double learning_rate = 1e-4;
  long max_steps = 1000;
  int batch_size = 1;
  int grad_accum_steps = 1;
  LrSchedule lr_schedule = LrSchedule::Constant;
  std::uint64_t seed = 0;
  double cond_dropout_prob = 0.1;
  Precision precision = Precision::Single;
  bool train_text_embedding = true;
  std::string abort_checkpoint_path;  // written when a numeric error aborts training

  void validate() const {
    if (learning_rate <= 0 || max_steps < 0 || batch_size < 1 || grad_accum_steps < 1) {
      throw DataError("train config: positive numerics required, grad_accum_steps >= 1");
    }
    if (cond_dropout_prob < 0 || cond_dropout_prob > 1) {
      throw DataError("train config: cond_dropout_prob must be in [0,1]");
    }
  }
};

/// Constant: lr0. Cosine: lr0 * 0.5 * (1 + cos(pi * step / max_steps)).
inline double lr_at(long step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.max_steps) throw DataError("lr_at: step out of range");
  if (cfg.lr_schedule == LrSchedule::Constant) return cfg.learning_rate;
  const double frac = cfg.max_steps == 0 ? 0.0 : static_cast<double>(step) / static_cast<double>(cfg.max_steps);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * frac));
}

/// One decoupled-weight-decay Adam update on a single tensor (any dense
/// Eigen type). step is 1-based (used for bias correction).
template <class M>
void adamw_step(M& p, const M& g, M& m, M& v, long step, double lr, const AdamWHyper& h = {}) {
  using S = typename M::Scalar;
  const S b1 = static_cast<S>(h.beta1);
  const S b2 = static_cast<S>(h.beta2);
  m = b1 * m + (S(1) - b1) * g;
  v = (b2 * v.array() + (S(1) - b2) * g.array().square()).matrix();
  const S corr1 = S(1) - static_cast<S>(std::pow(h.beta1, static_cast<double>(step)));
  const S corr2 = S(1) - static_cast<S>(std::pow(h.beta2, static_cast<double>(step)));
  const auto m_hat = m.array() / corr1;
  const auto v_hat = v.array() / corr2;
  p = (p.array() -
       static_cast<S>(lr) * (m_hat / (v_hat.sqrt() + static_cast<S>(h.eps)) +
                             static_cast<S>(h.weight_decay) * p.array()))
          .matrix();
}

/// AdamW over a parameter collection; moment tensors mirror the parameter
/// shapes. Tensors flagged frozen receive neither the update nor the decay.
template <class S>
class AdamW {
 public:
  explicit AdamW(const std::vector<const Mat<S>*>& shapes, AdamWHyper hyper = {}) : hyper_(hyper) {
    m_.reserve(shapes.size());
    v_.reserve(shapes.size());
    for (const auto* t : shapes) {
      m_.push_back(Mat<S>::Zero(t->rows(), t->cols()));
      v_.push_back(Mat<S>::Zero(t->rows(), t->cols()));
    }
  }

  long step_count() const { return step_; }

  void step(const std::vector<Mat<S>*>& params, const std::vector<const Mat<S>*>& grads, double lr,
            const std::vector<std::uint8_t>& frozen = {}) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
      throw DataError("AdamW: tensor collection size mismatch");
    }
    ++step_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!frozen.empty() && frozen[i]) continue;
      adamw_step(*params[i], *grads[i], m_[i], v_[i], step_, lr, hyper_);
    }
  }

 private:
  AdamWHyper hyper_;
  std::vector<Mat<S>> m_, v_;
  long step_ = 0;
};

inline LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "constant") return LrSchedule::Constant;
  if (s == "cosine") return LrSchedule::Cosine;
  throw DataError("unknown lr_schedule '" + s + "' (use constant|cosine)");
}

inline std::string to_string(LrSchedule s) {
  return s == LrSchedule::Constant ? "constant" : "cosine";
}

inline Precision precision_from_string(const std::string& s) {
  if (s == "single") return Precision::Single;
  if (s == "double") return Precision::Double;
  throw DataError("unknown precision '" + s + "' (use single|double)");
}

inline std::string to_string(Precision p) {
  return p == Precision::Single ? "single" : "double";
}

}  // namespace mrigen
