#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mrigen/core.hpp"
#include "mrigen/features.hpp"
#include "mrigen/rng.hpp"

namespace mrigen {

enum class DataSource { RealLow, RealHigh, Synthetic };

/// T1 -> 0, T2 -> 1, FLAIR -> 2.
int label_from_modality(Modality m);
Modality modality_from_label(int label);

struct LabeledImage {
  ImageSlice image;
  int label = 0;
  DataSource source = DataSource::RealLow;
};

/// The feature extractor stays fixed for the whole experiment.
using FrozenExtractor = TinyConvEmbedder;

/// Affine resample about the image centre with bilinear interpolation and
/// zero fill; theta in radians, output keeps the source dimensions.
ImageSlice rotate_scale(const ImageSlice& img, double theta, double scale);

/// Rotation U(-15deg, +15deg) then scale U(0.9, 1.1); label preserved.
LabeledImage augment(const LabeledImage& img, Rng& rng);

struct LinearHead {
  Eigen::MatrixXd weight;  // 3 x d
  Eigen::VectorXd bias;    // 3
};

/// Mean softmax cross-entropy over rows of x (n x d) with integer labels;
/// fills the head gradient. Exposed for finite-difference validation.
double softmax_ce_loss_and_grad(const LinearHead& head, const Eigen::MatrixXd& x,
                                const std::vector<int>& labels, Eigen::MatrixXd& dw,
                                Eigen::VectorXd& db);

struct HeadTrainConfig {
  double learning_rate = 5e-4;
  int epochs = 100;
  int batch_size = 16;
  std::uint64_t seed = 0;
  bool augment = true;      // fresh rotation/scale draws every epoch
  double val_ratio = 0.2;   // 8:2 train/validation split
};

struct HeadTrainResult {
  LinearHead head;
  std::vector<double> val_accuracy;  // one entry per epoch; empty when no val items
};

/// Adam + cross-entropy on a zero-initialized linear head over fixed
/// features; requires at least one example per class.
HeadTrainResult train_head_on_features(const FeatureMatrix& features, const std::vector<int>& labels,
                                       const HeadTrainConfig& cfg);

/// Frozen-extractor variant: splits 8:2, optionally re-augments the training
/// portion every epoch, and logs per-epoch validation accuracy.
HeadTrainResult train_head(const FrozenExtractor& extractor, std::span<const LabeledImage> train_set,
                           const HeadTrainConfig& cfg);

struct ClassReport {
  double accuracy = 0.0;
  double precision = 0.0;  // macro
  double recall = 0.0;     // macro
  double f1 = 0.0;         // macro
  std::array<std::array<long, 3>, 3> confusion{};  // rows = true, cols = predicted
  bool zero_denominator_warning = false;

  /// "0.7115 0.8325 0.6087 0.7030"-style row.
  std::string render_row() const;
};

ClassReport report_from_confusion(const std::array<std::array<long, 3>, 3>& confusion);

ClassReport evaluate(const FrozenExtractor& extractor, const LinearHead& head,
                     std::span<const LabeledImage> test_set);

/// Table 5-1-style training-set names, in order: real, alt-domain real,
/// synthetic, real+synthetic.
const std::array<std::string, 4>& experiment_set_labels();

struct ExperimentRow {
  std::string train_set;
  std::string seed;  // decimal seed or "avg"
  ClassReport report;
};

struct ComparisonTable {
  std::vector<ExperimentRow> rows;

  std::string to_csv() const;  // train_set,seed,accuracy,precision,recall,f1
  std::string render() const;
};

/// Four heads per seed (real / alt-domain real / synthetic / real+synthetic),
/// each evaluated on the shared test set; per-seed rows plus seed-averaged
/// rows per training set.
ComparisonTable run_experiment(const FrozenExtractor& extractor,
                               const std::vector<LabeledImage>& real_set,
                               const std::vector<LabeledImage>& alt_real_set,
                               const std::vector<LabeledImage>& synthetic_set,
                               const std::vector<LabeledImage>& test_set,
                               std::span<const std::uint64_t> seeds, const HeadTrainConfig& cfg);

}  // namespace mrigen
