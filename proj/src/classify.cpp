#include "mrigen/classify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mrigen/optim.hpp"
#include "mrigen/phantom.hpp"

namespace mrigen {

namespace {

constexpr double kDegToRad = 0.017453292519943295;

std::vector<int> labels_of(std::span<const LabeledImage> items) {
  std::vector<int> labels;
  labels.reserve(items.size());
  for (const auto& it : items) labels.push_back(it.label);
  return labels;
}

std::vector<ImageSlice> images_of(std::span<const LabeledImage> items) {
  std::vector<ImageSlice> images;
  images.reserve(items.size());
  for (const auto& it : items) images.push_back(it.image);
  return images;
}

void require_all_classes(std::span<const LabeledImage> items) {
  std::array<long, 3> counts{};
  for (const auto& it : items) {
    if (it.label < 0 || it.label > 2) throw DataError("train_head: label out of range");
    ++counts[static_cast<std::size_t>(it.label)];
  }
  for (int c = 0; c < 3; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw DataError("train_head: no examples for class " +
                      std::string(to_string(modality_from_label(c))));
    }
  }
}

}  // namespace

int label_from_modality(Modality m) {
  switch (m) {
    case Modality::T1: return 0;
    case Modality::T2: return 1;
    case Modality::Flair: return 2;
  }
  throw DataError("invalid Modality value");
}

Modality modality_from_label(int label) {
  switch (label) {
    case 0: return Modality::T1;
    case 1: return Modality::T2;
    case 2: return Modality::Flair;
  }
  throw DataError("label out of range: " + std::to_string(label));
}

ImageSlice rotate_scale(const ImageSlice& img, double theta, double scale) {
  if (!(scale > 0)) throw DataError("rotate_scale: scale must be positive");
  const int h = img.height();
  const int w = img.width();
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  ImageSlice out;
  out.data.setZero(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double dy = r - cy;
      const double dx = c - cx;
      const double sx = (ct * dx + st * dy) / scale + cx;
      const double sy = (-st * dx + ct * dy) / scale + cy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      double acc = 0.0;
      for (int oy = 0; oy <= 1; ++oy) {
        for (int ox = 0; ox <= 1; ++ox) {
          const int xx = x0 + ox;
          const int yy = y0 + oy;
          if (xx < 0 || xx >= w || yy < 0 || yy >= h) continue;  // zero fill
          const double wgt = (ox ? fx : 1.0 - fx) * (oy ? fy : 1.0 - fy);
          acc += wgt * img.data(yy, xx);
        }
      }
      out.data(r, c) = static_cast<float>(acc);
    }
  }
  return out;
}

LabeledImage augment(const LabeledImage& img, Rng& rng) {
  const double theta = rng.uniform(-15.0, 15.0) * kDegToRad;
  const double scale = rng.uniform(0.9, 1.1);
  return {rotate_scale(img.image, theta, scale), img.label, img.source};
}

double softmax_ce_loss_and_grad(const LinearHead& head, const Eigen::MatrixXd& x,
                                const std::vector<int>& labels, Eigen::MatrixXd& dw,
                                Eigen::VectorXd& db) {
  const Eigen::Index n = x.rows();
  if (n == 0 || labels.size() != static_cast<std::size_t>(n)) {
    throw DataError("softmax_ce: size mismatch");
  }
  dw.setZero(head.weight.rows(), head.weight.cols());
  db.setZero(head.bias.size());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd logits = head.weight * x.row(i).transpose() + head.bias;
    const double mx = logits.maxCoeff();
    Eigen::VectorXd p = (logits.array() - mx).exp();
    p /= p.sum();
    const int y = labels[static_cast<std::size_t>(i)];
    loss -= std::log(std::max(p(y), 1e-300)) / static_cast<double>(n);
    Eigen::VectorXd dlogits = p / static_cast<double>(n);
    dlogits(y) -= 1.0 / static_cast<double>(n);
    dw.noalias() += dlogits * x.row(i);
    db += dlogits;
  }
  return loss;
}

HeadTrainResult train_head_on_features(const FeatureMatrix& features, const std::vector<int>& labels,
                                       const HeadTrainConfig& cfg) {
  if (features.rows() == 0 || labels.size() != static_cast<std::size_t>(features.rows())) {
    throw DataError("train_head_on_features: size mismatch");
  }
  const Eigen::Index d = features.cols();
  LinearHead head{Eigen::MatrixXd::Zero(3, d), Eigen::VectorXd::Zero(3)};
  Eigen::MatrixXd mw = Eigen::MatrixXd::Zero(3, d), vw = Eigen::MatrixXd::Zero(3, d);
  Eigen::VectorXd mb = Eigen::VectorXd::Zero(3), vb = Eigen::VectorXd::Zero(3);
  AdamWHyper adam;
  adam.weight_decay = 0.0;  // plain Adam

  Rng order_rng(derive_seed(cfg.seed, 2));
  const Eigen::Index n = features.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  long step = 0;
  Eigen::MatrixXd dw;
  Eigen::VectorXd db;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[order_rng.below(i)]);
    }
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index count = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Eigen::MatrixXd bx(count, d);
      std::vector<int> by(static_cast<std::size_t>(count));
      for (Eigen::Index k = 0; k < count; ++k) {
        const Eigen::Index idx = order[static_cast<std::size_t>(start + k)];
        bx.row(k) = features.row(idx);
        by[static_cast<std::size_t>(k)] = labels[static_cast<std::size_t>(idx)];
      }
      softmax_ce_loss_and_grad(head, bx, by, dw, db);
      ++step;
      adamw_step(head.weight, dw, mw, vw, step, cfg.learning_rate, adam);
      adamw_step(head.bias, db, mb, vb, step, cfg.learning_rate, adam);
    }
  }
  return {std::move(head), {}};
}

namespace {

double accuracy_on(const LinearHead& head, const FeatureMatrix& x, const std::vector<int>& y) {
  if (x.rows() == 0) return 0.0;
  long correct = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::VectorXd logits = head.weight * x.row(i).transpose() + head.bias;
    Eigen::Index arg = 0;
    logits.maxCoeff(&arg);
    if (static_cast<int>(arg) == y[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(x.rows());
}

}  // namespace

HeadTrainResult train_head(const FrozenExtractor& extractor, std::span<const LabeledImage> train_set,
                           const HeadTrainConfig& cfg) {
  if (train_set.empty()) throw DataError("train_head: empty training set");
  require_all_classes(train_set);

  std::vector<LabeledImage> all(train_set.begin(), train_set.end());
  const auto split = split_train_val(all, 1.0 - cfg.val_ratio, cfg.seed);
  const std::vector<LabeledImage>& tr = split.train;
  const std::vector<LabeledImage>& va = split.val;

  FeatureMatrix val_features;
  std::vector<int> val_labels;
  if (!va.empty()) {
    val_features = embed_images(images_of(va), extractor);
    val_labels = labels_of(va);
  }

  const Eigen::Index d = FrozenExtractor::kFeatureDim;
  LinearHead head{Eigen::MatrixXd::Zero(3, d), Eigen::VectorXd::Zero(3)};
  Eigen::MatrixXd mw = Eigen::MatrixXd::Zero(3, d), vw = Eigen::MatrixXd::Zero(3, d);
  Eigen::VectorXd mb = Eigen::VectorXd::Zero(3), vb = Eigen::VectorXd::Zero(3);
  AdamWHyper adam;
  adam.weight_decay = 0.0;

  Rng aug_rng(derive_seed(cfg.seed, 1));
  Rng order_rng(derive_seed(cfg.seed, 2));
  const std::vector<int> tr_labels = labels_of(tr);
  const FeatureMatrix plain_features = embed_images(images_of(tr), extractor);

  std::vector<std::size_t> order(tr.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  HeadTrainResult result;
  result.val_accuracy.reserve(static_cast<std::size_t>(cfg.epochs));
  long step = 0;
  Eigen::MatrixXd dw;
  Eigen::VectorXd db;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    FeatureMatrix feats;
    if (cfg.augment) {
      std::vector<ImageSlice> augmented;
      augmented.reserve(tr.size());
      for (const auto& item : tr) augmented.push_back(augment(item, aug_rng).image);
      feats = embed_images(augmented, extractor);
    } else {
      feats = plain_features;
    }
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[order_rng.below(i)]);
    }
    const Eigen::Index n = feats.rows();
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index count = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Eigen::MatrixXd bx(count, d);
      std::vector<int> by(static_cast<std::size_t>(count));
      for (Eigen::Index k = 0; k < count; ++k) {
        const std::size_t idx = order[static_cast<std::size_t>(start + k)];
        bx.row(k) = feats.row(static_cast<Eigen::Index>(idx));
        by[static_cast<std::size_t>(k)] = tr_labels[idx];
      }
      softmax_ce_loss_and_grad(head, bx, by, dw, db);
      ++step;
      adamw_step(head.weight, dw, mw, vw, step, cfg.learning_rate, adam);
      adamw_step(head.bias, db, mb, vb, step, cfg.learning_rate, adam);
    }
    if (!va.empty()) {
      result.val_accuracy.push_back(accuracy_on(head, val_features, val_labels));
    }
  }
  result.head = std::move(head);
  return result;
}

std::string ClassReport::render_row() const {
  char buf[80];
  std::snprintf(buf, sizeof(buf), "%.4f %.4f %.4f %.4f", accuracy, precision, recall, f1);
  return buf;
}

ClassReport report_from_confusion(const std::array<std::array<long, 3>, 3>& confusion) {
  ClassReport r;
  r.confusion = confusion;
  long total = 0, diag = 0;
  std::array<long, 3> rowsum{}, colsum{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const long v = confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (v < 0) throw DataError("report_from_confusion: negative count");
      total += v;
      rowsum[static_cast<std::size_t>(i)] += v;
      colsum[static_cast<std::size_t>(j)] += v;
    }
    diag += confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
  }
  if (total == 0) throw DataError("report_from_confusion: empty confusion matrix");
  r.accuracy = static_cast<double>(diag) / static_cast<double>(total);
  double psum = 0.0, rsum = 0.0, fsum = 0.0;
  for (int c = 0; c < 3; ++c) {
    const long tp = confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    double prec = 0.0, rec = 0.0;
    if (colsum[static_cast<std::size_t>(c)] == 0) {
      r.zero_denominator_warning = true;
    } else {
      prec = static_cast<double>(tp) / static_cast<double>(colsum[static_cast<std::size_t>(c)]);
    }
    if (rowsum[static_cast<std::size_t>(c)] == 0) {
      r.zero_denominator_warning = true;
    } else {
      rec = static_cast<double>(tp) / static_cast<double>(rowsum[static_cast<std::size_t>(c)]);
    }
    const double f1 = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    psum += prec;
    rsum += rec;
    fsum += f1;
  }
  r.precision = psum / 3.0;
  r.recall = rsum / 3.0;
  r.f1 = fsum / 3.0;
  return r;
}

ClassReport evaluate(const FrozenExtractor& extractor, const LinearHead& head,
                     std::span<const LabeledImage> test_set) {
  if (test_set.empty()) throw DataError("evaluate: empty test set");
  const FeatureMatrix feats = embed_images(images_of(test_set), extractor);
  std::array<std::array<long, 3>, 3> confusion{};
  for (Eigen::Index i = 0; i < feats.rows(); ++i) {
    Eigen::VectorXd logits = head.weight * feats.row(i).transpose() + head.bias;
    Eigen::Index arg = 0;
    logits.maxCoeff(&arg);
    const int truth = test_set[static_cast<std::size_t>(i)].label;
    ++confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(arg)];
  }
  return report_from_confusion(confusion);
}

const std::array<std::string, 4>& experiment_set_labels() {
  static const std::array<std::string, 4> labels = {
      "Training with 0.35T Real Data",
      "Training with 3T Real Data",
      "Training with Synthetic Data",
      "Training with 0.35T Real + Synthetic Data",
  };
  return labels;
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream os;
  os << "train_set,seed,accuracy,precision,recall,f1\n";
  char buf[128];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), ",%s,%.6f,%.6f,%.6f,%.6f\n", row.seed.c_str(),
                  row.report.accuracy, row.report.precision, row.report.recall, row.report.f1);
    os << '"' << row.train_set << '"' << buf;
  }
  return os.str();
}

std::string ComparisonTable::render() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-44s %-6s %9s %10s %8s %9s\n", "Train Set", "Seed", "Accuracy",
                "Precision", "Recall", "F1 Score");
  os << buf;
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%-44s %-6s %9.4f %10.4f %8.4f %9.4f\n", row.train_set.c_str(),
                  row.seed.c_str(), row.report.accuracy, row.report.precision, row.report.recall,
                  row.report.f1);
    os << buf;
  }
  return os.str();
}

ComparisonTable run_experiment(const FrozenExtractor& extractor,
                               const std::vector<LabeledImage>& real_set,
                               const std::vector<LabeledImage>& alt_real_set,
                               const std::vector<LabeledImage>& synthetic_set,
                               const std::vector<LabeledImage>& test_set,
                               std::span<const std::uint64_t> seeds, const HeadTrainConfig& cfg) {
  if (seeds.empty()) throw DataError("run_experiment: need at least one seed");
  std::vector<LabeledImage> combined = real_set;
  combined.insert(combined.end(), synthetic_set.begin(), synthetic_set.end());
  const std::array<const std::vector<LabeledImage>*, 4> sets = {&real_set, &alt_real_set,
                                                                &synthetic_set, &combined};
  const auto& labels = experiment_set_labels();

  ComparisonTable table;
  std::array<ClassReport, 4> sums{};
  std::array<std::array<std::array<long, 3>, 3>, 4> conf_sums{};
  for (const std::uint64_t seed : seeds) {
    HeadTrainConfig run_cfg = cfg;
    run_cfg.seed = seed;
    for (std::size_t s = 0; s < sets.size(); ++s) {
      const auto trained = train_head(extractor, *sets[s], run_cfg);
      const ClassReport rep = evaluate(extractor, trained.head, test_set);
      table.rows.push_back({labels[s], std::to_string(seed), rep});
      sums[s].accuracy += rep.accuracy;
      sums[s].precision += rep.precision;
      sums[s].recall += rep.recall;
      sums[s].f1 += rep.f1;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          conf_sums[s][static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
              rep.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
      }
    }
  }
  const double n = static_cast<double>(seeds.size());
  for (std::size_t s = 0; s < sets.size(); ++s) {
    ClassReport avg;
    avg.accuracy = sums[s].accuracy / n;
    avg.precision = sums[s].precision / n;
    avg.recall = sums[s].recall / n;
    avg.f1 = sums[s].f1 / n;
    avg.confusion = conf_sums[s];
    table.rows.push_back({labels[s], "avg", avg});
  }
  return table;
}

}  // namespace mrigen
