#include "mrigen/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrigen/checkpoint.hpp"
#include "mrigen/classify.hpp"
#include "mrigen/core.hpp"
#include "mrigen/features.hpp"
#include "mrigen/fid.hpp"
#include "mrigen/image_io.hpp"
#include "mrigen/manifest.hpp"
#include "mrigen/ms_ssim.hpp"
#include "mrigen/phantom.hpp"
#include "mrigen/prompt.hpp"
#include "mrigen/report.hpp"
#include "mrigen/run_config.hpp"
#include "mrigen/run_manifest.hpp"
#include "mrigen/sampler.hpp"
#include "mrigen/train.hpp"
#include "mrigen/vocab.hpp"

namespace mrigen {

namespace fs = std::filesystem;

namespace {

// ---- shared helpers ---------------------------------------------------------

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names = {"phantom-gen", "preprocess", "train", "dreambooth",
                                                 "sample",      "eval-fid",   "eval-msssim",
                                                 "classify",    "report"};
  return names;
}

std::string suggest_subcommand(const std::string& given) {
  std::string best;
  std::size_t best_d = 100;
  for (const auto& name : subcommand_names()) {
    const std::size_t d = edit_distance(given, name);
    if (d < best_d) {
      best_d = d;
      best = name;
    }
  }
  return best_d <= 3 ? best : std::string();
}

RunManifest start_manifest(const std::string& command, int argc, const char* const* argv,
                           const RunConfig& cfg, const fs::path& out_dir) {
  RunManifest m;
  m.command = command;
  for (int i = 0; i < argc; ++i) m.argv.emplace_back(argv[i]);
  m.config = cfg.as_map();
  m.seed = cfg.seed;
  m.out_dir = out_dir.string();
  m.started_utc = utc_now_iso8601();
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& file) {
  m.finished_utc = utc_now_iso8601();
  write_run_manifest(file, m);
}

/// Directory of images (sorted by name) or a .jsonl manifest.
std::vector<ImageSlice> load_images_from(const fs::path& path) {
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension();
      if (ext == ".png" || ext == ".pgm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .png/.pgm images under '" + path.string() + "'");
    std::vector<ImageSlice> images;
    images.reserve(files.size());
    for (const auto& f : files) images.push_back(to_slice(load_image(f)));
    return images;
  }
  std::vector<ImageSlice> images;
  for (auto& item : ingest_manifest(path)) images.push_back(std::move(item.image));
  return images;
}

fs::path resolve_manifest_path(const fs::path& path) {
  if (fs::is_directory(path)) {
    const fs::path candidate = path / "manifest.jsonl";
    if (fs::exists(candidate)) return candidate;
    throw DataError("'" + path.string() + "' has no manifest.jsonl (metadata required)");
  }
  return path;
}

std::vector<LabeledImage> load_labeled_from(const fs::path& path, DataSource source) {
  std::vector<LabeledImage> out;
  for (auto& item : ingest_manifest(resolve_manifest_path(path))) {
    out.push_back({std::move(item.image), label_from_modality(item.meta.modality), source});
  }
  return out;
}

RunConfig resolve_config(const std::optional<std::string>& config_path, CLI::App* cmd,
                         const std::map<std::string, std::string>& flag_to_key) {
  RunConfig cfg;
  if (config_path) cfg = RunConfig::load(*config_path);
  // CLI flag > config file > default
  for (const auto& [flag, key] : flag_to_key) {
    if (cmd->count(flag) > 0) {
      cfg.set(key, cmd->get_option(flag)->as<std::string>(), "flag " + flag);
    }
  }
  return cfg;
}

void require_seed(const CLI::App* cmd, const RunConfig& cfg) {
  if (cmd->count("--seed") == 0 && cfg.provided.find("seed") == cfg.provided.end()) {
    throw UsageError("a seed is required (pass --seed or put 'seed = ...' in the config file)");
  }
}

int square_image_size(const std::vector<DatasetItem>& items) {
  if (items.empty()) throw DataError("dataset is empty");
  const int w = items[0].image.width();
  const int h = items[0].image.height();
  if (w != h) throw DataError("training images must be square, got " + std::to_string(w) + "x" + std::to_string(h));
  for (const auto& it : items) {
    if (it.image.width() != w || it.image.height() != h) {
      throw DataError("training images must share dimensions");
    }
  }
  return w;
}

std::vector<TrainItem> to_train_items(const std::vector<DatasetItem>& items) {
  std::vector<TrainItem> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    out.push_back({it.image.data, tokenize(build_prompt(it.meta))});
  }
  return out;
}

// ---- subcommand bodies --------------------------------------------------------

struct PhantomGenArgs {
  std::string out;
  int per_class = 20;
  std::uint64_t seed = 1;
  int size = 32;
  int slices = kMaxSliceIndex;
  double noise_low = -1.0;
  double noise_high = -1.0;
};

int cmd_phantom_gen(const PhantomGenArgs& a, int argc, const char* const* argv) {
  if (a.per_class < 1) throw UsageError("--per-class must be >= 1");
  if (a.slices < 1 || a.slices > kMaxSliceIndex) {
    throw UsageError("--slices must be in 1.." + std::to_string(kMaxSliceIndex));
  }
  const fs::path out(a.out);
  fs::create_directories(out / "images");
  RunConfig cfg;
  cfg.seed = a.seed;
  RunManifest manifest = start_manifest("phantom-gen", argc, argv, cfg, out);
  write_run_manifest(out / "run_manifest.json", manifest);

  std::vector<ManifestEntry> entries;
  int class_idx = 0;
  char name[128];
  for (const FieldStrength field : {FieldStrength::Low, FieldStrength::High}) {
    for (const Modality modality : {Modality::T1, Modality::T2, Modality::Flair}) {
      for (int i = 0; i < a.per_class; ++i) {
        PhantomSpec spec;
        spec.meta.field = field;
        spec.meta.modality = modality;
        spec.meta.slice_index = 1 + i % a.slices;
        spec.meta.subject_id = "sub" + std::to_string(1 + i / a.slices);
        spec.size = a.size;
        spec.seed = derive_seed(a.seed, static_cast<std::uint64_t>(class_idx) * 1000003 + i);
        if (field == FieldStrength::Low && a.noise_low >= 0) spec.noise_sigma = static_cast<float>(a.noise_low);
        if (field == FieldStrength::High && a.noise_high >= 0) spec.noise_sigma = static_cast<float>(a.noise_high);
        const ImageSlice slice = generate_phantom(spec);
        std::snprintf(name, sizeof(name), "img_%s_%s_s%02d_%s_%04d.png",
                      std::string(to_string(field)).c_str(), std::string(to_string(modality)).c_str(),
                      spec.meta.slice_index, spec.meta.subject_id.c_str(), i);
        write_png(out / "images" / name, to_u8(slice));
        ManifestEntry e;
        e.path = std::string("images/") + name;
        e.meta = spec.meta;
        entries.push_back(std::move(e));
      }
      ++class_idx;
    }
  }
  write_manifest(out / "manifest.jsonl", entries);
  finish_manifest(manifest, out / "run_manifest.json");
  std::cout << "wrote " << entries.size() << " images under " << (out / "images").string() << '\n';
  return 0;
}

struct PreprocessArgs {
  std::string manifest;
  std::string out;
  int retain_slices = 0;  // 0 = keep all
  bool skip_errors = false;
};

int cmd_preprocess(const PreprocessArgs& a, int argc, const char* const* argv) {
  const fs::path out(a.out);
  fs::create_directories(out / "images");
  RunConfig cfg;
  RunManifest manifest = start_manifest("preprocess", argc, argv, cfg, out);
  write_run_manifest(out / "run_manifest.json", manifest);

  IngestOptions opts;
  opts.skip_errors = a.skip_errors;
  std::vector<std::size_t> kept;
  opts.kept = &kept;
  const auto items = ingest_manifest(a.manifest, opts);

  // Per-volume head-slice retention, volumes keyed in manifest order.
  std::vector<std::size_t> selected(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) selected[i] = i;
  if (a.retain_slices > 0) {
    std::map<std::string, std::vector<std::size_t>> groups;
    std::vector<std::string> group_order;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& m = items[i].meta;
      const std::string key = m.subject_id + "|" + std::string(to_string(m.field)) + "|" +
                              std::string(to_string(m.modality));
      if (groups.find(key) == groups.end()) group_order.push_back(key);
      groups[key].push_back(i);
    }
    selected.clear();
    for (const auto& key : group_order) {
      const auto head = retain_head_slices(groups[key], a.retain_slices);
      selected.insert(selected.end(), head.begin(), head.end());
    }
    std::sort(selected.begin(), selected.end());
  }

  std::vector<ManifestEntry> entries;
  char name[64];
  for (std::size_t rank = 0; rank < selected.size(); ++rank) {
    const auto& item = items[selected[rank]];
    std::snprintf(name, sizeof(name), "proc_%05zu.png", rank);
    write_png(out / "images" / name, to_u8(item.image));
    ManifestEntry e;
    e.path = std::string("images/") + name;
    e.meta = item.meta;
    entries.push_back(std::move(e));
  }
  write_manifest(out / "manifest.jsonl", entries);
  finish_manifest(manifest, out / "run_manifest.json");
  std::cout << "preprocessed " << entries.size() << " of " << items.size() << " ingested slices\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::optional<std::string> init_ckpt;
  bool dump_config = false;
};

template <class S>
void run_train(const RunConfig& cfg, const std::vector<DatasetItem>& items, const fs::path& out,
               const std::optional<std::string>& init_ckpt) {
  const int isize = square_image_size(items);
  DenoiserParams<S> params = [&] {
    if (init_ckpt) return load_checkpoint<S>(*init_ckpt);
    DenoiserConfig net;
    net.image_size = isize;
    return init_denoiser<S>(net, cfg.seed);
  }();
  if (params.cfg.image_size != isize) {
    throw DataError("checkpoint image size does not match the dataset");
  }
  TrainConfig tc = cfg.train_config();
  tc.abort_checkpoint_path = (out / "checkpoints" / "abort.bin").string();
  const NoiseSchedule sched = cfg.schedule();
  auto result = train(std::move(params), to_train_items(items), sched, tc);
  save_checkpoint(out / "checkpoints" / "model.bin", result.params);
  result.curve.to_csv(out / "metrics" / "loss.csv");
  const auto& pts = result.curve.points;
  std::cout << "trained " << pts.size() << " steps";
  if (!pts.empty()) std::cout << "; final loss " << pts.back().second;
  std::cout << "; parameters " << result.params.parameter_count() << '\n';
}

int cmd_train(const TrainArgs& a, const RunConfig& cfg, int argc, const char* const* argv) {
  const fs::path out(a.out);
  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "metrics");
  RunManifest manifest = start_manifest("train", argc, argv, cfg, out);
  write_run_manifest(out / "run_manifest.json", manifest);
  if (a.dump_config) cfg.save(out / "config.resolved");
  const auto items = ingest_manifest(a.data);
  if (precision_from_string(cfg.precision) == Precision::Double) {
    run_train<double>(cfg, items, out, a.init_ckpt);
  } else {
    run_train<float>(cfg, items, out, a.init_ckpt);
  }
  finish_manifest(manifest, out / "run_manifest.json");
  return 0;
}

struct DreamboothArgs {
  std::string ckpt;
  std::string instance;
  std::string identifier;
  std::string class_prompt;
  std::string out;
  bool train_text_embedding = false;
};

template <class S>
void run_dreambooth(const DreamboothArgs& a, const RunConfig& cfg, const fs::path& out) {
  DenoiserParams<S> params = load_checkpoint<S>(a.ckpt);
  const auto instance = ingest_manifest(resolve_manifest_path(a.instance));
  TrainConfig tc = cfg.train_config();
  tc.abort_checkpoint_path = (out / "checkpoints" / "abort.bin").string();
  const NoiseSchedule sched = cfg.schedule();
  auto result = train_dreambooth(std::move(params), instance, a.identifier, a.class_prompt,
                                 cfg.lambda_prior, sched, tc, a.train_text_embedding);
  save_checkpoint(out / "checkpoints" / "model.bin", result.params);
  result.curve.to_csv(out / "metrics" / "loss.csv");
  std::cout << "dreambooth fine-tuned " << result.curve.points.size() << " steps (lambda_prior "
            << cfg.lambda_prior << ")\n";
}

int cmd_dreambooth(const DreamboothArgs& a, const RunConfig& cfg, int argc, const char* const* argv) {
  const fs::path out(a.out);
  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "metrics");
  RunManifest manifest = start_manifest("dreambooth", argc, argv, cfg, out);
  write_run_manifest(out / "run_manifest.json", manifest);
  if (peek_checkpoint(a.ckpt).dtype == 1) {
    run_dreambooth<double>(a, cfg, out);
  } else {
    run_dreambooth<float>(a, cfg, out);
  }
  finish_manifest(manifest, out / "run_manifest.json");
  return 0;
}

struct SampleArgs {
  std::string ckpt;
  std::string prompt;
  std::string out;
  std::string sampler = "ddim";
  int steps = 50;
  double eta = 0.0;
};

template <class S>
void run_sample(const SampleArgs& a, const RunConfig& cfg) {
  const DenoiserParams<S> params = load_checkpoint<S>(a.ckpt);
  const NoiseSchedule sched = cfg.schedule();
  ImageSlice image;
  if (a.sampler == "ddpm") {
    image = sample_ddpm(params, a.prompt, sched, cfg.seed, cfg.guidance_scale);
  } else if (a.sampler == "ddim") {
    image = sample_ddim(params, a.prompt, sched, a.steps, a.eta, cfg.seed, cfg.guidance_scale);
  } else {
    throw UsageError("unknown sampler '" + a.sampler + "' (use ddpm|ddim)");
  }
  save_image(a.out, to_u8(image));
}

int cmd_sample(const SampleArgs& a, const RunConfig& cfg, int argc, const char* const* argv) {
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  RunManifest manifest = start_manifest("sample", argc, argv, cfg, out.parent_path());
  const fs::path manifest_path = out.parent_path() / (out.stem().string() + ".run_manifest.json");
  write_run_manifest(manifest_path, manifest);
  if (peek_checkpoint(a.ckpt).dtype == 1) {
    run_sample<double>(a, cfg);
  } else {
    run_sample<float>(a, cfg);
  }
  finish_manifest(manifest, manifest_path);
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

struct EvalFidArgs {
  std::string real;
  std::string gen;
  std::string out;
  std::string experiment = "eval-fid";
  std::optional<std::string> real_features;
  std::optional<std::string> gen_features;
};

int cmd_eval_fid(const EvalFidArgs& a, const RunConfig& cfg, int argc, const char* const* argv) {
  const fs::path out(a.out);
  fs::create_directories(out / "metrics");
  RunManifest manifest = start_manifest("eval-fid", argc, argv, cfg, out);
  write_run_manifest(out / "run_manifest.json", manifest);

  const auto real_images = load_images_from(a.real);
  const auto gen_images = load_images_from(a.gen);
  const TinyConvEmbedder embedder;
  const FeatureMatrix real_f = embed_images(real_images, embedder);
  const FeatureMatrix gen_f = embed_images(gen_images, embedder);
  write_feature_file(out / "metrics" / "features_real.bin", real_f);
  write_feature_file(out / "metrics" / "features_gen.bin", gen_f);
  const GaussianStats rs = gaussian_stats(real_f);
  const GaussianStats gs = gaussian_stats(gen_f);
  if (rs.rank_deficient() || gs.rank_deficient()) {
    std::cerr << "warning: fewer samples than feature dimensions; covariance is rank-deficient "
                 "(jitter keeps FID finite)\n";
  }
  MetricsReport report;
  report.experiment = a.experiment;
  report.fid_tinyconv = fid(rs, gs);
  report.n_images = static_cast<long>(gen_images.size());
  report.seed = cfg.seed;

  if (a.real_features && a.gen_features) {
    const FileEmbedder fe_real(*a.real_features);
    const FileEmbedder fe_gen(*a.gen_features);
    report.fid_external = fid(gaussian_stats(fe_real.embed(real_images)),
                              gaussian_stats(fe_gen.embed(gen_images)));
  } else if (a.real_features || a.gen_features) {
    throw UsageError("--real-features and --gen-features must be given together");
  }

  write_metrics_report(out / "metrics" / "report.txt", report);
  finish_manifest(manifest, out / "run_manifest.json");
  std::cout << "fid_tinyconv = " << *report.fid_tinyconv << '\n';
  if (report.fid_external) std::cout << "fid_external = " << *report.fid_external << '\n';
  return 0;
}

struct EvalMsssimArgs {
  std::string images;
  std::string out;
  std::string experiment = "eval-msssim";
  int n_pairs = 300;
  int scales = 0;  // 0 = auto
};

int cmd_eval_msssim(const EvalMsssimArgs& a, const RunConfig& cfg, int argc, const char* const* argv) {
  const fs::path out(a.out);
  fs::create_directories(out / "metrics");
  RunManifest manifest = start_manifest("eval-msssim", argc, argv, cfg, out);
  write_run_manifest(out / "run_manifest.json", manifest);

  const auto images = load_images_from(a.images);
  MsSsimWeights weights;
  if (a.scales > 0) {
    weights = MsSsimWeights::defaults(a.scales);
  } else {
    // Auto: full five-scale stack when the 11-tap window fits; otherwise the
    // 32x32 three-scale preset.
    const int min_dim = std::min(images[0].width(), images[0].height());
    int feasible = 0;
    for (int d = min_dim; d >= 11; d /= 2) ++feasible;
    if (feasible >= 1) {
      weights = MsSsimWeights::defaults(std::min(feasible, 5));
    } else {
      weights = MsSsimWeights::toy32();
    }
  }
  const DiversityResult result = pairwise_diversity(images, a.n_pairs, cfg.seed, weights);

  std::ofstream pairs_csv(out / "metrics" / "pairs.csv");
  pairs_csv << "i,j,ms_ssim\n";
  char buf[64];
  for (const auto& [i, j, v] : result.pairs) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g\n", i, j, v);
    pairs_csv << buf;
  }
  pairs_csv.close();

  MetricsReport report;
  report.experiment = a.experiment;
  report.ms_ssim_diversity = result.mean_ms_ssim;
  report.n_images = static_cast<long>(images.size());
  report.n_pairs = static_cast<long>(result.pairs.size());
  report.seed = cfg.seed;
  write_metrics_report(out / "metrics" / "report.txt", report);
  finish_manifest(manifest, out / "run_manifest.json");
  std::cout << "ms_ssim_diversity = " << result.mean_ms_ssim << " over " << result.pairs.size()
            << " pairs\n";
  return 0;
}

struct ClassifyArgs {
  std::string real;
  std::string alt_real;
  std::string synthetic;
  std::string test;
  std::string out;
  std::string seeds = "1,2,3,4,5";
  int epochs = 100;
  double lr = 5e-4;
  int batch = 16;
  bool no_augment = false;
};

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    seeds.push_back(std::stoull(cell));
  }
  if (seeds.empty()) throw UsageError("--seeds must list at least one seed");
  return seeds;
}

std::string set_slug(const std::string& label) {
  if (label == experiment_set_labels()[0]) return "real";
  if (label == experiment_set_labels()[1]) return "alt_real";
  if (label == experiment_set_labels()[2]) return "synthetic";
  return "real_plus_synthetic";
}

int cmd_classify(const ClassifyArgs& a, const RunConfig& cfg, int argc, const char* const* argv) {
  const fs::path out(a.out);
  fs::create_directories(out / "reports");
  RunManifest manifest = start_manifest("classify", argc, argv, cfg, out);
  write_run_manifest(out / "run_manifest.json", manifest);

  const auto real = load_labeled_from(a.real, DataSource::RealLow);
  const auto alt_real = load_labeled_from(a.alt_real, DataSource::RealHigh);
  const auto synthetic = load_labeled_from(a.synthetic, DataSource::Synthetic);
  const auto test = load_labeled_from(a.test, DataSource::RealLow);
  const auto seeds = parse_seed_list(a.seeds);

  HeadTrainConfig head_cfg;
  head_cfg.learning_rate = a.lr;
  head_cfg.epochs = a.epochs;
  head_cfg.batch_size = a.batch;
  head_cfg.augment = !a.no_augment;

  const FrozenExtractor extractor;
  const ComparisonTable table = run_experiment(extractor, real, alt_real, synthetic, test, seeds, head_cfg);

  std::ofstream csv(out / "reports" / "comparison.csv");
  csv << table.to_csv();
  csv.close();
  std::ofstream txt(out / "reports" / "comparison.txt");
  txt << table.render();
  txt.close();
  for (const auto& row : table.rows) {
    const fs::path conf_path =
        out / "reports" / ("confusion_" + set_slug(row.train_set) + "_seed" + row.seed + ".csv");
    std::ofstream conf(conf_path);
    for (int i = 0; i < 3; ++i) {
      conf << row.report.confusion[i][0] << ',' << row.report.confusion[i][1] << ','
           << row.report.confusion[i][2] << '\n';
    }
  }
  finish_manifest(manifest, out / "run_manifest.json");
  std::cout << table.render();
  return 0;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::optional<std::string> out;
  bool strict = false;
};

int cmd_report(const ReportArgs& a) {
  std::vector<fs::path> dirs(a.runs.begin(), a.runs.end());
  const ConsolidatedReport rep = consolidate_runs(dirs, a.strict, std::cerr);
  if (rep.metric_rows.empty() && rep.class_rows.empty() && !dirs.empty()) {
    std::cerr << "warning: no readable runs\n";
  }
  std::cout << rep.render_text();
  if (a.out) {
    fs::create_directories(*a.out);
    std::ofstream txt(fs::path(*a.out) / "consolidated.txt");
    txt << rep.render_text();
    std::ofstream csv(fs::path(*a.out) / "consolidated.csv");
    csv << rep.render_csv();
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Text-prompted MRI image generation pipeline (phantom data, diffusion training, "
               "sampling, evaluation, classification)"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  // phantom-gen
  PhantomGenArgs pg;
  auto* c_pg = app.add_subcommand("phantom-gen", "Generate a labelled synthetic phantom dataset");
  c_pg->add_option("--out", pg.out, "Output directory")->required();
  c_pg->add_option("--per-class", pg.per_class, "Images per (field, modality) class");
  c_pg->add_option("--seed", pg.seed, "Base RNG seed");
  c_pg->add_option("--size", pg.size, "Image side length");
  c_pg->add_option("--slices", pg.slices, "Slice indices cycle through 1..N");
  c_pg->add_option("--noise-low", pg.noise_low, "Noise sigma for 0.3T images");
  c_pg->add_option("--noise-high", pg.noise_high, "Noise sigma for 3T images");

  // preprocess
  PreprocessArgs pp;
  auto* c_pp = app.add_subcommand("preprocess", "Ingest a manifest, normalize/crop, retain head slices");
  c_pp->add_option("--manifest", pp.manifest, "Input manifest (JSONL)")->required();
  c_pp->add_option("--out", pp.out, "Output directory")->required();
  c_pp->add_option("--retain-slices", pp.retain_slices, "Keep the first K slices per volume (0 = all)");
  c_pp->add_flag("--skip-errors", pp.skip_errors, "Skip bad entries with a log line");

  const std::map<std::string, std::string> train_keys = {
      {"--learning-rate", "learning_rate"},   {"--max-steps", "max_steps"},
      {"--batch-size", "batch_size"},         {"--grad-accum-steps", "grad_accum_steps"},
      {"--lr-schedule", "lr_schedule"},       {"--seed", "seed"},
      {"--cond-dropout-prob", "cond_dropout_prob"}, {"--lambda-prior", "lambda_prior"},
      {"--guidance-scale", "guidance_scale"}, {"--schedule-t", "schedule_T"},
      {"--beta-start", "beta_start"},         {"--beta-end", "beta_end"},
      {"--precision", "precision"},
  };
  auto add_config_options = [&train_keys](CLI::App* cmd, std::optional<std::string>& config_path) {
    cmd->add_option("--config", config_path, "Run config file (key = value)");
    for (const auto& [flag, key] : train_keys) {
      cmd->add_option(flag)->description("Override config key '" + key + "'");
    }
  };

  // train
  TrainArgs tr;
  std::optional<std::string> tr_config;
  auto* c_tr = app.add_subcommand("train", "Train the denoiser on a manifest dataset");
  c_tr->add_option("--data", tr.data, "Dataset manifest (JSONL)")->required();
  c_tr->add_option("--out", tr.out, "Output directory")->required();
  c_tr->add_option("--init", tr.init_ckpt, "Warm-start checkpoint");
  c_tr->add_flag("--dump-config", tr.dump_config, "Write the resolved config snapshot");
  add_config_options(c_tr, tr_config);

  // dreambooth
  DreamboothArgs db;
  std::optional<std::string> db_config;
  auto* c_db = app.add_subcommand("dreambooth", "Identifier-bound fine-tuning with prior preservation");
  c_db->add_option("--ckpt", db.ckpt, "Pre-trained checkpoint")->required();
  c_db->add_option("--instance", db.instance, "Instance-set manifest")->required();
  c_db->add_option("--identifier", db.identifier, "Registered rare token (sks0..sks3)")->required();
  c_db->add_option("--class-prompt", db.class_prompt, "Prior-preservation class prompt")->required();
  c_db->add_option("--out", db.out, "Output directory")->required();
  c_db->add_flag("--train-text-embedding", db.train_text_embedding,
                 "Also fine-tune the token embedding table (frozen by default)");
  add_config_options(c_db, db_config);

  // sample
  SampleArgs sm;
  std::optional<std::string> sm_config;
  auto* c_sm = app.add_subcommand("sample", "Generate one image from a prompt");
  c_sm->add_option("--ckpt", sm.ckpt, "Checkpoint")->required();
  c_sm->add_option("--prompt", sm.prompt, "Text prompt")->required();
  c_sm->add_option("--out", sm.out, "Output image (.png/.pgm)")->required();
  c_sm->add_option("--sampler", sm.sampler, "ddpm|ddim (default ddim)");
  c_sm->add_option("--steps", sm.steps, "DDIM step count");
  c_sm->add_option("--eta", sm.eta, "DDIM eta in [0,1]");
  add_config_options(c_sm, sm_config);

  // eval-fid
  EvalFidArgs ef;
  std::optional<std::string> ef_config;
  auto* c_ef = app.add_subcommand("eval-fid", "Frechet distance between two image sets");
  c_ef->add_option("--real", ef.real, "Real image dir or manifest")->required();
  c_ef->add_option("--gen", ef.gen, "Generated image dir or manifest")->required();
  c_ef->add_option("--out", ef.out, "Output directory")->required();
  c_ef->add_option("--experiment", ef.experiment, "Experiment name for reports");
  c_ef->add_option("--real-features", ef.real_features, "External features for the real set");
  c_ef->add_option("--gen-features", ef.gen_features, "External features for the generated set");
  add_config_options(c_ef, ef_config);

  // eval-msssim
  EvalMsssimArgs em;
  std::optional<std::string> em_config;
  auto* c_em = app.add_subcommand("eval-msssim", "Pairwise MS-SSIM diversity of an image set");
  c_em->add_option("--images", em.images, "Image dir or manifest")->required();
  c_em->add_option("--out", em.out, "Output directory")->required();
  c_em->add_option("--experiment", em.experiment, "Experiment name for reports");
  c_em->add_option("--n-pairs", em.n_pairs, "Number of sampled pairs");
  c_em->add_option("--scales", em.scales, "Scale count M (default: auto)");
  add_config_options(c_em, em_config);

  // classify
  ClassifyArgs cl;
  std::optional<std::string> cl_config;
  auto* c_cl = app.add_subcommand("classify", "Frozen-extractor modality classification experiment");
  c_cl->add_option("--real", cl.real, "Low-field real training manifest")->required();
  c_cl->add_option("--alt-real", cl.alt_real, "Alternate-domain real training manifest")->required();
  c_cl->add_option("--synthetic", cl.synthetic, "Synthetic training manifest")->required();
  c_cl->add_option("--test", cl.test, "Held-out test manifest")->required();
  c_cl->add_option("--out", cl.out, "Output directory")->required();
  c_cl->add_option("--seeds", cl.seeds, "Comma-separated seed list");
  c_cl->add_option("--epochs", cl.epochs, "Head training epochs");
  c_cl->add_option("--lr", cl.lr, "Head learning rate");
  c_cl->add_option("--batch", cl.batch, "Head batch size");
  c_cl->add_flag("--no-augment", cl.no_augment, "Disable rotation/scaling augmentation");
  add_config_options(c_cl, cl_config);

  // report
  ReportArgs rp;
  auto* c_rp = app.add_subcommand("report", "Consolidate metric/classification runs into one table");
  c_rp->add_option("runs", rp.runs, "Run directories")->expected(-1);
  c_rp->add_option("--out", rp.out, "Directory for consolidated.txt/.csv");
  c_rp->add_flag("--strict", rp.strict, "Fail on missing or corrupt run files");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ExtrasError& e) {
      std::string msg = e.what();
      if (argc > 1) {
        const std::string suggestion = suggest_subcommand(argv[1]);
        if (!suggestion.empty()) msg += " (did you mean '" + suggestion + "'?)";
      }
      throw UsageError(msg);
    } catch (const CLI::ParseError& e) {
      throw UsageError(e.what());
    }

    if (c_pg->parsed()) return cmd_phantom_gen(pg, argc, argv);
    if (c_pp->parsed()) return cmd_preprocess(pp, argc, argv);
    if (c_tr->parsed()) {
      const RunConfig cfg = resolve_config(tr_config, c_tr, train_keys);
      require_seed(c_tr, cfg);
      return cmd_train(tr, cfg, argc, argv);
    }
    if (c_db->parsed()) {
      const RunConfig cfg = resolve_config(db_config, c_db, train_keys);
      require_seed(c_db, cfg);
      return cmd_dreambooth(db, cfg, argc, argv);
    }
    if (c_sm->parsed()) {
      const RunConfig cfg = resolve_config(sm_config, c_sm, train_keys);
      require_seed(c_sm, cfg);
      return cmd_sample(sm, cfg, argc, argv);
    }
    if (c_ef->parsed()) return cmd_eval_fid(ef, resolve_config(ef_config, c_ef, train_keys), argc, argv);
    if (c_em->parsed()) return cmd_eval_msssim(em, resolve_config(em_config, c_em, train_keys), argc, argv);
    if (c_cl->parsed()) return cmd_classify(cl, resolve_config(cl_config, c_cl, train_keys), argc, argv);
    if (c_rp->parsed()) return cmd_report(rp);
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace mrigen
