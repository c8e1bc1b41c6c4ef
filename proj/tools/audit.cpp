// Independent recomputation of report fields from raw artifacts: confusion
// CSVs drive the classification metrics, feature files drive FID, and the
// per-pair CSV drives the diversity mean. The formulas are assembled here
// from scratch rather than through the library paths that produced them.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr double kRealTol = 1e-9;
constexpr double kJitter = 1e-6;

int failures = 0;

void check(bool ok, const std::string& what) {
  if (ok) {
    std::cout << "ok    " << what << '\n';
  } else {
    std::cout << "FAIL  " << what << '\n';
    ++failures;
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  return out;
}

std::array<std::array<long, 3>, 3> read_confusion(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::array<std::array<long, 3>, 3> c{};
  std::string line;
  for (int r = 0; r < 3; ++r) {
    if (!std::getline(is, line)) throw std::runtime_error("short confusion file " + path.string());
    const auto cells = split(line, ',');
    if (cells.size() != 3) throw std::runtime_error("bad confusion row in " + path.string());
    for (int j = 0; j < 3; ++j) c[r][j] = std::stol(cells[static_cast<std::size_t>(j)]);
  }
  return c;
}

struct Metrics {
  double accuracy, precision, recall, f1;
};

Metrics metrics_from_confusion(const std::array<std::array<long, 3>, 3>& c) {
  long total = 0, diag = 0;
  std::array<long, 3> rowsum{}, colsum{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      total += c[i][j];
      rowsum[i] += c[i][j];
      colsum[j] += c[i][j];
    }
    diag += c[i][i];
  }
  Metrics m{};
  m.accuracy = static_cast<double>(diag) / static_cast<double>(total);
  for (int k = 0; k < 3; ++k) {
    const double p = colsum[k] ? static_cast<double>(c[k][k]) / colsum[k] : 0.0;
    const double r = rowsum[k] ? static_cast<double>(c[k][k]) / rowsum[k] : 0.0;
    m.precision += p / 3.0;
    m.recall += r / 3.0;
    m.f1 += (p + r > 0 ? 2.0 * p * r / (p + r) : 0.0) / 3.0;
  }
  return m;
}

Eigen::MatrixXd read_features(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (std::memcmp(magic, "MRIGFEA1", 8) != 0) throw std::runtime_error("bad feature magic");
  auto u32 = [&is]() {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (b[1] << 8) | (b[2] << 16)
           | (static_cast<std::uint32_t>(b[3]) << 24);
  };
  u32();  // version
  const std::uint32_t n = u32(), d = u32();
  Eigen::MatrixXd f(n, d);
  for (std::uint32_t r = 0; r < n; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) {
      const std::uint32_t bits = u32();
      float v;
      std::memcpy(&v, &bits, 4);
      f(r, c) = v;
    }
  }
  return f;
}

/// FID from mean + covariance pairs, using eigenvalues of sqrt(Sa) Sb sqrt(Sa)
/// summed directly (no second full matrix root).
double fid_from_features(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  auto stats = [](const Eigen::MatrixXd& x) {
    const Eigen::VectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
    Eigen::MatrixXd sigma = c.transpose() * c / static_cast<double>(x.rows() - 1);
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    sigma += kJitter * Eigen::MatrixXd::Identity(x.cols(), x.cols());
    return std::make_pair(mu, sigma);
  };
  const auto [mu_a, sa] = stats(a);
  const auto [mu_b, sb] = stats(b);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  const Eigen::MatrixXd ra = ea.eigenvectors() *
                             ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                             ea.eigenvectors().transpose();
  Eigen::MatrixXd inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(inner);
  const double tr_cross = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double v = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_cross;
  return std::max(v, 0.0);
}

std::map<std::string, std::string> read_kv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

void audit_metrics(const fs::path& run) {
  const fs::path report = run / "metrics" / "report.txt";
  if (!fs::exists(report)) return;
  const auto kv = read_kv(report);
  if (kv.count("fid_tinyconv")) {
    const auto fr = run / "metrics" / "features_real.bin";
    const auto fg = run / "metrics" / "features_gen.bin";
    if (fs::exists(fr) && fs::exists(fg)) {
      const double recomputed = fid_from_features(read_features(fr), read_features(fg));
      const double reported = std::stod(kv.at("fid_tinyconv"));
      check(std::abs(recomputed - reported) <= kRealTol * std::max(1.0, std::abs(reported)),
            "fid_tinyconv recomputed from feature files (" + std::to_string(reported) + ")");
    } else {
      check(false, "fid_tinyconv present but feature files missing in " + run.string());
    }
  }
  if (kv.count("ms_ssim_diversity")) {
    const auto pairs_path = run / "metrics" / "pairs.csv";
    if (fs::exists(pairs_path)) {
      std::ifstream is(pairs_path);
      std::string line;
      std::getline(is, line);  // header
      double sum = 0.0;
      long n = 0;
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        sum += std::stod(cells.at(2));
        ++n;
      }
      const double reported = std::stod(kv.at("ms_ssim_diversity"));
      const auto kv_pairs = kv.count("n_pairs") ? std::stol(kv.at("n_pairs")) : n;
      check(kv_pairs == n, "n_pairs matches the per-pair table");
      check(std::abs(sum / n - reported) <= kRealTol, "ms_ssim_diversity equals the per-pair mean");
    } else {
      check(false, "ms_ssim_diversity present but pairs.csv missing in " + run.string());
    }
  }
}

void audit_classification(const fs::path& run) {
  const fs::path cmp = run / "reports" / "comparison.csv";
  if (!fs::exists(cmp)) return;
  std::ifstream is(cmp);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::string train_set;
    std::size_t pos = 0;
    if (line[0] == '"') {
      const auto end = line.find('"', 1);
      train_set = line.substr(1, end - 1);
      pos = end + 2;
    }
    const auto cells = split(line.substr(pos), ',');
    const std::string seed = cells.at(0);
    std::string slug = "real_plus_synthetic";
    if (train_set == "Training with 0.35T Real Data") slug = "real";
    else if (train_set == "Training with 3T Real Data") slug = "alt_real";
    else if (train_set == "Training with Synthetic Data") slug = "synthetic";
    const fs::path conf_path = run / "reports" / ("confusion_" + slug + "_seed" + seed + ".csv");
    if (seed == "avg") continue;  // averages are audited through the per-seed rows
    if (!fs::exists(conf_path)) {
      check(false, "missing confusion file " + conf_path.string());
      continue;
    }
    const Metrics m = metrics_from_confusion(read_confusion(conf_path));
    const double acc = std::stod(cells.at(1)), prec = std::stod(cells.at(2));
    const double rec = std::stod(cells.at(3)), f1 = std::stod(cells.at(4));
    const bool ok = std::abs(m.accuracy - acc) <= kRealTol && std::abs(m.precision - prec) <= kRealTol &&
                    std::abs(m.recall - rec) <= kRealTol && std::abs(m.f1 - f1) <= kRealTol;
    check(ok, "classification row " + slug + " seed " + seed + " recomputed from confusion");
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: mrigen-audit RUN_DIR [RUN_DIR...]\n";
    return 1;
  }
  try {
    for (int i = 1; i < argc; ++i) {
      const fs::path run(argv[i]);
      audit_metrics(run);
      audit_classification(run);
    }
  } catch (const std::exception& e) {
    std::cerr << "audit error: " << e.what() << '\n';
    return 2;
  }
  if (failures > 0) {
    std::cerr << failures << " audit check(s) failed\n";
    return 2;
  }
  std::cout << "all audit checks passed\n";
  return 0;
}
