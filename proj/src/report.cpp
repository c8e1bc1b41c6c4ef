#include "mrigen/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mrigen {

namespace {

std::string fmt_double(double v, const char* spec = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

void write_metrics_report(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  if (!r.experiment.empty()) os << "experiment = " << r.experiment << '\n';
  if (r.fid_tinyconv) os << "fid_tinyconv = " << fmt_double(*r.fid_tinyconv) << '\n';
  if (r.fid_external) os << "fid_external = " << fmt_double(*r.fid_external) << '\n';
  if (r.ms_ssim_diversity) os << "ms_ssim_diversity = " << fmt_double(*r.ms_ssim_diversity) << '\n';
  os << "n_images = " << r.n_images << '\n';
  os << "n_pairs = " << r.n_pairs << '\n';
  os << "seed = " << r.seed << '\n';
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

MetricsReport read_metrics_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  MetricsReport r;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key, eq;
    if (!(ls >> key >> eq) || eq != "=") continue;
    std::string rest;
    std::getline(ls, rest);
    const auto b = rest.find_first_not_of(' ');
    if (b != std::string::npos) rest = rest.substr(b);
    try {
      if (key == "experiment") r.experiment = rest;
      else if (key == "fid_tinyconv") r.fid_tinyconv = std::stod(rest);
      else if (key == "fid_external") r.fid_external = std::stod(rest);
      else if (key == "ms_ssim_diversity") r.ms_ssim_diversity = std::stod(rest);
      else if (key == "n_images") r.n_images = std::stol(rest);
      else if (key == "n_pairs") r.n_pairs = std::stol(rest);
      else if (key == "seed") r.seed = std::stoull(rest);
      else throw DataError("unknown metrics field '" + key + "' in '" + path.string() + "'");
    } catch (const std::invalid_argument&) {
      throw DataError("bad value for '" + key + "' in '" + path.string() + "'");
    }
  }
  return r;
}

std::vector<ExperimentRow> read_comparison_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line) || line.rfind("train_set,seed,", 0) != 0) {
    throw DataError("'" + path.string() + "' is not a comparison CSV");
  }
  std::vector<ExperimentRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::string train_set;
    std::size_t pos = 0;
    if (line[0] == '"') {
      const auto end = line.find('"', 1);
      if (end == std::string::npos) throw DataError("'" + path.string() + "': unterminated quote");
      train_set = line.substr(1, end - 1);
      pos = end + 2;  // skip quote and comma
    } else {
      const auto end = line.find(',');
      train_set = line.substr(0, end);
      pos = end + 1;
    }
    std::istringstream rest(line.substr(pos));
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(rest, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw DataError("'" + path.string() + "': malformed row");
    ExperimentRow row;
    row.train_set = train_set;
    row.seed = cells[0];
    row.report.accuracy = std::stod(cells[1]);
    row.report.precision = std::stod(cells[2]);
    row.report.recall = std::stod(cells[3]);
    row.report.f1 = std::stod(cells[4]);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ConsolidatedReport::render_text() const {
  std::ostringstream os;
  char buf[200];
  if (!metric_rows.empty()) {
    std::snprintf(buf, sizeof(buf), "%-28s %-18s %12s %12s %9s\n", "Experiment", "Run", "FID(tiny)",
                  "FID(ext)", "MS-SSIM");
    os << buf;
    for (const auto& m : metric_rows) {
      auto opt = [](const std::optional<double>& v) {
        return v ? fmt_double(*v, "%.2f") : std::string("-");
      };
      std::snprintf(buf, sizeof(buf), "%-28s %-18s %12s %12s %9s\n",
                    m.report.experiment.empty() ? m.run.c_str() : m.report.experiment.c_str(),
                    m.run.c_str(), opt(m.report.fid_tinyconv).c_str(),
                    opt(m.report.fid_external).c_str(), opt(m.report.ms_ssim_diversity).c_str());
      os << buf;
    }
  }
  if (!class_rows.empty()) {
    if (!metric_rows.empty()) os << '\n';
    std::snprintf(buf, sizeof(buf), "%-44s %-18s %-6s %9s %10s %8s %9s\n", "Train Set", "Run", "Seed",
                  "Accuracy", "Precision", "Recall", "F1 Score");
    os << buf;
    for (const auto& c : class_rows) {
      std::snprintf(buf, sizeof(buf), "%-44s %-18s %-6s %9.4f %10.4f %8.4f %9.4f\n",
                    c.row.train_set.c_str(), c.run.c_str(), c.row.seed.c_str(),
                    c.row.report.accuracy, c.row.report.precision, c.row.report.recall,
                    c.row.report.f1);
      os << buf;
    }
  }
  if (metric_rows.empty() && class_rows.empty()) os << "(no runs)\n";
  return os.str();
}

std::string ConsolidatedReport::render_csv() const {
  std::ostringstream os;
  os << "kind,experiment,run,fid_tinyconv,fid_external,ms_ssim_diversity,train_set,seed,accuracy,"
        "precision,recall,f1\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
  for (const auto& m : metric_rows) {
    os << "metrics," << m.report.experiment << ',' << m.run << ',' << opt(m.report.fid_tinyconv)
       << ',' << opt(m.report.fid_external) << ',' << opt(m.report.ms_ssim_diversity) << ",,,,,,\n";
  }
  for (const auto& c : class_rows) {
    os << "classification,," << c.run << ",,,,\"" << c.row.train_set << "\"," << c.row.seed << ','
       << fmt_double(c.row.report.accuracy) << ',' << fmt_double(c.row.report.precision) << ','
       << fmt_double(c.row.report.recall) << ',' << fmt_double(c.row.report.f1) << '\n';
  }
  return os.str();
}

ConsolidatedReport consolidate_runs(const std::vector<std::filesystem::path>& run_dirs, bool strict,
                                    std::ostream& log) {
  ConsolidatedReport out;
  for (const auto& dir : run_dirs) {
    const std::string run = dir.filename().empty() ? dir.parent_path().filename().string()
                                                   : dir.filename().string();
    bool found = false;
    try {
      const auto metrics_path = dir / "metrics" / "report.txt";
      if (std::filesystem::exists(metrics_path)) {
        out.metric_rows.push_back({run, read_metrics_report(metrics_path)});
        found = true;
      }
      const auto cmp_path = dir / "reports" / "comparison.csv";
      if (std::filesystem::exists(cmp_path)) {
        for (auto& row : read_comparison_csv(cmp_path)) {
          out.class_rows.push_back({run, std::move(row)});
        }
        found = true;
      }
      if (!found) {
        throw DataError("no metrics/report.txt or reports/comparison.csv under '" + dir.string() + "'");
      }
    } catch (const DataError& e) {
      if (strict) throw;
      log << "warning: skipping run '" << dir.string() << "': " << e.what() << '\n';
      out.skipped.push_back(dir.string());
    }
  }
  std::stable_sort(out.metric_rows.begin(), out.metric_rows.end(), [](const auto& a, const auto& b) {
    return std::make_pair(a.report.experiment, a.run) < std::make_pair(b.report.experiment, b.run);
  });
  std::stable_sort(out.class_rows.begin(), out.class_rows.end(), [](const auto& a, const auto& b) {
    return std::make_tuple(a.row.train_set, a.run, a.row.seed) <
           std::make_tuple(b.row.train_set, b.run, b.row.seed);
  });
  return out;
}

}  // namespace mrigen
