#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mrigen/classify.hpp"
#include "mrigen/core.hpp"

namespace mrigen {

/// Generation-quality metrics for one evaluated image set.
struct MetricsReport {
  std::string experiment;
  std::optional<double> fid_tinyconv;
  std::optional<double> fid_external;
  std::optional<double> ms_ssim_diversity;
  long n_images = 0;
  long n_pairs = 0;
  std::uint64_t seed = 0;
};

void write_metrics_report(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_metrics_report(const std::filesystem::path& path);

/// Classification comparison rows parsed back from comparison.csv.
std::vector<ExperimentRow> read_comparison_csv(const std::filesystem::path& path);

struct ConsolidatedReport {
  struct MetricRow {
    std::string run;  // run directory name
    MetricsReport report;
  };
  struct ClassRow {
    std::string run;
    ExperimentRow row;
  };
  std::vector<MetricRow> metric_rows;
  std::vector<ClassRow> class_rows;
  std::vector<std::string> skipped;  // unreadable runs

  std::string render_text() const;
  std::string render_csv() const;
};

/// Merges metric and classification outputs from run directories; ordering is
/// stable (experiment, then run name). Unreadable runs are listed and
/// skipped; strict mode turns them into an error.
ConsolidatedReport consolidate_runs(const std::vector<std::filesystem::path>& run_dirs, bool strict,
                                    std::ostream& log);

}  // namespace mrigen
