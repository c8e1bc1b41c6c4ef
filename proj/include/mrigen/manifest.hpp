#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mrigen/core.hpp"

namespace mrigen {

/// One JSONL record: {"path":..., "field":"0.3T"|"3T", "modality":"T1"|"T2"|"FLAIR",
///  "slice":int, "subject":str, "normalize":bool, "crop_to":[w,h]?}
struct ManifestEntry {
  std::string path;  // relative to the manifest's directory unless absolute
  SliceMeta meta;
  bool normalize = false;
  std::optional<std::pair<int, int>> crop_to;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

struct DatasetItem {
  ImageSlice image;
  SliceMeta meta;
};

struct IngestOptions {
  bool skip_errors = false;     // log and continue instead of failing fast
  std::ostream* log = nullptr;  // defaults to std::cerr when skipping
  std::vector<std::size_t>* kept = nullptr;  // receives surviving entry indices (0-based)
};

/// Loads every referenced image, applying normalize/crop flags; order follows
/// the manifest. Entry failures carry the 1-based entry index.
std::vector<DatasetItem> ingest_manifest(const std::filesystem::path& path,
                                         const IngestOptions& opts = {});

}  // namespace mrigen
