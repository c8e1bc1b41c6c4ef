#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mrigen {

inline constexpr const char* kToolVersion = "0.1.0";

/// Written to the output directory before long-running work begins; the
/// resolved config snapshot makes the run replayable.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string tool_version = kToolVersion;
  std::string started_utc;
  std::string finished_utc;  // empty while running
};

std::string utc_now_iso8601();

void write_run_manifest(const std::filesystem::path& file, const RunManifest& manifest);
RunManifest read_run_manifest(const std::filesystem::path& file);

}  // namespace mrigen
