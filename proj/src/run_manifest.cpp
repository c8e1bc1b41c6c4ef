#include "mrigen/run_manifest.hpp"

#include <json.hpp>

#include <ctime>
#include <fstream>

#include "mrigen/core.hpp"

namespace mrigen {

using nlohmann::json;

std::string utc_now_iso8601() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_run_manifest(const std::filesystem::path& file, const RunManifest& m) {
  json j;
  j["command"] = m.command;
  j["argv"] = m.argv;
  j["config"] = m.config;
  j["seed"] = m.seed;
  j["out_dir"] = m.out_dir;
  j["tool_version"] = m.tool_version;
  j["started_utc"] = m.started_utc;
  j["finished_utc"] = m.finished_utc;
  std::ofstream os(file);
  if (!os) throw DataError("cannot open run manifest '" + file.string() + "' for writing");
  os << j.dump(2) << '\n';
}

RunManifest read_run_manifest(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw DataError("cannot open run manifest '" + file.string() + "'");
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw DataError("run manifest '" + file.string() + "': " + e.what());
  }
  RunManifest m;
  m.command = j.value("command", "");
  if (j.contains("argv")) m.argv = j.at("argv").get<std::vector<std::string>>();
  if (j.contains("config")) m.config = j.at("config").get<std::map<std::string, std::string>>();
  m.seed = j.value("seed", std::uint64_t{0});
  m.out_dir = j.value("out_dir", "");
  m.tool_version = j.value("tool_version", "");
  m.started_utc = j.value("started_utc", "");
  m.finished_utc = j.value("finished_utc", "");
  return m;
}

}  // namespace mrigen
