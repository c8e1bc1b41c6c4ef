#include "mrigen/manifest.hpp"

#include <json.hpp>

#include <fstream>
#include <iostream>

#include "mrigen/image_io.hpp"
#include "mrigen/phantom.hpp"

namespace mrigen {

using nlohmann::json;

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest '" + path.string() + "'");
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      ManifestEntry e;
      e.path = j.at("path").get<std::string>();
      e.meta.field = field_from_string(j.at("field").get<std::string>());
      e.meta.modality = modality_from_string(j.at("modality").get<std::string>());
      e.meta.slice_index = j.at("slice").get<int>();
      e.meta.subject_id = j.at("subject").get<std::string>();
      e.normalize = j.value("normalize", false);
      if (j.contains("crop_to") && !j.at("crop_to").is_null()) {
        const auto& c = j.at("crop_to");
        if (!c.is_array() || c.size() != 2) {
          throw DataError("crop_to must be [w,h]");
        }
        e.crop_to = std::make_pair(c[0].get<int>(), c[1].get<int>());
      }
      validate(e.meta);
      entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + ex.what());
    } catch (const DataError& ex) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open manifest '" + path.string() + "' for writing");
  for (const auto& e : entries) {
    json j;
    j["path"] = e.path;
    j["field"] = std::string(to_string(e.meta.field));
    j["modality"] = std::string(to_string(e.meta.modality));
    j["slice"] = e.meta.slice_index;
    j["subject"] = e.meta.subject_id;
    j["normalize"] = e.normalize;
    if (e.crop_to) j["crop_to"] = {e.crop_to->first, e.crop_to->second};
    os << j.dump() << '\n';
  }
  if (!os) throw DataError("write failed for manifest '" + path.string() + "'");
}

std::vector<DatasetItem> ingest_manifest(const std::filesystem::path& path, const IngestOptions& opts) {
  const auto entries = read_manifest(path);
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::ostream& log = opts.log ? *opts.log : std::cerr;

  if (opts.kept != nullptr) opts.kept->clear();
  std::vector<DatasetItem> items;
  items.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    try {
      std::filesystem::path img_path(e.path);
      if (img_path.is_relative()) img_path = base / img_path;
      ImageSlice slice = to_slice(load_image(img_path));
      if (e.normalize) {
        slice = to_slice(normalize_to_u8(slice.data));
      }
      if (e.crop_to) {
        slice = center_crop(slice, e.crop_to->first, e.crop_to->second);
      }
      items.push_back({std::move(slice), e.meta});
      if (opts.kept != nullptr) opts.kept->push_back(i);
    } catch (const DataError& ex) {
      const std::string msg =
          "manifest entry " + std::to_string(i + 1) + " ('" + e.path + "'): " + ex.what();
      if (!opts.skip_errors) throw DataError(msg);
      log << "warning: skipping " << msg << '\n';
    }
  }
  return items;
}

}  // namespace mrigen
