#include "mgtd/manifest.hpp"

#include <nlohmann/json.hpp>

namespace mgtd {

using nlohmann::json;

std::string manifest_to_json(const RunManifest& manifest) {
  json j;
  j["command"] = manifest.command;
  j["config_path"] = manifest.config_path;
  try {
    j["resolved_config"] = json::parse(manifest.resolved_config_json);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest resolved config is not JSON: ") +
                          e.what());
  }
  j["data_digests"] = manifest.data_digests;
  j["started_at"] = manifest.started_at;
  j["finished_at"] = manifest.finished_at;
  j["toolkit_version"] = manifest.toolkit_version;
  j["status"] = manifest.status;
  j["diagnostic"] = manifest.diagnostic;
  return j.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid manifest JSON: ") + e.what());
  }
  RunManifest manifest;
  try {
    manifest.command = j.at("command").get<std::string>();
    manifest.config_path = j.at("config_path").get<std::string>();
    manifest.resolved_config_json = j.at("resolved_config").dump();
    manifest.data_digests =
        j.at("data_digests").get<std::map<std::string, std::string>>();
    manifest.started_at = j.at("started_at").get<std::string>();
    manifest.finished_at = j.at("finished_at").get<std::string>();
    manifest.toolkit_version = j.at("toolkit_version").get<std::string>();
    manifest.status = j.value("status", "ok");
    manifest.diagnostic = j.value("diagnostic", "");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest missing field: ") + e.what());
  }
  return manifest;
}

void write_manifest(const RunManifest& manifest,
                    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "manifest.json", manifest_to_json(manifest));
}

RunManifest read_manifest(const std::filesystem::path& out_dir) {
  auto path = out_dir / "manifest.json";
  if (!std::filesystem::exists(path)) {
    throw IoError("no manifest at " + path.string());
  }
  return manifest_from_json(read_file(path));
}

std::string file_digest(const std::filesystem::path& path) {
  return to_hex(fnv1a64(read_file(path)));
}

}  // namespace mgtd
