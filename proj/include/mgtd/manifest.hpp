#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "mgtd/common.hpp"

namespace mgtd {

// Provenance record bound to every command's output directory. Holds the
// fully resolved configuration and input digests, so a run can be repeated
// from the manifest alone.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::string resolved_config_json = "{}";  // full key set, JSON text
  std::map<std::string, std::string> data_digests;  // split name -> hex digest
  std::string started_at;   // ISO 8601 UTC
  std::string finished_at;  // ISO 8601 UTC
  std::string toolkit_version = kToolkitVersion;
  std::string status = "ok";  // "ok" or "error"
  std::string diagnostic;     // stop reason on success, error message on abort
};

std::string manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const std::string& text);

// Writes out_dir/manifest.json atomically, creating out_dir if needed.
void write_manifest(const RunManifest& manifest,
                    const std::filesystem::path& out_dir);
RunManifest read_manifest(const std::filesystem::path& out_dir);

// Hex digest of a file's bytes, for data_digests entries.
std::string file_digest(const std::filesystem::path& path);

}  // namespace mgtd
