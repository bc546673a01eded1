#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace protoforge::tools {

struct FileRecord {
  std::string path;  // relative to the manifest's directory when possible
  std::string hash;  // git blob SHA-1
};

/// What ran, with which resolved configuration, on which inputs, producing
/// which outputs. Written last, after every output is in place.
struct ExperimentManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;
  std::string tool_version;
};

inline constexpr const char* kManifestFile = "manifest.json";

std::string tool_version();

// Hashes the files now; paths are stored relative to `manifest_dir`.
ExperimentManifest make_manifest(std::string command, nlohmann::json config,
                                 std::uint64_t seed,
                                 const std::vector<std::filesystem::path>& inputs,
                                 const std::vector<std::filesystem::path>& outputs,
                                 const std::filesystem::path& manifest_dir);

nlohmann::json manifest_to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(std::string_view text);

void write_manifest(const std::filesystem::path& path, const ExperimentManifest& m);
ExperimentManifest read_manifest(const std::filesystem::path& path);

struct ManifestCheck {
  bool ok = true;
  std::vector<std::string> problems;  // one line per missing or changed file
};

// Re-hashes every recorded input and output.
ManifestCheck verify_manifest(const std::filesystem::path& path);

}  // namespace protoforge::tools
