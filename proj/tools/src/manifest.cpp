#include "protoforge_tools/manifest.hpp"

#include "protoforge/error.hpp"
#include "protoforge/io.hpp"

namespace protoforge::tools {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

FileRecord record(const fs::path& file, const fs::path& base) {
  const fs::path abs = fs::absolute(file).lexically_normal();
  fs::path rel = abs.lexically_relative(fs::absolute(base).lexically_normal());
  const std::string shown = rel.empty() ? abs.string() : rel.generic_string();
  return FileRecord{shown, hash_file(file)};
}

json records_to_json(const std::vector<FileRecord>& records) {
  json a = json::array();
  for (const auto& r : records) a.push_back({{"path", r.path}, {"sha1", r.hash}});
  return a;
}

std::vector<FileRecord> records_from_json(const json& a) {
  std::vector<FileRecord> out;
  for (const auto& r : a) out.push_back({r.at("path").get<std::string>(), r.at("sha1").get<std::string>()});
  return out;
}

}  // namespace

std::string tool_version() { return PROTOFORGE_VERSION; }

ExperimentManifest make_manifest(std::string command, json config, std::uint64_t seed,
                                 const std::vector<fs::path>& inputs,
                                 const std::vector<fs::path>& outputs,
                                 const fs::path& manifest_dir) {
  ExperimentManifest m;
  m.command = std::move(command);
  m.config = std::move(config);
  m.seed = seed;
  m.tool_version = tool_version();
  for (const auto& p : inputs) m.inputs.push_back(record(p, manifest_dir));
  for (const auto& p : outputs) m.outputs.push_back(record(p, manifest_dir));
  return m;
}

json manifest_to_json(const ExperimentManifest& m) {
  return json{{"format", "protoforge-manifest"},
              {"version", 1},
              {"tool_version", m.tool_version},
              {"command", m.command},
              {"seed", m.seed},
              {"config", m.config},
              {"inputs", records_to_json(m.inputs)},
              {"outputs", records_to_json(m.outputs)}};
}

ExperimentManifest manifest_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "protoforge-manifest") {
      fail(ErrorCode::kParse, "not a protoforge manifest");
    }
    ExperimentManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.inputs = records_from_json(j.at("inputs"));
    m.outputs = records_from_json(j.at("outputs"));
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("manifest: ") + e.what());
  }
}

void write_manifest(const fs::path& path, const ExperimentManifest& m) {
  write_file_atomic(path, manifest_to_json(m).dump(2) + "\n");
}

ExperimentManifest read_manifest(const fs::path& path) {
  return manifest_from_json(read_file(path));
}

ManifestCheck verify_manifest(const fs::path& path) {
  const ExperimentManifest m = read_manifest(path);
  const fs::path base = path.parent_path();
  ManifestCheck check;
  auto verify = [&](const std::vector<FileRecord>& records, const char* kind) {
    for (const auto& r : records) {
      const fs::path p = fs::path(r.path).is_absolute() ? fs::path(r.path) : base / r.path;
      if (!fs::exists(p)) {
        check.ok = false;
        check.problems.push_back(std::string(kind) + " missing: " + r.path);
        continue;
      }
      const std::string now = hash_file(p);
      if (now != r.hash) {
        check.ok = false;
        check.problems.push_back(std::string(kind) + " changed: " + r.path + " (" + r.hash +
                                 " -> " + now + ")");
      }
    }
  };
  verify(m.inputs, "input");
  verify(m.outputs, "output");
  return check;
}

}  // namespace protoforge::tools
