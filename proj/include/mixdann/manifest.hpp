#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mixdann/config.hpp"

namespace mixdann {

inline constexpr const char* kToolVersion = "0.1.0";

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// SHA-256 over every regular file below `dir`, visited in sorted relative
/// path order; each file contributes its relative path and its own hash.
std::string sha256_tree(const std::filesystem::path& dir);

struct ArtifactHash {
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  std::string tool_version = kToolVersion;
  ConfigMap config;
  std::vector<std::uint64_t> seeds;
  std::vector<ArtifactHash> inputs;
  std::vector<ArtifactHash> outputs;
  std::string started_utc;
  std::string finished_utc;

  /// Hash of a file or a directory tree.
  void add_input(const std::filesystem::path& p);
  void add_output(const std::filesystem::path& p);
};

std::string utc_now();

void write_manifest(const std::filesystem::path& path, const RunManifest& m);

}  // namespace mixdann
