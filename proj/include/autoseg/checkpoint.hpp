#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autoseg/network.hpp"

namespace autoseg {

struct CheckpointMeta {
  NetworkSpec spec;
  int fold = 0;
  int epoch = 0;
  std::string tag;                        // "best_avg", "best_<subregion>" or "last"
  std::vector<std::string> class_names;   // output channel order
  std::map<std::string, double> metrics;  // validation metrics at save time

  nlohmann::json to_json() const;
  static CheckpointMeta from_json(const nlohmann::json& j);
};

// Binary layout: magic, u64 header length, JSON header (meta plus tensor names and
// sizes), then raw little-endian float32 parameters followed by buffers.
void save_checkpoint(const std::string& path, SegResNet& net, const CheckpointMeta& meta);

struct LoadedModel {
  CheckpointMeta meta;
  std::unique_ptr<SegResNet> net;
};

LoadedModel load_checkpoint(const std::string& path);     // IoError, ParseError, ShapeError
CheckpointMeta read_checkpoint_meta(const std::string& path);

std::string checkpoint_filename(const std::string& tag, int fold);

struct RegistryEntry {
  int fold = 0;
  std::string tag;
  int epoch = 0;
  std::string path;  // relative to the registry file
  std::map<std::string, double> metrics;
  bool operator==(const RegistryEntry&) const = default;
};

struct Registry {
  std::vector<RegistryEntry> entries;

  nlohmann::json to_json() const;
  static Registry from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static Registry load(const std::string& path);
  // Entries with the given tag, ordered by fold.
  std::vector<RegistryEntry> with_tag(const std::string& tag) const;
};

}  // namespace autoseg
