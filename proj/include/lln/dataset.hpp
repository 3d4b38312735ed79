#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lln/tensor.hpp"

namespace lln {

struct ManifestEntry {
  std::string id;
  std::string path;      // feature map (or image, for extraction manifests)
  std::string location;  // place label; same label = matched pair
  std::optional<std::int64_t> frame;
  std::optional<std::string> positive;  // optional pinned positive image id
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  // Throws DatasetError on duplicate ids or pinned positives that are unknown
  // or belong to another location.
  void validate() const;
  // validate() plus at least two distinct location labels.
  void validate_for_training() const;

  std::optional<std::size_t> find(const std::string& id) const;
};

// A manifest with every feature map resident in memory, index-aligned.
struct Dataset {
  DatasetManifest manifest;
  std::vector<FeatureMap> features;

  std::size_t size() const { return features.size(); }
  const ManifestEntry& entry(std::size_t i) const { return manifest.entries[i]; }
};

}  // namespace lln
