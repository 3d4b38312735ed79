#include "lln/dataset.hpp"

#include <set>
#include <unordered_map>

#include "lln/error.hpp"

namespace lln {

void DatasetManifest::validate() const {
  std::unordered_map<std::string, std::size_t> ids;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].id.empty()) throw DatasetError("manifest entry " + std::to_string(i) + " has an empty id");
    if (!ids.emplace(entries[i].id, i).second) {
      throw DatasetError("duplicate image id '" + entries[i].id + "' in manifest");
    }
  }
  for (const auto& e : entries) {
    if (!e.positive) continue;
    auto it = ids.find(*e.positive);
    if (it == ids.end()) {
      throw DatasetError("image '" + e.id + "' pins unknown positive '" + *e.positive + "'");
    }
    if (entries[it->second].location != e.location || *e.positive == e.id) {
      throw DatasetError("pinned positive of '" + e.id + "' must be another image of the same location");
    }
  }
}

void DatasetManifest::validate_for_training() const {
  validate();
  std::set<std::string> locations;
  for (const auto& e : entries) locations.insert(e.location);
  if (locations.size() < 2) throw DatasetError("training needs at least 2 distinct locations");
}

std::optional<std::size_t> DatasetManifest::find(const std::string& id) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].id == id) return i;
  }
  return std::nullopt;
}

}  // namespace lln
