#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "modgate/catalog.hpp"
#include "modgate/signature.hpp"

namespace modgate {

inline const std::string kRestCategory = "rest";

class DetectorRegistry;

/// category -> detector ids. `rest` always maps to nothing.
class RoutingTable {
 public:
  RoutingTable() { table_[kRestCategory] = {}; }

  /// Throws ConfigError when `rest` is given detectors.
  void set(const std::string& category, std::set<std::string> detector_ids);
  bool has_category(const std::string& category) const { return table_.count(category) != 0; }
  const std::map<std::string, std::set<std::string>>& entries() const noexcept { return table_; }

  /// Every referenced detector id missing from the registry, sorted.
  std::vector<std::string> unknown_detectors(const DetectorRegistry& registry) const;

  /// Parses {"person": ["nudity"], "rest": []}.
  static RoutingTable from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::set<std::string>> table_;
};

/// Table lookup; `rest` and unknown categories give the empty set.
std::set<std::string> route(const RoutingTable& table, const std::string& category);

enum class L1Mode { MetadataTrusted, NearestCentroid };

struct L1Classifier {
  L1Mode mode = L1Mode::MetadataTrusted;
  std::map<std::string, Signature> centroids;
};

/// Centroid per category = mean signature of its images. InsufficientData on
/// empty input.
L1Classifier fit_centroids(std::span<const std::pair<CatalogImage, std::string>> labeled);

/// Category the image is routed under: the catalog label (MetadataTrusted)
/// or the nearest centroid by Euclidean distance, ties to the
/// lexicographically smaller category. Categories the routing table does not
/// know become `rest`. NotFitted for NearestCentroid without centroids.
std::string l1_classify(const L1Classifier& classifier, const CatalogImage& image, const RoutingTable& table);

}  // namespace modgate
