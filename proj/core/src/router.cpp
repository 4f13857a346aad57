#include "modgate/router.hpp"

#include <limits>
#include <nlohmann/json.hpp>

#include "modgate/detectors.hpp"
#include "modgate/error.hpp"

namespace modgate {

void RoutingTable::set(const std::string& category, std::set<std::string> detector_ids) {
  if (category == kRestCategory && !detector_ids.empty()) {
    throw Error(ErrorKind::ConfigError, "the 'rest' category cannot route to detectors");
  }
  table_[category] = std::move(detector_ids);
}

std::vector<std::string> RoutingTable::unknown_detectors(const DetectorRegistry& registry) const {
  std::set<std::string> missing;
  for (const auto& [category, ids] : table_) {
    for (const auto& id : ids) {
      if (!registry.contains(id)) missing.insert(id);
    }
  }
  return {missing.begin(), missing.end()};
}

RoutingTable RoutingTable::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, "routing table must be an object");
  RoutingTable table;
  for (const auto& [category, ids] : j.items()) {
    table.set(category, ids.get<std::set<std::string>>());
  }
  return table;
}

nlohmann::json RoutingTable::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [category, ids] : table_) j[category] = ids;
  return j;
}

std::set<std::string> route(const RoutingTable& table, const std::string& category) {
  const auto& entries = table.entries();
  auto it = entries.find(category);
  if (it == entries.end()) return {};
  return it->second;
}

L1Classifier fit_centroids(std::span<const std::pair<CatalogImage, std::string>> labeled) {
  if (labeled.empty()) throw Error(ErrorKind::InsufficientData, "no labeled images for L1 centroids");
  std::map<std::string, std::pair<std::vector<double>, std::size_t>> sums;
  std::size_t dim = 0;
  for (const auto& [image, category] : labeled) {
    const Signature sig = compute_signature(image);
    if (dim == 0) dim = sig.dimension();
    auto& [sum, count] = sums[category];
    if (sum.empty()) sum.assign(dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) sum[d] += sig.values[d];
    ++count;
  }
  L1Classifier clf;
  clf.mode = L1Mode::NearestCentroid;
  for (auto& [category, acc] : sums) {
    auto& [sum, count] = acc;
    for (double& v : sum) v /= static_cast<double>(count);
    clf.centroids.emplace(category, Signature{std::move(sum)});
  }
  return clf;
}

std::string l1_classify(const L1Classifier& classifier, const CatalogImage& image, const RoutingTable& table) {
  std::string category;
  if (classifier.mode == L1Mode::MetadataTrusted) {
    category = image.category;
  } else {
    if (classifier.centroids.empty()) throw Error(ErrorKind::NotFitted, "L1 classifier has no centroids");
    const Signature sig = compute_signature(image);
    double best = std::numeric_limits<double>::infinity();
    // std::map iterates in key order, so strict < keeps the smallest category on ties.
    for (const auto& [name, centroid] : classifier.centroids) {
      if (centroid.dimension() != sig.dimension()) {
        throw Error(ErrorKind::DimensionError, "centroid " + name + " has the wrong dimension");
      }
      double d2 = 0.0;
      for (std::size_t d = 0; d < sig.dimension(); ++d) {
        const double diff = sig.values[d] - centroid.values[d];
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        category = name;
      }
    }
  }
  return table.has_category(category) ? category : kRestCategory;
}

}  // namespace modgate
