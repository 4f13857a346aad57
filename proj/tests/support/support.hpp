#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "modgate/catalog.hpp"
#include "modgate/detectors.hpp"
#include "modgate/evalkit.hpp"
#include "modgate/pipeline.hpp"
#include "modgate/review.hpp"
#include "modgate/signature.hpp"
#include "modgate/synthgen.hpp"

namespace modgate::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

Raster solid(int width, int height, Rgba color);

/// Detector double whose confidence is a function of the image.
class FunctionDetector final : public Detector {
 public:
  FunctionDetector(std::string id, std::function<double(const Raster&)> fn, std::string cls = "test")
      : id_(std::move(id)), cls_(std::move(cls)), fn_(std::move(fn)) {}
  const std::string& id() const override { return id_; }
  const std::string& kind() const override;
  std::vector<std::string> classes() const override { return {cls_}; }
  DetectorOutput detect(const Raster& image) const override { return {id_, fn_(image), {}}; }

 private:
  std::string id_;
  std::string cls_;
  std::function<double(const Raster&)> fn_;
};

/// Confidence encoded in the red channel of pixel (0, 0): r / 255.
double red_confidence(const Raster& image);
/// Confidence encoded in the green channel of pixel (0, 0): g / 255.
double green_confidence(const Raster& image);

/// 64x64 image whose (0,0) pixel carries the given confidences for red_confidence/green_confidence.
CatalogImage coded_image(const std::string& id, const std::string& category, std::uint8_t red, std::uint8_t green = 0);

// --- oracles -----------------------------------------------------------------

double median_oracle(std::vector<double> values);
std::string binarize_oracle(const Signature& sig, const std::vector<double>& thresholds);
std::size_t hamming_oracle(const BinarySignature& a, const BinarySignature& b);
std::vector<Neighbor> knn_oracle(const std::vector<std::pair<std::string, BinarySignature>>& entries,
                                 const BinarySignature& probe, std::size_t k);

struct NaiveZncc {
  double zncc = -2.0;
  int x = 0;
  int y = 0;
};
/// Direct weighted ZNCC over every placement, recomputing means per window.
NaiveZncc zncc_oracle(const GrayImage& image, const GrayImage& templ, const std::vector<double>& weights);

/// (fpr, tpr) at +inf and at every distinct score, counting directly.
std::vector<std::pair<double, double>> roc_oracle(const std::vector<ScoredLabel>& scores);
/// Pairwise comparison estimator.
double auc_pairwise_oracle(const std::vector<ScoredLabel>& scores);

/// Sort all eligible verdicts, filter, take the first `budget` distinct pairs.
std::vector<std::pair<std::string, std::string>> selection_oracle(std::vector<DetectionVerdict> verdicts,
                                                                  std::size_t budget, double floor);

/// Box of pixels that differ between `out` and `base`, skipping pixels whose
/// transformed-logo alpha is at most the footprint threshold.
std::optional<BoundingBox> recovered_box(const Raster& base, const Raster& out, const Raster& warped_logo,
                                         int x, int y);

}  // namespace modgate::testing
