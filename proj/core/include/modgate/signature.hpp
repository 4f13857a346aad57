#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "modgate/catalog.hpp"
#include "modgate/raster.hpp"

namespace modgate {

/// Fixed-length image descriptor. Entries are non-negative; for the default
/// extractor each block is L1-normalized or all zero.
struct Signature {
  std::vector<double> values;

  std::size_t dimension() const noexcept { return values.size(); }
  bool operator==(const Signature&) const = default;
};

/// Extension point for a learned embedding; the index and classifiers only
/// see this interface.
class SignatureExtractor {
 public:
  virtual ~SignatureExtractor() = default;
  virtual std::size_t dimension() const = 0;
  virtual Signature extract(const Raster& image) const = 0;
};

/// 128-D classical descriptor:
///   [0, 64)    grayscale intensity histogram (64 bins of width 4)
///   [64, 112)  spatial color layout: RGB mass of each cell in a 4x4 grid
///   [112, 128) gradient-orientation histogram, 16 bins centered on multiples
///              of 22.5 degrees, weighted by gradient magnitude
/// Gradients are forward differences of luma, taken where both the right and
/// lower neighbor exist.
class HistogramSignatureExtractor final : public SignatureExtractor {
 public:
  static constexpr std::size_t kGrayBins = 64;
  static constexpr std::size_t kGridCells = 4;
  static constexpr std::size_t kColorBins = kGridCells * kGridCells * 3;
  static constexpr std::size_t kOrientationBins = 16;
  static constexpr std::size_t kGrayOffset = 0;
  static constexpr std::size_t kColorOffset = kGrayOffset + kGrayBins;
  static constexpr std::size_t kGradientOffset = kColorOffset + kColorBins;
  static constexpr std::size_t kDimension = kGradientOffset + kOrientationBins;

  std::size_t dimension() const override { return kDimension; }
  Signature extract(const Raster& image) const override;
};

const SignatureExtractor& default_extractor();

Signature compute_signature(const Raster& image);
Signature compute_signature(const CatalogImage& image);

/// Per-dimension thresholds. Immutable once constructed.
class BinarizationModel {
 public:
  explicit BinarizationModel(std::vector<double> thresholds) : thresholds_(std::move(thresholds)) {}

  std::size_t dimension() const noexcept { return thresholds_.size(); }
  const std::vector<double>& thresholds() const noexcept { return thresholds_; }

 private:
  std::vector<double> thresholds_;
};

/// thresholds[d] = lower median of dimension d over the reference set.
BinarizationModel fit_binarization(std::span<const Signature> reference);

/// Packed D-bit code; bit d lives in byte d/8 at position d%8.
class BinarySignature {
 public:
  BinarySignature() = default;
  explicit BinarySignature(std::size_t dimension);

  /// Parses a string of '0'/'1' characters, most significant first = bit 0.
  static BinarySignature from_string(std::string_view bits);
  static BinarySignature from_bytes(std::size_t dimension, std::span<const std::uint8_t> bytes);

  std::size_t dimension() const noexcept { return dimension_; }
  bool bit(std::size_t d) const noexcept { return (words_[d / 64] >> (d % 64)) & 1u; }
  void set_bit(std::size_t d, bool value) noexcept;
  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::vector<std::uint8_t> to_bytes() const;
  std::string to_string() const;

  bool operator==(const BinarySignature&) const = default;

 private:
  std::size_t dimension_ = 0;
  std::vector<std::uint64_t> words_;
};

/// bit d = 1 iff values[d] > thresholds[d]; ties give 0.
BinarySignature binarize(const Signature& signature, const BinarizationModel& model);

std::size_t hamming(const BinarySignature& a, const BinarySignature& b);

struct Neighbor {
  std::string image_id;
  std::size_t distance = 0;

  bool operator==(const Neighbor&) const = default;
};

/// Exact Hamming k-NN over binary codes (linear scan with popcount).
/// Readers share a lock; inserts take it exclusively, so a query never sees
/// a half-inserted entry.
class SimilarityIndex {
 public:
  explicit SimilarityIndex(BinarizationModel model,
                           std::shared_ptr<const SignatureExtractor> extractor = nullptr);
  SimilarityIndex(SimilarityIndex&& other) noexcept;
  SimilarityIndex& operator=(SimilarityIndex&&) = delete;
  SimilarityIndex(const SimilarityIndex&) = delete;
  SimilarityIndex& operator=(const SimilarityIndex&) = delete;

  const BinarizationModel& binarization() const noexcept { return model_; }
  const SignatureExtractor& extractor() const noexcept { return *extractor_; }
  std::size_t dimension() const noexcept { return model_.dimension(); }
  std::size_t size() const;

  BinarySignature encode(const Raster& image) const;

  /// Adds or replaces the code stored for `image_id`.
  void insert(const std::string& image_id, BinarySignature code);
  void insert_image(const CatalogImage& image);
  void insert_batch(std::vector<std::pair<std::string, BinarySignature>> entries);

  /// min(k, size) results by ascending distance, ties by image id.
  std::vector<Neighbor> query(const BinarySignature& probe, std::size_t k) const;

  std::vector<std::pair<std::string, BinarySignature>> snapshot() const;

  /// Writes index.bin and binarization.json into `dir`.
  void save(const std::filesystem::path& dir) const;
  static SimilarityIndex load(const std::filesystem::path& dir);

 private:
  BinarizationModel model_;
  std::shared_ptr<const SignatureExtractor> extractor_;
  mutable std::shared_mutex mutex_;
  std::vector<std::string> ids_;
  std::vector<BinarySignature> codes_;
  std::unordered_map<std::string, std::size_t> slot_;
};

std::vector<Neighbor> knn_query(const SimilarityIndex& index, const CatalogImage& probe,
                                std::size_t k);

/// Union of per-seed k-NN hits within `max_distance`, deduplicated, seed ids
/// removed. Output order is first appearance (seed order, then rank). These
/// are candidates for human labeling only.
std::vector<std::string> expand_training_set(const SimilarityIndex& index,
                                             std::span<const AnnotatedSample> seeds,
                                             std::size_t k, std::int64_t max_distance);

}  // namespace modgate
