#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "modgate/geometry.hpp"
#include "modgate/raster.hpp"

namespace modgate {

enum class ImageState { Pending, Published, AutoBlocked, UnderReview, ReviewRejected, ReviewAccepted };

inline constexpr ImageState kAllImageStates[] = {
    ImageState::Pending,        ImageState::Published,      ImageState::AutoBlocked,
    ImageState::UnderReview,    ImageState::ReviewRejected, ImageState::ReviewAccepted};

std::string_view to_string(ImageState state);
ImageState parse_image_state(std::string_view text);

/// Pending -> {Published, AutoBlocked, UnderReview};
/// UnderReview -> {ReviewAccepted, ReviewRejected}. Nothing else.
bool is_legal_transition(ImageState from, ImageState to) noexcept;

struct CatalogImage {
  std::string image_id;
  Raster pixels;
  std::string category;
  ImageState state = ImageState::Pending;
  /// Container format the image arrived in; everything this project writes is "png".
  std::string format = "png";
};

enum class SampleLabel { Compliant, NonCompliant };
enum class Provenance { Synthetic, CrowdVerified, Seed };

std::string_view to_string(SampleLabel label);
std::string_view to_string(Provenance provenance);
SampleLabel parse_sample_label(std::string_view text);

struct AnnotatedSample {
  CatalogImage image;
  SampleLabel label = SampleLabel::Compliant;
  std::vector<BoundingBox> boxes;
  Provenance provenance = Provenance::Seed;
};

/// Checks label/box consistency and that every box lies inside the image.
/// `box_bearing` is false for samples whose class carries no boxes (e.g.
/// whole-image detectors), in which case NonCompliant may have no boxes.
bool annotation_consistent(const AnnotatedSample& sample, bool box_bearing = true);

struct CorpusSpec {
  std::size_t n_images = 0;
  std::vector<std::string> categories;
  std::uint64_t seed = 0;
  int width = 64;
  int height = 64;
};

/// Procedural desk-scale catalog: flat fields, gradients, checkerboards and
/// noise, categories assigned round-robin. Channel values stay inside
/// [kCorpusMinLevel, kCorpusMaxLevel]. Pure function of the spec.
std::vector<CatalogImage> generate_corpus(const CorpusSpec& spec);

inline constexpr int kCorpusMinLevel = 16;
inline constexpr int kCorpusMaxLevel = 239;

/// Image id is the file stem; category is empty and state Pending.
CatalogImage load_image(const std::filesystem::path& path);
void save_image(const CatalogImage& image, const std::filesystem::path& path);

/// Thread-safe in-memory catalog with per-image compare-and-set on state.
class CatalogStore {
 public:
  CatalogStore() = default;
  explicit CatalogStore(std::vector<CatalogImage> images);

  CatalogStore(const CatalogStore&) = delete;
  CatalogStore& operator=(const CatalogStore&) = delete;

  /// Throws InvalidSpec on a duplicate id or an empty raster.
  void add(CatalogImage image);
  std::optional<CatalogImage> get(const std::string& image_id) const;
  std::optional<ImageState> state(const std::string& image_id) const;
  bool contains(const std::string& image_id) const;
  std::vector<std::string> ids() const;
  std::vector<std::string> ids_in_state(ImageState state) const;
  std::size_t size() const;

  /// Moves `image_id` from `expected` to `desired` if it is currently in
  /// `expected`. Returns false (and changes nothing) otherwise. Throws
  /// IllegalTransition if the edge itself is not allowed, NotFound for an
  /// unknown id.
  bool compare_and_set(const std::string& image_id, ImageState expected, ImageState desired);

  /// Writes `<dir>/<id>.png` for every image plus `<dir>/index.jsonl`.
  void save(const std::filesystem::path& dir) const;
  /// Rewrites only index.jsonl (states change far more often than pixels).
  void save_index(const std::filesystem::path& dir) const;
  static std::vector<CatalogImage> load(const std::filesystem::path& dir);

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, CatalogImage> images_;
};

}  // namespace modgate
