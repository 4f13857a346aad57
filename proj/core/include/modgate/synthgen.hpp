#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "modgate/catalog.hpp"
#include "modgate/imageops.hpp"
#include "modgate/rng.hpp"

namespace modgate::synth {

enum class Compliance { NonCompliant, CompliantLookalike };
enum class Split { Train, Test };

std::string_view to_string(Compliance compliance);
std::string_view to_string(Split split);

struct LogoAsset {
  std::string logo_id;
  Raster pixels;
  std::string class_label;
  Compliance compliance = Compliance::NonCompliant;
  Split split = Split::Train;
};

/// Ranges for random logo transforms. `scale` multiplies the logo's own
/// size; logo assets are rendered so that scale 1 is roughly the base width.
struct TransformConfig {
  double scale_min = 0.15;
  double scale_max = 0.5;
  double rotation_max_deg = 20.0;
  double shear_max = 0.1;
  double flip_probability = 0.5;
  Resampling resampling = Resampling::Bilinear;

  /// Every violation, one message each; empty when valid.
  std::vector<std::string> violations() const;
};

struct TransformParams {
  double scale = 1.0;
  double rotation_deg = 0.0;
  bool flip_h = false;
  int translate_x = 0;
  int translate_y = 0;
  double shear = 0.0;

  WarpParams warp() const { return {scale, rotation_deg, shear, flip_h}; }
  bool operator==(const TransformParams&) const = default;
};

/// Minimal sub-raster holding every pixel with alpha > 0. EmptyLogo if none.
Raster tight_crop(const Raster& logo);

/// Draws a transform uniformly from the configured ranges (rejecting draws
/// whose footprint would not fit), then a placement uniformly over the valid
/// positions. LogoTooLarge when the logo cannot fit even at scale_min.
TransformParams sample_transform(Rng& rng, const TransformConfig& config, CanvasSize logo,
                                 CanvasSize base);

/// Composited raster and the annotation box of the transformed footprint
/// (alpha > kFootprintAlpha), in base coordinates.
struct Composite {
  Raster image;
  std::optional<BoundingBox> footprint;
};

Composite composite_logo(const Raster& base, const Raster& logo, const TransformParams& t,
                         Resampling resampling);

/// Alpha-over compositing of the transformed logo onto `base`. NonCompliant
/// logos give NonCompliant samples with one box; lookalikes give Compliant
/// samples with none. OutOfBounds if the footprint leaves the base; EmptyLogo
/// if nothing survives the footprint threshold.
AnnotatedSample superimpose(const CatalogImage& base, const LogoAsset& logo,
                            const TransformParams& t, Resampling resampling = Resampling::Bilinear);

/// Generated sample plus the metadata written to annotations.jsonl.
struct SyntheticSample {
  AnnotatedSample sample;
  std::string class_label;
  std::string base_id;
  std::optional<std::string> logo_id;
  std::optional<Split> logo_split;
  std::optional<TransformParams> transform;
};

struct DatasetSpec {
  std::size_t n_per_class = 0;
  double neg_ratio = 1.0;
  /// Share of negatives built from lookalike logos (rest are plain bases).
  double lookalike_fraction = 0.5;
  /// Empty means every class with a NonCompliant logo.
  std::vector<std::string> classes;
  /// Split the logos are drawn from; training sets must use Train.
  Split logo_split = Split::Train;
  std::uint64_t seed = 0;
  TransformConfig transform;
  unsigned threads = 1;
};

/// Per class: n_per_class positives, then ceil(neg_ratio * n_per_class)
/// negatives. Sample i uses Rng::derive(seed, i), so any thread count gives
/// the same output. SplitExhausted if a class has no logo in the split.
std::vector<SyntheticSample> generate_dataset(std::span<const CatalogImage> bases,
                                              std::span<const LogoAsset> logos,
                                              const DatasetSpec& spec);

struct LogoSpec {
  std::vector<std::string> classes;
  std::size_t variants_per_class = 4;
  std::size_t lookalikes_per_class = 2;
  double train_fraction = 0.75;
  int size = 64;
  std::uint64_t seed = 0;
};

/// Text-free geometric badges with binary alpha and a black outline,
/// tight-cropped. Within a class the first ceil(train_fraction * n) variants
/// are Train, the rest Test; lookalikes follow the same rule.
std::vector<LogoAsset> generate_logos(const LogoSpec& spec);

void save_logos(std::span<const LogoAsset> logos, const std::filesystem::path& dir);
std::vector<LogoAsset> load_logos(const std::filesystem::path& dir);

nlohmann::json annotation_json(const SyntheticSample& sample, const std::string& image_path);

/// Writes `<dir>/images/<id>.png` and `<dir>/annotations.jsonl`.
void write_dataset(std::span<const SyntheticSample> samples, const std::filesystem::path& dir);

/// Reads annotations.jsonl back (images included).
std::vector<SyntheticSample> read_dataset(const std::filesystem::path& dir);

struct Anchor {
  double width = 0.0;
  double height = 0.0;
};

struct AnchorSet {
  std::vector<Anchor> anchors;
};

/// IoU of two boxes sharing a center, from widths and heights only.
double centered_iou(double w1, double h1, double w2, double h2) noexcept;

struct AnchorResult {
  AnchorSet anchors;
  std::vector<std::size_t> assignment;
  /// Mean IoU to the assigned anchor after each update; non-decreasing.
  std::vector<double> mean_iou_history;
  int iterations = 0;
};

/// Lloyd's k-means on (width, height) under distance 1 - IoU with
/// k-means++ seeding. Anchors are cluster means, so at least one update is
/// always applied. Stops on max_iter, unchanged assignment, or when a later
/// update would lower the mean IoU (the previous anchors are kept).
AnchorResult anchor_kmeans(std::span<const BoundingBox> boxes, std::size_t k, int max_iter, Rng& rng);

}  // namespace modgate::synth
