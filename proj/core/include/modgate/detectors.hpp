#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "modgate/geometry.hpp"
#include "modgate/imageops.hpp"
#include "modgate/raster.hpp"
#include "modgate/signature.hpp"
#include "modgate/synthgen.hpp"

namespace modgate {

struct ScoredBox {
  BoundingBox box;
  double score = 0.0;
};

/// confidence is in [0, 1] and equals the best box score when boxes exist.
struct DetectorOutput {
  std::string detector_id;
  double confidence = 0.0;
  std::vector<ScoredBox> boxes;
};

/// An L2 detector. Implementations are immutable after construction and
/// detect() is deterministic and safe to call concurrently.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual const std::string& id() const = 0;
  virtual const std::string& kind() const = 0;
  virtual std::vector<std::string> classes() const = 0;
  virtual DetectorOutput detect(const Raster& image) const = 0;
};

// --- template matching -----------------------------------------------------

struct CorrelationPeak {
  double zncc = -2.0;
  int x = 0;
  int y = 0;
};

/// Weighted zero-normalized cross-correlation of `templ` at every placement
/// inside `image`; `weights` is per template pixel (zero excludes it).
/// Returns the first maximal placement in row-major order. Windows with no
/// variance score 0.
CorrelationPeak best_zncc(const GrayImage& image, const GrayImage& templ,
                          std::span<const double> weights);

/// Multi-scale ZNCC on luma. Template alpha weights the correlation, so
/// fully transparent pixels do not participate. Confidence = (ZNCC + 1) / 2;
/// the single box is the scaled template's footprint at the best placement.
DetectorOutput template_match(const Raster& image, const Raster& templ, std::span<const double> scales,
                              Resampling resampling = Resampling::Nearest);

class TemplateLogoDetector final : public Detector {
 public:
  TemplateLogoDetector(std::string detector_id, std::string class_label, std::vector<Raster> templates,
                       std::vector<double> scales, Resampling resampling = Resampling::Nearest);

  const std::string& id() const override { return id_; }
  const std::string& kind() const override;
  std::vector<std::string> classes() const override { return {class_label_}; }
  /// Max over templates. Templates that do not fit the image are skipped;
  /// if none fits the confidence is 0.
  DetectorOutput detect(const Raster& image) const override;

  std::size_t template_count() const noexcept { return templates_.size(); }

 private:
  std::string id_;
  std::string class_label_;
  std::vector<Raster> templates_;
  std::vector<double> scales_;
  Resampling resampling_;
};

/// Detector over Train-split NonCompliant logos of a single class.
/// InvalidConfig for an empty list, mixed classes, or Test-split logos.
std::unique_ptr<Detector> logo_detector_from_templates(std::span<const synth::LogoAsset> templates,
                                                       std::vector<double> scales,
                                                       std::string detector_id = {},
                                                       Resampling resampling = Resampling::Nearest);

// --- skin ratio --------------------------------------------------------------

/// Skin rule (both must hold):
///   RGB:   R > 95, G > 40, B > 20, max-min > 15, |R-G| > 15, R > G, R > B
///   YCbCr: 77 <= Cb <= 127 and 133 <= Cr <= 173 (BT.601, full range)
bool is_skin(Rgba pixel) noexcept;

/// Fraction of skin pixels.
double skin_ratio(const Raster& image);

/// logistic(8 * ratio - 4): ratio 0 -> 0.018, ratio 1 -> 0.982.
inline constexpr double kSkinSlope = 8.0;
inline constexpr double kSkinIntercept = -4.0;

DetectorOutput skin_ratio_detect(const Raster& image, const std::string& detector_id = "skin_ratio");

class SkinRatioDetector final : public Detector {
 public:
  explicit SkinRatioDetector(std::string detector_id, std::string class_label = "nudity")
      : id_(std::move(detector_id)), class_label_(std::move(class_label)) {}

  const std::string& id() const override { return id_; }
  const std::string& kind() const override;
  std::vector<std::string> classes() const override { return {class_label_}; }
  DetectorOutput detect(const Raster& image) const override { return skin_ratio_detect(image, id_); }

 private:
  std::string id_;
  std::string class_label_;
};

// --- shallow classifier ------------------------------------------------------

struct ShallowModel {
  std::vector<double> weights;
  double bias = 0.0;

  std::size_t dimension() const noexcept { return weights.size(); }
};

struct LabeledSignature {
  Signature signature;
  bool positive = false;
};

struct LogisticHyper {
  double learning_rate = 0.5;
  int epochs = 500;
  double l2 = 0.0;
};

double sigmoid(double z) noexcept;

/// Mean log-loss plus (l2 / 2) * |w|^2; the bias is not regularized.
double logistic_loss(const ShallowModel& model, std::span<const LabeledSignature> samples, double l2);

/// Analytic gradient of logistic_loss, shaped like the model.
ShallowModel logistic_gradient(const ShallowModel& model, std::span<const LabeledSignature> samples,
                               double l2);

struct ShallowFit {
  ShallowModel model;
  /// Loss before the first step, then after each epoch.
  std::vector<double> loss_history;
};

/// Full-batch gradient descent from zero weights. DegenerateTraining if only
/// one label is present; DimensionError on mixed dimensions.
ShallowFit shallow_fit(std::span<const LabeledSignature> samples, const LogisticHyper& hyper);

double shallow_score(const ShallowModel& model, const Signature& signature);

DetectorOutput shallow_detect(const ShallowModel& model, const Raster& image,
                              const SignatureExtractor& extractor = default_extractor(),
                              const std::string& detector_id = "shallow");

nlohmann::json shallow_model_json(const ShallowModel& model);
ShallowModel shallow_model_from_json(const nlohmann::json& j);
void save_shallow_model(const ShallowModel& model, const std::filesystem::path& path);
ShallowModel load_shallow_model(const std::filesystem::path& path);

class ShallowDetector final : public Detector {
 public:
  ShallowDetector(std::string detector_id, std::string class_label, ShallowModel model,
                  std::shared_ptr<const SignatureExtractor> extractor = nullptr);

  const std::string& id() const override { return id_; }
  const std::string& kind() const override;
  std::vector<std::string> classes() const override { return {class_label_}; }
  DetectorOutput detect(const Raster& image) const override;

 private:
  std::string id_;
  std::string class_label_;
  ShallowModel model_;
  std::shared_ptr<const SignatureExtractor> extractor_;
};

// --- registry ----------------------------------------------------------------

/// detector_id -> detector. Built from a config object of the form
///   {"<id>": {"kind": "template" | "skin" | "shallow", "class": "...",
///             "params": {...}}}
/// template params: logos_dir, scales, resampling ("nearest" | "bilinear")
/// shallow params:  model (path to the JSON model)
/// Relative paths resolve against `base_dir`.
class DetectorRegistry {
 public:
  void add(std::shared_ptr<const Detector> detector);
  std::shared_ptr<const Detector> find(const std::string& detector_id) const;
  bool contains(const std::string& detector_id) const { return detectors_.count(detector_id) != 0; }
  std::vector<std::string> ids() const;
  std::size_t size() const noexcept { return detectors_.size(); }

  static DetectorRegistry from_config(const nlohmann::json& config, const std::filesystem::path& base_dir);

 private:
  std::map<std::string, std::shared_ptr<const Detector>> detectors_;
};

}  // namespace modgate
