#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace modgate {

enum class Decision { AutoBlock, ManualReview, Pass };

std::string_view to_string(Decision decision);
Decision parse_decision(std::string_view text);

/// Precedence across detectors: AutoBlock > ManualReview > Pass.
Decision strongest(Decision a, Decision b) noexcept;

struct Thresholds {
  double t_block = 0.90;
  double t_review = 0.50;
};

struct ThresholdOverride {
  std::optional<double> t_block;
  std::optional<double> t_review;
};

/// Global thresholds with per-detector and per-(detector, category)
/// overrides. Each field resolves independently, most specific first.
class ThresholdPolicy {
 public:
  ThresholdPolicy() = default;
  explicit ThresholdPolicy(Thresholds global) : global_(global) {}

  const Thresholds& global() const noexcept { return global_; }
  void set_global(Thresholds t) { global_ = t; }
  void set_detector(const std::string& detector_id, ThresholdOverride o) { detectors_[detector_id] = o; }
  void set_category(const std::string& detector_id, const std::string& category, ThresholdOverride o) {
    categories_[{detector_id, category}] = o;
  }

  const std::map<std::string, ThresholdOverride>& detector_overrides() const noexcept { return detectors_; }
  const std::map<std::pair<std::string, std::string>, ThresholdOverride>& category_overrides() const noexcept {
    return categories_;
  }

  Thresholds effective(const std::string& detector_id, const std::string& category) const;

  /// Every effective (t_review, t_block) pair that is out of [0, 1] or has
  /// t_review > t_block.
  std::vector<std::string> violations() const;
  /// Throws InvalidConfig listing every violation.
  void validate() const;

  /// {"global": {...}, "detectors": {id: {...}}, "categories": {id: {cat: {...}}}}
  static ThresholdPolicy from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

 private:
  Thresholds global_;
  std::map<std::string, ThresholdOverride> detectors_;
  std::map<std::pair<std::string, std::string>, ThresholdOverride> categories_;
};

/// confidence >= t_block -> AutoBlock; >= t_review -> ManualReview; else Pass.
Decision decide(double confidence, const ThresholdPolicy& policy, const std::string& detector_id,
                const std::string& category);

}  // namespace modgate
