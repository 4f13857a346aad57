#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "modgate/detectors.hpp"
#include "modgate/geometry.hpp"
#include "modgate/policy.hpp"

namespace modgate {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// All three in percent.
struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// 0/0 is 0 for each of precision, recall and F1.
Prf1 prf1(const ConfusionCounts& c) noexcept;
/// Harmonic mean of P and R in the same unit; 0 when both are 0.
double f1_from_pr(double precision, double recall) noexcept;

struct ScoredLabel {
  double score = 0.0;
  bool truth = false;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  /// Predicted positive iff score >= threshold. The first point uses +inf.
  double threshold = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
};

/// Sweep over the distinct scores, highest first, from (0,0) to (1,1).
/// DegenerateRoc unless both classes are present.
RocCurve roc(std::span<const ScoredLabel> scores);
double auc_trapezoid(const RocCurve& curve) noexcept;
/// P(score_pos > score_neg) + P(tie)/2 via ranks. DegenerateRoc on a single class.
double auc_mann_whitney(std::span<const ScoredLabel> scores);

ConfusionCounts counts_at(std::span<const ScoredLabel> scores, double threshold) noexcept;

struct F1Point {
  double threshold = 0.0;
  /// Fractions, not percent.
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Evaluated at the ROC sweep thresholds (the distinct scores, highest first).
std::vector<F1Point> f1_curve(std::span<const ScoredLabel> scores);

/// Greedy by descending score: each prediction takes the unmatched truth
/// box of highest IoU and is a tp iff that IoU >= iou_min. Class labels
/// must agree when both are set. InvalidConfig unless 0 < iou_min <= 1.
ConfusionCounts match_boxes(std::span<const ScoredBox> predicted, std::span<const BoundingBox> truth,
                            double iou_min = 0.5);

struct ImageOutcome {
  std::string category;
  bool predicted = false;
  bool truth = false;
};

struct CategoryFpr {
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  /// Empty when the category has no negatives.
  std::optional<double> fpr;
};

struct FprBreakdown {
  std::map<std::string, CategoryFpr> per_category;
  std::optional<double> overall;
};

FprBreakdown per_category_fpr(std::span<const ImageOutcome> outcomes);

struct Objective {
  enum class Kind { MaxF1, RecallAtPrecision };
  Kind kind = Kind::MaxF1;
  /// Fraction in [0, 1]; RecallAtPrecision only.
  double min_precision = 1.0;

  static Objective max_f1() { return {}; }
  static Objective recall_at_precision(double p) { return {Kind::RecallAtPrecision, p}; }
};

/// Best sweep point for the objective; ties go to the higher threshold.
/// Empty when no point satisfies RecallAtPrecision or nothing is positive.
std::optional<F1Point> best_operating_point(std::span<const ScoredLabel> scores, const Objective& objective);

using ScoreKey = std::pair<std::string, std::string>;  // (detector_id, category)

struct TuneOptions {
  Objective objective;
  /// Budget-implied review floor; t_review = min(review_floor, t_block).
  double review_floor = 0.5;
  std::size_t min_positives = 1;
  Thresholds fallback;
};

struct TuneWarning {
  std::string detector_id;
  std::string category;
  std::string message;
};

struct TuneResult {
  ThresholdPolicy policy;
  std::vector<TuneWarning> warnings;
  std::map<ScoreKey, F1Point> chosen;
};

/// Per-detector threshold from the pooled scores, then a per-category
/// override wherever the category has enough positives; otherwise the
/// category keeps the detector (or global) threshold and a warning is raised.
TuneResult tune_thresholds(const std::map<ScoreKey, std::vector<ScoredLabel>>& scores, const TuneOptions& options);

// --- reports -----------------------------------------------------------------

struct NamedCounts {
  std::string name;
  ConfusionCounts counts;
};

/// {"rows": [{name, tp, fp, tn, fn, precision, recall, f1}]}
nlohmann::json counts_report(std::span<const NamedCounts> rows);
/// AUCs, class counts and the best-F1 point of a score set.
nlohmann::json curve_report(std::span<const ScoredLabel> scores);

/// threshold,fpr,tpr rows; the +inf threshold is written as "inf".
void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve);
/// threshold,f1 rows.
void write_f1_csv(const std::filesystem::path& path, std::span<const F1Point> curve);

}  // namespace modgate
