#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "modgate/catalog.hpp"
#include "modgate/event_log.hpp"
#include "modgate/pipeline.hpp"

namespace modgate {

enum class TaskStatus { Open, Decided };
enum class ReviewVerdict { ConfirmNonCompliant, RejectFlag };

std::string_view to_string(TaskStatus status);
std::string_view to_string(ReviewVerdict verdict);
TaskStatus parse_task_status(std::string_view text);
ReviewVerdict parse_review_verdict(std::string_view text);

struct ReviewTask {
  std::string task_id;
  std::string image_id;
  std::string detector_id;
  std::string category;
  double confidence = 0.0;
  std::vector<ScoredBox> boxes;
  TaskStatus status = TaskStatus::Open;
  std::int64_t created_at_ms = 0;
};

struct ReviewDecision {
  std::string task_id;
  ReviewVerdict verdict = ReviewVerdict::ConfirmNonCompliant;
  std::string reviewer_id;
  std::int64_t decided_at_ms = 0;
};

nlohmann::json task_json(const ReviewTask& task);
ReviewTask task_from_json(const nlohmann::json& j);
nlohmann::json decision_json(const ReviewDecision& decision);
ReviewDecision decision_from_json(const nlohmann::json& j);

/// ManualReview verdicts with confidence >= floor whose (image, detector)
/// pair is not in `exclude`, highest confidence first (ties by image_id,
/// then detector_id), at most `budget`. Returned tasks have no task_id yet.
std::vector<ReviewTask> select_for_review(std::span<const DetectionVerdict> verdicts, std::size_t budget,
                                          double floor,
                                          const std::set<std::pair<std::string, std::string>>& exclude = {});

/// Fraction of decisions that confirmed the flag. Undefined on empty input.
double labeling_roi(std::span<const ReviewDecision> decided);

struct LabeledEntry {
  AnnotatedSample sample;
  std::string task_id;
  std::string detector_id;
  std::string reviewer_id;
  std::int64_t decided_at_ms = 0;
};

/// Append-only store of crowd-verified samples. With a directory, entries
/// persist to labeled.jsonl plus images/<image_id>.png and are reloaded on
/// construction.
class LabeledStore {
 public:
  LabeledStore() = default;
  explicit LabeledStore(std::filesystem::path dir);

  void append(LabeledEntry entry);
  std::size_t size() const;
  std::vector<LabeledEntry> entries() const;

 private:
  std::optional<std::filesystem::path> dir_;
  std::unique_ptr<EventLog> log_;
  mutable std::shared_mutex mutex_;
  std::vector<LabeledEntry> entries_;
};

struct CategoryStats {
  std::size_t decided = 0;
  std::size_t confirmed = 0;
  std::size_t rejected = 0;
  std::optional<double> roi;
};

struct ReviewStats {
  std::size_t open = 0;
  std::size_t decided = 0;
  std::size_t confirmed = 0;
  std::size_t rejected = 0;
  std::size_t labeled = 0;
  std::optional<double> roi;
  std::map<std::string, CategoryStats> per_category;

  /// roi is null when nothing has been decided.
  nlohmann::json to_json() const;
};

struct SubmitResult {
  ReviewDecision decision;
  /// Catalog state after the decision, if the image is in the catalog.
  std::optional<ImageState> image_state;
  /// False when the image had already left UnderReview (label recorded only).
  bool state_changed = false;
};

/// Task lifecycle. Tasks and decisions persist to `<dir>/tasks.jsonl`,
/// labels to `<dir>/labeled/`. A null pipeline records labels without
/// touching catalog state.
class ReviewService {
 public:
  ReviewService(CatalogStore& catalog, ModerationPipeline* pipeline, std::optional<std::filesystem::path> dir = {});

  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  /// Opens tasks for select_for_review over `verdicts`.
  std::vector<ReviewTask> open_tasks(std::span<const DetectionVerdict> verdicts, std::size_t budget, double floor);
  /// Same, over the pipeline's persisted verdicts.
  std::vector<ReviewTask> select(std::size_t budget, double floor);

  ReviewTask task(const std::string& task_id) const;
  /// Ordered by task id; all statuses when `status` is empty.
  std::vector<ReviewTask> tasks(std::optional<TaskStatus> status = {}) const;
  std::vector<ReviewDecision> decisions() const;

  /// NotFound for an unknown task, DuplicateDecision when it is already decided.
  SubmitResult submit_decision(const std::string& task_id, ReviewVerdict verdict, const std::string& reviewer_id);

  const LabeledStore& labeled() const noexcept { return labeled_; }
  ReviewStats stats() const;

 private:
  CatalogStore& catalog_;
  ModerationPipeline* pipeline_;
  std::unique_ptr<EventLog> log_;
  LabeledStore labeled_;

  mutable std::shared_mutex mutex_;
  std::map<std::string, ReviewTask> tasks_;
  std::map<std::string, ReviewDecision> decisions_;
  /// Pairs that already have a task, open or decided; a verdict is reviewed once.
  std::set<std::pair<std::string, std::string>> tasked_pairs_;
  std::uint64_t next_task_ = 1;
};

}  // namespace modgate
