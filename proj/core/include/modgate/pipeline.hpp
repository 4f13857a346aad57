#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "modgate/catalog.hpp"
#include "modgate/detectors.hpp"
#include "modgate/event_log.hpp"
#include "modgate/policy.hpp"
#include "modgate/queue.hpp"
#include "modgate/router.hpp"

namespace modgate {

struct DetectionVerdict {
  std::string image_id;
  std::string detector_id;
  /// Category the image was routed under; the thresholds applied are the
  /// ones effective for (detector_id, category).
  std::string category;
  double confidence = 0.0;
  std::vector<ScoredBox> boxes;
  Decision decision = Decision::Pass;
  std::int64_t timestamp_ms = 0;

  std::pair<std::string, std::string> idempotency_key() const { return {image_id, detector_id}; }
};

nlohmann::json verdict_json(const DetectionVerdict& verdict);
DetectionVerdict verdict_from_json(const nlohmann::json& j);

struct ValidationLimits {
  int min_dim = 32;
  int max_dim = 4096;
  std::set<std::string> allowed_formats{"png"};
};

enum class RejectionReason { TooSmall, TooLarge, UnsupportedFormat };
std::string_view to_string(RejectionReason reason);

struct Rejection {
  RejectionReason reason;
  std::string detail;
};

/// nullopt means the image is accepted.
std::optional<Rejection> prevalidate(const CatalogImage& image, const ValidationLimits& limits);

Decision fold_decisions(std::span<const Decision> decisions) noexcept;
/// AutoBlock -> AutoBlocked, ManualReview -> UnderReview, Pass -> Published.
ImageState terminal_state_for(Decision decision) noexcept;

enum class ReviewAction { Accept, Reject };
std::string_view to_string(ReviewAction action);

struct ReviewOutcome {
  ImageState state;
  /// True when the same decision had already been applied; nothing changed.
  bool duplicate = false;
};

/// Thrown by an injected fault. The pipeline object must be discarded and
/// a new one opened over the same state directory.
class SimulatedCrash : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FaultPlan {
  /// Crash right after the n-th newly persisted verdict, before its message is acked.
  std::optional<std::size_t> crash_after_verdicts;
  /// Every n-th handled message is left unacked and comes back (0 disables).
  std::size_t redeliver_every = 0;
};

struct PipelineOptions {
  ValidationLimits limits;
  unsigned workers = 1;
  L1Classifier l1;
  FaultPlan faults;
};

struct RunReport {
  std::size_t images_in = 0;
  std::size_t rejected = 0;
  std::map<std::string, std::size_t> rejected_by_reason;
  std::size_t routed_rest = 0;
  /// Images whose catalog category the routing table does not know.
  std::size_t unknown_category = 0;
  /// Unique persisted verdicts.
  std::size_t l2_invocations = 0;
  /// Sum over routed images of the routing table's detector count.
  std::size_t routing_expected = 0;
  /// Every image through every registered detector.
  std::size_t all_detectors_baseline = 0;
  /// Detector runs in this process. A redelivered message whose verdict
  /// already exists does not run the detector again.
  std::size_t l2_executions = 0;
  /// Queue messages handled in this process, redeliveries included.
  std::size_t deliveries = 0;
  std::map<std::string, std::map<Decision, std::size_t>> per_detector;
  std::map<ImageState, std::size_t> terminal;
  /// Accepted images that have not reached a terminal state yet.
  std::size_t in_flight = 0;
  bool crashed = false;

  std::int64_t reduction() const {
    return static_cast<std::int64_t>(all_detectors_baseline) - static_cast<std::int64_t>(l2_invocations);
  }
  std::size_t terminal_total() const;
  /// images_in == rejected + terminal_total()
  bool balanced() const { return images_in == rejected + terminal_total(); }
  /// Equality on everything that must survive kill-and-resume
  /// (l2_executions, deliveries and crashed excluded).
  bool same_totals(const RunReport& other) const;
  nlohmann::json to_json() const;
};

/// Report as a pure fold over the event log.
RunReport fold_events(std::span<const nlohmann::json> events, std::size_t detector_count);
/// Final state per image as recorded by state and review events.
std::map<std::string, ImageState> fold_states(std::span<const nlohmann::json> events);

/// Ingest queue -> prevalidation + L1 routing -> det.<id> queues -> post
/// queue -> terminal state. Queues and events.jsonl live under `state_dir`;
/// constructing over an existing directory resumes where the last process
/// stopped.
class ModerationPipeline {
 public:
  /// ConfigError when the routing table references unregistered detectors,
  /// InvalidConfig for a bad policy or zero workers. Nothing touches disk
  /// before validation passes.
  ModerationPipeline(std::filesystem::path state_dir, CatalogStore& catalog, RoutingTable table,
                     const DetectorRegistry& registry, ThresholdPolicy policy, PipelineOptions options = {});
  ~ModerationPipeline();

  ModerationPipeline(const ModerationPipeline&) = delete;
  ModerationPipeline& operator=(const ModerationPipeline&) = delete;

  /// Ingests every Pending image not yet ingested and drains.
  RunReport run();
  /// Enqueues one catalog image. False if it was already ingested.
  bool ingest(const std::string& image_id);
  /// Processes queued messages until none remain or an injected crash fires.
  RunReport drain();

  /// Accept: UnderReview -> ReviewAccepted; Reject: UnderReview -> ReviewRejected.
  /// Replaying an applied decision returns duplicate = true. IllegalTransition
  /// otherwise, NotFound for an unknown image.
  ReviewOutcome apply_review_decision(const std::string& image_id, ReviewAction action);

  std::vector<DetectionVerdict> verdicts() const;
  std::vector<DetectionVerdict> verdicts_for(const std::string& image_id) const;
  std::optional<std::string> routed_category(const std::string& image_id) const;
  std::optional<Rejection> rejection_for(const std::string& image_id) const;

  RunReport report() const;
  CatalogStore& catalog() noexcept { return catalog_; }
  const ThresholdPolicy& policy() const noexcept { return policy_; }
  const std::filesystem::path& state_dir() const noexcept { return dir_; }
  std::filesystem::path events_path() const { return dir_ / "events.jsonl"; }

 private:
  struct Routed {
    std::string category;
    std::set<std::string> detectors;
  };

  void replay();
  /// Handles at most one message; false when every queue was empty.
  bool step();
  void handle_ingest(const QueueMessage& msg);
  void handle_detector(const std::string& detector_id, const QueueMessage& msg);
  void handle_post(const QueueMessage& msg);
  bool transition(const std::string& image_id, ImageState from, ImageState to);
  void publish(DurableQueue& queue, const std::string& payload);

  std::filesystem::path dir_;
  CatalogStore& catalog_;
  RoutingTable table_;
  const DetectorRegistry& registry_;
  ThresholdPolicy policy_;
  PipelineOptions options_;

  std::unique_ptr<EventLog> events_;
  std::unique_ptr<DurableQueue> ingest_q_;
  std::unique_ptr<DurableQueue> post_q_;
  std::map<std::string, std::unique_ptr<DurableQueue>> detector_qs_;

  mutable std::shared_mutex state_mutex_;
  std::set<std::string> ingested_;
  std::map<std::string, Rejection> rejected_;
  std::map<std::string, Routed> routed_;
  std::map<std::pair<std::string, std::string>, DetectionVerdict> verdicts_;
  std::map<std::string, ReviewAction> reviewed_;

  std::mutex transition_mutex_;
  std::mutex run_mutex_;

  std::atomic<std::int64_t> outstanding_{0};
  std::atomic<std::size_t> executions_{0};
  std::atomic<std::size_t> new_verdicts_{0};
  std::atomic<std::size_t> handled_{0};
  std::atomic<bool> stop_{false};
  std::atomic<bool> crashed_{false};
};

}  // namespace modgate
