#include "modgate/pipeline.hpp"

#include <chrono>
#include <condition_variable>
#include <exception>
#include <nlohmann/json.hpp>
#include <thread>

#include "modgate/error.hpp"

namespace modgate {

namespace {

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

nlohmann::json box_json(const ScoredBox& b) {
  return {{"box", {b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max}},
          {"class", b.box.class_label},
          {"score", b.score}};
}

ScoredBox box_from_json(const nlohmann::json& j) {
  ScoredBox b;
  const auto& a = j.at("box");
  b.box = BoundingBox{a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>(), a.at(3).get<int>(),
                      j.value("class", std::string{})};
  b.score = j.at("score").get<double>();
  return b;
}

RejectionReason parse_rejection_reason(std::string_view text) {
  if (text == "TooSmall") return RejectionReason::TooSmall;
  if (text == "TooLarge") return RejectionReason::TooLarge;
  if (text == "UnsupportedFormat") return RejectionReason::UnsupportedFormat;
  throw Error(ErrorKind::DecodeError, "unknown rejection reason '" + std::string(text) + "'");
}

ReviewAction parse_review_action(std::string_view text) {
  if (text == "Accept") return ReviewAction::Accept;
  if (text == "Reject") return ReviewAction::Reject;
  throw Error(ErrorKind::DecodeError, "unknown review action '" + std::string(text) + "'");
}

std::string image_payload(const std::string& image_id) { return nlohmann::json{{"image_id", image_id}}.dump(); }

}  // namespace

nlohmann::json verdict_json(const DetectionVerdict& v) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : v.boxes) boxes.push_back(box_json(b));
  return {{"image_id", v.image_id},         {"detector_id", v.detector_id},
          {"category", v.category},         {"confidence", v.confidence},
          {"boxes", boxes},                 {"decision", std::string(to_string(v.decision))},
          {"timestamp_ms", v.timestamp_ms}};
}

DetectionVerdict verdict_from_json(const nlohmann::json& j) {
  DetectionVerdict v;
  v.image_id = j.at("image_id").get<std::string>();
  v.detector_id = j.at("detector_id").get<std::string>();
  v.category = j.value("category", std::string{});
  v.confidence = j.at("confidence").get<double>();
  for (const auto& b : j.at("boxes")) v.boxes.push_back(box_from_json(b));
  v.decision = parse_decision(j.at("decision").get<std::string>());
  v.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
  return v;
}

std::string_view to_string(RejectionReason reason) {
  switch (reason) {
    case RejectionReason::TooSmall: return "TooSmall";
    case RejectionReason::TooLarge: return "TooLarge";
    case RejectionReason::UnsupportedFormat: return "UnsupportedFormat";
  }
  return "TooSmall";
}

std::optional<Rejection> prevalidate(const CatalogImage& image, const ValidationLimits& limits) {
  const int w = image.pixels.width();
  const int h = image.pixels.height();
  if (!limits.allowed_formats.count(image.format)) {
    return Rejection{RejectionReason::UnsupportedFormat, "format '" + image.format + "' not allowed"};
  }
  if (w < limits.min_dim || h < limits.min_dim) {
    return Rejection{RejectionReason::TooSmall,
                     std::to_string(w) + "x" + std::to_string(h) + " below " + std::to_string(limits.min_dim)};
  }
  if (w > limits.max_dim || h > limits.max_dim) {
    return Rejection{RejectionReason::TooLarge,
                     std::to_string(w) + "x" + std::to_string(h) + " above " + std::to_string(limits.max_dim)};
  }
  return std::nullopt;
}

Decision fold_decisions(std::span<const Decision> decisions) noexcept {
  Decision out = Decision::Pass;
  for (Decision d : decisions) out = strongest(out, d);
  return out;
}

ImageState terminal_state_for(Decision decision) noexcept {
  switch (decision) {
    case Decision::AutoBlock: return ImageState::AutoBlocked;
    case Decision::ManualReview: return ImageState::UnderReview;
    case Decision::Pass: return ImageState::Published;
  }
  return ImageState::Published;
}

std::string_view to_string(ReviewAction action) { return action == ReviewAction::Accept ? "Accept" : "Reject"; }

// --- report ------------------------------------------------------------------

std::size_t RunReport::terminal_total() const {
  std::size_t n = 0;
  for (const auto& [_, c] : terminal) n += c;
  return n;
}

bool RunReport::same_totals(const RunReport& o) const {
  return images_in == o.images_in && rejected == o.rejected && rejected_by_reason == o.rejected_by_reason &&
         routed_rest == o.routed_rest && unknown_category == o.unknown_category &&
         l2_invocations == o.l2_invocations && routing_expected == o.routing_expected &&
         all_detectors_baseline == o.all_detectors_baseline && per_detector == o.per_detector &&
         terminal == o.terminal && in_flight == o.in_flight;
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [id, counts] : per_detector) {
    nlohmann::json c = {{"AutoBlock", 0}, {"ManualReview", 0}, {"Pass", 0}};
    for (const auto& [d, n] : counts) c[std::string(to_string(d))] = n;
    per[id] = c;
  }
  nlohmann::json term = nlohmann::json::object();
  for (ImageState s : kAllImageStates) {
    if (s == ImageState::Pending) continue;
    auto it = terminal.find(s);
    term[std::string(to_string(s))] = it == terminal.end() ? 0 : it->second;
  }
  return {{"images_in", images_in},
          {"rejected", rejected},
          {"rejected_by_reason", rejected_by_reason},
          {"routed_rest", routed_rest},
          {"unknown_category", unknown_category},
          {"l2_invocations", l2_invocations},
          {"routing_expected", routing_expected},
          {"all_detectors_baseline", all_detectors_baseline},
          {"reduction", reduction()},
          {"l2_executions", l2_executions},
          {"deliveries", deliveries},
          {"per_detector", per},
          {"terminal", term},
          {"terminal_total", terminal_total()},
          {"in_flight", in_flight},
          {"balanced", balanced()},
          {"crashed", crashed}};
}

std::map<std::string, ImageState> fold_states(std::span<const nlohmann::json> events) {
  std::map<std::string, ImageState> out;
  for (const auto& e : events) {
    const auto type = e.value("type", std::string{});
    if (type == "state" || type == "review") {
      out[e.at("image_id").get<std::string>()] = parse_image_state(e.at("to").get<std::string>());
    }
  }
  return out;
}

RunReport fold_events(std::span<const nlohmann::json> events, std::size_t detector_count) {
  std::set<std::string> ingested;
  std::map<std::string, std::string> rejected;
  std::map<std::string, std::size_t> routed;
  std::map<std::pair<std::string, std::string>, Decision> verdicts;
  RunReport r;
  std::set<std::string> unknown;
  for (const auto& e : events) {
    const auto type = e.value("type", std::string{});
    if (type == "ingest") {
      ingested.insert(e.at("image_id").get<std::string>());
    } else if (type == "rejected") {
      rejected.emplace(e.at("image_id").get<std::string>(), e.at("reason").get<std::string>());
    } else if (type == "routed") {
      const auto id = e.at("image_id").get<std::string>();
      routed[id] = e.at("detectors").size();
      if (e.value("unknown_category", false)) unknown.insert(id);
    } else if (type == "verdict") {
      const auto v = verdict_from_json(e.at("verdict"));
      verdicts.emplace(v.idempotency_key(), v.decision);
    }
  }
  const auto states = fold_states(events);

  r.images_in = ingested.size();
  r.rejected = rejected.size();
  for (const auto& [_, reason] : rejected) ++r.rejected_by_reason[reason];
  for (const auto& [_, n] : routed) {
    if (n == 0) ++r.routed_rest;
    r.routing_expected += n;
  }
  r.unknown_category = unknown.size();
  r.l2_invocations = verdicts.size();
  for (const auto& [key, d] : verdicts) ++r.per_detector[key.second][d];
  for (const auto& id : ingested) {
    if (rejected.count(id)) continue;
    auto it = states.find(id);
    if (it == states.end() || it->second == ImageState::Pending) {
      ++r.in_flight;
    } else {
      ++r.terminal[it->second];
    }
  }
  r.all_detectors_baseline = (r.images_in - r.rejected) * detector_count;
  return r;
}

// --- pipeline ----------------------------------------------------------------

ModerationPipeline::ModerationPipeline(std::filesystem::path state_dir, CatalogStore& catalog, RoutingTable table,
                                       const DetectorRegistry& registry, ThresholdPolicy policy,
                                       PipelineOptions options)
    : dir_(std::move(state_dir)),
      catalog_(catalog),
      table_(std::move(table)),
      registry_(registry),
      policy_(std::move(policy)),
      options_(std::move(options)) {
  const auto missing = table_.unknown_detectors(registry_);
  if (!missing.empty()) {
    std::string ids;
    for (const auto& id : missing) ids += (ids.empty() ? "" : ", ") + id;
    throw Error(ErrorKind::ConfigError, "routing table references unregistered detectors: " + ids);
  }
  policy_.validate();
  if (options_.workers == 0) throw Error(ErrorKind::InvalidConfig, "workers must be at least 1");
  if (options_.l1.mode == L1Mode::NearestCentroid && options_.l1.centroids.empty()) {
    throw Error(ErrorKind::NotFitted, "nearest-centroid L1 classifier has no centroids");
  }

  std::filesystem::create_directories(dir_ / "queues");
  events_ = std::make_unique<EventLog>(events_path());
  ingest_q_ = std::make_unique<DurableQueue>("ingest", dir_ / "queues" / "ingest.log");
  post_q_ = std::make_unique<DurableQueue>("post", dir_ / "queues" / "post.log");
  for (const auto& [_, dets] : table_.entries()) {
    for (const auto& id : dets) {
      if (detector_qs_.count(id)) continue;
      const std::string name = "det." + id;
      detector_qs_[id] = std::make_unique<DurableQueue>(name, dir_ / "queues" / (name + ".log"));
    }
  }
  std::int64_t outstanding = static_cast<std::int64_t>(ingest_q_->outstanding() + post_q_->outstanding());
  for (const auto& [_, q] : detector_qs_) outstanding += static_cast<std::int64_t>(q->outstanding());
  outstanding_ = outstanding;
  replay();
}

ModerationPipeline::~ModerationPipeline() = default;

void ModerationPipeline::replay() {
  for (const auto& e : EventLog::read(events_path())) {
    const auto type = e.value("type", std::string{});
    if (type == "ingest") {
      ingested_.insert(e.at("image_id").get<std::string>());
    } else if (type == "rejected") {
      rejected_.emplace(e.at("image_id").get<std::string>(),
                        Rejection{parse_rejection_reason(e.at("reason").get<std::string>()),
                                  e.value("detail", std::string{})});
    } else if (type == "routed") {
      Routed r{e.at("category").get<std::string>(), e.at("detectors").get<std::set<std::string>>()};
      routed_[e.at("image_id").get<std::string>()] = std::move(r);
    } else if (type == "verdict") {
      auto v = verdict_from_json(e.at("verdict"));
      auto key = v.idempotency_key();
      verdicts_.emplace(std::move(key), std::move(v));
    } else if (type == "state" || type == "review") {
      const auto id = e.at("image_id").get<std::string>();
      const auto from = parse_image_state(e.at("from").get<std::string>());
      const auto to = parse_image_state(e.at("to").get<std::string>());
      if (catalog_.contains(id)) catalog_.compare_and_set(id, from, to);
      if (type == "review") reviewed_[id] = parse_review_action(e.at("action").get<std::string>());
    }
  }
}

void ModerationPipeline::publish(DurableQueue& queue, const std::string& payload) {
  ++outstanding_;
  queue.publish(payload);
}

bool ModerationPipeline::ingest(const std::string& image_id) {
  if (!catalog_.contains(image_id)) throw Error(ErrorKind::NotFound, "no image '" + image_id + "' in catalog");
  {
    std::unique_lock lock(state_mutex_);
    if (!ingested_.insert(image_id).second) return false;
  }
  publish(*ingest_q_, image_payload(image_id));
  events_->append({{"type", "ingest"}, {"image_id", image_id}});
  return true;
}

RunReport ModerationPipeline::run() {
  for (const auto& id : catalog_.ids_in_state(ImageState::Pending)) ingest(id);
  return drain();
}

bool ModerationPipeline::transition(const std::string& image_id, ImageState from, ImageState to) {
  std::lock_guard lock(transition_mutex_);
  if (!catalog_.compare_and_set(image_id, from, to)) return false;
  events_->append({{"type", "state"},
                   {"image_id", image_id},
                   {"from", std::string(to_string(from))},
                   {"to", std::string(to_string(to))}});
  return true;
}

void ModerationPipeline::handle_ingest(const QueueMessage& msg) {
  const auto id = nlohmann::json::parse(msg.payload).at("image_id").get<std::string>();
  const auto image = catalog_.get(id);
  if (!image || image->state != ImageState::Pending) return;

  std::optional<Routed> previous;
  {
    std::shared_lock lock(state_mutex_);
    if (rejected_.count(id)) return;
    if (auto it = routed_.find(id); it != routed_.end()) previous = it->second;
  }
  if (previous) {
    // Detector messages were published before the routed event was written.
    if (previous->detectors.empty()) transition(id, ImageState::Pending, ImageState::Published);
    return;
  }

  if (auto rejection = prevalidate(*image, options_.limits)) {
    {
      std::unique_lock lock(state_mutex_);
      if (!rejected_.emplace(id, *rejection).second) return;
    }
    events_->append({{"type", "rejected"},
                     {"image_id", id},
                     {"reason", std::string(to_string(rejection->reason))},
                     {"detail", rejection->detail}});
    return;
  }

  Routed r;
  r.category = l1_classify(options_.l1, *image, table_);
  r.detectors = route(table_, r.category);
  const bool unknown = !table_.has_category(image->category) && options_.l1.mode == L1Mode::MetadataTrusted;
  // In memory before publishing, so a post message can never miss the route.
  // The durable routed event comes after the publishes: on replay a missing
  // event means the ingest message is redelivered and routed again.
  {
    std::unique_lock lock(state_mutex_);
    routed_.emplace(id, r);
  }
  for (const auto& det : r.detectors) {
    publish(*detector_qs_.at(det),
            nlohmann::json{{"image_id", id}, {"detector_id", det}, {"category", r.category}}.dump());
  }
  events_->append({{"type", "routed"},
                   {"image_id", id},
                   {"category", r.category},
                   {"detectors", r.detectors},
                   {"unknown_category", unknown}});
  if (r.detectors.empty()) transition(id, ImageState::Pending, ImageState::Published);
}

void ModerationPipeline::handle_detector(const std::string& detector_id, const QueueMessage& msg) {
  const auto payload = nlohmann::json::parse(msg.payload);
  const auto id = payload.at("image_id").get<std::string>();
  const auto category = payload.at("category").get<std::string>();
  const std::pair<std::string, std::string> key{id, detector_id};
  bool have = false;
  {
    std::shared_lock lock(state_mutex_);
    have = verdicts_.count(key) != 0;
  }
  if (!have) {
    const auto image = catalog_.get(id);
    if (!image) return;
    const auto detector = registry_.find(detector_id);
    const DetectorOutput out = detector->detect(image->pixels);
    ++executions_;

    DetectionVerdict v;
    v.image_id = id;
    v.detector_id = detector_id;
    v.category = category;
    v.confidence = out.confidence;
    v.boxes = out.boxes;
    v.decision = decide(out.confidence, policy_, detector_id, category);
    v.timestamp_ms = now_ms();

    bool inserted = false;
    {
      std::unique_lock lock(state_mutex_);
      if (!verdicts_.count(key)) {
        events_->append({{"type", "verdict"}, {"verdict", verdict_json(v)}});
        verdicts_.emplace(key, std::move(v));
        inserted = true;
      }
    }
    if (inserted) {
      const std::size_t n = ++new_verdicts_;
      if (options_.faults.crash_after_verdicts && n == *options_.faults.crash_after_verdicts) {
        throw SimulatedCrash("injected crash after verdict " + std::to_string(n));
      }
    }
  }
  publish(*post_q_, image_payload(id));
}

void ModerationPipeline::handle_post(const QueueMessage& msg) {
  const auto id = nlohmann::json::parse(msg.payload).at("image_id").get<std::string>();
  if (catalog_.state(id) != ImageState::Pending) return;
  std::vector<Decision> decisions;
  {
    std::shared_lock lock(state_mutex_);
    auto it = routed_.find(id);
    if (it == routed_.end()) return;
    for (const auto& det : it->second.detectors) {
      auto v = verdicts_.find({id, det});
      if (v == verdicts_.end()) return;
      decisions.push_back(v->second.decision);
    }
  }
  transition(id, ImageState::Pending, terminal_state_for(fold_decisions(decisions)));
}

bool ModerationPipeline::step() {
  auto handle = [this](DurableQueue& q, auto&& fn) {
    auto msg = q.poll();
    if (!msg) return false;
    try {
      fn(*msg);
    } catch (...) {
      q.nack(msg->seq);
      throw;
    }
    const std::size_t n = ++handled_;
    if (options_.faults.redeliver_every != 0 && n % options_.faults.redeliver_every == 0) {
      q.nack(msg->seq);
    } else {
      q.ack(msg->seq);
      --outstanding_;
    }
    return true;
  };
  // Downstream first so in-flight images finish before new ones start.
  if (handle(*post_q_, [this](const QueueMessage& m) { handle_post(m); })) return true;
  for (auto& [id, q] : detector_qs_) {
    const std::string& det = id;
    if (handle(*q, [this, &det](const QueueMessage& m) { handle_detector(det, m); })) return true;
  }
  return handle(*ingest_q_, [this](const QueueMessage& m) { handle_ingest(m); });
}

RunReport ModerationPipeline::drain() {
  std::lock_guard run_lock(run_mutex_);
  if (crashed_) throw Error(ErrorKind::IoError, "pipeline crashed; reopen the state directory to resume");
  stop_ = false;
  std::mutex failure_mutex;
  std::exception_ptr failure;

  auto worker = [&] {
    while (!stop_) {
      bool worked = false;
      try {
        worked = step();
      } catch (const SimulatedCrash&) {
        crashed_ = true;
        stop_ = true;
        return;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        stop_ = true;
        return;
      }
      if (!worked) {
        if (outstanding_ <= 0) return;
        std::this_thread::sleep_for(std::chrono::microseconds(200));
      }
    }
  };

  if (options_.workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(options_.workers);
    for (unsigned i = 0; i < options_.workers; ++i) threads.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return report();
}

ReviewOutcome ModerationPipeline::apply_review_decision(const std::string& image_id, ReviewAction action) {
  std::lock_guard lock(transition_mutex_);
  const auto state = catalog_.state(image_id);
  if (!state) throw Error(ErrorKind::NotFound, "no image '" + image_id + "' in catalog");
  const ImageState target = action == ReviewAction::Accept ? ImageState::ReviewAccepted : ImageState::ReviewRejected;
  if (*state == ImageState::UnderReview) {
    catalog_.compare_and_set(image_id, ImageState::UnderReview, target);
    events_->append({{"type", "review"},
                     {"image_id", image_id},
                     {"action", std::string(to_string(action))},
                     {"from", std::string(to_string(ImageState::UnderReview))},
                     {"to", std::string(to_string(target))}});
    std::unique_lock state_lock(state_mutex_);
    reviewed_[image_id] = action;
    return {target, false};
  }
  {
    std::shared_lock state_lock(state_mutex_);
    auto it = reviewed_.find(image_id);
    if (it != reviewed_.end() && it->second == action && *state == target) return {target, true};
  }
  throw Error(ErrorKind::IllegalTransition, "image '" + image_id + "' is " + std::string(to_string(*state)) +
                                                ", not UnderReview");
}

std::vector<DetectionVerdict> ModerationPipeline::verdicts() const {
  std::shared_lock lock(state_mutex_);
  std::vector<DetectionVerdict> out;
  out.reserve(verdicts_.size());
  for (const auto& [_, v] : verdicts_) out.push_back(v);
  return out;
}

std::vector<DetectionVerdict> ModerationPipeline::verdicts_for(const std::string& image_id) const {
  std::shared_lock lock(state_mutex_);
  std::vector<DetectionVerdict> out;
  for (auto it = verdicts_.lower_bound({image_id, std::string{}}); it != verdicts_.end() && it->first.first == image_id;
       ++it) {
    out.push_back(it->second);
  }
  return out;
}

std::optional<std::string> ModerationPipeline::routed_category(const std::string& image_id) const {
  std::shared_lock lock(state_mutex_);
  auto it = routed_.find(image_id);
  if (it == routed_.end()) return std::nullopt;
  return it->second.category;
}

std::optional<Rejection> ModerationPipeline::rejection_for(const std::string& image_id) const {
  std::shared_lock lock(state_mutex_);
  auto it = rejected_.find(image_id);
  if (it == rejected_.end()) return std::nullopt;
  return it->second;
}

RunReport ModerationPipeline::report() const {
  const auto events = EventLog::read(events_path());
  RunReport r = fold_events(events, registry_.size());
  r.l2_executions = executions_;
  r.deliveries = handled_;
  r.crashed = crashed_;
  return r;
}

}  // namespace modgate
