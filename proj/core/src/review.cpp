#include "modgate/review.hpp"

#include <algorithm>
#include <chrono>
#include <nlohmann/json.hpp>

#include "modgate/error.hpp"
#include "modgate/png_io.hpp"

namespace modgate {

namespace {

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

nlohmann::json boxes_json(const std::vector<ScoredBox>& boxes) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : boxes) {
    out.push_back({{"box", {b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max}},
                   {"class", b.box.class_label},
                   {"score", b.score}});
  }
  return out;
}

std::vector<ScoredBox> boxes_from_json(const nlohmann::json& j) {
  std::vector<ScoredBox> out;
  for (const auto& b : j) {
    const auto& a = b.at("box");
    out.push_back({BoundingBox{a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>(), a.at(3).get<int>(),
                               b.value("class", std::string{})},
                   b.value("score", 0.0)});
  }
  return out;
}

std::string task_id_for(std::uint64_t n) {
  std::string digits = std::to_string(n);
  if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
  return "task-" + digits;
}

}  // namespace

std::string_view to_string(TaskStatus status) { return status == TaskStatus::Open ? "open" : "decided"; }

std::string_view to_string(ReviewVerdict verdict) {
  return verdict == ReviewVerdict::ConfirmNonCompliant ? "ConfirmNonCompliant" : "RejectFlag";
}

TaskStatus parse_task_status(std::string_view text) {
  if (text == "open") return TaskStatus::Open;
  if (text == "decided") return TaskStatus::Decided;
  throw Error(ErrorKind::DecodeError, "unknown task status '" + std::string(text) + "'");
}

ReviewVerdict parse_review_verdict(std::string_view text) {
  if (text == "ConfirmNonCompliant") return ReviewVerdict::ConfirmNonCompliant;
  if (text == "RejectFlag") return ReviewVerdict::RejectFlag;
  throw Error(ErrorKind::DecodeError, "unknown review verdict '" + std::string(text) + "'");
}

nlohmann::json task_json(const ReviewTask& t) {
  return {{"task_id", t.task_id},       {"image_id", t.image_id},
          {"detector_id", t.detector_id}, {"category", t.category},
          {"confidence", t.confidence}, {"boxes", boxes_json(t.boxes)},
          {"status", std::string(to_string(t.status))}, {"created_at_ms", t.created_at_ms}};
}

ReviewTask task_from_json(const nlohmann::json& j) {
  ReviewTask t;
  t.task_id = j.at("task_id").get<std::string>();
  t.image_id = j.at("image_id").get<std::string>();
  t.detector_id = j.at("detector_id").get<std::string>();
  t.category = j.value("category", std::string{});
  t.confidence = j.at("confidence").get<double>();
  t.boxes = boxes_from_json(j.value("boxes", nlohmann::json::array()));
  t.status = parse_task_status(j.value("status", std::string("open")));
  t.created_at_ms = j.value("created_at_ms", std::int64_t{0});
  return t;
}

nlohmann::json decision_json(const ReviewDecision& d) {
  return {{"task_id", d.task_id},
          {"verdict", std::string(to_string(d.verdict))},
          {"reviewer_id", d.reviewer_id},
          {"decided_at_ms", d.decided_at_ms}};
}

ReviewDecision decision_from_json(const nlohmann::json& j) {
  return {j.at("task_id").get<std::string>(), parse_review_verdict(j.at("verdict").get<std::string>()),
          j.value("reviewer_id", std::string{}), j.value("decided_at_ms", std::int64_t{0})};
}

std::vector<ReviewTask> select_for_review(std::span<const DetectionVerdict> verdicts, std::size_t budget,
                                          double floor,
                                          const std::set<std::pair<std::string, std::string>>& exclude) {
  std::vector<const DetectionVerdict*> eligible;
  std::set<std::pair<std::string, std::string>> seen = exclude;
  for (const auto& v : verdicts) {
    if (v.decision != Decision::ManualReview || v.confidence < floor) continue;
    eligible.push_back(&v);
  }
  std::sort(eligible.begin(), eligible.end(), [](const DetectionVerdict* a, const DetectionVerdict* b) {
    if (a->confidence != b->confidence) return a->confidence > b->confidence;
    if (a->image_id != b->image_id) return a->image_id < b->image_id;
    return a->detector_id < b->detector_id;
  });
  std::vector<ReviewTask> out;
  for (const auto* v : eligible) {
    if (out.size() >= budget) break;
    if (!seen.insert({v->image_id, v->detector_id}).second) continue;
    ReviewTask t;
    t.image_id = v->image_id;
    t.detector_id = v->detector_id;
    t.category = v->category;
    t.confidence = v->confidence;
    t.boxes = v->boxes;
    out.push_back(std::move(t));
  }
  return out;
}

double labeling_roi(std::span<const ReviewDecision> decided) {
  if (decided.empty()) throw Error(ErrorKind::Undefined, "labeling ROI of zero decisions is undefined");
  const auto confirmed = std::count_if(decided.begin(), decided.end(), [](const ReviewDecision& d) {
    return d.verdict == ReviewVerdict::ConfirmNonCompliant;
  });
  return static_cast<double>(confirmed) / static_cast<double>(decided.size());
}

// --- labeled store -----------------------------------------------------------

LabeledStore::LabeledStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(*dir_ / "images");
  const auto log_path = *dir_ / "labeled.jsonl";
  for (const auto& e : EventLog::read(log_path)) {
    LabeledEntry entry;
    entry.task_id = e.at("task_id").get<std::string>();
    entry.detector_id = e.at("detector_id").get<std::string>();
    entry.reviewer_id = e.value("reviewer_id", std::string{});
    entry.decided_at_ms = e.value("decided_at_ms", std::int64_t{0});
    entry.sample.image = load_image(*dir_ / e.at("image_path").get<std::string>());
    entry.sample.image.category = e.value("category", std::string{});
    entry.sample.label = parse_sample_label(e.at("label").get<std::string>());
    for (const auto& b : boxes_from_json(e.at("boxes"))) entry.sample.boxes.push_back(b.box);
    entry.sample.provenance = Provenance::CrowdVerified;
    entries_.push_back(std::move(entry));
  }
  log_ = std::make_unique<EventLog>(log_path);
}

void LabeledStore::append(LabeledEntry entry) {
  entry.sample.provenance = Provenance::CrowdVerified;
  std::unique_lock lock(mutex_);
  if (dir_) {
    const std::string rel = "images/" + entry.sample.image.image_id + ".png";
    if (!std::filesystem::exists(*dir_ / rel)) save_image(entry.sample.image, *dir_ / rel);
    std::vector<ScoredBox> boxes;
    for (const auto& b : entry.sample.boxes) boxes.push_back({b, 1.0});
    log_->append({{"task_id", entry.task_id},
                  {"image_id", entry.sample.image.image_id},
                  {"detector_id", entry.detector_id},
                  {"reviewer_id", entry.reviewer_id},
                  {"decided_at_ms", entry.decided_at_ms},
                  {"category", entry.sample.image.category},
                  {"label", std::string(to_string(entry.sample.label))},
                  {"provenance", std::string(to_string(entry.sample.provenance))},
                  {"boxes", boxes_json(boxes)},
                  {"image_path", rel}});
  }
  entries_.push_back(std::move(entry));
}

std::size_t LabeledStore::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::vector<LabeledEntry> LabeledStore::entries() const {
  std::shared_lock lock(mutex_);
  return entries_;
}

// --- stats -------------------------------------------------------------------

nlohmann::json ReviewStats::to_json() const {
  auto roi_json = [](const std::optional<double>& r) { return r ? nlohmann::json(*r) : nlohmann::json(nullptr); };
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [cat, c] : per_category) {
    cats[cat] = {{"decided", c.decided}, {"confirmed", c.confirmed}, {"rejected", c.rejected}, {"roi", roi_json(c.roi)}};
  }
  return {{"open", open},           {"decided", decided}, {"confirmed", confirmed}, {"rejected", rejected},
          {"labeled", labeled},     {"roi", roi_json(roi)}, {"per_category", cats}};
}

// --- service -----------------------------------------------------------------

ReviewService::ReviewService(CatalogStore& catalog, ModerationPipeline* pipeline,
                             std::optional<std::filesystem::path> dir)
    : catalog_(catalog), pipeline_(pipeline), labeled_(dir ? LabeledStore(*dir / "labeled") : LabeledStore()) {
  if (!dir) return;
  std::filesystem::create_directories(*dir);
  const auto path = *dir / "tasks.jsonl";
  for (const auto& e : EventLog::read(path)) {
    const auto type = e.at("type").get<std::string>();
    if (type == "task") {
      auto t = task_from_json(e.at("task"));
      tasked_pairs_.insert({t.image_id, t.detector_id});
      const std::uint64_t n = std::stoull(t.task_id.substr(5));
      next_task_ = std::max(next_task_, n + 1);
      tasks_[t.task_id] = std::move(t);
    } else if (type == "decision") {
      auto d = decision_from_json(e.at("decision"));
      auto& t = tasks_.at(d.task_id);
      t.status = TaskStatus::Decided;
      decisions_[d.task_id] = std::move(d);
    }
  }
  log_ = std::make_unique<EventLog>(path);
}

std::vector<ReviewTask> ReviewService::open_tasks(std::span<const DetectionVerdict> verdicts, std::size_t budget,
                                                  double floor) {
  std::unique_lock lock(mutex_);
  auto selected = select_for_review(verdicts, budget, floor, tasked_pairs_);
  const auto created = now_ms();
  for (auto& t : selected) {
    t.task_id = task_id_for(next_task_++);
    t.created_at_ms = created;
    tasked_pairs_.insert({t.image_id, t.detector_id});
    if (log_) log_->append({{"type", "task"}, {"task", task_json(t)}});
    tasks_[t.task_id] = t;
  }
  return selected;
}

std::vector<ReviewTask> ReviewService::select(std::size_t budget, double floor) {
  if (pipeline_ == nullptr) throw Error(ErrorKind::InvalidConfig, "review service has no pipeline");
  const auto verdicts = pipeline_->verdicts();
  return open_tasks(verdicts, budget, floor);
}

ReviewTask ReviewService::task(const std::string& task_id) const {
  std::shared_lock lock(mutex_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw Error(ErrorKind::NotFound, "no task '" + task_id + "'");
  return it->second;
}

std::vector<ReviewTask> ReviewService::tasks(std::optional<TaskStatus> status) const {
  std::shared_lock lock(mutex_);
  std::vector<ReviewTask> out;
  for (const auto& [_, t] : tasks_) {
    if (!status || t.status == *status) out.push_back(t);
  }
  return out;
}

std::vector<ReviewDecision> ReviewService::decisions() const {
  std::shared_lock lock(mutex_);
  std::vector<ReviewDecision> out;
  for (const auto& [_, d] : decisions_) out.push_back(d);
  return out;
}

SubmitResult ReviewService::submit_decision(const std::string& task_id, ReviewVerdict verdict,
                                            const std::string& reviewer_id) {
  ReviewTask t;
  SubmitResult result;
  {
    std::unique_lock lock(mutex_);
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) throw Error(ErrorKind::NotFound, "no task '" + task_id + "'");
    if (it->second.status == TaskStatus::Decided) {
      throw Error(ErrorKind::DuplicateDecision, "task '" + task_id + "' is already decided");
    }
    it->second.status = TaskStatus::Decided;
    result.decision = ReviewDecision{task_id, verdict, reviewer_id, now_ms()};
    decisions_[task_id] = result.decision;
    if (log_) log_->append({{"type", "decision"}, {"decision", decision_json(result.decision)}});
    t = it->second;
  }

  if (auto image = catalog_.get(t.image_id)) {
    LabeledEntry entry;
    entry.sample.image = *image;
    entry.sample.label =
        verdict == ReviewVerdict::ConfirmNonCompliant ? SampleLabel::NonCompliant : SampleLabel::Compliant;
    if (verdict == ReviewVerdict::ConfirmNonCompliant) {
      for (const auto& b : t.boxes) entry.sample.boxes.push_back(b.box);
    }
    entry.task_id = task_id;
    entry.detector_id = t.detector_id;
    entry.reviewer_id = reviewer_id;
    entry.decided_at_ms = result.decision.decided_at_ms;
    labeled_.append(std::move(entry));
  }

  if (pipeline_ != nullptr && catalog_.contains(t.image_id)) {
    const auto action = verdict == ReviewVerdict::ConfirmNonCompliant ? ReviewAction::Reject : ReviewAction::Accept;
    try {
      const auto outcome = pipeline_->apply_review_decision(t.image_id, action);
      result.state_changed = !outcome.duplicate;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::IllegalTransition) throw;
    }
  }
  result.image_state = catalog_.state(t.image_id);
  return result;
}

ReviewStats ReviewService::stats() const {
  std::shared_lock lock(mutex_);
  ReviewStats s;
  for (const auto& [id, t] : tasks_) {
    if (t.status == TaskStatus::Open) {
      ++s.open;
      continue;
    }
    const auto& d = decisions_.at(id);
    auto& c = s.per_category[t.category];
    ++s.decided;
    ++c.decided;
    if (d.verdict == ReviewVerdict::ConfirmNonCompliant) {
      ++s.confirmed;
      ++c.confirmed;
    } else {
      ++s.rejected;
      ++c.rejected;
    }
  }
  if (s.decided > 0) s.roi = static_cast<double>(s.confirmed) / static_cast<double>(s.decided);
  for (auto& [_, c] : s.per_category) c.roi = static_cast<double>(c.confirmed) / static_cast<double>(c.decided);
  s.labeled = labeled_.size();
  return s;
}

}  // namespace modgate
