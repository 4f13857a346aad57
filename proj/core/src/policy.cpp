#include "modgate/policy.hpp"

#include <nlohmann/json.hpp>
#include <sstream>

#include "modgate/error.hpp"

namespace modgate {

std::string_view to_string(Decision decision) {
  switch (decision) {
    case Decision::AutoBlock: return "AutoBlock";
    case Decision::ManualReview: return "ManualReview";
    case Decision::Pass: return "Pass";
  }
  return "Pass";
}

Decision parse_decision(std::string_view text) {
  if (text == "AutoBlock") return Decision::AutoBlock;
  if (text == "ManualReview") return Decision::ManualReview;
  if (text == "Pass") return Decision::Pass;
  throw Error(ErrorKind::DecodeError, "unknown decision '" + std::string(text) + "'");
}

Decision strongest(Decision a, Decision b) noexcept {
  if (a == Decision::AutoBlock || b == Decision::AutoBlock) return Decision::AutoBlock;
  if (a == Decision::ManualReview || b == Decision::ManualReview) return Decision::ManualReview;
  return Decision::Pass;
}

Thresholds ThresholdPolicy::effective(const std::string& detector_id, const std::string& category) const {
  Thresholds t = global_;
  if (auto it = detectors_.find(detector_id); it != detectors_.end()) {
    if (it->second.t_block) t.t_block = *it->second.t_block;
    if (it->second.t_review) t.t_review = *it->second.t_review;
  }
  if (auto it = categories_.find({detector_id, category}); it != categories_.end()) {
    if (it->second.t_block) t.t_block = *it->second.t_block;
    if (it->second.t_review) t.t_review = *it->second.t_review;
  }
  return t;
}

std::vector<std::string> ThresholdPolicy::violations() const {
  std::vector<std::string> out;
  auto check = [&out](const std::string& where, Thresholds t) {
    if (!(t.t_block >= 0.0 && t.t_block <= 1.0)) out.push_back(where + ": t_block outside [0, 1]");
    if (!(t.t_review >= 0.0 && t.t_review <= 1.0)) out.push_back(where + ": t_review outside [0, 1]");
    if (t.t_review > t.t_block) {
      std::ostringstream msg;
      msg << where << ": t_review " << t.t_review << " > t_block " << t.t_block;
      out.push_back(msg.str());
    }
  };
  check("global", global_);
  for (const auto& [id, _] : detectors_) check("detector " + id, effective(id, {}));
  for (const auto& [key, _] : categories_) {
    check("detector " + key.first + " category " + key.second, effective(key.first, key.second));
  }
  return out;
}

void ThresholdPolicy::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg;
  for (const auto& line : v) msg += (msg.empty() ? "" : "; ") + line;
  throw Error(ErrorKind::InvalidConfig, msg);
}

namespace {

ThresholdOverride override_from_json(const nlohmann::json& j) {
  ThresholdOverride o;
  if (j.contains("t_block")) o.t_block = j.at("t_block").get<double>();
  if (j.contains("t_review")) o.t_review = j.at("t_review").get<double>();
  return o;
}

nlohmann::json override_to_json(const ThresholdOverride& o) {
  nlohmann::json j = nlohmann::json::object();
  if (o.t_block) j["t_block"] = *o.t_block;
  if (o.t_review) j["t_review"] = *o.t_review;
  return j;
}

}  // namespace

ThresholdPolicy ThresholdPolicy::from_json(const nlohmann::json& j) {
  ThresholdPolicy p;
  if (j.contains("global")) {
    const auto& g = j.at("global");
    p.global_.t_block = g.value("t_block", p.global_.t_block);
    p.global_.t_review = g.value("t_review", p.global_.t_review);
  }
  if (j.contains("detectors")) {
    for (const auto& [id, o] : j.at("detectors").items()) p.detectors_[id] = override_from_json(o);
  }
  if (j.contains("categories")) {
    for (const auto& [id, cats] : j.at("categories").items()) {
      for (const auto& [cat, o] : cats.items()) p.categories_[{id, cat}] = override_from_json(o);
    }
  }
  p.validate();
  return p;
}

nlohmann::json ThresholdPolicy::to_json() const {
  nlohmann::json j{{"global", {{"t_block", global_.t_block}, {"t_review", global_.t_review}}},
                   {"detectors", nlohmann::json::object()},
                   {"categories", nlohmann::json::object()}};
  for (const auto& [id, o] : detectors_) j["detectors"][id] = override_to_json(o);
  for (const auto& [key, o] : categories_) j["categories"][key.first][key.second] = override_to_json(o);
  return j;
}

Decision decide(double confidence, const ThresholdPolicy& policy, const std::string& detector_id,
                const std::string& category) {
  const Thresholds t = policy.effective(detector_id, category);
  if (confidence >= t.t_block) return Decision::AutoBlock;
  if (confidence >= t.t_review) return Decision::ManualReview;
  return Decision::Pass;
}

}  // namespace modgate
