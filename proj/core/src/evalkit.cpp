#include "modgate/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "modgate/error.hpp"

namespace modgate {

double f1_from_pr(double precision, double recall) noexcept {
  const double denom = precision + recall;
  return denom == 0.0 ? 0.0 : 2.0 * precision * recall / denom;
}

Prf1 prf1(const ConfusionCounts& c) noexcept {
  Prf1 out;
  if (c.tp + c.fp > 0) out.precision = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) out.recall = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  out.f1 = f1_from_pr(out.precision, out.recall);
  return out;
}

namespace {

struct Sweep {
  std::vector<double> thresholds;  // distinct scores, descending
  std::vector<std::uint64_t> tp;   // positives with score >= threshold
  std::vector<std::uint64_t> fp;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
};

Sweep sweep(std::span<const ScoredLabel> scores) {
  std::vector<ScoredLabel> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const ScoredLabel& a, const ScoredLabel& b) { return a.score > b.score; });
  Sweep s;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    (sorted[i].truth ? tp : fp) += 1;
    if (i + 1 == sorted.size() || sorted[i + 1].score != sorted[i].score) {
      s.thresholds.push_back(sorted[i].score);
      s.tp.push_back(tp);
      s.fp.push_back(fp);
    }
  }
  s.positives = tp;
  s.negatives = fp;
  return s;
}

}  // namespace

RocCurve roc(std::span<const ScoredLabel> scores) {
  const Sweep s = sweep(scores);
  if (s.positives == 0 || s.negatives == 0) {
    throw Error(ErrorKind::DegenerateRoc, "ROC needs both positive and negative samples");
  }
  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    curve.points.push_back({static_cast<double>(s.fp[i]) / static_cast<double>(s.negatives),
                            static_cast<double>(s.tp[i]) / static_cast<double>(s.positives), s.thresholds[i]});
  }
  return curve;
}

double auc_trapezoid(const RocCurve& curve) noexcept {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return area;
}

double auc_mann_whitney(std::span<const ScoredLabel> scores) {
  std::vector<ScoredLabel> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const ScoredLabel& a, const ScoredLabel& b) { return a.score < b.score; });
  double rank_sum = 0.0;
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (sorted[k].truth) {
        rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::uint64_t negatives = sorted.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw Error(ErrorKind::DegenerateRoc, "AUC needs both positive and negative samples");
  }
  const double p = static_cast<double>(positives);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

ConfusionCounts counts_at(std::span<const ScoredLabel> scores, double threshold) noexcept {
  ConfusionCounts c;
  for (const auto& s : scores) {
    const bool predicted = s.score >= threshold;
    if (predicted && s.truth) ++c.tp;
    else if (predicted) ++c.fp;
    else if (s.truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

std::vector<F1Point> f1_curve(std::span<const ScoredLabel> scores) {
  const Sweep s = sweep(scores);
  std::vector<F1Point> out;
  out.reserve(s.thresholds.size());
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    ConfusionCounts c{s.tp[i], s.fp[i], s.negatives - s.fp[i], s.positives - s.tp[i]};
    const Prf1 m = prf1(c);
    out.push_back({s.thresholds[i], m.precision / 100.0, m.recall / 100.0, m.f1 / 100.0});
  }
  return out;
}

ConfusionCounts match_boxes(std::span<const ScoredBox> predicted, std::span<const BoundingBox> truth,
                            double iou_min) {
  if (!(iou_min > 0.0 && iou_min <= 1.0)) throw Error(ErrorKind::InvalidConfig, "iou_min must be in (0, 1]");
  std::vector<std::size_t> order(predicted.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return predicted[a].score > predicted[b].score; });
  std::vector<bool> matched(truth.size(), false);
  ConfusionCounts c;
  for (std::size_t p : order) {
    const auto& pb = predicted[p].box;
    double best = -1.0;
    std::size_t best_t = truth.size();
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (matched[t]) continue;
      if (!pb.class_label.empty() && !truth[t].class_label.empty() && pb.class_label != truth[t].class_label) {
        continue;
      }
      const double v = iou(pb, truth[t]);
      if (v > best) {
        best = v;
        best_t = t;
      }
    }
    if (best_t < truth.size() && best >= iou_min) {
      matched[best_t] = true;
      ++c.tp;
    } else {
      ++c.fp;
    }
  }
  c.fn = static_cast<std::uint64_t>(std::count(matched.begin(), matched.end(), false));
  return c;
}

FprBreakdown per_category_fpr(std::span<const ImageOutcome> outcomes) {
  FprBreakdown out;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  for (const auto& o : outcomes) {
    auto& c = out.per_category[o.category];
    if (o.truth) continue;
    if (o.predicted) {
      ++c.fp;
      ++fp;
    } else {
      ++c.tn;
      ++tn;
    }
  }
  for (auto& [_, c] : out.per_category) {
    if (c.fp + c.tn > 0) c.fpr = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
  }
  if (fp + tn > 0) out.overall = static_cast<double>(fp) / static_cast<double>(fp + tn);
  return out;
}

std::optional<F1Point> best_operating_point(std::span<const ScoredLabel> scores, const Objective& objective) {
  std::optional<F1Point> best;
  for (const auto& p : f1_curve(scores)) {
    if (p.recall == 0.0) continue;
    if (objective.kind == Objective::Kind::MaxF1) {
      if (!best || p.f1 > best->f1) best = p;
    } else {
      if (p.precision + 1e-12 < objective.min_precision) continue;
      if (!best || p.recall > best->recall) best = p;
    }
  }
  return best;
}

TuneResult tune_thresholds(const std::map<ScoreKey, std::vector<ScoredLabel>>& scores, const TuneOptions& options) {
  TuneResult result;
  result.policy.set_global({options.fallback.t_block, std::min(options.review_floor, options.fallback.t_block)});

  auto positives = [](std::span<const ScoredLabel> s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](const ScoredLabel& x) { return x.truth; }));
  };
  auto make_override = [&](double t_block) {
    return ThresholdOverride{t_block, std::min(options.review_floor, t_block)};
  };

  std::map<std::string, std::vector<ScoredLabel>> pooled;
  for (const auto& [key, s] : scores) pooled[key.first].insert(pooled[key.first].end(), s.begin(), s.end());

  for (const auto& [det, s] : pooled) {
    std::optional<F1Point> p;
    if (positives(s) >= options.min_positives) p = best_operating_point(s, options.objective);
    if (p) {
      result.policy.set_detector(det, make_override(p->threshold));
      result.chosen[{det, std::string{}}] = *p;
    } else {
      result.warnings.push_back({det, {}, "no usable operating point; detector keeps the global threshold"});
    }
  }
  for (const auto& [key, s] : scores) {
    std::optional<F1Point> p;
    if (positives(s) >= options.min_positives) p = best_operating_point(s, options.objective);
    if (p) {
      result.policy.set_category(key.first, key.second, make_override(p->threshold));
      result.chosen[key] = *p;
    } else {
      result.warnings.push_back(
          {key.first, key.second, "insufficient positives or no operating point; falling back to the detector threshold"});
    }
  }
  result.policy.validate();
  return result;
}

nlohmann::json counts_report(std::span<const NamedCounts> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    const Prf1 m = prf1(r.counts);
    out.push_back({{"name", r.name},
                   {"tp", r.counts.tp},
                   {"fp", r.counts.fp},
                   {"tn", r.counts.tn},
                   {"fn", r.counts.fn},
                   {"precision", m.precision},
                   {"recall", m.recall},
                   {"f1", m.f1}});
  }
  return {{"rows", out}};
}

nlohmann::json curve_report(std::span<const ScoredLabel> scores) {
  const auto pos = std::count_if(scores.begin(), scores.end(), [](const ScoredLabel& s) { return s.truth; });
  nlohmann::json out{{"samples", scores.size()},
                     {"positives", pos},
                     {"negatives", static_cast<std::int64_t>(scores.size()) - pos}};
  if (pos > 0 && static_cast<std::size_t>(pos) < scores.size()) {
    out["auc_trapezoid"] = auc_trapezoid(roc(scores));
    out["auc_mann_whitney"] = auc_mann_whitney(scores);
  } else {
    out["auc_trapezoid"] = nullptr;
    out["auc_mann_whitney"] = nullptr;
  }
  if (auto best = best_operating_point(scores, Objective::max_f1())) {
    out["best_f1"] = {{"threshold", best->threshold},
                      {"f1", best->f1},
                      {"precision", best->precision},
                      {"recall", best->recall}};
  } else {
    out["best_f1"] = nullptr;
  }
  return out;
}

void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.precision(17);
  out << "threshold,fpr,tpr\n";
  for (const auto& p : curve.points) {
    if (std::isinf(p.threshold)) out << "inf";
    else out << p.threshold;
    out << ',' << p.fpr << ',' << p.tpr << '\n';
  }
}

void write_f1_csv(const std::filesystem::path& path, std::span<const F1Point> curve) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.precision(17);
  out << "threshold,f1\n";
  for (const auto& p : curve) out << p.threshold << ',' << p.f1 << '\n';
}

}  // namespace modgate
