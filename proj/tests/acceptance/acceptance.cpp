// Acceptance runner: one [PASS]/[FAIL] line per criterion, exit 1 on any failure.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "modgate/error.hpp"
#include "modgate/evalkit.hpp"
#include "modgate/http_api.hpp"
#include "modgate/imageops.hpp"
#include "modgate/policy.hpp"
#include "modgate/review.hpp"
#include "modgate/rng.hpp"
#include "modgate/router.hpp"
#include "modgate/signature.hpp"
#include "modgate/synthgen.hpp"
#include "support.hpp"

using namespace modgate;
using namespace modgate::testing;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> check;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

const std::vector<std::string> kCategories{"apparel", "electronics", "home", "toys", "beauty"};
const std::vector<double> kScales{0.25, 0.375, 0.5};

std::vector<CatalogImage> corpus(std::size_t n, std::uint64_t seed) {
  return generate_corpus({n, {"apparel", "electronics", "home", "toys", "beauty", "rest"}, seed, 64, 64});
}

std::vector<synth::LogoAsset> logos() {
  return synth::generate_logos({{"acme", "zenith"}, 4, 2, 0.75, 64, 11});
}

std::vector<synth::LogoAsset> train_logos(const std::vector<synth::LogoAsset>& all, const std::string& cls) {
  std::vector<synth::LogoAsset> out;
  for (const auto& l : all) {
    if (l.class_label == cls && l.split == synth::Split::Train && l.compliance == synth::Compliance::NonCompliant) {
      out.push_back(l);
    }
  }
  return out;
}

/// Positives placed at exactly one of the detector scales, upright and unflipped.
std::vector<synth::SyntheticSample> exact_scale_set(const std::vector<CatalogImage>& bases,
                                                    const std::vector<synth::LogoAsset>& all,
                                                    const std::vector<std::size_t>& per_scale, std::uint64_t seed) {
  std::vector<synth::SyntheticSample> out;
  for (std::size_t i = 0; i < kScales.size(); ++i) {
    synth::DatasetSpec spec;
    spec.n_per_class = per_scale[i];
    spec.seed = seed + i;
    spec.transform = {kScales[i], kScales[i], 0.0, 0.0, 0.0, Resampling::Nearest};
    auto part = synth::generate_dataset(bases, all, spec);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

DetectorRegistry logo_registry(const std::vector<synth::LogoAsset>& all, bool with_skin) {
  DetectorRegistry registry;
  for (const std::string cls : {"acme", "zenith"}) {
    registry.add(std::shared_ptr<const Detector>(
        logo_detector_from_templates(train_logos(all, cls), kScales, "logo_" + cls, Resampling::Nearest)));
  }
  if (with_skin) registry.add(std::make_shared<SkinRatioDetector>("skin", "nudity"));
  return registry;
}

RoutingTable routing() {
  return RoutingTable::from_json(json::parse(R"({
    "apparel": ["logo_acme", "logo_zenith"],
    "electronics": ["logo_acme"],
    "home": ["logo_zenith"],
    "toys": ["logo_acme", "logo_zenith"],
    "beauty": ["skin"],
    "rest": []
  })"));
}

/// 200 images: plain corpus images and superimposed samples, 40% of them `rest`.
std::vector<CatalogImage> e2e_catalog(const std::vector<synth::LogoAsset>& all) {
  std::vector<CatalogImage> images = corpus(120, 31);
  const auto bases = corpus(40, 32);
  synth::DatasetSpec spec;
  spec.n_per_class = 20;
  spec.seed = 33;
  spec.transform.rotation_max_deg = 10.0;
  for (auto& s : synth::generate_dataset(bases, all, spec)) images.push_back(std::move(s.sample.image));
  for (std::size_t i = 0; i < images.size(); ++i) {
    images[i].image_id = "e2e-" + std::to_string(i);
    images[i].category = i % 5 < 2 ? std::string(kRestCategory) : kCategories[(i / 5) % kCategories.size()];
    images[i].state = ImageState::Pending;
  }
  return images;
}

std::map<std::string, ImageState> states_of(const CatalogStore& store) {
  std::map<std::string, ImageState> out;
  for (const auto& id : store.ids()) out[id] = *store.state(id);
  return out;
}

ThresholdPolicy e2e_policy() { return ThresholdPolicy(Thresholds{0.95, 0.75}); }

// --- criteria ------------------------------------------------------------------

Outcome f1_arithmetic() {
  const std::vector<std::array<double, 3>> rows{
      {100.00, 23.60, 38.19}, {38.67, 13.77, 20.30}, {49.80, 8.43, 14.42}, {47.71, 4.17, 7.66}, {45.55, 4.43, 8.08}};
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, std::abs(f1_from_pr(r[0], r[1]) - r[2]));
  return {worst <= 0.01, "max |F1 - published| = " + fmt(worst)};
}

Outcome annotation_exactness() {
  const auto bases = corpus(100, 41);
  const auto all = logos();
  synth::DatasetSpec spec;
  spec.n_per_class = 250;
  spec.seed = 42;
  spec.threads = 4;
  const auto samples = synth::generate_dataset(bases, all, spec);
  std::map<std::string, const CatalogImage*> base_by_id;
  for (const auto& b : bases) base_by_id[b.image_id] = &b;
  std::map<std::string, const synth::LogoAsset*> logo_by_id;
  for (const auto& l : all) logo_by_id[l.logo_id] = &l;
  std::size_t positives = 0, exact = 0;
  for (const auto& s : samples) {
    if (s.sample.label != SampleLabel::NonCompliant) continue;
    ++positives;
    const auto& t = *s.transform;
    const Raster warped = warp(logo_by_id.at(*s.logo_id)->pixels, t.warp(), spec.transform.resampling);
    const auto rec = recovered_box(base_by_id.at(s.base_id)->pixels, s.sample.image.pixels, warped, t.translate_x,
                                   t.translate_y);
    if (rec && s.sample.boxes.size() == 1 && rec->same_extent(s.sample.boxes[0])) ++exact;
  }
  return {samples.size() == 1000 && positives > 0 && exact == positives,
          std::to_string(exact) + "/" + std::to_string(positives) + " positives exact, " +
              std::to_string(samples.size()) + " samples"};
}

Outcome exact_match_detection() {
  const auto all = logos();
  const auto registry = logo_registry(all, false);
  auto score = [&](const std::vector<synth::SyntheticSample>& set, std::vector<ScoredLabel>& labels,
                   std::vector<std::optional<BoundingBox>>& boxes) {
    labels.assign(set.size(), {});
    boxes.assign(set.size(), std::nullopt);
    std::vector<std::jthread> pool;
    const unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < set.size(); i += threads) {
          const auto& s = set[i];
          double best = 0.0;
          for (const auto& id : registry.ids()) {
            const auto out = registry.find(id)->detect(s.sample.image.pixels);
            best = std::max(best, out.confidence);
            if (s.sample.label == SampleLabel::NonCompliant && id == "logo_" + s.class_label && !out.boxes.empty()) {
              boxes[i] = out.boxes[0].box;
            }
          }
          labels[i] = {best, s.sample.label == SampleLabel::NonCompliant};
        }
      });
    }
  };

  std::vector<ScoredLabel> tune_labels, labels;
  std::vector<std::optional<BoundingBox>> tune_boxes, boxes;
  score(exact_scale_set(corpus(60, 51), all, {17, 17, 16}, 510), tune_labels, tune_boxes);
  const auto point = best_operating_point(tune_labels, Objective::max_f1());
  if (!point) return {false, "no operating point on the tuning set"};

  const auto eval_set = exact_scale_set(corpus(150, 52), all, {42, 42, 41}, 520);
  score(eval_set, labels, boxes);
  const auto counts = counts_at(labels, point->threshold);
  const double f1 = prf1(counts).f1 / 100.0;
  std::size_t tight = 0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    if (!labels[i].truth || labels[i].score < point->threshold) continue;
    if (boxes[i] && iou(*boxes[i], eval_set[i].sample.boxes.at(0)) >= 0.9) ++tight;
  }
  const double tight_share = counts.tp ? static_cast<double>(tight) / static_cast<double>(counts.tp) : 0.0;
  return {eval_set.size() == 500 && f1 >= 0.95 && tight_share >= 0.99,
          "n=" + std::to_string(eval_set.size()) + " threshold=" + fmt(point->threshold) + " F1=" + fmt(f1) +
              " IoU>=0.9 share=" + fmt(tight_share)};
}

Outcome knn_equivalence() {
  const auto images = corpus(2000, 61);
  std::vector<Signature> sigs;
  for (const auto& img : images) sigs.push_back(compute_signature(img));
  SimilarityIndex index(fit_binarization(sigs));
  std::vector<std::pair<std::string, BinarySignature>> entries;
  for (std::size_t i = 0; i < images.size(); ++i) {
    entries.emplace_back(images[i].image_id, binarize(sigs[i], index.binarization()));
  }
  index.insert_batch(entries);
  const auto probes = corpus(50, 62);
  std::size_t equal = 0;
  for (const auto& p : probes) {
    const auto code = binarize(compute_signature(p), index.binarization());
    if (knn_query(index, p, 10) == knn_oracle(entries, code, 10)) ++equal;
  }
  return {equal == probes.size(), std::to_string(equal) + "/50 probes identical"};
}

Outcome routing_invariant() {
  const auto all = logos();
  const auto registry = logo_registry(all, true);
  const auto table = routing();
  const auto images = e2e_catalog(all);
  CatalogStore store(images);
  TempDir dir;
  PipelineOptions options;
  options.workers = 4;
  ModerationPipeline pipeline(dir.path(), store, table, registry, e2e_policy(), options);
  const auto report = pipeline.run();

  std::size_t rest_images = 0, expected = 0;
  std::set<std::string> rest_ids;
  for (const auto& img : images) {
    const auto& dets = table.entries().at(img.category);
    expected += dets.size();
    if (img.category == kRestCategory) {
      ++rest_images;
      rest_ids.insert(img.image_id);
    }
  }
  std::size_t rest_verdicts = 0;
  for (const auto& v : pipeline.verdicts()) rest_verdicts += rest_ids.count(v.image_id);
  const bool ok = rest_images * 10 == images.size() * 4 && rest_verdicts == 0 && report.l2_invocations == expected &&
                  report.routing_expected == expected && report.reduction() > 0;
  return {ok, "rest=" + std::to_string(rest_images) + "/" + std::to_string(images.size()) +
                  " rest_verdicts=" + std::to_string(rest_verdicts) + " l2=" + std::to_string(report.l2_invocations) +
                  " expected=" + std::to_string(expected) + " baseline=" +
                  std::to_string(report.all_detectors_baseline) + " reduction=" + std::to_string(report.reduction())};
}

Outcome pipeline_durability() {
  const auto all = logos();
  const auto registry = logo_registry(all, true);
  const auto images = e2e_catalog(all);
  std::vector<std::map<std::string, ImageState>> per_workers;
  RunReport reference;
  for (unsigned workers : {1u, 4u, 16u}) {
    CatalogStore store(images);
    TempDir dir;
    PipelineOptions options;
    options.workers = workers;
    ModerationPipeline pipeline(dir.path(), store, routing(), registry, e2e_policy(), options);
    const auto report = pipeline.run();
    if (workers == 1) reference = report;
    if (!report.balanced() || report.in_flight != 0) return {false, "unbalanced report at workers=" + std::to_string(workers)};
    per_workers.push_back(states_of(store));
  }
  const bool same_states = per_workers[0] == per_workers[1] && per_workers[0] == per_workers[2];

  bool resumed_ok = true;
  std::string crash_detail;
  for (std::size_t crash_at : {5u, 37u}) {
    TempDir dir;
    {
      CatalogStore store(images);
      PipelineOptions options;
      options.workers = 4;
      options.faults.crash_after_verdicts = crash_at;
      ModerationPipeline pipeline(dir.path(), store, routing(), registry, e2e_policy(), options);
      if (!pipeline.run().crashed) resumed_ok = false;
    }
    CatalogStore fresh(images);
    ModerationPipeline resumed(dir.path(), fresh, routing(), registry, e2e_policy());
    const auto report = resumed.run();
    const bool ok = report.same_totals(reference) && report.balanced() && states_of(fresh) == per_workers[0];
    resumed_ok = resumed_ok && ok;
    crash_detail += " crash@" + std::to_string(crash_at) + (ok ? "=ok" : "=diverged");
  }
  std::map<ImageState, std::size_t> histogram;
  for (const auto& [_, s] : per_workers[0]) ++histogram[s];
  std::string hist;
  for (const auto& [s, n] : histogram) hist += " " + std::string(to_string(s)) + "=" + std::to_string(n);
  return {same_states && resumed_ok && reference.balanced(),
          std::string("workers{1,4,16} ") + (same_states ? "identical" : "differ") + crash_detail +
              " images_in=" + std::to_string(reference.images_in) + " rejected=" +
              std::to_string(reference.rejected) + hist};
}

Outcome selection_oracle_equivalence() {
  Rng rng(71);
  std::size_t agree = 0, over_budget = 0;
  for (int round = 0; round < 1000; ++round) {
    std::vector<DetectionVerdict> verdicts;
    const auto n = rng.uniform_int(0, 60);
    for (int i = 0; i < n; ++i) {
      DetectionVerdict v;
      v.image_id = "i" + std::to_string(rng.uniform_int(0, 25));
      v.detector_id = "d" + std::to_string(rng.uniform_int(0, 3));
      v.category = "c";
      v.confidence = rng.uniform_int(0, 100) / 100.0;
      v.decision = static_cast<Decision>(rng.uniform_int(0, 2));
      verdicts.push_back(v);
    }
    const auto budget = static_cast<std::size_t>(rng.uniform_int(0, 15));
    const double floor = rng.uniform_int(0, 100) / 100.0;
    const auto got = select_for_review(verdicts, budget, floor);
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& t : got) pairs.emplace_back(t.image_id, t.detector_id);
    agree += pairs == selection_oracle(verdicts, budget, floor);
    over_budget += got.size() > budget;
  }
  return {agree == 1000 && over_budget == 0,
          std::to_string(agree) + "/1000 equal, " + std::to_string(over_budget) + " over budget"};
}

Outcome shallow_checks() {
  Rng rng(81);
  const std::size_t dim = 8;
  auto sample_set = [&](std::size_t n, double margin) {
    std::vector<LabeledSignature> out;
    for (std::size_t i = 0; i < n; ++i) {
      const bool positive = i % 2 == 0;
      std::vector<double> v(dim);
      for (auto& x : v) x = rng.uniform(0.0, 1.0);
      if (margin > 0) v[0] = positive ? rng.uniform(0.5 + margin, 1.0) : rng.uniform(0.0, 0.5 - margin);
      out.push_back({Signature{v}, positive});
    }
    return out;
  };

  double worst = 0.0;
  for (int point = 0; point < 20; ++point) {
    const auto samples = sample_set(40, 0.0);
    ShallowModel m{std::vector<double>(dim), rng.uniform(-1, 1)};
    for (auto& w : m.weights) w = rng.uniform(-2, 2);
    const double l2 = rng.uniform(0, 0.5);
    const auto g = logistic_gradient(m, samples, l2);
    const double h = 1e-5;
    auto rel = [&](double analytic, const std::function<void(ShallowModel&, double)>& perturb) {
      ShallowModel plus = m, minus = m;
      perturb(plus, h);
      perturb(minus, -h);
      const double numeric = (logistic_loss(plus, samples, l2) - logistic_loss(minus, samples, l2)) / (2 * h);
      return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
    };
    for (std::size_t d = 0; d < dim; ++d) {
      worst = std::max(worst, rel(g.weights[d], [d](ShallowModel& s, double e) { s.weights[d] += e; }));
    }
    worst = std::max(worst, rel(g.bias, [](ShallowModel& s, double e) { s.bias += e; }));
  }

  const auto separable = sample_set(200, 0.1);
  const auto fit = shallow_fit(separable, {1.0, 3000, 0.0});
  std::size_t correct = 0;
  for (const auto& s : separable) correct += (shallow_score(fit.model, s.signature) > 0.5) == s.positive;
  const double accuracy = static_cast<double>(correct) / static_cast<double>(separable.size());
  return {worst <= 1e-5 && accuracy == 1.0,
          "max relative gradient error=" + fmt(worst, 9) + " train accuracy=" + fmt(accuracy)};
}

Outcome metric_properties() {
  Rng rng(91);
  double worst_gap = 0.0;
  bool monotone = true;
  for (int round = 0; round < 50; ++round) {
    std::vector<ScoredLabel> s;
    for (int i = 0; i < 300; ++i) {
      const bool truth = rng.uniform(0.0, 1.0) < 0.3;
      s.push_back({rng.uniform(0.0, 1.0) + (truth ? 0.3 : 0.0), truth});
    }
    const auto curve = roc(s);
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
      monotone = monotone && curve.points[i].fpr >= curve.points[i - 1].fpr &&
                 curve.points[i].tpr >= curve.points[i - 1].tpr;
    }
    worst_gap = std::max(worst_gap, std::abs(auc_trapezoid(curve) - auc_mann_whitney(s)));
  }

  std::vector<double> confidences;
  for (int i = 0; i < 2000; ++i) confidences.push_back(rng.uniform(0.0, 1.0));
  std::size_t increases = 0;
  for (int round = 0; round < 100; ++round) {
    const double t_review = rng.uniform(0.0, 0.6);
    const double t_block = rng.uniform(t_review, 1.0);
    ThresholdPolicy low(Thresholds{t_block, t_review});
    ThresholdPolicy high(Thresholds{std::min(1.0, t_block + rng.uniform(0.0, 0.3)), t_review});
    const double override_block = rng.uniform(t_review, 1.0);
    low.set_category("d", "c1", {override_block, std::nullopt});
    high.set_category("d", "c1", {std::min(1.0, override_block + rng.uniform(0.0, 0.3)), std::nullopt});
    std::size_t before = 0, after = 0;
    for (std::size_t i = 0; i < confidences.size(); ++i) {
      const std::string cat = i % 2 ? "c1" : "c2";
      before += decide(confidences[i], low, "d", cat) == Decision::AutoBlock;
      after += decide(confidences[i], high, "d", cat) == Decision::AutoBlock;
    }
    increases += after > before;
  }
  return {monotone && worst_gap <= 1e-9 && increases == 0,
          std::string("ROC ") + (monotone ? "monotone" : "not monotone") + ", max |trapezoid - MW|=" +
              fmt(worst_gap, 12) + ", AutoBlock increases=" + std::to_string(increases) + "/100"};
}

Outcome feedback_loop() {
  const auto all = logos();
  DetectorRegistry registry;
  registry.add(std::shared_ptr<const Detector>(
      logo_detector_from_templates(train_logos(all, "acme"), kScales, "logo_acme", Resampling::Nearest)));
  synth::DatasetSpec spec;
  spec.n_per_class = 8;
  spec.neg_ratio = 0.0;
  spec.classes = {"acme"};
  spec.seed = 101;
  spec.transform = {0.3, 0.45, 12.0, 0.05, 0.0, Resampling::Bilinear};
  std::vector<CatalogImage> images;
  for (auto& s : synth::generate_dataset(corpus(20, 100), all, spec)) {
    s.sample.image.image_id = "pos-" + std::to_string(images.size());
    s.sample.image.category = "apparel";
    s.sample.image.state = ImageState::Pending;
    images.push_back(std::move(s.sample.image));
  }
  CatalogStore store(images);
  TempDir dir;
  ModerationPipeline pipeline(dir / "pipeline", store,
                              RoutingTable::from_json(json::parse(R"({"apparel": ["logo_acme"]})")), registry,
                              ThresholdPolicy(Thresholds{0.99, 0.5}));
  pipeline.run();
  ReviewService review(store, &pipeline, dir / "review");
  ApiServer server(ApiContext{store, pipeline, review, std::nullopt});
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  httplib::Client client("127.0.0.1", port);

  auto selected = client.Post("/review/select", R"({"budget": 5, "floor": 0.5})", "application/json");
  if (!selected || selected->status != 200) return {false, "select failed"};
  const auto tasks = json::parse(selected->body).at("tasks");
  if (tasks.empty()) return {false, "no flagged positive reached review"};
  const std::string task_id = tasks[0].at("task_id");
  const std::string image_id = tasks[0].at("image_id");
  const std::string path = "/review/tasks/" + task_id + "/decision";
  const std::string body = R"({"verdict": "ConfirmNonCompliant", "reviewer_id": "acceptance"})";

  const std::size_t labeled_before = review.labeled().size();
  auto first = client.Post(path.c_str(), body, "application/json");
  const auto image = json::parse(client.Get(("/images/" + image_id).c_str())->body);
  const bool transitioned = first && first->status == 200 && image.at("state") == "ReviewRejected";
  const auto entries = review.labeled().entries();
  const bool grew = entries.size() == labeled_before + 1 && entries.back().sample.label == SampleLabel::NonCompliant;
  bool lineage = false;
  if (grew) {
    const auto decided = json::parse(client.Get("/review/tasks?status=decided")->body).at("tasks");
    for (const auto& t : decided) {
      lineage = lineage || (t.at("task_id") == entries.back().task_id && t.at("image_id") == image_id &&
                            entries.back().sample.image.image_id == image_id &&
                            store.get(image_id)->pixels == entries.back().sample.image.pixels);
    }
  }
  auto replay = client.Post(path.c_str(), body, "application/json");
  const bool replay_noop = replay && replay->status == 409 && review.labeled().size() == labeled_before + 1 &&
                           store.state(image_id) == ImageState::ReviewRejected;
  server.stop();
  return {transitioned && grew && lineage && replay_noop,
          std::string("state ") + (transitioned ? "ReviewRejected" : "unchanged") + ", labeled +" +
              std::to_string(review.labeled().size() - labeled_before) + ", lineage " +
              (lineage ? "resolved" : "broken") + ", replay " +
              (replay ? std::to_string(replay->status) : std::string("failed"))};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"F1 arithmetic reproduces the published detector table", 1, f1_arithmetic},
      {"Synthetic annotations match pixel-diff box recovery", 120, annotation_exactness},
      {"Template logo detector finds exact-scale logos", 300, exact_match_detection},
      {"k-NN query equals exhaustive scan", 30, knn_equivalence},
      {"Two-stage routing never runs L2 on rest", 300, routing_invariant},
      {"Pipeline determinism and kill-and-resume durability", 600, pipeline_durability},
      {"Budgeted selection equals sort-filter-top-k", 60, selection_oracle_equivalence},
      {"Shallow classifier gradient and separable fit", 60, shallow_checks},
      {"ROC, AUC and threshold monotonicity", 60, metric_properties},
      {"Review confirmation feeds the labeled store", 60, feedback_loop},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << c.name << " (" << fmt(secs, 2) << "s of " << c.budget_seconds
              << "s) " << o.detail << (in_time ? "" : " [over time budget]") << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
