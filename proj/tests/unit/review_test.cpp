#include <gtest/gtest.h>

#include <atomic>
#include <nlohmann/json.hpp>
#include <thread>

#include "modgate/error.hpp"
#include "modgate/review.hpp"
#include "modgate/rng.hpp"
#include "support.hpp"

using namespace modgate;
using namespace modgate::testing;

namespace {

template <class Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected modgate::Error";
  return ErrorKind::Undefined;
}

DetectionVerdict verdict(const std::string& image, double confidence, const std::string& det = "d",
                         Decision decision = Decision::ManualReview) {
  DetectionVerdict v;
  v.image_id = image;
  v.detector_id = det;
  v.category = "c";
  v.confidence = confidence;
  v.decision = decision;
  return v;
}

std::vector<std::pair<std::string, std::string>> pairs(const std::vector<ReviewTask>& tasks) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& t : tasks) out.emplace_back(t.image_id, t.detector_id);
  return out;
}

ReviewDecision decided(ReviewVerdict v) { return {"t", v, "r", 0}; }

/// Catalog + pipeline where every image ends UnderReview via the red detector.
struct Fixture {
  TempDir dir;
  CatalogStore store;
  DetectorRegistry registry;
  std::unique_ptr<ModerationPipeline> pipeline;

  explicit Fixture(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      store.add(coded_image("img" + std::to_string(i), "a", static_cast<std::uint8_t>(130 + i)));
    }
    registry.add(std::make_shared<FunctionDetector>("red", red_confidence, "acme"));
    pipeline = std::make_unique<ModerationPipeline>(
        dir / "pipeline", store, RoutingTable::from_json(nlohmann::json::parse(R"({"a": ["red"]})")), registry,
        ThresholdPolicy{});
    pipeline->run();
  }
};

}  // namespace

TEST(Select, FloorAndBudgetExamples) {
  const std::vector<DetectionVerdict> v{verdict("a", 0.9), verdict("b", 0.8), verdict("c", 0.7)};
  const auto five = select_for_review(v, 5, 0.75);
  ASSERT_EQ(five.size(), 2u);
  EXPECT_EQ(five[0].confidence, 0.9);
  EXPECT_EQ(five[1].confidence, 0.8);
  const auto one = select_for_review(v, 1, 0.75);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].image_id, "a");
  EXPECT_TRUE(select_for_review(v, 0, 0.75).empty());
}

TEST(Select, OnlyManualReviewVerdicts) {
  const std::vector<DetectionVerdict> v{verdict("a", 0.95, "d", Decision::AutoBlock), verdict("b", 0.6),
                                        verdict("c", 0.2, "d", Decision::Pass)};
  EXPECT_EQ(pairs(select_for_review(v, 10, 0.0)), (std::vector<std::pair<std::string, std::string>>{{"b", "d"}}));
}

TEST(Select, ExcludedPairsSkipped) {
  const std::vector<DetectionVerdict> v{verdict("a", 0.9), verdict("b", 0.8)};
  const auto out = select_for_review(v, 5, 0.0, {{"a", "d"}});
  EXPECT_EQ(pairs(out), (std::vector<std::pair<std::string, std::string>>{{"b", "d"}}));
}

TEST(Select, MatchesSortFilterOracleOnFuzz) {
  Rng rng(2025);
  for (int round = 0; round < 1000; ++round) {
    std::vector<DetectionVerdict> v;
    const auto n = rng.uniform_int(0, 40);
    for (int i = 0; i < n; ++i) {
      const Decision d = static_cast<Decision>(rng.uniform_int(0, 2));
      // Two-decimal confidences produce ties.
      v.push_back(verdict("i" + std::to_string(rng.uniform_int(0, 15)), rng.uniform_int(0, 100) / 100.0,
                          "d" + std::to_string(rng.uniform_int(0, 2)), d));
    }
    const auto budget = static_cast<std::size_t>(rng.uniform_int(0, 12));
    const double floor = rng.uniform_int(0, 100) / 100.0;
    const auto got = select_for_review(v, budget, floor);
    ASSERT_LE(got.size(), budget);
    ASSERT_EQ(pairs(got), selection_oracle(v, budget, floor)) << "round " << round;
  }
}

TEST(Roi, Examples) {
  const std::vector<ReviewDecision> three_one{decided(ReviewVerdict::ConfirmNonCompliant),
                                              decided(ReviewVerdict::ConfirmNonCompliant),
                                              decided(ReviewVerdict::ConfirmNonCompliant),
                                              decided(ReviewVerdict::RejectFlag)};
  EXPECT_DOUBLE_EQ(labeling_roi(three_one), 0.75);
  const std::vector<ReviewDecision> rejects{decided(ReviewVerdict::RejectFlag), decided(ReviewVerdict::RejectFlag)};
  EXPECT_DOUBLE_EQ(labeling_roi(rejects), 0.0);
  EXPECT_EQ(kind_of([] { labeling_roi({}); }), ErrorKind::Undefined);
}

TEST(Roi, HigherFloorNeverLowersRoiWhenConfidenceTracksTruth) {
  // Truth is positive iff confidence >= 0.7, so each floor's ROI is the share
  // of selected verdicts at or above 0.7.
  Rng rng(4);
  std::vector<DetectionVerdict> v;
  for (int i = 0; i < 300; ++i) v.push_back(verdict("i" + std::to_string(i), rng.uniform(0.5, 1.0)));
  double previous = -1.0;
  for (double floor = 0.5; floor < 0.99; floor += 0.05) {
    CatalogStore store;
    ReviewService service(store, nullptr);
    service.open_tasks(v, 1000, floor);
    for (const auto& t : service.tasks(TaskStatus::Open)) {
      service.submit_decision(t.task_id,
                              t.confidence >= 0.7 ? ReviewVerdict::ConfirmNonCompliant : ReviewVerdict::RejectFlag,
                              "r");
    }
    const double roi = labeling_roi(service.decisions());
    EXPECT_GE(roi, previous) << "floor " << floor;
    previous = roi;
  }
}

TEST(Service, ConfirmRejectsImageAndStoresNonCompliant) {
  Fixture f(3);
  ReviewService service(f.store, f.pipeline.get(), f.dir / "review");
  const auto tasks = service.select(10, 0.5);
  ASSERT_EQ(tasks.size(), 3u);
  EXPECT_EQ(tasks[0].task_id, "task-000001");
  // Highest confidence first: img2 has the largest red value.
  EXPECT_EQ(tasks[0].image_id, "img2");
  const auto r = service.submit_decision(tasks[0].task_id, ReviewVerdict::ConfirmNonCompliant, "alice");
  EXPECT_TRUE(r.state_changed);
  EXPECT_EQ(r.image_state, ImageState::ReviewRejected);
  EXPECT_EQ(f.store.state("img2"), ImageState::ReviewRejected);
  ASSERT_EQ(service.labeled().size(), 1u);
  const auto entry = service.labeled().entries().front();
  EXPECT_EQ(entry.sample.label, SampleLabel::NonCompliant);
  EXPECT_EQ(entry.task_id, tasks[0].task_id);
  EXPECT_EQ(entry.detector_id, "red");
  EXPECT_EQ(entry.reviewer_id, "alice");
  EXPECT_EQ(entry.sample.image.image_id, "img2");
  EXPECT_EQ(entry.sample.provenance, Provenance::CrowdVerified);
}

TEST(Service, RejectFlagAcceptsImageAndStoresCompliant) {
  Fixture f(1);
  ReviewService service(f.store, f.pipeline.get());
  const auto tasks = service.select(10, 0.5);
  ASSERT_EQ(tasks.size(), 1u);
  const auto r = service.submit_decision(tasks[0].task_id, ReviewVerdict::RejectFlag, "bob");
  EXPECT_EQ(r.image_state, ImageState::ReviewAccepted);
  ASSERT_EQ(service.labeled().size(), 1u);
  EXPECT_EQ(service.labeled().entries()[0].sample.label, SampleLabel::Compliant);
  EXPECT_TRUE(service.labeled().entries()[0].sample.boxes.empty());
}

TEST(Service, ReplayIsDuplicateAndStoreUnchanged) {
  Fixture f(1);
  ReviewService service(f.store, f.pipeline.get());
  const auto id = service.select(10, 0.5).at(0).task_id;
  service.submit_decision(id, ReviewVerdict::ConfirmNonCompliant, "a");
  EXPECT_EQ(kind_of([&] { service.submit_decision(id, ReviewVerdict::ConfirmNonCompliant, "a"); }),
            ErrorKind::DuplicateDecision);
  EXPECT_EQ(kind_of([&] { service.submit_decision(id, ReviewVerdict::RejectFlag, "b"); }),
            ErrorKind::DuplicateDecision);
  EXPECT_EQ(service.labeled().size(), 1u);
  EXPECT_EQ(f.store.state("img0"), ImageState::ReviewRejected);
  EXPECT_EQ(service.task(id).status, TaskStatus::Decided);
}

TEST(Service, UnknownTaskIsNotFound) {
  CatalogStore store;
  ReviewService service(store, nullptr);
  EXPECT_EQ(kind_of([&] { service.submit_decision("task-999999", ReviewVerdict::RejectFlag, "x"); }),
            ErrorKind::NotFound);
  EXPECT_EQ(kind_of([&] { service.task("nope"); }), ErrorKind::NotFound);
  EXPECT_EQ(kind_of([&] { service.select(1, 0.0); }), ErrorKind::InvalidConfig);
}

TEST(Service, OneTaskPerPairEvenAfterDecision) {
  Fixture f(2);
  ReviewService service(f.store, f.pipeline.get());
  const auto first = service.select(10, 0.5);
  ASSERT_EQ(first.size(), 2u);
  EXPECT_TRUE(service.select(10, 0.5).empty());
  service.submit_decision(first[0].task_id, ReviewVerdict::RejectFlag, "r");
  EXPECT_TRUE(service.select(10, 0.5).empty());
  EXPECT_EQ(service.tasks().size(), 2u);
}

TEST(Service, ConcurrentDecisionsHaveOneWinner) {
  Fixture f(1);
  ReviewService service(f.store, f.pipeline.get());
  const auto id = service.select(1, 0.5).at(0).task_id;
  std::atomic<int> ok{0}, dup{0};
  {
    std::vector<std::jthread> threads;
    for (int i = 0; i < 8; ++i) {
      threads.emplace_back([&, i] {
        try {
          service.submit_decision(id, i % 2 ? ReviewVerdict::RejectFlag : ReviewVerdict::ConfirmNonCompliant,
                                  "r" + std::to_string(i));
          ++ok;
        } catch (const Error& e) {
          if (e.kind() == ErrorKind::DuplicateDecision) ++dup;
        }
      });
    }
  }
  EXPECT_EQ(ok.load(), 1);
  EXPECT_EQ(dup.load(), 7);
  EXPECT_EQ(service.labeled().size(), 1u);
}

TEST(Service, PersistsAcrossRestart) {
  Fixture f(3);
  std::string decided_id;
  {
    ReviewService service(f.store, f.pipeline.get(), f.dir / "review");
    const auto tasks = service.select(10, 0.5);
    decided_id = tasks[1].task_id;
    service.submit_decision(decided_id, ReviewVerdict::ConfirmNonCompliant, "alice");
  }
  ReviewService again(f.store, f.pipeline.get(), f.dir / "review");
  EXPECT_EQ(again.tasks().size(), 3u);
  EXPECT_EQ(again.tasks(TaskStatus::Open).size(), 2u);
  EXPECT_EQ(again.task(decided_id).status, TaskStatus::Decided);
  ASSERT_EQ(again.labeled().size(), 1u);
  EXPECT_EQ(again.labeled().entries()[0].sample.image.pixels, f.store.get(again.task(decided_id).image_id)->pixels);
  EXPECT_EQ(kind_of([&] { again.submit_decision(decided_id, ReviewVerdict::RejectFlag, "x"); }),
            ErrorKind::DuplicateDecision);
  EXPECT_TRUE(again.select(10, 0.5).empty());
  const auto next = again.open_tasks(std::vector<DetectionVerdict>{verdict("other", 0.7)}, 1, 0.5);
  EXPECT_EQ(next.at(0).task_id, "task-000004");
  // Lineage: every labeled entry resolves to a decided task and its image.
  for (const auto& e : again.labeled().entries()) {
    const auto t = again.task(e.task_id);
    EXPECT_EQ(t.status, TaskStatus::Decided);
    EXPECT_EQ(t.image_id, e.sample.image.image_id);
    EXPECT_EQ(t.detector_id, e.detector_id);
  }
}

TEST(Stats, CountsRoiAndBreakdown) {
  CatalogStore store;
  ReviewService service(store, nullptr);
  auto empty = service.stats().to_json();
  EXPECT_TRUE(empty.at("roi").is_null());
  std::vector<DetectionVerdict> v{verdict("a", 0.9), verdict("b", 0.8), verdict("c", 0.7), verdict("d", 0.6),
                                  verdict("e", 0.55)};
  v[3].category = "other";
  const auto tasks = service.open_tasks(v, 10, 0.5);
  for (std::size_t i = 0; i < 4; ++i) {
    service.submit_decision(tasks[i].task_id, i < 3 ? ReviewVerdict::ConfirmNonCompliant : ReviewVerdict::RejectFlag, "r");
  }
  const auto s = service.stats();
  EXPECT_EQ(s.open, 1u);
  EXPECT_EQ(s.decided, 4u);
  EXPECT_EQ(s.confirmed, 3u);
  EXPECT_EQ(s.rejected, 1u);
  ASSERT_TRUE(s.roi);
  EXPECT_DOUBLE_EQ(*s.roi, 0.75);
  EXPECT_DOUBLE_EQ(*s.per_category.at("c").roi, 1.0);
  EXPECT_DOUBLE_EQ(*s.per_category.at("other").roi, 0.0);
  std::size_t sum = 0;
  for (const auto& [_, c] : s.per_category) sum += c.decided;
  EXPECT_EQ(sum, s.decided);
  const auto j = s.to_json();
  EXPECT_DOUBLE_EQ(j.at("roi").get<double>(), 0.75);
}

TEST(TaskJson, RoundTrip) {
  ReviewTask t{"task-000007", "img", "det", "cat", 0.66, {{{1, 2, 3, 4, "acme"}, 0.66}}, TaskStatus::Decided, 99};
  const auto back = task_from_json(task_json(t));
  EXPECT_EQ(back.task_id, t.task_id);
  EXPECT_EQ(back.status, TaskStatus::Decided);
  EXPECT_EQ(back.boxes.at(0).box, t.boxes[0].box);
  const ReviewDecision d{"task-000007", ReviewVerdict::RejectFlag, "bob", 5};
  const auto dj = decision_from_json(decision_json(d));
  EXPECT_EQ(dj.verdict, ReviewVerdict::RejectFlag);
  EXPECT_EQ(parse_review_verdict(to_string(ReviewVerdict::ConfirmNonCompliant)), ReviewVerdict::ConfirmNonCompliant);
}
