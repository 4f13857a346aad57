#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "modgate/error.hpp"
#include "modgate/pipeline.hpp"
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

DetectorRegistry coded_registry() {
  DetectorRegistry reg;
  reg.add(std::make_shared<FunctionDetector>("red", red_confidence));
  reg.add(std::make_shared<FunctionDetector>("green", green_confidence));
  return reg;
}

RoutingTable coded_table() {
  return RoutingTable::from_json(nlohmann::json::parse(R"({"a": ["red"], "b": ["red", "green"], "rest": []})"));
}

/// Deterministic mixed catalog: categories a, b, rest and one unknown; red and
/// green channels spread over all decision bands; a few too-small images.
std::vector<CatalogImage> mixed_catalog(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const char* cats[] = {"a", "b", "rest", "garden"};
  std::vector<CatalogImage> out;
  for (std::size_t i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "m%04zu", i);
    auto img = coded_image(id, cats[rng.uniform_int(0, 3)], static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
                           static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
    if (rng.bernoulli(0.05)) {
      const Rgba keep = img.pixels.at(0, 0);
      img.pixels = Raster(8, 8, {90, 90, 90, 255});
      img.pixels.set(0, 0, keep);
    }
    out.push_back(img);
  }
  return out;
}

std::map<std::string, ImageState> states(const CatalogStore& store) {
  std::map<std::string, ImageState> out;
  for (const auto& id : store.ids()) out[id] = *store.state(id);
  return out;
}

struct Run {
  std::map<std::string, ImageState> states;
  RunReport report;
  std::size_t verdicts = 0;
};

Run run_once(const std::vector<CatalogImage>& images, PipelineOptions options,
             ThresholdPolicy policy = ThresholdPolicy{}) {
  TempDir dir;
  CatalogStore store(images);
  const auto reg = coded_registry();
  ModerationPipeline p(dir.path(), store, coded_table(), reg, policy, options);
  const auto report = p.run();
  return {states(store), report, p.verdicts().size()};
}

}  // namespace

TEST(Decide, Bands) {
  const ThresholdPolicy p;
  EXPECT_EQ(decide(0.95, p, "d", "c"), Decision::AutoBlock);
  EXPECT_EQ(decide(0.60, p, "d", "c"), Decision::ManualReview);
  EXPECT_EQ(decide(0.30, p, "d", "c"), Decision::Pass);
  EXPECT_EQ(decide(0.90, p, "d", "c"), Decision::AutoBlock);
  EXPECT_EQ(decide(0.50, p, "d", "c"), Decision::ManualReview);
}

TEST(Decide, CategoryOverrideBeatsDetectorDefault) {
  ThresholdPolicy p;
  p.set_detector("logo", {0.9, std::nullopt});
  p.set_category("logo", "apparel", {0.99, std::nullopt});
  EXPECT_EQ(decide(0.95, p, "logo", "apparel"), Decision::ManualReview);
  EXPECT_EQ(decide(0.95, p, "logo", "toys"), Decision::AutoBlock);
  EXPECT_EQ(p.effective("logo", "apparel").t_review, 0.5);
}

TEST(Policy, MalformedRejectedAtLoad) {
  EXPECT_EQ(kind_of([] { ThresholdPolicy::from_json(nlohmann::json::parse(R"({"global": {"t_block": 0.4, "t_review": 0.6}})")); }),
            ErrorKind::InvalidConfig);
  // A detector override that pushes t_review above the inherited t_block.
  const auto bad = nlohmann::json::parse(R"({"global": {"t_block": 0.9, "t_review": 0.5}, "detectors": {"d": {"t_review": 0.95}}})");
  EXPECT_EQ(kind_of([&] { ThresholdPolicy::from_json(bad); }), ErrorKind::InvalidConfig);
}

TEST(Policy, JsonRoundTrip) {
  ThresholdPolicy p({0.8, 0.4});
  p.set_detector("d", {0.85, std::nullopt});
  p.set_category("d", "c", {std::nullopt, 0.3});
  const auto back = ThresholdPolicy::from_json(p.to_json());
  EXPECT_EQ(back.to_json(), p.to_json());
  EXPECT_EQ(back.effective("d", "c").t_block, 0.85);
  EXPECT_EQ(back.effective("d", "c").t_review, 0.3);
}

TEST(Precedence, StrongestWins) {
  const std::vector<Decision> pm{Decision::Pass, Decision::ManualReview};
  EXPECT_EQ(fold_decisions(pm), Decision::ManualReview);
  const std::vector<Decision> all{Decision::Pass, Decision::AutoBlock, Decision::ManualReview};
  EXPECT_EQ(fold_decisions(all), Decision::AutoBlock);
  EXPECT_EQ(fold_decisions({}), Decision::Pass);
}

TEST(Prevalidate, Examples) {
  ValidationLimits limits;
  CatalogImage tiny;
  tiny.pixels = Raster(1, 1);
  ASSERT_TRUE(prevalidate(tiny, limits));
  EXPECT_EQ(prevalidate(tiny, limits)->reason, RejectionReason::TooSmall);
  CatalogImage ok;
  ok.pixels = Raster(64, 64);
  EXPECT_FALSE(prevalidate(ok, limits));
  CatalogImage big;
  big.pixels = Raster(4097, 33);
  EXPECT_EQ(prevalidate(big, limits)->reason, RejectionReason::TooLarge);
  CatalogImage gif = ok;
  gif.format = "gif";
  EXPECT_EQ(prevalidate(gif, limits)->reason, RejectionReason::UnsupportedFormat);
}

TEST(Pipeline, RestImagePublishedWithoutVerdicts) {
  TempDir dir;
  CatalogStore store({coded_image("r", "rest", 255, 255)});
  const auto reg = coded_registry();
  ModerationPipeline p(dir.path(), store, coded_table(), reg, {});
  const auto report = p.run();
  EXPECT_EQ(store.state("r"), ImageState::Published);
  EXPECT_TRUE(p.verdicts().empty());
  EXPECT_EQ(report.routed_rest, 1u);
  EXPECT_EQ(report.l2_invocations, 0u);
}

TEST(Pipeline, PassPlusManualReviewGivesUnderReview) {
  TempDir dir;
  CatalogStore store({coded_image("x", "b", 153, 26)});  // red 0.6, green ~0.1
  const auto reg = coded_registry();
  ModerationPipeline p(dir.path(), store, coded_table(), reg, {});
  p.run();
  EXPECT_EQ(store.state("x"), ImageState::UnderReview);
  const auto v = p.verdicts_for("x");
  ASSERT_EQ(v.size(), 2u);
  std::set<Decision> ds{v[0].decision, v[1].decision};
  EXPECT_EQ(ds, (std::set<Decision>{Decision::Pass, Decision::ManualReview}));
  for (const auto& verdict : v) EXPECT_EQ(verdict.category, "b");
}

TEST(Pipeline, UnknownCategoryRoutedAsRestAndCounted) {
  TempDir dir;
  CatalogStore store({coded_image("g", "garden", 255, 255)});
  const auto reg = coded_registry();
  ModerationPipeline p(dir.path(), store, coded_table(), reg, {});
  const auto report = p.run();
  EXPECT_EQ(store.state("g"), ImageState::Published);
  EXPECT_EQ(p.routed_category("g"), "rest");
  EXPECT_EQ(report.unknown_category, 1u);
}

TEST(Pipeline, RejectedImageStaysPendingAndIsCounted) {
  TempDir dir;
  CatalogImage tiny = coded_image("t", "a", 255);
  tiny.pixels = Raster(4, 4);
  CatalogStore store({tiny});
  const auto reg = coded_registry();
  ModerationPipeline p(dir.path(), store, coded_table(), reg, {});
  const auto report = p.run();
  EXPECT_EQ(store.state("t"), ImageState::Pending);
  EXPECT_EQ(report.rejected, 1u);
  EXPECT_EQ(report.rejected_by_reason.at("TooSmall"), 1u);
  EXPECT_TRUE(report.balanced());
  ASSERT_TRUE(p.rejection_for("t"));
}

TEST(Pipeline, UnregisteredDetectorIsConfigErrorBeforeDiskIsTouched) {
  TempDir dir;
  CatalogStore store;
  const auto reg = coded_registry();
  auto table = coded_table();
  table.set("c", {"blue"});
  EXPECT_EQ(kind_of([&] { ModerationPipeline(dir / "state", store, table, reg, {}); }), ErrorKind::ConfigError);
  EXPECT_FALSE(std::filesystem::exists(dir / "state"));
  PipelineOptions zero;
  zero.workers = 0;
  EXPECT_EQ(kind_of([&] { ModerationPipeline(dir / "state", store, coded_table(), reg, {}, zero); }),
            ErrorKind::InvalidConfig);
  EXPECT_FALSE(std::filesystem::exists(dir / "state"));
}

TEST(Pipeline, EmptyCatalogGivesZeroTotals) {
  const auto r = run_once({}, {});
  EXPECT_EQ(r.report.images_in, 0u);
  EXPECT_EQ(r.report.terminal_total(), 0u);
  EXPECT_TRUE(r.report.balanced());
}

TEST(Pipeline, ConservationAndRoutingAccounting) {
  const auto images = mixed_catalog(150, 1);
  const auto r = run_once(images, {});
  EXPECT_TRUE(r.report.balanced());
  EXPECT_EQ(r.report.images_in, 150u);
  EXPECT_EQ(r.report.in_flight, 0u);
  EXPECT_EQ(r.report.l2_invocations, r.report.routing_expected);
  EXPECT_EQ(r.report.l2_invocations, r.verdicts);
  EXPECT_EQ(r.report.all_detectors_baseline, (150 - r.report.rejected) * 2);
  EXPECT_GT(r.report.reduction(), 0);
  // Oracle for routing_expected from the catalog itself.
  std::size_t expected = 0;
  for (const auto& img : images) {
    if (img.pixels.width() < 32) continue;
    expected += img.category == "a" ? 1 : img.category == "b" ? 2 : 0;
  }
  EXPECT_EQ(r.report.routing_expected, expected);
  // Every accepted image is in exactly one terminal state.
  for (const auto& [id, st] : r.states) {
    const auto& img = *std::find_if(images.begin(), images.end(), [&](const auto& i) { return i.image_id == id; });
    if (img.pixels.width() < 32) {
      EXPECT_EQ(st, ImageState::Pending);
    } else {
      EXPECT_NE(st, ImageState::Pending);
    }
  }
}

TEST(Pipeline, NoVerdictForRestImages) {
  TempDir dir;
  CatalogStore store(mixed_catalog(80, 2));
  const auto reg = coded_registry();
  ModerationPipeline p(dir.path(), store, coded_table(), reg, {});
  p.run();
  for (const auto& v : p.verdicts()) {
    EXPECT_NE(p.routed_category(v.image_id), "rest");
    EXPECT_NE(v.category, "rest");
  }
}

TEST(Pipeline, WorkerCountDoesNotChangeOutcomes) {
  const auto images = mixed_catalog(120, 3);
  PipelineOptions o;
  o.workers = 1;
  const auto one = run_once(images, o);
  for (unsigned w : {4u, 16u}) {
    o.workers = w;
    const auto many = run_once(images, o);
    EXPECT_EQ(many.states, one.states) << "workers=" << w;
    EXPECT_TRUE(many.report.same_totals(one.report));
  }
}

TEST(Pipeline, RedeliveryDoesNotChangeOutcomes) {
  const auto images = mixed_catalog(100, 4);
  const auto base = run_once(images, {});
  for (std::size_t every : {2u, 3u, 7u}) {
    PipelineOptions o;
    o.workers = 4;
    o.faults.redeliver_every = every;
    const auto r = run_once(images, o);
    EXPECT_EQ(r.states, base.states);
    EXPECT_TRUE(r.report.same_totals(base.report));
    EXPECT_EQ(r.verdicts, base.verdicts);
    EXPECT_GT(r.report.deliveries, base.report.deliveries);
    EXPECT_EQ(r.report.l2_executions, base.report.l2_executions);
  }
}

TEST(Pipeline, CrashAndResumeConverges) {
  const auto images = mixed_catalog(100, 5);
  const auto reference = run_once(images, {});
  for (std::size_t crash_at : {1u, 7u, 40u}) {
    TempDir dir;
    CatalogStore store(images);
    const auto reg = coded_registry();
    {
      PipelineOptions o;
      o.faults.crash_after_verdicts = crash_at;
      ModerationPipeline p(dir.path(), store, coded_table(), reg, {}, o);
      const auto crashed = p.run();
      EXPECT_TRUE(crashed.crashed);
      EXPECT_EQ(p.verdicts().size(), crash_at);
    }
    ModerationPipeline resumed(dir.path(), store, coded_table(), reg, {});
    const auto report = resumed.drain();
    EXPECT_FALSE(report.crashed);
    EXPECT_EQ(states(store), reference.states);
    EXPECT_EQ(resumed.verdicts().size(), reference.verdicts);
    EXPECT_TRUE(report.same_totals(reference.report));
    // The report is a pure fold over the event log.
    const auto events = EventLog::read(resumed.events_path());
    EXPECT_TRUE(fold_events(events, 2).same_totals(report));
    EXPECT_EQ(fold_states(events).size(), reference.report.terminal_total());
  }
}

TEST(Pipeline, ResumeAfterCrashRebuildsCatalogFromLog) {
  const auto images = mixed_catalog(60, 6);
  const auto reference = run_once(images, {});
  TempDir dir;
  const auto reg = coded_registry();
  {
    CatalogStore store(images);
    PipelineOptions o;
    o.faults.crash_after_verdicts = 20;
    ModerationPipeline p(dir.path(), store, coded_table(), reg, {}, o);
    p.run();
  }
  // A fresh catalog (as after a process restart) gets its states from the log.
  CatalogStore fresh(images);
  ModerationPipeline resumed(dir.path(), fresh, coded_table(), reg, {});
  resumed.drain();
  EXPECT_EQ(states(fresh), reference.states);
}

TEST(Pipeline, RunTwiceIsNoOp) {
  TempDir dir;
  CatalogStore store(mixed_catalog(30, 7));
  const auto reg = coded_registry();
  ModerationPipeline p(dir.path(), store, coded_table(), reg, {});
  const auto first = p.run();
  const auto lines = EventLog::read(p.events_path()).size();
  const auto second = p.run();
  EXPECT_TRUE(first.same_totals(second));
  EXPECT_EQ(EventLog::read(p.events_path()).size(), lines);
  EXPECT_FALSE(p.ingest(store.ids().front()));
}

TEST(Pipeline, RaisingTBlockNeverIncreasesAutoBlocked) {
  const auto images = mixed_catalog(80, 8);
  Rng rng(9);
  for (int round = 0; round < 10; ++round) {
    const double t_review = rng.uniform(0.0, 0.5);
    double t_block = rng.uniform(t_review, 0.8);
    std::size_t previous = std::numeric_limits<std::size_t>::max();
    for (int step = 0; step < 4; ++step) {
      const auto r = run_once(images, {}, ThresholdPolicy({t_block, t_review}));
      const auto it = r.report.terminal.find(ImageState::AutoBlocked);
      const std::size_t blocked = it == r.report.terminal.end() ? 0 : it->second;
      EXPECT_LE(blocked, previous);
      previous = blocked;
      t_block = std::min(1.0, t_block + rng.uniform(0.0, 0.1));
    }
  }
}

TEST(Review, AcceptRejectAndReplay) {
  TempDir dir;
  CatalogStore store({coded_image("x", "a", 153), coded_image("y", "a", 153), coded_image("p", "rest", 0)});
  const auto reg = coded_registry();
  ModerationPipeline p(dir.path(), store, coded_table(), reg, {});
  p.run();
  ASSERT_EQ(store.state("x"), ImageState::UnderReview);
  const auto a = p.apply_review_decision("x", ReviewAction::Accept);
  EXPECT_EQ(a.state, ImageState::ReviewAccepted);
  EXPECT_FALSE(a.duplicate);
  const auto again = p.apply_review_decision("x", ReviewAction::Accept);
  EXPECT_TRUE(again.duplicate);
  EXPECT_EQ(again.state, ImageState::ReviewAccepted);
  EXPECT_EQ(kind_of([&] { p.apply_review_decision("x", ReviewAction::Reject); }), ErrorKind::IllegalTransition);
  EXPECT_EQ(p.apply_review_decision("y", ReviewAction::Reject).state, ImageState::ReviewRejected);
  EXPECT_EQ(kind_of([&] { p.apply_review_decision("p", ReviewAction::Reject); }), ErrorKind::IllegalTransition);
  EXPECT_EQ(kind_of([&] { p.apply_review_decision("nope", ReviewAction::Reject); }), ErrorKind::NotFound);

  // Review outcomes survive a restart.
  CatalogStore fresh({coded_image("x", "a", 153), coded_image("y", "a", 153), coded_image("p", "rest", 0)});
  ModerationPipeline reopened(dir.path(), fresh, coded_table(), reg, {});
  EXPECT_EQ(fresh.state("x"), ImageState::ReviewAccepted);
  EXPECT_EQ(fresh.state("y"), ImageState::ReviewRejected);
  EXPECT_TRUE(reopened.apply_review_decision("y", ReviewAction::Reject).duplicate);
  const auto report = reopened.report();
  EXPECT_TRUE(report.balanced());
  EXPECT_EQ(report.terminal.at(ImageState::ReviewAccepted), 1u);
}

TEST(Verdict, JsonRoundTrip) {
  DetectionVerdict v{"img", "det", "cat", 0.75, {{{1, 2, 3, 4, "acme"}, 0.75}}, Decision::ManualReview, 1234};
  const auto back = verdict_from_json(verdict_json(v));
  EXPECT_EQ(back.image_id, "img");
  EXPECT_EQ(back.confidence, 0.75);
  ASSERT_EQ(back.boxes.size(), 1u);
  EXPECT_EQ(back.boxes[0].box, v.boxes[0].box);
  EXPECT_EQ(back.decision, Decision::ManualReview);
  EXPECT_EQ(back.timestamp_ms, 1234);
}

TEST(Queue, RedeliversUnackedAfterReopen) {
  TempDir dir;
  {
    DurableQueue q("q", dir / "q.log");
    q.publish("one");
    q.publish("two");
    q.publish("three");
    const auto m = q.poll();
    ASSERT_TRUE(m);
    EXPECT_EQ(m->payload, "one");
    q.ack(m->seq);
    const auto m2 = q.poll();
    EXPECT_EQ(m2->payload, "two");
    // two is in flight but never acked
  }
  DurableQueue q("q", dir / "q.log");
  EXPECT_EQ(q.outstanding(), 2u);
  EXPECT_EQ(q.poll()->payload, "two");
  EXPECT_EQ(q.poll()->payload, "three");
  EXPECT_FALSE(q.poll());
  EXPECT_EQ(q.publish("four"), 4u);
}

TEST(Queue, NackReturnsMessage) {
  TempDir dir;
  DurableQueue q("q", dir / "q.log");
  q.publish("a");
  const auto m = q.poll();
  EXPECT_EQ(q.ready(), 0u);
  q.nack(m->seq);
  EXPECT_EQ(q.ready(), 1u);
  EXPECT_EQ(q.poll()->seq, m->seq);
  q.ack(m->seq);
  q.ack(m->seq);
  EXPECT_EQ(q.outstanding(), 0u);
}

TEST(Queue, TornTailIsDroppedCorruptMiddleIsError) {
  TempDir dir;
  {
    DurableQueue q("q", dir / "q.log");
    q.publish("a");
    q.publish("b");
  }
  {
    std::ofstream out(dir / "q.log", std::ios::app | std::ios::binary);
    out << R"({"op":"pub","seq":3,"pay)";
  }
  {
    DurableQueue q("q", dir / "q.log");
    EXPECT_EQ(q.outstanding(), 2u);
    q.publish("c");
  }
  {
    DurableQueue q("q", dir / "q.log");
    EXPECT_EQ(q.outstanding(), 3u);
  }
  {
    std::ofstream out(dir / "bad.log", std::ios::binary);
    out << "garbage\n" << R"({"op":"pub","seq":1,"payload":"x"})" << "\n";
  }
  EXPECT_EQ(kind_of([&] { DurableQueue("bad", dir / "bad.log"); }), ErrorKind::DecodeError);
}

TEST(EventLogFile, TornTailIgnored) {
  TempDir dir;
  {
    EventLog log(dir / "e.jsonl");
    log.append({{"a", 1}});
  }
  {
    std::ofstream out(dir / "e.jsonl", std::ios::app);
    out << R"({"a":)";
  }
  EXPECT_EQ(EventLog::read(dir / "e.jsonl").size(), 1u);
  {
    EventLog log(dir / "e.jsonl");
    log.append({{"a", 2}});
  }
  const auto events = EventLog::read(dir / "e.jsonl");
  ASSERT_EQ(events.size(), 2u);
  EXPECT_EQ(events[1].at("a"), 2);
}
