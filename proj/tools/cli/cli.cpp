#include "cli.hpp"

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "config.hpp"
#include "modgate/error.hpp"
#include "modgate/evalkit.hpp"
#include "modgate/http_api.hpp"
#include "modgate/png_io.hpp"
#include "modgate/review.hpp"
#include "modgate/signature.hpp"

namespace modgate::cli {

namespace {

namespace fs = std::filesystem;

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::FormatError, path.string() + " is not valid JSON");
  return j;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::FormatError, "bad line in " + path.string());
    rows.push_back(std::move(j));
  }
  return rows;
}

std::vector<CatalogImage> load_catalog_or_empty(const fs::path& dir) {
  if (!fs::exists(dir / "index.jsonl")) return {};
  return CatalogStore::load(dir);
}

L1Classifier make_l1(const RunConfig& cfg, const CatalogStore& catalog) {
  L1Classifier l1;
  l1.mode = cfg.l1_mode;
  if (cfg.l1_mode == L1Mode::NearestCentroid) {
    std::vector<std::pair<CatalogImage, std::string>> labeled;
    for (const auto& id : catalog.ids()) {
      auto img = catalog.get(id);
      labeled.emplace_back(*img, img->category);
    }
    l1 = fit_centroids(labeled);
  }
  return l1;
}

/// Catalog, detectors and pipeline opened over the workdir.
struct Runtime {
  explicit Runtime(const RunConfig& cfg, FaultPlan faults = {})
      : catalog(load_catalog_or_empty(cfg.dir("catalog"))),
        registry(DetectorRegistry::from_config(cfg.detectors, cfg.workdir)) {
    PipelineOptions options;
    options.limits = cfg.limits;
    options.workers = cfg.workers;
    options.faults = faults;
    options.l1 = make_l1(cfg, catalog);
    pipeline = std::make_unique<ModerationPipeline>(cfg.dir("pipeline"), catalog, cfg.routing, registry,
                                                    cfg.thresholds, options);
  }

  void persist_states(const RunConfig& cfg) const {
    if (fs::exists(cfg.dir("catalog") / "index.jsonl")) catalog.save_index(cfg.dir("catalog"));
  }

  CatalogStore catalog;
  DetectorRegistry registry;
  std::unique_ptr<ModerationPipeline> pipeline;
};

struct Options {
  // synth
  std::optional<std::string> split;
  std::optional<std::size_t> n_per_class;
  std::optional<std::string> synth_out;
  // index query
  std::optional<std::string> image_path;
  std::optional<std::string> image_id;
  std::optional<std::size_t> k;
  // run
  std::optional<std::size_t> crash_after;
  std::size_t redeliver_every = 0;
  // serve
  std::optional<std::string> static_dir;
  // review select
  std::optional<std::size_t> budget;
  std::optional<double> floor;
  // eval / tune
  std::optional<std::string> counts;
  std::optional<std::string> scores;
  std::optional<std::string> dataset;
  std::optional<std::string> detector;
  std::optional<std::string> out_dir;
  std::optional<std::string> policy_out;
};

int cmd_gen_corpus(const RunConfig& cfg, std::ostream& out) {
  CatalogStore store(generate_corpus(cfg.corpus));
  store.save(cfg.dir("catalog"));
  out << nlohmann::json{{"images", store.size()}, {"dir", cfg.dir("catalog").string()}}.dump() << '\n';
  return 0;
}

int cmd_gen_logos(const RunConfig& cfg, std::ostream& out) {
  const auto logos = synth::generate_logos(cfg.logos);
  synth::save_logos(logos, cfg.dir("logos"));
  out << nlohmann::json{{"logos", logos.size()}, {"dir", cfg.dir("logos").string()}}.dump() << '\n';
  return 0;
}

int cmd_synth(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const auto bases = CatalogStore::load(cfg.dir("catalog"));
  const auto logos = synth::load_logos(cfg.dir("logos"));
  synth::DatasetSpec spec = cfg.synth;
  if (o.split) spec.logo_split = *o.split == "test" ? synth::Split::Test : synth::Split::Train;
  if (o.n_per_class) spec.n_per_class = *o.n_per_class;
  const auto samples = synth::generate_dataset(bases, logos, spec);
  const fs::path dir = o.synth_out ? fs::path(*o.synth_out) : cfg.dir("synth");
  synth::write_dataset(samples, dir);
  out << nlohmann::json{{"samples", samples.size()}, {"dir", dir.string()}}.dump() << '\n';
  return 0;
}

int cmd_index_build(const RunConfig& cfg, std::ostream& out) {
  const auto images = CatalogStore::load(cfg.dir("catalog"));
  std::vector<Signature> sigs;
  sigs.reserve(images.size());
  for (const auto& img : images) sigs.push_back(compute_signature(img));
  SimilarityIndex index(fit_binarization(sigs));
  std::vector<std::pair<std::string, BinarySignature>> entries;
  for (std::size_t i = 0; i < images.size(); ++i) {
    entries.emplace_back(images[i].image_id, binarize(sigs[i], index.binarization()));
  }
  index.insert_batch(std::move(entries));
  index.save(cfg.dir("index"));
  out << nlohmann::json{{"entries", index.size()}, {"dimension", index.dimension()}}.dump() << '\n';
  return 0;
}

int cmd_index_query(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const auto index = SimilarityIndex::load(cfg.dir("index"));
  CatalogImage probe;
  if (o.image_path) {
    probe = load_image(*o.image_path);
  } else if (o.image_id) {
    probe = load_image(cfg.dir("catalog") / (*o.image_id + ".png"));
  } else {
    throw Error(ErrorKind::ConfigError, "index query needs --image or --id");
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& n : knn_query(index, probe, o.k.value_or(cfg.index_k))) {
    rows.push_back({{"image_id", n.image_id}, {"distance", n.distance}});
  }
  out << nlohmann::json{{"probe", probe.image_id}, {"neighbors", rows}}.dump() << '\n';
  return 0;
}

int cmd_fit_shallow(const RunConfig& cfg, std::ostream& out) {
  std::vector<LabeledSignature> samples;
  for (const auto& s : synth::read_dataset(cfg.dir("synth"))) {
    const bool positive = s.sample.label == SampleLabel::NonCompliant && s.class_label == cfg.shallow_class;
    samples.push_back({compute_signature(s.sample.image.pixels), positive});
  }
  std::size_t from_review = 0;
  if (fs::exists(cfg.dir("review") / "labeled" / "labeled.jsonl")) {
    LabeledStore store(cfg.dir("review") / "labeled");
    for (const auto& e : store.entries()) {
      samples.push_back({compute_signature(e.sample.image.pixels), e.sample.label == SampleLabel::NonCompliant});
      ++from_review;
    }
  }
  const auto fit = shallow_fit(samples, cfg.shallow);
  std::size_t correct = 0;
  for (const auto& s : samples) correct += (shallow_score(fit.model, s.signature) >= 0.5) == s.positive;
  const fs::path path = cfg.dir("models") / ("shallow_" + cfg.shallow_class + ".json");
  fs::create_directories(path.parent_path());
  save_shallow_model(fit.model, path);
  out << nlohmann::json{{"model", path.string()},
                        {"samples", samples.size()},
                        {"from_review", from_review},
                        {"final_loss", fit.loss_history.empty() ? 0.0 : fit.loss_history.back()},
                        {"train_accuracy", samples.empty() ? 0.0 : double(correct) / double(samples.size())}}
             .dump()
      << '\n';
  return 0;
}

int cmd_route_check(const RunConfig& cfg, std::ostream& out) {
  const auto images = load_catalog_or_empty(cfg.dir("catalog"));
  std::map<std::string, std::size_t> per_category;
  std::size_t expected = 0;
  std::size_t unknown = 0;
  for (const auto& img : images) {
    const std::string cat = cfg.routing.has_category(img.category) ? img.category : kRestCategory;
    unknown += cat != img.category;
    ++per_category[cat];
    expected += route(cfg.routing, cat).size();
  }
  out << nlohmann::json{{"routing", cfg.routing.to_json()},
                        {"detectors", cfg.detectors.size()},
                        {"images", images.size()},
                        {"per_category", per_category},
                        {"unknown_category", unknown},
                        {"expected_l2_invocations", expected},
                        {"all_detectors_baseline", images.size() * cfg.detectors.size()}}
             .dump(2)
      << '\n';
  return 0;
}

int cmd_run(const RunConfig& cfg, const Options& o, std::ostream& out) {
  FaultPlan faults;
  faults.crash_after_verdicts = o.crash_after;
  faults.redeliver_every = o.redeliver_every;
  Runtime rt(cfg, faults);
  const RunReport report = rt.pipeline->run();
  rt.persist_states(cfg);
  write_json(cfg.dir("pipeline") / "report.json", report.to_json());
  out << report.to_json().dump(2) << '\n';
  return report.crashed ? 3 : 0;
}

int cmd_serve(const RunConfig& cfg, const Options& o, std::ostream& out) {
  Runtime rt(cfg);
  ReviewService review(rt.catalog, rt.pipeline.get(), cfg.dir("review"));
  std::optional<fs::path> static_dir;
  if (o.static_dir) static_dir = *o.static_dir;
  ApiServer server(ApiContext{rt.catalog, *rt.pipeline, review, static_dir});
  const int port = server.bind(cfg.bind_host, cfg.bind_port);
  out << nlohmann::json{{"listening", cfg.bind_host + ":" + std::to_string(port)}}.dump() << std::endl;
  server.listen();
  rt.persist_states(cfg);
  return 0;
}

int cmd_review_select(const RunConfig& cfg, const Options& o, std::ostream& out) {
  Runtime rt(cfg);
  ReviewService review(rt.catalog, rt.pipeline.get(), cfg.dir("review"));
  const auto tasks = review.select(o.budget.value_or(cfg.review_budget), o.floor.value_or(cfg.review_floor));
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& t : tasks) rows.push_back(task_json(t));
  out << nlohmann::json{{"selected", tasks.size()}, {"tasks", rows}, {"stats", review.stats().to_json()}}.dump(2)
      << '\n';
  return 0;
}

ConfusionCounts counts_from_json(const nlohmann::json& row) {
  return {row.value("tp", std::uint64_t{0}), row.value("fp", std::uint64_t{0}), row.value("tn", std::uint64_t{0}),
          row.value("fn", std::uint64_t{0})};
}

void write_curves(const fs::path& dir, std::span<const ScoredLabel> scores) {
  const auto pos = std::count_if(scores.begin(), scores.end(), [](const ScoredLabel& s) { return s.truth; });
  if (pos > 0 && static_cast<std::size_t>(pos) < scores.size()) write_roc_csv(dir / "roc.csv", roc(scores));
  const auto curve = f1_curve(scores);
  write_f1_csv(dir / "f1_curve.csv", curve);
}

int cmd_eval(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const fs::path dir = o.out_dir ? fs::path(*o.out_dir) : cfg.dir("eval");
  fs::create_directories(dir);
  nlohmann::json report;

  if (o.counts) {
    const auto fixture = read_json(*o.counts);
    std::vector<NamedCounts> rows;
    for (const auto& row : fixture.at("rows")) rows.push_back({row.at("name").get<std::string>(), counts_from_json(row)});
    report = counts_report(rows);
  } else if (o.scores) {
    std::vector<ScoredLabel> scores;
    for (const auto& row : read_jsonl(*o.scores)) scores.push_back({row.at("score").get<double>(), row.at("truth").get<bool>()});
    report = curve_report(scores);
    write_curves(dir, scores);
  } else {
    const auto registry = DetectorRegistry::from_config(cfg.detectors, cfg.workdir);
    std::string detector_id;
    if (o.detector) {
      detector_id = *o.detector;
    } else if (registry.size() == 1) {
      detector_id = registry.ids().front();
    } else {
      throw Error(ErrorKind::ConfigError, "eval over a dataset needs --detector when several are registered");
    }
    const auto detector = registry.find(detector_id);
    if (!detector) throw Error(ErrorKind::NotFound, "no detector '" + detector_id + "'");
    const auto classes = detector->classes();
    const auto samples = synth::read_dataset(o.dataset ? fs::path(*o.dataset) : cfg.dir("synth"));

    std::vector<ScoredLabel> scores;
    std::vector<DetectorOutput> outputs;
    std::ofstream scores_out(dir / "scores.jsonl", std::ios::trunc);
    for (const auto& s : samples) {
      const bool truth = s.sample.label == SampleLabel::NonCompliant &&
                         std::find(classes.begin(), classes.end(), s.class_label) != classes.end();
      outputs.push_back(detector->detect(s.sample.image.pixels));
      scores.push_back({outputs.back().confidence, truth});
      scores_out << nlohmann::json{{"image_id", s.sample.image.image_id},
                                   {"detector_id", detector_id},
                                   {"category", s.sample.image.category},
                                   {"score", outputs.back().confidence},
                                   {"truth", truth}}
                        .dump()
                 << '\n';
    }
    report = curve_report(scores);
    report["detector_id"] = detector_id;
    write_curves(dir, scores);

    if (auto best = best_operating_point(scores, Objective::max_f1())) {
      ConfusionCounts boxes;
      std::vector<ImageOutcome> outcomes;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const bool predicted = scores[i].score >= best->threshold;
        outcomes.push_back({samples[i].sample.image.category, predicted, scores[i].truth});
        std::vector<BoundingBox> truth_boxes;
        if (scores[i].truth) truth_boxes = samples[i].sample.boxes;
        std::vector<ScoredBox> predicted_boxes;
        if (predicted) predicted_boxes = outputs[i].boxes;
        boxes += match_boxes(predicted_boxes, truth_boxes, cfg.iou_min);
      }
      const NamedCounts image_row{"image_level", counts_at(scores, best->threshold)};
      const NamedCounts box_row{"box_level", boxes};
      const std::vector<NamedCounts> rows{image_row, box_row};
      report["at_best_threshold"] = counts_report(rows);
      report["at_best_threshold"]["threshold"] = best->threshold;
      report["at_best_threshold"]["iou_min"] = cfg.iou_min;
      const auto fpr = per_category_fpr(outcomes);
      nlohmann::json cats = nlohmann::json::object();
      for (const auto& [cat, c] : fpr.per_category) {
        cats[cat] = {{"fp", c.fp}, {"tn", c.tn}, {"fpr", c.fpr ? nlohmann::json(*c.fpr) : nlohmann::json(nullptr)}};
      }
      report["per_category_fpr"] = cats;
      report["overall_fpr"] = fpr.overall ? nlohmann::json(*fpr.overall) : nlohmann::json(nullptr);
    }
  }
  write_json(dir / "report.json", report);
  out << report.dump(2) << '\n';
  return 0;
}

int cmd_tune(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const fs::path path = o.scores ? fs::path(*o.scores) : cfg.dir("eval") / "scores.jsonl";
  std::map<ScoreKey, std::vector<ScoredLabel>> scores;
  for (const auto& row : read_jsonl(path)) {
    scores[{row.at("detector_id").get<std::string>(), row.value("category", std::string{})}].push_back(
        {row.at("score").get<double>(), row.at("truth").get<bool>()});
  }
  const auto result = tune_thresholds(scores, cfg.tune);
  const fs::path policy_path = o.policy_out ? fs::path(*o.policy_out) : cfg.dir("models") / "policy.json";
  write_json(policy_path, result.policy.to_json());
  nlohmann::json warnings = nlohmann::json::array();
  for (const auto& w : result.warnings) {
    warnings.push_back({{"detector_id", w.detector_id}, {"category", w.category}, {"message", w.message}});
  }
  nlohmann::json chosen = nlohmann::json::array();
  for (const auto& [key, p] : result.chosen) {
    chosen.push_back({{"detector_id", key.first},
                      {"category", key.second},
                      {"t_block", p.threshold},
                      {"f1", p.f1},
                      {"precision", p.precision},
                      {"recall", p.recall}});
  }
  out << nlohmann::json{{"policy", result.policy.to_json()}, {"policy_path", policy_path.string()},
                        {"chosen", chosen}, {"warnings", warnings}}
             .dump(2)
      << '\n';
  return 0;
}

void report_error(std::ostream& err, std::string_view kind, const std::string& message) {
  err << nlohmann::json{{"error", std::string(kind)}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
        const std::map<std::string, std::string>& env) {
  CLI::App app{"modgate: desk-scale content moderation pipeline"};
  app.require_subcommand(1);
  FlagOverrides flags;
  Options o;
  app.add_option("--config", flags.config_path, "JSON config file");
  app.add_option("--seed", flags.seed, "Master seed");
  app.add_option("--workers", flags.workers, "Worker threads for run/serve");
  app.add_option("--bind", flags.bind, "host:port for serve");
  app.add_option("--workdir", flags.workdir, "Working directory");

  auto* gen_corpus = app.add_subcommand("gen-corpus", "Generate the procedural catalog");
  auto* gen_logos = app.add_subcommand("gen-logos", "Generate logo assets");
  auto* synth_cmd = app.add_subcommand("synth", "Superimpose logos onto catalog images");
  synth_cmd->add_option("--split", o.split, "Logo split to draw from")->check(CLI::IsMember({"train", "test"}));
  synth_cmd->add_option("--n-per-class", o.n_per_class, "Positives per class");
  synth_cmd->add_option("--out", o.synth_out, "Output directory");

  auto* index_cmd = app.add_subcommand("index", "Similarity index");
  index_cmd->require_subcommand(1);
  auto* index_build = index_cmd->add_subcommand("build", "Build the Hamming index over the catalog");
  auto* index_query = index_cmd->add_subcommand("query", "k-NN query");
  index_query->add_option("--image", o.image_path, "PNG file to query with");
  index_query->add_option("--id", o.image_id, "Catalog image id to query with");
  index_query->add_option("-k", o.k, "Neighbors");

  auto* fit_cmd = app.add_subcommand("fit", "Fit a detector");
  fit_cmd->require_subcommand(1);
  auto* fit_shallow = fit_cmd->add_subcommand("shallow", "Logistic regression on signatures");

  auto* route_check = app.add_subcommand("route-check", "Check the routing table against the detectors");
  auto* run_cmd = app.add_subcommand("run", "Run the moderation pipeline over Pending images");
  run_cmd->add_option("--crash-after", o.crash_after, "Inject a crash after this many verdict writes");
  run_cmd->add_option("--redeliver-every", o.redeliver_every, "Leave every n-th message unacked once");
  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
  serve_cmd->add_option("--static-dir", o.static_dir, "Static assets served under /");

  auto* review_cmd = app.add_subcommand("review", "Human review");
  review_cmd->require_subcommand(1);
  auto* review_select = review_cmd->add_subcommand("select", "Open review tasks within a budget");
  review_select->add_option("--budget", o.budget, "Maximum tasks to open");
  review_select->add_option("--floor", o.floor, "Minimum confidence");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate counts, scores or a detector on a dataset");
  eval_cmd->add_option("--counts", o.counts, "JSON fixture of confusion counts");
  eval_cmd->add_option("--scores", o.scores, "JSONL of {score, truth}");
  eval_cmd->add_option("--dataset", o.dataset, "Synthetic dataset directory");
  eval_cmd->add_option("--detector", o.detector, "Detector id");
  eval_cmd->add_option("--out", o.out_dir, "Output directory");

  auto* tune_cmd = app.add_subcommand("tune", "Tune thresholds from scores");
  tune_cmd->add_option("--scores", o.scores, "JSONL of {detector_id, category, score, truth}");
  tune_cmd->add_option("--out", o.policy_out, "Policy output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    report_error(err, "UsageError", e.what());
    return 2;
  }

  try {
    const RunConfig cfg = parse_config(merged_config(flags, env));
    if (gen_corpus->parsed()) return cmd_gen_corpus(cfg, out);
    if (gen_logos->parsed()) return cmd_gen_logos(cfg, out);
    if (synth_cmd->parsed()) return cmd_synth(cfg, o, out);
    if (index_build->parsed()) return cmd_index_build(cfg, out);
    if (index_query->parsed()) return cmd_index_query(cfg, o, out);
    if (fit_shallow->parsed()) return cmd_fit_shallow(cfg, out);
    if (route_check->parsed()) return cmd_route_check(cfg, out);
    if (run_cmd->parsed()) return cmd_run(cfg, o, out);
    if (serve_cmd->parsed()) return cmd_serve(cfg, o, out);
    if (review_select->parsed()) return cmd_review_select(cfg, o, out);
    if (eval_cmd->parsed()) return cmd_eval(cfg, o, out);
    if (tune_cmd->parsed()) return cmd_tune(cfg, o, out);
    report_error(err, "UsageError", "no subcommand");
    return 2;
  } catch (const Error& e) {
    report_error(err, to_string(e.kind()), e.what());
    return e.kind() == ErrorKind::ConfigError || e.kind() == ErrorKind::InvalidConfig ? 2 : 1;
  } catch (const std::exception& e) {
    report_error(err, "Internal", e.what());
    return 1;
  }
}

}  // namespace modgate::cli
