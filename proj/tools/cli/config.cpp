#include "config.hpp"

#include <fstream>
#include <set>

#include "modgate/error.hpp"

extern char** environ;

namespace modgate::cli {

nlohmann::json default_config() {
  const std::vector<double> scales{0.2, 0.3, 0.4, 0.5};
  auto logo_detector = [&](const std::string& cls) {
    return nlohmann::json{{"kind", "template"},
                          {"class", cls},
                          {"params", {{"logos_dir", "logos"}, {"scales", scales}, {"resampling", "bilinear"}}}};
  };
  return {
      {"workdir", "modgate-work"},
      {"seed", 42},
      {"workers", 4},
      {"bind", "127.0.0.1:8080"},
      {"corpus",
       {{"n_images", 200},
        {"categories", {"apparel", "electronics", "home", "toys", "beauty", "rest"}},
        {"width", 64},
        {"height", 64}}},
      {"logos",
       {{"classes", {"acme", "zenith"}},
        {"variants_per_class", 4},
        {"lookalikes_per_class", 2},
        {"train_fraction", 0.75},
        {"size", 64}}},
      {"synth",
       {{"n_per_class", 50},
        {"neg_ratio", 1.0},
        {"lookalike_fraction", 0.5},
        {"logo_split", "train"},
        {"transform",
         {{"scale_min", 0.15},
          {"scale_max", 0.5},
          {"rotation_max_deg", 20.0},
          {"shear_max", 0.1},
          {"flip_probability", 0.5},
          {"resampling", "bilinear"}}}}},
      {"index", {{"k", 10}}},
      {"detectors",
       {{"logo_acme", logo_detector("acme")},
        {"logo_zenith", logo_detector("zenith")},
        {"skin", {{"kind", "skin"}, {"class", "nudity"}}}}},
      {"routing",
       {{"apparel", {"logo_acme", "logo_zenith"}},
        {"electronics", {"logo_acme"}},
        {"home", {"logo_zenith"}},
        {"toys", {"logo_acme", "logo_zenith"}},
        {"beauty", {"skin"}},
        {"rest", nlohmann::json::array()}}},
      {"thresholds", {{"global", {{"t_block", 0.9}, {"t_review", 0.5}}}}},
      {"limits", {{"min_dim", 32}, {"max_dim", 4096}, {"allowed_formats", {"png"}}}},
      {"l1", {{"mode", "metadata"}}},
      {"review", {{"budget", 20}, {"floor", 0.5}}},
      {"eval", {{"iou_min", 0.5}}},
      {"tune", {{"objective", "max_f1"}, {"min_precision", 1.0}, {"review_floor", 0.5}, {"min_positives", 1}}},
      {"fit", {{"shallow", {{"class", "acme"}, {"lr", 0.5}, {"epochs", 500}, {"l2", 0.0}}}}},
  };
}

std::map<std::string, std::string> process_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    const std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq != std::string::npos) env[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return env;
}

nlohmann::json env_overrides(const std::map<std::string, std::string>& env) {
  static const std::string prefix = "MODGATE_";
  nlohmann::json patch = nlohmann::json::object();
  for (const auto& [key, value] : env) {
    if (key.rfind(prefix, 0) != 0 || key.size() == prefix.size()) continue;
    std::string rest = key.substr(prefix.size());
    for (auto& ch : rest) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    std::string pointer;
    std::size_t start = 0;
    while (true) {
      const auto sep = rest.find("__", start);
      pointer += "/" + rest.substr(start, sep == std::string::npos ? std::string::npos : sep - start);
      if (sep == std::string::npos) break;
      start = sep + 2;
    }
    auto parsed = nlohmann::json::parse(value, nullptr, false);
    patch[nlohmann::json::json_pointer(pointer)] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
  }
  return patch;
}

nlohmann::json merged_config(const FlagOverrides& flags, const std::map<std::string, std::string>& env) {
  nlohmann::json doc = default_config();
  if (flags.config_path) {
    std::ifstream in(*flags.config_path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot read config file " + *flags.config_path);
    auto file = nlohmann::json::parse(in, nullptr, false);
    if (file.is_discarded() || !file.is_object()) {
      throw Error(ErrorKind::ConfigError, "config file " + *flags.config_path + " is not a JSON object");
    }
    // Whole-object sections like detectors and routing replace the default
    // instead of merging into it.
    for (const char* key : {"detectors", "routing"}) {
      if (file.contains(key)) doc[key] = nlohmann::json::object();
    }
    doc.merge_patch(file);
  }
  doc.merge_patch(env_overrides(env));
  if (flags.seed) doc["seed"] = *flags.seed;
  if (flags.workers) doc["workers"] = *flags.workers;
  if (flags.bind) doc["bind"] = *flags.bind;
  if (flags.workdir) doc["workdir"] = *flags.workdir;
  return doc;
}

namespace {

class Checker {
 public:
  explicit Checker(const nlohmann::json& doc) : doc_(doc) {}

  const nlohmann::json* at(const std::string& pointer) {
    const nlohmann::json::json_pointer p(pointer);
    if (!doc_.contains(p)) {
      errors.push_back(pointer + ": missing");
      return nullptr;
    }
    return &doc_.at(p);
  }

  void integer(const std::string& pointer, std::int64_t lo, std::int64_t hi) {
    const auto* v = at(pointer);
    if (v == nullptr) return;
    if (!v->is_number_integer()) {
      errors.push_back(pointer + ": expected an integer");
      return;
    }
    const auto x = v->is_number_unsigned() ? static_cast<std::int64_t>(std::min<std::uint64_t>(
                                                 v->get<std::uint64_t>(), static_cast<std::uint64_t>(INT64_MAX)))
                                           : v->get<std::int64_t>();
    if (x < lo || x > hi) {
      errors.push_back(pointer + ": " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                       std::to_string(hi) + "]");
    }
  }

  void unsigned_integer(const std::string& pointer) {
    const auto* v = at(pointer);
    if (v != nullptr && !(v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0))) {
      errors.push_back(pointer + ": expected a non-negative integer");
    }
  }

  void number(const std::string& pointer, double lo, double hi, bool lo_open = false) {
    const auto* v = at(pointer);
    if (v == nullptr) return;
    if (!v->is_number()) {
      errors.push_back(pointer + ": expected a number");
      return;
    }
    const double x = v->get<double>();
    if (!(lo_open ? x > lo : x >= lo) || !(x <= hi)) {
      errors.push_back(pointer + ": " + v->dump() + " outside " + (lo_open ? "(" : "[") + std::to_string(lo) +
                       ", " + std::to_string(hi) + "]");
    }
  }

  void one_of(const std::string& pointer, std::initializer_list<const char*> options) {
    const auto* v = at(pointer);
    if (v == nullptr) return;
    if (v->is_string()) {
      for (const char* o : options) {
        if (v->get<std::string>() == o) return;
      }
    }
    std::string allowed;
    for (const char* o : options) allowed += (allowed.empty() ? "" : " | ") + std::string(o);
    errors.push_back(pointer + ": expected one of " + allowed);
  }

  void string_list(const std::string& pointer, bool allow_empty) {
    const auto* v = at(pointer);
    if (v == nullptr) return;
    if (!v->is_array()) {
      errors.push_back(pointer + ": expected an array of strings");
      return;
    }
    if (!allow_empty && v->empty()) errors.push_back(pointer + ": must not be empty");
    std::set<std::string> seen;
    for (const auto& item : *v) {
      if (!item.is_string() || item.get<std::string>().empty()) {
        errors.push_back(pointer + ": entries must be non-empty strings");
        return;
      }
      if (!seen.insert(item.get<std::string>()).second) {
        errors.push_back(pointer + ": duplicate entry '" + item.get<std::string>() + "'");
      }
    }
  }

  std::vector<std::string> errors;

 private:
  const nlohmann::json& doc_;
};

std::pair<std::string, int> split_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos || colon == 0) return {"", -1};
  try {
    std::size_t used = 0;
    const int port = std::stoi(bind.substr(colon + 1), &used);
    if (used != bind.size() - colon - 1 || port < 0 || port > 65535) return {"", -1};
    return {bind.substr(0, colon), port};
  } catch (const std::exception&) {
    return {"", -1};
  }
}

synth::TransformConfig transform_from(const nlohmann::json& t) {
  synth::TransformConfig c;
  c.scale_min = t.value("scale_min", c.scale_min);
  c.scale_max = t.value("scale_max", c.scale_max);
  c.rotation_max_deg = t.value("rotation_max_deg", c.rotation_max_deg);
  c.shear_max = t.value("shear_max", c.shear_max);
  c.flip_probability = t.value("flip_probability", c.flip_probability);
  c.resampling = t.value("resampling", std::string("bilinear")) == "nearest" ? Resampling::Nearest : Resampling::Bilinear;
  return c;
}

}  // namespace

std::vector<std::string> validate_config(const nlohmann::json& doc) {
  if (!doc.is_object()) return {"config must be a JSON object"};
  Checker c(doc);

  if (const auto* w = c.at("/workdir"); w && (!w->is_string() || w->get<std::string>().empty())) {
    c.errors.push_back("/workdir: expected a non-empty path");
  }
  c.unsigned_integer("/seed");
  c.integer("/workers", 1, 256);
  if (const auto* b = c.at("/bind")) {
    if (!b->is_string() || split_bind(b->get<std::string>()).second < 0) {
      c.errors.push_back("/bind: expected host:port with port in [0, 65535]");
    }
  }

  c.integer("/corpus/n_images", 0, 10'000'000);
  c.string_list("/corpus/categories", false);
  c.integer("/corpus/width", 1, 8192);
  c.integer("/corpus/height", 1, 8192);

  c.string_list("/logos/classes", false);
  c.integer("/logos/variants_per_class", 1, 1000);
  c.integer("/logos/lookalikes_per_class", 0, 1000);
  c.number("/logos/train_fraction", 0.0, 1.0, true);
  c.integer("/logos/size", 16, 1024);

  c.integer("/synth/n_per_class", 0, 10'000'000);
  c.number("/synth/neg_ratio", 0.0, 1000.0);
  c.number("/synth/lookalike_fraction", 0.0, 1.0);
  c.one_of("/synth/logo_split", {"train", "test"});
  c.one_of("/synth/transform/resampling", {"nearest", "bilinear"});
  for (const char* key : {"scale_min", "scale_max", "rotation_max_deg", "shear_max", "flip_probability"}) {
    c.number(std::string("/synth/transform/") + key, -1e9, 1e9);
  }
  if (doc.contains("synth") && doc["synth"].contains("transform") && doc["synth"]["transform"].is_object()) {
    try {
      for (const auto& v : transform_from(doc["synth"]["transform"]).violations()) {
        c.errors.push_back("/synth/transform: " + v);
      }
    } catch (const nlohmann::json::exception&) {
    }
  }

  c.integer("/index/k", 1, 1'000'000);

  std::set<std::string> detector_ids;
  if (const auto* d = c.at("/detectors")) {
    if (!d->is_object()) {
      c.errors.push_back("/detectors: expected an object");
    } else {
      for (const auto& [id, entry] : d->items()) {
        detector_ids.insert(id);
        const std::string where = "/detectors/" + id;
        if (!entry.is_object() || !entry.contains("kind") || !entry["kind"].is_string()) {
          c.errors.push_back(where + ": expected an object with a kind");
          continue;
        }
        const auto kind = entry["kind"].get<std::string>();
        const auto params = entry.value("params", nlohmann::json::object());
        if (kind == "template") {
          if (!entry.contains("class") || !entry["class"].is_string()) c.errors.push_back(where + "/class: missing");
          if (!params.contains("logos_dir") || !params["logos_dir"].is_string()) {
            c.errors.push_back(where + "/params/logos_dir: missing");
          }
          bool scales_ok = params.contains("scales") && params["scales"].is_array() && !params["scales"].empty();
          if (scales_ok) {
            for (const auto& s : params["scales"]) scales_ok = scales_ok && s.is_number() && s.get<double>() > 0.0;
          }
          if (!scales_ok) c.errors.push_back(where + "/params/scales: expected a non-empty list of positive numbers");
          const auto r = params.value("resampling", std::string("nearest"));
          if (r != "nearest" && r != "bilinear") c.errors.push_back(where + "/params/resampling: nearest | bilinear");
        } else if (kind == "shallow") {
          if (!params.contains("model") || !params["model"].is_string()) {
            c.errors.push_back(where + "/params/model: missing");
          }
        } else if (kind != "skin") {
          c.errors.push_back(where + "/kind: unknown kind '" + kind + "'");
        }
      }
    }
  }

  if (const auto* r = c.at("/routing")) {
    if (!r->is_object()) {
      c.errors.push_back("/routing: expected an object");
    } else {
      for (const auto& [cat, dets] : r->items()) {
        if (!dets.is_array()) {
          c.errors.push_back("/routing/" + cat + ": expected an array");
          continue;
        }
        if (cat == kRestCategory && !dets.empty()) c.errors.push_back("/routing/rest: must route to no detectors");
        for (const auto& d : dets) {
          if (!d.is_string() || !detector_ids.count(d.get<std::string>())) {
            c.errors.push_back("/routing/" + cat + ": unregistered detector " + d.dump());
          }
        }
      }
    }
  }

  if (const auto* t = c.at("/thresholds")) {
    try {
      ThresholdPolicy::from_json(*t);
    } catch (const Error& e) {
      c.errors.push_back(std::string("/thresholds: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
      c.errors.push_back(std::string("/thresholds: ") + e.what());
    }
  }

  c.integer("/limits/min_dim", 1, 1'000'000);
  c.integer("/limits/max_dim", 1, 1'000'000);
  if (doc.contains("limits") && doc["limits"].is_object()) {
    const auto& l = doc["limits"];
    if (l.value("min_dim", nlohmann::json()).is_number_integer() && l.value("max_dim", nlohmann::json()).is_number_integer() &&
        l["min_dim"].get<std::int64_t>() > l["max_dim"].get<std::int64_t>()) {
      c.errors.push_back("/limits: min_dim exceeds max_dim");
    }
  }
  c.string_list("/limits/allowed_formats", false);
  c.one_of("/l1/mode", {"metadata", "centroid"});

  c.integer("/review/budget", 0, 10'000'000);
  c.number("/review/floor", 0.0, 1.0);
  c.number("/eval/iou_min", 0.0, 1.0, true);
  c.one_of("/tune/objective", {"max_f1", "recall_at_precision"});
  c.number("/tune/min_precision", 0.0, 1.0);
  c.number("/tune/review_floor", 0.0, 1.0);
  c.integer("/tune/min_positives", 1, 1'000'000);
  c.number("/fit/shallow/lr", 0.0, 1e6, true);
  c.integer("/fit/shallow/epochs", 1, 10'000'000);
  c.number("/fit/shallow/l2", 0.0, 1e6);
  return c.errors;
}

RunConfig parse_config(const nlohmann::json& doc) {
  const auto errors = validate_config(doc);
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " config violation(s)";
    for (const auto& e : errors) msg += "\n  " + e;
    throw Error(ErrorKind::ConfigError, msg);
  }
  RunConfig c;
  c.workdir = doc["workdir"].get<std::string>();
  c.seed = doc["seed"].get<std::uint64_t>();
  c.workers = doc["workers"].get<unsigned>();
  std::tie(c.bind_host, c.bind_port) = split_bind(doc["bind"].get<std::string>());

  const auto& corpus = doc["corpus"];
  c.corpus.n_images = corpus["n_images"].get<std::size_t>();
  c.corpus.categories = corpus["categories"].get<std::vector<std::string>>();
  c.corpus.width = corpus["width"].get<int>();
  c.corpus.height = corpus["height"].get<int>();
  c.corpus.seed = c.seed;

  const auto& logos = doc["logos"];
  c.logos.classes = logos["classes"].get<std::vector<std::string>>();
  c.logos.variants_per_class = logos["variants_per_class"].get<std::size_t>();
  c.logos.lookalikes_per_class = logos["lookalikes_per_class"].get<std::size_t>();
  c.logos.train_fraction = logos["train_fraction"].get<double>();
  c.logos.size = logos["size"].get<int>();
  c.logos.seed = c.seed;

  const auto& s = doc["synth"];
  c.synth.n_per_class = s["n_per_class"].get<std::size_t>();
  c.synth.neg_ratio = s["neg_ratio"].get<double>();
  c.synth.lookalike_fraction = s["lookalike_fraction"].get<double>();
  c.synth.logo_split = s["logo_split"].get<std::string>() == "test" ? synth::Split::Test : synth::Split::Train;
  c.synth.transform = transform_from(s["transform"]);
  c.synth.seed = c.seed;
  c.synth.threads = 1;

  c.index_k = doc["index"]["k"].get<std::size_t>();
  c.detectors = doc["detectors"];
  c.routing = RoutingTable::from_json(doc["routing"]);
  c.thresholds = ThresholdPolicy::from_json(doc["thresholds"]);

  const auto& l = doc["limits"];
  c.limits.min_dim = l["min_dim"].get<int>();
  c.limits.max_dim = l["max_dim"].get<int>();
  const auto formats = l["allowed_formats"].get<std::vector<std::string>>();
  c.limits.allowed_formats = {formats.begin(), formats.end()};
  c.l1_mode = doc["l1"]["mode"].get<std::string>() == "centroid" ? L1Mode::NearestCentroid : L1Mode::MetadataTrusted;

  c.review_budget = doc["review"]["budget"].get<std::size_t>();
  c.review_floor = doc["review"]["floor"].get<double>();
  c.iou_min = doc["eval"]["iou_min"].get<double>();

  const auto& t = doc["tune"];
  c.tune.objective = t["objective"].get<std::string>() == "recall_at_precision"
                         ? Objective::recall_at_precision(t["min_precision"].get<double>())
                         : Objective::max_f1();
  c.tune.review_floor = t["review_floor"].get<double>();
  c.tune.min_positives = t["min_positives"].get<std::size_t>();
  c.tune.fallback = c.thresholds.global();

  const auto& f = doc["fit"]["shallow"];
  c.shallow.learning_rate = f["lr"].get<double>();
  c.shallow.epochs = f["epochs"].get<int>();
  c.shallow.l2 = f["l2"].get<double>();
  c.shallow_class = f.value("class", std::string{});
  return c;
}

}  // namespace modgate::cli
