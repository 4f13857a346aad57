#include "modgate/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <numbers>
#include <thread>

#include "modgate/error.hpp"
#include "modgate/png_io.hpp"

namespace modgate::synth {

std::string_view to_string(Compliance compliance) {
  return compliance == Compliance::NonCompliant ? "NonCompliant" : "CompliantLookalike";
}

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

namespace {

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw Error(ErrorKind::DecodeError, "unknown split '" + std::string(text) + "'");
}

Compliance parse_compliance(std::string_view text) {
  if (text == "NonCompliant") return Compliance::NonCompliant;
  if (text == "CompliantLookalike") return Compliance::CompliantLookalike;
  throw Error(ErrorKind::DecodeError, "unknown compliance '" + std::string(text) + "'");
}

bool fits(CanvasSize canvas, CanvasSize base) {
  return canvas.width <= base.width && canvas.height <= base.height;
}

}  // namespace

std::vector<std::string> TransformConfig::violations() const {
  std::vector<std::string> out;
  if (!(scale_min > 0.0)) out.emplace_back("transform.scale_min must be > 0");
  if (!(scale_max >= scale_min)) out.emplace_back("transform.scale_max must be >= scale_min");
  if (!(rotation_max_deg >= 0.0)) out.emplace_back("transform.rotation_max_deg must be >= 0");
  if (!(shear_max >= 0.0)) out.emplace_back("transform.shear_max must be >= 0");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    out.emplace_back("transform.flip_probability must be in [0, 1]");
  }
  return out;
}

Raster tight_crop(const Raster& logo) {
  const auto box = alpha_footprint(logo, 0);
  if (!box) {
    throw Error(ErrorKind::EmptyLogo, "logo has no pixel with alpha > 0");
  }
  return logo.crop(box->x_min, box->y_min, box->width(), box->height());
}

TransformParams sample_transform(Rng& rng, const TransformConfig& config, CanvasSize logo,
                                 CanvasSize base) {
  if (const auto v = config.violations(); !v.empty()) {
    throw Error(ErrorKind::InvalidConfig, v.front());
  }
  if (!fits(warped_canvas_size(logo.width, logo.height, WarpParams{config.scale_min}), base)) {
    throw Error(ErrorKind::LogoTooLarge, "logo " + std::to_string(logo.width) + "x" +
                                             std::to_string(logo.height) + " does not fit base " +
                                             std::to_string(base.width) + "x" +
                                             std::to_string(base.height) + " at minimum scale");
  }
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    TransformParams t;
    t.scale = rng.uniform(config.scale_min, config.scale_max);
    t.rotation_deg = rng.uniform(-config.rotation_max_deg, config.rotation_max_deg);
    t.flip_h = rng.bernoulli(config.flip_probability);
    t.shear = rng.uniform(-config.shear_max, config.shear_max);
    const CanvasSize canvas = warped_canvas_size(logo.width, logo.height, t.warp());
    if (!fits(canvas, base)) continue;
    t.translate_x = static_cast<int>(rng.uniform_int(0, base.width - canvas.width));
    t.translate_y = static_cast<int>(rng.uniform_int(0, base.height - canvas.height));
    return t;
  }
  throw Error(ErrorKind::LogoTooLarge, "no sampled transform fits the base image");
}

Composite composite_logo(const Raster& base, const Raster& logo, const TransformParams& t,
                         Resampling resampling) {
  const Raster canvas = warp(logo, t.warp(), resampling);
  Composite out{base, std::nullopt};
  composite_onto(out.image, canvas, t.translate_x, t.translate_y);
  if (auto box = alpha_footprint(canvas)) {
    box->x_min += t.translate_x;
    box->x_max += t.translate_x;
    box->y_min += t.translate_y;
    box->y_max += t.translate_y;
    out.footprint = box;
  }
  return out;
}

AnnotatedSample superimpose(const CatalogImage& base, const LogoAsset& logo,
                            const TransformParams& t, Resampling resampling) {
  Composite c = composite_logo(base.pixels, logo.pixels, t, resampling);
  if (!c.footprint) {
    throw Error(ErrorKind::EmptyLogo, "transformed logo " + logo.logo_id + " has no visible footprint");
  }
  AnnotatedSample sample;
  sample.image = base;
  sample.image.pixels = std::move(c.image);
  sample.image.state = ImageState::Pending;
  sample.provenance = Provenance::Synthetic;
  if (logo.compliance == Compliance::NonCompliant) {
    sample.label = SampleLabel::NonCompliant;
    c.footprint->class_label = logo.class_label;
    sample.boxes.push_back(*c.footprint);
  } else {
    sample.label = SampleLabel::Compliant;
  }
  return sample;
}

namespace {

std::string sample_id(const std::string& cls, const char* kind, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%s-%06zu", kind, n);
  return "syn-" + cls + buf;
}

struct Job {
  std::string class_label;
  bool positive = false;
  bool lookalike = false;
  std::size_t ordinal = 0;
};

SyntheticSample run_job(const Job& job, std::size_t index, std::span<const CatalogImage> bases,
                        const std::vector<const LogoAsset*>& pool, const DatasetSpec& spec) {
  Rng rng = Rng::derive(spec.seed, index);
  const auto& base = bases[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(bases.size()) - 1))];
  SyntheticSample out;
  out.class_label = job.class_label;
  out.base_id = base.image_id;
  const std::string id = sample_id(job.class_label, job.positive ? "pos" : "neg", job.ordinal);
  if (!job.positive && !job.lookalike) {
    out.sample.image = base;
    out.sample.image.state = ImageState::Pending;
    out.sample.label = SampleLabel::Compliant;
    out.sample.provenance = Provenance::Synthetic;
  } else {
    const LogoAsset& logo = *pool[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
    const TransformParams t =
        sample_transform(rng, spec.transform, {logo.pixels.width(), logo.pixels.height()},
                         {base.pixels.width(), base.pixels.height()});
    out.sample = superimpose(base, logo, t, spec.transform.resampling);
    out.logo_id = logo.logo_id;
    out.logo_split = logo.split;
    out.transform = t;
  }
  out.sample.image.image_id = id;
  return out;
}

}  // namespace

std::vector<SyntheticSample> generate_dataset(std::span<const CatalogImage> bases,
                                              std::span<const LogoAsset> logos,
                                              const DatasetSpec& spec) {
  if (bases.empty()) {
    throw Error(ErrorKind::InvalidSpec, "dataset generation needs at least one base image");
  }
  if (!(spec.neg_ratio >= 0.0)) throw Error(ErrorKind::InvalidSpec, "neg_ratio must be >= 0");
  if (!(spec.lookalike_fraction >= 0.0 && spec.lookalike_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidSpec, "lookalike_fraction must be in [0, 1]");
  }
  std::vector<std::string> classes = spec.classes;
  if (classes.empty()) {
    for (const auto& logo : logos) {
      if (logo.compliance == Compliance::NonCompliant) classes.push_back(logo.class_label);
    }
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  }
  if (classes.empty()) {
    throw Error(ErrorKind::SplitExhausted, "no NonCompliant logos available");
  }

  std::map<std::string, std::vector<const LogoAsset*>> positives;
  std::map<std::string, std::vector<const LogoAsset*>> lookalikes;
  for (const auto& logo : logos) {
    if (logo.split != spec.logo_split) continue;
    auto& bucket = logo.compliance == Compliance::NonCompliant ? positives : lookalikes;
    bucket[logo.class_label].push_back(&logo);
  }

  std::vector<Job> jobs;
  const auto n_neg = static_cast<std::size_t>(std::ceil(spec.neg_ratio * static_cast<double>(spec.n_per_class) - 1e-9));
  for (const auto& cls : classes) {
    if (positives[cls].empty()) {
      throw Error(ErrorKind::SplitExhausted, "class " + cls + " has no NonCompliant logo in the " +
                                                 std::string(to_string(spec.logo_split)) + " split");
    }
    for (std::size_t i = 0; i < spec.n_per_class; ++i) jobs.push_back({cls, true, false, i});
    const bool have_lookalikes = !lookalikes[cls].empty();
    const auto n_lookalike = have_lookalikes
                                 ? static_cast<std::size_t>(std::llround(spec.lookalike_fraction * n_neg))
                                 : std::size_t{0};
    for (std::size_t i = 0; i < n_neg; ++i) jobs.push_back({cls, false, i < n_lookalike, i});
  }

  std::vector<SyntheticSample> out(jobs.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Job& job = jobs[i];
      const auto& pool = job.positive ? positives.at(job.class_label) : lookalikes.at(job.class_label);
      out[i] = run_job(job, i, bases, pool, spec);
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(spec.threads, static_cast<unsigned>(jobs.size())));
  if (threads <= 1) {
    work(0, jobs.size());
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (jobs.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(jobs.size(), t * chunk);
      const std::size_t end = std::min(jobs.size(), begin + chunk);
      pool.emplace_back([&, t, begin, end] {
        try {
          work(begin, end);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Procedural logos

namespace {

struct Point {
  double x, y;
};

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    if (((poly[i].y > y) != (poly[j].y > y)) &&
        (x < (poly[j].x - poly[i].x) * (y - poly[i].y) / (poly[j].y - poly[i].y) + poly[i].x)) {
      in = !in;
    }
  }
  return in;
}

std::vector<Point> regular_polygon(int sides, double radius, double phase) {
  std::vector<Point> out;
  for (int i = 0; i < sides; ++i) {
    const double a = phase + 2.0 * std::numbers::pi * i / sides;
    out.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return out;
}

std::vector<Point> star_polygon(int points, double outer, double inner) {
  std::vector<Point> out;
  for (int i = 0; i < 2 * points; ++i) {
    const double r = i % 2 == 0 ? outer : inner;
    const double a = -std::numbers::pi / 2 + std::numbers::pi * i / points;
    out.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return out;
}

enum class Shape { Circle, Square, Diamond, Hexagon, Star, Shield };
constexpr int kShapeCount = 6;
enum class Motif { Stripes, Ring, Dot, Cross, Chevron };
constexpr int kMotifCount = 5;

bool shape_contains(Shape shape, double u, double v) {
  switch (shape) {
    case Shape::Circle: return u * u + v * v <= 0.92 * 0.92;
    case Shape::Square: return std::max(std::abs(u), std::abs(v)) <= 0.82;
    case Shape::Diamond: return std::abs(u) + std::abs(v) <= 0.95;
    case Shape::Hexagon: {
      static const auto hex = regular_polygon(6, 0.95, 0.0);
      return inside_polygon(hex, u, v);
    }
    case Shape::Star: {
      static const auto star = star_polygon(5, 0.98, 0.5);
      return inside_polygon(star, u, v);
    }
    case Shape::Shield: {
      static const std::vector<Point> shield{{-0.8, -0.85}, {0.8, -0.85}, {0.8, 0.15},
                                             {0.0, 0.95},   {-0.8, 0.15}};
      return inside_polygon(shield, u, v);
    }
  }
  return false;
}

bool motif_contains(Motif motif, double u, double v) {
  switch (motif) {
    case Motif::Stripes: return static_cast<int>(std::floor((v + 1.0) * 4.0)) % 2 == 1;
    case Motif::Ring: {
      const double r = std::sqrt(u * u + v * v);
      return r > 0.35 && r < 0.55;
    }
    case Motif::Dot: return u * u + v * v < 0.3 * 0.3;
    case Motif::Cross: return std::abs(u) < 0.14 || std::abs(v) < 0.14;
    case Motif::Chevron: return std::abs(v - 0.6 * std::abs(u) + 0.1) < 0.16;
  }
  return false;
}

Rgba palette_color(Rng& rng) {
  auto level = [&] { return static_cast<std::uint8_t>(rng.uniform_int(48, 240)); };
  const std::uint8_t r = level();
  const std::uint8_t g = level();
  const std::uint8_t b = level();
  return {r, g, b, 255};
}

Raster render_badge(int size, Shape shape, Motif motif, Rgba fill, Rgba accent) {
  constexpr int kOutline = 3;
  Raster canvas(size, size, Rgba{0, 0, 0, 0});
  std::vector<char> mask(static_cast<std::size_t>(size) * size, 0);
  auto norm = [size](int p) { return (p + 0.5) / size * 2.0 - 1.0; };
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      mask[static_cast<std::size_t>(y) * size + x] = shape_contains(shape, norm(x), norm(y)) ? 1 : 0;
    }
  }
  auto in_mask = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < size && y < size && mask[static_cast<std::size_t>(y) * size + x];
  };
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (!in_mask(x, y)) continue;
      bool border = false;
      for (int dy = -kOutline; dy <= kOutline && !border; ++dy) {
        for (int dx = -kOutline; dx <= kOutline; ++dx) {
          if (!in_mask(x + dx, y + dy)) {
            border = true;
            break;
          }
        }
      }
      if (border) {
        canvas.set(x, y, Rgba{0, 0, 0, 255});
      } else {
        canvas.set(x, y, motif_contains(motif, norm(x), norm(y)) ? accent : fill);
      }
    }
  }
  return canvas;
}

std::string logo_id(const std::string& cls, const char* kind, std::size_t n) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "-%s-%02zu", kind, n);
  return cls + buf;
}

Split split_for(std::size_t index, std::size_t total, double train_fraction) {
  const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(total) - 1e-9));
  return index < n_train ? Split::Train : Split::Test;
}

}  // namespace

std::vector<LogoAsset> generate_logos(const LogoSpec& spec) {
  if (spec.classes.empty()) throw Error(ErrorKind::InvalidSpec, "logo generation needs classes");
  if (spec.variants_per_class == 0) throw Error(ErrorKind::InvalidSpec, "variants_per_class must be >= 1");
  if (spec.size < 16) throw Error(ErrorKind::InvalidSpec, "logo size must be >= 16");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidSpec, "train_fraction must be in (0, 1]");
  }
  std::vector<LogoAsset> out;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    const std::string& cls = spec.classes[c];
    Rng rng = Rng::derive(spec.seed, c);
    const Rgba class_fill = palette_color(rng);
    const auto base_shape = static_cast<int>(rng.uniform_int(0, kShapeCount - 1));
    for (std::size_t v = 0; v < spec.variants_per_class; ++v) {
      const auto shape = static_cast<Shape>((base_shape + static_cast<int>(v)) % kShapeCount);
      const auto motif = static_cast<Motif>(rng.uniform_int(0, kMotifCount - 1));
      const Rgba accent = palette_color(rng);
      out.push_back({logo_id(cls, "nc", v), tight_crop(render_badge(spec.size, shape, motif, class_fill, accent)),
                     cls, Compliance::NonCompliant,
                     split_for(v, spec.variants_per_class, spec.train_fraction)});
    }
    for (std::size_t v = 0; v < spec.lookalikes_per_class; ++v) {
      // Same silhouette family as the class, different fill and motif.
      const auto shape = static_cast<Shape>((base_shape + static_cast<int>(v)) % kShapeCount);
      const auto motif = static_cast<Motif>(rng.uniform_int(0, kMotifCount - 1));
      const Rgba fill = palette_color(rng);
      const Rgba accent = palette_color(rng);
      out.push_back({logo_id(cls, "lk", v), tight_crop(render_badge(spec.size, shape, motif, fill, accent)),
                     cls, Compliance::CompliantLookalike,
                     split_for(v, spec.lookalikes_per_class, spec.train_fraction)});
    }
  }
  return out;
}

void save_logos(std::span<const LogoAsset> logos, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "logos.jsonl", std::ios::trunc);
  if (!index) throw Error(ErrorKind::IoError, "cannot write logos.jsonl");
  for (const auto& logo : logos) {
    save_png(logo.pixels, dir / (logo.logo_id + ".png"));
    index << nlohmann::json{{"logo_id", logo.logo_id},
                            {"class", logo.class_label},
                            {"compliance", to_string(logo.compliance)},
                            {"split", to_string(logo.split)}}
                 .dump()
          << '\n';
  }
}

std::vector<LogoAsset> load_logos(const std::filesystem::path& dir) {
  std::ifstream in(dir / "logos.jsonl");
  if (!in) throw Error(ErrorKind::IoError, "missing logos.jsonl in " + dir.string());
  std::vector<LogoAsset> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto row = nlohmann::json::parse(line);
    LogoAsset logo;
    logo.logo_id = row.at("logo_id").get<std::string>();
    logo.class_label = row.at("class").get<std::string>();
    logo.compliance = parse_compliance(row.at("compliance").get<std::string>());
    logo.split = parse_split(row.at("split").get<std::string>());
    logo.pixels = load_png(dir / (logo.logo_id + ".png"));
    out.push_back(std::move(logo));
  }
  return out;
}

nlohmann::json annotation_json(const SyntheticSample& s, const std::string& image_path) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : s.sample.boxes) boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
  nlohmann::json row{{"image_path", image_path},
                     {"image_id", s.sample.image.image_id},
                     {"label", to_string(s.sample.label)},
                     {"class", s.class_label},
                     {"category", s.sample.image.category},
                     {"base_id", s.base_id},
                     {"boxes", boxes},
                     {"logo_id", s.logo_id ? nlohmann::json(*s.logo_id) : nlohmann::json()},
                     {"split", s.logo_split ? nlohmann::json(to_string(*s.logo_split)) : nlohmann::json()}};
  if (s.transform) {
    const auto& t = *s.transform;
    row["transform"] = {{"scale", t.scale},
                        {"rotation_deg", t.rotation_deg},
                        {"flip_h", t.flip_h},
                        {"shear", t.shear},
                        {"translate", {t.translate_x, t.translate_y}}};
  } else {
    row["transform"] = nullptr;
  }
  return row;
}

void write_dataset(std::span<const SyntheticSample> samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream out(dir / "annotations.jsonl", std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write annotations.jsonl");
  for (const auto& s : samples) {
    const std::string rel = "images/" + s.sample.image.image_id + ".png";
    save_png(s.sample.image.pixels, dir / rel);
    out << annotation_json(s, rel).dump() << '\n';
  }
}

std::vector<SyntheticSample> read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "annotations.jsonl");
  if (!in) throw Error(ErrorKind::IoError, "missing annotations.jsonl in " + dir.string());
  std::vector<SyntheticSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto row = nlohmann::json::parse(line);
    SyntheticSample s;
    s.sample.image.image_id = row.at("image_id").get<std::string>();
    s.sample.image.pixels = load_png(dir / row.at("image_path").get<std::string>());
    s.sample.image.category = row.value("category", std::string{});
    s.sample.label = parse_sample_label(row.at("label").get<std::string>());
    s.sample.provenance = Provenance::Synthetic;
    s.class_label = row.at("class").get<std::string>();
    s.base_id = row.value("base_id", std::string{});
    for (const auto& b : row.at("boxes")) {
      s.sample.boxes.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                                b.at(3).get<int>(), s.class_label});
    }
    if (!row.at("logo_id").is_null()) s.logo_id = row.at("logo_id").get<std::string>();
    if (!row.at("split").is_null()) s.logo_split = parse_split(row.at("split").get<std::string>());
    if (!row.at("transform").is_null()) {
      const auto& t = row.at("transform");
      s.transform = TransformParams{t.at("scale").get<double>(), t.at("rotation_deg").get<double>(),
                                    t.at("flip_h").get<bool>(), t.at("translate").at(0).get<int>(),
                                    t.at("translate").at(1).get<int>(), t.at("shear").get<double>()};
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Anchor boxes

double centered_iou(double w1, double h1, double w2, double h2) noexcept {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  const double uni = w1 * h1 + w2 * h2 - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

double assign(std::span<const Anchor> anchors, std::span<const std::pair<double, double>> dims,
              std::vector<std::size_t>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    std::size_t best = 0;
    double best_iou = -1.0;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const double v = centered_iou(dims[i].first, dims[i].second, anchors[a].width, anchors[a].height);
      if (v > best_iou) {
        best_iou = v;
        best = a;
      }
    }
    assignment[i] = best;
    total += best_iou;
  }
  return total / static_cast<double>(dims.size());
}

}  // namespace

AnchorResult anchor_kmeans(std::span<const BoundingBox> boxes, std::size_t k, int max_iter, Rng& rng) {
  if (k == 0) throw Error(ErrorKind::InvalidConfig, "k must be >= 1");
  if (k > boxes.size()) {
    throw Error(ErrorKind::TooFewBoxes, std::to_string(boxes.size()) + " boxes for k=" + std::to_string(k));
  }
  std::vector<std::pair<double, double>> dims;
  dims.reserve(boxes.size());
  for (const auto& b : boxes) {
    if (b.width() <= 0 || b.height() <= 0) {
      throw Error(ErrorKind::InvalidSpec, "anchor clustering needs boxes with positive area");
    }
    dims.emplace_back(b.width(), b.height());
  }

  // k-means++ seeding with d = 1 - IoU.
  std::vector<Anchor> anchors;
  const auto first = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(dims.size()) - 1));
  anchors.push_back({dims[first].first, dims[first].second});
  std::vector<double> d2(dims.size());
  while (anchors.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      double nearest = std::numeric_limits<double>::infinity();
      for (const auto& a : anchors) {
        nearest = std::min(nearest, 1.0 - centered_iou(dims[i].first, dims[i].second, a.width, a.height));
      }
      d2[i] = nearest * nearest;
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(dims.size()) - 1));
    } else {
      double target = rng.uniform01() * total;
      for (std::size_t i = 0; i < dims.size(); ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        if (target < d2[i]) break;
        target -= d2[i];
      }
    }
    anchors.push_back({dims[pick].first, dims[pick].second});
  }

  AnchorResult result;
  result.assignment.assign(dims.size(), 0);
  assign(anchors, dims, result.assignment);
  for (int iter = 0; iter < std::max(1, max_iter); ++iter) {
    std::vector<Anchor> updated = anchors;
    std::vector<double> sum_w(k, 0.0), sum_h(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < dims.size(); ++i) {
      sum_w[result.assignment[i]] += dims[i].first;
      sum_h[result.assignment[i]] += dims[i].second;
      ++count[result.assignment[i]];
    }
    for (std::size_t a = 0; a < k; ++a) {
      if (count[a] > 0) {
        updated[a] = {sum_w[a] / static_cast<double>(count[a]), sum_h[a] / static_cast<double>(count[a])};
      }
    }
    std::vector<std::size_t> next(dims.size());
    const double objective = assign(updated, dims, next);
    if (!result.mean_iou_history.empty() && objective < result.mean_iou_history.back()) break;
    result.iterations = iter + 1;
    anchors = std::move(updated);
    result.mean_iou_history.push_back(objective);
    const bool unchanged = next == result.assignment;
    result.assignment = std::move(next);
    if (unchanged) break;
  }
  result.anchors.anchors = std::move(anchors);
  return result;
}

}  // namespace modgate::synth
