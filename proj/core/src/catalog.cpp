#include "modgate/catalog.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>

#include "modgate/error.hpp"
#include "modgate/png_io.hpp"
#include "modgate/rng.hpp"

namespace modgate {

std::string_view to_string(ImageState state) {
  switch (state) {
    case ImageState::Pending: return "Pending";
    case ImageState::Published: return "Published";
    case ImageState::AutoBlocked: return "AutoBlocked";
    case ImageState::UnderReview: return "UnderReview";
    case ImageState::ReviewRejected: return "ReviewRejected";
    case ImageState::ReviewAccepted: return "ReviewAccepted";
  }
  return "Pending";
}

ImageState parse_image_state(std::string_view text) {
  for (ImageState s : kAllImageStates) {
    if (to_string(s) == text) return s;
  }
  throw Error(ErrorKind::DecodeError, "unknown image state '" + std::string(text) + "'");
}

bool is_legal_transition(ImageState from, ImageState to) noexcept {
  switch (from) {
    case ImageState::Pending:
      return to == ImageState::Published || to == ImageState::AutoBlocked ||
             to == ImageState::UnderReview;
    case ImageState::UnderReview:
      return to == ImageState::ReviewAccepted || to == ImageState::ReviewRejected;
    default:
      return false;
  }
}

std::string_view to_string(SampleLabel label) {
  return label == SampleLabel::NonCompliant ? "NonCompliant" : "Compliant";
}

std::string_view to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::Synthetic: return "Synthetic";
    case Provenance::CrowdVerified: return "CrowdVerified";
    case Provenance::Seed: return "Seed";
  }
  return "Seed";
}

SampleLabel parse_sample_label(std::string_view text) {
  if (text == "NonCompliant") return SampleLabel::NonCompliant;
  if (text == "Compliant") return SampleLabel::Compliant;
  throw Error(ErrorKind::DecodeError, "unknown label '" + std::string(text) + "'");
}

bool annotation_consistent(const AnnotatedSample& sample, bool box_bearing) {
  const bool has_boxes = !sample.boxes.empty();
  if (sample.label == SampleLabel::Compliant && has_boxes) return false;
  if (box_bearing && sample.label == SampleLabel::NonCompliant && !has_boxes) return false;
  return std::all_of(sample.boxes.begin(), sample.boxes.end(), [&](const BoundingBox& b) {
    return b.valid_within(sample.image.pixels.width(), sample.image.pixels.height());
  });
}

namespace {

Rgba random_color(Rng& rng) {
  auto level = [&] {
    return static_cast<std::uint8_t>(rng.uniform_int(kCorpusMinLevel, kCorpusMaxLevel));
  };
  const std::uint8_t r = level();
  const std::uint8_t g = level();
  const std::uint8_t b = level();
  return {r, g, b, 255};
}

std::uint8_t lerp_level(std::uint8_t a, std::uint8_t b, double t) {
  return static_cast<std::uint8_t>(std::lround(a + (b - a) * t));
}

Raster render_pattern(Rng& rng, int width, int height) {
  Raster img(width, height);
  const auto pattern = rng.uniform_int(0, 3);
  const Rgba c0 = random_color(rng);
  const Rgba c1 = random_color(rng);
  switch (pattern) {
    case 0: {  // flat field
      img = Raster(width, height, c0);
      break;
    }
    case 1: {  // linear gradient
      const auto direction = rng.uniform_int(0, 2);
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          double t = 0.0;
          if (direction == 0) t = width > 1 ? static_cast<double>(x) / (width - 1) : 0.0;
          if (direction == 1) t = height > 1 ? static_cast<double>(y) / (height - 1) : 0.0;
          if (direction == 2) {
            const int span = width + height - 2;
            t = span > 0 ? static_cast<double>(x + y) / span : 0.0;
          }
          img.set(x, y, Rgba{lerp_level(c0.r, c1.r, t), lerp_level(c0.g, c1.g, t),
                             lerp_level(c0.b, c1.b, t), 255});
        }
      }
      break;
    }
    case 2: {  // checkerboard
      const auto cell = static_cast<int>(rng.uniform_int(2, 16));
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          img.set(x, y, ((x / cell) + (y / cell)) % 2 == 0 ? c0 : c1);
        }
      }
      break;
    }
    default: {  // noise texture around c0
      const auto amplitude = static_cast<int>(rng.uniform_int(8, 48));
      auto jitter = [&](std::uint8_t v) {
        const auto n = v + rng.uniform_int(-amplitude, amplitude);
        return static_cast<std::uint8_t>(std::clamp<std::int64_t>(n, kCorpusMinLevel, kCorpusMaxLevel));
      };
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          const std::uint8_t r = jitter(c0.r);
          const std::uint8_t g = jitter(c0.g);
          const std::uint8_t b = jitter(c0.b);
          img.set(x, y, Rgba{r, g, b, 255});
        }
      }
      break;
    }
  }
  return img;
}

std::string corpus_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img-%06zu", index);
  return buf;
}

}  // namespace

std::vector<CatalogImage> generate_corpus(const CorpusSpec& spec) {
  if (spec.categories.empty()) {
    throw Error(ErrorKind::InvalidSpec, "corpus needs at least one category");
  }
  if (spec.n_images == 0) {
    throw Error(ErrorKind::InvalidSpec, "corpus needs n_images >= 1");
  }
  if (spec.width < 1 || spec.height < 1) {
    throw Error(ErrorKind::InvalidSpec, "corpus image dimensions must be >= 1");
  }
  std::vector<CatalogImage> out;
  out.reserve(spec.n_images);
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    Rng rng = Rng::derive(spec.seed, i);
    CatalogImage img;
    img.image_id = corpus_id(i);
    img.category = spec.categories[i % spec.categories.size()];
    img.pixels = render_pattern(rng, spec.width, spec.height);
    out.push_back(std::move(img));
  }
  return out;
}

CatalogImage load_image(const std::filesystem::path& path) {
  CatalogImage img;
  img.pixels = load_png(path);
  img.image_id = path.stem().string();
  return img;
}

void save_image(const CatalogImage& image, const std::filesystem::path& path) {
  save_png(image.pixels, path);
}

CatalogStore::CatalogStore(std::vector<CatalogImage> images) {
  for (auto& img : images) add(std::move(img));
}

void CatalogStore::add(CatalogImage image) {
  if (image.image_id.empty()) {
    throw Error(ErrorKind::InvalidSpec, "image id must not be empty");
  }
  if (image.pixels.empty()) {
    throw Error(ErrorKind::InvalidSpec, "image " + image.image_id + " has no pixels");
  }
  std::unique_lock lock(mutex_);
  const std::string id = image.image_id;
  if (!images_.emplace(id, std::move(image)).second) {
    throw Error(ErrorKind::InvalidSpec, "duplicate image id " + id);
  }
}

std::optional<CatalogImage> CatalogStore::get(const std::string& image_id) const {
  std::shared_lock lock(mutex_);
  auto it = images_.find(image_id);
  if (it == images_.end()) return std::nullopt;
  return it->second;
}

std::optional<ImageState> CatalogStore::state(const std::string& image_id) const {
  std::shared_lock lock(mutex_);
  auto it = images_.find(image_id);
  if (it == images_.end()) return std::nullopt;
  return it->second.state;
}

bool CatalogStore::contains(const std::string& image_id) const {
  std::shared_lock lock(mutex_);
  return images_.count(image_id) != 0;
}

std::vector<std::string> CatalogStore::ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  out.reserve(images_.size());
  for (const auto& [id, _] : images_) out.push_back(id);
  return out;
}

std::vector<std::string> CatalogStore::ids_in_state(ImageState state) const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, img] : images_) {
    if (img.state == state) out.push_back(id);
  }
  return out;
}

std::size_t CatalogStore::size() const {
  std::shared_lock lock(mutex_);
  return images_.size();
}

bool CatalogStore::compare_and_set(const std::string& image_id, ImageState expected,
                                   ImageState desired) {
  if (!is_legal_transition(expected, desired)) {
    throw Error(ErrorKind::IllegalTransition, std::string(to_string(expected)) + " -> " +
                                                  std::string(to_string(desired)));
  }
  std::unique_lock lock(mutex_);
  auto it = images_.find(image_id);
  if (it == images_.end()) {
    throw Error(ErrorKind::NotFound, "image " + image_id);
  }
  if (it->second.state != expected) return false;
  it->second.state = desired;
  return true;
}

void CatalogStore::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::shared_lock lock(mutex_);
    for (const auto& [id, img] : images_) save_png(img.pixels, dir / (id + ".png"));
  }
  save_index(dir);
}

void CatalogStore::save_index(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const auto tmp = dir / "index.jsonl.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
    std::shared_lock lock(mutex_);
    for (const auto& [id, img] : images_) {
      nlohmann::json row{{"id", id},
                         {"category", img.category},
                         {"state", to_string(img.state)},
                         {"width", img.pixels.width()},
                         {"height", img.pixels.height()}};
      out << row.dump() << '\n';
    }
  }
  std::filesystem::rename(tmp, dir / "index.jsonl");
}

std::vector<CatalogImage> CatalogStore::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.jsonl");
  if (!in) {
    throw Error(ErrorKind::IoError, "missing catalog index in " + dir.string());
  }
  std::vector<CatalogImage> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto row = nlohmann::json::parse(line);
    CatalogImage img = load_image(dir / (row.at("id").get<std::string>() + ".png"));
    img.image_id = row.at("id").get<std::string>();
    img.category = row.at("category").get<std::string>();
    img.state = parse_image_state(row.at("state").get<std::string>());
    if (img.pixels.width() != row.at("width").get<int>() ||
        img.pixels.height() != row.at("height").get<int>()) {
      throw Error(ErrorKind::DecodeError, "dimension mismatch for " + img.image_id);
    }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace modgate
