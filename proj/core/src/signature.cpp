#include "modgate/signature.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numbers>
#include <set>

#include "modgate/error.hpp"

namespace modgate {
namespace {

void l1_normalize(std::span<double> block) {
  double sum = 0.0;
  for (double v : block) sum += v;
  if (sum <= 0.0) return;
  for (double& v : block) v /= sum;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
    throw Error(ErrorKind::DecodeError, "truncated index file");
  }
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

constexpr char kIndexMagic[4] = {'M', 'G', 'S', 'I'};
constexpr std::uint32_t kIndexVersion = 1;

}  // namespace

Signature HistogramSignatureExtractor::extract(const Raster& image) const {
  Signature sig{std::vector<double>(kDimension, 0.0)};
  const int w = image.width();
  const int h = image.height();
  std::span<double> gray(sig.values.data() + kGrayOffset, kGrayBins);
  std::span<double> color(sig.values.data() + kColorOffset, kColorBins);
  std::span<double> gradient(sig.values.data() + kGradientOffset, kOrientationBins);

  std::vector<double> lum(image.pixel_count());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Rgba c = image.at(x, y);
      const double l = luma(c);
      lum[static_cast<std::size_t>(y) * w + x] = l;
      const auto bin = std::min<std::size_t>(kGrayBins - 1, static_cast<std::size_t>(l / 4.0));
      gray[bin] += 1.0;
      const std::size_t cx = static_cast<std::size_t>(x) * kGridCells / static_cast<std::size_t>(w);
      const std::size_t cy = static_cast<std::size_t>(y) * kGridCells / static_cast<std::size_t>(h);
      const std::size_t cell = (cy * kGridCells + cx) * 3;
      color[cell] += c.r;
      color[cell + 1] += c.g;
      color[cell + 2] += c.b;
    }
  }

  const double bin_width = 2.0 * std::numbers::pi / kOrientationBins;
  for (int y = 0; y + 1 < h; ++y) {
    for (int x = 0; x + 1 < w; ++x) {
      const double here = lum[static_cast<std::size_t>(y) * w + x];
      const double gx = lum[static_cast<std::size_t>(y) * w + x + 1] - here;
      const double gy = lum[static_cast<std::size_t>(y + 1) * w + x] - here;
      const double magnitude = std::hypot(gx, gy);
      if (magnitude <= 0.0) continue;
      double angle = std::atan2(gy, gx);
      if (angle < 0.0) angle += 2.0 * std::numbers::pi;
      const auto bin = static_cast<std::size_t>(std::floor(angle / bin_width + 0.5)) % kOrientationBins;
      gradient[bin] += magnitude;
    }
  }

  l1_normalize(gray);
  l1_normalize(color);
  l1_normalize(gradient);
  return sig;
}

const SignatureExtractor& default_extractor() {
  static const HistogramSignatureExtractor extractor;
  return extractor;
}

Signature compute_signature(const Raster& image) { return default_extractor().extract(image); }

Signature compute_signature(const CatalogImage& image) { return compute_signature(image.pixels); }

BinarizationModel fit_binarization(std::span<const Signature> reference) {
  if (reference.size() < 2) {
    throw Error(ErrorKind::InsufficientReference, "binarization needs at least 2 signatures, got " +
                                                      std::to_string(reference.size()));
  }
  const std::size_t dim = reference.front().dimension();
  for (const auto& s : reference) {
    if (s.dimension() != dim) {
      throw Error(ErrorKind::DimensionError, "reference signatures differ in dimension");
    }
  }
  std::vector<double> thresholds(dim);
  std::vector<double> column(reference.size());
  const std::size_t lower_median = (reference.size() - 1) / 2;
  for (std::size_t d = 0; d < dim; ++d) {
    for (std::size_t i = 0; i < reference.size(); ++i) column[i] = reference[i].values[d];
    std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(lower_median),
                     column.end());
    thresholds[d] = column[lower_median];
  }
  return BinarizationModel(std::move(thresholds));
}

BinarySignature::BinarySignature(std::size_t dimension)
    : dimension_(dimension), words_((dimension + 63) / 64, 0) {}

BinarySignature BinarySignature::from_string(std::string_view bits) {
  BinarySignature out(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] != '0' && bits[i] != '1') {
      throw Error(ErrorKind::DecodeError, "bit strings may only contain 0 and 1");
    }
    out.set_bit(i, bits[i] == '1');
  }
  return out;
}

BinarySignature BinarySignature::from_bytes(std::size_t dimension,
                                            std::span<const std::uint8_t> bytes) {
  if (bytes.size() != (dimension + 7) / 8) {
    throw Error(ErrorKind::DimensionError, "byte length does not match dimension");
  }
  BinarySignature out(dimension);
  for (std::size_t d = 0; d < dimension; ++d) {
    out.set_bit(d, (bytes[d / 8] >> (d % 8)) & 1u);
  }
  return out;
}

void BinarySignature::set_bit(std::size_t d, bool value) noexcept {
  const std::uint64_t mask = std::uint64_t{1} << (d % 64);
  if (value) {
    words_[d / 64] |= mask;
  } else {
    words_[d / 64] &= ~mask;
  }
}

std::vector<std::uint8_t> BinarySignature::to_bytes() const {
  std::vector<std::uint8_t> out((dimension_ + 7) / 8, 0);
  for (std::size_t d = 0; d < dimension_; ++d) {
    if (bit(d)) out[d / 8] |= static_cast<std::uint8_t>(1u << (d % 8));
  }
  return out;
}

std::string BinarySignature::to_string() const {
  std::string out(dimension_, '0');
  for (std::size_t d = 0; d < dimension_; ++d) out[d] = bit(d) ? '1' : '0';
  return out;
}

BinarySignature binarize(const Signature& signature, const BinarizationModel& model) {
  if (signature.dimension() != model.dimension()) {
    throw Error(ErrorKind::DimensionError,
                "signature has " + std::to_string(signature.dimension()) + " dims, model has " +
                    std::to_string(model.dimension()));
  }
  BinarySignature out(signature.dimension());
  const auto& t = model.thresholds();
  for (std::size_t d = 0; d < signature.dimension(); ++d) {
    out.set_bit(d, signature.values[d] > t[d]);
  }
  return out;
}

std::size_t hamming(const BinarySignature& a, const BinarySignature& b) {
  if (a.dimension() != b.dimension()) {
    throw Error(ErrorKind::DimensionError, "hamming over codes of different length");
  }
  std::size_t distance = 0;
  const auto wa = a.words();
  const auto wb = b.words();
  for (std::size_t i = 0; i < wa.size(); ++i) distance += std::popcount(wa[i] ^ wb[i]);
  return distance;
}

SimilarityIndex::SimilarityIndex(BinarizationModel model,
                                 std::shared_ptr<const SignatureExtractor> extractor)
    : model_(std::move(model)), extractor_(std::move(extractor)) {
  if (!extractor_) {
    extractor_ = std::shared_ptr<const SignatureExtractor>(&default_extractor(),
                                                           [](const SignatureExtractor*) {});
  }
  if (extractor_->dimension() != model_.dimension()) {
    throw Error(ErrorKind::DimensionError, "extractor and binarization dimensions differ");
  }
}

SimilarityIndex::SimilarityIndex(SimilarityIndex&& other) noexcept
    : model_(std::move(other.model_)), extractor_(std::move(other.extractor_)) {
  std::unique_lock lock(other.mutex_);
  ids_ = std::move(other.ids_);
  codes_ = std::move(other.codes_);
  slot_ = std::move(other.slot_);
}

std::size_t SimilarityIndex::size() const {
  std::shared_lock lock(mutex_);
  return ids_.size();
}

BinarySignature SimilarityIndex::encode(const Raster& image) const {
  return binarize(extractor_->extract(image), model_);
}

void SimilarityIndex::insert(const std::string& image_id, BinarySignature code) {
  std::vector<std::pair<std::string, BinarySignature>> one;
  one.emplace_back(image_id, std::move(code));
  insert_batch(std::move(one));
}

void SimilarityIndex::insert_image(const CatalogImage& image) {
  insert(image.image_id, encode(image.pixels));
}

void SimilarityIndex::insert_batch(std::vector<std::pair<std::string, BinarySignature>> entries) {
  for (const auto& [id, code] : entries) {
    if (code.dimension() != model_.dimension()) {
      throw Error(ErrorKind::DimensionError, "code for " + id + " has wrong dimension");
    }
  }
  std::unique_lock lock(mutex_);
  for (auto& [id, code] : entries) {
    auto it = slot_.find(id);
    if (it != slot_.end()) {
      codes_[it->second] = std::move(code);
      continue;
    }
    slot_.emplace(id, ids_.size());
    ids_.push_back(id);
    codes_.push_back(std::move(code));
  }
}

std::vector<Neighbor> SimilarityIndex::query(const BinarySignature& probe, std::size_t k) const {
  if (probe.dimension() != model_.dimension()) {
    throw Error(ErrorKind::DimensionError, "probe code has wrong dimension");
  }
  if (k == 0) {
    throw Error(ErrorKind::InvalidConfig, "k must be >= 1");
  }
  std::shared_lock lock(mutex_);
  if (ids_.empty()) {
    throw Error(ErrorKind::EmptyIndex, "query against an empty index");
  }
  std::vector<std::pair<std::size_t, std::size_t>> scored;  // (distance, slot)
  scored.reserve(ids_.size());
  for (std::size_t i = 0; i < codes_.size(); ++i) scored.emplace_back(hamming(probe, codes_[i]), i);
  const std::size_t take = std::min(k, scored.size());
  auto before = [this](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return ids_[a.second] < ids_[b.second];
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                    before);
  std::vector<Neighbor> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back({ids_[scored[i].second], scored[i].first});
  return out;
}

std::vector<std::pair<std::string, BinarySignature>> SimilarityIndex::snapshot() const {
  std::shared_lock lock(mutex_);
  std::vector<std::pair<std::string, BinarySignature>> out;
  out.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) out.emplace_back(ids_[i], codes_[i]);
  return out;
}

void SimilarityIndex::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "index.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write index.bin");
    std::shared_lock lock(mutex_);
    out.write(kIndexMagic, 4);
    put_u32(out, kIndexVersion);
    put_u32(out, static_cast<std::uint32_t>(model_.dimension()));
    put_u32(out, static_cast<std::uint32_t>(ids_.size()));
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      put_u32(out, static_cast<std::uint32_t>(ids_[i].size()));
      out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
      const auto bytes = codes_[i].to_bytes();
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
  }
  std::ofstream json_out(dir / "binarization.json", std::ios::trunc);
  if (!json_out) throw Error(ErrorKind::IoError, "cannot write binarization.json");
  json_out << nlohmann::json{{"dimension", model_.dimension()}, {"thresholds", model_.thresholds()}}.dump(2)
           << '\n';
}

SimilarityIndex SimilarityIndex::load(const std::filesystem::path& dir) {
  std::ifstream json_in(dir / "binarization.json");
  if (!json_in) throw Error(ErrorKind::IoError, "missing binarization.json in " + dir.string());
  const auto model_json = nlohmann::json::parse(json_in);
  SimilarityIndex index(BinarizationModel(model_json.at("thresholds").get<std::vector<double>>()));

  std::ifstream in(dir / "index.bin", std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "missing index.bin in " + dir.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kIndexMagic)) {
    throw Error(ErrorKind::FormatError, "index.bin has bad magic");
  }
  if (get_u32(in) != kIndexVersion) throw Error(ErrorKind::FormatError, "unsupported index version");
  const std::uint32_t dim = get_u32(in);
  if (dim != index.dimension()) {
    throw Error(ErrorKind::DimensionError, "index.bin dimension disagrees with binarization.json");
  }
  const std::uint32_t count = get_u32(in);
  std::vector<std::pair<std::string, BinarySignature>> entries;
  entries.reserve(count);
  std::vector<std::uint8_t> bytes((dim + 7) / 8);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string id(get_u32(in), '\0');
    if (!in.read(id.data(), static_cast<std::streamsize>(id.size())) ||
        !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
      throw Error(ErrorKind::DecodeError, "truncated index record");
    }
    entries.emplace_back(std::move(id), BinarySignature::from_bytes(dim, bytes));
  }
  index.insert_batch(std::move(entries));
  return index;
}

std::vector<Neighbor> knn_query(const SimilarityIndex& index, const CatalogImage& probe,
                                std::size_t k) {
  return index.query(index.encode(probe.pixels), k);
}

std::vector<std::string> expand_training_set(const SimilarityIndex& index,
                                             std::span<const AnnotatedSample> seeds,
                                             std::size_t k, std::int64_t max_distance) {
  if (seeds.empty()) {
    throw Error(ErrorKind::InvalidSpec, "expand_training_set needs at least one seed");
  }
  std::set<std::string> seed_ids;
  for (const auto& s : seeds) seed_ids.insert(s.image.image_id);
  std::set<std::string> seen;
  std::vector<std::string> out;
  for (const auto& seed : seeds) {
    for (const auto& hit : knn_query(index, seed.image, k)) {
      if (static_cast<std::int64_t>(hit.distance) > max_distance) continue;
      if (seed_ids.count(hit.image_id) != 0) continue;
      if (seen.insert(hit.image_id).second) out.push_back(hit.image_id);
    }
  }
  return out;
}

}  // namespace modgate
