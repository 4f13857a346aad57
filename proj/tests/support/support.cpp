#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace modgate::testing {

TempDir::TempDir() {
  std::random_device rd;
  const auto base = std::filesystem::temp_directory_path();
  for (;;) {
    path_ = base / ("modgate-test-" + std::to_string(rd()) + std::to_string(rd()));
    if (std::filesystem::create_directory(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

Raster solid(int width, int height, Rgba color) { return Raster(width, height, color); }

const std::string& FunctionDetector::kind() const {
  static const std::string k = "function";
  return k;
}

double red_confidence(const Raster& image) { return image.at(0, 0).r / 255.0; }
double green_confidence(const Raster& image) { return image.at(0, 0).g / 255.0; }

CatalogImage coded_image(const std::string& id, const std::string& category, std::uint8_t red, std::uint8_t green) {
  CatalogImage img;
  img.image_id = id;
  img.category = category;
  img.pixels = Raster(64, 64, {90, 90, 90, 255});
  img.pixels.set(0, 0, {red, green, 0, 255});
  return img;
}

double median_oracle(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

std::string binarize_oracle(const Signature& sig, const std::vector<double>& thresholds) {
  std::string bits;
  for (std::size_t d = 0; d < thresholds.size(); ++d) bits.push_back(sig.values[d] > thresholds[d] ? '1' : '0');
  return bits;
}

std::size_t hamming_oracle(const BinarySignature& a, const BinarySignature& b) {
  std::size_t n = 0;
  for (std::size_t d = 0; d < a.dimension(); ++d) n += a.bit(d) != b.bit(d);
  return n;
}

std::vector<Neighbor> knn_oracle(const std::vector<std::pair<std::string, BinarySignature>>& entries,
                                 const BinarySignature& probe, std::size_t k) {
  std::vector<Neighbor> all;
  for (const auto& [id, code] : entries) all.push_back({id, hamming_oracle(code, probe)});
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.image_id < b.image_id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

NaiveZncc zncc_oracle(const GrayImage& image, const GrayImage& templ, const std::vector<double>& weights) {
  NaiveZncc best;
  for (int y = 0; y + templ.height <= image.height; ++y) {
    for (int x = 0; x + templ.width <= image.width; ++x) {
      double wsum = 0, mi = 0, mt = 0;
      for (int v = 0; v < templ.height; ++v) {
        for (int u = 0; u < templ.width; ++u) {
          const double w = weights[static_cast<std::size_t>(v * templ.width + u)];
          wsum += w;
          mi += w * image.at(x + u, y + v);
          mt += w * templ.at(u, v);
        }
      }
      mi /= wsum;
      mt /= wsum;
      double num = 0, di = 0, dt = 0;
      for (int v = 0; v < templ.height; ++v) {
        for (int u = 0; u < templ.width; ++u) {
          const double w = weights[static_cast<std::size_t>(v * templ.width + u)];
          const double a = image.at(x + u, y + v) - mi;
          const double b = templ.at(u, v) - mt;
          num += w * a * b;
          di += w * a * a;
          dt += w * b * b;
        }
      }
      const double z = (di <= 1e-12 || dt <= 1e-12) ? 0.0 : num / std::sqrt(di * dt);
      if (z > best.zncc) best = {z, x, y};
    }
  }
  return best;
}

std::vector<std::pair<double, double>> roc_oracle(const std::vector<ScoredLabel>& scores) {
  std::set<double> distinct;
  for (const auto& s : scores) distinct.insert(s.score);
  double pos = 0, neg = 0;
  for (const auto& s : scores) (s.truth ? pos : neg) += 1;
  std::vector<std::pair<double, double>> out{{0.0, 0.0}};
  for (auto it = distinct.rbegin(); it != distinct.rend(); ++it) {
    double tp = 0, fp = 0;
    for (const auto& s : scores) {
      if (s.score >= *it) (s.truth ? tp : fp) += 1;
    }
    out.emplace_back(fp / neg, tp / pos);
  }
  return out;
}

double auc_pairwise_oracle(const std::vector<ScoredLabel>& scores) {
  double wins = 0, pairs = 0;
  for (const auto& p : scores) {
    if (!p.truth) continue;
    for (const auto& n : scores) {
      if (n.truth) continue;
      pairs += 1;
      if (p.score > n.score) wins += 1;
      else if (p.score == n.score) wins += 0.5;
    }
  }
  return wins / pairs;
}

std::vector<std::pair<std::string, std::string>> selection_oracle(std::vector<DetectionVerdict> verdicts,
                                                                  std::size_t budget, double floor) {
  std::stable_sort(verdicts.begin(), verdicts.end(), [](const DetectionVerdict& a, const DetectionVerdict& b) {
    return std::tie(b.confidence, a.image_id, a.detector_id) < std::tie(a.confidence, b.image_id, b.detector_id);
  });
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& v : verdicts) {
    if (v.decision != Decision::ManualReview || v.confidence < floor) continue;
    if (!seen.insert({v.image_id, v.detector_id}).second) continue;
    if (out.size() == budget) break;
    out.emplace_back(v.image_id, v.detector_id);
  }
  return out;
}

std::optional<BoundingBox> recovered_box(const Raster& base, const Raster& out, const Raster& warped_logo,
                                         int x, int y) {
  std::optional<BoundingBox> box;
  for (int py = 0; py < base.height(); ++py) {
    for (int px = 0; px < base.width(); ++px) {
      if (base.at(px, py) == out.at(px, py)) continue;
      const int lx = px - x;
      const int ly = py - y;
      const bool inside = lx >= 0 && ly >= 0 && lx < warped_logo.width() && ly < warped_logo.height();
      if (inside && warped_logo.at(lx, ly).a <= kFootprintAlpha) continue;
      if (!box) {
        box = BoundingBox{px, py, px + 1, py + 1, {}};
      } else {
        box->x_min = std::min(box->x_min, px);
        box->y_min = std::min(box->y_min, py);
        box->x_max = std::max(box->x_max, px + 1);
        box->y_max = std::max(box->y_max, py + 1);
      }
    }
  }
  return box;
}

}  // namespace modgate::testing
