#include "modgate/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "modgate/error.hpp"

namespace modgate {

// --- template matching -----------------------------------------------------

namespace {

struct TemplateTerm {
  std::size_t offset;  // into the image row-major buffer, relative to the placement origin
  double weight;
  double centered;  // weight * (t - weighted mean)
};

/// Weighted variance numerator sum(w (t - mean)^2) and the weight total.
std::pair<double, double> weighted_spread(const GrayImage& templ, std::span<const double> weights) {
  double wsum = 0.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < templ.values.size(); ++i) {
    wsum += weights[i];
    mean += weights[i] * templ.values[i];
  }
  if (wsum <= 0.0) return {0.0, 0.0};
  mean /= wsum;
  double spread = 0.0;
  for (std::size_t i = 0; i < templ.values.size(); ++i) {
    const double d = templ.values[i] - mean;
    spread += weights[i] * d * d;
  }
  return {spread, wsum};
}

constexpr double kMinSpreadPerWeight = 1e-9;

std::vector<double> alpha_weights(const Raster& templ) {
  std::vector<double> w;
  w.reserve(templ.pixel_count());
  for (int y = 0; y < templ.height(); ++y) {
    for (int x = 0; x < templ.width(); ++x) w.push_back(templ.at(x, y).a / 255.0);
  }
  return w;
}

}  // namespace

CorrelationPeak best_zncc(const GrayImage& image, const GrayImage& templ, std::span<const double> weights) {
  if (weights.size() != templ.values.size()) {
    throw Error(ErrorKind::DimensionError, "one weight per template pixel required");
  }
  if (templ.width > image.width || templ.height > image.height) {
    throw Error(ErrorKind::TemplateTooLarge, "template larger than image");
  }
  const auto [spread, wsum] = weighted_spread(templ, weights);
  if (wsum <= 0.0 || spread <= kMinSpreadPerWeight * wsum) {
    throw Error(ErrorKind::DegenerateTemplate, "template has zero variance");
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < templ.values.size(); ++i) mean += weights[i] * templ.values[i];
  mean /= wsum;

  std::vector<TemplateTerm> terms;
  for (int ty = 0; ty < templ.height; ++ty) {
    for (int tx = 0; tx < templ.width; ++tx) {
      const std::size_t ti = static_cast<std::size_t>(ty) * templ.width + tx;
      if (weights[ti] <= 0.0) continue;
      terms.push_back({static_cast<std::size_t>(ty) * image.width + tx, weights[ti],
                       weights[ti] * (templ.values[ti] - mean)});
    }
  }

  CorrelationPeak best;
  const double* img = image.values.data();
  for (int y = 0; y + templ.height <= image.height; ++y) {
    for (int x = 0; x + templ.width <= image.width; ++x) {
      const double* origin = img + static_cast<std::size_t>(y) * image.width + x;
      double cross = 0.0;
      double s1 = 0.0;
      double s2 = 0.0;
      for (const auto& term : terms) {
        const double v = origin[term.offset];
        cross += term.centered * v;
        s1 += term.weight * v;
        s2 += term.weight * v * v;
      }
      const double window_spread = s2 - s1 * s1 / wsum;
      double score = 0.0;
      if (window_spread > kMinSpreadPerWeight * wsum) {
        score = std::clamp(cross / std::sqrt(spread * window_spread), -1.0, 1.0);
      }
      if (score > best.zncc) best = {score, x, y};
    }
  }
  return best;
}

DetectorOutput template_match(const Raster& image, const Raster& templ, std::span<const double> scales,
                              Resampling resampling) {
  if (templ.empty()) throw Error(ErrorKind::DegenerateTemplate, "empty template");
  {
    const auto weights = alpha_weights(templ);
    const auto [spread, wsum] = weighted_spread(to_gray(templ), weights);
    if (wsum <= 0.0 || spread <= kMinSpreadPerWeight * wsum) {
      throw Error(ErrorKind::DegenerateTemplate, "template has zero variance");
    }
  }
  if (scales.empty()) throw Error(ErrorKind::InvalidConfig, "template_match needs at least one scale");

  const GrayImage gray = to_gray(image);
  bool evaluated = false;
  CorrelationPeak best;
  Raster best_templ;
  for (double scale : scales) {
    Raster scaled = warp(templ, WarpParams{scale}, resampling);
    if (scaled.width() > image.width() || scaled.height() > image.height()) continue;
    const auto weights = alpha_weights(scaled);
    CorrelationPeak peak;
    try {
      peak = best_zncc(gray, to_gray(scaled), weights);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::DegenerateTemplate) continue;  // collapsed at this scale
      throw;
    }
    evaluated = true;
    if (peak.zncc > best.zncc) {
      best = peak;
      best_templ = std::move(scaled);
    }
  }
  if (!evaluated) {
    throw Error(ErrorKind::TemplateTooLarge, "template does not fit the image at any scale");
  }
  DetectorOutput out;
  out.confidence = std::clamp((best.zncc + 1.0) / 2.0, 0.0, 1.0);
  BoundingBox box = alpha_footprint(best_templ).value_or(
      BoundingBox{0, 0, best_templ.width(), best_templ.height(), {}});
  box.x_min += best.x;
  box.x_max += best.x;
  box.y_min += best.y;
  box.y_max += best.y;
  out.boxes.push_back({box, out.confidence});
  return out;
}

TemplateLogoDetector::TemplateLogoDetector(std::string detector_id, std::string class_label,
                                           std::vector<Raster> templates, std::vector<double> scales,
                                           Resampling resampling)
    : id_(std::move(detector_id)),
      class_label_(std::move(class_label)),
      templates_(std::move(templates)),
      scales_(std::move(scales)),
      resampling_(resampling) {
  if (templates_.empty()) throw Error(ErrorKind::InvalidConfig, "template detector needs templates");
  if (scales_.empty()) throw Error(ErrorKind::InvalidConfig, "template detector needs scales");
  for (double s : scales_) {
    if (!(s > 0.0)) throw Error(ErrorKind::InvalidConfig, "template scales must be positive");
  }
}

const std::string& TemplateLogoDetector::kind() const {
  static const std::string k = "template";
  return k;
}

DetectorOutput TemplateLogoDetector::detect(const Raster& image) const {
  DetectorOutput best;
  best.detector_id = id_;
  bool any = false;
  for (const auto& templ : templates_) {
    DetectorOutput out;
    try {
      out = template_match(image, templ, scales_, resampling_);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::TemplateTooLarge) continue;
      throw;
    }
    if (!any || out.confidence > best.confidence) {
      best.confidence = out.confidence;
      best.boxes = std::move(out.boxes);
      any = true;
    }
  }
  for (auto& b : best.boxes) b.box.class_label = class_label_;
  return best;
}

std::unique_ptr<Detector> logo_detector_from_templates(std::span<const synth::LogoAsset> templates,
                                                       std::vector<double> scales, std::string detector_id,
                                                       Resampling resampling) {
  if (templates.empty()) throw Error(ErrorKind::InvalidConfig, "empty template list");
  const std::string& cls = templates.front().class_label;
  std::vector<Raster> rasters;
  for (const auto& logo : templates) {
    if (logo.class_label != cls) throw Error(ErrorKind::InvalidConfig, "templates span several classes");
    if (logo.split != synth::Split::Train) {
      throw Error(ErrorKind::InvalidConfig, "template " + logo.logo_id + " is not from the Train split");
    }
    if (logo.compliance != synth::Compliance::NonCompliant) {
      throw Error(ErrorKind::InvalidConfig, "template " + logo.logo_id + " is a compliant lookalike");
    }
    rasters.push_back(logo.pixels);
  }
  if (detector_id.empty()) detector_id = "logo_" + cls;
  return std::make_unique<TemplateLogoDetector>(std::move(detector_id), cls, std::move(rasters),
                                                std::move(scales), resampling);
}

// --- skin ratio --------------------------------------------------------------

bool is_skin(Rgba p) noexcept {
  const int r = p.r;
  const int g = p.g;
  const int b = p.b;
  const int mx = std::max({r, g, b});
  const int mn = std::min({r, g, b});
  const bool rgb_rule = r > 95 && g > 40 && b > 20 && (mx - mn) > 15 && std::abs(r - g) > 15 && r > g && r > b;
  if (!rgb_rule) return false;
  const double cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
  const double cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
  return cb >= 77.0 && cb <= 127.0 && cr >= 133.0 && cr <= 173.0;
}

double skin_ratio(const Raster& image) {
  if (image.empty()) return 0.0;
  std::size_t skin = 0;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) skin += is_skin(image.at(x, y)) ? 1 : 0;
  }
  return static_cast<double>(skin) / static_cast<double>(image.pixel_count());
}

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

DetectorOutput skin_ratio_detect(const Raster& image, const std::string& detector_id) {
  return {detector_id, sigmoid(kSkinSlope * skin_ratio(image) + kSkinIntercept), {}};
}

const std::string& SkinRatioDetector::kind() const {
  static const std::string k = "skin";
  return k;
}

// --- shallow classifier ------------------------------------------------------

namespace {

double softplus(double z) noexcept { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double margin(const ShallowModel& m, const Signature& s) {
  double z = m.bias;
  for (std::size_t d = 0; d < m.weights.size(); ++d) z += m.weights[d] * s.values[d];
  return z;
}

void check_dimensions(const ShallowModel& m, std::span<const LabeledSignature> samples) {
  for (const auto& s : samples) {
    if (s.signature.dimension() != m.dimension()) {
      throw Error(ErrorKind::DimensionError, "sample dimension " + std::to_string(s.signature.dimension()) +
                                                 " != model dimension " + std::to_string(m.dimension()));
    }
  }
}

}  // namespace

double logistic_loss(const ShallowModel& model, std::span<const LabeledSignature> samples, double l2) {
  check_dimensions(model, samples);
  double loss = 0.0;
  for (const auto& s : samples) {
    const double z = margin(model, s.signature);
    loss += softplus(z) - (s.positive ? z : 0.0);
  }
  loss /= static_cast<double>(samples.size());
  double norm2 = 0.0;
  for (double w : model.weights) norm2 += w * w;
  return loss + 0.5 * l2 * norm2;
}

ShallowModel logistic_gradient(const ShallowModel& model, std::span<const LabeledSignature> samples, double l2) {
  check_dimensions(model, samples);
  ShallowModel grad{std::vector<double>(model.dimension(), 0.0), 0.0};
  for (const auto& s : samples) {
    const double residual = sigmoid(margin(model, s.signature)) - (s.positive ? 1.0 : 0.0);
    for (std::size_t d = 0; d < grad.weights.size(); ++d) grad.weights[d] += residual * s.signature.values[d];
    grad.bias += residual;
  }
  const double n = static_cast<double>(samples.size());
  for (std::size_t d = 0; d < grad.weights.size(); ++d) {
    grad.weights[d] = grad.weights[d] / n + l2 * model.weights[d];
  }
  grad.bias /= n;
  return grad;
}

ShallowFit shallow_fit(std::span<const LabeledSignature> samples, const LogisticHyper& hyper) {
  if (samples.empty()) throw Error(ErrorKind::DegenerateTraining, "no training samples");
  const bool any_pos = std::any_of(samples.begin(), samples.end(), [](const auto& s) { return s.positive; });
  const bool any_neg = std::any_of(samples.begin(), samples.end(), [](const auto& s) { return !s.positive; });
  if (!any_pos || !any_neg) throw Error(ErrorKind::DegenerateTraining, "training data has a single class");
  if (!(hyper.learning_rate > 0.0) || hyper.epochs < 0 || !(hyper.l2 >= 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "invalid logistic hyper-parameters");
  }
  ShallowFit fit;
  fit.model.weights.assign(samples.front().signature.dimension(), 0.0);
  check_dimensions(fit.model, samples);
  fit.loss_history.push_back(logistic_loss(fit.model, samples, hyper.l2));
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const ShallowModel grad = logistic_gradient(fit.model, samples, hyper.l2);
    for (std::size_t d = 0; d < grad.weights.size(); ++d) {
      fit.model.weights[d] -= hyper.learning_rate * grad.weights[d];
    }
    fit.model.bias -= hyper.learning_rate * grad.bias;
    fit.loss_history.push_back(logistic_loss(fit.model, samples, hyper.l2));
  }
  return fit;
}

double shallow_score(const ShallowModel& model, const Signature& signature) {
  if (signature.dimension() != model.dimension()) {
    throw Error(ErrorKind::DimensionError, "signature dimension " + std::to_string(signature.dimension()) +
                                               " != model dimension " + std::to_string(model.dimension()));
  }
  return sigmoid(margin(model, signature));
}

DetectorOutput shallow_detect(const ShallowModel& model, const Raster& image, const SignatureExtractor& extractor,
                              const std::string& detector_id) {
  return {detector_id, shallow_score(model, extractor.extract(image)), {}};
}

nlohmann::json shallow_model_json(const ShallowModel& model) {
  return {{"weights", model.weights}, {"bias", model.bias}, {"dimension", model.dimension()}};
}

ShallowModel shallow_model_from_json(const nlohmann::json& j) {
  ShallowModel m{j.at("weights").get<std::vector<double>>(), j.at("bias").get<double>()};
  if (j.at("dimension").get<std::size_t>() != m.dimension()) {
    throw Error(ErrorKind::DimensionError, "model dimension field disagrees with weights");
  }
  return m;
}

void save_shallow_model(const ShallowModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << shallow_model_json(model).dump(2) << '\n';
}

ShallowModel load_shallow_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
  return shallow_model_from_json(nlohmann::json::parse(in));
}

ShallowDetector::ShallowDetector(std::string detector_id, std::string class_label, ShallowModel model,
                                 std::shared_ptr<const SignatureExtractor> extractor)
    : id_(std::move(detector_id)),
      class_label_(std::move(class_label)),
      model_(std::move(model)),
      extractor_(std::move(extractor)) {
  if (!extractor_) {
    extractor_ = std::shared_ptr<const SignatureExtractor>(&default_extractor(), [](const SignatureExtractor*) {});
  }
  if (extractor_->dimension() != model_.dimension()) {
    throw Error(ErrorKind::DimensionError, "shallow model does not match the signature extractor");
  }
}

const std::string& ShallowDetector::kind() const {
  static const std::string k = "shallow";
  return k;
}

DetectorOutput ShallowDetector::detect(const Raster& image) const {
  return shallow_detect(model_, image, *extractor_, id_);
}

// --- registry ----------------------------------------------------------------

void DetectorRegistry::add(std::shared_ptr<const Detector> detector) {
  const std::string id = detector->id();
  if (!detectors_.emplace(id, std::move(detector)).second) {
    throw Error(ErrorKind::ConfigError, "duplicate detector id " + id);
  }
}

std::shared_ptr<const Detector> DetectorRegistry::find(const std::string& detector_id) const {
  auto it = detectors_.find(detector_id);
  return it == detectors_.end() ? nullptr : it->second;
}

std::vector<std::string> DetectorRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : detectors_) out.push_back(id);
  return out;
}

namespace {

template <class Resolve>
void add_from_config(DetectorRegistry& registry, const std::string& id, const nlohmann::json& entry,
                     const Resolve& resolve) {
  const std::string kind = entry.at("kind").get<std::string>();
  const std::string cls = entry.value("class", std::string{});
  const nlohmann::json params = entry.value("params", nlohmann::json::object());
  if (kind == "skin") {
    registry.add(std::make_shared<SkinRatioDetector>(id, cls.empty() ? "nudity" : cls));
  } else if (kind == "shallow") {
    registry.add(std::make_shared<ShallowDetector>(id, cls, load_shallow_model(resolve(params.at("model")))));
  } else if (kind == "template") {
    const auto logos = synth::load_logos(resolve(params.at("logos_dir").get<std::string>()));
    std::vector<synth::LogoAsset> chosen;
    for (const auto& logo : logos) {
      if (logo.class_label == cls && logo.split == synth::Split::Train &&
          logo.compliance == synth::Compliance::NonCompliant) {
        chosen.push_back(logo);
      }
    }
    const auto resampling =
        params.value("resampling", std::string("nearest")) == "bilinear" ? Resampling::Bilinear : Resampling::Nearest;
    registry.add(logo_detector_from_templates(chosen, params.at("scales").get<std::vector<double>>(), id, resampling));
  } else {
    throw Error(ErrorKind::ConfigError, "detector " + id + " has unknown kind '" + kind + "'");
  }
}

}  // namespace

DetectorRegistry DetectorRegistry::from_config(const nlohmann::json& config, const std::filesystem::path& base_dir) {
  if (!config.is_object()) throw Error(ErrorKind::ConfigError, "detector registry must be an object");
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  DetectorRegistry registry;
  for (const auto& [id, entry] : config.items()) {
    try {
      add_from_config(registry, id, entry, resolve);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ConfigError, "detector " + id + ": " + e.what());
    }
  }
  return registry;
}

}  // namespace modgate
