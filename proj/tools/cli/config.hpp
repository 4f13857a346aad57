#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modgate/catalog.hpp"
#include "modgate/evalkit.hpp"
#include "modgate/pipeline.hpp"
#include "modgate/policy.hpp"
#include "modgate/router.hpp"
#include "modgate/synthgen.hpp"

namespace modgate::cli {

/// Values given on the command line; they win over the file and MODGATE_* variables.
struct FlagOverrides {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::string> bind;
  std::optional<std::string> workdir;
};

struct RunConfig {
  std::filesystem::path workdir;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::string bind_host;
  int bind_port = 0;

  CorpusSpec corpus;
  synth::LogoSpec logos;
  synth::DatasetSpec synth;
  std::size_t index_k = 10;
  nlohmann::json detectors;
  RoutingTable routing;
  ThresholdPolicy thresholds;
  ValidationLimits limits;
  L1Mode l1_mode = L1Mode::MetadataTrusted;
  std::size_t review_budget = 20;
  double review_floor = 0.5;
  double iou_min = 0.5;
  TuneOptions tune;
  LogisticHyper shallow;
  std::string shallow_class;

  std::filesystem::path dir(const std::string& name) const { return workdir / name; }
};

/// Built-in defaults as a config document.
nlohmann::json default_config();

/// MODGATE_FOO__BAR=value becomes /foo/bar. Values parse as JSON when they
/// can, otherwise they are strings.
nlohmann::json env_overrides(const std::map<std::string, std::string>& env);
std::map<std::string, std::string> process_environment();

/// defaults <- file <- environment <- flags, merged as JSON merge patches.
nlohmann::json merged_config(const FlagOverrides& flags, const std::map<std::string, std::string>& env);

/// Every problem in the document; empty when it is usable.
std::vector<std::string> validate_config(const nlohmann::json& doc);

/// Validates in full, then converts. ConfigError lists every violation.
RunConfig parse_config(const nlohmann::json& doc);

}  // namespace modgate::cli
