#pragma once

// Experiment configuration: a JSON document with every default
// materialized, dotted-path overrides, and named figure recipes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace tdlab::orchestrator {

using nlohmann::json;

struct NNSettings {
  std::vector<int> widths{100};
  int epochs = 1000;
  double lr = 0.01;
  double momentum = 0.9;
  std::vector<int> checkpoints;  ///< reported epochs; empty = final only
  int teacher_width = 100;
  int teacher_probe = 100000;
};

struct BiasVarSettings {
  int S_theta = 10;
  int S_noise = 10;
  int S_data = 10;
  bool bessel = false;
  int direct_replicates = 0;
};

struct SpectrumSettings {
  std::string mode = "both";  ///< analytic | empirical | both
  int bins = 100;
  double epsilon = 1e-7;
  double gap_threshold = 1e-4;
  bool top_d_split = true;
};

struct DatasetSettings {
  std::string kind = "gaussian";  ///< gaussian | mnist
  std::string images;
  std::string labels;
  int side = 10;
  int limit = 0;
};

/// Task kinds: "rf-profile", "rf-phase" (RF sweeps over P and N),
/// "biasvar", "nn-phase", "spectrum", "gap-curve".
struct ExperimentConfig {
  std::string experiment_id = "custom";
  std::string task = "rf-profile";
  int D = 100;
  std::vector<double> p_over_d{10.0};
  std::vector<double> n_over_d;  ///< default: 25 log-spaced points, 10^-1 .. 10^2.3
  int replicates = 10;
  // Series: every combination of these is swept separately.
  std::vector<std::string> activations{"tanh"};
  std::vector<double> snr{0.2};     ///< "inf" in JSON for noiseless labels
  std::vector<double> gamma{1e-3};  ///< ridge gamma (RF) or weight decay (NN)
  std::vector<int> K{1};            ///< ensemble size
  std::uint64_t seed = 0;
  int m_test = 10000;
  NNSettings nn;
  BiasVarSettings biasvar;
  SpectrumSettings spectrum;
  DatasetSettings dataset;
  std::string output = "results.csv";

  /// Unknown keys and ill-typed values throw ConfigError.
  static ExperimentConfig from_json(const json& j);
  json to_json() const;
  void validate() const;
  /// FNV-1a of the canonical JSON without the output path, as 16 hex digits.
  std::string hash() const;
  std::string model() const;  ///< "RF" or "NN"
};

/// A 25-point log grid 10^-1 .. 10^2.3 (0.1417 dex steps).
std::vector<double> default_ratio_grid();
/// 10^(lo + i (hi - lo)/(points - 1)).
std::vector<double> log_grid(double log10_lo, double log10_hi, int points);

/// Sets a dotted path ("nn.epochs=200"); the value parses as JSON and falls
/// back to a string.
void apply_override(json& j, std::string_view assignment);

ExperimentConfig load_config(const std::filesystem::path& path);

std::vector<std::string> recipe_names();
/// Fully resolved desk-scale config of a figure recipe. Throws ConfigError
/// listing the valid names.
ExperimentConfig recipe(std::string_view name);

/// Code version written to every output row.
const char* code_version();

}  // namespace tdlab::orchestrator
