#pragma once

// Seeded sweep execution with crash-safe CSV emission.
//
// Work items are independent; each produces a block of rows that is
// appended to <output>.partial followed by a completion marker. A rerun
// with the same config hash keeps the complete blocks and computes the
// rest. On completion the blocks are assembled in canonical item order,
// aggregate rows (mean, stderr over replicates) are added and the CSV is
// written atomically, together with <output>.meta.json.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "tdlab/config.hpp"

namespace tdlab::orchestrator {

inline constexpr const char* kSeedSchedule = "splitmix64-fnv1a-v1";
inline constexpr const char* kRoundingRule = "N = round(D * n_over_d), P = round(D * p_over_d), half away from zero";

/// Columns of the long-format CSV, in order.
const std::vector<std::string>& csv_columns();

/// One CSV row. Sweep-wide columns (experiment_id, model, config_hash,
/// seed_schedule, code_version) live in SweepResult.
struct Row {
  std::string kind;  ///< replicate | mean | stderr | estimate | analytic | empirical | error
  int D = 0;
  long N = 0;
  long P = 0;  ///< RF features, or NN parameter count
  double n_over_d = 0.0;
  double p_over_d = 0.0;
  std::string activation;
  double r = 0.0, eta = 0.0, zeta = 0.0;
  double snr = 0.0, gamma = 0.0;
  int K = 1;
  int width = 0;       ///< NN hidden width; 0 for RF
  int epoch = -1;      ///< NN only; -1 = empty
  int replicate = -1;  ///< -1 = empty (aggregates, estimates)
  std::string seed_tuple;
  std::string metric;
  double x = std::numeric_limits<double>::quiet_NaN();  ///< abscissa of spectra; NaN = empty
  double value = 0.0;
};

struct SweepOptions {
  std::filesystem::path output;  ///< overrides config.output when set
  bool resume = true;            ///< reuse complete blocks of a matching partial file
  /// Stop after this many newly computed items without assembling (simulates a
  /// crash; for tests). Negative: no limit.
  long stop_after = -1;
  /// Called after each item with (done, total).
  std::function<void(long, long)> progress;
};

struct SweepResult {
  std::string experiment_id, model, config_hash, code_version;
  std::vector<Row> rows;  ///< final CSV content, in file order
  long items = 0;
  long resumed = 0;  ///< items taken from a partial file
  long errors = 0;   ///< items that threw
  bool complete = false;
  std::filesystem::path csv, meta;
};

SweepResult run_sweep(const ExperimentConfig& cfg, const SweepOptions& opt = {});

/// Formats one row (no trailing newline).
std::string format_row(const Row& row, const std::string& experiment_id, const std::string& model,
                       const std::string& config_hash);
/// Parses a data line written by format_row. Throws FormatError.
Row parse_row(const std::string& line);
/// Reads every data row of a CSV file written by run_sweep.
std::vector<Row> read_csv(const std::filesystem::path& path);

/// Rows matching kind and metric, in file order.
std::vector<Row> select(const std::vector<Row>& rows, const std::string& kind, const std::string& metric);

}  // namespace tdlab::orchestrator
