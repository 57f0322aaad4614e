// Command-line verbs: train, compare, sweep, inspect-buffer.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dxp::cli {

// Entry point shared by the dxp binary and the tests. Returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

inline constexpr std::array<std::string_view, 12> kMetricFields = {
    "episode_return_ext", "r_intr_mean",   "lambda",        "loss_recon",
    "loss_reward",        "loss_value",    "loss_dynamics", "priority_max",
    "priority_mean",      "wall_ms",       "episode",       "train_step",
};

// Episode-level metrics are summarized over episode records, everything
// else over train records.
bool is_episode_metric(std::string_view metric);

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricRow {
  std::string kind;
  std::uint64_t step = 0;
  std::map<std::string, double, std::less<>> values;
};

struct RunMetrics {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string condition;
  std::vector<MetricRow> rows;
};

// Reads <dir>/metrics.jsonl and <dir>/config.json. Throws MetricsError on
// missing files or records lacking a field.
RunMetrics load_run(const std::filesystem::path& dir);

// Trapezoidal integral of y over x (x nondecreasing). Zero for fewer than
// two points.
double trapezoid_auc(std::span<const double> x, std::span<const double> y);

struct MetricSummary {
  std::string condition;
  std::string metric;
  std::size_t runs = 0;
  double auc_mean = 0.0, auc_min = 0.0, auc_max = 0.0;
  double final_mean = 0.0, final_min = 0.0, final_max = 0.0;
};

std::vector<MetricSummary> summarize(std::span<const RunMetrics> runs);

}  // namespace dxp::cli
