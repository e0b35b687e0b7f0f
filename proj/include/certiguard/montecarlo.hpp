#pragma once

#include <cstdint>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "certiguard/runtime.hpp"

namespace certiguard::montecarlo {

/// Per-trace statistics kept by a batch; the full rows are dropped.
struct TraceSummary {
  std::uint64_t seed = 0;
  bool safe = true;
  double min_h = 0.0;
  std::size_t num_triggers = 0;
  std::size_t num_infeasible = 0;
  std::size_t windows = 0;
  std::size_t windows_within_delta = 0;
  double max_displacement_excess = -1.0;
  bool failed = false;
  std::string failure;
  std::vector<double> runtime_scores;  // |x(t_i) - xhat(t_i)| at each trigger
};

TraceSummary summarize_trace(const runtime::TrajectoryRecord& rec, double delta);

struct BatchResult {
  std::vector<TraceSummary> traces;  // sorted by seed
  nlohmann::json config;
  double safety_rate = 0.0;
  double coverage_rate = 0.0;  // inter-trigger windows with drift <= delta
  std::uint64_t seed_lo = 0;
  std::uint64_t seed_hi = 0;    // inclusive
  bool exclude_infeasible = false;

  /// Recomputes the rates and seed range from `traces`.
  void refresh();
};

/// Union of two batches over disjoint seeds; the result does not depend on
/// argument order.
BatchResult merge(const BatchResult& a, const BatchResult& b);

/// Traces with seeds base_seed .. base_seed + n - 1, run on up to `jobs`
/// workers. When keep_records is non-null the full records are stored there,
/// indexed like the seeds.
BatchResult run_batch(const runtime::RolloutContext& ctx, const runtime::RolloutConfig& cfg,
                      std::size_t n_traces, std::uint64_t base_seed, std::size_t jobs = 1,
                      bool exclude_infeasible = false,
                      std::vector<runtime::TrajectoryRecord>* keep_records = nullptr);

/// Fraction of the counted traces that stayed in the safe set. Failed traces
/// and traces that needed the infeasibility fallback count as unsafe, or are
/// dropped from the count when exclude_infeasible is set.
double safety_rate(std::span<const TraceSummary> traces, bool exclude_infeasible = false);
double safety_rate(std::span<const runtime::TrajectoryRecord> records,
                   bool exclude_infeasible = false);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

struct Histogram {
  std::vector<HistogramBin> bins;
  double quantile = 0.0;  // empirical (1 - alpha) quantile
  double alpha = 0.25;
};

/// Bins [k w, (k+1) w) from zero up to the largest value.
Histogram score_histogram(std::span<const double> values, double bin_width, double alpha = 0.25);
void write_histogram_csv(std::ostream& os, const Histogram& h);

/// One row per logged position: trace,seed,t,x,y.
void write_polylines_csv(std::ostream& os, std::span<const runtime::TrajectoryRecord> records);

nlohmann::json to_json(const TraceSummary& s);
TraceSummary trace_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BatchResult& b);
BatchResult batch_from_json(const nlohmann::json& j);

}  // namespace certiguard::montecarlo
