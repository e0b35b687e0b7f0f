#include "certiguard/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "certiguard/parallel.hpp"

namespace certiguard::montecarlo {

namespace {

bool counts_as_safe(const TraceSummary& t) { return t.safe && !t.failed && t.num_infeasible == 0; }
bool excluded(const TraceSummary& t) { return t.failed || t.num_infeasible > 0; }

}  // namespace

TraceSummary summarize_trace(const runtime::TrajectoryRecord& rec, double delta) {
  TraceSummary s;
  s.seed = rec.seed;
  s.safe = rec.safe;
  s.min_h = rec.min_h;
  s.num_triggers = rec.num_triggers;
  s.num_infeasible = rec.num_infeasible;
  s.failed = rec.failed;
  s.failure = rec.failure;
  s.windows = rec.windows.size();
  s.runtime_scores.reserve(rec.windows.size());
  for (const auto& w : rec.windows) {
    if (w.max_drift <= delta) ++s.windows_within_delta;
    s.max_displacement_excess = std::max(s.max_displacement_excess, w.max_displacement_excess);
    s.runtime_scores.push_back(w.estimate_error);
  }
  return s;
}

void BatchResult::refresh() {
  std::sort(traces.begin(), traces.end(),
            [](const TraceSummary& a, const TraceSummary& b) { return a.seed < b.seed; });
  if (traces.empty()) {
    safety_rate = coverage_rate = 0.0;
    seed_lo = seed_hi = 0;
    return;
  }
  seed_lo = traces.front().seed;
  seed_hi = traces.back().seed;
  std::size_t counted = 0;
  for (const auto& t : traces) counted += (exclude_infeasible && excluded(t)) ? 0 : 1;
  safety_rate = counted == 0 ? 0.0 : montecarlo::safety_rate(traces, exclude_infeasible);
  std::size_t windows = 0;
  std::size_t within = 0;
  for (const auto& t : traces) {
    windows += t.windows;
    within += t.windows_within_delta;
  }
  coverage_rate = windows == 0 ? 0.0 : static_cast<double>(within) / static_cast<double>(windows);
}

BatchResult merge(const BatchResult& a, const BatchResult& b) {
  if (a.exclude_infeasible != b.exclude_infeasible) {
    throw std::invalid_argument("merge: batches disagree on exclude_infeasible");
  }
  BatchResult out;
  out.config = a.config.is_null() ? b.config : a.config;
  out.exclude_infeasible = a.exclude_infeasible;
  out.traces = a.traces;
  out.traces.insert(out.traces.end(), b.traces.begin(), b.traces.end());
  out.refresh();
  for (std::size_t i = 1; i < out.traces.size(); ++i) {
    if (out.traces[i].seed == out.traces[i - 1].seed) {
      throw std::invalid_argument("merge: seed " + std::to_string(out.traces[i].seed) +
                                  " appears in both batches");
    }
  }
  return out;
}

BatchResult run_batch(const runtime::RolloutContext& ctx, const runtime::RolloutConfig& cfg,
                      std::size_t n_traces, std::uint64_t base_seed, std::size_t jobs,
                      bool exclude_infeasible, std::vector<runtime::TrajectoryRecord>* keep_records) {
  if (n_traces == 0) throw std::invalid_argument("run_batch: n_traces must be >= 1");
  BatchResult out;
  out.exclude_infeasible = exclude_infeasible;
  out.traces.resize(n_traces);
  if (keep_records) keep_records->assign(n_traces, {});
  parallel_for(n_traces, jobs, [&](std::size_t i) {
    const std::uint64_t seed = base_seed + i;
    runtime::TrajectoryRecord rec;
    try {
      rec = runtime::run_rollout(ctx, cfg, seed);
    } catch (const std::exception& e) {
      rec = {};
      rec.seed = seed;
      rec.mode = cfg.mode;
      rec.failed = true;
      rec.safe = false;
      rec.failure = e.what();
    }
    out.traces[i] = summarize_trace(rec, cfg.delta);
    if (keep_records) (*keep_records)[i] = std::move(rec);
  });
  out.refresh();
  return out;
}

double safety_rate(std::span<const TraceSummary> traces, bool exclude_infeasible) {
  if (traces.empty()) throw std::invalid_argument("safety_rate: no traces");
  std::size_t counted = 0;
  std::size_t safe = 0;
  for (const auto& t : traces) {
    if (exclude_infeasible && excluded(t)) continue;
    ++counted;
    if (counts_as_safe(t)) ++safe;
  }
  if (counted == 0) throw std::invalid_argument("safety_rate: every trace was excluded");
  return static_cast<double>(safe) / static_cast<double>(counted);
}

double safety_rate(std::span<const runtime::TrajectoryRecord> records, bool exclude_infeasible) {
  std::vector<TraceSummary> s;
  s.reserve(records.size());
  for (const auto& r : records) s.push_back(summarize_trace(r, 0.0));
  return safety_rate(s, exclude_infeasible);
}

Histogram score_histogram(std::span<const double> values, double bin_width, double alpha) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("score_histogram: bin width must be > 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("score_histogram: alpha must lie in (0, 1)");
  Histogram h;
  h.alpha = alpha;
  if (values.empty()) return h;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() < 0.0) throw std::invalid_argument("score_histogram: scores must be >= 0");
  const auto nbins = static_cast<std::size_t>(std::floor(sorted.back() / bin_width)) + 1;
  h.bins.resize(nbins);
  for (std::size_t k = 0; k < nbins; ++k) {
    h.bins[k].lo = static_cast<double>(k) * bin_width;
    h.bins[k].hi = static_cast<double>(k + 1) * bin_width;
  }
  for (double v : sorted) {
    auto k = static_cast<std::size_t>(std::floor(v / bin_width));
    k = std::min(k, nbins - 1);
    // Guard the edges against rounding in v / bin_width.
    if (v < h.bins[k].lo && k > 0) --k;
    if (v >= h.bins[k].hi && k + 1 < nbins) ++k;
    ++h.bins[k].count;
  }
  // Smallest value with at least ceil(n (1 - alpha)) scores at or below it.
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(n * (1.0 - alpha) - 1e-12));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  h.quantile = sorted[rank - 1];
  return h;
}

void write_histogram_csv(std::ostream& os, const Histogram& h) {
  const auto old = os.precision(17);
  os << "bin_lo,bin_hi,count\n";
  for (const auto& b : h.bins) os << b.lo << ',' << b.hi << ',' << b.count << '\n';
  os.precision(old);
}

void write_polylines_csv(std::ostream& os, std::span<const runtime::TrajectoryRecord> records) {
  const auto old = os.precision(17);
  os << "trace,seed,t,x,y\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (const auto& r : records[i].rows) {
      os << i << ',' << records[i].seed << ',' << r.t << ',' << r.x.px << ',' << r.x.py << '\n';
    }
  }
  os.precision(old);
}

nlohmann::json to_json(const TraceSummary& s) {
  nlohmann::json j = {{"seed", s.seed},
                      {"safe", s.safe},
                      {"min_h", s.min_h},
                      {"num_triggers", s.num_triggers},
                      {"num_infeasible", s.num_infeasible},
                      {"windows", s.windows},
                      {"windows_within_delta", s.windows_within_delta},
                      {"max_displacement_excess", s.max_displacement_excess},
                      {"failed", s.failed},
                      {"runtime_scores", s.runtime_scores}};
  if (s.failed) j["failure"] = s.failure;
  return j;
}

TraceSummary trace_from_json(const nlohmann::json& j) {
  TraceSummary s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.safe = j.at("safe").get<bool>();
  s.min_h = j.at("min_h").get<double>();
  s.num_triggers = j.at("num_triggers").get<std::size_t>();
  s.num_infeasible = j.at("num_infeasible").get<std::size_t>();
  s.windows = j.value("windows", std::size_t{0});
  s.windows_within_delta = j.value("windows_within_delta", std::size_t{0});
  s.max_displacement_excess = j.value("max_displacement_excess", -1.0);
  s.failed = j.value("failed", false);
  s.failure = j.value("failure", std::string{});
  s.runtime_scores = j.value("runtime_scores", std::vector<double>{});
  return s;
}

nlohmann::json to_json(const BatchResult& b) {
  nlohmann::json traces = nlohmann::json::array();
  for (const auto& t : b.traces) traces.push_back(to_json(t));
  return {{"config", b.config},
          {"n_traces", b.traces.size()},
          {"safety_rate", b.safety_rate},
          {"coverage_rate", b.coverage_rate},
          {"seed_range", {b.seed_lo, b.seed_hi}},
          {"exclude_infeasible", b.exclude_infeasible},
          {"traces", traces}};
}

BatchResult batch_from_json(const nlohmann::json& j) {
  BatchResult b;
  b.config = j.value("config", nlohmann::json{});
  b.exclude_infeasible = j.value("exclude_infeasible", false);
  for (const auto& t : j.at("traces")) b.traces.push_back(trace_from_json(t));
  b.refresh();
  return b;
}

}  // namespace certiguard::montecarlo
