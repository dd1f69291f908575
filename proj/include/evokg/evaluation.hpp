#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evokg/data.hpp"
#include "evokg/training.hpp"

namespace evokg {

enum class InferenceMode { kGroundTruth, kFrozen };
std::string mode_name(InferenceMode mode);
InferenceMode parse_mode(const std::string& name);

// 1 + #strictly greater + ceil(#ties / 2), ties excluding the answer itself. Candidates
// flagged in `exclude` (other than the answer) are skipped; empty means raw ranking.
std::size_t rank_query(std::span<const double> scores, std::size_t answer, std::span<const char> exclude = {});

struct Metrics {
  std::size_t count = 0;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
};
Metrics compute_metrics(std::span<const std::size_t> ranks);

struct TimestampMetrics {
  std::size_t timestamp = 0;
  Metrics metrics;
};

struct MetricReport {
  Task task = Task::kEntity;  // kEntity or kRelation
  Split split = Split::kTest;
  InferenceMode mode = InferenceMode::kGroundTruth;
  bool filtered = false;
  Metrics overall;
  std::vector<TimestampMetrics> per_timestamp;
  std::vector<std::size_t> ranks;  // in query order, for diagnostics
};

struct EvalOptions {
  Split split = Split::kTest;
  InferenceMode mode = InferenceMode::kGroundTruth;
  Task task = Task::kEntity;
  bool filtered = false;
  std::size_t batch_size = 1024;
};

// Scores every fact of the split (both directions via inverse relations). Frozen mode needs
// the end-of-training state; ground-truth mode re-evolves the window ending just before each
// evaluated snapshot.
MetricReport evaluate(const Model& model, const FactStore& store, const EvolutionState* frozen_state,
                      const EvalOptions& options);

// Scores all (s, r, ?) queries of one snapshot against a given state; returns one rank per fact.
std::vector<std::size_t> rank_snapshot(const Model& model, const EvolutionState& state,
                                       std::span<const Quadruple> facts, Task task, std::size_t batch_size,
                                       const FactStore* filter_store = nullptr);

// CSV: task,split,mode,setting,count,mrr,hits1,hits3,hits10 (one row per report).
void write_metrics_csv(std::span<const MetricReport> reports, const std::filesystem::path& path);
std::string metrics_json(const MetricReport& report);
void write_metrics_json(std::span<const MetricReport> reports, const std::filesystem::path& path);

}  // namespace evokg
