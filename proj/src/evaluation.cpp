#include "evokg/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "evokg/errors.hpp"
#include "json.hpp"

namespace evokg {
namespace {

using Key = std::pair<std::size_t, std::size_t>;
using AnswerSets = std::map<Key, std::set<std::size_t>>;

Key query_key(const Quadruple& f, Task task) {
  return task == Task::kEntity ? Key{f.subject, f.relation} : Key{f.subject, f.object};
}
std::size_t query_answer(const Quadruple& f, Task task) { return task == Task::kEntity ? f.object : f.relation; }

// Every known answer of each query over the whole dataset, for the filtered setting.
AnswerSets known_answers(const FactStore& store, Task task) {
  AnswerSets out;
  for (const auto& snap : store.timeline) {
    for (const auto& f : snap.facts) out[query_key(f, task)].insert(query_answer(f, task));
  }
  return out;
}

std::vector<std::size_t> rank_with(const Model& model, const EvolutionState& state, std::span<const Quadruple> facts,
                                   Task task, std::size_t batch_size, const AnswerSets* known) {
  if (task == Task::kBoth) throw ConfigError("ranking needs a single task, entity or relation");
  if (batch_size == 0) batch_size = 1;
  std::map<Key, std::size_t> index;
  std::vector<Key> queries;
  for (const auto& f : facts) {
    const Key k = query_key(f, task);
    if (index.try_emplace(k, queries.size()).second) queries.push_back(k);
  }
  const std::size_t candidates =
      task == Task::kEntity ? state.entities.shape().at(0) : state.relations.shape().at(0);
  Tensor logits(Shape{queries.size(), candidates});
  for (std::size_t begin = 0; begin < queries.size(); begin += batch_size) {
    const std::size_t end = std::min(queries.size(), begin + batch_size);
    std::vector<std::size_t> a, b;
    for (std::size_t q = begin; q < end; ++q) {
      a.push_back(queries[q].first);
      b.push_back(queries[q].second);
    }
    Tape tape(Tape::Grad::kNoGrad);
    Forward fw{tape, Mode::kEval};
    const Var out = task == Task::kEntity ? entity_logits(state, a, b, model.entity_decoder, fw)
                                          : relation_logits(state, a, b, model.relation_decoder, fw);
    std::copy(out.value().data().begin(), out.value().data().end(), logits.raw() + begin * candidates);
  }
  std::vector<std::size_t> ranks;
  ranks.reserve(facts.size());
  std::vector<char> exclude;
  for (const auto& f : facts) {
    const Key k = query_key(f, task);
    const std::size_t answer = query_answer(f, task);
    std::span<const char> mask;
    if (known != nullptr) {
      exclude.assign(candidates, 0);
      for (std::size_t c : known->at(k)) exclude[c] = 1;
      mask = exclude;
    }
    ranks.push_back(rank_query(logits.row(index.at(k)), answer, mask));
  }
  return ranks;
}

nlohmann::json metrics_to_json(const Metrics& m) {
  return {{"count", m.count}, {"mrr", m.mrr}, {"hits1", m.hits1}, {"hits3", m.hits3}, {"hits10", m.hits10}};
}

}  // namespace

std::string mode_name(InferenceMode mode) { return mode == InferenceMode::kGroundTruth ? "gt" : "frozen"; }

InferenceMode parse_mode(const std::string& name) {
  if (name == "gt" || name == "ground_truth") return InferenceMode::kGroundTruth;
  if (name == "frozen") return InferenceMode::kFrozen;
  throw ConfigError("unknown inference mode '" + name + "' (expected gt or frozen)");
}

std::size_t rank_query(std::span<const double> scores, std::size_t answer, std::span<const char> exclude) {
  if (answer >= scores.size()) {
    throw DataError("answer " + std::to_string(answer) + " out of range for " + std::to_string(scores.size()) +
                    " candidates");
  }
  if (!exclude.empty() && exclude.size() != scores.size()) throw ShapeError("rank_query: filter mask size mismatch");
  const double target = scores[answer];
  if (std::isnan(target)) throw NumericError("rank_query: answer score is NaN");
  std::size_t greater = 0, ties = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i == answer || (!exclude.empty() && exclude[i])) continue;
    if (std::isnan(scores[i])) throw NumericError("rank_query: candidate score is NaN");
    if (scores[i] > target) {
      ++greater;
    } else if (scores[i] == target) {
      ++ties;
    }
  }
  return 1 + greater + (ties + 1) / 2;
}

Metrics compute_metrics(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw DataError("compute_metrics: no ranks");
  Metrics m;
  m.count = ranks.size();
  for (std::size_t r : ranks) {
    if (r == 0) throw DataError("compute_metrics: ranks are 1-based");
    m.mrr += 1.0 / static_cast<double>(r);
    m.hits1 += r <= 1 ? 1.0 : 0.0;
    m.hits3 += r <= 3 ? 1.0 : 0.0;
    m.hits10 += r <= 10 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(m.count);
  m.mrr /= n;
  m.hits1 /= n;
  m.hits3 /= n;
  m.hits10 /= n;
  return m;
}

std::vector<std::size_t> rank_snapshot(const Model& model, const EvolutionState& state,
                                       std::span<const Quadruple> facts, Task task, std::size_t batch_size,
                                       const FactStore* filter_store) {
  if (filter_store == nullptr) return rank_with(model, state, facts, task, batch_size, nullptr);
  const AnswerSets known = known_answers(*filter_store, task);
  return rank_with(model, state, facts, task, batch_size, &known);
}

MetricReport evaluate(const Model& model, const FactStore& store, const EvolutionState* frozen_state,
                      const EvalOptions& options) {
  if (options.task == Task::kBoth) throw ConfigError("evaluate: pick entity or relation; run twice for both");
  if (!store.augmented) throw DataError("evaluation requires a store with inverse facts added");
  if (options.mode == InferenceMode::kFrozen && frozen_state == nullptr) {
    throw ConfigError("frozen evaluation needs the end-of-training state stored in the checkpoint");
  }
  MetricReport report;
  report.task = options.task;
  report.split = options.split;
  report.mode = options.mode;
  report.filtered = options.filtered;
  std::optional<AnswerSets> known;
  if (options.filtered) known = known_answers(store, options.task);

  const SplitRange range = store.range(options.split);
  for (std::size_t t = range.begin; t < range.end; ++t) {
    const auto& facts = store.timeline[t].facts;
    if (facts.empty()) continue;
    std::vector<std::size_t> ranks;
    if (options.mode == InferenceMode::kFrozen) {
      ranks = rank_with(model, *frozen_state, facts, options.task, options.batch_size, known ? &*known : nullptr);
    } else {
      // Snapshot 0 has no history to evolve from, so it is never a prediction target.
      if (t == 0) continue;
      Tape tape(Tape::Grad::kNoGrad);
      Forward fw{tape, Mode::kEval};
      const EvolutionState init = initial_state(model.evolution, fw);
      const EvolutionState state =
          evolve(history_window(store, t - 1, model.config.history), init, model.evolution, fw).state;
      ranks = rank_with(model, state, facts, options.task, options.batch_size, known ? &*known : nullptr);
    }
    report.per_timestamp.push_back({t, compute_metrics(ranks)});
    report.ranks.insert(report.ranks.end(), ranks.begin(), ranks.end());
  }
  if (report.ranks.empty()) throw DataError("evaluate: split " + split_name(options.split) + " has no scorable facts");
  report.overall = compute_metrics(report.ranks);
  return report;
}

void write_metrics_csv(std::span<const MetricReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "task,split,mode,setting,count,mrr,hits1,hits3,hits10\n";
  for (const auto& r : reports) {
    out << task_name(r.task) << ',' << split_name(r.split) << ',' << mode_name(r.mode) << ','
        << (r.filtered ? "filtered" : "raw") << ',' << r.overall.count << ',' << r.overall.mrr << ','
        << r.overall.hits1 << ',' << r.overall.hits3 << ',' << r.overall.hits10 << '\n';
  }
}

std::string metrics_json(const MetricReport& report) {
  nlohmann::json j;
  j["task"] = task_name(report.task);
  j["split"] = split_name(report.split);
  j["mode"] = mode_name(report.mode);
  j["setting"] = report.filtered ? "filtered" : "raw";
  j["overall"] = metrics_to_json(report.overall);
  auto& per = j["per_timestamp"] = nlohmann::json::array();
  for (const auto& ts : report.per_timestamp) {
    auto row = metrics_to_json(ts.metrics);
    row["timestamp"] = ts.timestamp;
    per.push_back(std::move(row));
  }
  return j.dump(2);
}

void write_metrics_json(std::span<const MetricReport> reports, const std::filesystem::path& path) {
  nlohmann::json all = nlohmann::json::array();
  for (const auto& r : reports) all.push_back(nlohmann::json::parse(metrics_json(r)));
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << all.dump(2) << '\n';
}

}  // namespace evokg
