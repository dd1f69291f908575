#include "evokg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "evokg/errors.hpp"

namespace evokg {
namespace {

struct QueryBatch {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  Tensor labels;
  std::vector<double> weights;
};

// Groups facts by (key_a, key_b); the label row marks every answer of the group.
template <typename KeyA, typename KeyB, typename Answer>
QueryBatch group_queries(std::span<const Quadruple> facts, std::size_t num_candidates, KeyA key_a, KeyB key_b,
                         Answer answer) {
  QueryBatch batch;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
  std::vector<std::pair<std::size_t, std::size_t>> hits;
  for (const auto& f : facts) {
    const auto key = std::make_pair(key_a(f), key_b(f));
    auto [it, fresh] = index.try_emplace(key, batch.first.size());
    if (fresh) {
      batch.first.push_back(key.first);
      batch.second.push_back(key.second);
      batch.weights.push_back(0.0);
    }
    batch.weights[it->second] += 1.0;
    const std::size_t a = answer(f);
    if (a >= num_candidates) throw DataError("answer id " + std::to_string(a) + " out of range");
    hits.emplace_back(it->second, a);
  }
  batch.labels = Tensor(Shape{batch.first.size(), num_candidates}, 0.0);
  for (auto [q, a] : hits) batch.labels.at(q, a) = 1.0;
  return batch;
}

Var zero_scalar() { return Var::constant(Tensor::scalar(0.0)); }

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint64_t out[1];
  seq.generate(reinterpret_cast<std::uint32_t*>(out), reinterpret_cast<std::uint32_t*>(out) + 2);
  return out[0];
}

std::vector<Tensor> snapshot_values(std::span<const NamedParameter> params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var.value());
  return out;
}

DecoderConfig decoder_config(const TrainConfig& c) {
  DecoderConfig d;
  d.dim = c.dim;
  d.num_kernels = c.num_kernels;
  d.kernel_width = c.kernel_width;
  d.dropout = c.dropout;
  return d;
}

}  // namespace

std::string task_name(Task task) {
  switch (task) {
    case Task::kEntity:
      return "entity";
    case Task::kRelation:
      return "relation";
    case Task::kBoth:
      return "both";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  if (name == "entity") return Task::kEntity;
  if (name == "relation") return Task::kRelation;
  if (name == "both") return Task::kBoth;
  throw ConfigError("unknown task '" + name + "' (expected entity, relation or both)");
}

void TrainConfig::validate() const {
  if (dim == 0) throw ConfigError("dim must be positive");
  if (dim < kernel_width) throw ConfigError("dim must be at least the kernel width " + std::to_string(kernel_width));
  if (num_layers == 0) throw ConfigError("layers must be at least 1");
  if (history == 0) throw ConfigError("history must be at least 1");
  if (lambda1 < 0 || lambda2 < 0) throw ConfigError("lambda1 and lambda2 must be non-negative");
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
  if (!(gamma >= 0)) throw ConfigError("gamma must be non-negative");
  if (num_kernels == 0) throw ConfigError("kernel count must be positive");
}

Model init_model(const TrainConfig& config, std::size_t num_entities, std::size_t num_relation_ids,
                 const StaticGraph* static_graph) {
  config.validate();
  Rng rng(stream_seed(config.seed, 0));
  Model m;
  m.config = config;
  EvolutionConfig ec;
  ec.dim = config.dim;
  ec.num_layers = config.num_layers;
  ec.dropout = config.dropout;
  ec.time_gate = config.time_gate;
  m.has_static = config.static_constraint && static_graph != nullptr;
  m.evolution = init_evolution_params(ec, num_entities, num_relation_ids, m.has_static ? static_graph : nullptr, rng);
  m.entity_decoder = init_decoder_params(decoder_config(config), rng);
  m.relation_decoder = init_decoder_params(decoder_config(config), rng);
  return m;
}

std::vector<NamedParameter> named_parameters(const Model& model) {
  const auto& e = model.evolution;
  std::vector<NamedParameter> out{{"entity_init", e.entity_init}, {"relation_init", e.relation_init}};
  for (std::size_t l = 0; l < e.layers.size(); ++l) {
    const std::string p = "gcn." + std::to_string(l) + ".";
    out.push_back({p + "aggregate", e.layers[l].aggregate});
    out.push_back({p + "self_loop", e.layers[l].self_loop});
    out.push_back({p + "isolated_loop", e.layers[l].isolated_loop});
  }
  out.push_back({"time_gate.weight", e.gate_weight});
  out.push_back({"time_gate.bias", e.gate_bias});
  const auto& g = e.gru;
  out.push_back({"gru.input_update", g.input_update});
  out.push_back({"gru.hidden_update", g.hidden_update});
  out.push_back({"gru.bias_update", g.bias_update});
  out.push_back({"gru.input_reset", g.input_reset});
  out.push_back({"gru.hidden_reset", g.hidden_reset});
  out.push_back({"gru.bias_reset", g.bias_reset});
  out.push_back({"gru.input_candidate", g.input_candidate});
  out.push_back({"gru.hidden_candidate", g.hidden_candidate});
  out.push_back({"gru.bias_candidate", g.bias_candidate});
  for (std::size_t r = 0; r < e.static_relation.size(); ++r) {
    out.push_back({"static.relation." + std::to_string(r), e.static_relation[r]});
  }
  if (e.static_init.defined()) out.push_back({"static.init", e.static_init});
  out.push_back({"entity_decoder.kernels", model.entity_decoder.kernels});
  out.push_back({"entity_decoder.fc", model.entity_decoder.fc});
  out.push_back({"relation_decoder.kernels", model.relation_decoder.kernels});
  out.push_back({"relation_decoder.fc", model.relation_decoder.fc});
  return out;
}

std::vector<NamedParameter> trainable_parameters(const Model& model) {
  const auto& c = model.config;
  std::vector<NamedParameter> out;
  for (auto& p : named_parameters(model)) {
    if (p.name.starts_with("time_gate.") && !c.time_gate) continue;
    if (p.name.starts_with("static.") && !model.has_static) continue;
    if (p.name.starts_with("entity_decoder.") && !(uses_entity(c.task) && c.lambda1 > 0)) continue;
    if (p.name.starts_with("relation_decoder.") && !(uses_relation(c.task) && c.lambda2 > 0)) continue;
    out.push_back(std::move(p));
  }
  return out;
}

Var entity_loss(const EvolutionState& state, std::span<const Quadruple> facts, const DecoderParams& decoder,
                Forward& fw, double eps) {
  if (facts.empty()) return zero_scalar();
  const std::size_t n = state.entities.shape().at(0);
  QueryBatch q = group_queries(
      facts, n, [](const Quadruple& f) { return f.subject; }, [](const Quadruple& f) { return f.relation; },
      [](const Quadruple& f) { return f.object; });
  const Var probs = score_entities(state, q.first, q.second, decoder, fw);
  return fw.tape.binary_cross_entropy(probs, q.labels, q.weights, eps);
}

Var relation_loss(const EvolutionState& state, std::span<const Quadruple> facts, const DecoderParams& decoder,
                  Forward& fw, double eps) {
  if (facts.empty()) return zero_scalar();
  const std::size_t n = state.relations.shape().at(0);
  QueryBatch q = group_queries(
      facts, n, [](const Quadruple& f) { return f.subject; }, [](const Quadruple& f) { return f.object; },
      [](const Quadruple& f) { return f.relation; });
  const Var probs = score_relations(state, q.first, q.second, decoder, fw);
  return fw.tape.binary_cross_entropy(probs, q.labels, q.weights, eps);
}

Var total_loss(const Var& entity, const Var& relation, const Var& static_term, double lambda1, double lambda2,
               Forward& fw) {
  auto& tape = fw.tape;
  Var total = zero_scalar();
  if (entity.defined()) total = tape.add(total, tape.affine(entity, lambda1, 0.0));
  if (relation.defined()) total = tape.add(total, tape.affine(relation, lambda2, 0.0));
  if (static_term.defined()) total = tape.add(total, static_term);
  return total;
}

void adam_step(std::span<const NamedParameter> params, OptimizerState& opt, double lr) {
  for (const auto& p : params) {
    if (!p.var.has_grad()) throw NumericError("adam: missing gradient for trainable tensor '" + p.name + "'");
  }
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (const auto& p : params) {
    Var v = p.var;
    Tensor& w = v.mutable_value();
    const Tensor& g = v.grad();
    auto [m_it, m_new] = opt.first_moment.try_emplace(p.name, w.shape());
    auto [v_it, v_new] = opt.second_moment.try_emplace(p.name, w.shape());
    Tensor& m1 = m_it->second;
    Tensor& m2 = v_it->second;
    if (m1.shape() != w.shape() || m2.shape() != w.shape()) {
      throw ShapeError("adam: moment shape for '" + p.name + "' is " + shape_string(m1.shape()) + ", parameter is " +
                       shape_string(w.shape()));
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m1[i] = opt.beta1 * m1[i] + (1.0 - opt.beta1) * g[i];
      m2[i] = opt.beta2 * m2[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double mhat = m1[i] / c1;
      const double vhat = m2[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

double clip_grad_norm(std::span<const NamedParameter> params, double max_norm) {
  double ss = 0.0;
  for (const auto& p : params) {
    if (!p.var.has_grad()) continue;
    for (double g : p.var.grad().data()) ss += g * g;
  }
  const double norm = std::sqrt(ss);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (max_norm > 0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& p : params) {
      if (!p.var.has_grad()) continue;
      Var v = p.var;
      for (double& g : v.mutable_grad().data()) g *= scale;
    }
  }
  return norm;
}

void zero_grads(std::span<const NamedParameter> params) {
  for (const auto& p : params) {
    Var v = p.var;
    v.zero_grad();
  }
}

LossTerms step_losses(const Model& model, const FactStore& store, const StaticGraph* static_graph,
                      std::size_t target, Forward& fw) {
  const auto& c = model.config;
  if (target == 0 || target >= store.timeline.size()) {
    throw DataError("train_step: target snapshot " + std::to_string(target) + " has no preceding history");
  }
  const EvolutionState init = initial_state(model.evolution, fw);
  const EvolutionResult evolved = evolve(history_window(store, target - 1, c.history), init, model.evolution, fw);
  const auto& facts = store.timeline[target].facts;

  LossTerms out;
  if (uses_entity(c.task)) out.entity = entity_loss(evolved.state, facts, model.entity_decoder, fw);
  if (uses_relation(c.task)) out.relation = relation_loss(evolved.state, facts, model.relation_decoder, fw);
  if (model.has_static) {
    if (static_graph == nullptr) throw ConfigError("model has static parameters but no static graph was supplied");
    const Var hs = static_embeddings(*static_graph, model.evolution, fw);
    out.static_term = static_constraint_loss(hs, evolved.entity_history, c.gamma, fw);
  }
  out.total = total_loss(out.entity, out.relation, out.static_term, c.lambda1, c.lambda2, fw);
  return out;
}

StepLosses train_step(Model& model, const FactStore& store, const StaticGraph* static_graph, std::size_t target,
                      OptimizerState& opt, Rng& rng, std::size_t* zero_norm_rows) {
  const auto params = trainable_parameters(model);
  Tape tape;
  Forward fw{tape, Mode::kTrain, &rng, zero_norm_rows};
  const LossTerms terms = step_losses(model, store, static_graph, target, fw);

  StepLosses out;
  out.entity = terms.entity.defined() ? terms.entity.value().item() : 0.0;
  out.relation = terms.relation.defined() ? terms.relation.value().item() : 0.0;
  out.static_term = terms.static_term.defined() ? terms.static_term.value().item() : 0.0;
  out.total = terms.total.value().item();
  if (!std::isfinite(out.total)) {
    throw NumericError("non-finite loss at target snapshot " + std::to_string(target));
  }
  tape.backward(terms.total);
  out.grad_norm = clip_grad_norm(params, model.config.grad_clip);
  adam_step(params, opt, model.config.lr);
  zero_grads(named_parameters(model));
  return out;
}

EpochStats train_epoch(Model& model, const FactStore& store, const StaticGraph* static_graph, OptimizerState& opt,
                       Rng& rng) {
  const auto start = std::chrono::steady_clock::now();
  EpochStats stats;
  if (!store.augmented) throw DataError("training requires a store with inverse facts added");
  std::vector<std::size_t> targets;
  std::size_t empty = 0;
  for (std::size_t t = store.train.begin + 1; t < store.train.end; ++t) {
    if (store.timeline[t].facts.empty()) {
      ++empty;
      continue;
    }
    targets.push_back(t);
  }
  if (store.train.size() < 2) {
    stats.warnings.push_back("train split has fewer than two timestamps: no prediction targets, zero steps");
  }
  if (empty > 0) stats.warnings.push_back("skipped " + std::to_string(empty) + " training targets without facts");
  std::shuffle(targets.begin(), targets.end(), rng);
  for (std::size_t t : targets) {
    const StepLosses s = train_step(model, store, static_graph, t, opt, rng, &stats.zero_norm_rows);
    stats.entity_loss += s.entity;
    stats.relation_loss += s.relation;
    stats.static_loss += s.static_term;
    stats.total_loss += s.total;
    stats.grad_norm += s.grad_norm;
    ++stats.steps;
  }
  if (stats.steps > 0) {
    const double n = static_cast<double>(stats.steps);
    stats.entity_loss /= n;
    stats.relation_loss /= n;
    stats.static_loss /= n;
    stats.total_loss /= n;
    stats.grad_norm /= n;
  }
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

EvolutionState final_training_state(const Model& model, const FactStore& store) {
  if (store.train.size() == 0) throw DataError("empty split: train");
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape, Mode::kEval};
  const EvolutionState init = initial_state(model.evolution, fw);
  return evolve(history_window(store, store.train.end - 1, model.config.history), init, model.evolution, fw).state;
}

TrainResult fit(Model& model, const FactStore& store, const StaticGraph* static_graph, const Validator& validator,
                const std::function<void(const EpochStats&)>& on_epoch) {
  const auto& c = model.config;
  if (c.static_constraint && static_graph == nullptr && model.has_static) {
    throw ConfigError("static constraint requested without a static graph");
  }
  TrainResult result;
  Rng rng(stream_seed(c.seed, 1));
  const auto params = named_parameters(model);
  double best = -std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_values;
  std::size_t since_best = 0;
  std::size_t best_epoch = 0;
  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    EpochStats stats = train_epoch(model, store, static_graph, result.optimizer, rng);
    stats.epoch = epoch;
    result.best_epoch = epoch;
    if (validator) {
      const double score = validator(model, final_training_state(model, store));
      stats.valid_mrr = score;
      if (score > best) {
        best = score;
        since_best = 0;
        best_epoch = epoch;
        if (c.early_stopping) best_values = snapshot_values(params);
      } else {
        ++since_best;
      }
    }
    result.curve.push_back(stats);
    if (on_epoch) on_epoch(result.curve.back());
    if (validator && c.early_stopping && since_best >= c.patience) break;
  }
  if (validator && c.early_stopping && !best_values.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      Var v = params[i].var;
      v.mutable_value() = best_values[i];
    }
    result.best_epoch = best_epoch;
  }
  result.final_state = final_training_state(model, store);
  return result;
}

}  // namespace evokg
