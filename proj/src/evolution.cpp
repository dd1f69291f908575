#include "evokg/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "evokg/errors.hpp"

namespace evokg {
namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor unit_rows(Tensor t) {
  const std::size_t n = t.cols();
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += t.at(i, j) * t.at(i, j);
    const double norm = std::sqrt(ss);
    if (norm < 1e-12) continue;
    for (std::size_t j = 0; j < n; ++j) t.at(i, j) /= norm;
  }
  return t;
}

Var weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return Var::parameter(uniform(Shape{fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
}

Var bias(std::size_t n, Rng& rng, std::size_t fan_in) {
  return Var::parameter(uniform(Shape{n}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
}

// Broadcasts a per-row 0/1 flag to a [rows x cols] constant.
Var row_mask(const Tensor& flags, std::size_t cols, bool invert) {
  Tensor m(Shape{flags.size(), cols});
  for (std::size_t i = 0; i < flags.size(); ++i) {
    const double v = invert ? 1.0 - flags[i] : flags[i];
    std::fill_n(m.raw() + i * cols, cols, v);
  }
  return Var::constant(std::move(m));
}

void check_rows_unit_or_zero(const char* what, const Tensor& t, double tol) {
  const std::size_t n = t.cols();
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += t.at(i, j) * t.at(i, j);
    const double norm = std::sqrt(ss);
    if (norm >= 1e-12 && std::abs(norm - 1.0) > tol) {
      throw NumericError(std::string(what) + ": row " + std::to_string(i) + " has norm " + std::to_string(norm) +
                         ", expected 1");
    }
  }
}

}  // namespace

EvolutionParams init_evolution_params(const EvolutionConfig& config, std::size_t num_entities,
                                      std::size_t num_relations, const StaticGraph* static_graph, Rng& rng) {
  if (config.dim == 0) throw ConfigError("embedding dimension must be positive");
  if (config.num_layers == 0) throw ConfigError("at least one GCN layer is required");
  const std::size_t d = config.dim;
  const double emb_bound = 1.0 / std::sqrt(static_cast<double>(d));
  EvolutionParams p;
  p.config = config;
  p.num_entities = num_entities;
  p.num_relations = num_relations;
  p.entity_init = Var::parameter(unit_rows(uniform(Shape{num_entities, d}, emb_bound, rng)));
  p.relation_init = Var::parameter(unit_rows(uniform(Shape{num_relations, d}, emb_bound, rng)));
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    GcnLayerParams layer;
    layer.aggregate = weight(d, d, rng);
    layer.self_loop = weight(d, d, rng);
    layer.isolated_loop = weight(d, d, rng);
    p.layers.push_back(std::move(layer));
  }
  p.gate_weight = weight(d, d, rng);
  p.gate_bias = Var::parameter(Tensor(Shape{d}, 0.0));
  auto& g = p.gru;
  g.input_update = weight(2 * d, d, rng);
  g.hidden_update = weight(d, d, rng);
  g.bias_update = bias(d, rng, d);
  g.input_reset = weight(2 * d, d, rng);
  g.hidden_reset = weight(d, d, rng);
  g.bias_reset = bias(d, rng, d);
  g.input_candidate = weight(2 * d, d, rng);
  g.hidden_candidate = weight(d, d, rng);
  g.bias_candidate = bias(d, rng, d);
  if (static_graph != nullptr) {
    if (static_graph->num_entities != num_entities) {
      throw ConfigError("static graph covers " + std::to_string(static_graph->num_entities) + " entities, expected " +
                        std::to_string(num_entities));
    }
    for (std::size_t r = 0; r < static_graph->num_relations; ++r) p.static_relation.push_back(weight(d, d, rng));
    p.static_init = Var::parameter(
        unit_rows(uniform(Shape{num_entities + static_graph->num_properties(), d}, emb_bound, rng)));
  }
  return p;
}

EvolutionState initial_state(const EvolutionParams& params, Forward& fw) {
  EvolutionState s;
  s.entities = fw.tape.normalize_rows(params.entity_init, 1e-12, fw.zero_norm_rows);
  s.relations = fw.tape.normalize_rows(params.relation_init, 1e-12, fw.zero_norm_rows);
  return s;
}

Var rgcn_layer(const Snapshot& snapshot, const Var& entities, const Var& relations, const GcnLayerParams& layer,
               const EvolutionConfig& config, Forward& fw) {
  auto& tape = fw.tape;
  const std::size_t n = entities.shape().at(0);
  const std::size_t d = entities.shape().at(1);
  if (snapshot.in_degree.size() != n || snapshot.entity_aggregation == nullptr) {
    throw ShapeError("rgcn_layer: snapshot indexed for " + std::to_string(snapshot.in_degree.size()) +
                     " entities, embeddings have " + std::to_string(n));
  }
  for (const auto& f : snapshot.facts) {
    if (snapshot.in_degree[f.object] == 0) {
      throw NumericError("rgcn_layer: entity " + std::to_string(f.object) + " is an object with zero in-degree");
    }
  }
  const Var messages =
      tape.add(tape.spmm(snapshot.entity_aggregation, entities), tape.spmm(snapshot.relation_aggregation, relations));
  const Var connected = tape.add(tape.matmul(messages, layer.aggregate), tape.matmul(entities, layer.self_loop));
  const Var isolated = tape.matmul(entities, layer.isolated_loop);
  const Var pre = tape.add(tape.mul(connected, row_mask(snapshot.receives_messages, d, false)),
                           tape.mul(isolated, row_mask(snapshot.receives_messages, d, true)));
  const Var act = tape.rrelu(pre, config.rrelu_lower, config.rrelu_upper, fw.mode, fw.rng);
  return tape.dropout(act, config.dropout, fw.mode, fw.rng);
}

Var time_gate_mix(const Var& current, const Var& previous, const Var& gate_weight, const Var& gate_bias,
                  Forward& fw) {
  auto& tape = fw.tape;
  if (current.shape() != previous.shape()) {
    throw ShapeError("time gate: " + shape_string(current.shape()) + " vs " + shape_string(previous.shape()));
  }
  const Var gate = tape.sigmoid(tape.add_bias(tape.matmul(previous, gate_weight), gate_bias));
  return tape.add(tape.mul(gate, current), tape.mul(tape.affine(gate, -1.0, 1.0), previous));
}

Var time_gate_update(const Var& current, const Var& previous, const Var& gate_weight, const Var& gate_bias,
                     Forward& fw) {
  return fw.tape.normalize_rows(time_gate_mix(current, previous, gate_weight, gate_bias, fw), 1e-12,
                                fw.zero_norm_rows);
}

Var relation_input(const Var& previous_entities, const Snapshot& snapshot, const Var& relation_init, Forward& fw) {
  auto& tape = fw.tape;
  const std::size_t nr = relation_init.shape().at(0);
  const std::size_t d = relation_init.shape().at(1);
  if (snapshot.relation_pooling == nullptr || snapshot.relation_pooling->rows != nr) {
    throw ShapeError("relation_input: snapshot indexed for a different relation vocabulary");
  }
  Tensor present(Shape{nr}, 0.0);
  for (std::size_t r = 0; r < nr; ++r) present[r] = snapshot.rel_entities[r].empty() ? 0.0 : 1.0;
  const Var pooled = tape.spmm(snapshot.relation_pooling, previous_entities);
  const Var own = tape.mul(relation_init, row_mask(present, d, false));
  return tape.concat_cols(pooled, own);
}

Var gru_cell(const Var& hidden, const Var& input, const GruParams& g, Forward& fw) {
  auto& t = fw.tape;
  const auto gate = [&](const Var& wx, const Var& wh, const Var& b) {
    return t.add_bias(t.add(t.matmul(input, wx), t.matmul(hidden, wh)), b);
  };
  const Var update = t.sigmoid(gate(g.input_update, g.hidden_update, g.bias_update));
  const Var reset = t.sigmoid(gate(g.input_reset, g.hidden_reset, g.bias_reset));
  const Var candidate = t.tanh(t.add_bias(
      t.add(t.matmul(input, g.input_candidate), t.matmul(t.mul(reset, hidden), g.hidden_candidate)), g.bias_candidate));
  return t.add(t.mul(t.affine(update, -1.0, 1.0), hidden), t.mul(update, candidate));
}

Var gru_update(const Var& hidden, const Var& input, const GruParams& gru, Forward& fw) {
  return fw.tape.normalize_rows(gru_cell(hidden, input, gru, fw), 1e-12, fw.zero_norm_rows);
}

Var static_embeddings(const StaticGraph& graph, const EvolutionParams& params, Forward& fw) {
  if (!params.static_init.defined() || params.static_relation.size() != graph.num_relations) {
    throw ConfigError("static embeddings requested but the model has no static parameters");
  }
  for (std::size_t i = 0; i < graph.num_entities; ++i) {
    if (graph.neighbor_count[i] == 0) {
      throw ConfigError("static graph: entity " + std::to_string(i) + " has no static edge");
    }
  }
  auto& tape = fw.tape;
  const auto ops = graph.aggregation(graph.num_entities);
  Var total;
  for (std::size_t r = 0; r < ops.size(); ++r) {
    const Var part = tape.matmul(tape.spmm(ops[r], params.static_init), params.static_relation[r]);
    total = total.defined() ? tape.add(total, part) : part;
  }
  return tape.normalize_rows(tape.relu(total), 1e-12, fw.zero_norm_rows);
}

Var static_constraint_loss(const Var& static_entities, std::span<const Var> history, double gamma_degrees,
                           Forward& fw) {
  auto& tape = fw.tape;
  check_rows_unit_or_zero("static constraint (static embeddings)", static_entities.value(), 1e-6);
  Var total = Var::constant(Tensor::scalar(0.0));
  for (std::size_t x = 0; x < history.size(); ++x) {
    check_rows_unit_or_zero("static constraint (evolutional embeddings)", history[x].value(), 1e-6);
    const double theta = std::min(gamma_degrees * static_cast<double>(x), 90.0);
    const double bound = theta >= 90.0 ? 0.0 : std::cos(theta * std::numbers::pi / 180.0);
    const Var cosine = tape.row_sum(tape.mul(static_entities, history[x]));
    total = tape.add(total, tape.sum(tape.relu(tape.affine(cosine, -1.0, bound))));
  }
  return total;
}

EvolutionResult evolve(std::span<const Snapshot> window, const EvolutionState& init, const EvolutionParams& params,
                       Forward& fw) {
  if (window.empty()) throw ConfigError("evolve: empty history window");
  auto& tape = fw.tape;
  EvolutionResult result;
  result.entity_history.push_back(init.entities);
  Var h = init.entities;
  Var r = init.relations;
  const Var relation_base = tape.normalize_rows(params.relation_init, 1e-12, fw.zero_norm_rows);
  for (const Snapshot& snap : window) {
    r = gru_update(r, relation_input(h, snap, relation_base, fw), params.gru, fw);
    Var layer_out = h;
    for (const auto& layer : params.layers) layer_out = rgcn_layer(snap, layer_out, r, layer, params.config, fw);
    h = params.config.time_gate ? time_gate_update(layer_out, h, params.gate_weight, params.gate_bias, fw)
                                : tape.normalize_rows(layer_out, 1e-12, fw.zero_norm_rows);
    result.entity_history.push_back(h);
  }
  result.state = {h, r, window.back().timestamp};
  return result;
}

}  // namespace evokg
