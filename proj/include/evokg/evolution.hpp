#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "evokg/autograd.hpp"
#include "evokg/data.hpp"

namespace evokg {

struct EvolutionConfig {
  std::size_t dim = 200;
  std::size_t num_layers = 2;
  double dropout = 0.2;
  double rrelu_lower = 1.0 / 8.0;
  double rrelu_upper = 1.0 / 3.0;
  bool time_gate = true;
};

struct GcnLayerParams {
  Var aggregate;      // W1, applied to (h_s + r) messages
  Var self_loop;      // W2, entities that receive messages
  Var isolated_loop;  // W3, entities that receive none
};

// Rowwise GRU: z = sigmoid(x Wz + h Uz + bz), g = sigmoid(x Wr + h Ur + br),
// n = tanh(x Wn + (g * h) Un + bn), h' = (1 - z) * h + z * n.
struct GruParams {
  Var input_update, hidden_update, bias_update;
  Var input_reset, hidden_reset, bias_reset;
  Var input_candidate, hidden_candidate, bias_candidate;
};

// Matrices multiply row vectors from the right: a layer computes H * W.
struct EvolutionParams {
  EvolutionConfig config;
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;  // relation ids including inverses

  Var entity_init;    // [|V| x d]
  Var relation_init;  // [2|R| x d]
  std::vector<GcnLayerParams> layers;
  Var gate_weight;  // [d x d]
  Var gate_bias;    // [d]
  GruParams gru;

  // Present only when a static graph is used.
  std::vector<Var> static_relation;  // one [d x d] per static relation
  Var static_init;                   // [(|V| + |V^s|) x d], property j at row |V| + j
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; embedding rows are normalised.
EvolutionParams init_evolution_params(const EvolutionConfig& config, std::size_t num_entities,
                                      std::size_t num_relations, const StaticGraph* static_graph, Rng& rng);

struct EvolutionState {
  Var entities;   // [|V| x d], unit rows
  Var relations;  // [2|R| x d], unit rows
  std::size_t timestamp = 0;
};

// Normalised trainable initial embeddings; gradients reach entity_init / relation_init.
EvolutionState initial_state(const EvolutionParams& params, Forward& fw);

Var rgcn_layer(const Snapshot& snapshot, const Var& entities, const Var& relations, const GcnLayerParams& layer,
               const EvolutionConfig& config, Forward& fw);

// U * current + (1 - U) * previous with U = sigmoid(previous W4 + b), before renormalisation.
Var time_gate_mix(const Var& current, const Var& previous, const Var& gate_weight, const Var& gate_bias,
                  Forward& fw);
Var time_gate_update(const Var& current, const Var& previous, const Var& gate_weight, const Var& gate_bias,
                     Forward& fw);

// [mean of previous-entity rows over V_r ; row r of relation_init], zero for relations with no facts.
Var relation_input(const Var& previous_entities, const Snapshot& snapshot, const Var& relation_init, Forward& fw);

Var gru_cell(const Var& hidden, const Var& input, const GruParams& gru, Forward& fw);
Var gru_update(const Var& hidden, const Var& input, const GruParams& gru, Forward& fw);

// Static entity embeddings from a one-layer relational GCN without self-loop, unit rows.
Var static_embeddings(const StaticGraph& graph, const EvolutionParams& params, Forward& fw);

// sum_x sum_i max(cos(min(gamma * x, 90 deg)) - <static_i, history[x]_i>, 0).
Var static_constraint_loss(const Var& static_entities, std::span<const Var> history, double gamma_degrees,
                           Forward& fw);

struct EvolutionResult {
  EvolutionState state;
  std::vector<Var> entity_history;  // [initial, after step 1, ..., after step m]
};

EvolutionResult evolve(std::span<const Snapshot> window, const EvolutionState& init, const EvolutionParams& params,
                       Forward& fw);

}  // namespace evokg
