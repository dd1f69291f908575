#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evokg/autograd.hpp"
#include "evokg/data.hpp"
#include "evokg/decoder.hpp"
#include "evokg/evolution.hpp"

namespace evokg {

enum class Task { kEntity, kRelation, kBoth };
std::string task_name(Task task);
Task parse_task(const std::string& name);
inline bool uses_entity(Task t) { return t != Task::kRelation; }
inline bool uses_relation(Task t) { return t != Task::kEntity; }

struct TrainConfig {
  std::size_t dim = 200;
  std::size_t num_layers = 2;  // omega
  std::size_t history = 3;     // m
  double gamma = 10.0;         // degrees
  double lambda1 = 0.7;
  double lambda2 = 0.3;
  double lr = 0.001;
  double dropout = 0.2;
  double grad_clip = 1.0;  // global norm; <= 0 disables
  std::size_t epochs = 30;
  std::size_t patience = 5;
  bool early_stopping = true;
  std::uint64_t seed = 42;
  Task task = Task::kBoth;
  bool static_constraint = true;
  bool time_gate = true;
  std::size_t num_kernels = 50;
  std::size_t kernel_width = 3;

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

struct Model {
  TrainConfig config;
  EvolutionParams evolution;
  DecoderParams entity_decoder;
  DecoderParams relation_decoder;
  bool has_static = false;
};

// Static parameters are created only when a graph is given and the constraint is enabled.
Model init_model(const TrainConfig& config, std::size_t num_entities, std::size_t num_relation_ids,
                 const StaticGraph* static_graph);

struct NamedParameter {
  std::string name;
  Var var;
};
// Every tensor the model owns, in a stable order.
std::vector<NamedParameter> named_parameters(const Model& model);
// The subset that receives gradients under the model's config (task, time gate, static).
std::vector<NamedParameter> trainable_parameters(const Model& model);

// Multi-label binary cross-entropy over unique (first, second) queries, each weighted by
// the number of facts sharing it, so the result is a mean over facts. Zero for no facts.
Var entity_loss(const EvolutionState& state, std::span<const Quadruple> facts, const DecoderParams& decoder,
                Forward& fw, double eps = 1e-10);
Var relation_loss(const EvolutionState& state, std::span<const Quadruple> facts, const DecoderParams& decoder,
                  Forward& fw, double eps = 1e-10);

// lambda1 * entity + lambda2 * relation + static_term; undefined terms count as zero.
Var total_loss(const Var& entity, const Var& relation, const Var& static_term, double lambda1, double lambda2,
               Forward& fw);

struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

// Bias-corrected Adam over params; every parameter must carry a gradient.
void adam_step(std::span<const NamedParameter> params, OptimizerState& opt, double lr);
// Scales gradients so their global L2 norm is at most max_norm. Returns the norm before scaling.
double clip_grad_norm(std::span<const NamedParameter> params, double max_norm);
void zero_grads(std::span<const NamedParameter> params);

struct StepLosses {
  double entity = 0.0;
  double relation = 0.0;
  double static_term = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
};

struct LossTerms {
  Var entity;       // undefined when the task skips it
  Var relation;     // undefined when the task skips it
  Var static_term;  // undefined without a static model
  Var total;
};
// Forward pass of one training step: evolve the window ending at target - 1 from the trainable
// initial state and score the facts of snapshot `target`.
LossTerms step_losses(const Model& model, const FactStore& store, const StaticGraph* static_graph,
                      std::size_t target, Forward& fw);

// One optimizer step predicting snapshot `target` from the window ending at target - 1.
StepLosses train_step(Model& model, const FactStore& store, const StaticGraph* static_graph, std::size_t target,
                      OptimizerState& opt, Rng& rng, std::size_t* zero_norm_rows = nullptr);

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double entity_loss = 0.0;
  double relation_loss = 0.0;
  double static_loss = 0.0;
  double total_loss = 0.0;
  double grad_norm = 0.0;
  std::size_t zero_norm_rows = 0;
  double seconds = 0.0;
  std::optional<double> valid_mrr;
  std::vector<std::string> warnings;
};

// Visits training targets in an order shuffled by rng; targets without facts are skipped.
EpochStats train_epoch(Model& model, const FactStore& store, const StaticGraph* static_graph, OptimizerState& opt,
                       Rng& rng);

// Embeddings after evolving through the last m training snapshots, eval mode.
EvolutionState final_training_state(const Model& model, const FactStore& store);

struct TrainResult {
  std::vector<EpochStats> curve;
  std::size_t best_epoch = 0;  // 0: initial parameters
  OptimizerState optimizer;
  EvolutionState final_state;
};

// Validator returns the selection metric for the current parameters (higher is better).
using Validator = std::function<double(const Model&, const EvolutionState&)>;

// Runs config.epochs epochs. With a validator and early stopping on, keeps the parameters of
// the best validation epoch and stops after `patience` epochs without improvement.
TrainResult fit(Model& model, const FactStore& store, const StaticGraph* static_graph, const Validator& validator,
                const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace evokg
