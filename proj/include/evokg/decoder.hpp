#pragma once

#include <cstddef>
#include <span>

#include "evokg/autograd.hpp"
#include "evokg/evolution.hpp"

namespace evokg {

struct DecoderConfig {
  std::size_t dim = 200;
  std::size_t num_kernels = 50;
  std::size_t kernel_width = 3;
  double dropout = 0.2;
  double rrelu_lower = 1.0 / 8.0;
  double rrelu_upper = 1.0 / 3.0;
};

// Convolution over the two stacked input rows followed by a fully connected projection.
struct DecoderParams {
  DecoderConfig config;
  Var kernels;  // [K x 2 x w]
  Var fc;       // [(K * d) x d]
};

DecoderParams init_decoder_params(const DecoderConfig& config, Rng& rng);

// [B x d], [B x d] -> [B x d].
Var convtranse(const Var& first, const Var& second, const DecoderParams& params, Forward& fw);

// Pre-sigmoid scores [B x |V|] for object queries (s, r, ?).
Var entity_logits(const EvolutionState& state, std::span<const std::size_t> subjects,
                  std::span<const std::size_t> relations, const DecoderParams& params, Forward& fw);
// Pre-sigmoid scores [B x 2|R|] for relation queries (s, ?, o).
Var relation_logits(const EvolutionState& state, std::span<const std::size_t> subjects,
                    std::span<const std::size_t> objects, const DecoderParams& params, Forward& fw);

// Probabilities, batched.
Var score_entities(const EvolutionState& state, std::span<const std::size_t> subjects,
                   std::span<const std::size_t> relations, const DecoderParams& params, Forward& fw);
Var score_relations(const EvolutionState& state, std::span<const std::size_t> subjects,
                    std::span<const std::size_t> objects, const DecoderParams& params, Forward& fw);

// Single-query forms: [|V|] and [2|R|]. Same arithmetic as one row of the batched form.
Var score_entities(const EvolutionState& state, std::size_t subject, std::size_t relation,
                   const DecoderParams& params, Forward& fw);
Var score_relations(const EvolutionState& state, std::size_t subject, std::size_t object,
                    const DecoderParams& params, Forward& fw);

}  // namespace evokg
