#include "evokg/decoder.hpp"

#include <cmath>
#include <vector>

#include "evokg/errors.hpp"

namespace evokg {
namespace {

void check_ids(const char* what, std::span<const std::size_t> ids, std::size_t bound) {
  for (std::size_t id : ids) {
    if (id >= bound) {
      throw DataError(std::string(what) + " id " + std::to_string(id) + " out of range [0, " + std::to_string(bound) +
                      ")");
    }
  }
}

Var pair_logits(const Var& table_a, std::span<const std::size_t> ids_a, const Var& table_b,
                std::span<const std::size_t> ids_b, const Var& candidates, const DecoderParams& params, Forward& fw) {
  if (ids_a.size() != ids_b.size()) throw ShapeError("query id lists differ in length");
  auto& tape = fw.tape;
  const Var first = tape.gather_rows(table_a, {ids_a.begin(), ids_a.end()});
  const Var second = tape.gather_rows(table_b, {ids_b.begin(), ids_b.end()});
  return tape.matmul_nt(convtranse(first, second, params, fw), candidates);
}

}  // namespace

DecoderParams init_decoder_params(const DecoderConfig& config, Rng& rng) {
  if (config.dim < config.kernel_width) {
    throw ConfigError("decoder: embedding dimension " + std::to_string(config.dim) + " is narrower than kernel width " +
                      std::to_string(config.kernel_width));
  }
  if (config.kernel_width % 2 == 0) throw ConfigError("decoder: kernel width must be odd for same-length output");
  DecoderParams p;
  p.config = config;
  const auto fill = [&rng](Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.data()) v = dist(rng);
    return Var::parameter(std::move(t));
  };
  p.kernels = fill(Shape{config.num_kernels, 2, config.kernel_width}, 2 * config.kernel_width);
  p.fc = fill(Shape{config.num_kernels * config.dim, config.dim}, config.num_kernels * config.dim);
  return p;
}

Var convtranse(const Var& first, const Var& second, const DecoderParams& params, Forward& fw) {
  auto& tape = fw.tape;
  const auto& cfg = params.config;
  if (first.shape().size() != 2 || first.shape() != second.shape()) {
    throw ShapeError("convtranse: inputs " + shape_string(first.shape()) + " and " + shape_string(second.shape()));
  }
  const std::size_t batch = first.shape()[0], d = first.shape()[1];
  if (d < cfg.kernel_width) {
    throw ConfigError("convtranse: dimension " + std::to_string(d) + " narrower than kernel width");
  }
  const Var stacked = tape.reshape(tape.concat_cols(first, second), Shape{batch, 2, d});
  // The conv output is handed over whole so inference can apply the activation in place.
  const Var act = tape.rrelu(tape.conv1d(stacked, params.kernels, cfg.kernel_width / 2, /*flat_output=*/true),
                             cfg.rrelu_lower, cfg.rrelu_upper, fw.mode, fw.rng);
  const Var flat = tape.dropout(act, cfg.dropout, fw.mode, fw.rng);
  return tape.matmul(flat, params.fc);
}

Var entity_logits(const EvolutionState& state, std::span<const std::size_t> subjects,
                  std::span<const std::size_t> relations, const DecoderParams& params, Forward& fw) {
  check_ids("entity", subjects, state.entities.shape().at(0));
  check_ids("relation", relations, state.relations.shape().at(0));
  return pair_logits(state.entities, subjects, state.relations, relations, state.entities, params, fw);
}

Var relation_logits(const EvolutionState& state, std::span<const std::size_t> subjects,
                    std::span<const std::size_t> objects, const DecoderParams& params, Forward& fw) {
  check_ids("entity", subjects, state.entities.shape().at(0));
  check_ids("entity", objects, state.entities.shape().at(0));
  return pair_logits(state.entities, subjects, state.entities, objects, state.relations, params, fw);
}

Var score_entities(const EvolutionState& state, std::span<const std::size_t> subjects,
                   std::span<const std::size_t> relations, const DecoderParams& params, Forward& fw) {
  return fw.tape.sigmoid(entity_logits(state, subjects, relations, params, fw));
}

Var score_relations(const EvolutionState& state, std::span<const std::size_t> subjects,
                    std::span<const std::size_t> objects, const DecoderParams& params, Forward& fw) {
  return fw.tape.sigmoid(relation_logits(state, subjects, objects, params, fw));
}

Var score_entities(const EvolutionState& state, std::size_t subject, std::size_t relation,
                   const DecoderParams& params, Forward& fw) {
  const std::size_t s[] = {subject}, r[] = {relation};
  const Var p = score_entities(state, s, r, params, fw);
  return fw.tape.reshape(p, Shape{p.shape()[1]});
}

Var score_relations(const EvolutionState& state, std::size_t subject, std::size_t object,
                    const DecoderParams& params, Forward& fw) {
  const std::size_t s[] = {subject}, o[] = {object};
  const Var p = score_relations(state, s, o, params, fw);
  return fw.tape.reshape(p, Shape{p.shape()[1]});
}

}  // namespace evokg
