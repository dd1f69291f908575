#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evokg/autograd.hpp"

namespace evokg {

struct Quadruple {
  std::size_t subject = 0;
  std::size_t relation = 0;
  std::size_t object = 0;
  std::size_t timestamp = 0;  // snapshot index

  auto operator<=>(const Quadruple&) const = default;
};

// All facts at one timestamp plus the indices the evolution unit needs.
struct Snapshot {
  std::size_t timestamp = 0;
  std::vector<Quadruple> facts;
  std::vector<std::size_t> in_degree;                  // per entity
  std::vector<std::vector<std::size_t>> rel_entities;  // relation -> sorted entity ids
  std::vector<std::size_t> active_entities;            // sorted, entities in any fact

  // Degree-normalised aggregation operators, shared so tapes can hold them cheaply.
  // entity_aggregation[o][s] and relation_aggregation[o][r] sum to 1 over the facts into o.
  std::shared_ptr<const SparseMatrix> entity_aggregation;
  std::shared_ptr<const SparseMatrix> relation_aggregation;
  // relation_pooling[r][i] = 1/|V_r| for i in V_r.
  std::shared_ptr<const SparseMatrix> relation_pooling;
  Tensor receives_messages;  // [|V|], 1 where in_degree > 0
};

// Rebuilds every derived index of a snapshot from its facts.
void index_snapshot(Snapshot& snap, std::size_t num_entities, std::size_t num_relations);

enum class Split { kTrain, kValid, kTest };
std::string split_name(Split split);
Split parse_split(const std::string& name);

struct SplitRange {
  std::size_t begin = 0;  // snapshot index, inclusive
  std::size_t end = 0;    // exclusive
  std::size_t size() const { return end - begin; }
};

struct FactStore {
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;  // before inverse augmentation
  bool augmented = false;
  std::int64_t time_origin = 0;
  std::int64_t time_interval = 1;
  std::vector<Snapshot> timeline;  // consecutive snapshot indices across all splits
  SplitRange train, valid, test;

  std::size_t num_relation_ids() const { return augmented ? 2 * num_relations : num_relations; }
  std::size_t num_train_timestamps() const { return train.size(); }
  const SplitRange& range(Split split) const;
  // Facts of one split in timeline order.
  std::vector<Quadruple> facts(Split split) const;
  std::size_t num_base_facts(Split split) const;
};

// Reads whitespace separated "s r o time" lines. A fifth integer column, as found in some
// public releases, is accepted and ignored. valid/test may be absent (empty path).
FactStore load_quadruples(const std::filesystem::path& train, const std::filesystem::path& valid,
                          const std::filesystem::path& test, const std::filesystem::path& stat);
// Looks for train.txt, valid.txt, test.txt and stat.txt under dir.
FactStore load_dataset_dir(const std::filesystem::path& dir);

// Builds a store directly from quadruples whose timestamps are already snapshot indices.
FactStore make_fact_store(std::size_t num_entities, std::size_t num_relations, std::span<const Quadruple> train,
                          std::span<const Quadruple> valid, std::span<const Quadruple> test);

// Writes one split back in the line format, using raw times.
void write_quadruples(const FactStore& store, Split split, const std::filesystem::path& path);

// Appends (o, r + |R|, s, t) for each (s, r, o, t).
FactStore add_inverse_quadruples(FactStore store);

// Snapshots [max(0, t-m+1), t] of the concatenated timeline.
std::span<const Snapshot> history_window(const FactStore& store, std::size_t t, std::size_t m);

struct StaticEdge {
  std::size_t entity = 0;
  std::size_t relation = 0;
  std::size_t property = 0;  // index into StaticGraph::properties

  auto operator<=>(const StaticEdge&) const = default;
};

struct StaticGraph {
  static constexpr std::size_t kIsA = 0;
  static constexpr std::size_t kCountry = 1;

  std::size_t num_entities = 0;
  std::size_t num_relations = 2;
  std::vector<std::string> properties;
  std::vector<StaticEdge> edges;
  std::vector<std::size_t> neighbor_count;  // c_i

  std::size_t num_properties() const { return properties.size(); }
  // Per static relation: [|V| x (column_offset + |V^s|)] with 1/c_i at (i, column_offset + j)
  // for each edge (i, rel, j).
  std::vector<std::shared_ptr<const SparseMatrix>> aggregation(std::size_t column_offset = 0) const;
};

// "Type (Country)" yields an isA edge to "Type" and a country edge to "Country"; any other
// name yields a single isA edge to the whole name. The trailing parenthesised group is the
// outermost one, so "A (B (C))" maps to type "A" and country "B (C)".
StaticGraph build_static_graph(std::span<const std::string> entity_names);

// Reads "id<TAB>name" (or the "name<TAB>id" variant) lines into a dense name table.
std::vector<std::string> load_entity_names(const std::filesystem::path& path, std::size_t num_entities);

}  // namespace evokg
