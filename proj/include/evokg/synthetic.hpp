#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evokg/data.hpp"

namespace evokg {

// Entities are paired by a perfect matching that is redrawn for everybody every
// `rematch_period` snapshots; a redrawn matching never repeats an earlier pair. A pair born at
// time b carries relation (t - b) mod R at time t, so (a, r_k, b, t) implies (a, r_k+1, b, t+1)
// while the pair lives. Each entity takes part in exactly one fact per snapshot.
struct PlantedConfig {
  std::size_t num_entities = 50;  // even
  std::size_t num_relations = 4;
  std::size_t num_timestamps = 60;
  std::size_t rematch_period = 12;
  std::size_t valid_begin = 48;
  std::size_t test_begin = 54;
  std::uint64_t seed = 7;
};
FactStore planted_store(const PlantedConfig& config);

// The same fact set at every snapshot. Relation r maps entity i to (i + r + 1) mod |V|, so
// every (s, r) and every inverse query has exactly one answer.
struct RepeatingConfig {
  std::size_t num_entities = 5;
  std::size_t num_relations = 2;
  std::size_t num_timestamps = 10;
  std::size_t valid_begin = 8;
  std::size_t test_begin = 9;
};
FactStore repeating_store(const RepeatingConfig& config);

// Names of the form "Type k (Country j)" so a static graph can be built for synthetic data.
std::vector<std::string> synthetic_entity_names(std::size_t num_entities, std::size_t num_types,
                                                std::size_t num_countries);

// Writes train/valid/test/stat.txt (and entity2id.txt when names are given) to dir.
void write_dataset_dir(const FactStore& store, const std::filesystem::path& dir,
                       const std::vector<std::string>& names = {});

}  // namespace evokg
