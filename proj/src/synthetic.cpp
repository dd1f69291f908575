#include "evokg/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "evokg/errors.hpp"

namespace evokg {
namespace {

using Pair = std::pair<std::size_t, std::size_t>;

Pair ordered(std::size_t a, std::size_t b) { return a < b ? Pair{a, b} : Pair{b, a}; }

// Random perfect matching that avoids every pair in `seen`.
std::vector<Pair> fresh_matching(std::size_t n, const std::set<Pair>& seen, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Pair> out;
    bool ok = true;
    for (std::size_t i = 0; i + 1 < n && ok; i += 2) {
      const Pair p = ordered(order[i], order[i + 1]);
      ok = !seen.contains(p);
      out.push_back(p);
    }
    if (ok) return out;
  }
  throw ConfigError("planted generator: could not draw a matching without repeated pairs");
}

void split_by_time(const std::vector<Quadruple>& all, std::size_t valid_begin, std::size_t test_begin,
                   std::vector<Quadruple>& train, std::vector<Quadruple>& valid, std::vector<Quadruple>& test) {
  for (const auto& q : all) {
    if (q.timestamp < valid_begin) {
      train.push_back(q);
    } else if (q.timestamp < test_begin) {
      valid.push_back(q);
    } else {
      test.push_back(q);
    }
  }
}

void check_splits(std::size_t valid_begin, std::size_t test_begin, std::size_t num_timestamps) {
  if (!(0 < valid_begin && valid_begin <= test_begin && test_begin <= num_timestamps)) {
    throw ConfigError("synthetic split boundaries must satisfy 0 < valid <= test <= timestamps");
  }
}

}  // namespace

FactStore planted_store(const PlantedConfig& c) {
  if (c.num_entities < 2 || c.num_entities % 2 != 0) throw ConfigError("planted generator needs an even entity count");
  if (c.num_relations == 0 || c.rematch_period == 0) throw ConfigError("planted generator: zero relations or period");
  check_splits(c.valid_begin, c.test_begin, c.num_timestamps);
  std::mt19937_64 rng(c.seed);
  std::set<Pair> seen;
  std::vector<Pair> matching;
  std::vector<bool> flip;  // which side of each pair is the subject
  std::size_t birth = 0;
  std::vector<Quadruple> all;
  for (std::size_t t = 0; t < c.num_timestamps; ++t) {
    if (t % c.rematch_period == 0) {
      matching = fresh_matching(c.num_entities, seen, rng);
      seen.insert(matching.begin(), matching.end());
      flip.assign(matching.size(), false);
      for (std::size_t i = 0; i < flip.size(); ++i) flip[i] = (rng() & 1U) != 0;
      birth = t;
    }
    const std::size_t rel = (t - birth) % c.num_relations;
    for (std::size_t i = 0; i < matching.size(); ++i) {
      const auto [a, b] = matching[i];
      all.push_back(flip[i] ? Quadruple{b, rel, a, t} : Quadruple{a, rel, b, t});
    }
  }
  std::vector<Quadruple> train, valid, test;
  split_by_time(all, c.valid_begin, c.test_begin, train, valid, test);
  return make_fact_store(c.num_entities, c.num_relations, train, valid, test);
}

FactStore repeating_store(const RepeatingConfig& c) {
  if (c.num_entities < 2) throw ConfigError("repeating generator needs at least two entities");
  if (c.num_relations + 1 >= c.num_entities) {
    throw ConfigError("repeating generator needs more entities than relations + 1 to keep answers unique");
  }
  check_splits(c.valid_begin, c.test_begin, c.num_timestamps);
  std::vector<Quadruple> all;
  for (std::size_t t = 0; t < c.num_timestamps; ++t) {
    for (std::size_t r = 0; r < c.num_relations; ++r) {
      for (std::size_t i = 0; i < c.num_entities; ++i) all.push_back({i, r, (i + r + 1) % c.num_entities, t});
    }
  }
  std::vector<Quadruple> train, valid, test;
  split_by_time(all, c.valid_begin, c.test_begin, train, valid, test);
  return make_fact_store(c.num_entities, c.num_relations, train, valid, test);
}

std::vector<std::string> synthetic_entity_names(std::size_t num_entities, std::size_t num_types,
                                                std::size_t num_countries) {
  if (num_types == 0) throw ConfigError("synthetic names need at least one type");
  std::vector<std::string> names;
  names.reserve(num_entities);
  for (std::size_t i = 0; i < num_entities; ++i) {
    std::string name = "Type " + std::to_string(i % num_types);
    // Every third entity lacks a country, like person names in real releases.
    if (num_countries > 0 && i % 3 != 2) name += " (Country " + std::to_string(i % num_countries) + ")";
    names.push_back(std::move(name));
  }
  return names;
}

void write_dataset_dir(const FactStore& store, const std::filesystem::path& dir,
                       const std::vector<std::string>& names) {
  std::filesystem::create_directories(dir);
  write_quadruples(store, Split::kTrain, dir / "train.txt");
  write_quadruples(store, Split::kValid, dir / "valid.txt");
  write_quadruples(store, Split::kTest, dir / "test.txt");
  {
    std::ofstream stat(dir / "stat.txt");
    if (!stat) throw DataError("cannot write " + (dir / "stat.txt").string());
    stat << store.num_entities << '\t' << store.num_relations << '\n';
  }
  if (!names.empty()) {
    if (names.size() != store.num_entities) throw ConfigError("name table size differs from entity count");
    std::ofstream out(dir / "entity2id.txt");
    if (!out) throw DataError("cannot write " + (dir / "entity2id.txt").string());
    for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << '\t' << i << '\n';
  }
}

}  // namespace evokg
