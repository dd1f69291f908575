#include "evokg/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "evokg/errors.hpp"

namespace evokg {
namespace {

struct RawFact {
  std::int64_t s, r, o, time;
};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::optional<std::int64_t> parse_int(std::string_view tok) {
  std::int64_t v = 0;
  const auto* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::vector<RawFact> read_fact_file(const std::filesystem::path& path, std::size_t num_entities,
                                    std::size_t num_relations) {
  std::vector<RawFact> facts;
  if (path.empty()) return facts;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    const auto tok = split_ws(body);
    if (tok.size() != 4 && tok.size() != 5) {
      throw ParseError(path.string(), lineno, "expected 4 fields, found " + std::to_string(tok.size()));
    }
    std::int64_t v[5] = {};
    for (std::size_t i = 0; i < tok.size(); ++i) {
      const auto parsed = parse_int(tok[i]);
      if (!parsed) throw ParseError(path.string(), lineno, "non-integer field '" + std::string(tok[i]) + "'");
      v[i] = *parsed;
    }
    const auto in_range = [](std::int64_t x, std::size_t n) { return x >= 0 && static_cast<std::size_t>(x) < n; };
    if (!in_range(v[0], num_entities) || !in_range(v[2], num_entities)) {
      throw ParseError(path.string(), lineno, "entity id out of range [0, " + std::to_string(num_entities) + ")");
    }
    if (!in_range(v[1], num_relations)) {
      throw ParseError(path.string(), lineno, "relation id out of range [0, " + std::to_string(num_relations) + ")");
    }
    if (v[3] < 0) throw ParseError(path.string(), lineno, "negative timestamp");
    facts.push_back({v[0], v[1], v[2], v[3]});
  }
  return facts;
}

std::pair<std::size_t, std::size_t> read_stat(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = split_ws(trim(line));
    if (tok.empty()) continue;
    if (tok.size() < 2) throw ParseError(path.string(), lineno, "expected '|V| |R|'");
    const auto nv = parse_int(tok[0]);
    const auto nr = parse_int(tok[1]);
    if (!nv || !nr || *nv <= 0 || *nr <= 0) throw ParseError(path.string(), lineno, "expected two positive integers");
    return {static_cast<std::size_t>(*nv), static_cast<std::size_t>(*nr)};
  }
  throw DataError(path.string() + ": empty stat file");
}

Quadruple to_quad(const RawFact& f, std::int64_t origin, std::int64_t interval) {
  return {static_cast<std::size_t>(f.s), static_cast<std::size_t>(f.r), static_cast<std::size_t>(f.o),
          static_cast<std::size_t>((f.time - origin) / interval)};
}

// Assembles the timeline from splits whose timestamps are snapshot indices.
FactStore assemble(std::size_t num_entities, std::size_t num_relations, std::span<const Quadruple> train,
                   std::span<const Quadruple> valid, std::span<const Quadruple> test) {
  if (train.empty()) throw DataError("empty split: train");
  const auto bounds = [](std::span<const Quadruple> q) {
    std::size_t lo = q.front().timestamp, hi = lo;
    for (const auto& f : q) lo = std::min(lo, f.timestamp), hi = std::max(hi, f.timestamp);
    return std::pair{lo, hi};
  };
  const auto [train_lo, train_hi] = bounds(train);
  std::size_t last = train_hi;
  std::size_t valid_begin = train_hi + 1;
  if (!valid.empty()) {
    const auto [lo, hi] = bounds(valid);
    if (lo <= last) throw DataError("non-monotone split boundaries: valid starts before train ends");
    valid_begin = lo;
    last = hi;
  }
  std::size_t test_begin = last + 1;
  if (!test.empty()) {
    const auto [lo, hi] = bounds(test);
    if (lo <= last) throw DataError("non-monotone split boundaries: test starts before the previous split ends");
    test_begin = lo;
    last = hi;
  }
  (void)train_lo;

  FactStore store;
  store.num_entities = num_entities;
  store.num_relations = num_relations;
  store.timeline.resize(last + 1);
  for (std::size_t t = 0; t < store.timeline.size(); ++t) store.timeline[t].timestamp = t;
  for (auto part : {train, valid, test})
    for (const auto& f : part) {
      if (f.subject >= num_entities || f.object >= num_entities || f.relation >= num_relations) {
        throw DataError("fact id out of range");
      }
      store.timeline[f.timestamp].facts.push_back(f);
    }
  if (valid.empty()) valid_begin = test_begin;
  store.train = {0, valid_begin};
  store.valid = {valid_begin, test_begin};
  store.test = {test_begin, last + 1};
  for (auto& snap : store.timeline) index_snapshot(snap, num_entities, num_relations);
  return store;
}

}  // namespace

void index_snapshot(Snapshot& snap, std::size_t num_entities, std::size_t num_relations) {
  snap.in_degree.assign(num_entities, 0);
  std::vector<std::set<std::size_t>> rel_sets(num_relations);
  std::set<std::size_t> active;
  for (const auto& f : snap.facts) {
    ++snap.in_degree[f.object];
    rel_sets[f.relation].insert(f.subject);
    rel_sets[f.relation].insert(f.object);
    active.insert(f.subject);
    active.insert(f.object);
  }
  snap.rel_entities.assign(num_relations, {});
  for (std::size_t r = 0; r < num_relations; ++r) snap.rel_entities[r].assign(rel_sets[r].begin(), rel_sets[r].end());
  snap.active_entities.assign(active.begin(), active.end());

  std::vector<std::tuple<std::size_t, std::size_t, double>> ent, rel, pool;
  ent.reserve(snap.facts.size());
  rel.reserve(snap.facts.size());
  for (const auto& f : snap.facts) {
    const double w = 1.0 / static_cast<double>(snap.in_degree[f.object]);
    ent.emplace_back(f.object, f.subject, w);
    rel.emplace_back(f.object, f.relation, w);
  }
  for (std::size_t r = 0; r < num_relations; ++r) {
    const auto& members = snap.rel_entities[r];
    for (std::size_t e : members) pool.emplace_back(r, e, 1.0 / static_cast<double>(members.size()));
  }
  snap.entity_aggregation =
      std::make_shared<const SparseMatrix>(SparseMatrix::from_triplets(num_entities, num_entities, std::move(ent)));
  snap.relation_aggregation =
      std::make_shared<const SparseMatrix>(SparseMatrix::from_triplets(num_entities, num_relations, std::move(rel)));
  snap.relation_pooling =
      std::make_shared<const SparseMatrix>(SparseMatrix::from_triplets(num_relations, num_entities, std::move(pool)));
  snap.receives_messages = Tensor(Shape{num_entities}, 0.0);
  for (std::size_t e = 0; e < num_entities; ++e) snap.receives_messages[e] = snap.in_degree[e] > 0 ? 1.0 : 0.0;
}

std::string split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "'");
}

const SplitRange& FactStore::range(Split split) const {
  switch (split) {
    case Split::kTrain: return train;
    case Split::kValid: return valid;
    case Split::kTest: return test;
  }
  throw ConfigError("unknown split");
}

std::vector<Quadruple> FactStore::facts(Split split) const {
  std::vector<Quadruple> out;
  const auto& r = range(split);
  for (std::size_t t = r.begin; t < r.end; ++t) out.insert(out.end(), timeline[t].facts.begin(), timeline[t].facts.end());
  return out;
}

std::size_t FactStore::num_base_facts(Split split) const {
  std::size_t n = 0;
  const auto& r = range(split);
  for (std::size_t t = r.begin; t < r.end; ++t)
    for (const auto& f : timeline[t].facts) n += f.relation < num_relations ? 1 : 0;
  return n;
}

FactStore load_quadruples(const std::filesystem::path& train, const std::filesystem::path& valid,
                          const std::filesystem::path& test, const std::filesystem::path& stat) {
  const auto [num_entities, num_relations] = read_stat(stat);
  const auto raw_train = read_fact_file(train, num_entities, num_relations);
  const auto raw_valid = read_fact_file(valid, num_entities, num_relations);
  const auto raw_test = read_fact_file(test, num_entities, num_relations);
  if (raw_train.empty()) throw DataError("empty split: train");

  std::vector<std::int64_t> times;
  for (const auto* part : {&raw_train, &raw_valid, &raw_test})
    for (const auto& f : *part) times.push_back(f.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  std::int64_t interval = 0;
  for (std::size_t i = 1; i < times.size(); ++i) interval = std::gcd(interval, times[i] - times[i - 1]);
  if (interval == 0) interval = 1;
  const std::int64_t origin = times.front();

  std::vector<Quadruple> q[3];
  const std::vector<RawFact>* parts[3] = {&raw_train, &raw_valid, &raw_test};
  for (int i = 0; i < 3; ++i)
    for (const auto& f : *parts[i]) q[i].push_back(to_quad(f, origin, interval));
  FactStore store = assemble(num_entities, num_relations, q[0], q[1], q[2]);
  store.time_origin = origin;
  store.time_interval = interval;
  return store;
}

FactStore load_dataset_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  const auto opt = [&](const char* name) {
    const auto p = dir / name;
    return std::filesystem::exists(p) ? p : std::filesystem::path();
  };
  return load_quadruples(dir / "train.txt", opt("valid.txt"), opt("test.txt"), dir / "stat.txt");
}

FactStore make_fact_store(std::size_t num_entities, std::size_t num_relations, std::span<const Quadruple> train,
                          std::span<const Quadruple> valid, std::span<const Quadruple> test) {
  return assemble(num_entities, num_relations, train, valid, test);
}

void write_quadruples(const FactStore& store, Split split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const auto& r = store.range(split);
  for (std::size_t t = r.begin; t < r.end; ++t) {
    for (const auto& f : store.timeline[t].facts) {
      if (f.relation >= store.num_relations) continue;
      const std::int64_t raw = store.time_origin + static_cast<std::int64_t>(f.timestamp) * store.time_interval;
      out << f.subject << '\t' << f.relation << '\t' << f.object << '\t' << raw << '\n';
    }
  }
}

FactStore add_inverse_quadruples(FactStore store) {
  if (store.augmented) throw DataError("fact store is already augmented with inverse quadruples");
  const std::size_t nr = store.num_relations;
  for (auto& snap : store.timeline) {
    const std::size_t n = snap.facts.size();
    snap.facts.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const Quadruple f = snap.facts[i];
      snap.facts.push_back({f.object, f.relation + nr, f.subject, f.timestamp});
    }
  }
  store.augmented = true;
  for (auto& snap : store.timeline) index_snapshot(snap, store.num_entities, store.num_relation_ids());
  return store;
}

std::span<const Snapshot> history_window(const FactStore& store, std::size_t t, std::size_t m) {
  if (m == 0) throw ConfigError("history length must be at least 1");
  if (t >= store.timeline.size()) {
    throw DataError("timestamp " + std::to_string(t) + " outside timeline of " +
                    std::to_string(store.timeline.size()) + " snapshots");
  }
  const std::size_t begin = t + 1 >= m ? t + 1 - m : 0;
  return std::span<const Snapshot>(store.timeline).subspan(begin, t + 1 - begin);
}

std::vector<std::shared_ptr<const SparseMatrix>> StaticGraph::aggregation(std::size_t column_offset) const {
  std::vector<std::vector<std::tuple<std::size_t, std::size_t, double>>> per_rel(num_relations);
  for (const auto& e : edges) {
    per_rel[e.relation].emplace_back(e.entity, column_offset + e.property,
                                     1.0 / static_cast<double>(neighbor_count[e.entity]));
  }
  std::vector<std::shared_ptr<const SparseMatrix>> out;
  for (auto& trip : per_rel) {
    out.push_back(std::make_shared<const SparseMatrix>(
        SparseMatrix::from_triplets(num_entities, column_offset + num_properties(), std::move(trip))));
  }
  return out;
}

StaticGraph build_static_graph(std::span<const std::string> entity_names) {
  StaticGraph g;
  g.num_entities = entity_names.size();
  g.neighbor_count.assign(g.num_entities, 0);
  std::unordered_map<std::string, std::size_t> property_ids;
  const auto property = [&](std::string_view name) {
    const auto [it, inserted] = property_ids.emplace(std::string(name), g.properties.size());
    if (inserted) g.properties.emplace_back(name);
    return it->second;
  };
  std::set<StaticEdge> seen;
  for (std::size_t e = 0; e < entity_names.size(); ++e) {
    const std::string_view name = trim(entity_names[e]);
    std::string_view type = name, country;
    if (!name.empty() && name.back() == ')') {
      int depth = 0;
      std::size_t open = std::string_view::npos;
      for (std::size_t i = name.size(); i-- > 0;) {
        if (name[i] == ')') ++depth;
        if (name[i] == '(' && --depth == 0) {
          open = i;
          break;
        }
      }
      if (open != std::string_view::npos) {
        const auto head = trim(name.substr(0, open));
        const auto inner = trim(name.substr(open + 1, name.size() - open - 2));
        if (!head.empty() && !inner.empty()) type = head, country = inner;
      }
    }
    const StaticEdge isa{e, StaticGraph::kIsA, property(type)};
    if (seen.insert(isa).second) g.edges.push_back(isa);
    if (!country.empty()) {
      const StaticEdge c{e, StaticGraph::kCountry, property(country)};
      if (seen.insert(c).second) g.edges.push_back(c);
    }
  }
  for (const auto& edge : g.edges) ++g.neighbor_count[edge.entity];
  return g;
}

std::vector<std::string> load_entity_names(const std::filesystem::path& path, std::size_t num_entities) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::optional<std::string>> names(num_entities);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::optional<std::int64_t> id;
    std::string name;
    const auto tab = line.find('\t');
    if (tab != std::string::npos) {
      const std::string_view a = trim(std::string_view(line).substr(0, tab));
      const std::string_view b = trim(std::string_view(line).substr(tab + 1));
      if ((id = parse_int(a))) {
        name = b;
      } else if ((id = parse_int(b))) {
        name = a;
      }
    } else {
      const auto sp = line.find(' ');
      if (sp != std::string::npos && (id = parse_int(trim(std::string_view(line).substr(0, sp))))) {
        name = trim(std::string_view(line).substr(sp + 1));
      }
    }
    if (!id) throw ParseError(path.string(), lineno, "expected 'id<TAB>name'");
    if (*id < 0 || static_cast<std::size_t>(*id) >= num_entities) {
      throw ParseError(path.string(), lineno, "entity id out of range");
    }
    names[*id] = name;
  }
  std::vector<std::string> out;
  out.reserve(num_entities);
  for (std::size_t e = 0; e < num_entities; ++e) {
    if (!names[e]) throw DataError(path.string() + ": no name for entity " + std::to_string(e));
    out.push_back(std::move(*names[e]));
  }
  return out;
}

}  // namespace evokg
