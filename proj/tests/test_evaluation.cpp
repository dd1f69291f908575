#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "evokg/errors.hpp"
#include "evokg/evaluation.hpp"
#include "evokg/synthetic.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace evokg;

namespace {

// Entity decoder whose core output is the subject embedding itself.
void make_pass_through(DecoderParams& p) {
  const std::size_t d = p.config.dim;
  const double slope = (p.config.rrelu_lower + p.config.rrelu_upper) / 2;
  p.kernels.mutable_value().fill(0.0);
  p.kernels.mutable_value()[1] = 1.0;
  p.kernels.mutable_value()[2 * p.config.kernel_width + 1] = -1.0;
  p.fc.mutable_value().fill(0.0);
  for (std::size_t t = 0; t < d; ++t) {
    p.fc.mutable_value().at(t, t) = 1.0 / (1 + slope);
    p.fc.mutable_value().at(d + t, t) = -1.0 / (1 + slope);
  }
}

TrainConfig tiny(std::size_t d) {
  TrainConfig c;
  c.dim = d;
  c.num_layers = 1;
  c.history = 2;
  c.num_kernels = 2;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("rank examples and tie policy") {
  CHECK(rank_query(std::vector<double>{0.9, 0.1, 0.5}, 0) == 1);
  CHECK(rank_query(std::vector<double>{0.5, 0.5}, 1) == 2);
  CHECK(rank_query(std::vector<double>{0.5, 0.5, 0.5}, 0) == 2);
  CHECK(rank_query(std::vector<double>{0.5, 0.5, 0.5, 0.5}, 2) == 3);
  CHECK(rank_query(std::vector<double>{0.2}, 0) == 1);
  CHECK_THROWS_AS(rank_query(std::vector<double>{0.2, 0.3}, 2), DataError);
  CHECK_THROWS_AS(rank_query(std::vector<double>{0.2, std::nan("")}, 0), NumericError);
  const std::vector<char> mask{1, 0, 0};
  CHECK(rank_query(std::vector<double>{0.9, 0.1, 0.5}, 2, mask) == 1);
}

TEST_CASE("rank agrees with a sort-based oracle") {
  Rng rng(1);
  std::uniform_int_distribution<int> level(0, 6);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> scores(20);
    for (double& s : scores) s = level(rng) / 7.0;  // plenty of ties
    const std::size_t answer = static_cast<std::size_t>(trial % 20);
    CHECK(rank_query(scores, answer) == oracle::sort_rank(scores, answer));
  }
}

TEST_CASE("metrics") {
  const Metrics a = compute_metrics(std::vector<std::size_t>{1, 2, 4});
  CHECK(a.mrr == doctest::Approx(0.58333333333).epsilon(1e-10));
  CHECK(a.count == 3);
  const Metrics b = compute_metrics(std::vector<std::size_t>{1, 1, 1});
  CHECK(b.mrr == 1.0);
  CHECK(b.hits1 == 1.0);
  const Metrics c = compute_metrics(std::vector<std::size_t>{1, 5, 2, 10});
  CHECK(c.hits3 == 0.5);
  CHECK(c.hits10 == 1.0);
  CHECK(c.hits1 == 0.25);
  CHECK_THROWS_AS(compute_metrics(std::vector<std::size_t>{}), DataError);
}

TEST_CASE("three-entity hand-scored instance") {
  const std::vector<Quadruple> train{{0, 0, 0, 0}}, test{{0, 0, 2, 1}, {1, 0, 0, 1}};
  const FactStore s = add_inverse_quadruples(make_fact_store(3, 1, train, {}, test));
  Model m = init_model(tiny(3), 3, 2, nullptr);
  make_pass_through(m.entity_decoder);
  const EvolutionState frozen{Var::constant(Tensor(Shape{3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0.6, 0.8, 0})),
                              Var::constant(Tensor(Shape{2, 3}, std::vector<double>{0, 0, 1, 0, 0, 1})), 0};
  EvalOptions eo;
  eo.mode = InferenceMode::kFrozen;
  const MetricReport r = evaluate(m, s, &frozen, eo);
  // Logits are <h_k, h_s>: subject 0 -> [1, 0, .6], 1 -> [0, 1, .8], 2 -> [.6, .8, 1].
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> expect{
      {{0, 2}, 2}, {{1, 0}, 3}, {{2, 0}, 3}, {{0, 1}, 3}};
  const auto& facts = s.timeline[1].facts;
  REQUIRE(r.ranks.size() == facts.size());
  for (std::size_t i = 0; i < facts.size(); ++i) CHECK(r.ranks[i] == expect.at({facts[i].subject, facts[i].object}));

  // Filtered: (0, r0, 0) is known from training, so subject query 0 loses candidate 0.
  eo.filtered = true;
  const MetricReport f = evaluate(m, s, &frozen, eo);
  for (std::size_t i = 0; i < facts.size(); ++i) {
    if (facts[i].subject == 0 && facts[i].relation == 0) CHECK(f.ranks[i] == 1);
    CHECK(f.ranks[i] <= r.ranks[i]);
  }
  CHECK_THROWS_AS(evaluate(m, s, nullptr, eo), ConfigError);
}

TEST_CASE("direction accounting, candidate counts, sigma invariance") {
  PlantedConfig pc;
  pc.num_entities = 12;
  pc.num_timestamps = 12;
  pc.rematch_period = 4;
  pc.valid_begin = 8;
  pc.test_begin = 10;
  const FactStore s = add_inverse_quadruples(planted_store(pc));
  Model m = init_model(tiny(8), s.num_entities, s.num_relation_ids(), nullptr);
  const EvolutionState frozen = final_training_state(m, s);
  for (Split split : {Split::kValid, Split::kTest}) {
    EvalOptions eo;
    eo.split = split;
    eo.mode = InferenceMode::kFrozen;
    const MetricReport e = evaluate(m, s, &frozen, eo);
    CHECK(e.ranks.size() == 2 * s.num_base_facts(split));
    for (std::size_t r : e.ranks) CHECK((r >= 1 && r <= s.num_entities));
    CHECK(e.overall.hits1 <= e.overall.hits3);
    CHECK(e.overall.hits3 <= e.overall.hits10);
    eo.task = Task::kRelation;
    const MetricReport rel = evaluate(m, s, &frozen, eo);
    for (std::size_t r : rel.ranks) CHECK((r >= 1 && r <= s.num_relation_ids()));
  }
  // Ranking probabilities instead of logits changes nothing.
  const auto& facts = s.timeline[s.test.begin].facts;
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  for (const auto& f : facts) {
    const Tensor probs = score_entities(frozen, f.subject, f.relation, m.entity_decoder, fw).value();
    const std::size_t s_arr[] = {f.subject}, r_arr[] = {f.relation};
    const Tensor logits = entity_logits(frozen, s_arr, r_arr, m.entity_decoder, fw).value();
    CHECK(rank_query(probs.data(), f.object) == rank_query(logits.data(), f.object));
  }
  const std::vector<std::size_t> direct = rank_snapshot(m, frozen, facts, Task::kEntity, 3);
  EvalOptions eo;
  eo.mode = InferenceMode::kFrozen;
  const MetricReport full = evaluate(m, s, &frozen, eo);
  CHECK(std::equal(direct.begin(), direct.end(), full.ranks.begin()));
}

TEST_CASE("sigma invariance over random score vectors") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor drawn = oracle::random_tensor({30}, rng, -6.0, 6.0);
    std::vector<double> logits(drawn.data().begin(), drawn.data().end());
    logits[7] = logits[3];
    std::vector<double> probs;
    for (double l : logits) probs.push_back(oracle::sigmoid(l));
    for (std::size_t a = 0; a < 30; a += 7) CHECK(rank_query(logits, a) == rank_query(probs, a));
  }
}

TEST_CASE("frozen and ground-truth agree when every snapshot is the same") {
  RepeatingConfig rc;
  const FactStore s = add_inverse_quadruples(repeating_store(rc));
  Model m = init_model(tiny(8), s.num_entities, s.num_relation_ids(), nullptr);
  fit(m, s, nullptr, {});
  const EvolutionState frozen = final_training_state(m, s);
  for (Split split : {Split::kValid, Split::kTest})
    for (Task task : {Task::kEntity, Task::kRelation}) {
      EvalOptions eo;
      eo.split = split;
      eo.task = task;
      eo.mode = InferenceMode::kFrozen;
      const MetricReport a = evaluate(m, s, &frozen, eo);
      eo.mode = InferenceMode::kGroundTruth;
      const MetricReport b = evaluate(m, s, &frozen, eo);
      CHECK(a.ranks == b.ranks);
      CHECK(a.overall.mrr == b.overall.mrr);
    }
}

TEST_CASE("reports are deterministic and serialise") {
  RepeatingConfig rc;
  const FactStore s = add_inverse_quadruples(repeating_store(rc));
  Model m = init_model(tiny(8), s.num_entities, s.num_relation_ids(), nullptr);
  EvalOptions eo;
  eo.split = Split::kValid;
  const MetricReport a = evaluate(m, s, nullptr, eo);
  const MetricReport b = evaluate(m, s, nullptr, eo);
  CHECK(a.ranks == b.ranks);
  CHECK(metrics_json(a) == metrics_json(b));
  const auto j = nlohmann::json::parse(metrics_json(a));
  CHECK(j["mode"] == "gt");
  CHECK(j["setting"] == "raw");
  CHECK(j["per_timestamp"].size() == a.per_timestamp.size());

  const auto dir = std::filesystem::temp_directory_path() / "evokg_eval_report";
  std::filesystem::create_directories(dir);
  const std::vector<MetricReport> reports{a};
  write_metrics_csv(reports, dir / "m.csv");
  std::ifstream in(dir / "m.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "task,split,mode,setting,count,mrr,hits1,hits3,hits10");
  CHECK(row.starts_with("entity,valid,gt,raw,"));
  std::filesystem::remove_all(dir);

  eo.task = Task::kBoth;
  CHECK_THROWS_AS(evaluate(m, s, nullptr, eo), ConfigError);
  CHECK(parse_mode("gt") == InferenceMode::kGroundTruth);
  CHECK_THROWS_AS(parse_mode("live"), ConfigError);
}
