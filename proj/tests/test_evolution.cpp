#include <cmath>

#include "doctest.h"
#include "evokg/errors.hpp"
#include "evokg/evolution.hpp"
#include "oracles.hpp"

using namespace evokg;

namespace {

Tensor identity(std::size_t d) {
  Tensor t(Shape{d, d}, 0.0);
  for (std::size_t i = 0; i < d; ++i) t.at(i, i) = 1.0;
  return t;
}

EvolutionConfig eval_config(std::size_t d, std::size_t layers = 2) {
  EvolutionConfig c;
  c.dim = d;
  c.num_layers = layers;
  c.dropout = 0.0;
  return c;
}

// Single snapshot over n entities / r base relations, augmented with inverses.
FactStore one_snapshot(std::size_t n, std::size_t r, std::vector<Quadruple> facts) {
  return add_inverse_quadruples(make_fact_store(n, r, facts, {}, {}));
}

double row_norm(const Tensor& t, std::size_t i) {
  double ss = 0;
  for (double v : t.row(i)) ss += v * v;
  return std::sqrt(ss);
}

void check_unit_rows(const Tensor& t, double tol = 1e-9) {
  for (std::size_t i = 0; i < t.rows(); ++i) CHECK(std::abs(row_norm(t, i) - 1.0) < tol);
}

Tensor normalized(Tensor t) { return oracle::unit_rows(std::move(t)); }

}  // namespace

TEST_CASE("rgcn layer: single-edge hand example") {
  const FactStore s = one_snapshot(2, 1, {{0, 0, 1, 0}});
  Rng rng(1);
  auto p = init_evolution_params(eval_config(2, 1), 2, 2, nullptr, rng);
  p.layers[0].aggregate.mutable_value() = identity(2);
  p.layers[0].self_loop.mutable_value() = identity(2);
  const Var h = Var::constant(Tensor(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}));
  const Var r = Var::constant(Tensor(Shape{2, 2}, std::vector<double>{0, 1, 0, 1}));
  // Only the forward fact (a, r, b) should reach b; strip the inverse to match the example.
  Snapshot snap = s.timeline[0];
  snap.facts = {{0, 0, 1, 0}};
  index_snapshot(snap, 2, 2);
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  const Tensor out = rgcn_layer(snap, h, r, p.layers[0], p.config, fw).value();
  CHECK(out.at(1, 0) == 1.0);
  CHECK(out.at(1, 1) == 2.0);
}

TEST_CASE("rgcn layer: empty snapshot uses the isolated self-loop for everybody") {
  const FactStore s = make_fact_store(3, 1, std::vector<Quadruple>{{0, 0, 1, 1}}, {}, {});
  Rng rng(2);
  const auto p = init_evolution_params(eval_config(4, 1), 3, 1, nullptr, rng);
  const Tensor h = oracle::random_tensor({3, 4}, rng);
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  REQUIRE(s.timeline[0].facts.empty());
  const Tensor out =
      rgcn_layer(s.timeline[0], Var::constant(h), p.relation_init, p.layers[0], p.config, fw).value();
  const Tensor pre = oracle::matmul(h, p.layers[0].isolated_loop.value());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == oracle::rrelu_eval(pre[i]));
}

TEST_CASE("rgcn layer matches an edge-loop oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const FactStore s = one_snapshot(6, 3, oracle::random_facts(6, 3, 8, 0, rng));
    const auto p = init_evolution_params(eval_config(5, 1), 6, 6, nullptr, rng);
    const Tensor h = oracle::random_tensor({6, 5}, rng);
    const Tensor r = oracle::random_tensor({6, 5}, rng);
    Tape tape(Tape::Grad::kNoGrad);
    Forward fw{tape};
    const Tensor out =
        rgcn_layer(s.timeline[0], Var::constant(h), Var::constant(r), p.layers[0], p.config, fw).value();
    CHECK(max_abs_diff(out, oracle::rgcn_layer(s.timeline[0], h, r, p.layers[0])) < 1e-12);
  }
}

TEST_CASE("rgcn layer rejects snapshots indexed for another vocabulary") {
  const FactStore s = one_snapshot(3, 1, {{0, 0, 1, 0}});
  Rng rng(3);
  const auto p = init_evolution_params(eval_config(2, 1), 4, 2, nullptr, rng);
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  CHECK_THROWS_AS(rgcn_layer(s.timeline[0], p.entity_init, p.relation_init, p.layers[0], p.config, fw), ShapeError);
}

TEST_CASE("time gate limits and formula") {
  Rng rng(4);
  const std::size_t n = 5, d = 3;
  const Tensor cur = oracle::random_tensor({n, d}, rng), prev = oracle::random_tensor({n, d}, rng);
  const Var w0 = Var::constant(Tensor(Shape{d, d}, 0.0));
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  const Tensor closed =
      time_gate_update(Var::constant(cur), Var::constant(prev), w0, Var::constant(Tensor(Shape{d}, -40.0)), fw)
          .value();
  const Tensor open =
      time_gate_update(Var::constant(cur), Var::constant(prev), w0, Var::constant(Tensor(Shape{d}, 40.0)), fw)
          .value();
  CHECK(max_abs_diff(closed, normalized(prev)) < 1e-12);
  CHECK(max_abs_diff(open, normalized(cur)) < 1e-12);

  const Tensor w = oracle::random_tensor({d, d}, rng), b = oracle::random_tensor({d}, rng);
  const Tensor mix =
      time_gate_mix(Var::constant(cur), Var::constant(prev), Var::constant(w), Var::constant(b), fw).value();
  const Tensor logits = oracle::matmul(prev, w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double x = logits.at(i, j) + b[j];
      const double u = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      const double expect = u * cur.at(i, j) + (1.0 - u) * prev.at(i, j);
      CHECK(mix.at(i, j) == expect);
      const double lo = std::min(cur.at(i, j), prev.at(i, j)), hi = std::max(cur.at(i, j), prev.at(i, j));
      CHECK(mix.at(i, j) >= lo - 1e-15);
      CHECK(mix.at(i, j) <= hi + 1e-15);
    }
  check_unit_rows(time_gate_update(Var::constant(cur), Var::constant(prev), Var::constant(w), Var::constant(b), fw)
                      .value());
  CHECK_THROWS_AS(time_gate_mix(Var::constant(cur), Var::constant(Tensor(Shape{n + 1, d}, 0.0)), Var::constant(w),
                                Var::constant(b), fw),
                  ShapeError);
}

TEST_CASE("relation input: pooled previous entities next to the initial relation row") {
  // entities 0,1 take part in relation 0; relation 1 (and its inverse) is absent.
  const FactStore s = one_snapshot(3, 2, {{0, 0, 1, 0}});
  const Tensor h(Shape{3, 2}, std::vector<double>{1, 0, 0, 1, 0.6, 0.8});
  Rng rng(5);
  const Tensor r0 = oracle::random_tensor({4, 2}, rng);
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  const Tensor x = relation_input(Var::constant(h), s.timeline[0], Var::constant(r0), fw).value();
  REQUIRE(x.shape() == Shape{4, 4});
  CHECK(x.at(0, 0) == 0.5);
  CHECK(x.at(0, 1) == 0.5);
  CHECK(x.at(0, 2) == r0.at(0, 0));
  CHECK(x.at(0, 3) == r0.at(0, 1));
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(x.at(1, j) == 0.0);
    CHECK(x.at(3, j) == 0.0);
  }
  CHECK(x.at(2, 0) == 0.5);  // inverse of relation 0 covers the same pair

  const FactStore single = one_snapshot(3, 1, {{2, 0, 2, 0}});
  const Tensor y = relation_input(Var::constant(h), single.timeline[0],
                                  Var::constant(oracle::random_tensor({2, 2}, rng)), fw)
                       .value();
  CHECK(y.at(0, 0) == 0.6);
  CHECK(y.at(0, 1) == 0.8);
}

TEST_CASE("gru update: formula oracle and limits") {
  Rng rng(6);
  const std::size_t n = 4, d = 3;
  auto p = init_evolution_params(eval_config(d), 2, n, nullptr, rng);
  const Tensor h = oracle::random_tensor({n, d}, rng), x = oracle::random_tensor({n, 2 * d}, rng);
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  const Tensor got = gru_cell(Var::constant(h), Var::constant(x), p.gru, fw).value();
  CHECK(max_abs_diff(got, oracle::gru_cell(h, x, p.gru)) < 1e-12);
  check_unit_rows(gru_update(Var::constant(h), Var::constant(x), p.gru, fw).value());

  // Zero weights, closed update gate: the previous state is carried through.
  for (Var* v : {&p.gru.input_update, &p.gru.hidden_update, &p.gru.input_reset, &p.gru.hidden_reset,
                 &p.gru.input_candidate, &p.gru.hidden_candidate, &p.gru.bias_reset, &p.gru.bias_candidate})
    v->mutable_value().fill(0.0);
  p.gru.bias_update.mutable_value().fill(-40.0);
  CHECK(max_abs_diff(gru_update(Var::constant(h), Var::constant(x), p.gru, fw).value(), normalized(h)) < 1e-12);

  // Open update gate with a zero candidate: every row collapses below the norm threshold and is
  // passed through unchanged and counted.
  p.gru.bias_update.mutable_value().fill(40.0);
  std::size_t zero_rows = 0;
  Forward counted{tape, Mode::kEval, nullptr, &zero_rows};
  const Var collapsed = gru_update(Var::constant(h), Var::constant(x), p.gru, counted);
  CHECK(zero_rows == n);
  for (std::size_t i = 0; i < n; ++i) CHECK(row_norm(collapsed.value(), i) < 1e-12);
}

TEST_CASE("static embeddings") {
  SUBCASE("single edge, identity weight") {
    const std::vector<std::string> names{"Solo"};
    const StaticGraph g = build_static_graph(names);
    Rng rng(7);
    auto p = init_evolution_params(eval_config(2), 1, 2, &g, rng);
    p.static_relation[StaticGraph::kIsA].mutable_value() = identity(2);
    p.static_init.mutable_value() = Tensor(Shape{2, 2}, std::vector<double>{9, 9, 3, 4});
    Tape tape(Tape::Grad::kNoGrad);
    Forward fw{tape};
    const Tensor out = static_embeddings(g, p, fw).value();
    CHECK(out.at(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(out.at(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("relu kill leaves a zero row and counts it") {
    const std::vector<std::string> names{"Solo", "Other"};
    const StaticGraph g = build_static_graph(names);
    Rng rng(8);
    auto p = init_evolution_params(eval_config(2), 2, 2, &g, rng);
    p.static_relation[StaticGraph::kIsA].mutable_value() = identity(2);
    p.static_init.mutable_value() = Tensor(Shape{4, 2}, std::vector<double>{0, 0, 0, 0, -1, -2, 3, 4});
    Tape tape(Tape::Grad::kNoGrad);
    std::size_t zero_rows = 0;
    Forward fw{tape, Mode::kEval, nullptr, &zero_rows};
    const Tensor out = static_embeddings(g, p, fw).value();
    CHECK(zero_rows == 1);
    CHECK(out.at(0, 0) == 0.0);
    CHECK(out.at(0, 1) == 0.0);
    CHECK(out.at(1, 0) == doctest::Approx(0.6));
  }
  SUBCASE("edge-loop oracle on random graphs") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      const std::vector<std::string> names{"Police (Australia)", "Police (France)", "Court (France)", "Bob",
                                           "Court (Iran)"};
      const StaticGraph g = build_static_graph(names);
      const auto p = init_evolution_params(eval_config(4), 5, 2, &g, rng);
      Tape tape(Tape::Grad::kNoGrad);
      Forward fw{tape};
      const Tensor out = static_embeddings(g, p, fw).value();
      const Tensor expect = oracle::static_embeddings(g, p);
      CHECK(max_abs_diff(out, expect) < 1e-12);
    }
  }
  SUBCASE("model without static parameters") {
    const std::vector<std::string> names{"Solo"};
    const StaticGraph g = build_static_graph(names);
    Rng rng(9);
    const auto p = init_evolution_params(eval_config(2), 1, 2, nullptr, rng);
    Tape tape(Tape::Grad::kNoGrad);
    Forward fw{tape};
    CHECK_THROWS_AS(static_embeddings(g, p, fw), ConfigError);
  }
}

TEST_CASE("static constraint loss") {
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  Rng rng(10);
  const Tensor s = oracle::unit_rows(oracle::random_tensor({4, 3}, rng));
  SUBCASE("aligned history costs nothing") {
    std::vector<Var> hist(4, Var::constant(s));
    CHECK(static_constraint_loss(Var::constant(s), hist, 10.0, fw).value().item() == 0.0);
  }
  SUBCASE("angle bound per position, capped at 90 degrees") {
    // Orthogonal rows: cosine 0. Position x contributes cos(min(10x, 90)) per row.
    const Tensor a(Shape{1, 2}, std::vector<double>{1, 0});
    const Tensor b(Shape{1, 2}, std::vector<double>{0, 1});
    std::vector<Var> hist(13, Var::constant(b));
    const double got = static_constraint_loss(Var::constant(a), hist, 10.0, fw).value().item();
    double expect = 0;
    for (int x = 0; x <= 12; ++x) expect += std::cos(std::min(10.0 * x, 90.0) * M_PI / 180.0);
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
    // x = 5 maps to 50 degrees.
    std::vector<Var> six(6, Var::constant(b));
    std::vector<Var> five(5, Var::constant(b));
    const double diff = static_constraint_loss(Var::constant(a), six, 10.0, fw).value().item() -
                        static_constraint_loss(Var::constant(a), five, 10.0, fw).value().item();
    CHECK(diff == doctest::Approx(std::cos(50.0 * M_PI / 180.0)).epsilon(1e-12));
    // Past the cap a nonnegative cosine contributes exactly 0.
    const Tensor c = oracle::unit_rows(Tensor(Shape{1, 2}, std::vector<double>{1, 1e-3}));
    std::vector<Var> late{Var::constant(b)};
    CHECK(static_constraint_loss(Var::constant(a), late, 10.0, fw).value().item() == 1.0);
    std::vector<Var> capped(13, Var::constant(c));
    const double tail = static_constraint_loss(Var::constant(b), capped, 10.0, fw).value().item() -
                        static_constraint_loss(Var::constant(b), std::span(capped).first(12), 10.0, fw).value().item();
    CHECK(tail == 0.0);
  }
  SUBCASE("non-unit rows are rejected") {
    std::vector<Var> hist{Var::constant(Tensor(Shape{4, 3}, 1.0))};
    CHECK_THROWS_AS(static_constraint_loss(Var::constant(s), hist, 10.0, fw), NumericError);
  }
}

TEST_CASE("evolve: empty snapshot step") {
  const FactStore s = add_inverse_quadruples(make_fact_store(3, 1, std::vector<Quadruple>{{0, 0, 1, 1}}, {}, {}));
  Rng rng(11);
  const auto p = init_evolution_params(eval_config(4, 1), 3, 2, nullptr, rng);
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  const EvolutionState init = initial_state(p, fw);
  const auto res = evolve(std::span(s.timeline).first(1), init, p, fw);
  const Tensor h = init.entities.value();
  Tensor pre = oracle::matmul(h, p.layers[0].isolated_loop.value());
  for (double& v : pre.data()) v = oracle::rrelu_eval(v);
  const Tensor expect_h =
      time_gate_update(Var::constant(pre), init.entities, p.gate_weight, p.gate_bias, fw).value();
  CHECK(res.state.entities.value() == expect_h);
  const Tensor zeros(Shape{2, 8}, 0.0);
  const Tensor expect_r = gru_update(init.relations, Var::constant(zeros), p.gru, fw).value();
  CHECK(res.state.relations.value() == expect_r);
  CHECK(res.state.timestamp == 0);
}

TEST_CASE("evolve: composed hand oracle") {
  const FactStore s = one_snapshot(2, 1, {{0, 0, 1, 0}});
  Rng rng(12);
  auto p = init_evolution_params(eval_config(2, 1), 2, 2, nullptr, rng);
  auto& l = p.layers[0];
  l.aggregate.mutable_value() = identity(2);
  l.self_loop.mutable_value() = identity(2);
  l.isolated_loop.mutable_value() = identity(2);
  p.gate_weight.mutable_value().fill(0.0);
  p.gate_bias.mutable_value().fill(40.0);
  for (Var* v : {&p.gru.input_update, &p.gru.hidden_update, &p.gru.input_reset, &p.gru.hidden_reset,
                 &p.gru.input_candidate, &p.gru.hidden_candidate})
    v->mutable_value().fill(0.0);
  p.gru.bias_update.mutable_value().fill(-40.0);
  EvolutionState init;
  init.entities = Var::constant(Tensor(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}));
  init.relations = Var::constant(Tensor(Shape{2, 2}, std::vector<double>{0, 1, 0, 1}));
  // Forward fact only, as in the single-edge example.
  Snapshot snap = s.timeline[0];
  snap.facts = {{0, 0, 1, 0}};
  index_snapshot(snap, 2, 2);
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  const auto res = evolve(std::span(&snap, 1), init, p, fw);
  const Tensor& h = res.state.entities.value();
  CHECK(h.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(h.at(0, 1)) < 1e-12);
  CHECK(h.at(1, 0) == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-12));
  CHECK(h.at(1, 1) == doctest::Approx(2.0 / std::sqrt(5.0)).epsilon(1e-12));
}

TEST_CASE("evolve: history length, unit norms and window locality") {
  Rng rng(13);
  std::vector<Quadruple> facts;
  for (std::size_t t = 0; t < 8; ++t) {
    auto f = oracle::random_facts(7, 3, 6, t, rng);
    facts.insert(facts.end(), f.begin(), f.end());
  }
  const FactStore s = add_inverse_quadruples(make_fact_store(7, 3, facts, {}, {}));
  std::vector<Quadruple> perturbed = facts;
  for (auto& q : perturbed)
    if (q.timestamp == 1 || q.timestamp == 7) q.object = (q.object + 1) % 7;
  const FactStore s2 = add_inverse_quadruples(make_fact_store(7, 3, perturbed, {}, {}));

  const auto p = init_evolution_params(eval_config(6), 7, 6, nullptr, rng);
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  const EvolutionState init = initial_state(p, fw);
  const auto a = evolve(history_window(s, 5, 3), init, p, fw);
  REQUIRE(a.entity_history.size() == 4);
  for (const auto& hx : a.entity_history) check_unit_rows(hx.value());
  check_unit_rows(a.state.relations.value());
  CHECK(a.state.timestamp == 5);
  const auto b = evolve(history_window(s2, 5, 3), init, p, fw);
  CHECK(a.state.entities.value() == b.state.entities.value());
  CHECK(a.state.relations.value() == b.state.relations.value());
  // Sanity: the perturbation does matter once it is inside the window.
  const auto c = evolve(history_window(s2, 7, 3), init, p, fw);
  const auto c0 = evolve(history_window(s, 7, 3), init, p, fw);
  CHECK(max_abs_diff(c.state.entities.value(), c0.state.entities.value()) > 0.0);
  CHECK_THROWS_AS(evolve(std::span<const Snapshot>(), init, p, fw), ConfigError);
}

TEST_CASE("evolve: gradients survive ten steps") {
  Rng rng(14);
  std::vector<Quadruple> facts;
  for (std::size_t t = 0; t < 10; ++t) {
    auto f = oracle::random_facts(5, 2, 3, t, rng);
    facts.insert(facts.end(), f.begin(), f.end());
  }
  const FactStore s = add_inverse_quadruples(make_fact_store(5, 2, facts, {}, {}));
  const auto p = init_evolution_params(eval_config(4), 5, 4, nullptr, rng);
  const Tensor weights = oracle::random_tensor({5, 4}, rng);
  const auto loss = [&](Tape& tape) {
    Forward fw{tape};
    const auto res = evolve(history_window(s, 9, 10), initial_state(p, fw), p, fw);
    return tape.sum(tape.mul(res.state.entities, Var::constant(weights)));
  };
  std::vector<std::pair<std::string, Var>> params{{"entity_init", p.entity_init},
                                                  {"relation_init", p.relation_init},
                                                  {"gate_weight", p.gate_weight},
                                                  {"gate_bias", p.gate_bias},
                                                  {"gru.input_update", p.gru.input_update},
                                                  {"gru.hidden_candidate", p.gru.hidden_candidate}};
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    params.push_back({"aggregate" + std::to_string(l), p.layers[l].aggregate});
    params.push_back({"self_loop" + std::to_string(l), p.layers[l].self_loop});
    params.push_back({"isolated_loop" + std::to_string(l), p.layers[l].isolated_loop});
  }
  const auto fd = oracle::finite_difference(loss, params);
  INFO(fd.worst);
  CHECK(fd.max_rel < 1e-4);
  // The earliest input still receives a nonzero gradient through ten gated steps.
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  double mass = 0;
  for (double v : p.entity_init.grad().data()) mass += std::abs(v);
  CHECK(mass > 0.0);
  for (auto& [name, v] : params) const_cast<Var&>(v).zero_grad();
}
