#include <cmath>

#include "doctest.h"
#include "evokg/decoder.hpp"
#include "evokg/errors.hpp"
#include "oracles.hpp"

using namespace evokg;

namespace {

DecoderConfig small_config(std::size_t d, std::size_t kernels = 4) {
  DecoderConfig c;
  c.dim = d;
  c.num_kernels = kernels;
  return c;
}

// Independent composition: conv1d oracle, eval-mode RReLU, flatten, row times FC.
std::vector<double> core_oracle(std::span<const double> a, std::span<const double> b, const DecoderParams& p) {
  const std::size_t d = a.size();
  Tensor x(Shape{2, d});
  std::copy(a.begin(), a.end(), x.row(0).begin());
  std::copy(b.begin(), b.end(), x.row(1).begin());
  const Tensor conv = oracle::conv1d(x, p.kernels.value(), p.config.kernel_width / 2);
  std::vector<double> flat(conv.data().begin(), conv.data().end());
  for (double& v : flat) v = oracle::rrelu_eval(v);
  return oracle::row_times(flat, p.fc.value());
}

EvolutionState random_state(std::size_t n, std::size_t nr, std::size_t d, Rng& rng) {
  return {Var::constant(oracle::unit_rows(oracle::random_tensor({n, d}, rng))),
          Var::constant(oracle::unit_rows(oracle::random_tensor({nr, d}, rng))), 0};
}

}  // namespace

TEST_CASE("convtranse core") {
  Rng rng(1);
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  SUBCASE("zero weights give a zero vector") {
    auto p = init_decoder_params(small_config(6), rng);
    p.kernels.mutable_value().fill(0.0);
    p.fc.mutable_value().fill(0.0);
    const Tensor out = convtranse(Var::constant(oracle::random_tensor({3, 6}, rng)),
                                  Var::constant(oracle::random_tensor({3, 6}, rng)), p, fw)
                           .value();
    for (double v : out.data()) CHECK(v == 0.0);
  }
  SUBCASE("constructed weights pass the first input through") {
    const std::size_t d = 5;
    auto p = init_decoder_params(small_config(d), rng);
    p.kernels.mutable_value().fill(0.0);
    p.kernels.mutable_value()[1] = 1.0;  // kernel 0, channel 0, centre tap
    p.fc.mutable_value().fill(0.0);
    for (std::size_t t = 0; t < d; ++t) p.fc.mutable_value().at(t, t) = 1.0;
    const Tensor e1 = oracle::random_tensor({1, d}, rng, 0.1, 1.0);
    const Tensor out =
        convtranse(Var::constant(e1), Var::constant(oracle::random_tensor({1, d}, rng)), p, fw).value();
    CHECK(max_abs_diff(out, e1) < 1e-15);
  }
  SUBCASE("random inputs at d=8 match the composed oracle") {
    const auto p = init_decoder_params(small_config(8, 50), rng);
    const Tensor a = oracle::random_tensor({4, 8}, rng), b = oracle::random_tensor({4, 8}, rng);
    const Tensor out = convtranse(Var::constant(a), Var::constant(b), p, fw).value();
    for (std::size_t i = 0; i < 4; ++i) {
      const auto expect = core_oracle(a.row(i), b.row(i), p);
      for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(out.at(i, j) - expect[j]) < 1e-12);
    }
  }
  SUBCASE("dimension narrower than the kernel") {
    CHECK_THROWS_AS(init_decoder_params(small_config(2), rng), ConfigError);
    auto cfg = small_config(6);
    cfg.kernel_width = 2;
    CHECK_THROWS_AS(init_decoder_params(cfg, rng), ConfigError);
    const auto p = init_decoder_params(small_config(3), rng);
    CHECK_THROWS_AS(convtranse(Var::constant(Tensor(Shape{1, 2}, 0.0)), Var::constant(Tensor(Shape{1, 2}, 0.0)), p, fw),
                    ConfigError);
  }
}

TEST_CASE("entity and relation scores") {
  Rng rng(2);
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  const std::size_t d = 4;
  SUBCASE("zero core output gives one half everywhere") {
    auto p = init_decoder_params(small_config(d), rng);
    p.fc.mutable_value().fill(0.0);
    const auto st = random_state(6, 4, d, rng);
    const Tensor pe = score_entities(st, 2, 1, p, fw).value();
    const Tensor pr = score_relations(st, 2, 3, p, fw).value();
    for (double v : pe.data()) CHECK(v == 0.5);
    for (double v : pr.data()) CHECK(v == 0.5);
  }
  SUBCASE("orthonormal candidates: the basis vector picked by the core wins") {
    // Core output = e1 (pass-through), chosen as basis vector k = 2.
    auto p = init_decoder_params(small_config(d), rng);
    p.kernels.mutable_value().fill(0.0);
    p.kernels.mutable_value()[1] = 1.0;
    p.fc.mutable_value().fill(0.0);
    for (std::size_t t = 0; t < d; ++t) p.fc.mutable_value().at(t, t) = 1.0;
    Tensor h(Shape{d, d}, 0.0);
    for (std::size_t i = 0; i < d; ++i) h.at(i, i) = 1.0;
    const EvolutionState st{Var::constant(h), Var::constant(oracle::unit_rows(oracle::random_tensor({2, d}, rng))), 0};
    const Tensor probs = score_entities(st, 2, 0, p, fw).value();
    CHECK(probs[2] == oracle::sigmoid(1.0));
    for (std::size_t k = 0; k < d; ++k)
      if (k != 2) CHECK(probs[k] < probs[2]);

    // Relation rows +v and -v with core output v.
    Tensor rv(Shape{2, d}, 0.0);
    const Tensor v = oracle::random_tensor({1, d}, rng, 0.2, 1.0);
    for (std::size_t j = 0; j < d; ++j) rv.at(0, j) = v[j], rv.at(1, j) = -v[j];
    Tensor hv = h;
    for (std::size_t j = 0; j < d; ++j) hv.at(0, j) = v[j];
    const EvolutionState st2{Var::constant(hv), Var::constant(rv), 0};
    const Tensor pr = score_relations(st2, 0, 1, p, fw).value();
    const double sq = oracle::dot(v.data(), v.data());
    CHECK(pr[0] == doctest::Approx(oracle::sigmoid(sq)).epsilon(1e-14));
    CHECK(pr[1] == doctest::Approx(oracle::sigmoid(-sq)).epsilon(1e-14));
    CHECK(pr[0] > pr[1]);
  }
  SUBCASE("loop oracle") {
    const auto p = init_decoder_params(small_config(6, 5), rng);
    const auto st = random_state(7, 4, 6, rng);
    const Tensor& h = st.entities.value();
    const Tensor& r = st.relations.value();
    const Tensor pe = score_entities(st, 3, 2, p, fw).value();
    const auto core = core_oracle(h.row(3), r.row(2), p);
    for (std::size_t k = 0; k < 7; ++k) CHECK(std::abs(pe[k] - oracle::sigmoid(oracle::dot(h.row(k), core))) < 1e-12);
    const Tensor pr = score_relations(st, 4, 0, p, fw).value();
    const auto core_r = core_oracle(h.row(4), h.row(0), p);
    for (std::size_t k = 0; k < 4; ++k)
      CHECK(std::abs(pr[k] - oracle::sigmoid(oracle::dot(r.row(k), core_r))) < 1e-12);
  }
  SUBCASE("ids out of range") {
    const auto p = init_decoder_params(small_config(d), rng);
    const auto st = random_state(3, 2, d, rng);
    CHECK_THROWS_AS(score_entities(st, 3, 0, p, fw), DataError);
    CHECK_THROWS_AS(score_entities(st, 0, 2, p, fw), DataError);
    CHECK_THROWS_AS(score_relations(st, 0, 5, p, fw), DataError);
  }
}

TEST_CASE("batched scoring equals one-by-one bitwise and stays inside (0, 1)") {
  Rng rng(3);
  const std::size_t n = 40, nr = 6, d = 16;
  const auto p = init_decoder_params(small_config(d, 50), rng);
  const auto st = random_state(n, nr, d, rng);
  std::vector<std::size_t> subj, rel, obj;
  std::uniform_int_distribution<std::size_t> e(0, n - 1), r(0, nr - 1);
  for (int i = 0; i < 25; ++i) subj.push_back(e(rng)), rel.push_back(r(rng)), obj.push_back(e(rng));
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  const Tensor batch = score_entities(st, subj, rel, p, fw).value();
  const Tensor batch_r = score_relations(st, subj, obj, p, fw).value();
  for (std::size_t q = 0; q < subj.size(); ++q) {
    const Tensor one = score_entities(st, subj[q], rel[q], p, fw).value();
    CHECK(std::equal(one.data().begin(), one.data().end(), batch.row(q).begin()));
    const Tensor one_r = score_relations(st, subj[q], obj[q], p, fw).value();
    CHECK(std::equal(one_r.data().begin(), one_r.data().end(), batch_r.row(q).begin()));
  }
  for (double v : batch.data()) CHECK((v > 0.0 && v < 1.0));
  for (double v : batch_r.data()) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("probability grows with the candidate's dot product") {
  Rng rng(4);
  const std::size_t d = 5;
  const auto p = init_decoder_params(small_config(d), rng);
  const auto st = random_state(4, 2, d, rng);
  Tape tape(Tape::Grad::kNoGrad);
  Forward fw{tape};
  const std::size_t s[] = {0}, r[] = {1};
  const Tensor core = convtranse(tape.gather_rows(st.entities, {0}), tape.gather_rows(st.relations, {1}), p, fw).value();
  // Move candidate 3 along the core direction; candidate 0 (the subject) is left alone so the
  // core output does not change.
  double last = -1.0;
  for (double step = 0.0; step <= 1.0; step += 0.25) {
    Tensor h = st.entities.value();
    for (std::size_t j = 0; j < d; ++j) h.at(3, j) += step * core[j];
    const EvolutionState moved{Var::constant(h), st.relations, 0};
    const Tensor probs = score_entities(moved, s, r, p, fw).value();
    CHECK(probs.at(0, 3) > last);
    last = probs.at(0, 3);
  }
}
