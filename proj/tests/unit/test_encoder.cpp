#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "posemb/encoder.hpp"
#include "posemb/errors.hpp"
#include "posemb/verify.hpp"

using namespace posemb;

namespace {

EncoderConfig small_config(Kind kind) {
  EncoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.width = 8;
  c.ff_width = 16;
  c.max_len = 12;
  c.vocab_size = 20;
  c.dropout = 0.0;
  c.method = MethodSpec::of(kind);
  c.method.clip_k = 4;
  return c;
}

Tensor token_rows(const Encoder& e, const std::vector<int>& ids) {
  const Tensor& table = e.parameters().find("embeddings.token")->tensor;
  Tensor out({ids.size(), table.cols()});
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (std::size_t c = 0; c < table.cols(); ++c) out.at(r, c) = table.at(static_cast<std::size_t>(ids[r]), c);
  return out;
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("sinusoid table values") {
    const Tensor pe = sinusoid_table(50, 16);
    for (std::size_t c = 0; c < 16; ++c) CHECK(pe.at(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
    for (std::size_t pos = 0; pos < 50; ++pos) CHECK(pe.at(pos, 0) == std::sin(static_cast<double>(pos)));
    for (std::size_t pos : {1u, 7u, 33u, 49u})
      for (std::size_t i = 0; i < 8; ++i) {
        const long double angle = pos / std::pow(10000.0L, 2.0L * i / 16.0L);
        CHECK(std::abs(pe.at(pos, 2 * i) - static_cast<double>(std::sin(angle))) < 1e-12);
        CHECK(std::abs(pe.at(pos, 2 * i + 1) - static_cast<double>(std::cos(angle))) < 1e-12);
      }
    CHECK_THROWS_AS(sinusoid_table(4, 7), ConfigError);
  }

  TEST_CASE("embedding without positions is the token table") {
    const Encoder e(small_config(Kind::none), 1);
    const std::vector<int> ids = {5, 6, 7, 5};
    Tape tape(false);
    CHECK(max_abs_diff(e.embed_input(tape, EncoderInput::single(ids)).value(), token_rows(e, ids)) == 0.0);
  }

  TEST_CASE("learned absolute positions differ by the table rows") {
    const Encoder e(small_config(Kind::absolute_learned), 2);
    Tape tape(false);
    const Tensor x = e.embed_input(tape, EncoderInput::single({9, 3, 3, 3, 9})).value();
    const Tensor& w = e.parameters().find("embeddings.position")->tensor;
    for (std::size_t c = 0; c < x.cols(); ++c) CHECK(x.at(0, c) - x.at(4, c) == doctest::Approx(w.at(0, c) - w.at(4, c)).epsilon(1e-14));
  }

  TEST_CASE("real-sentence positions restart inside packed rows") {
    const Encoder e(small_config(Kind::absolute_real_sentence), 3);
    EncoderInput in = EncoderInput::single({2, 5, 6, 7, 8, 9});
    in.sentence_positions = {1, 1, 2, 3, 1, 2};
    Tape tape(false);
    const Tensor x = e.embed_input(tape, in).value();
    const Tensor tok = token_rows(e, in.ids);
    const Tensor& w = e.parameters().find("embeddings.position")->tensor;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      CHECK(x.at(2, c) - tok.at(2, c) == doctest::Approx(w.at(1, c)).epsilon(1e-14));
      CHECK(x.at(5, c) - tok.at(5, c) == doctest::Approx(w.at(1, c)).epsilon(1e-14));
    }
    in.sentence_positions[3] = 13;
    Tape t2(false);
    CHECK_THROWS_AS(e.embed_input(t2, in), InputError);
  }

  TEST_CASE("attention head with uniform logits averages values") {
    Rng rng(5);
    Tape tape;
    const Tensor v = testing::random_tensor({4, 3}, rng);
    Var zeros = tape.constant(Tensor({4, 2}));
    const std::vector<std::uint8_t> valid = {1, 1, 0, 1};
    const Mask mask = Mask::key_padding(valid, 4);
    const HeadOutput out = attention_head(MethodSpec::of(Kind::none), zeros, zeros, tape.constant(v), {}, &mask);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(out.z.value().at(i, c) == doctest::Approx((v.at(0, c) + v.at(1, c) + v.at(3, c)) / 3).epsilon(1e-14));
  }

  TEST_CASE("attention head saturates on one huge logit") {
    Rng rng(6);
    Tape tape;
    const Tensor v = testing::random_tensor({3, 2}, rng);
    Tensor k({3, 1}, 0.0);
    k.at(2, 0) = 1000;
    Var q = tape.constant(Tensor({3, 1}, 1.0));
    const HeadOutput out = attention_head(MethodSpec::of(Kind::none), q, tape.constant(k), tape.constant(v), {});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 2; ++c) CHECK(out.z.value().at(i, c) == doctest::Approx(v.at(2, c)).epsilon(1e-12));
  }

  TEST_CASE("forward shape, determinism and parameter accounting for every kind") {
    for (Kind kind : kAllKinds) {
      CAPTURE(kind_name(kind));
      EncoderConfig cfg = small_config(kind);
      if (kind == Kind::tupe) cfg.method.reset_cls = true;
      const Encoder e(cfg, 11);
      EncoderInput in;
      in.batch = 2;
      in.length = 7;
      for (int i = 0; i < 14; ++i) in.ids.push_back(2 + i % 17);
      in.valid.assign(14, 1);
      in.valid[12] = in.valid[13] = 0;
      AttentionTrace trace;
      const Tensor a = e.forward(in, &trace), b = e.forward(in);
      CHECK(a.shape() == Shape{14, 20});
      CHECK(max_abs_diff(a, b) == 0.0);
      CHECK(e.position_parameter_count() ==
            static_cast<std::size_t>(param_count(cfg.method, cfg.layers, cfg.max_len, cfg.width, cfg.heads)));
      CHECK(e.core_parameter_count() + e.position_parameter_count() == e.parameters().scalar_count());

      REQUIRE(trace.probs.size() == 2u * 2u * 2u);
      for (std::size_t t = 0; t < trace.probs.size(); ++t) {
        const Tensor& p = trace.probs[t];
        const bool second = (t / 2) % 2 == 1;
        for (std::size_t i = 0; i < 7; ++i) {
          double total = 0;
          for (std::size_t j = 0; j < 7; ++j) {
            total += p.at(i, j);
            if (second && j >= 5) CHECK(p.at(i, j) == 0.0);
          }
          CHECK(std::abs(total - 1.0) < 1e-12);
        }
      }
    }
  }

  TEST_CASE("core parameter count does not depend on the position method") {
    const Encoder none(small_config(Kind::none), 1), m4(small_config(Kind::m4), 1);
    CHECK(none.core_parameter_count() == m4.core_parameter_count());
    CHECK(none.position_parameter_count() == 0);
  }

  TEST_CASE("kind none is permutation equivariant, other kinds are not") {
    const std::vector<int> ids = {5, 9, 12, 7, 15, 6, 11};
    const std::vector<std::size_t> perm = {3, 0, 6, 1, 5, 2, 4};
    std::vector<int> permuted(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) permuted[i] = ids[perm[i]];
    for (Kind kind : kAllKinds) {
      CAPTURE(kind_name(kind));
      Encoder e(small_config(kind), 4);
      // At initialisation M2's scalars are all 1, which is exactly the baseline,
      // and small projections leave the multiplicative kinds near uniform.
      Rng rng(17);
      std::normal_distribution<double> noise(0.0, 0.5);
      for (auto& p : e.parameters())
        for (double& v : p.tensor.values()) v += noise(rng);
      const Tensor a = e.forward(EncoderInput::single(ids)), b = e.forward(EncoderInput::single(permuted));
      double gap = 0;
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t c = 0; c < a.cols(); ++c) gap = std::max(gap, std::abs(b.at(i, c) - a.at(perm[i], c)));
      if (kind == Kind::none) CHECK(gap <= 1e-12);
      else CHECK(gap > 1e-6);
    }
  }

  TEST_CASE("relative-only encoders are translation invariant under padding") {
    for (Kind kind : {Kind::shaw, Kind::raffel, Kind::m2, Kind::m4, Kind::m4m, Kind::deberta}) {
      CAPTURE(kind_name(kind));
      const Encoder e(small_config(kind), 8);
      const std::vector<int> content = {5, 9, 12, 7, 15};
      EncoderInput shifted;
      shifted.length = 9;
      shifted.ids = {0, 0, 0, 5, 9, 12, 7, 15, 0};
      shifted.valid = {0, 0, 0, 1, 1, 1, 1, 1, 0};
      const Tensor a = e.forward(EncoderInput::single(content)), b = e.forward(shifted);
      double gap = 0;
      for (std::size_t i = 0; i < content.size(); ++i)
        for (std::size_t c = 0; c < a.cols(); ++c) gap = std::max(gap, std::abs(a.at(i, c) - b.at(i + 3, c)));
      CHECK(gap <= 1e-12);
    }
  }

  TEST_CASE("input validation") {
    const Encoder e(small_config(Kind::m4), 1);
    CHECK_THROWS_AS(e.forward(EncoderInput::single({5, 20})), InputError);
    CHECK_THROWS_AS(e.forward(EncoderInput::single(std::vector<int>(13, 5))), InputError);
    EncoderConfig bad = small_config(Kind::m4);
    bad.heads = 3;
    CHECK_THROWS_AS(Encoder(bad, 1), ConfigError);
  }

  TEST_CASE("exploding activations surface as divergence with a layer index") {
    Encoder e(small_config(Kind::m4m), 1);
    for (auto& p : e.parameters())
      if (p.group == "relative_table")
        for (double& v : p.tensor.values()) v *= 1e200;
    try {
      e.forward(EncoderInput::single({5, 6, 7, 8}));
      FAIL("expected divergence");
    } catch (const DivergenceError& err) {
      CHECK(err.layer() >= 1);
    }
  }

  TEST_CASE("end-to-end gradients match finite differences") {
    for (Kind kind : {Kind::none, Kind::m4m, Kind::tupe}) {
      CAPTURE(kind_name(kind));
      const GradSuiteResult r = gradient_suite(gradcheck_spec(kind));
      CHECK(r.max_rel_error() < 1e-4);
      CHECK(r.classes.size() >= 4);
    }
  }
}
