#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "noiserank/corpus.hpp"
#include "noiserank/error.hpp"
#include "noiserank/experiment.hpp"
#include "noiserank/loss.hpp"
#include "noiserank/retrieval.hpp"
#include "noiserank/sampling.hpp"
#include "test_util.hpp"

using namespace noiserank;

namespace {

struct Fixture {
  SyntheticCorpus corpus = generate_synthetic(testutil::small_synth(), 3);
  InvertedIndex index = InvertedIndex::build(corpus.documents);
  std::vector<const QuerySet*> sets{&corpus.queries};
  ModelInputs inputs{index, corpus.documents, sets, 16};

  TrainingBatch batch(std::size_t bags, std::size_t s, std::uint64_t seed) {
    for (const auto& q : corpus.queries.queries()) {
      auto b = build_batch(retrieve(index, q, 40), corpus.qrels, bags, s, seed);
      if (b && b->groups.size() == bags) return *b;
    }
    FAIL("no query yields a full batch");
    return {};
  }
};

ModelConfig tiny_model() {
  ModelConfig m;
  m.emb_dim = 6;
  m.hidden_dim = 5;
  m.num_filters = 3;
  m.filter_width = 2;
  m.max_group_size = 3;
  return m;
}

}  // namespace

TEST_SUITE("loss") {
  TEST_CASE("uniform scores give ln n") {
    for (std::size_t n : {2u, 4u, 10u}) {
      std::vector<double> z(n, 0.0);
      CHECK(std::abs(lce_loss(z, 0).loss - std::log(static_cast<double>(n))) < 1e-12);
    }
  }

  TEST_CASE("shift invariance and zero-sum gradient") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-20, 20);
    for (int i = 0; i < 1000; ++i) {
      const std::size_t n = 2 + rng() % 15;
      std::vector<double> s(n);
      for (auto& v : s) v = u(rng);
      const std::size_t pos = rng() % n;
      const double c = u(rng) * 10;
      auto a = lce_loss(s, pos);
      for (auto& v : s) v += c;
      auto b = lce_loss(s, pos);
      CHECK(std::abs(a.loss - b.loss) < 1e-9);
      CHECK(std::abs(std::accumulate(a.grad.begin(), a.grad.end(), 0.0)) < 1e-12);
      CHECK(a.loss >= 0.0);
      CHECK(a.grad[pos] <= 0.0);
    }
  }

  TEST_CASE("two-score closed form and gradient") {
    std::vector<double> s{1.0, 3.0};
    auto r = lce_loss(s, 0);
    CHECK(r.loss == doctest::Approx(std::log1p(std::exp(2.0))).epsilon(1e-14));
    const double p0 = 1.0 / (1.0 + std::exp(2.0));
    CHECK(r.grad[0] == doctest::Approx(p0 - 1.0).epsilon(1e-14));
    CHECK(r.grad[1] == doctest::Approx(1.0 - p0).epsilon(1e-14));
  }

  TEST_CASE("extreme scores stay finite") {
    std::vector<double> s{-800.0, 800.0, 0.0};
    auto r = lce_loss(s, 0);
    CHECK(r.loss == doctest::Approx(1600.0));
    CHECK(std::isfinite(r.grad[1]));
  }

  TEST_CASE("invalid input") {
    std::vector<double> one{1.0};
    CHECK_THROWS_AS(lce_loss(one, 0), ValidationError);
    std::vector<double> two{1.0, 2.0};
    CHECK_THROWS_AS(lce_loss(two, 2), ValidationError);
    std::vector<double> bad{1.0, NAN};
    CHECK_THROWS_AS(lce_loss(bad, 0), NumericError);
  }

  TEST_CASE("batch loss decomposes into individual and weighted group terms") {
    Fixture f;
    auto b = f.batch(3, 3, 5);
    auto p = init_params(tiny_model(), f.inputs.vocab_size(), 2);
    auto l0 = batch_loss_value(p, b, f.inputs, 7, 0.0);
    auto l1 = batch_loss_value(p, b, f.inputs, 7, 1.0);
    auto l2 = batch_loss_value(p, b, f.inputs, 7, 2.5);
    CHECK(l0.lce_individual == l1.lce_individual);
    CHECK(l0.total == l0.lce_individual);
    CHECK(l2.total == doctest::Approx(l2.lce_individual + 2.5 * l2.lce_group).epsilon(1e-14));
    CHECK(l1.lce_group > 0.0);
    auto full = batch_loss(p, b, f.inputs, 7, 2.5);
    CHECK(full.loss.total == doctest::Approx(l2.total).epsilon(1e-14));

    // a single group has nothing to contrast against
    TrainingBatch single = b;
    single.groups = {b.groups[b.positive_group()]};
    auto ls = batch_loss_value(p, single, f.inputs, 7, 1.0);
    CHECK(ls.lce_group == 0.0);
    CHECK(ls.total == ls.lce_individual);
  }

  TEST_CASE("finite differences agree with the analytic gradient") {
    Fixture f;
    auto b = f.batch(3, 3, 11);
    auto p = init_params(tiny_model(), f.inputs.vocab_size(), 4);
    auto r = finite_difference_check(p, b, f.inputs, 3, 1.0, 1e-5);
    CHECK(r.scalars_checked == p.num_scalars());
    CHECK(r.max_relative_error < 1e-4);
  }

  TEST_CASE("finite differences catch a corrupted gradient") {
    Fixture f;
    auto b = f.batch(3, 3, 11);
    auto p = init_params(tiny_model(), f.inputs.vocab_size(), 4);
    auto g = batch_loss(p, b, f.inputs, 3, 1.0).grads;
    auto scaled = g;
    for (auto t : scaled.tensors())
      for (auto& v : t.values) v *= 1.1;
    auto r = finite_difference_check(p, scaled, b, f.inputs, 3, 1.0, 1e-5);
    CHECK(r.max_relative_error >= 0.09);

    auto zero = g;
    for (auto t : zero.tensors())
      for (auto& v : t.values) v = 0.0;
    auto rz = finite_difference_check(p, zero, b, f.inputs, 3, 1.0, 1e-5);
    CHECK(rz.max_relative_error == doctest::Approx(1.0));
  }

  TEST_CASE("generic finite-difference check on a quadratic") {
    auto p = ScorerParams::zeros(ModelDims{3, 1, 1, 1, 1});
    p.projection[0] = 0.7;
    p.ffn_bias[0] = -0.3;
    auto loss = [](const ScorerParams& q) { return q.projection[0] * q.projection[0] + 3.0 * q.ffn_bias[0]; };
    auto g = ScorerParams::zeros(p.dims);
    g.projection[0] = 1.4;
    g.ffn_bias[0] = 3.0;
    auto r = finite_difference_check(p, g, loss, 1e-5);
    CHECK(r.max_relative_error < 1e-8);
    g.ffn_bias[0] = 2.0;
    r = finite_difference_check(p, g, loss, 1e-5);
    CHECK(r.worst_tensor == "ffn_bias");
    CHECK(r.max_relative_error == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }

  TEST_CASE("toy-corpus gradient check at default model dims") {
    auto r = run_grad_check(1, 1e-5);
    CHECK(r.batches >= 1);
    CHECK(r.report.max_relative_error < 1e-4);
  }
}
