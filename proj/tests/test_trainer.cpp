#include <doctest.h>

#include <cmath>

#include "noiserank/error.hpp"
#include "noiserank/eval.hpp"
#include "noiserank/trainer.hpp"
#include "test_util.hpp"

using namespace noiserank;

namespace {

// Corpus, split, index and candidates with owned storage for TrainingData.
struct Setup {
  SyntheticCorpus corpus;
  QuerySplit split;
  InvertedIndex index;
  std::vector<const QuerySet*> sets;
  ModelInputs inputs;
  TrainingData data;

  Setup(const SynthConfig& synth, std::uint64_t seed, std::size_t passage_len, std::size_t k)
      : corpus(generate_synthetic(synth, seed)),
        split(split_queries(corpus.queries, 0.25)),
        index(InvertedIndex::build(corpus.documents)),
        sets{&split.train, &split.dev},
        inputs(index, corpus.documents, sets, passage_len) {
    data.inputs = &inputs;
    data.train_candidates = retrieve_all(index, split.train, k);
    data.dev_candidates = retrieve_all(index, split.dev, k);
    data.train_qrels = filter_qrels(corpus.qrels, split.train);
    data.dev_qrels = filter_qrels(corpus.qrels, split.dev);
  }
};

TrainConfig small_train() {
  TrainConfig c;
  c.epochs = 3;
  c.m_bags = 4;
  c.group_size = 3;
  c.top_k = 40;
  c.learning_rate = 1e-2;
  c.model.emb_dim = 8;
  c.model.hidden_dim = 8;
  c.model.num_filters = 4;
  c.model.max_passage_len = 16;
  return c;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("first Adam step moves each weight by the learning rate against the gradient sign") {
    auto p = ScorerParams::zeros(ModelDims{3, 1, 2, 1, 1});
    auto g = ScorerParams::zeros(p.dims);
    g.ffn_bias = {0.3, -2.0};
    g.projection = {1e-3, 0.0};
    auto state = AdamState::for_params(p);
    AdamConfig cfg;
    cfg.learning_rate = 0.01;
    adam_step(p, g, state, cfg);
    CHECK(state.step == 1);
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    CHECK(p.ffn_bias[0] == doctest::Approx(-0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
    CHECK(p.ffn_bias[1] == doctest::Approx(0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
    CHECK(p.projection[0] == doctest::Approx(-0.01 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-12));
    CHECK(p.projection[1] == 0.0);
    CHECK(state.first_moment.ffn_bias[0] == doctest::Approx(0.1 * 0.3));
    CHECK(state.second_moment.ffn_bias[1] == doctest::Approx(0.001 * 4.0));
  }

  TEST_CASE("zero gradient leaves parameters fixed and decays the moments") {
    auto p = ScorerParams::zeros(ModelDims{3, 1, 1, 1, 1});
    p.projection = {0.5};
    auto state = AdamState::for_params(p);
    state.first_moment.projection = {1.0};
    state.second_moment.projection = {1.0};
    state.step = 5;
    auto g = ScorerParams::zeros(p.dims);
    auto before = p;
    adam_step(p, g, state, AdamConfig{});
    CHECK(state.first_moment.projection[0] == doctest::Approx(0.9));
    CHECK(state.second_moment.projection[0] == doctest::Approx(0.999));
    // with nonzero history the update is driven by the moments, not the zero gradient
    CHECK(p.projection[0] < before.projection[0]);

    auto fresh = AdamState::for_params(before);
    auto q = before;
    adam_step(q, g, fresh, AdamConfig{});
    CHECK(q == before);
  }

  TEST_CASE("adam rejects non-finite gradients and mismatched shapes") {
    auto p = ScorerParams::zeros(ModelDims{3, 1, 1, 1, 1});
    auto g = ScorerParams::zeros(p.dims);
    g.ffn_bias[0] = INFINITY;
    auto state = AdamState::for_params(p);
    CHECK_THROWS_AS(adam_step(p, g, state, AdamConfig{}), NumericError);
    auto other = ScorerParams::zeros(ModelDims{4, 1, 1, 1, 1});
    CHECK_THROWS_AS(adam_step(p, other, state, AdamConfig{}), ValidationError);
  }

  TEST_CASE("config text parsing") {
    TrainConfig c;
    apply_config_text(c, "# comment\n\nepochs=7\nlearning_rate=0.01\nsampler=random\nM=5\ns=3\nN=50\nemb_dim=16\n");
    CHECK(c.epochs == 7);
    CHECK(c.learning_rate == 0.01);
    CHECK(c.sampler == SamplerKind::kRandom);
    CHECK(c.m_bags == 5);
    CHECK(c.group_size == 3);
    CHECK(c.top_k == 50);
    CHECK(c.model.emb_dim == 16);
    CHECK_THROWS_AS(apply_config_text(c, "colour=blue\n"), ValidationError);
    CHECK_THROWS_AS(apply_config_text(c, "epochs=many\n"), ValidationError);
    CHECK_THROWS_AS(apply_config_text(c, "epochs\n"), ValidationError);
    CHECK_THROWS_AS(apply_config_text(c, "sampler=greedy\n"), ValidationError);

    TrainConfig round;
    apply_config_text(round, format_train_config(c));
    CHECK(format_train_config(round) == format_train_config(c));
  }

  TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = TrainConfig{};
    c.group_size = 1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = TrainConfig{};
    c.m_bags = 200;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = TrainConfig{};
    c.learning_rate = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
  }

  TEST_CASE("config file loading overlays the base") {
    testutil::TempDir dir;
    testutil::write_file(dir / "c.cfg", "epochs=3\n");
    TrainConfig base;
    base.seed = 9;
    auto c = load_train_config(dir / "c.cfg", base);
    CHECK(c.epochs == 3);
    CHECK(c.seed == 9);
    CHECK_THROWS_AS(load_train_config(dir / "missing.cfg"), ValidationError);
  }

  TEST_CASE("training is reproducible and both samplers run") {
    Setup s(testutil::small_synth(), 2, 16, 40);
    auto cfg = small_train();
    auto a = train(s.data, cfg);
    auto b = train(s.data, cfg);
    CHECK(a.best == b.best);
    REQUIRE(a.history.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(a.history[e].mean_total == b.history[e].mean_total);
      CHECK(a.history[e].dev_mrr == b.history[e].dev_mrr);
      CHECK(a.history[e].skipped_queries == b.history[e].skipped_queries);
    }
    cfg.sampler = SamplerKind::kRandom;
    cfg.lambda_group = 0;
    auto r = train(s.data, cfg);
    CHECK(r.history.size() == 3);
    CHECK_FALSE(r.best == a.best);
    for (const auto& h : r.history) CHECK(h.mean_lce_group == 0.0);
  }

  TEST_CASE("best epoch holds the best dev MRR; checkpoints reload to the same score") {
    Setup s(testutil::small_synth(), 2, 16, 40);
    auto cfg = small_train();
    cfg.checkpoint_every = 4;
    std::size_t checkpoints = 0;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](const ScorerParams&, std::size_t step) {
      CHECK(step % 4 == 0);
      ++checkpoints;
    };
    auto r = train(s.data, cfg, hooks);
    CHECK(checkpoints > 0);
    double best = -1;
    for (const auto& h : r.history) best = std::max(best, h.dev_mrr);
    CHECK(r.best_dev_mrr == best);
    CHECK(r.history[r.best_epoch - 1].dev_mrr == best);

    testutil::TempDir dir;
    save_params(r.best, dir / "m.bin");
    auto loaded = load_params(dir / "m.bin");
    const auto seed = passage_seed_for_epoch(cfg.seed, 0);
    auto run = rerank(loaded, s.data.dev_candidates, s.inputs, seed, "x");
    CHECK(mrr_at_k(run, s.data.dev_qrels, cfg.top_k).mrr_at_k == r.best_dev_mrr);
  }

  TEST_CASE("training with no eligible query is an error") {
    Setup s(testutil::small_synth(), 2, 16, 40);
    s.data.train_qrels.clear();
    CHECK_THROWS_AS(train(s.data, small_train()), ValidationError);
  }

  TEST_CASE("history CSV layout") {
    std::vector<EpochRecord> h{{1, 2.5, 1.5, 1.0, 0.25, 3}};
    CHECK(format_history_csv(h) ==
          "epoch,mean_total,mean_lce_individual,mean_lce_group,dev_mrr,skipped_queries\n"
          "1,2.500000,1.500000,1.000000,0.250000,3\n");
  }

  TEST_CASE("default corpus: mean training loss falls over five epochs") {
    SynthConfig synth;
    synth.max_passage_len = 64;
    Setup s(synth, 7, 64, 100);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.model.max_passage_len = 64;
    auto r = train(s.data, cfg);
    REQUIRE(r.history.size() == 5);
    MESSAGE("epoch 1 loss ", r.history[0].mean_total, ", epoch 5 loss ", r.history[4].mean_total);
    CHECK(r.history[4].mean_total < 0.8 * r.history[0].mean_total);
  }
}
