#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "noiserank/error.hpp"
#include "noiserank/eval.hpp"
#include "noiserank/experiment.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace noiserank;

namespace {

RunQuery ranked(std::string qid, std::vector<std::string> docs) {
  std::vector<std::pair<std::string, double>> scored;
  for (std::size_t i = 0; i < docs.size(); ++i) scored.emplace_back(docs[i], static_cast<double>(docs.size() - i));
  return rank_scored(std::move(qid), std::move(scored));
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("first relevant at rank three") {
    RunFile run{"t", {ranked("q1", {"a", "b", "c", "d"})}};
    Qrels qrels{{"q1", {{"c", 1}}}};
    auto r = mrr_at_k(run, qrels, 100);
    CHECK(r.mrr_at_k == 1.0 / 3.0);
    CHECK(r.num_queries == 1);
    CHECK(mrr_at_k(run, qrels, 2).mrr_at_k == 0.0);
    CHECK(mrr_at_k(run, qrels, 2).num_zero_queries == 1);
  }

  TEST_CASE("two queries at ranks one and four") {
    RunFile run{"t", {ranked("q1", {"a", "b"}), ranked("q2", {"w", "x", "y", "z"})}};
    Qrels qrels{{"q1", {{"a", 1}}}, {"q2", {{"z", 2}}}};
    auto r = mrr_at_k(run, qrels, 100);
    CHECK(r.mrr_at_k == 0.625);
    CHECK(r.per_query_rr.at("q2") == 0.25);
    CHECK(r.mrr_at_k == oracle::mrr_scan(run, qrels, 100));
  }

  TEST_CASE("queries missing from the run score zero; extra run queries are excluded") {
    RunFile run{"t", {ranked("q1", {"a"}), ranked("stray", {"a"})}};
    Qrels qrels{{"q1", {{"a", 1}}}, {"q2", {{"b", 1}}}};
    auto r = mrr_at_k(run, qrels, 10);
    CHECK(r.mrr_at_k == 0.5);
    CHECK(r.num_queries == 2);
    CHECK(r.num_excluded == 1);
    CHECK_THROWS_AS(mrr_at_k(run, qrels, 0), ValidationError);
  }

  TEST_CASE("metric matches a brute-force scan on fuzzed runs") {
    std::mt19937_64 rng(21);
    for (int c = 0; c < 2000; ++c) {
      RunFile run{"t", {}};
      Qrels qrels;
      const std::size_t nq = 1 + rng() % 8;
      for (std::size_t q = 0; q < nq; ++q) {
        const std::string qid = "q" + std::to_string(q);
        std::vector<std::string> docs;
        const std::size_t nd = rng() % 20;
        for (std::size_t d = 0; d < nd; ++d) docs.push_back("d" + std::to_string(rng() % 30));
        std::sort(docs.begin(), docs.end());
        docs.erase(std::unique(docs.begin(), docs.end()), docs.end());
        std::shuffle(docs.begin(), docs.end(), rng);
        if (rng() % 5) run.queries.push_back(ranked(qid, docs));
        if (rng() % 6) {
          auto& j = qrels[qid];
          for (int i = 0, n = static_cast<int>(rng() % 3); i <= n; ++i) j["d" + std::to_string(rng() % 30)] = 1;
        }
      }
      const std::size_t k = 1 + rng() % 15;
      CHECK(mrr_at_k(run, qrels, k).mrr_at_k == oracle::mrr_scan(run, qrels, k));
    }
  }

  TEST_CASE("ranking rounds scores and breaks ties by doc id") {
    auto q = rank_scored("q", {{"b", 0.1234564}, {"a", 0.1234561}, {"c", 0.5}});
    REQUIRE(q.entries.size() == 3);
    CHECK(q.entries[0].doc_id == "c");
    CHECK(q.entries[1].doc_id == "a");
    CHECK(q.entries[2].doc_id == "b");
    CHECK(q.entries[1].score == 0.123456);
    CHECK(q.entries[2].rank == 3);
    CHECK(round_run_score(-0.0000004) == 0.0);
  }

  TEST_CASE("run files round trip") {
    testutil::TempDir dir;
    RunFile run{"tag1", {ranked("q1", {"D3", "D1"}), ranked("q2", {"D9"})}};
    write_run(run, dir / "r.run");
    CHECK(read_run(dir / "r.run") == run);
    CHECK(testutil::read_file(dir / "r.run").starts_with("q1 Q0 D3 1 2.000000 tag1\n"));

    RunFile empty;
    write_run(empty, dir / "e.run");
    CHECK(testutil::read_file(dir / "e.run").empty());
    CHECK(read_run(dir / "e.run").queries.empty());
  }

  TEST_CASE("inconsistent or malformed run files are rejected with a line number") {
    testutil::TempDir dir;
    testutil::write_file(dir / "order.run", "q1 Q0 a 1 0.5 t\nq1 Q0 b 2 0.9 t\n");
    CHECK_THROWS_AS(read_run(dir / "order.run"), FormatError);
    testutil::write_file(dir / "gap.run", "q1 Q0 a 1 0.5 t\nq1 Q0 b 3 0.4 t\n");
    CHECK_THROWS_AS(read_run(dir / "gap.run"), FormatError);
    testutil::write_file(dir / "short.run", "q1 Q0 a 1 0.5 t\nq1 Q0 b 2\n");
    try {
      read_run(dir / "short.run");
      FAIL("accepted");
    } catch (const FormatError& e) {
      CHECK(e.line() == 2);
    }
    RunFile bad{"t", {RunQuery{"q", {{"a", 0.1, 1}, {"b", 0.2, 2}}}}};
    CHECK_THROWS_AS(validate_run(bad), ValidationError);
  }

  TEST_CASE("candidate lists convert to runs and back") {
    std::vector<CandidateList> c{{"q1", {{"D2", 3.5, 1}, {"D1", 1.25, 2}}}};
    auto run = run_from_candidates(c, "bm25");
    CHECK(run.tag == "bm25");
    CHECK(candidates_from_run(run) == c);
  }

  TEST_CASE("reranking: zero parameters give doc-id order; the candidate set is kept") {
    auto corpus = generate_synthetic(testutil::small_synth(), 4);
    auto index = InvertedIndex::build(corpus.documents);
    std::vector<const QuerySet*> sets{&corpus.queries};
    ModelInputs inputs(index, corpus.documents, sets, 16);
    auto lists = retrieve_all(index, corpus.queries, 30);

    ModelConfig m;
    m.emb_dim = 4;
    m.hidden_dim = 4;
    m.num_filters = 2;
    auto zero = ScorerParams::zeros(init_params(m, inputs.vocab_size(), 1).dims);
    auto run = rerank(zero, lists, inputs, 5, "z");
    REQUIRE(run.queries.size() == lists.size());
    for (std::size_t q = 0; q < lists.size(); ++q) {
      std::vector<std::string> ids;
      for (const auto& e : lists[q].entries) ids.push_back(e.doc_id);
      std::sort(ids.begin(), ids.end());
      REQUIRE(run.queries[q].entries.size() == ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) CHECK(run.queries[q].entries[i].doc_id == ids[i]);
    }

    auto p = init_params(m, inputs.vocab_size(), 3);
    auto a = rerank(p, lists, inputs, 5, "p", 1);
    auto b = rerank(p, lists, inputs, 5, "p", 3);
    CHECK(a == b);
    CHECK(format_run(a) == format_run(rerank(p, lists, inputs, 5, "p")));
    CHECK_NOTHROW(validate_run(a));
    for (std::size_t q = 0; q < lists.size(); ++q) {
      std::set<std::string> in, out;
      for (const auto& e : lists[q].entries) in.insert(e.doc_id);
      for (const auto& e : a.queries[q].entries) out.insert(e.doc_id);
      CHECK(in == out);
    }

    std::vector<CandidateList> unknown{{"q", {{"nope", 1.0, 1}}}};
    CHECK_THROWS(rerank(p, unknown, inputs, 5, "p"));
  }

  TEST_CASE("MRR depends on ranks only") {
    std::mt19937_64 rng(2);
    for (int c = 0; c < 200; ++c) {
      std::vector<std::pair<std::string, double>> scored;
      for (int d = 0; d < 20; ++d) scored.emplace_back("d" + std::to_string(d), std::ldexp(double(rng() % 1000), -4));
      auto transformed = scored;
      for (auto& [id, s] : transformed) s = 3.0 * s + 7.0;
      Qrels qrels{{"q", {{"d" + std::to_string(rng() % 20), 1}}}};
      RunFile a{"t", {rank_scored("q", scored)}}, b{"t", {rank_scored("q", transformed)}};
      CHECK(mrr_at_k(a, qrels, 10).mrr_at_k == mrr_at_k(b, qrels, 10).mrr_at_k);
    }
  }

  TEST_CASE("reports") {
    RunFile run{"t", {ranked("q1", {"a", "b"})}};
    Qrels qrels{{"q1", {{"b", 1}}}};
    auto r = mrr_at_k(run, qrels, 100);
    CHECK(format_report_csv(r) == "query_id,rr\nq1,0.500000\nall,0.500000\n");
    CHECK(format_report_text(r, "run").find("0.5") != std::string::npos);
    CHECK(mean_positive_rank(run, qrels) == 2.0);
  }
}
