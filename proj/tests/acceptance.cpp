// Acceptance run: one PASS/FAIL line per criterion, exit code 1 if any fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "noiserank/cli.hpp"
#include "noiserank/corpus.hpp"
#include "noiserank/eval.hpp"
#include "noiserank/experiment.hpp"
#include "noiserank/loss.hpp"
#include "noiserank/passage.hpp"
#include "noiserank/retrieval.hpp"
#include "noiserank/sampling.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace noiserank;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << fmt::format("{} [{}] {}: {}", o.pass ? "PASS" : "FAIL", id, name, o.detail) << std::endl;
}

CandidateList numbered_list(std::size_t n) {
  CandidateList l{"q", {}};
  for (std::size_t i = 0; i < n; ++i) l.entries.push_back({fmt::format("D{:04}", i + 1), double(n - i), i + 1});
  return l;
}

Outcome gradient() {
  const auto t0 = Clock::now();
  const GradCheckResult g = run_grad_check(1, 1e-5);
  const double secs = seconds_since(t0);
  const double err = g.report.max_relative_error;
  return {err < 1e-4 && secs < 30.0 && g.batches > 0,
          fmt::format("max relative error {:.3e} (< 1e-4) over {} batches x {} scalars, {:.1f} s (< 30 s)", err,
                      g.batches, g.scalars_per_batch, secs)};
}

Outcome loss_identities() {
  double worst_ln = 0, worst_shift = 0, worst_sum = 0;
  for (std::size_t n : {2u, 4u, 10u}) {
    std::vector<double> z(n, 0.0);
    worst_ln = std::max(worst_ln, std::abs(lce_loss(z, 0).loss - std::log(double(n))));
  }
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-30, 30);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> s(2 + rng() % 20);
    for (auto& v : s) v = u(rng);
    const std::size_t pos = rng() % s.size();
    const auto a = lce_loss(s, pos);
    const double c = u(rng) * 10;
    for (auto& v : s) v += c;
    worst_shift = std::max(worst_shift, std::abs(a.loss - lce_loss(s, pos).loss));
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(a.grad.begin(), a.grad.end(), 0.0)));
  }
  return {worst_ln <= 1e-12 && worst_shift <= 1e-9 && worst_sum < 1e-12,
          fmt::format("|L(0^n) - ln n| max {:.1e} (<= 1e-12); shift max {:.1e} (<= 1e-9); |sum grad| max {:.1e} "
                      "(< 1e-12)",
                      worst_ln, worst_shift, worst_sum)};
}

Outcome bag_partition() {
  std::mt19937_64 rng(2);
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng() % 500;
    const std::size_t m = 1 + rng() % n;
    const auto l = numbered_list(n);
    const auto p = build_bags(l, m);
    std::vector<Candidate> joined;
    bool sizes = p.bags.size() == m;
    for (std::size_t j = 0; j < p.bags.size(); ++j) {
      sizes = sizes && p.bags[j].entries.size() == n / m + (j < n % m ? 1 : 0);
      joined.insert(joined.end(), p.bags[j].entries.begin(), p.bags[j].entries.end());
    }
    if (!sizes || joined != l.entries) ++bad;
  }
  const auto decades = build_bags(numbered_list(100), 10);
  bool decades_ok = decades.bags.size() == 10;
  for (std::size_t j = 0; decades_ok && j < 10; ++j) {
    const auto& e = decades.bags[j].entries;
    decades_ok = e.size() == 10 && e.front().rank == 10 * j + 1 && e.back().rank == 10 * j + 10;
  }
  return {bad == 0 && decades_ok,
          fmt::format("{} of 1000 random (N, M) partitions wrong; N=100, M=10 rank decades {}", bad,
                      decades_ok ? "exact" : "WRONG")};
}

Outcome sampling_statistics() {
  const Bag bag = build_bags(numbered_list(10), 1).bags[0];
  Rng rng(4);
  std::map<std::string, int> count;
  for (int i = 0; i < 10000; ++i)
    for (const auto& m : sample_group(bag, 4, rng).members) ++count[m];
  double worst = 0;
  for (const auto& e : bag.entries) worst = std::max(worst, std::abs(count[e.doc_id] / 10000.0 - 0.4));

  // Positive placement over every training query of the default corpus and
  // over synthetic lists with the positive at every rank.
  std::size_t batches = 0, first = 0;
  auto tally = [&](const std::optional<TrainingBatch>& b, const Qrels& qrels) {
    if (!b) return;
    ++batches;
    std::size_t positive_groups = 0;
    bool ok = true;
    for (const auto& g : b->groups) {
      if (!g.positive_index) continue;
      ++positive_groups;
      ok = ok && *g.positive_index == 0 && qrels.at(b->query_id).contains(g.members[0]);
    }
    first += ok && positive_groups == 1;
  };
  const auto corpus = generate_synthetic(SynthConfig{}, 7);
  const auto index = InvertedIndex::build(corpus.documents);
  const auto lists = retrieve_all(index, corpus.queries, 100);
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (const auto& l : lists) {
      tally(build_batch(l, corpus.qrels, 10, 4, seed), corpus.qrels);
      tally(build_batch_random(l, corpus.qrels, 4, seed), corpus.qrels);
    }
  const auto l = numbered_list(100);
  for (std::size_t r = 0; r < 100; ++r) {
    const Qrels q{{"q", {{l.entries[r].doc_id, 1}}}};
    tally(build_batch(l, q, 10, 4, r), q);
  }
  return {worst <= 0.02 && batches > 0 && first == batches,
          fmt::format("inclusion frequency max |f - 0.4| = {:.4f} (<= 0.02); positive at index 0 in {}/{} batches",
                      worst, first, batches)};
}

Outcome metric_oracle() {
  std::mt19937_64 rng(5);
  std::size_t mismatches = 0;
  for (int c = 0; c < 10000; ++c) {
    RunFile run{"t", {}};
    Qrels qrels;
    const std::size_t nq = 1 + rng() % 50;
    for (std::size_t q = 0; q < nq; ++q) {
      const std::string qid = "q" + std::to_string(q);
      const std::size_t nd = rng() % 101;
      std::vector<std::pair<std::string, double>> scored;
      for (std::size_t d = 0; d < nd; ++d)
        scored.emplace_back("d" + std::to_string(d), double(rng() % 50) / 8.0);
      if (rng() % 6) run.queries.push_back(rank_scored(qid, scored));
      if (rng() % 5) {
        auto& j = qrels[qid];
        const std::size_t rel = 1 + rng() % 3;
        for (std::size_t i = 0; i < rel; ++i) j["d" + std::to_string(rng() % 120)] = 1 + int(rng() % 2);
      }
    }
    if (rng() % 10 == 0) qrels["absent"]["d0"] = 1;
    const std::size_t k = 1 + rng() % 100;
    if (mrr_at_k(run, qrels, k).mrr_at_k != oracle::mrr_scan(run, qrels, k)) ++mismatches;
  }
  return {mismatches == 0, fmt::format("{} mismatches over 10000 fuzzed runs (exact equality)", mismatches)};
}

Outcome retrieval_oracle() {
  DocumentStore one;
  one.add(testutil::doc("D1", "a b a"));
  const auto one_index = InvertedIndex::build(one);
  const double hand = std::log(1.0 + 0.5 / 1.5) * 3.8 / 2.9;
  const double got = bm25_score(one_index, one_index.encode_query("a"), "D1");
  const double hand_err = std::abs(got - hand);

  std::mt19937_64 rng(6);
  std::size_t lists = 0, bad = 0;
  for (std::size_t n : {1u, 7u, 50u, 200u, 600u, 1000u}) {
    for (int rep = 0; rep < 2; ++rep) {
      DocumentStore store;
      const std::size_t vocab = 4 + rng() % 60;
      for (std::size_t i = 0; i < n; ++i) {
        std::string body;
        for (std::size_t t = 0, len = 1 + rng() % 40; t < len; ++t) body += fmt::format("w{} ", rng() % vocab);
        store.add(testutil::doc(fmt::format("doc{:06}", (i * 7919) % 1000003), body));
      }
      const auto index = InvertedIndex::build(store);
      for (int q = 0; q < 4; ++q) {
        const std::string text = fmt::format("w{} w{} zz", rng() % (vocab + 3), rng() % (vocab + 3));
        const std::size_t k = 1 + rng() % 150;
        const auto got_list = retrieve(index, Query{"q", text}, k);
        const auto want = oracle::bm25_scan(store, text, k);
        bool same = got_list.entries.size() == want.size();
        for (std::size_t i = 0; same && i < want.size(); ++i)
          same = got_list.entries[i].doc_id == want[i].doc_id && got_list.entries[i].rank == i + 1;
        ++lists;
        bad += !same;
      }
    }
  }
  return {bad == 0 && hand_err <= 1e-9,
          fmt::format("{} of {} rankings differ from the full scan (exact order); hand score {:.9f} vs {:.9f}, "
                      "error {:.1e} (<= 1e-9)",
                      bad, lists, got, hand, hand_err)};
}

// Shared by the experiment and determinism checks.
struct ExperimentRuns {
  ExperimentResult result;
  double seconds = 0;
  fs::path dir;
};

Outcome noise_robustness(const ExperimentRuns& e) {
  const auto& r = e.result;
  const double bag = r.mean_dev_mrr(SamplerKind::kBag);
  const double rnd = r.mean_dev_mrr(SamplerKind::kRandom);
  std::size_t bag_n = 0, rnd_n = 0;
  double bag_rank = 0, rnd_rank = 0;
  for (const auto& row : r.rows) {
    if (row.sampler == SamplerKind::kBag) {
      bag_n += row.lambda_group == 1.0;
      bag_rank += row.mean_positive_rank;
    } else {
      rnd_n += row.lambda_group == 0.0;
      rnd_rank += row.mean_positive_rank;
    }
  }
  bag_rank /= double(std::max<std::size_t>(bag_n, 1));
  rnd_rank /= double(std::max<std::size_t>(rnd_n, 1));
  const bool setup = bag_n == 5 && rnd_n == 5 && r.min_candidates >= 20;
  const bool ok = setup && bag >= rnd && bag > r.bm25_dev_mrr && rnd > r.bm25_dev_mrr &&
                  bag_rank < r.bm25_mean_positive_rank && e.seconds < 15 * 60;
  return {ok, fmt::format("dev MRR@100 bag+group {:.4f} vs random {:.4f} (gap {:+.4f}), BM25 {:.4f}; mean labeled "
                          "rank bag {:.2f} / random {:.2f} / BM25 {:.2f}; {} + {} seeds, min candidates {}; {:.0f} s "
                          "(< 900 s)",
                          bag, rnd, bag - rnd, r.bm25_dev_mrr, bag_rank, rnd_rank, r.bm25_mean_positive_rank, bag_n,
                          rnd_n, r.min_candidates, e.seconds)};
}

Outcome determinism(const ExperimentRuns& e) {
  // Second run through the command-line entry point with the same defaults.
  const fs::path other = e.dir.parent_path() / "second";
  std::ostringstream out, err;
  const int code = run_cli({"experiment", "--out-dir", other.string()}, out, err);
  if (code != 0) return {false, "experiment subcommand exited with " + std::to_string(code) + ": " + err.str()};
  std::size_t files = 0, differ = 0;
  for (const auto& entry : fs::directory_iterator(e.dir)) {
    ++files;
    const fs::path twin = other / entry.path().filename();
    if (!fs::exists(twin) || testutil::read_file(entry.path()) != testutil::read_file(twin)) ++differ;
  }
  std::size_t other_files = 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(other)) ++other_files;
  return {differ == 0 && files == other_files && files > 0,
          fmt::format("{} of {} run/CSV files differ between two runs with identical seeds", differ + (files != other_files),
                      files)};
}

Outcome passage_contract() {
  std::mt19937_64 rng(9);
  std::size_t bad = 0;
  std::map<std::string, std::size_t> cases;
  std::string first_bad;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t w = 1 + rng() % 600;
    std::size_t len;
    switch (i % 4) {
      case 0: len = 1 + rng() % w; break;                 // fits in one window
      case 1: len = w + 1 + rng() % w; break;             // empty interior
      case 2: len = 2 * w + 1 + rng() % std::max<std::size_t>(w - 1, 1); break;  // short interior
      default: len = 3 * w + rng() % (4 * w + 1); break;  // sampled middles
    }
    std::vector<TermId> doc(len);
    for (auto& t : doc) t = static_cast<TermId>(rng() % 5000);
    const auto ps = split_passages(doc, w, rng(), fmt::format("doc{}", i));
    const std::string v = oracle::passage_violation(doc, w, ps);
    const char* kind = len <= w ? "whole" : len <= 2 * w ? "empty-interior" : len - 2 * w < w ? "short-interior"
                                                                                               : "sampled";
    ++cases[kind];
    if (!v.empty()) {
      ++bad;
      if (first_bad.empty()) first_bad = fmt::format(" first: L={} W={}: {}", len, w, v);
    }
  }
  std::string mix;
  for (const auto& [k, n] : cases) mix += fmt::format(" {}={}", k, n);
  return {bad == 0 && cases.size() == 4,
          fmt::format("{} of 1000 random documents violate the passage rules; cases:{}{}", bad, mix, first_bad)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  testutil::TempDir work;

  report(1, "gradient correctness", gradient);
  report(2, "loss identities", loss_identities);
  report(3, "bag partition", bag_partition);
  report(4, "sampling statistics", sampling_statistics);
  report(5, "metric oracle", metric_oracle);
  report(6, "retrieval oracle", retrieval_oracle);

  ExperimentRuns runs;
  runs.dir = work / "first";
  try {
    ExperimentConfig cfg;
    const auto t0 = Clock::now();
    runs.result = run_experiment(cfg);
    runs.seconds = seconds_since(t0);
    write_experiment(runs.result, runs.dir);
    std::cout << format_experiment_csv(runs.result) << format_experiment_summary(runs.result);
  } catch (const std::exception& e) {
    std::cout << "experiment failed: " << e.what() << '\n';
  }
  report(7, "noise-robustness experiment", [&] { return noise_robustness(runs); });
  report(8, "determinism", [&] { return determinism(runs); });
  report(9, "passage contract", passage_contract);

  std::cout << (failures == 0 ? "all criteria passed" : fmt::format("{} criteria failed", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
