#include "noiserank/experiment.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "noiserank/error.hpp"
#include "noiserank/parallel.hpp"
#include "noiserank/retrieval.hpp"
#include "noiserank/sampling.hpp"

namespace noiserank {

ExperimentConfig::ExperimentConfig() {
  synth.max_passage_len = 64;
  train.model.max_passage_len = 64;
}

double ExperimentResult::mean_dev_mrr(SamplerKind sampler) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (r.sampler == sampler) {
      sum += r.dev_mrr;
      ++n;
    }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double mean_positive_rank(const RunFile& run, const Qrels& qrels) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& q : run.queries) {
    auto it = qrels.find(q.query_id);
    if (it == qrels.end()) continue;
    std::size_t rank = q.entries.size() + 1;
    for (const auto& e : q.entries)
      if (it->second.contains(e.doc_id)) {
        rank = e.rank;
        break;
      }
    total += static_cast<double>(rank);
    ++n;
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.num_seeds < 1) throw ValidationError("experiment needs at least one seed");
  if (cfg.synth.max_passage_len != cfg.train.model.max_passage_len)
    spdlog::warn("corpus generated for passage length {} but the model uses {}", cfg.synth.max_passage_len,
                 cfg.train.model.max_passage_len);
  cfg.train.validate();

  const SyntheticCorpus corpus = generate_synthetic(cfg.synth, cfg.corpus_seed);
  const QuerySplit split = split_queries(corpus.queries, cfg.dev_fraction);
  const Qrels train_qrels = filter_qrels(corpus.qrels, split.train);
  const Qrels dev_qrels = filter_qrels(corpus.qrels, split.dev);
  const InvertedIndex index = InvertedIndex::build(corpus.documents);
  const std::size_t k = cfg.train.top_k;

  const QuerySet* query_sets[] = {&split.train, &split.dev};
  const ModelInputs inputs(index, corpus.documents, query_sets, cfg.train.model.max_passage_len);

  TrainingData data;
  data.inputs = &inputs;
  data.train_candidates = retrieve_all(index, split.train, k, cfg.threads);
  data.dev_candidates = retrieve_all(index, split.dev, k, cfg.threads);
  data.train_qrels = train_qrels;
  data.dev_qrels = dev_qrels;

  ExperimentResult result;
  result.bm25_run = run_from_candidates(data.dev_candidates, "bm25");
  result.bm25_dev_mrr = mrr_at_k(result.bm25_run, dev_qrels, k).mrr_at_k;
  result.bm25_mean_positive_rank = mean_positive_rank(result.bm25_run, dev_qrels);
  {
    std::vector<CandidateList> all = data.train_candidates;
    all.insert(all.end(), data.dev_candidates.begin(), data.dev_candidates.end());
    result.positive_recall = recall_at_k(all, corpus.qrels, k);
    result.min_candidates = k;
    for (const auto& l : all) result.min_candidates = std::min(result.min_candidates, l.entries.size());
  }
  spdlog::info("BM25 dev MRR@{} {:.4f}; labeled positive in top {} for {:.1f}% of queries", k, result.bm25_dev_mrr,
               k, 100.0 * result.positive_recall);

  struct Arm {
    SamplerKind sampler;
    double lambda;
    std::uint64_t seed;
  };
  std::vector<Arm> arms;
  for (std::size_t i = 0; i < cfg.num_seeds; ++i) arms.push_back({SamplerKind::kBag, cfg.bag_lambda, cfg.first_seed + i});
  for (std::size_t i = 0; i < cfg.num_seeds; ++i) arms.push_back({SamplerKind::kRandom, 0.0, cfg.first_seed + i});

  result.rows.resize(arms.size());
  parallel_for(arms.size(), cfg.threads, [&](std::size_t i) {
    TrainConfig tc = cfg.train;
    tc.sampler = arms[i].sampler;
    tc.lambda_group = arms[i].lambda;
    tc.seed = arms[i].seed;
    tc.threads = 1;
    TrainResult tr = train(data, tc);
    ExperimentRow row;
    row.sampler = tc.sampler;
    row.lambda_group = tc.lambda_group;
    row.seed = tc.seed;
    row.best_epoch = tr.best_epoch;
    row.skipped_queries = tr.history.empty() ? 0 : tr.history.back().skipped_queries;
    row.run = rerank(tr.best, data.dev_candidates, inputs, passage_seed_for_epoch(tc.seed, 0),
                     fmt::format("{}-s{}", to_string(tc.sampler), tc.seed));
    row.dev_mrr = mrr_at_k(row.run, dev_qrels, k).mrr_at_k;
    row.mean_positive_rank = mean_positive_rank(row.run, dev_qrels);
    row.history = std::move(tr.history);
    spdlog::info("{} sampler, lambda {}, seed {}: dev MRR@{} {:.4f} (best epoch {})", to_string(tc.sampler),
                 tc.lambda_group, tc.seed, k, row.dev_mrr, row.best_epoch);
    result.rows[i] = std::move(row);
  });
  return result;
}

std::string format_experiment_csv(const ExperimentResult& result) {
  std::string out = "sampler,lambda_group,seed,dev_mrr,best_epoch,skipped_queries,mean_positive_rank\n";
  for (const auto& r : result.rows)
    out += fmt::format("{},{},{},{:.6f},{},{},{:.4f}\n", to_string(r.sampler), r.lambda_group, r.seed, r.dev_mrr,
                       r.best_epoch, r.skipped_queries, r.mean_positive_rank);
  return out;
}

std::string format_experiment_summary(const ExperimentResult& result) {
  auto arm_rank = [&](SamplerKind s) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : result.rows)
      if (r.sampler == s) {
        sum += r.mean_positive_rank;
        ++n;
      }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
  };
  std::string out;
  out += fmt::format("{:<28} {:>10} {:>16}\n", "system", "dev MRR", "mean pos. rank");
  out += fmt::format("{:<28} {:>10.4f} {:>16.2f}\n", "BM25 first stage", result.bm25_dev_mrr,
                     result.bm25_mean_positive_rank);
  out += fmt::format("{:<28} {:>10.4f} {:>16.2f}\n", "bag sampler + group loss", result.mean_dev_mrr(SamplerKind::kBag),
                     arm_rank(SamplerKind::kBag));
  out += fmt::format("{:<28} {:>10.4f} {:>16.2f}\n", "random sampler, LCE only",
                     result.mean_dev_mrr(SamplerKind::kRandom), arm_rank(SamplerKind::kRandom));
  out += fmt::format("labeled positive recall in candidates: {:.4f}; shortest candidate list: {}\n",
                     result.positive_recall, result.min_candidates);
  return out;
}

void write_experiment(const ExperimentResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
  };
  write(dir / "results.csv", format_experiment_csv(result));
  write(dir / "summary.txt", format_experiment_summary(result));
  write_run(result.bm25_run, dir / "bm25.run");
  for (const auto& r : result.rows) {
    const std::string stem = fmt::format("{}-seed{}", to_string(r.sampler), r.seed);
    write_run(r.run, dir / (stem + ".run"));
    write(dir / (stem + ".history.csv"), format_history_csv(r.history));
  }
}

GradCheckResult run_grad_check(std::uint64_t seed, double epsilon, const ModelConfig& model) {
  SynthConfig toy;
  toy.num_queries = 2;
  toy.num_topics = 1;
  toy.docs_per_query_topic = 10;
  toy.vocab_size = 130;
  toy.topic_terms = 8;
  toy.evidence_terms = 4;
  toy.query_terms = 2;
  toy.min_doc_tokens = 20;
  toy.max_doc_tokens = 60;
  toy.max_passage_len = 8;
  toy.decoys_per_query = 2;
  toy.stuffed_per_query = 2;
  const SyntheticCorpus corpus = generate_synthetic(toy, seed);
  const InvertedIndex index = InvertedIndex::build(corpus.documents);
  const QuerySet* sets[] = {&corpus.queries};
  const ModelInputs inputs(index, corpus.documents, sets, toy.max_passage_len);

  ModelConfig mc = model;
  mc.max_group_size = std::max<std::size_t>(mc.filter_width, 3);
  const ScorerParams params = init_params(mc, inputs.vocab_size(), seed);
  const std::uint64_t passage_seed = passage_seed_for_epoch(seed, 0);

  GradCheckResult out;
  out.scalars_per_batch = params.num_scalars();
  for (const auto& q : corpus.queries.queries()) {
    const CandidateList list = retrieve(index, q, 20);
    auto batch = build_batch(list, corpus.qrels, 4, mc.max_group_size, mix_seed(seed, stable_hash(q.query_id)));
    if (!batch) continue;
    auto report = finite_difference_check(params, *batch, inputs, passage_seed, 1.0, epsilon);
    if (out.batches == 0 || report.max_relative_error > out.report.max_relative_error) out.report = report;
    ++out.batches;
  }
  if (out.batches == 0) throw std::runtime_error("toy corpus produced no trainable batch");
  return out;
}

}  // namespace noiserank
