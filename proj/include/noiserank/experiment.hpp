#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "noiserank/corpus.hpp"
#include "noiserank/eval.hpp"
#include "noiserank/loss.hpp"
#include "noiserank/trainer.hpp"

namespace noiserank {

// Settings for the sampler comparison on a synthetic noisy-label corpus.
struct ExperimentConfig {
  SynthConfig synth;
  std::uint64_t corpus_seed = 7;
  double dev_fraction = 0.25;
  std::size_t num_seeds = 5;
  std::uint64_t first_seed = 1;
  // Shared training settings. Sampler and lambda_group are set per arm.
  TrainConfig train;
  double bag_lambda = 1.0;
  // Runs train in parallel across (arm, seed) pairs.
  std::size_t threads = 1;

  ExperimentConfig();
};

struct ExperimentRow {
  SamplerKind sampler = SamplerKind::kBag;
  double lambda_group = 0.0;
  std::uint64_t seed = 0;
  double dev_mrr = 0.0;
  std::size_t best_epoch = 0;
  std::size_t skipped_queries = 0;
  // Mean rank of the labeled positive among the reranked dev candidates.
  double mean_positive_rank = 0.0;
  RunFile run;
  std::vector<EpochRecord> history;
};

struct ExperimentResult {
  double bm25_dev_mrr = 0.0;
  double bm25_mean_positive_rank = 0.0;
  // Share of all queries whose labeled positive is retrieved in the top_k.
  double positive_recall = 0.0;
  std::size_t min_candidates = 0;
  RunFile bm25_run;
  std::vector<ExperimentRow> rows;  // bag arm seeds first, then random arm

  double mean_dev_mrr(SamplerKind sampler) const;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// sampler,lambda_group,seed,dev_mrr,best_epoch,skipped_queries,mean_positive_rank
std::string format_experiment_csv(const ExperimentResult& result);
std::string format_experiment_summary(const ExperimentResult& result);

// Writes results.csv, summary.txt, bm25.run and one run file plus one history
// CSV per (sampler, seed) into dir.
void write_experiment(const ExperimentResult& result, const std::filesystem::path& dir);

// Mean 1-based rank of the labeled positive in each judged query's list
// (queries whose positive is absent count as list length + 1).
double mean_positive_rank(const RunFile& run, const Qrels& qrels);

// Gradient verification on a two-query toy corpus with the given model dims.
struct GradCheckResult {
  FiniteDifferenceReport report;  // worst over all checked batches
  std::size_t batches = 0;
  std::size_t scalars_per_batch = 0;
};

GradCheckResult run_grad_check(std::uint64_t seed, double epsilon, const ModelConfig& model = {});

}  // namespace noiserank
