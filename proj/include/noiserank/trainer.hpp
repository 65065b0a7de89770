#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "noiserank/corpus.hpp"
#include "noiserank/loss.hpp"
#include "noiserank/retrieval.hpp"
#include "noiserank/scorer.hpp"

namespace noiserank {

enum class SamplerKind { kBag, kRandom };

std::string to_string(SamplerKind kind);
SamplerKind parse_sampler(std::string_view name);

struct TrainConfig {
  std::size_t epochs = 20;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double lambda_group = 1.0;
  std::size_t m_bags = 10;
  std::size_t group_size = 4;
  std::size_t top_k = 100;
  SamplerKind sampler = SamplerKind::kBag;
  std::uint64_t seed = 1;
  // Steps between periodic checkpoints; 0 disables them.
  std::size_t checkpoint_every = 0;
  ModelConfig model;
  // Workers for dev evaluation. Training steps are always sequential.
  std::size_t threads = 1;

  // Throws ValidationError on out-of-range values.
  void validate() const;
};

// Flat key=value text. Keys are the TrainConfig field names, with the model
// fields (emb_dim, hidden_dim, num_filters, filter_width, max_passage_len)
// at top level; M, s and N are accepted for m_bags, group_size and top_k.
// Blank lines and lines starting with '#' are ignored.
// Unknown keys and unparsable values throw ValidationError.
void apply_config_text(TrainConfig& cfg, std::string_view text, std::string_view source = "config");
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
std::string format_train_config(const TrainConfig& cfg);

struct AdamState {
  GradientSet first_moment;
  GradientSet second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ScorerParams& params);
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update of every tensor. Throws NumericError on a
// non-finite gradient and ValidationError on mismatched shapes.
void adam_step(ScorerParams& params, const GradientSet& grads, AdamState& state, const AdamConfig& cfg);

struct TrainingData {
  const ModelInputs* inputs = nullptr;
  std::vector<CandidateList> train_candidates;
  Qrels train_qrels;
  std::vector<CandidateList> dev_candidates;
  Qrels dev_qrels;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_total = 0.0;
  double mean_lce_individual = 0.0;
  double mean_lce_group = 0.0;
  double dev_mrr = 0.0;
  std::size_t skipped_queries = 0;
};

struct TrainResult {
  ScorerParams best;
  std::size_t best_epoch = 0;
  double best_dev_mrr = 0.0;
  std::vector<EpochRecord> history;
};

struct TrainHooks {
  // Called every checkpoint_every steps with the current parameters.
  std::function<void(const ScorerParams&, std::size_t step)> on_checkpoint;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Passage offsets used for training epoch `epoch` (0-based); epoch 0 is also
// the frozen inference draw.
std::uint64_t passage_seed_for_epoch(std::uint64_t seed, std::size_t epoch);

// Per epoch: shuffle the training queries, build one batch per eligible
// query with the configured sampler, take one Adam step per batch, then
// evaluate dev MRR@top_k with inference passages. Returns the parameters of
// the best dev epoch (earliest on ties). Throws ValidationError when no
// training query has a labeled positive in its top_k.
TrainResult train(const TrainingData& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

// Header plus one row per epoch.
std::string format_history_csv(std::span<const EpochRecord> history);

}  // namespace noiserank
