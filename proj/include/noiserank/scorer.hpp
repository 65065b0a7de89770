#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "noiserank/corpus.hpp"
#include "noiserank/passage.hpp"
#include "noiserank/retrieval.hpp"

namespace noiserank {

// Model token ids: two reserved ids, then index term id + 2.
inline constexpr TermId kSepToken = 0;
inline constexpr TermId kUnkToken = 1;
inline constexpr std::size_t kReservedTokens = 2;

struct ModelConfig {
  std::size_t emb_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t num_filters = 32;
  std::size_t filter_width = 2;
  // Smallest group the group encoder will see; filter_width may not exceed it.
  std::size_t max_group_size = 4;
  std::size_t max_passage_len = 512;
};

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t emb_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_filters = 0;
  std::size_t filter_width = 0;

  bool operator==(const ModelDims&) const = default;
};

struct TensorView {
  std::string_view name;
  std::span<double> values;
};

struct ConstTensorView {
  std::string_view name;
  std::span<const double> values;
};

inline constexpr std::size_t kNumTensors = 7;

// Trainable weights. Row-major layouts:
//   embedding        vocab_size x emb_dim
//   ffn_weight       emb_dim x hidden_dim
//   ffn_bias         hidden_dim
//   projection       hidden_dim               (pair score readout)
//   conv_filters     num_filters x hidden_dim x filter_width
//   conv_bias        num_filters
//   group_projection num_filters              (group score readout)
struct ScorerParams {
  ModelDims dims;
  std::vector<double> embedding;
  std::vector<double> ffn_weight;
  std::vector<double> ffn_bias;
  std::vector<double> projection;
  std::vector<double> conv_filters;
  std::vector<double> conv_bias;
  std::vector<double> group_projection;

  static ScorerParams zeros(const ModelDims& dims);

  std::array<TensorView, kNumTensors> tensors();
  std::array<ConstTensorView, kNumTensors> tensors() const;
  std::size_t num_scalars() const;

  // Throws ValidationError on mismatched sizes, NumericError on non-finite values.
  void validate() const;

  bool operator==(const ScorerParams&) const = default;
};

// Same shapes as the parameters.
using GradientSet = ScorerParams;

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
// fan_in: 1 for the embedding table (a lookup), emb_dim for ffn_weight,
// hidden_dim for projection, hidden_dim * filter_width for conv_filters,
// num_filters for group_projection.
ScorerParams init_params(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed);

using Representation = std::vector<double>;
using GroupFeature = std::vector<double>;

// r = tanh(ffn_weight^T * mean(embeddings of query ++ SEP ++ passage) + ffn_bias).
// Throws ValidationError if both sequences are empty.
Representation encode_pair(const ScorerParams& params, std::span<const TermId> query_tokens,
                           std::span<const TermId> passage_tokens);

// Forward pass with the intermediates needed for backpropagation.
struct PairActivation {
  std::vector<double> pooled;  // mean embedding, emb_dim
  Representation repr;         // hidden_dim
  std::size_t length = 0;      // tokens pooled, including SEP
};
PairActivation encode_pair_activation(const ScorerParams& params, std::span<const TermId> query_tokens,
                                      std::span<const TermId> passage_tokens);

double score_from_repr(const ScorerParams& params, std::span<const double> repr);

struct DocumentScore {
  double doc_score = 0.0;
  std::array<double, kPassagesPerDocument> passage_scores{};
  std::size_t argmax_passage = 0;
  // Representation of the argmax passage; this is what the group encoder sees.
  Representation representation;
};

// Max over the four passage scores; ties go to the earlier passage.
DocumentScore score_document(const ScorerParams& params, std::span<const TermId> query_tokens, const PassageSet& pset);

// Stacks the member representations as columns, convolves each filter over
// the member axis (stride 1, no padding) and max-pools every filter over the
// s - filter_width + 1 positions. Throws ValidationError if s < filter_width.
GroupFeature group_encode(const ScorerParams& params, std::span<const Representation> reps);

struct GroupActivation {
  GroupFeature feature;
  std::vector<std::size_t> argmax_position;  // per filter, first maximal window start
};
GroupActivation group_encode_activation(const ScorerParams& params, std::span<const Representation> reps);

double group_score(const ScorerParams& params, std::span<const double> feature);

void save_params(const ScorerParams& params, const std::filesystem::path& path);
ScorerParams load_params(const std::filesystem::path& path);

// Token sequences in model ids for every document and query the model will
// see. Built once and shared read-only.
class ModelInputs {
 public:
  ModelInputs(const InvertedIndex& index, const DocumentStore& docs, std::span<const QuerySet* const> queries,
              std::size_t max_passage_len);

  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t max_passage_len() const { return max_passage_len_; }
  // Throws ValidationError when the id is unknown.
  const TokenSequence& document(std::string_view doc_id) const;
  const TokenSequence& query(std::string_view query_id) const;

  PassageSet passages(std::string_view doc_id, std::uint64_t seed) const;

 private:
  std::size_t vocab_size_;
  std::size_t max_passage_len_;
  std::unordered_map<std::string, TokenSequence> docs_;
  std::unordered_map<std::string, TokenSequence> queries_;
};

// Model vocabulary size for an index.
inline std::size_t model_vocab_size(const InvertedIndex& index) { return index.vocabulary().size() + kReservedTokens; }

// Query text in model ids; terms unknown to the index become UNK.
TokenSequence model_query_tokens(const InvertedIndex& index, std::string_view text);

}  // namespace noiserank
