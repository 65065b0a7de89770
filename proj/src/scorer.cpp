#include "noiserank/scorer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "noiserank/error.hpp"
#include "noiserank/rng.hpp"
#include "noiserank/tokenizer.hpp"

namespace noiserank {

ScorerParams ScorerParams::zeros(const ModelDims& d) {
  ScorerParams p;
  p.dims = d;
  p.embedding.assign(d.vocab_size * d.emb_dim, 0.0);
  p.ffn_weight.assign(d.emb_dim * d.hidden_dim, 0.0);
  p.ffn_bias.assign(d.hidden_dim, 0.0);
  p.projection.assign(d.hidden_dim, 0.0);
  p.conv_filters.assign(d.num_filters * d.hidden_dim * d.filter_width, 0.0);
  p.conv_bias.assign(d.num_filters, 0.0);
  p.group_projection.assign(d.num_filters, 0.0);
  return p;
}

std::array<TensorView, kNumTensors> ScorerParams::tensors() {
  return {{{"embedding", embedding},
           {"ffn_weight", ffn_weight},
           {"ffn_bias", ffn_bias},
           {"projection", projection},
           {"conv_filters", conv_filters},
           {"conv_bias", conv_bias},
           {"group_projection", group_projection}}};
}

std::array<ConstTensorView, kNumTensors> ScorerParams::tensors() const {
  return {{{"embedding", embedding},
           {"ffn_weight", ffn_weight},
           {"ffn_bias", ffn_bias},
           {"projection", projection},
           {"conv_filters", conv_filters},
           {"conv_bias", conv_bias},
           {"group_projection", group_projection}}};
}

std::size_t ScorerParams::num_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.values.size();
  return n;
}

void ScorerParams::validate() const {
  const ScorerParams shape = zeros(dims);
  auto expected = shape.tensors();
  auto actual = tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    if (actual[i].values.size() != expected[i].values.size())
      throw ValidationError(fmt::format("tensor {} has {} values, expected {}", actual[i].name,
                                        actual[i].values.size(), expected[i].values.size()));
    for (double v : actual[i].values)
      if (!std::isfinite(v)) throw NumericError(fmt::format("tensor {} has a non-finite value", actual[i].name));
  }
}

ScorerParams init_params(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed) {
  if (cfg.emb_dim < 1 || cfg.hidden_dim < 1 || cfg.num_filters < 1 || cfg.filter_width < 1)
    throw ValidationError("emb_dim, hidden_dim, num_filters and filter_width must be >= 1");
  if (cfg.filter_width > cfg.max_group_size)
    throw ValidationError(fmt::format("filter_width {} exceeds the group size {}", cfg.filter_width, cfg.max_group_size));
  if (vocab_size <= kReservedTokens) throw ValidationError("vocabulary has no terms");

  ScorerParams p = ScorerParams::zeros(
      ModelDims{vocab_size, cfg.emb_dim, cfg.hidden_dim, cfg.num_filters, cfg.filter_width});
  auto fill = [&](std::vector<double>& t, std::size_t tensor_index, double fan_in) {
    Rng rng(mix_seed(seed, tensor_index));
    const double bound = 1.0 / std::sqrt(fan_in);
    for (auto& v : t) v = (2.0 * uniform_real(rng) - 1.0) * bound;
  };
  fill(p.embedding, 0, 1.0);
  fill(p.ffn_weight, 1, static_cast<double>(cfg.emb_dim));
  fill(p.projection, 3, static_cast<double>(cfg.hidden_dim));
  fill(p.conv_filters, 4, static_cast<double>(cfg.hidden_dim * cfg.filter_width));
  fill(p.group_projection, 6, static_cast<double>(cfg.num_filters));
  return p;
}

PairActivation encode_pair_activation(const ScorerParams& params, std::span<const TermId> query_tokens,
                                      std::span<const TermId> passage_tokens) {
  if (query_tokens.empty() && passage_tokens.empty())
    throw ValidationError("encode_pair needs a non-empty query or passage");
  const auto& d = params.dims;
  PairActivation act;
  act.pooled.assign(d.emb_dim, 0.0);
  auto add = [&](TermId tok) {
    if (tok >= d.vocab_size) tok = kUnkToken;
    const double* row = params.embedding.data() + static_cast<std::size_t>(tok) * d.emb_dim;
    for (std::size_t i = 0; i < d.emb_dim; ++i) act.pooled[i] += row[i];
  };
  for (TermId t : query_tokens) add(t);
  add(kSepToken);
  for (TermId t : passage_tokens) add(t);
  act.length = query_tokens.size() + 1 + passage_tokens.size();
  const double inv = 1.0 / static_cast<double>(act.length);
  for (auto& v : act.pooled) v *= inv;

  act.repr.assign(params.ffn_bias.begin(), params.ffn_bias.end());
  for (std::size_t i = 0; i < d.emb_dim; ++i) {
    const double x = act.pooled[i];
    const double* w = params.ffn_weight.data() + i * d.hidden_dim;
    for (std::size_t j = 0; j < d.hidden_dim; ++j) act.repr[j] += w[j] * x;
  }
  for (auto& v : act.repr) v = std::tanh(v);
  return act;
}

Representation encode_pair(const ScorerParams& params, std::span<const TermId> query_tokens,
                           std::span<const TermId> passage_tokens) {
  return encode_pair_activation(params, query_tokens, passage_tokens).repr;
}

double score_from_repr(const ScorerParams& params, std::span<const double> repr) {
  double s = 0.0;
  for (std::size_t j = 0; j < repr.size(); ++j) s += params.projection[j] * repr[j];
  return s;
}

DocumentScore score_document(const ScorerParams& params, std::span<const TermId> query_tokens, const PassageSet& pset) {
  DocumentScore out;
  for (std::size_t k = 0; k < kPassagesPerDocument; ++k) {
    Representation r = encode_pair(params, query_tokens, pset.passages[k]);
    out.passage_scores[k] = score_from_repr(params, r);
    if (k == 0 || out.passage_scores[k] > out.passage_scores[out.argmax_passage]) {
      out.argmax_passage = k;
      out.representation = std::move(r);
    }
  }
  out.doc_score = out.passage_scores[out.argmax_passage];
  return out;
}

GroupActivation group_encode_activation(const ScorerParams& params, std::span<const Representation> reps) {
  const auto& d = params.dims;
  const std::size_t s = reps.size();
  if (s < d.filter_width)
    throw ValidationError(fmt::format("group of {} members is smaller than filter_width {}", s, d.filter_width));
  const std::size_t positions = s - d.filter_width + 1;
  GroupActivation act;
  act.feature.assign(d.num_filters, 0.0);
  act.argmax_position.assign(d.num_filters, 0);
  for (std::size_t f = 0; f < d.num_filters; ++f) {
    const double* filter = params.conv_filters.data() + f * d.hidden_dim * d.filter_width;
    for (std::size_t p = 0; p < positions; ++p) {
      double out = params.conv_bias[f];
      for (std::size_t h = 0; h < d.hidden_dim; ++h)
        for (std::size_t w = 0; w < d.filter_width; ++w) out += filter[h * d.filter_width + w] * reps[p + w][h];
      if (p == 0 || out > act.feature[f]) {
        act.feature[f] = out;
        act.argmax_position[f] = p;
      }
    }
  }
  return act;
}

GroupFeature group_encode(const ScorerParams& params, std::span<const Representation> reps) {
  return group_encode_activation(params, reps).feature;
}

double group_score(const ScorerParams& params, std::span<const double> feature) {
  double s = 0.0;
  for (std::size_t f = 0; f < feature.size(); ++f) s += params.group_projection[f] * feature[f];
  return s;
}

// Checkpoint layout (all integers and reals little-endian):
//   8 bytes  magic "NRSCORER"
//   u32      version (1)
//   u32      number of tensors (7)
//   u64 x 5  vocab_size, emb_dim, hidden_dim, num_filters, filter_width
//   f64 ...  embedding, ffn_weight, ffn_bias, projection, conv_filters,
//            conv_bias, group_projection, each row-major
namespace {

constexpr char kMagic[8] = {'N', 'R', 'S', 'C', 'O', 'R', 'E', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_params(const ScorerParams& params, const std::filesystem::path& path) {
  params.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(kNumTensors));
  const auto& d = params.dims;
  for (std::size_t v : {d.vocab_size, d.emb_dim, d.hidden_dim, d.num_filters, d.filter_width})
    put_le<std::uint64_t>(out, v);
  for (const auto& t : params.tensors())
    for (double v : t.values) put_le<double>(out, v);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ScorerParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path.string() + " is not a scorer checkpoint");
  if (auto v = get_le<std::uint32_t>(in); v != kVersion)
    throw std::runtime_error(fmt::format("unsupported checkpoint version {}", v));
  if (auto n = get_le<std::uint32_t>(in); n != kNumTensors)
    throw std::runtime_error(fmt::format("checkpoint has {} tensors, expected {}", n, kNumTensors));
  ModelDims d;
  d.vocab_size = get_le<std::uint64_t>(in);
  d.emb_dim = get_le<std::uint64_t>(in);
  d.hidden_dim = get_le<std::uint64_t>(in);
  d.num_filters = get_le<std::uint64_t>(in);
  d.filter_width = get_le<std::uint64_t>(in);
  ScorerParams p = ScorerParams::zeros(d);
  for (auto& t : p.tensors())
    for (double& v : t.values) v = get_le<double>(in);
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path.string() + " has trailing bytes");
  p.validate();
  return p;
}

ModelInputs::ModelInputs(const InvertedIndex& index, const DocumentStore& docs,
                         std::span<const QuerySet* const> queries, std::size_t max_passage_len)
    : vocab_size_(model_vocab_size(index)), max_passage_len_(max_passage_len) {
  if (max_passage_len < 1) throw ValidationError("max_passage_len must be >= 1");
  docs_.reserve(docs.size());
  for (const auto& d : docs.documents()) {
    TokenSequence toks = index.encode_document(d);
    for (auto& t : toks) t += static_cast<TermId>(kReservedTokens);
    docs_.emplace(d.doc_id, std::move(toks));
  }
  for (const QuerySet* qs : queries)
    for (const auto& q : qs->queries()) queries_.insert_or_assign(q.query_id, model_query_tokens(index, q.text));
}

const TokenSequence& ModelInputs::document(std::string_view doc_id) const {
  auto it = docs_.find(std::string(doc_id));
  if (it == docs_.end()) throw ValidationError("no document text for " + std::string(doc_id));
  return it->second;
}

const TokenSequence& ModelInputs::query(std::string_view query_id) const {
  auto it = queries_.find(std::string(query_id));
  if (it == queries_.end()) throw ValidationError("no query text for " + std::string(query_id));
  return it->second;
}

PassageSet ModelInputs::passages(std::string_view doc_id, std::uint64_t seed) const {
  const auto& toks = document(doc_id);
  if (toks.empty()) throw ValidationError("document " + std::string(doc_id) + " has no tokens");
  return split_passages(toks, max_passage_len_, seed, doc_id);
}

TokenSequence model_query_tokens(const InvertedIndex& index, std::string_view text) {
  TokenSequence out;
  for (const auto& t : tokenize(text)) {
    auto id = index.vocabulary().find(t);
    out.push_back(id ? *id + static_cast<TermId>(kReservedTokens) : kUnkToken);
  }
  return out;
}

}  // namespace noiserank
