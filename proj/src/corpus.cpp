#include "noiserank/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "noiserank/error.hpp"
#include "noiserank/rng.hpp"
#include "noiserank/tokenizer.hpp"

namespace noiserank {
namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

// Calls fn(line_number, line) for each line, stripping a trailing CR.
template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  auto in = open_input(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    fn(lineno, line);
  }
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

std::size_t document_tokens(const Document& d) { return count_tokens(d.title) + count_tokens(d.body); }

// Shared reader for qrels-shaped files: qid, ignored, doc_id, grade.
template <typename Fn>
void read_judgments(const std::filesystem::path& path, Fn&& on_pair) {
  for_each_line(path, [&](std::size_t lineno, const std::string& line) {
    auto f = split_whitespace(line);
    if (f.empty()) return;
    if (f.size() != 4)
      throw FormatError(path.string(), lineno, fmt::format("expected 4 fields, got {}", f.size()));
    int grade = 0;
    auto [ptr, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), grade);
    if (ec != std::errc() || ptr != f[3].data() + f[3].size())
      throw FormatError(path.string(), lineno, "grade is not an integer");
    if (grade < 1) throw FormatError(path.string(), lineno, "grade must be >= 1");
    if (!on_pair(std::string(f[0]), std::string(f[2]), grade))
      throw FormatError(path.string(), lineno, "duplicate judgment");
  });
}

}  // namespace

void DocumentStore::add(Document doc) {
  if (by_id_.contains(doc.doc_id)) throw ValidationError("duplicate doc_id " + doc.doc_id);
  by_id_.emplace(doc.doc_id, docs_.size());
  docs_.push_back(std::move(doc));
}

const Document* DocumentStore::find(std::string_view doc_id) const {
  auto it = by_id_.find(std::string(doc_id));
  return it == by_id_.end() ? nullptr : &docs_[it->second];
}

const Document& DocumentStore::at(std::string_view doc_id) const {
  const Document* d = find(doc_id);
  if (d == nullptr) throw ValidationError("unknown doc_id " + std::string(doc_id));
  return *d;
}

void QuerySet::add(Query q) {
  if (q.text.empty()) throw ValidationError("query " + q.query_id + " has empty text");
  if (by_id_.contains(q.query_id)) throw ValidationError("duplicate query_id " + q.query_id);
  by_id_.emplace(q.query_id, queries_.size());
  queries_.push_back(std::move(q));
}

const Query* QuerySet::find(std::string_view query_id) const {
  auto it = by_id_.find(std::string(query_id));
  return it == by_id_.end() ? nullptr : &queries_[it->second];
}

const Query& QuerySet::at(std::string_view query_id) const {
  const Query* q = find(query_id);
  if (q == nullptr) throw ValidationError("unknown query_id " + std::string(query_id));
  return *q;
}

DocumentStore load_documents(const std::filesystem::path& path) {
  DocumentStore store;
  for_each_line(path, [&](std::size_t lineno, const std::string& line) {
    auto f = split_tabs(line);
    if (f.size() != 4)
      throw FormatError(path.string(), lineno, fmt::format("expected 4 tab-separated fields, got {}", f.size()));
    if (f[0].empty()) throw FormatError(path.string(), lineno, "empty doc_id");
    Document d{std::string(f[0]), std::string(f[1]), std::string(f[2]), std::string(f[3]), 0};
    d.token_count = document_tokens(d);
    if (store.contains(d.doc_id)) throw FormatError(path.string(), lineno, "duplicate doc_id " + d.doc_id);
    store.add(std::move(d));
  });
  return store;
}

QuerySet load_queries(const std::filesystem::path& path) {
  QuerySet queries;
  for_each_line(path, [&](std::size_t lineno, const std::string& line) {
    auto f = split_tabs(line);
    if (f.size() != 2)
      throw FormatError(path.string(), lineno, fmt::format("expected 2 tab-separated fields, got {}", f.size()));
    if (f[0].empty()) throw FormatError(path.string(), lineno, "empty query_id");
    if (f[1].empty()) throw FormatError(path.string(), lineno, "empty query text");
    if (queries.find(f[0]) != nullptr)
      throw FormatError(path.string(), lineno, "duplicate query_id " + std::string(f[0]));
    queries.add(Query{std::string(f[0]), std::string(f[1])});
  });
  return queries;
}

Qrels load_qrels(const std::filesystem::path& path) {
  Qrels qrels;
  read_judgments(path, [&](std::string qid, std::string doc, int grade) {
    return qrels[std::move(qid)].emplace(std::move(doc), grade).second;
  });
  return qrels;
}

HiddenTruth load_hidden_truth(const std::filesystem::path& path) {
  HiddenTruth hidden;
  read_judgments(path, [&](std::string qid, std::string doc, int) {
    return hidden[std::move(qid)].insert(std::move(doc)).second;
  });
  return hidden;
}

void write_documents(const DocumentStore& store, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& d : store.documents()) out << d.doc_id << '\t' << d.url << '\t' << d.title << '\t' << d.body << '\n';
}

void write_queries(const QuerySet& queries, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& q : queries.queries()) out << q.query_id << '\t' << q.text << '\n';
}

void write_qrels(const Qrels& qrels, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& [qid, docs] : qrels)
    for (const auto& [doc, grade] : docs) out << qid << " 0 " << doc << ' ' << grade << '\n';
}

void write_hidden_truth(const HiddenTruth& hidden, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& [qid, docs] : hidden)
    for (const auto& doc : docs) out << qid << " 0 " << doc << " 1\n";
}

void validate_qrels(const Qrels& qrels, const DocumentStore& store) {
  for (const auto& [qid, docs] : qrels)
    for (const auto& [doc, grade] : docs)
      if (!store.contains(doc)) throw ValidationError("qrels for " + qid + " reference unknown doc " + doc);
}

Qrels filter_qrels(const Qrels& qrels, const QuerySet& queries) {
  Qrels out;
  for (const auto& q : queries.queries())
    if (auto it = qrels.find(q.query_id); it != qrels.end()) out.emplace(it->first, it->second);
  return out;
}

std::set<std::string> labeled_positives(const Qrels& qrels, std::string_view query_id) {
  std::set<std::string> out;
  if (auto it = qrels.find(query_id); it != qrels.end())
    for (const auto& [doc, grade] : it->second)
      if (grade >= 1) out.insert(doc);
  return out;
}

QuerySplit split_queries(const QuerySet& queries, double dev_fraction) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw ValidationError("dev_fraction must lie in (0, 1)");
  QuerySplit split;
  const auto& qs = queries.queries();
  for (std::size_t i = 0; i < qs.size(); ++i) {
    bool dev = std::floor(static_cast<double>(i + 1) * dev_fraction) > std::floor(static_cast<double>(i) * dev_fraction);
    (dev ? split.dev : split.train).add(qs[i]);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic corpus.
//
// Vocabulary layout: background words, then one block of topic words per
// topic, then evidence words (what relevant documents talk about) and decoy
// words (what look-alike non-relevant documents talk about). Each query owns
// query_terms key words carved out of its topic block; the rest of the block
// is shared by all queries of that topic.

namespace {

enum class DocKind { kRelevant, kDecoy, kStuffed, kTopical };

struct TermPools {
  std::vector<std::string> background;
  std::vector<std::vector<std::string>> topic_shared;  // per topic
  std::vector<std::vector<std::string>> topic_keys;    // per topic, all queries' keys
  std::vector<std::string> evidence;
  std::vector<std::string> decoy;
};

// Per-token mixture weights. Remaining mass goes to background words.
struct Mixture {
  double key = 0;
  double topic_keys = 0;  // any key word of the topic, not just this query's
  double topic = 0;
  double evidence = 0;
  double decoy = 0;
};

Mixture base_mixture(DocKind kind) {
  switch (kind) {
    case DocKind::kRelevant: return {.key = 0.03, .topic = 0.15, .evidence = 0.08};
    case DocKind::kDecoy: return {.key = 0.03, .topic = 0.15, .evidence = 0.08, .decoy = 0.04};
    case DocKind::kStuffed: return {.key = 0.09, .topic = 0.15, .evidence = 0.0};
    case DocKind::kTopical: return {.key = 0.01, .topic_keys = 0.03, .topic = 0.2, .evidence = 0.02};
  }
  return {};
}

// Dense segment carried by relevant documents (evidence) and decoys (decoy words).
Mixture segment_mixture(DocKind kind) {
  if (kind == DocKind::kRelevant) return {.key = 0.1, .topic = 0.1, .evidence = 0.35};
  return {.key = 0.1, .topic = 0.1, .evidence = 0.05, .decoy = 0.3};
}

const std::string& pick(const std::vector<std::string>& pool, Rng& rng) { return pool[uniform_index(rng, pool.size())]; }

// Background words follow a skewed distribution so frequent words exist.
const std::string& pick_background(const std::vector<std::string>& pool, Rng& rng) {
  double u = uniform_real(rng);
  return pool[static_cast<std::size_t>(u * u * static_cast<double>(pool.size()))];
}

std::string draw_token(const Mixture& m, const TermPools& pools, std::size_t topic,
                       const std::vector<std::string>& keys, Rng& rng) {
  double u = uniform_real(rng);
  if ((u -= m.key) < 0) return pick(keys, rng);
  if ((u -= m.topic_keys) < 0) return pick(pools.topic_keys[topic], rng);
  if ((u -= m.topic) < 0) return pick(pools.topic_shared[topic], rng);
  if ((u -= m.evidence) < 0) return pick(pools.evidence, rng);
  if ((u -= m.decoy) < 0) return pick(pools.decoy, rng);
  return pick_background(pools.background, rng);
}

std::vector<std::string> draw_document(DocKind kind, const SynthConfig& cfg, const TermPools& pools, std::size_t topic,
                                       const std::vector<std::string>& keys, Rng& rng) {
  std::size_t len = cfg.min_doc_tokens + uniform_index(rng, cfg.max_doc_tokens - cfg.min_doc_tokens + 1);
  std::vector<std::string> tokens;
  tokens.reserve(len);
  Mixture base = base_mixture(kind);
  for (std::size_t i = 0; i < len; ++i) tokens.push_back(draw_token(base, pools, topic, keys, rng));
  if (kind == DocKind::kRelevant || kind == DocKind::kDecoy) {
    std::size_t seg_len = std::min(len, std::max<std::size_t>(8, cfg.max_passage_len / 2));
    std::size_t start = uniform_index(rng, len - seg_len + 1);
    Mixture seg = segment_mixture(kind);
    for (std::size_t i = start; i < start + seg_len; ++i) tokens[i] = draw_token(seg, pools, topic, keys, rng);
  }
  return tokens;
}

std::string join(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

struct PendingDoc {
  std::size_t query;
  bool relevant;
  std::vector<std::string> tokens;
};

}  // namespace

SyntheticCorpus generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.relevant_per_query < 2) throw ValidationError("relevant_per_query must be >= 2 to model unlabeled positives");
  if (cfg.labeled_per_query != 1) throw ValidationError("labeled_per_query must be 1");
  if (cfg.num_queries == 0 || cfg.num_topics == 0 || cfg.query_terms == 0)
    throw ValidationError("num_queries, num_topics and query_terms must be >= 1");
  if (cfg.min_doc_tokens == 0 || cfg.min_doc_tokens > cfg.max_doc_tokens)
    throw ValidationError("need 1 <= min_doc_tokens <= max_doc_tokens");
  if (cfg.max_doc_tokens <= 4 * cfg.max_passage_len)
    throw ValidationError("max_doc_tokens must exceed 4 * max_passage_len so long documents occur");
  if (cfg.docs_per_query_topic < cfg.relevant_per_query + cfg.decoys_per_query + cfg.stuffed_per_query)
    throw ValidationError("docs_per_query_topic too small for the relevant, decoy and stuffed documents");
  if (!(cfg.near_duplicate_noise >= 0.0 && cfg.near_duplicate_noise <= 1.0))
    throw ValidationError("near_duplicate_noise must lie in [0, 1]");

  const std::size_t queries_per_topic = (cfg.num_queries + cfg.num_topics - 1) / cfg.num_topics;
  const std::size_t keys_per_topic = queries_per_topic * cfg.query_terms;
  if (cfg.topic_terms < keys_per_topic + cfg.query_terms)
    throw ValidationError(fmt::format("topic_terms must be >= {} to give every query its own key terms",
                                      keys_per_topic + cfg.query_terms));
  const std::size_t reserved = cfg.num_topics * cfg.topic_terms + 2 * cfg.evidence_terms;
  if (cfg.evidence_terms == 0 || cfg.vocab_size < reserved + 100)
    throw ValidationError(fmt::format("vocab_size must be >= {} to separate topics", reserved + 100));

  Rng rng(mix_seed(seed, 0x5e7a11));

  TermPools pools;
  std::size_t next = 0;
  auto word = [&](char prefix) { return fmt::format("{}{}", prefix, next++); };
  for (std::size_t i = 0; i < cfg.vocab_size - reserved; ++i) pools.background.push_back(word('w'));
  std::vector<std::vector<std::string>> topic_blocks(cfg.num_topics);
  for (auto& block : topic_blocks)
    for (std::size_t i = 0; i < cfg.topic_terms; ++i) block.push_back(word('t'));
  for (std::size_t i = 0; i < cfg.evidence_terms; ++i) pools.evidence.push_back(word('e'));
  for (std::size_t i = 0; i < cfg.evidence_terms; ++i) pools.decoy.push_back(word('x'));

  // Carve per-query keys off the front of each shuffled topic block.
  std::vector<std::vector<std::string>> query_keys(cfg.num_queries);
  for (std::size_t t = 0; t < cfg.num_topics; ++t) {
    auto& block = topic_blocks[t];
    shuffle(std::span(block), rng);
    pools.topic_keys.emplace_back(block.begin(), block.begin() + static_cast<std::ptrdiff_t>(keys_per_topic));
    pools.topic_shared.emplace_back(block.begin() + static_cast<std::ptrdiff_t>(keys_per_topic), block.end());
  }
  for (std::size_t q = 0; q < cfg.num_queries; ++q) {
    std::size_t topic = q % cfg.num_topics;
    std::size_t slot = q / cfg.num_topics;
    const auto& keys = pools.topic_keys[topic];
    query_keys[q].assign(keys.begin() + static_cast<std::ptrdiff_t>(slot * cfg.query_terms),
                         keys.begin() + static_cast<std::ptrdiff_t>((slot + 1) * cfg.query_terms));
  }

  std::vector<PendingDoc> pending;
  for (std::size_t q = 0; q < cfg.num_queries; ++q) {
    std::size_t topic = q % cfg.num_topics;
    const auto& keys = query_keys[q];
    const std::size_t labeled_at = pending.size();
    pending.push_back({q, true, draw_document(DocKind::kRelevant, cfg, pools, topic, keys, rng)});
    // Hidden positives: copies of the labeled one with a fraction of tokens redrawn.
    const Mixture base = base_mixture(DocKind::kRelevant);
    for (std::size_t h = 1; h < cfg.relevant_per_query; ++h) {
      auto copy = pending[labeled_at].tokens;
      for (auto& tok : copy)
        if (uniform_real(rng) < cfg.near_duplicate_noise) tok = draw_token(base, pools, topic, keys, rng);
      pending.push_back({q, true, std::move(copy)});
    }
    for (std::size_t i = 0; i < cfg.decoys_per_query; ++i)
      pending.push_back({q, false, draw_document(DocKind::kDecoy, cfg, pools, topic, keys, rng)});
    for (std::size_t i = 0; i < cfg.stuffed_per_query; ++i)
      pending.push_back({q, false, draw_document(DocKind::kStuffed, cfg, pools, topic, keys, rng)});
    std::size_t topical = cfg.docs_per_query_topic - cfg.relevant_per_query - cfg.decoys_per_query - cfg.stuffed_per_query;
    for (std::size_t i = 0; i < topical; ++i)
      pending.push_back({q, false, draw_document(DocKind::kTopical, cfg, pools, topic, keys, rng)});
  }

  // Random id assignment so that id order carries no relevance signal.
  std::vector<std::size_t> ids(pending.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  shuffle(std::span(ids), rng);
  const int width = static_cast<int>(fmt::format("{}", pending.size()).size());

  SyntheticCorpus out;
  std::vector<std::string> doc_ids(pending.size());
  for (std::size_t i = 0; i < pending.size(); ++i) doc_ids[i] = fmt::format("D{:0{}}", ids[i], width);

  std::vector<std::size_t> order(pending.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return doc_ids[a] < doc_ids[b]; });
  for (std::size_t i : order) {
    const auto& p = pending[i];
    std::size_t title_len = std::min<std::size_t>(6, p.tokens.size() / 4);
    Document d{doc_ids[i], "http://synthetic/" + doc_ids[i], join(p.tokens, 0, title_len),
               join(p.tokens, title_len, p.tokens.size()), p.tokens.size()};
    out.documents.add(std::move(d));
  }

  const int qwidth = static_cast<int>(fmt::format("{}", cfg.num_queries).size());
  std::vector<std::string> query_ids(cfg.num_queries);
  for (std::size_t q = 0; q < cfg.num_queries; ++q) {
    query_ids[q] = fmt::format("Q{:0{}}", q, qwidth);
    out.queries.add(Query{query_ids[q], join(query_keys[q], 0, query_keys[q].size())});
  }
  // The first relevant document of each query is the labeled one.
  std::vector<std::size_t> seen(cfg.num_queries, 0);
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const auto& p = pending[i];
    if (!p.relevant) continue;
    if (seen[p.query]++ == 0)
      out.qrels[query_ids[p.query]][doc_ids[i]] = 1;
    else
      out.hidden[query_ids[p.query]].insert(doc_ids[i]);
  }
  return out;
}

}  // namespace noiserank
