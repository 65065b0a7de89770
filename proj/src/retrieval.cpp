#include "noiserank/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "noiserank/error.hpp"
#include "noiserank/parallel.hpp"
#include "noiserank/tokenizer.hpp"

namespace noiserank {

TermId Vocabulary::intern(std::string_view term) {
  auto [it, inserted] = ids_.try_emplace(std::string(term), static_cast<TermId>(terms_.size()));
  if (inserted) terms_.emplace_back(term);
  return it->second;
}

std::optional<TermId> Vocabulary::find(std::string_view term) const {
  auto it = ids_.find(std::string(term));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

InvertedIndex InvertedIndex::build(const DocumentStore& store) {
  if (store.empty()) throw ValidationError("cannot index an empty document store");
  InvertedIndex index;

  // Term ids follow store order; doc numbers follow doc_id order.
  std::vector<std::vector<TermId>> forward;
  forward.reserve(store.size());
  for (const auto& d : store.documents()) {
    std::vector<TermId> toks;
    for (const auto& t : tokenize(d.title)) toks.push_back(index.vocab_.intern(t));
    for (const auto& t : tokenize(d.body)) toks.push_back(index.vocab_.intern(t));
    forward.push_back(std::move(toks));
  }

  const auto& docs = store.documents();
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return docs[a].doc_id < docs[b].doc_id; });

  index.postings_.resize(index.vocab_.size());
  std::vector<std::uint32_t> counts(index.vocab_.size(), 0);
  std::vector<TermId> touched;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const auto doc = static_cast<DocNum>(pos);
    const auto& toks = forward[order[pos]];
    index.doc_ids_.push_back(docs[order[pos]].doc_id);
    index.doc_lengths_.push_back(static_cast<std::uint32_t>(toks.size()));
    for (TermId t : toks)
      if (counts[t]++ == 0) touched.push_back(t);
    std::sort(touched.begin(), touched.end());
    for (TermId t : touched) {
      index.postings_[t].push_back({doc, counts[t]});
      counts[t] = 0;
    }
    touched.clear();
  }
  index.finalize();
  return index;
}

void InvertedIndex::finalize() {
  doc_nums_.clear();
  for (std::size_t i = 0; i < doc_ids_.size(); ++i) doc_nums_.emplace(doc_ids_[i], static_cast<DocNum>(i));
  double total = 0.0;
  for (auto len : doc_lengths_) total += len;
  avg_doc_length_ = doc_lengths_.empty() ? 0.0 : total / static_cast<double>(doc_lengths_.size());
}

std::optional<DocNum> InvertedIndex::find_doc(std::string_view doc_id) const {
  auto it = doc_nums_.find(std::string(doc_id));
  if (it == doc_nums_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t InvertedIndex::term_frequency(TermId term, DocNum doc) const {
  const auto& list = postings_.at(term);
  auto it = std::lower_bound(list.begin(), list.end(), doc, [](const Posting& p, DocNum d) { return p.doc < d; });
  return (it != list.end() && it->doc == doc) ? it->tf : 0;
}

TokenSequence InvertedIndex::encode_query(std::string_view text) const {
  TokenSequence out;
  for (const auto& t : tokenize(text))
    if (auto id = vocab_.find(t)) out.push_back(*id);
  return out;
}

TokenSequence InvertedIndex::encode_document(const Document& doc) const {
  TokenSequence out;
  auto add = [&](std::string_view text) {
    for (const auto& t : tokenize(text)) {
      auto id = vocab_.find(t);
      if (!id) throw ValidationError(fmt::format("document {} has term '{}' missing from the index", doc.doc_id, t));
      out.push_back(*id);
    }
  };
  add(doc.title);
  add(doc.body);
  return out;
}

bool InvertedIndex::operator==(const InvertedIndex& other) const {
  return vocab_ == other.vocab_ && postings_ == other.postings_ && doc_ids_ == other.doc_ids_ &&
         doc_lengths_ == other.doc_lengths_ && avg_doc_length_ == other.avg_doc_length_;
}

// Layout: <dir>/vocab.txt one term per line in id order; <dir>/docs.tsv
// "doc_id\tlength" in doc-number order; <dir>/postings.txt one line per term
// id: "df doc:tf doc:tf ...".
void InvertedIndex::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream vocab(dir / "vocab.txt", std::ios::binary | std::ios::trunc);
  std::ofstream docs(dir / "docs.tsv", std::ios::binary | std::ios::trunc);
  std::ofstream post(dir / "postings.txt", std::ios::binary | std::ios::trunc);
  if (!vocab || !docs || !post) throw std::runtime_error("cannot write index to " + dir.string());
  for (std::size_t t = 0; t < vocab_.size(); ++t) vocab << vocab_.term(static_cast<TermId>(t)) << '\n';
  for (std::size_t d = 0; d < doc_ids_.size(); ++d) docs << doc_ids_[d] << '\t' << doc_lengths_[d] << '\n';
  for (const auto& list : postings_) {
    post << list.size();
    for (const auto& p : list) post << ' ' << p.doc << ':' << p.tf;
    post << '\n';
  }
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& dir) {
  InvertedIndex index;
  auto open = [&](const char* name) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + (dir / name).string());
    return in;
  };
  std::string line;
  {
    auto in = open("vocab.txt");
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (index.vocab_.intern(line) != lineno - 1)
        throw FormatError((dir / "vocab.txt").string(), lineno, "duplicate term");
    }
  }
  {
    auto in = open("docs.tsv");
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw FormatError((dir / "docs.tsv").string(), lineno, "expected doc_id\\tlength");
      index.doc_ids_.push_back(line.substr(0, tab));
      index.doc_lengths_.push_back(static_cast<std::uint32_t>(std::stoul(line.substr(tab + 1))));
      if (index.doc_ids_.size() > 1 && !(index.doc_ids_[index.doc_ids_.size() - 2] < index.doc_ids_.back()))
        throw FormatError((dir / "docs.tsv").string(), lineno, "doc ids not strictly ascending");
    }
  }
  {
    auto in = open("postings.txt");
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream ls(line);
      std::size_t df = 0;
      ls >> df;
      std::vector<Posting> list;
      list.reserve(df);
      std::string item;
      while (ls >> item) {
        auto colon = item.find(':');
        if (colon == std::string::npos) throw FormatError((dir / "postings.txt").string(), lineno, "bad posting");
        Posting p{static_cast<DocNum>(std::stoul(item.substr(0, colon))),
                  static_cast<std::uint32_t>(std::stoul(item.substr(colon + 1)))};
        if (p.doc >= index.doc_ids_.size() || (!list.empty() && list.back().doc >= p.doc))
          throw FormatError((dir / "postings.txt").string(), lineno, "postings out of order or out of range");
        list.push_back(p);
      }
      if (list.size() != df) throw FormatError((dir / "postings.txt").string(), lineno, "df mismatch");
      index.postings_.push_back(std::move(list));
    }
  }
  if (index.postings_.size() != index.vocab_.size())
    throw std::runtime_error("index at " + dir.string() + " has mismatched vocabulary and postings");
  index.finalize();
  return index;
}

double bm25_idf(std::size_t doc_count, std::size_t df) {
  const double n = static_cast<double>(doc_count);
  const double f = static_cast<double>(df);
  return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

double bm25_term_weight(double idf, std::uint32_t tf, double len, double avg_len, const Bm25Params& params) {
  if (tf == 0) return 0.0;
  const double t = static_cast<double>(tf);
  return idf * t * (params.k1 + 1.0) / (t + params.k1 * (1.0 - params.b + params.b * len / avg_len));
}

double bm25_score(const InvertedIndex& index, std::span<const TermId> query_terms, std::string_view doc_id,
                  const Bm25Params& params) {
  auto doc = index.find_doc(doc_id);
  if (!doc) throw ValidationError("unknown doc_id " + std::string(doc_id));
  const double len = index.doc_length(*doc);
  double score = 0.0;
  for (TermId t : query_terms) {
    if (t >= index.vocabulary().size()) continue;
    std::uint32_t tf = index.term_frequency(t, *doc);
    score += bm25_term_weight(bm25_idf(index.doc_count(), index.document_frequency(t)), tf, len,
                              index.avg_doc_length(), params);
  }
  return score;
}

CandidateList retrieve(const InvertedIndex& index, const Query& query, std::size_t k, const Bm25Params& params) {
  if (k < 1) throw ValidationError("k must be >= 1");
  const TokenSequence terms = index.encode_query(query.text);

  std::vector<double> acc(index.doc_count(), 0.0);
  std::vector<char> hit(index.doc_count(), 0);
  std::vector<DocNum> scored;
  for (TermId t : terms) {
    const double idf = bm25_idf(index.doc_count(), index.document_frequency(t));
    for (const auto& p : index.postings(t)) {
      acc[p.doc] += bm25_term_weight(idf, p.tf, index.doc_length(p.doc), index.avg_doc_length(), params);
      if (!hit[p.doc]) {
        hit[p.doc] = 1;
        scored.push_back(p.doc);
      }
    }
  }

  auto better = [&](DocNum a, DocNum b) { return acc[a] != acc[b] ? acc[a] > acc[b] : a < b; };
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);

  CandidateList out{query.query_id, {}};
  out.entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.entries.push_back({index.doc_id(scored[i]), acc[scored[i]], i + 1});
  return out;
}

std::vector<CandidateList> retrieve_all(const InvertedIndex& index, const QuerySet& queries, std::size_t k,
                                        std::size_t threads, const Bm25Params& params) {
  if (k < 1) throw ValidationError("k must be >= 1");
  std::vector<CandidateList> out(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) { out[i] = retrieve(index, queries.queries()[i], k, params); });
  return out;
}

}  // namespace noiserank
