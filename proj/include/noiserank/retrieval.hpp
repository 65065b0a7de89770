#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "noiserank/corpus.hpp"

namespace noiserank {

using TermId = std::uint32_t;
using TokenSequence = std::vector<TermId>;

// Interned lowercase terms. Ids are dense and follow first-seen order.
class Vocabulary {
 public:
  TermId intern(std::string_view term);
  std::optional<TermId> find(std::string_view term) const;
  const std::string& term(TermId id) const { return terms_.at(id); }
  std::size_t size() const { return terms_.size(); }

  bool operator==(const Vocabulary& other) const { return terms_ == other.terms_; }

 private:
  std::vector<std::string> terms_;
  std::unordered_map<std::string, TermId> ids_;
};

// Internal document number. Numbers follow ascending doc_id order, so sorting
// by number is sorting by doc_id.
using DocNum = std::uint32_t;

struct Posting {
  DocNum doc;
  std::uint32_t tf;

  bool operator==(const Posting&) const = default;
};

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

class InvertedIndex {
 public:
  // Title and body are tokenized separately and concatenated. Throws
  // ValidationError on an empty store.
  static InvertedIndex build(const DocumentStore& store);

  static InvertedIndex load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  const Vocabulary& vocabulary() const { return vocab_; }
  std::span<const Posting> postings(TermId term) const { return postings_.at(term); }
  std::size_t document_frequency(TermId term) const { return postings_.at(term).size(); }

  std::size_t doc_count() const { return doc_ids_.size(); }
  double avg_doc_length() const { return avg_doc_length_; }
  const std::string& doc_id(DocNum doc) const { return doc_ids_.at(doc); }
  std::uint32_t doc_length(DocNum doc) const { return doc_lengths_.at(doc); }
  std::optional<DocNum> find_doc(std::string_view doc_id) const;

  // Term frequency of `term` in `doc` (binary search over the postings).
  std::uint32_t term_frequency(TermId term, DocNum doc) const;

  // Known terms of `text`, in order. Unknown terms are dropped.
  TokenSequence encode_query(std::string_view text) const;
  // Full token sequence of a document (title then body). Every term must be
  // in the vocabulary; throws ValidationError otherwise.
  TokenSequence encode_document(const Document& doc) const;

  bool operator==(const InvertedIndex& other) const;

 private:
  Vocabulary vocab_;
  std::vector<std::vector<Posting>> postings_;
  std::vector<std::string> doc_ids_;
  std::vector<std::uint32_t> doc_lengths_;
  std::unordered_map<std::string, DocNum> doc_nums_;
  double avg_doc_length_ = 0.0;

  void finalize();
};

// idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).
double bm25_idf(std::size_t doc_count, std::size_t df);

// Contribution of one query term with frequency tf in a document of length len.
double bm25_term_weight(double idf, std::uint32_t tf, double len, double avg_len, const Bm25Params& params);

// Okapi BM25 of one document. Query terms absent from the document contribute
// 0. Throws ValidationError on an unknown doc_id.
double bm25_score(const InvertedIndex& index, std::span<const TermId> query_terms, std::string_view doc_id,
                  const Bm25Params& params = {});

struct Candidate {
  std::string doc_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based

  bool operator==(const Candidate&) const = default;
};

struct CandidateList {
  std::string query_id;
  std::vector<Candidate> entries;

  bool operator==(const CandidateList&) const = default;
};

// Top-k documents with a positive BM25 score, score descending, ties by
// ascending doc_id. Throws ValidationError if k < 1.
CandidateList retrieve(const InvertedIndex& index, const Query& query, std::size_t k, const Bm25Params& params = {});

// One list per query, in query order. Queries are spread over `threads` workers.
std::vector<CandidateList> retrieve_all(const InvertedIndex& index, const QuerySet& queries, std::size_t k,
                                        std::size_t threads = 1, const Bm25Params& params = {});

}  // namespace noiserank
