#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace noiserank {

struct Document {
  std::string doc_id;
  std::string url;
  std::string title;
  std::string body;
  std::size_t token_count = 0;

  bool operator==(const Document&) const = default;
};

struct Query {
  std::string query_id;
  std::string text;

  bool operator==(const Query&) const = default;
};

// Documents in insertion order with id lookup. Immutable once built.
class DocumentStore {
 public:
  DocumentStore() = default;

  // Throws ValidationError on a duplicate doc_id.
  void add(Document doc);

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const std::vector<Document>& documents() const { return docs_; }
  const Document* find(std::string_view doc_id) const;
  const Document& at(std::string_view doc_id) const;
  bool contains(std::string_view doc_id) const { return find(doc_id) != nullptr; }

  // Fills token_count for every document from the given tokenizer callback.
  template <typename Fn>
  void set_token_counts(Fn&& count_tokens) {
    for (auto& d : docs_) d.token_count = count_tokens(d);
  }

  bool operator==(const DocumentStore& other) const { return docs_ == other.docs_; }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

class QuerySet {
 public:
  QuerySet() = default;

  // Throws ValidationError on a duplicate id or empty text.
  void add(Query q);

  std::size_t size() const { return queries_.size(); }
  bool empty() const { return queries_.empty(); }
  const std::vector<Query>& queries() const { return queries_; }
  const Query* find(std::string_view query_id) const;
  const Query& at(std::string_view query_id) const;

  bool operator==(const QuerySet& other) const { return queries_ == other.queries_; }

 private:
  std::vector<Query> queries_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// query_id -> (doc_id -> grade). Grades are >= 1; non-relevant pairs are absent.
using Qrels = std::map<std::string, std::map<std::string, int>, std::less<>>;

// query_id -> relevant doc_ids that were withheld from the qrels.
using HiddenTruth = std::map<std::string, std::set<std::string>, std::less<>>;

DocumentStore load_documents(const std::filesystem::path& path);
QuerySet load_queries(const std::filesystem::path& path);
Qrels load_qrels(const std::filesystem::path& path);
// Same shape as qrels; every listed pair is a withheld positive.
HiddenTruth load_hidden_truth(const std::filesystem::path& path);

void write_documents(const DocumentStore& store, const std::filesystem::path& path);
void write_queries(const QuerySet& queries, const std::filesystem::path& path);
void write_qrels(const Qrels& qrels, const std::filesystem::path& path);
void write_hidden_truth(const HiddenTruth& hidden, const std::filesystem::path& path);

// Throws ValidationError if any judged doc_id is missing from the store.
void validate_qrels(const Qrels& qrels, const DocumentStore& store);

// Restricts qrels to the given queries.
Qrels filter_qrels(const Qrels& qrels, const QuerySet& queries);

// Labeled positives of one query (grade >= 1), or an empty set.
std::set<std::string> labeled_positives(const Qrels& qrels, std::string_view query_id);

struct SynthConfig {
  std::size_t num_queries = 200;
  std::size_t num_topics = 20;
  // Documents generated per query: its relevant documents plus distractors.
  std::size_t docs_per_query_topic = 30;
  std::size_t vocab_size = 1500;
  std::size_t topic_terms = 60;
  std::size_t evidence_terms = 80;
  std::size_t query_terms = 3;
  std::size_t min_doc_tokens = 300;
  std::size_t max_doc_tokens = 1200;
  // Used only to check that documents are long enough to need splitting.
  std::size_t max_passage_len = 64;
  std::size_t relevant_per_query = 3;
  std::size_t labeled_per_query = 1;
  // Fraction of tokens resampled when deriving a hidden positive from the
  // labeled one.
  double near_duplicate_noise = 0.15;
  // Documents per query that mimic the relevant ones with decoy evidence.
  std::size_t decoys_per_query = 3;
  // Documents per query that repeat the query terms heavily.
  std::size_t stuffed_per_query = 6;
};

struct SyntheticCorpus {
  DocumentStore documents;
  QuerySet queries;
  Qrels qrels;
  HiddenTruth hidden;
};

// Pure function of (cfg, seed). Throws ValidationError on an invalid config.
SyntheticCorpus generate_synthetic(const SynthConfig& cfg, std::uint64_t seed);

struct QuerySplit {
  QuerySet train;
  QuerySet dev;
};

// Deterministic split: every k-th query (by position) goes to dev, where k is
// chosen so that about dev_fraction of the queries end up there.
QuerySplit split_queries(const QuerySet& queries, double dev_fraction);

}  // namespace noiserank
