#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "noiserank/corpus.hpp"
#include "noiserank/retrieval.hpp"
#include "noiserank/scorer.hpp"

namespace noiserank {

// Scores in run files carry this many decimals. Rankings are built from the
// rounded scores so a written run reads back with the same order.
inline constexpr int kRunScoreDecimals = 6;

struct RunEntry {
  std::string doc_id;
  double score = 0.0;
  std::size_t rank = 0;

  bool operator==(const RunEntry&) const = default;
};

struct RunQuery {
  std::string query_id;
  std::vector<RunEntry> entries;

  bool operator==(const RunQuery&) const = default;
};

struct RunFile {
  std::string tag;
  std::vector<RunQuery> queries;

  bool operator==(const RunFile&) const = default;
};

double round_run_score(double score);

// Rounds scores, sorts by score descending then doc_id ascending, assigns ranks.
RunQuery rank_scored(std::string query_id, std::vector<std::pair<std::string, double>> scored);

// Throws ValidationError if ranks are not 1..n or the order disagrees with
// (score descending, doc_id ascending).
void validate_run(const RunFile& run);

// Line format: query_id Q0 doc_id rank score tag.
void write_run(const RunFile& run, const std::filesystem::path& path);
std::string format_run(const RunFile& run);
// Throws FormatError naming the line on malformed input or inconsistent ranks.
RunFile read_run(const std::filesystem::path& path);

RunFile run_from_candidates(std::span<const CandidateList> candidates, std::string tag);
std::vector<CandidateList> candidates_from_run(const RunFile& run);

// Rescores every candidate with score_document using passage offsets drawn
// with `passage_seed`, then re-sorts. Queries are spread over `threads` workers.
RunFile rerank(const ScorerParams& params, std::span<const CandidateList> candidates, const ModelInputs& inputs,
               std::uint64_t passage_seed, std::string tag, std::size_t threads = 1);

struct MetricReport {
  double mrr_at_k = 0.0;
  std::map<std::string, double> per_query_rr;
  std::size_t k = 0;
  std::size_t num_queries = 0;
  std::size_t num_zero_queries = 0;
  // Queries present in the run but absent from the qrels; not scored.
  std::size_t num_excluded = 0;
};

// Reciprocal rank of the first document with grade >= 1 within the top k,
// averaged over every query in the qrels (a query missing from the run scores 0).
MetricReport mrr_at_k(const RunFile& run, const Qrels& qrels, std::size_t k);

// Fraction of qrels queries with at least one labeled positive in the top k.
double recall_at_k(std::span<const CandidateList> candidates, const Qrels& qrels, std::size_t k);

std::string format_report_text(const MetricReport& report, std::string_view label);
// Header "query_id,rr" then one row per query and a final "all,<mrr>" row.
std::string format_report_csv(const MetricReport& report);

}  // namespace noiserank
