#include "noiserank/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "noiserank/error.hpp"
#include "noiserank/parallel.hpp"

namespace noiserank {

double round_run_score(double score) {
  const double scale = 1e6;
  static_assert(kRunScoreDecimals == 6);
  double r = std::round(score * scale) / scale;
  return r == 0.0 ? 0.0 : r;  // no negative zero in files
}

RunQuery rank_scored(std::string query_id, std::vector<std::pair<std::string, double>> scored) {
  for (auto& [doc, s] : scored) s = round_run_score(s);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  RunQuery q{std::move(query_id), {}};
  q.entries.reserve(scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) q.entries.push_back({std::move(scored[i].first), scored[i].second, i + 1});
  return q;
}

namespace {

// Empty string when consistent, otherwise a description of the problem at
// entry i.
std::string check_entry(const RunQuery& q, std::size_t i) {
  const auto& e = q.entries[i];
  if (e.rank != i + 1) return fmt::format("query {}: expected rank {}, found {}", q.query_id, i + 1, e.rank);
  if (i == 0) return {};
  const auto& prev = q.entries[i - 1];
  if (prev.score < e.score) return fmt::format("query {}: score increases at rank {}", q.query_id, e.rank);
  if (prev.score == e.score && !(prev.doc_id < e.doc_id))
    return fmt::format("query {}: tied scores not in doc_id order at rank {}", q.query_id, e.rank);
  return {};
}

}  // namespace

void validate_run(const RunFile& run) {
  for (const auto& q : run.queries)
    for (std::size_t i = 0; i < q.entries.size(); ++i)
      if (auto err = check_entry(q, i); !err.empty()) throw ValidationError(err);
}

std::string format_run(const RunFile& run) {
  std::string out;
  for (const auto& q : run.queries)
    for (const auto& e : q.entries)
      out += fmt::format("{} Q0 {} {} {:.{}f} {}\n", q.query_id, e.doc_id, e.rank, e.score, kRunScoreDecimals, run.tag);
  return out;
}

void write_run(const RunFile& run, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_run(run);
}

RunFile read_run(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  RunFile run;
  std::unordered_map<std::string, std::size_t> slot;
  std::string line;
  std::size_t lineno = 0;
  bool have_tag = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string qid, q0, doc, rank_s, score_s, tag, extra;
    if (!(ls >> qid >> q0 >> doc >> rank_s >> score_s >> tag) || (ls >> extra))
      throw FormatError(path.string(), lineno, "expected 6 fields: query_id Q0 doc_id rank score tag");
    std::size_t rank = 0;
    double score = 0.0;
    auto [rp, rec] = std::from_chars(rank_s.data(), rank_s.data() + rank_s.size(), rank);
    if (rec != std::errc() || rp != rank_s.data() + rank_s.size() || rank == 0)
      throw FormatError(path.string(), lineno, "rank must be a positive integer");
    auto [sp, sec] = std::from_chars(score_s.data(), score_s.data() + score_s.size(), score);
    if (sec != std::errc() || sp != score_s.data() + score_s.size() || !std::isfinite(score))
      throw FormatError(path.string(), lineno, "score is not a finite number");
    if (!have_tag) {
      run.tag = tag;
      have_tag = true;
    } else if (tag != run.tag) {
      throw FormatError(path.string(), lineno, "run tag differs from the first line");
    }
    auto [it, inserted] = slot.try_emplace(qid, run.queries.size());
    if (inserted) {
      run.queries.push_back(RunQuery{qid, {}});
    } else if (it->second != run.queries.size() - 1) {
      throw FormatError(path.string(), lineno, "entries of query " + qid + " are not contiguous");
    }
    auto& q = run.queries[it->second];
    q.entries.push_back(RunEntry{doc, score, rank});
    if (auto err = check_entry(q, q.entries.size() - 1); !err.empty()) throw FormatError(path.string(), lineno, err);
  }
  return run;
}

RunFile run_from_candidates(std::span<const CandidateList> candidates, std::string tag) {
  RunFile run{std::move(tag), {}};
  for (const auto& list : candidates) {
    std::vector<std::pair<std::string, double>> scored;
    for (const auto& c : list.entries) scored.emplace_back(c.doc_id, c.score);
    run.queries.push_back(rank_scored(list.query_id, std::move(scored)));
  }
  return run;
}

std::vector<CandidateList> candidates_from_run(const RunFile& run) {
  std::vector<CandidateList> out;
  for (const auto& q : run.queries) {
    CandidateList list{q.query_id, {}};
    for (const auto& e : q.entries) list.entries.push_back({e.doc_id, e.score, e.rank});
    out.push_back(std::move(list));
  }
  return out;
}

RunFile rerank(const ScorerParams& params, std::span<const CandidateList> candidates, const ModelInputs& inputs,
               std::uint64_t passage_seed, std::string tag, std::size_t threads) {
  RunFile run{std::move(tag), std::vector<RunQuery>(candidates.size())};
  parallel_for(candidates.size(), threads, [&](std::size_t i) {
    const auto& list = candidates[i];
    const TokenSequence& query = inputs.query(list.query_id);
    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(list.entries.size());
    for (const auto& c : list.entries) {
      auto ds = score_document(params, query, inputs.passages(c.doc_id, passage_seed));
      if (!std::isfinite(ds.doc_score)) throw NumericError("non-finite score for " + c.doc_id);
      scored.emplace_back(c.doc_id, ds.doc_score);
    }
    run.queries[i] = rank_scored(list.query_id, std::move(scored));
  });
  return run;
}

MetricReport mrr_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  if (k < 1) throw ValidationError("k must be >= 1");
  MetricReport report;
  report.k = k;
  std::unordered_map<std::string, const RunQuery*> by_query;
  for (const auto& q : run.queries) {
    by_query.emplace(q.query_id, &q);
    if (qrels.find(q.query_id) == qrels.end()) ++report.num_excluded;
  }
  double total = 0.0;
  for (const auto& [qid, judged] : qrels) {
    double rr = 0.0;
    if (auto it = by_query.find(qid); it != by_query.end()) {
      for (const auto& e : it->second->entries) {
        if (e.rank > k) continue;
        auto j = judged.find(e.doc_id);
        if (j != judged.end() && j->second >= 1) {
          rr = std::max(rr, 1.0 / static_cast<double>(e.rank));
        }
      }
    }
    report.per_query_rr[qid] = rr;
    if (rr == 0.0) ++report.num_zero_queries;
    total += rr;
  }
  report.num_queries = qrels.size();
  report.mrr_at_k = report.num_queries == 0 ? 0.0 : total / static_cast<double>(report.num_queries);
  return report;
}

double recall_at_k(std::span<const CandidateList> candidates, const Qrels& qrels, std::size_t k) {
  if (qrels.empty()) return 0.0;
  std::unordered_map<std::string, const CandidateList*> by_query;
  for (const auto& c : candidates) by_query.emplace(c.query_id, &c);
  std::size_t found = 0;
  for (const auto& [qid, judged] : qrels) {
    auto it = by_query.find(qid);
    if (it == by_query.end()) continue;
    for (const auto& c : it->second->entries) {
      if (c.rank <= k && judged.contains(c.doc_id)) {
        ++found;
        break;
      }
    }
  }
  return static_cast<double>(found) / static_cast<double>(qrels.size());
}

std::string format_report_text(const MetricReport& report, std::string_view label) {
  return fmt::format("{}: MRR@{} = {:.6f} over {} queries ({} with no relevant document in the top {}, {} excluded)\n",
                     label, report.k, report.mrr_at_k, report.num_queries, report.num_zero_queries, report.k,
                     report.num_excluded);
}

std::string format_report_csv(const MetricReport& report) {
  std::string out = "query_id,rr\n";
  for (const auto& [qid, rr] : report.per_query_rr) out += fmt::format("{},{:.6f}\n", qid, rr);
  out += fmt::format("all,{:.6f}\n", report.mrr_at_k);
  return out;
}

}  // namespace noiserank
