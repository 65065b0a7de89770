#include "noiserank/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "noiserank/corpus.hpp"
#include "noiserank/error.hpp"
#include "noiserank/eval.hpp"
#include "noiserank/experiment.hpp"
#include "noiserank/retrieval.hpp"
#include "noiserank/scorer.hpp"
#include "noiserank/trainer.hpp"

namespace noiserank {
namespace {

void configure_logging(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("noiserank", sink);
  logger->set_pattern("[%l] %v");
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("NOISERANK_LOG")) {
    std::string v(env);
    if (v == "error") level = spdlog::level::err;
    else if (v == "info") level = spdlog::level::info;
    else if (v == "debug") level = spdlog::level::debug;
    else throw ValidationError("NOISERANK_LOG must be one of error, info, debug");
  }
  logger->set_level(level);
  spdlog::set_default_logger(logger);
}

// The installed logger writes to the caller's stream, which may not outlive
// the call; the previous default logger is restored on exit.
class LoggerScope {
 public:
  ~LoggerScope() { spdlog::set_default_logger(previous_); }

 private:
  std::shared_ptr<spdlog::logger> previous_ = spdlog::default_logger();
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

InvertedIndex index_for(const std::string& index_dir, const DocumentStore& docs) {
  if (!index_dir.empty()) return InvertedIndex::load(index_dir);
  return InvertedIndex::build(docs);
}

struct TrainFlags {
  std::string config;
  std::size_t epochs = 0;
  double learning_rate = 0;
  double lambda_group = 0;
  std::size_t m_bags = 0;
  std::size_t group_size = 0;
  std::size_t top_k = 0;
  std::string sampler;
  std::uint64_t seed = 0;
  std::size_t max_passage_len = 0;
  std::size_t checkpoint_every = 0;
};

// Registers the TrainConfig flags. Defaults shown in --help are the
// TrainConfig defaults; only flags given on the command line override the
// config file.
void add_train_flags(CLI::App* cmd, TrainFlags& f, const TrainConfig& defaults, bool with_sampler) {
  f.epochs = defaults.epochs;
  f.learning_rate = defaults.learning_rate;
  f.lambda_group = defaults.lambda_group;
  f.m_bags = defaults.m_bags;
  f.group_size = defaults.group_size;
  f.top_k = defaults.top_k;
  f.sampler = to_string(defaults.sampler);
  f.seed = defaults.seed;
  f.max_passage_len = defaults.model.max_passage_len;
  f.checkpoint_every = defaults.checkpoint_every;
  cmd->add_option("--config", f.config, "key=value training config file; flags override it")
      ->check(CLI::ExistingFile);
  cmd->add_option("--epochs", f.epochs, "training epochs")->check(CLI::PositiveNumber);
  cmd->add_option("--learning-rate", f.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  cmd->add_option("--lambda-group", f.lambda_group, "weight of the group-wise loss")->check(CLI::NonNegativeNumber);
  cmd->add_option("--m-bags", f.m_bags, "number of rank-interval bags")->check(CLI::PositiveNumber);
  cmd->add_option("--group-size", f.group_size, "documents sampled per bag")->check(CLI::Range(2, 1 << 20));
  cmd->add_option("--k", f.top_k, "candidates per query (top_k)")->check(CLI::PositiveNumber);
  if (with_sampler)
    cmd->add_option("--sampler", f.sampler, "negative sampler")->check(CLI::IsMember({"bag", "random"}));
  cmd->add_option("--seed", f.seed, "seed for initialization, sampling and passages");
  cmd->add_option("--max-passage-len", f.max_passage_len, "tokens per passage window")->check(CLI::PositiveNumber);
  cmd->add_option("--checkpoint-every", f.checkpoint_every, "steps between periodic checkpoints (0 = off)");
}

TrainConfig resolve_train_config(CLI::App* cmd, const TrainFlags& f, TrainConfig cfg) {
  if (!f.config.empty()) cfg = load_train_config(f.config, cfg);
  auto given = [&](const char* name) { return cmd->count(name) > 0; };
  if (given("--epochs")) cfg.epochs = f.epochs;
  if (given("--learning-rate")) cfg.learning_rate = f.learning_rate;
  if (given("--lambda-group")) cfg.lambda_group = f.lambda_group;
  if (given("--m-bags")) cfg.m_bags = f.m_bags;
  if (given("--group-size")) cfg.group_size = f.group_size;
  if (given("--k")) cfg.top_k = f.top_k;
  if (cmd->get_option_no_throw("--sampler") != nullptr && given("--sampler")) cfg.sampler = parse_sampler(f.sampler);
  if (given("--seed")) cfg.seed = f.seed;
  if (given("--max-passage-len")) cfg.model.max_passage_len = f.max_passage_len;
  if (given("--checkpoint-every")) cfg.checkpoint_every = f.checkpoint_every;
  cfg.validate();
  return cfg;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage document ranking workbench: BM25 retrieval, bag-sampled contrastive reranking"};
  app.name("noiserank");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::size_t threads = 1;
  auto add_threads = [&](CLI::App* cmd) {
    cmd->add_option("--threads", threads, "worker threads for per-query work")->check(CLI::PositiveNumber);
  };

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus with unlabeled positives");
  std::string gen_out;
  std::uint64_t gen_seed = 7;
  SynthConfig synth;
  synth.max_passage_len = 64;
  double gen_dev_fraction = 0.25;
  gen->add_option("--out-dir", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--num-queries", synth.num_queries, "queries")->check(CLI::PositiveNumber);
  gen->add_option("--num-topics", synth.num_topics, "topics")->check(CLI::PositiveNumber);
  gen->add_option("--docs-per-query", synth.docs_per_query_topic, "documents generated per query");
  gen->add_option("--relevant-per-query", synth.relevant_per_query, "relevant documents per query (1 labeled)");
  gen->add_option("--vocab-size", synth.vocab_size, "vocabulary size");
  gen->add_option("--min-doc-tokens", synth.min_doc_tokens, "shortest document");
  gen->add_option("--max-doc-tokens", synth.max_doc_tokens, "longest document");
  gen->add_option("--max-passage-len", synth.max_passage_len, "passage window the corpus must exceed 4x");
  gen->add_option("--near-duplicate-noise", synth.near_duplicate_noise, "token redraw rate of hidden positives")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--dev-fraction", gen_dev_fraction, "share of queries held out for dev")
      ->check(CLI::Range(0.0, 1.0));

  // index
  auto* idx = app.add_subcommand("index", "build and save an inverted index");
  std::string docs_path, index_dir;
  idx->add_option("--docs", docs_path, "documents TSV")->required()->check(CLI::ExistingFile);
  idx->add_option("--index-dir", index_dir, "output index directory")->required();

  // retrieve
  auto* ret = app.add_subcommand("retrieve", "BM25 top-k retrieval to a run file");
  std::string queries_path, run_out, tag = "bm25";
  std::size_t k = 100;
  ret->add_option("--index-dir", index_dir, "index directory")->required()->check(CLI::ExistingDirectory);
  ret->add_option("--queries", queries_path, "queries TSV")->required()->check(CLI::ExistingFile);
  ret->add_option("--k", k, "documents per query")->check(CLI::PositiveNumber);
  ret->add_option("--run-out", run_out, "output run file")->required();
  ret->add_option("--tag", tag, "run tag");
  add_threads(ret);

  // train
  auto* trn = app.add_subcommand("train", "train the reranker");
  std::string qrels_path, dev_queries, dev_qrels, model_out, history_out, checkpoint_dir;
  TrainFlags tflags;
  trn->add_option("--docs", docs_path, "documents TSV")->required()->check(CLI::ExistingFile);
  trn->add_option("--index-dir", index_dir, "index directory (built from --docs when omitted)");
  trn->add_option("--queries", queries_path, "training queries TSV")->required()->check(CLI::ExistingFile);
  trn->add_option("--qrels", qrels_path, "training qrels")->required()->check(CLI::ExistingFile);
  trn->add_option("--dev-queries", dev_queries, "dev queries TSV")->required()->check(CLI::ExistingFile);
  trn->add_option("--dev-qrels", dev_qrels, "dev qrels")->required()->check(CLI::ExistingFile);
  trn->add_option("--model-out", model_out, "checkpoint of the best dev epoch")->required();
  trn->add_option("--history-out", history_out, "per-epoch history CSV");
  trn->add_option("--checkpoint-dir", checkpoint_dir, "directory for periodic checkpoints");
  add_train_flags(trn, tflags, TrainConfig{}, true);
  add_threads(trn);

  // rerank
  auto* rrk = app.add_subcommand("rerank", "rerank candidate lists with a trained model");
  std::string model_path, candidates_path;
  std::uint64_t seed = 1;
  std::size_t rerank_passage_len = ModelConfig{}.max_passage_len;
  std::string rerank_tag = "rerank";
  rrk->add_option("--model", model_path, "checkpoint")->required()->check(CLI::ExistingFile);
  rrk->add_option("--docs", docs_path, "documents TSV")->required()->check(CLI::ExistingFile);
  rrk->add_option("--index-dir", index_dir, "index directory (built from --docs when omitted)");
  rrk->add_option("--queries", queries_path, "queries TSV")->required()->check(CLI::ExistingFile);
  rrk->add_option("--candidates", candidates_path, "first-stage run file")->required()->check(CLI::ExistingFile);
  rrk->add_option("--run-out", run_out, "output run file")->required();
  rrk->add_option("--k", k, "candidates reranked per query")->check(CLI::PositiveNumber);
  rrk->add_option("--seed", seed, "training seed; fixes the inference passages");
  rrk->add_option("--max-passage-len", rerank_passage_len, "tokens per passage window (as in training)")
      ->check(CLI::PositiveNumber);
  rrk->add_option("--tag", rerank_tag, "run tag");
  add_threads(rrk);

  // eval
  auto* evl = app.add_subcommand("eval", "MRR@k of a run file");
  std::string run_path, report_out;
  evl->add_option("--run", run_path, "run file")->required()->check(CLI::ExistingFile);
  evl->add_option("--qrels", qrels_path, "qrels")->required()->check(CLI::ExistingFile);
  evl->add_option("--k", k, "cutoff")->check(CLI::PositiveNumber);
  evl->add_option("--report-out", report_out, "per-query CSV report");

  // experiment
  auto* exp = app.add_subcommand("experiment", "bag sampler + group loss vs random sampler on a synthetic corpus");
  ExperimentConfig ecfg;
  std::string exp_out;
  TrainFlags eflags;
  exp->add_option("--out-dir", exp_out, "output directory")->required();
  exp->add_option("--seeds", ecfg.num_seeds, "training seeds per arm")->check(CLI::PositiveNumber);
  exp->add_option("--corpus-seed", ecfg.corpus_seed, "synthetic corpus seed");
  exp->add_option("--num-queries", ecfg.synth.num_queries, "synthetic queries")->check(CLI::PositiveNumber);
  exp->add_option("--dev-fraction", ecfg.dev_fraction, "share of queries held out for dev")
      ->check(CLI::Range(0.0, 1.0));
  add_train_flags(exp, eflags, ecfg.train, false);
  add_threads(exp);

  // grad-check
  auto* grad = app.add_subcommand("grad-check", "finite-difference check of the loss gradient");
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  grad->add_option("--seed", seed, "seed of the toy corpus and parameters");
  grad->add_option("--epsilon", epsilon, "finite-difference step")->check(CLI::PositiveNumber);
  grad->add_option("--tolerance", tolerance, "largest accepted relative error")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  LoggerScope logger_scope;
  try {
    configure_logging(err);

    if (*gen) {
      if (!(gen_dev_fraction > 0.0 && gen_dev_fraction < 1.0)) throw ValidationError("--dev-fraction must lie in (0, 1)");
      const SyntheticCorpus c = generate_synthetic(synth, gen_seed);
      const QuerySplit split = split_queries(c.queries, gen_dev_fraction);
      std::filesystem::path dir(gen_out);
      std::filesystem::create_directories(dir);
      write_documents(c.documents, dir / "docs.tsv");
      write_queries(c.queries, dir / "queries.tsv");
      write_qrels(c.qrels, dir / "qrels.txt");
      write_hidden_truth(c.hidden, dir / "qrels.hidden");
      write_queries(split.train, dir / "queries.train.tsv");
      write_queries(split.dev, dir / "queries.dev.tsv");
      write_qrels(filter_qrels(c.qrels, split.train), dir / "qrels.train.txt");
      write_qrels(filter_qrels(c.qrels, split.dev), dir / "qrels.dev.txt");
      out << fmt::format("wrote {} documents, {} queries ({} train, {} dev) to {}\n", c.documents.size(),
                         c.queries.size(), split.train.size(), split.dev.size(), dir.string());
    } else if (*idx) {
      const DocumentStore docs = load_documents(docs_path);
      const InvertedIndex index = InvertedIndex::build(docs);
      index.save(index_dir);
      out << fmt::format("indexed {} documents, {} terms, avg length {:.2f}\n", index.doc_count(),
                         index.vocabulary().size(), index.avg_doc_length());
    } else if (*ret) {
      const InvertedIndex index = InvertedIndex::load(index_dir);
      const QuerySet queries = load_queries(queries_path);
      const auto lists = retrieve_all(index, queries, k, threads);
      write_run(run_from_candidates(lists, tag), run_out);
      out << fmt::format("retrieved {} queries to {}\n", lists.size(), run_out);
    } else if (*trn) {
      TrainConfig cfg = resolve_train_config(trn, tflags, TrainConfig{});
      cfg.threads = threads;
      const DocumentStore docs = load_documents(docs_path);
      const QuerySet train_q = load_queries(queries_path);
      const QuerySet dev_q = load_queries(dev_queries);
      const Qrels train_rel = load_qrels(qrels_path);
      const Qrels dev_rel = load_qrels(dev_qrels);
      validate_qrels(train_rel, docs);
      validate_qrels(dev_rel, docs);
      const InvertedIndex index = index_for(index_dir, docs);
      const QuerySet* sets[] = {&train_q, &dev_q};
      const ModelInputs inputs(index, docs, sets, cfg.model.max_passage_len);
      TrainingData data;
      data.inputs = &inputs;
      data.train_candidates = retrieve_all(index, train_q, cfg.top_k, threads);
      data.dev_candidates = retrieve_all(index, dev_q, cfg.top_k, threads);
      data.train_qrels = train_rel;
      data.dev_qrels = filter_qrels(dev_rel, dev_q);
      TrainHooks hooks;
      if (!checkpoint_dir.empty()) {
        std::filesystem::create_directories(checkpoint_dir);
        hooks.on_checkpoint = [&](const ScorerParams& p, std::size_t step) {
          save_params(p, std::filesystem::path(checkpoint_dir) / fmt::format("step-{:08}.ckpt", step));
        };
      }
      const TrainResult result = train(data, cfg, hooks);
      save_params(result.best, model_out);
      if (!history_out.empty()) write_text(history_out, format_history_csv(result.history));
      out << format_history_csv(result.history);
      out << fmt::format("best dev MRR@{} {:.6f} at epoch {}\n", cfg.top_k, result.best_dev_mrr, result.best_epoch);
    } else if (*rrk) {
      const ScorerParams params = load_params(model_path);
      const DocumentStore docs = load_documents(docs_path);
      const QuerySet queries = load_queries(queries_path);
      const InvertedIndex index = index_for(index_dir, docs);
      if (model_vocab_size(index) != params.dims.vocab_size)
        throw ValidationError(fmt::format("model vocabulary {} does not match the index ({})", params.dims.vocab_size,
                                          model_vocab_size(index)));
      const QuerySet* sets[] = {&queries};
      const ModelInputs inputs(index, docs, sets, rerank_passage_len);
      auto lists = candidates_from_run(read_run(candidates_path));
      for (auto& l : lists)
        if (l.entries.size() > k) l.entries.resize(k);
      const RunFile run = rerank(params, lists, inputs, passage_seed_for_epoch(seed, 0), rerank_tag, threads);
      write_run(run, run_out);
      out << fmt::format("reranked {} queries to {}\n", run.queries.size(), run_out);
    } else if (*evl) {
      const RunFile run = read_run(run_path);
      const Qrels qrels = load_qrels(qrels_path);
      const MetricReport report = mrr_at_k(run, qrels, k);
      out << format_report_text(report, run.tag.empty() ? "run" : run.tag);
      if (!report_out.empty()) write_text(report_out, format_report_csv(report));
    } else if (*exp) {
      ecfg.train = resolve_train_config(exp, eflags, ecfg.train);
      ecfg.synth.max_passage_len = ecfg.train.model.max_passage_len;
      ecfg.threads = threads;
      if (!(ecfg.dev_fraction > 0.0 && ecfg.dev_fraction < 1.0)) throw ValidationError("--dev-fraction must lie in (0, 1)");
      const ExperimentResult result = run_experiment(ecfg);
      write_experiment(result, exp_out);
      out << format_experiment_csv(result);
      out << format_experiment_summary(result);
    } else if (*grad) {
      const GradCheckResult g = run_grad_check(seed, epsilon);
      const auto& r = g.report;
      out << fmt::format("max relative error: {:.3e} ({}[{}]: analytic {:.6e}, numeric {:.6e}); {} batches x {} scalars\n",
                         r.max_relative_error, r.worst_tensor, r.worst_index, r.analytic, r.numeric, g.batches,
                         g.scalars_per_batch);
      return r.max_relative_error < tolerance ? 0 : 2;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace noiserank
