#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "xmr/checkpoint.hpp"
#include "xmr/eval.hpp"
#include "xmr/index_io.hpp"
#include "xmr/pipeline.hpp"

namespace {

using namespace xmr;

// XMR_LOG_LEVEL: error, warn (default), info, debug. Logs go to stderr.
enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("XMR_LOG_LEVEL");
    const std::string v = env != nullptr ? env : "warn";
    if (v == "error") return LogLevel::Error;
    if (v == "info") return LogLevel::Info;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return level;
}

void log(LogLevel level, const std::string& message) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= log_level()) std::cerr << "[" << names[static_cast<int>(level)] << "] " << message << '\n';
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;

  RunConfig load() const {
    RunConfig c = config.empty() ? RunConfig{} : load_config(config);
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", common.seed, "seed, overrides the config");
}

std::vector<CorpusRecord> read_all(const std::vector<std::string>& paths) {
  std::vector<CorpusRecord> out;
  std::set<std::string> ids;
  for (const auto& path : paths) {
    for (auto& r : read_corpus(path)) {
      require(ids.insert(r.id).second, ErrorCode::Parse, path + ": duplicate id '" + r.id + "'");
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<PreparedSequence> text_passages(const std::vector<CorpusRecord>& corpus, const RunConfig& config,
                                            const std::set<Language>& only) {
  std::vector<PreparedSequence> out;
  for (const auto& r : corpus)
    if (r.text && (only.empty() || only.contains(r.language)))
      out.push_back(prepare_record(r, SequenceKind::Passage, config));
  return out;
}

std::uint64_t language_seed(std::uint64_t seed, const Language& lang) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (char c : lang) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return h;
}

// ---- train ----

struct TrainArgs {
  Common common;
  std::vector<std::string> corpus, queries;
  std::string triples, out, report, init, stage;
  std::vector<std::string> langs;
};

void cmd_train(const TrainArgs& a) {
  const RunConfig config = a.common.load();
  const auto corpus = read_all(a.corpus);
  const auto queries = read_all(a.queries);
  std::set<Language> corpus_languages;
  for (const auto& r : corpus)
    if (r.text) corpus_languages.insert(r.language);
  const std::set<Language> langs(a.langs.begin(), a.langs.end());
  for (const auto& l : langs)
    require(corpus_languages.contains(l), ErrorCode::UnknownLanguage, "language '" + l + "' has no text in the corpus");

  auto triples = [&](const ModularEncoderParams<double>&) {
    require(!a.triples.empty(), ErrorCode::InvalidArgument, "fine-tuning needs --triples");
    std::ifstream in(a.triples);
    require(in.good(), ErrorCode::Io, "cannot open " + a.triples);
    auto resolved = resolve_triples(read_triples(in, a.triples), queries, corpus, config);
    if (!langs.empty())
      std::erase_if(resolved, [&](const TrainingTriple& t) { return !langs.contains(t.query.language); });
    return resolved;
  };

  std::vector<LossPoint> report;
  ModularEncoderParams<double> p;
  const std::string stage = a.stage.empty() ? "all" : a.stage;
  if (stage == "all" || stage == "pretrain") {
    require(a.init.empty(), ErrorCode::Staging, "pretraining starts from fresh parameters; drop --init");
    // Without --stage, --lang only filters the fine-tuning triples.
    const std::set<Language>& chosen = langs.empty() || stage == "all" ? corpus_languages : langs;
    require(!chosen.empty(), ErrorCode::EmptyInput, "corpus has no text records to pretrain on");
    p = init_params<double>(config.encoder, std::vector<Language>(chosen.begin(), chosen.end()), config.seed);
    Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    log(LogLevel::Info, "pretraining " + std::to_string(config.steps.pretrain) + " steps");
    run_mlm(p, text_passages(corpus, config, chosen), config.steps.pretrain, config, rng, report);
    if (stage == "all" && config.steps.finetune > 0) {
      set_stage(p, Stage::Finetune);
      Rng frng(config.seed ^ 0xd1b54a32d192ed03ULL);
      log(LogLevel::Info, "fine-tuning " + std::to_string(config.steps.finetune) + " steps");
      run_finetune(p, triples(p), config.steps.finetune, config, frng, report);
    }
  } else if (stage == "finetune") {
    require(!a.init.empty(), ErrorCode::Staging, "fine-tuning needs a pretrained checkpoint (--init)");
    p = load_checkpoint(a.init);
    set_stage(p, Stage::Finetune);
    Rng rng(config.seed ^ 0xd1b54a32d192ed03ULL);
    run_finetune(p, triples(p), config.steps.finetune, config, rng, report);
  } else if (stage == "extend") {
    require(!a.init.empty(), ErrorCode::Staging, "extending needs a trained checkpoint (--init)");
    require(!langs.empty(), ErrorCode::InvalidArgument, "extend needs --lang naming the new language(s)");
    p = load_checkpoint(a.init);
    set_stage(p, Stage::Extend);
    for (const auto& l : langs) {
      if (!p.has_language(l)) add_language(p, l, language_seed(config.seed, l));
      Rng rng(language_seed(config.seed ^ 0x2545f4914f6cdd1dULL, l));
      run_mlm(p, text_passages(corpus, config, {l}), config.steps.extend, config, rng, report);
    }
  } else {
    fail(ErrorCode::InvalidArgument, "unknown stage '" + stage + "' (pretrain, finetune, extend)");
  }

  save_checkpoint(p, a.out);
  if (!a.report.empty()) {
    std::ofstream out(a.report, std::ios::trunc);
    require(out.good(), ErrorCode::Io, "cannot write " + a.report);
    write_loss_csv(out, report);
  }
  log(LogLevel::Info, "wrote " + a.out + " (stage " + std::string(stage_name(p.stage)) + ")");
}

// ---- index ----

struct IndexArgs {
  Common common;
  std::vector<std::string> corpus;
  std::string checkpoint, out;
};

void cmd_index(const IndexArgs& a) {
  const RunConfig config = a.common.load();
  const auto records = read_all(a.corpus);
  require(!records.empty(), ErrorCode::EmptyInput, "corpus is empty");
  std::optional<ModularEncoderParams<double>> params;
  if (!a.checkpoint.empty()) params = load_checkpoint(a.checkpoint);
  std::vector<Matrix<float>> embeddings;
  std::vector<std::string> names;
  for (const auto& r : records) {
    embeddings.push_back(record_embeddings(r, SequenceKind::Passage, config, params ? &*params : nullptr));
    names.push_back(r.id);
  }
  IndexBuildOptions options;
  options.seed = config.seed;
  options.sample_passages = config.sample_passages;
  auto index = build_index(embeddings, options);
  index.passage_names = std::move(names);
  const auto sizes = save_index(index, a.out);
  std::cout << "embeddings " << index.embedding_count() << '\n'
            << "centroids " << index.centroid_count() << '\n'
            << "bits_per_embedding " << index.bits_per_embedding() << '\n'
            << "index_bytes " << sizes.total() << '\n';
}

// ---- search ----

struct SearchArgs {
  Common common;
  std::string index, queries, checkpoint, out;
  std::optional<std::size_t> n_probe, candidate_k, k;
  bool exact = false, latency = false;
};

void cmd_search(const SearchArgs& a) {
  RunConfig config = a.common.load();
  const auto index = load_index(a.index);
  const auto queries = read_corpus(a.queries);
  std::optional<ModularEncoderParams<double>> params;
  if (!a.checkpoint.empty()) params = load_checkpoint(a.checkpoint);

  SearchParams sp = config.search;
  if (a.n_probe) {
    sp.n_probe = *a.n_probe;
  } else if (sp.n_probe > index.centroid_count()) {
    log(LogLevel::Warn, "n_probe " + std::to_string(sp.n_probe) + " exceeds |C| = " +
                            std::to_string(index.centroid_count()) + "; probing all centroids");
    sp.n_probe = index.centroid_count();
  }
  if (a.k) sp.final_k = *a.k;
  if (a.candidate_k) sp.candidate_k = *a.candidate_k;
  else sp.candidate_k = std::max(sp.candidate_k, sp.final_k);

  std::vector<Matrix<float>> decompressed;
  if (a.exact)
    for (PassageId p = 0; p < index.passage_count(); ++p) decompressed.push_back(index.decompress_passage(p));

  RunFile run;
  std::vector<double> latencies;
  for (const auto& q : queries) {
    const auto emb = record_embeddings(q, SequenceKind::Query, config, params ? &*params : nullptr);
    require(emb.cols() == index.dim(), ErrorCode::DimensionMismatch,
            "query '" + q.id + "' has dim " + std::to_string(emb.cols()) + " but the index has dim " +
                std::to_string(index.dim()));
    const auto start = std::chrono::steady_clock::now();
    const auto ranked = a.exact ? brute_force_search(emb, decompressed, sp.final_k) : search(emb, index, sp);
    latencies.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    auto& list = run.queries[q.id];
    for (const auto& r : ranked)
      list.push_back({index.passage_names.empty() ? std::to_string(r.passage) : index.passage_names[r.passage], r.score});
  }
  std::ofstream out(a.out, std::ios::trunc);
  require(out.good(), ErrorCode::Io, "cannot write " + a.out);
  write_run(out, run, a.exact ? "xmr-exact" : "xmr");
  if (a.latency && !latencies.empty()) {
    std::sort(latencies.begin(), latencies.end());
    double sum = 0;
    for (double l : latencies) sum += l;
    std::cerr << "queries " << latencies.size() << " mean_ms " << sum / static_cast<double>(latencies.size())
              << " p50_ms " << latencies[latencies.size() / 2] << " max_ms " << latencies.back() << '\n';
  }
}

// ---- eval ----

struct EvalArgs {
  std::string run, qrels;
  std::vector<std::string> metrics{"mrr@10", "recall@100"};
};

void cmd_eval(const EvalArgs& a) {
  std::ifstream run_in(a.run), qrels_in(a.qrels);
  require(run_in.good(), ErrorCode::Io, "cannot open " + a.run);
  require(qrels_in.good(), ErrorCode::Io, "cannot open " + a.qrels);
  const auto run = read_run(run_in, a.run);
  const auto qrels = read_qrels(qrels_in, a.qrels);
  for (const auto& spec : a.metrics) {
    const auto at = spec.find('@');
    const std::string name = spec.substr(0, at);
    std::size_t k = 0;
    if (at != std::string::npos) {
      try {
        k = std::stoul(spec.substr(at + 1));
      } catch (const std::exception&) {
        k = 0;
      }
    }
    require((name == "mrr" || name == "recall") && k >= 1, ErrorCode::InvalidArgument,
            "unknown metric '" + spec + "'; supported: mrr@K, recall@K");
    const auto report = name == "mrr" ? mrr_at_k(run, qrels, k) : recall_at_k(run, qrels, k);
    char value[32];
    std::snprintf(value, sizeof value, "%.4f", report.value);
    std::cout << spec << '\t' << value << '\n';
    if (!report.not_in_qrels.empty() || !report.no_relevant.empty())
      log(LogLevel::Warn, spec + ": evaluated " + std::to_string(report.evaluated) + " queries, skipped " +
                              std::to_string(report.not_in_qrels.size()) + " without judgments and " +
                              std::to_string(report.no_relevant.size()) + " without relevant passages");
  }
}

// Error output is one line: "E_CODE: message".
std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-vector late-interaction retrieval toolkit"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "pretrain, fine-tune or extend the toy encoder");
  add_common(t, train.common);
  t->add_option("--corpus", train.corpus, "passage records (JSONL)")->required();
  t->add_option("--queries", train.queries, "query records (JSONL)");
  t->add_option("--triples", train.triples, "`qid pos_pid neg_pid` lines");
  t->add_option("--out", train.out, "checkpoint to write")->required();
  t->add_option("--report", train.report, "loss curve CSV");
  t->add_option("--init", train.init, "checkpoint to continue from");
  t->add_option("--stage", train.stage, "pretrain, finetune or extend (default: pretrain then finetune)")
      ->check(CLI::IsMember({"pretrain", "finetune", "extend"}));
  t->add_option("--lang", train.langs, "languages to train (extend: the new language)");

  IndexArgs index;
  auto* i = app.add_subcommand("index", "build a compressed index");
  add_common(i, index.common);
  i->add_option("--corpus", index.corpus, "passages: JSONL text/embeddings or binary embedding block")->required();
  i->add_option("--checkpoint", index.checkpoint, "encoder for text records");
  i->add_option("--out", index.out, "index directory")->required();

  SearchArgs search_args;
  auto* s = app.add_subcommand("search", "search an index and write a TREC run");
  add_common(s, search_args.common);
  s->add_option("--index", search_args.index, "index directory")->required();
  s->add_option("--queries", search_args.queries, "queries: JSONL or binary embedding block")->required();
  s->add_option("--checkpoint", search_args.checkpoint, "encoder for text queries");
  s->add_option("--out", search_args.out, "run file to write")->required();
  s->add_option("--nprobe", search_args.n_probe, "centroids probed per query term");
  s->add_option("--candidate-k", search_args.candidate_k, "passages forwarded to exact re-ranking");
  s->add_option("--k", search_args.k, "results per query");
  s->add_flag("--exact", search_args.exact, "brute-force exact MaxSim over the decompressed corpus");
  s->add_flag("--latency", search_args.latency, "print a latency summary to stderr");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "score a run against qrels");
  e->add_option("--run", eval.run, "TREC run file")->required();
  e->add_option("--qrels", eval.qrels, "TREC qrels file")->required();
  e->add_option("--metrics", eval.metrics, "metrics such as mrr@10 recall@100")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    std::cerr << "E_USAGE: " << one_line(err.what()) << '\n';
    return 2;
  }

  try {
    if (*t) cmd_train(train);
    if (*i) cmd_index(index);
    if (*s) cmd_search(search_args);
    if (*e) cmd_eval(eval);
  } catch (const xmr::Error& err) {
    std::cerr << error_code_name(err.code()) << ": " << one_line(err.what()) << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "E_INTERNAL: " << one_line(err.what()) << '\n';
    return 1;
  }
  return 0;
}
