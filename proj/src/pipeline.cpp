#include "hlgen/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <unordered_map>

#include "hlgen/beam_decoder.hpp"
#include "hlgen/checkpoint.hpp"
#include "hlgen/corpus.hpp"
#include "hlgen/error.hpp"
#include "hlgen/hash.hpp"
#include "hlgen/log.hpp"
#include "hlgen/metrics.hpp"
#include "hlgen/recognizers.hpp"
#include "hlgen/text.hpp"
#include "hlgen/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace hlgen {
namespace {

using nlohmann::json;

const char* const kSplits[] = {"train", "val", "test"};

// Advisory lock on the workdir, released when the process exits.
class WorkdirLock {
 public:
  explicit WorkdirLock(const fs::path& workdir) {
    std::error_code ec;
    fs::create_directories(workdir, ec);
    if (ec) throw Error(ErrorKind::kInput, "cannot create workdir " + workdir.string());
    const fs::path path = workdir / ".lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw Error(ErrorKind::kInput, "cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw Error(ErrorKind::kUsage,
                  "workdir " + workdir.string() + " is in use by another command");
    }
  }
  ~WorkdirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  int fd_ = -1;
};

void print_config(const char* command, const RunConfig& cfg, std::ostream& out) {
  out << "# " << command << "\n" << describe_config(cfg) << "\n";
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kMissingArtifact,
                std::string("missing ") + what + " " + path.string());
  }
}

std::string recognizer_spec(const RunConfig& cfg) {
  return cfg.ner_backend.empty() ? recognizer_spec_from_env() : cfg.ner_backend;
}

json spans_to_json(const std::vector<EntitySpan>& spans) {
  json out = json::array();
  for (const EntitySpan& s : spans) out.push_back({s.start, s.end});
  return out;
}

std::vector<EntitySpan> spans_from_json(const json& j) {
  std::vector<EntitySpan> spans;
  for (const json& pair : j) {
    EntitySpan s;
    s.start = pair.at(0).get<int>();
    s.end = pair.at(1).get<int>();
    spans.push_back(s);
  }
  return spans;
}

int token_count(std::string_view text) { return static_cast<int>(split_whitespace(text).size()); }

// Spans over the cleaned source (sections joined by one space) and the
// cleaned target (bullets joined by separator tokens).
CachedSpans detect_document_spans(const Document& raw, const Document& cleaned, InputMode mode,
                                  const EntityRecognizer& recognizer) {
  CachedSpans spans;
  const auto raw_sections = source_sections(raw, mode);
  const auto clean_sections = source_sections(cleaned, mode);
  int offset = 0;
  for (size_t k = 0; k < raw_sections.size(); ++k) {
    for (const EntitySpan& s : offset_spans(detect_entities(raw_sections[k], recognizer), offset)) {
      spans.source.push_back(s);
    }
    offset += token_count(clean_sections[k]);
  }
  offset = 0;
  // Bullets that clean to nothing were dropped from the target text.
  for (const std::string& bullet : raw.highlights) {
    const int words = token_count(clean_text(bullet));
    if (words == 0) continue;
    for (const EntitySpan& s : offset_spans(detect_entities(bullet, recognizer), offset)) {
      spans.target.push_back(s);
    }
    offset += words + 1;
  }
  return spans;
}

std::unordered_map<std::string, CachedSpans> read_span_cache(const fs::path& path) {
  require_file(path, "entity span cache");
  std::ifstream in(path, std::ios::binary);
  std::unordered_map<std::string, CachedSpans> cache;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      cache[j.at("id").get<std::string>()] = {spans_from_json(j.at("source")),
                                              spans_from_json(j.at("target"))};
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kData, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cache;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kInput, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kInput, "short write on " + path.string());
}

std::vector<EncodedExample> encode_all(const std::vector<PreparedTokens>& tokens,
                                       const Vocabulary& vocab, const RunConfig& cfg) {
  std::vector<EncodedExample> encoded;
  encoded.reserve(tokens.size());
  for (const PreparedTokens& t : tokens) {
    encoded.push_back(encode_example(t.source, t.target, vocab,
                                     static_cast<size_t>(cfg.max_target_len)));
  }
  return encoded;
}

std::string decode_one(const PreparedTokens& tokens, const Vocabulary& vocab,
                       const Checkpoint& ckpt, const RunConfig& cfg) {
  const EncodedExample ex =
      encode_example(tokens.source, tokens.target, vocab, static_cast<size_t>(cfg.max_target_len));
  if (ex.source_ids.empty()) return "";
  const PointerGeneratorScorer scorer(ckpt.params, ckpt.hp, ex);
  const Hypothesis best = beam_search(scorer, {cfg.beam_width, cfg.max_decode_length});
  return ids_to_text(best.ids, vocab, ex.oov_tokens);
}

std::string format_rate(double v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

WorkdirLayout::WorkdirLayout(const RunConfig& cfg) {
  const fs::path mode_dir = cfg.workdir / std::string(input_mode_name(cfg.mode));
  prepared_dir = mode_dir / "prepared";
  variant_dir = mode_dir / std::string(variant_name(cfg.variant));
  report_tsv = cfg.workdir / "report.tsv";
  report_txt = cfg.workdir / "report.txt";
  report_json = cfg.workdir / "report.json";
}

fs::path WorkdirLayout::split_file(const std::string& split) const {
  return prepared_dir / (split + ".jsonl");
}
fs::path WorkdirLayout::manifest_file() const { return prepared_dir / "manifest.json"; }
fs::path WorkdirLayout::split_manifest_file() const { return prepared_dir / "split.txt"; }
fs::path WorkdirLayout::span_cache_file() const { return prepared_dir / "spans.jsonl"; }
fs::path WorkdirLayout::vocab_file() const { return variant_dir / "vocab.tsv"; }
fs::path WorkdirLayout::checkpoint_file() const { return variant_dir / "checkpoint.bin"; }
fs::path WorkdirLayout::loss_curve_file() const { return variant_dir / "loss_curve.tsv"; }
fs::path WorkdirLayout::decode_file() const { return variant_dir / "decode.jsonl"; }

std::vector<PreparedTokens> load_prepared_tokens(const RunConfig& cfg, const std::string& split) {
  const WorkdirLayout layout(cfg);
  const std::vector<Example> examples = read_examples_jsonl(layout.split_file(split));
  std::unordered_map<std::string, CachedSpans> cache;
  const bool ner = variant_uses_ner(cfg.variant);
  if (ner) cache = read_span_cache(layout.span_cache_file());

  const size_t source_limit = static_cast<size_t>(effective_source_len(cfg));
  const size_t target_limit = static_cast<size_t>(cfg.max_target_len);
  std::vector<PreparedTokens> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) {
    CachedSpans spans;
    if (ner) {
      const auto it = cache.find(ex.doc_id);
      if (it == cache.end()) {
        throw Error(ErrorKind::kData, "span cache " + layout.span_cache_file().string() +
                                          " has no entry for " + ex.doc_id);
      }
      spans = it->second;
    }
    PreparedTokens t;
    t.doc_id = ex.doc_id;
    t.source = truncate(tokenize_and_merge(ex.source_text, spans.source), source_limit);
    t.target = truncate(tokenize_and_merge(ex.target_text, spans.target), target_limit);
    t.reference = ex.target_text;
    out.push_back(std::move(t));
  }
  return out;
}

void cmd_prepare(const RunConfig& cfg, std::ostream& out) {
  print_config("prepare", cfg, out);
  if (cfg.corpus.empty()) throw Error(ErrorKind::kUsage, "prepare needs --corpus");
  const WorkdirLock lock(cfg.workdir);
  const WorkdirLayout layout(cfg);
  if (fs::exists(layout.prepared_dir) && !fs::is_empty(layout.prepared_dir)) {
    if (!cfg.force) {
      throw Error(ErrorKind::kUsage, "prepared data already exists in " +
                                         layout.prepared_dir.string() + " (use --force)");
    }
    fs::remove_all(layout.prepared_dir);
  }

  const IngestResult ingested = ingest_corpus(cfg.corpus);
  for (const std::string& d : ingested.diagnostics) log_warning(d);
  std::vector<Document> cleaned;
  cleaned.reserve(ingested.documents.size());
  for (const Document& doc : ingested.documents) cleaned.push_back(clean_document(doc));
  const BuildResult built = build_examples(cleaned, cfg.mode);
  for (const std::string& d : built.diagnostics) log_warning(d);

  std::optional<SplitManifest> manifest;
  if (!cfg.split_manifest.empty()) manifest = read_split_manifest(cfg.split_manifest);
  const CorpusSplit split = split_corpus(built.examples, cfg.seed, manifest);

  fs::create_directories(layout.prepared_dir);
  write_examples_jsonl(split.train, layout.split_file("train"));
  write_examples_jsonl(split.validation, layout.split_file("val"));
  write_examples_jsonl(split.test, layout.split_file("test"));
  SplitManifest ids;
  for (const Example& ex : split.train) ids.train.push_back(ex.doc_id);
  for (const Example& ex : split.validation) ids.validation.push_back(ex.doc_id);
  for (const Example& ex : split.test) ids.test.push_back(ex.doc_id);
  write_split_manifest(ids, layout.split_manifest_file());

  // Entity spans are detected once here and reused by every NER variant.
  const std::string backend = recognizer_spec(cfg);
  const auto recognizer = make_recognizer(backend);
  std::unordered_map<std::string, size_t> doc_index;
  for (size_t k = 0; k < ingested.documents.size(); ++k) doc_index.emplace(ingested.documents[k].doc_id, k);
  std::ofstream spans_out(layout.span_cache_file(), std::ios::binary | std::ios::trunc);
  size_t entity_count = 0;
  for (const auto* part : {&split.train, &split.validation, &split.test}) {
    for (const Example& ex : *part) {
      const size_t k = doc_index.at(ex.doc_id);
      const CachedSpans spans =
          detect_document_spans(ingested.documents[k], cleaned[k], cfg.mode, *recognizer);
      entity_count += spans.source.size() + spans.target.size();
      spans_out << json{{"id", ex.doc_id},
                        {"source", spans_to_json(spans.source)},
                        {"target", spans_to_json(spans.target)}}
                       .dump()
                << '\n';
    }
  }
  spans_out.close();
  if (!spans_out) throw Error(ErrorKind::kInput, "cannot write " + layout.span_cache_file().string());

  const json summary = {{"corpus", cfg.corpus.string()},
                        {"mode", std::string(input_mode_name(cfg.mode))},
                        {"seed", cfg.seed},
                        {"records_read", ingested.documents.size() + ingested.skipped},
                        {"records_skipped", ingested.skipped},
                        {"examples_skipped", built.skipped},
                        {"examples", built.examples.size()},
                        {"train", split.train.size()},
                        {"val", split.validation.size()},
                        {"test", split.test.size()},
                        {"ner_backend", backend},
                        {"entity_spans", entity_count}};
  write_text_file(layout.manifest_file(), summary.dump(2) + "\n");
  out << "prepared " << built.examples.size() << " examples (train " << split.train.size()
      << ", val " << split.validation.size() << ", test " << split.test.size() << "); skipped "
      << ingested.skipped << " records and " << built.skipped << " examples\n";
}

void cmd_vocab(const RunConfig& cfg, std::ostream& out) {
  print_config("vocab", cfg, out);
  const WorkdirLock lock(cfg.workdir);
  const WorkdirLayout layout(cfg);
  const auto tokens = load_prepared_tokens(cfg, "train");
  std::vector<TokenSequence> sequences;
  for (const PreparedTokens& t : tokens) {
    sequences.push_back(t.source);
    sequences.push_back(t.target);
  }
  const Vocabulary vocab = build_vocabulary(sequences, static_cast<size_t>(cfg.max_vocab_size));
  fs::create_directories(layout.variant_dir);
  vocab.save(layout.vocab_file());
  out << "vocabulary of " << vocab.size() << " tokens written to " << layout.vocab_file().string()
      << " (fingerprint " << hex64(vocab.fingerprint()) << ")\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  print_config("train", cfg, out);
  const WorkdirLock lock(cfg.workdir);
  const WorkdirLayout layout(cfg);
  const Vocabulary vocab = Vocabulary::load(layout.vocab_file());
  const auto train_set = encode_all(load_prepared_tokens(cfg, "train"), vocab, cfg);
  const auto val_set = encode_all(load_prepared_tokens(cfg, "val"), vocab, cfg);
  const Hyperparams hp = model_hyperparams(cfg, vocab.size());

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  TrainOutputs outputs;
  outputs.checkpoint_path = layout.checkpoint_file();
  outputs.loss_curve_path = layout.loss_curve_file();
  outputs.on_validate = [&](const LossCurvePoint& p) {
    out << "step " << p.step << " phase " << p.phase << " lambda " << p.coverage_weight
        << " train_loss " << std::setprecision(6) << p.train_loss << " val_loss "
        << p.validation_loss << '\n'
        << std::flush;
  };
  fs::remove(layout.loss_curve_file());
  fs::remove(layout.checkpoint_file());
  const TrainResult result = train(train_set, val_set, hp, tc, vocab.fingerprint(), outputs);
  if (!fs::exists(layout.checkpoint_file())) save_checkpoint(result.best, layout.checkpoint_file());
  if (result.diverged) {
    throw Error(ErrorKind::kDivergence, "training diverged at " + result.divergence_reason +
                                            "; last good checkpoint kept at " +
                                            layout.checkpoint_file().string());
  }
  out << "best checkpoint at step " << result.best.step << " (validation loss "
      << result.best.best_validation_loss << ") written to " << layout.checkpoint_file().string()
      << '\n';
}

void cmd_decode(const RunConfig& cfg, std::ostream& out) {
  print_config("decode", cfg, out);
  const WorkdirLock lock(cfg.workdir);
  const WorkdirLayout layout(cfg);
  const Vocabulary vocab = Vocabulary::load(layout.vocab_file());
  require_file(layout.checkpoint_file(), "checkpoint");
  const Checkpoint ckpt = load_checkpoint(layout.checkpoint_file(), vocab.fingerprint());
  if (ckpt.hp.coverage_enabled != variant_uses_coverage(cfg.variant)) {
    log_warning("checkpoint coverage setting does not match variant " +
                std::string(variant_name(cfg.variant)));
  }
  std::vector<DecodeRecord> records;
  for (const PreparedTokens& t : load_prepared_tokens(cfg, cfg.decode_split)) {
    records.push_back({t.doc_id, std::string(input_mode_name(cfg.mode)),
                       std::string(variant_name(cfg.variant)), decode_one(t, vocab, ckpt, cfg),
                       t.reference});
  }
  write_decode_records(records, layout.decode_file());
  out << "decoded " << records.size() << " " << cfg.decode_split << " examples to "
      << layout.decode_file().string() << '\n';
}

void cmd_eval(const RunConfig& cfg, const std::vector<fs::path>& decode_files, std::ostream& out) {
  print_config("eval", cfg, out);
  const WorkdirLock lock(cfg.workdir);
  const WorkdirLayout layout(cfg);
  std::vector<fs::path> files = decode_files;
  if (files.empty()) {
    for (InputMode mode : {InputMode::kAbstract, InputMode::kAbstractConclusion,
                           InputMode::kIntroductionConclusion}) {
      for (Variant v : kAllVariants) {
        RunConfig c = cfg;
        c.mode = mode;
        c.variant = v;
        const fs::path f = WorkdirLayout(c).decode_file();
        if (fs::exists(f)) files.push_back(f);
      }
    }
    if (files.empty()) require_file(layout.decode_file(), "decode file");
  }
  std::vector<DecodeRecord> records;
  for (const fs::path& f : files) {
    auto part = read_decode_records(f);
    if (part.empty()) throw Error(ErrorKind::kData, "decode file " + f.string() + " is empty");
    records.insert(records.end(), part.begin(), part.end());
  }
  std::unique_ptr<TableEmbedder> embedder;
  if (!cfg.embeddings.empty()) embedder = TableEmbedder::from_file(cfg.embeddings);
  EvalOptions options;
  options.embedder = embedder.get();
  options.resamples = cfg.bootstrap_resamples;
  options.seed = cfg.seed;
  const MetricReport report = evaluate_records(records, options);
  write_text_file(layout.report_tsv, report_tsv(report));
  write_text_file(layout.report_json, report_json(report));
  const std::string table = report_table(report);
  write_text_file(layout.report_txt, table);
  out << table;
}

void cmd_casestudy(const RunConfig& cfg, std::ostream& out) {
  print_config("casestudy", cfg, out);
  if (cfg.doc_id.empty()) throw Error(ErrorKind::kUsage, "casestudy needs --doc-id");
  const WorkdirLock lock(cfg.workdir);
  const WorkdirLayout layout(cfg);

  std::string split_of_doc;
  std::string reference;
  for (const char* split : kSplits) {
    for (const Example& ex : read_examples_jsonl(layout.split_file(split))) {
      if (ex.doc_id == cfg.doc_id) {
        split_of_doc = split;
        reference = ex.target_text;
      }
    }
  }
  if (split_of_doc.empty()) {
    throw Error(ErrorKind::kData, "unknown doc_id " + cfg.doc_id + " in " +
                                      layout.prepared_dir.string());
  }

  out << "== Reference highlights (" << cfg.doc_id << ", " << split_of_doc << " split)\n"
      << format_sentences(reference) << "\n\n";
  for (Variant v : kAllVariants) {
    RunConfig c = cfg;
    c.variant = v;
    const WorkdirLayout vl(c);
    out << "== " << variant_label(variant_name(v)) << '\n';
    std::string generated;
    try {
      require_file(vl.checkpoint_file(), "checkpoint");
      const Vocabulary vocab = Vocabulary::load(vl.vocab_file());
      const Checkpoint ckpt = load_checkpoint(vl.checkpoint_file(), vocab.fingerprint());
      for (const PreparedTokens& t : load_prepared_tokens(c, split_of_doc)) {
        if (t.doc_id == cfg.doc_id) generated = decode_one(t, vocab, ckpt, c);
      }
    } catch (const Error& e) {
      out << "missing (" << e.what() << ")\n\n";
      continue;
    }
    const RepetitionReport rep = repetition_report(generated);
    out << format_sentences(generated) << '\n'
        << "repetition: duplicate 1-gram " << format_rate(rep.duplicate_rate[0])
        << ", 2-gram " << format_rate(rep.duplicate_rate[1]) << ", 3-gram "
        << format_rate(rep.duplicate_rate[2]) << ", repeated sentences "
        << rep.repeated_sentences << "\n\n";
  }
}

}  // namespace hlgen
