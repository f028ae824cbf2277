#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hlgen {

// One paper record.
struct Document {
  std::string doc_id;
  std::string title;
  std::string abstract;
  std::string introduction;
  std::string conclusion;
  std::vector<std::string> highlights;
  std::vector<std::string> keywords;
};

enum class InputMode { kAbstract, kAbstractConclusion, kIntroductionConclusion };

std::string_view input_mode_name(InputMode mode);
InputMode parse_input_mode(std::string_view name);

// Source truncation limit in tokens for a mode.
int source_token_limit(InputMode mode);
inline constexpr int kTargetTokenLimit = 100;

struct Example {
  std::string doc_id;
  std::string source_text;
  std::string target_text;
  InputMode mode = InputMode::kAbstract;
};

struct CorpusSplit {
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test;
  uint64_t split_seed = 0;
};

struct IngestResult {
  std::vector<Document> documents;
  size_t skipped = 0;
  std::vector<std::string> diagnostics;
};

// Reads one JSON object per line. Records without an abstract or highlights,
// malformed lines and duplicate ids are skipped with a diagnostic each.
IngestResult ingest_corpus(const std::filesystem::path& path);
IngestResult ingest_corpus_stream(std::istream& in, std::string_view source_name);

// Applies clean_text to every section and bullet.
Document clean_document(const Document& doc);

struct BuildResult {
  std::vector<Example> examples;
  size_t skipped = 0;
  std::vector<std::string> diagnostics;
};

// Section texts feeding the source for a mode, in concatenation order.
std::vector<std::string_view> source_sections(const Document& doc, InputMode mode);

// Bullets joined with " . " so the separator is its own token.
std::string join_highlights(const std::vector<std::string>& bullets);

BuildResult build_examples(const std::vector<Document>& cleaned_docs, InputMode mode);

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

SplitManifest read_split_manifest(const std::filesystem::path& path);
void write_split_manifest(const SplitManifest& manifest, const std::filesystem::path& path);

// Seeded shuffle into 8116:1017:1014 proportions, or an explicit manifest
// when one is given. Requires at least three examples.
CorpusSplit split_corpus(const std::vector<Example>& examples, uint64_t split_seed,
                         const std::optional<SplitManifest>& manifest = std::nullopt);

void write_examples_jsonl(const std::vector<Example>& examples,
                          const std::filesystem::path& path);
std::vector<Example> read_examples_jsonl(const std::filesystem::path& path);

}  // namespace hlgen
