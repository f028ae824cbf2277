#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hlgen/entity_tokenizer.hpp"

namespace hlgen {

// Environment variable selecting the backend for make_recognizer_from_env.
inline constexpr const char* kNerBackendEnv = "HLGEN_NER_BACKEND";

class NullRecognizer final : public EntityRecognizer {
 public:
  std::vector<CharSpan> recognize(std::string_view) const override { return {}; }
};

// Dictionary backend: case- and punctuation-insensitive phrase matching on
// word boundaries. Reports every occurrence of every phrase.
class GazetteerRecognizer final : public EntityRecognizer {
 public:
  explicit GazetteerRecognizer(const std::vector<std::string>& phrases);
  static GazetteerRecognizer from_file(const std::filesystem::path& path);

  std::vector<CharSpan> recognize(std::string_view original_text) const override;

 private:
  // Phrases of two or more cleaned words, keyed by first word.
  std::unordered_map<std::string, std::vector<std::vector<std::string>>> by_first_word_;
};

// Heuristic backend: runs of two or more capitalized words ("Long
// Short-Term Memory", "KOMPSAT-2 Archive"), optionally joined by "of".
class CapitalizedPhraseRecognizer final : public EntityRecognizer {
 public:
  std::vector<CharSpan> recognize(std::string_view original_text) const override;
};

// Precomputed spans, e.g. exported from an external NER pipeline. File is
// JSON lines {"text": ..., "spans": [[begin, end], ...]} with offsets in
// Unicode code points; texts are matched exactly.
class SpanFileRecognizer final : public EntityRecognizer {
 public:
  explicit SpanFileRecognizer(const std::filesystem::path& path);

  std::vector<CharSpan> recognize(std::string_view original_text) const override;

 private:
  std::unordered_map<std::string, std::vector<std::pair<size_t, size_t>>> spans_by_text_;
};

// Backend spec: "none", "capitalized", "gazetteer:<file>", "spanfile:<file>".
std::unique_ptr<EntityRecognizer> make_recognizer(std::string_view spec);

// Reads HLGEN_NER_BACKEND; defaults to "capitalized".
std::string recognizer_spec_from_env();

}  // namespace hlgen
