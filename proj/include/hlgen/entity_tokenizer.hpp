#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hlgen/text.hpp"

namespace hlgen {

// Byte range [begin, end) in original (pre-cleaning) text.
struct CharSpan {
  size_t begin = 0;
  size_t end = 0;
};

// Token range [start, end) over the whitespace tokens of cleaned text.
struct EntitySpan {
  int start = 0;
  int end = 0;
  std::string surface;

  int length() const { return end - start; }
  friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
};

// Named-entity backend. Given original text, returns byte-offset spans.
// Entity types are not part of the contract. Implementations may throw;
// detect_entities degrades to no spans in that case.
class EntityRecognizer {
 public:
  virtual ~EntityRecognizer() = default;
  virtual std::vector<CharSpan> recognize(std::string_view original_text) const = 0;
};

struct TokenSequence {
  std::vector<std::string> tokens;
  std::vector<bool> is_entity;

  size_t size() const { return tokens.size(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// Leftmost-longest: spans ordered by (start, longer first); a span is kept
// when it does not overlap any span kept before it. Duplicates collapse.
std::vector<EntitySpan> resolve_overlaps(std::vector<EntitySpan> spans);

// Maps recognizer byte spans onto the whitespace tokens of cleaned text. A
// span survives only if every cleaned token it touches lies fully inside it.
std::vector<EntitySpan> align_spans(const CleanedText& cleaned,
                                    std::string_view original_text,
                                    const std::vector<CharSpan>& char_spans);

// Runs the recognizer on original-case text, aligns to clean_text(text)
// tokens and resolves overlaps.
std::vector<EntitySpan> detect_entities(std::string_view original_text,
                                        const EntityRecognizer& recognizer);

// Replaces each span's tokens with one space-joined token. Spans must be
// resolved and in range; violations throw ErrorKind::kInternal.
TokenSequence tokenize_and_merge(std::string_view clean, const std::vector<EntitySpan>& spans);

TokenSequence truncate(const TokenSequence& seq, size_t limit);

// Expands merged tokens back to plain words (whitespace-normalized).
std::string unmerge_for_eval(const std::vector<std::string>& tokens);
std::string unmerge_for_eval(std::string_view text_with_merged_tokens);

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kStartId = 2;
inline constexpr int kStopId = 3;
inline constexpr int kNumSpecialTokens = 4;
inline constexpr std::string_view kUnkToken = "[UNK]";

using TokenCounts = std::unordered_map<std::string, uint64_t>;

void count_tokens(const TokenSequence& seq, TokenCounts& counts);

class Vocabulary {
 public:
  Vocabulary();

  // Keeps the (max_size - 4) most frequent tokens, ties broken by byte-wise
  // lexicographic order.
  static Vocabulary from_counts(const TokenCounts& counts, size_t max_size);

  int id_of(std::string_view token) const;  // kUnkId when absent
  bool contains(std::string_view token) const;
  const std::string& token_of(int id) const;
  uint64_t count_of(int id) const { return counts_.at(static_cast<size_t>(id)); }
  int size() const { return static_cast<int>(id_to_token_.size()); }

  // Lines "token<TAB>count", frequency-descending, specials implied.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  std::string serialize() const;

  // Stable hash of the serialized vocabulary.
  uint64_t fingerprint() const;

 private:
  void add(std::string token, uint64_t count);

  std::vector<std::string> id_to_token_;
  std::vector<uint64_t> counts_;
  std::unordered_map<std::string, int> token_to_id_;
};

Vocabulary build_vocabulary(const std::vector<TokenSequence>& sequences,
                            size_t max_size = 50000);

struct EncodedExample {
  std::vector<int> source_ids;
  std::vector<int> source_ids_extended;
  std::vector<std::string> oov_tokens;
  std::vector<int> decoder_input_ids;
  std::vector<int> target_ids_extended;

  int oov_count() const { return static_cast<int>(oov_tokens.size()); }
  friend bool operator==(const EncodedExample&, const EncodedExample&) = default;
};

EncodedExample encode_example(const TokenSequence& source, const TokenSequence& target,
                              const Vocabulary& vocab, size_t max_target_len = 100);

// Inverse lookup over vocab plus per-example OOV table.
std::string extended_token(int id, const Vocabulary& vocab,
                           const std::vector<std::string>& oov_tokens);

// Shifts token indices of spans by offset.
std::vector<EntitySpan> offset_spans(const std::vector<EntitySpan>& spans, int offset);

}  // namespace hlgen
