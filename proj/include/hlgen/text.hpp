#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace hlgen {

// Sentence separator token placed between highlight bullets in target text.
inline constexpr std::string_view kSentenceSeparator = ".";

// Cleaned text plus, for every output byte, the byte offset in the raw input
// that produced it. Used to align recognizer spans to cleaned tokens.
struct CleanedText {
  std::string text;
  std::vector<size_t> source_offset;
};

// Lowercases, folds accented Latin letters to ASCII, keeps letters and
// digits, maps every other character to a single space, collapses
// whitespace runs and trims. Idempotent.
std::string clean_text(std::string_view raw);
CleanedText clean_text_aligned(std::string_view raw);

// A whitespace token of some text with its byte range [begin, end).
struct TokenRange {
  size_t begin = 0;
  size_t end = 0;
};

std::vector<std::string> split_whitespace(std::string_view text);
std::vector<TokenRange> whitespace_token_ranges(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Splits "a b . c d" on separator tokens into {"a b", "c d"}; empty
// sentences are dropped.
std::vector<std::string> split_sentences(std::string_view text);

// Display form: "a b . c" -> "a b. c."
std::string format_sentences(std::string_view text);

// UTF-8 helpers. Invalid sequences decode as U+FFFD, one byte at a time.
char32_t decode_utf8(std::string_view s, size_t& pos);
void append_utf8(std::string& out, char32_t cp);
std::vector<size_t> codepoint_byte_offsets(std::string_view s);

}  // namespace hlgen
