#include "hlgen/recognizers.hpp"

#include <locale.h>
#include <wctype.h>

#include <cstdlib>
#include <fstream>

#include "hlgen/error.hpp"
#include "hlgen/text.hpp"
#include "json.hpp"

namespace hlgen {
namespace {

struct CleanWord {
  std::string word;
  CharSpan origin;
};

std::vector<CleanWord> clean_words(std::string_view original) {
  const CleanedText cleaned = clean_text_aligned(original);
  std::vector<CleanWord> words;
  for (const TokenRange& r : whitespace_token_ranges(cleaned.text)) {
    CleanWord w;
    w.word = cleaned.text.substr(r.begin, r.end - r.begin);
    w.origin.begin = cleaned.source_offset[r.begin];
    size_t last = cleaned.source_offset[r.end - 1];
    decode_utf8(original, last);
    w.origin.end = last;
    words.push_back(std::move(w));
  }
  return words;
}

bool is_upper_start(std::string_view word) {
  size_t pos = 0;
  while (pos < word.size()) {
    const char32_t cp = decode_utf8(word, pos);
    if (cp < 0x80) {
      if (cp >= 'A' && cp <= 'Z') return true;
      if ((cp >= 'a' && cp <= 'z') || (cp >= '0' && cp <= '9')) return false;
      continue;  // skip leading punctuation such as '('
    }
    return iswupper(static_cast<wint_t>(cp)) != 0;
  }
  return false;
}

bool ends_phrase(std::string_view raw_word) {
  if (raw_word.empty()) return false;
  const char last = raw_word.back();
  return last == '.' || last == ',' || last == ';' || last == ':' || last == ')' ||
         last == '!' || last == '?' || last == '"';
}

bool is_sentence_opener(std::string_view word) {
  static const char* kOpeners[] = {"The", "This", "These", "That", "We", "Our", "In",
                                   "A",   "An",   "It",    "Its",  "For", "On", "To"};
  for (const char* w : kOpeners) {
    if (word == w) return true;
  }
  return false;
}

}  // namespace

GazetteerRecognizer::GazetteerRecognizer(const std::vector<std::string>& phrases) {
  for (const std::string& phrase : phrases) {
    std::vector<std::string> words = split_whitespace(clean_text(phrase));
    if (words.size() < 2) continue;
    by_first_word_[words.front()].push_back(std::move(words));
  }
}

GazetteerRecognizer GazetteerRecognizer::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot read gazetteer " + path.string());
  std::vector<std::string> phrases;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] != '#') phrases.push_back(line);
  }
  return GazetteerRecognizer(phrases);
}

std::vector<CharSpan> GazetteerRecognizer::recognize(std::string_view original_text) const {
  const std::vector<CleanWord> words = clean_words(original_text);
  std::vector<CharSpan> spans;
  for (size_t i = 0; i < words.size(); ++i) {
    auto it = by_first_word_.find(words[i].word);
    if (it == by_first_word_.end()) continue;
    for (const std::vector<std::string>& phrase : it->second) {
      if (i + phrase.size() > words.size()) continue;
      bool match = true;
      for (size_t k = 1; k < phrase.size() && match; ++k) {
        match = words[i + k].word == phrase[k];
      }
      if (match) spans.push_back({words[i].origin.begin, words[i + phrase.size() - 1].origin.end});
    }
  }
  return spans;
}

std::vector<CharSpan> CapitalizedPhraseRecognizer::recognize(std::string_view text) const {
  struct RawWord {
    std::string_view text;
    size_t begin;
    size_t end;
  };
  std::vector<RawWord> raw;
  for (const TokenRange& r : whitespace_token_ranges(text)) {
    raw.push_back({text.substr(r.begin, r.end - r.begin), r.begin, r.end});
  }

  std::vector<CharSpan> spans;
  bool sentence_start = true;
  size_t i = 0;
  while (i < raw.size()) {
    if (!is_upper_start(raw[i].text) || (sentence_start && is_sentence_opener(raw[i].text))) {
      sentence_start = ends_phrase(raw[i].text) && raw[i].text.back() != ',';
      ++i;
      continue;
    }
    size_t j = i;  // last capitalized word of the run
    size_t count = 1;
    while (!ends_phrase(raw[j].text) && j + 1 < raw.size()) {
      if (is_upper_start(raw[j + 1].text)) {
        ++j;
        ++count;
      } else if (raw[j + 1].text == "of" && j + 2 < raw.size() &&
                 !ends_phrase(raw[j + 1].text) && is_upper_start(raw[j + 2].text)) {
        j += 2;
        ++count;
      } else {
        break;
      }
    }
    if (count >= 2) spans.push_back({raw[i].begin, raw[j].end});
    sentence_start = ends_phrase(raw[j].text) && raw[j].text.back() != ',';
    i = j + 1;
  }
  // Strip surrounding punctuation so spans cover only word characters.
  for (CharSpan& s : spans) {
    while (s.begin < s.end && (text[s.begin] == '(' || text[s.begin] == '"')) ++s.begin;
    while (s.end > s.begin && ends_phrase(text.substr(s.begin, s.end - s.begin))) --s.end;
  }
  return spans;
}

SpanFileRecognizer::SpanFileRecognizer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kInput, "cannot read span file " + path.string());
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json record = nlohmann::json::parse(line);
      auto& spans = spans_by_text_[record.at("text").get<std::string>()];
      for (const auto& s : record.at("spans")) {
        spans.emplace_back(s.at(0).get<size_t>(), s.at(1).get<size_t>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kInput,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::vector<CharSpan> SpanFileRecognizer::recognize(std::string_view original_text) const {
  auto it = spans_by_text_.find(std::string(original_text));
  if (it == spans_by_text_.end()) return {};
  const std::vector<size_t> offsets = codepoint_byte_offsets(original_text);
  const size_t n_codepoints = offsets.size() - 1;
  std::vector<CharSpan> spans;
  for (const auto& [begin, end] : it->second) {
    if (begin >= end || end > n_codepoints) {
      throw Error(ErrorKind::kData, "span file offset out of range");
    }
    spans.push_back({offsets[begin], offsets[end]});
  }
  return spans;
}

std::unique_ptr<EntityRecognizer> make_recognizer(std::string_view spec) {
  if (spec.empty() || spec == "none") return std::make_unique<NullRecognizer>();
  if (spec == "capitalized") return std::make_unique<CapitalizedPhraseRecognizer>();
  const size_t colon = spec.find(':');
  if (colon != std::string_view::npos) {
    const std::string_view kind = spec.substr(0, colon);
    const std::filesystem::path path(std::string(spec.substr(colon + 1)));
    if (kind == "gazetteer") {
      return std::make_unique<GazetteerRecognizer>(GazetteerRecognizer::from_file(path));
    }
    if (kind == "spanfile") return std::make_unique<SpanFileRecognizer>(path);
  }
  throw Error(ErrorKind::kUsage, "unknown NER backend '" + std::string(spec) +
                                     "' (expected none, capitalized, gazetteer:<file> or "
                                     "spanfile:<file>)");
}

std::string recognizer_spec_from_env() {
  const char* value = std::getenv(kNerBackendEnv);
  return value == nullptr ? std::string("capitalized") : std::string(value);
}

}  // namespace hlgen
