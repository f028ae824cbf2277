#include "hlgen/text.hpp"

#include <locale.h>
#include <wctype.h>

#include <array>
#include <string_view>

namespace hlgen {
namespace {

// ASCII folds for U+00C0..U+017F; empty entries are not letters.
constexpr std::array<std::string_view, 0x180 - 0xC0> kLatinFold = {
    // U+00C0
    "a", "a", "a", "a", "a", "a", "ae", "c", "e", "e", "e", "e", "i", "i", "i", "i",
    // U+00D0
    "d", "n", "o", "o", "o", "o", "o", "", "o", "u", "u", "u", "u", "y", "th", "ss",
    // U+00E0
    "a", "a", "a", "a", "a", "a", "ae", "c", "e", "e", "e", "e", "i", "i", "i", "i",
    // U+00F0
    "d", "n", "o", "o", "o", "o", "o", "", "o", "u", "u", "u", "u", "y", "th", "y",
    // U+0100
    "a", "a", "a", "a", "a", "a", "c", "c", "c", "c", "c", "c", "c", "c", "d", "d",
    // U+0110
    "d", "d", "e", "e", "e", "e", "e", "e", "e", "e", "e", "e", "g", "g", "g", "g",
    // U+0120
    "g", "g", "g", "g", "h", "h", "h", "h", "i", "i", "i", "i", "i", "i", "i", "i",
    // U+0130
    "i", "i", "ij", "ij", "j", "j", "k", "k", "k", "l", "l", "l", "l", "l", "l", "l",
    // U+0140
    "l", "l", "l", "n", "n", "n", "n", "n", "n", "n", "n", "n", "o", "o", "o", "o",
    // U+0150
    "o", "o", "oe", "oe", "r", "r", "r", "r", "r", "r", "s", "s", "s", "s", "s", "s",
    // U+0160
    "s", "s", "t", "t", "t", "t", "t", "t", "u", "u", "u", "u", "u", "u", "u", "u",
    // U+0170
    "u", "u", "u", "u", "w", "w", "y", "y", "y", "z", "z", "z", "z", "z", "z", "s",
};

locale_t utf8_locale() {
  static const locale_t loc = [] {
    locale_t l = newlocale(LC_CTYPE_MASK, "C.UTF-8", static_cast<locale_t>(0));
    if (l == static_cast<locale_t>(0)) {
      l = newlocale(LC_CTYPE_MASK, "C.utf8", static_cast<locale_t>(0));
    }
    return l;
  }();
  return loc;
}

bool is_combining_mark(char32_t cp) {
  return (cp >= 0x0300 && cp <= 0x036F) || (cp >= 0x1AB0 && cp <= 0x1AFF) ||
         (cp >= 0x1DC0 && cp <= 0x1DFF) || (cp >= 0x20D0 && cp <= 0x20FF) ||
         (cp >= 0xFE20 && cp <= 0xFE2F);
}

}  // namespace

char32_t decode_utf8(std::string_view s, size_t& pos) {
  const auto byte = [&](size_t i) { return static_cast<unsigned char>(s[i]); };
  const unsigned char c0 = byte(pos);
  if (c0 < 0x80) {
    ++pos;
    return c0;
  }
  int extra = 0;
  char32_t cp = 0;
  if ((c0 & 0xE0) == 0xC0) {
    extra = 1;
    cp = c0 & 0x1F;
  } else if ((c0 & 0xF0) == 0xE0) {
    extra = 2;
    cp = c0 & 0x0F;
  } else if ((c0 & 0xF8) == 0xF0) {
    extra = 3;
    cp = c0 & 0x07;
  } else {
    ++pos;
    return 0xFFFD;
  }
  if (pos + extra >= s.size()) {
    ++pos;
    return 0xFFFD;
  }
  for (int k = 1; k <= extra; ++k) {
    const unsigned char ck = byte(pos + k);
    if ((ck & 0xC0) != 0x80) {
      ++pos;
      return 0xFFFD;
    }
    cp = (cp << 6) | (ck & 0x3F);
  }
  static constexpr char32_t kMin[] = {0, 0x80, 0x800, 0x10000};
  if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
    ++pos;
    return 0xFFFD;
  }
  pos += extra + 1;
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::vector<size_t> codepoint_byte_offsets(std::string_view s) {
  std::vector<size_t> offsets;
  size_t pos = 0;
  while (pos < s.size()) {
    offsets.push_back(pos);
    decode_utf8(s, pos);
  }
  offsets.push_back(s.size());
  return offsets;
}

CleanedText clean_text_aligned(std::string_view raw) {
  CleanedText out;
  out.text.reserve(raw.size());
  out.source_offset.reserve(raw.size());
  bool pending_space = false;

  const auto emit = [&](std::string_view piece, size_t origin) {
    if (pending_space && !out.text.empty()) {
      out.text.push_back(' ');
      out.source_offset.push_back(origin);
    }
    pending_space = false;
    out.text.append(piece);
    out.source_offset.insert(out.source_offset.end(), piece.size(), origin);
  };

  const locale_t loc = utf8_locale();
  size_t pos = 0;
  while (pos < raw.size()) {
    const size_t origin = pos;
    const char32_t cp = decode_utf8(raw, pos);
    if (cp < 0x80) {
      const char c = static_cast<char>(cp);
      if (c >= 'A' && c <= 'Z') {
        const char lower = static_cast<char>(c - 'A' + 'a');
        emit(std::string_view(&lower, 1), origin);
      } else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
        emit(std::string_view(&c, 1), origin);
      } else {
        pending_space = true;
      }
      continue;
    }
    if (is_combining_mark(cp)) continue;
    if (cp >= 0xC0 && cp < 0x180) {
      const std::string_view fold = kLatinFold[cp - 0xC0];
      if (fold.empty()) {
        pending_space = true;
      } else {
        emit(fold, origin);
      }
      continue;
    }
    bool letter = true;
    char32_t lower = cp;
    if (loc != static_cast<locale_t>(0)) {
      letter = iswalpha_l(static_cast<wint_t>(cp), loc) != 0;
      if (letter) lower = static_cast<char32_t>(towlower_l(static_cast<wint_t>(cp), loc));
    } else {
      letter = cp != 0xFFFD;
    }
    if (!letter) {
      pending_space = true;
      continue;
    }
    std::string encoded;
    append_utf8(encoded, lower);
    emit(encoded, origin);
  }
  return out;
}

std::string clean_text(std::string_view raw) { return clean_text_aligned(raw).text; }

std::vector<TokenRange> whitespace_token_ranges(std::string_view text) {
  std::vector<TokenRange> ranges;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' ||
                               text[i] == '\r')) {
      ++i;
    }
    if (i >= text.size()) break;
    const size_t begin = i;
    while (i < text.size() && !(text[i] == ' ' || text[i] == '\t' || text[i] == '\n' ||
                                text[i] == '\r')) {
      ++i;
    }
    ranges.push_back({begin, i});
  }
  return ranges;
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> tokens;
  for (const TokenRange& r : whitespace_token_ranges(text)) {
    tokens.emplace_back(text.substr(r.begin, r.end - r.begin));
  }
  return tokens;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> sentences;
  std::vector<std::string> current;
  for (std::string& token : split_whitespace(text)) {
    if (token == kSentenceSeparator) {
      if (!current.empty()) sentences.push_back(join(current, " "));
      current.clear();
    } else {
      current.push_back(std::move(token));
    }
  }
  if (!current.empty()) sentences.push_back(join(current, " "));
  return sentences;
}

std::string format_sentences(std::string_view text) {
  std::string out;
  for (const std::string& sentence : split_sentences(text)) {
    if (!out.empty()) out.push_back(' ');
    out.append(sentence);
    out.push_back('.');
  }
  return out;
}

}  // namespace hlgen
