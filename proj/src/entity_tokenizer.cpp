#include "hlgen/entity_tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "hlgen/error.hpp"
#include "hlgen/hash.hpp"
#include "hlgen/log.hpp"

namespace hlgen {
namespace {

const std::string kSpecialNames[kNumSpecialTokens] = {"[PAD]", std::string(kUnkToken),
                                                      "[START]", "[STOP]"};

}  // namespace

std::vector<EntitySpan> resolve_overlaps(std::vector<EntitySpan> spans) {
  std::sort(spans.begin(), spans.end(), [](const EntitySpan& a, const EntitySpan& b) {
    if (a.start != b.start) return a.start < b.start;
    return a.end > b.end;
  });
  std::vector<EntitySpan> kept;
  int frontier = -1;
  for (EntitySpan& span : spans) {
    if (span.end <= span.start) continue;
    if (span.start < frontier) continue;
    frontier = span.end;
    kept.push_back(std::move(span));
  }
  return kept;
}

std::vector<EntitySpan> align_spans(const CleanedText& cleaned, std::string_view original_text,
                                    const std::vector<CharSpan>& char_spans) {
  const std::vector<TokenRange> ranges = whitespace_token_ranges(cleaned.text);
  // Original byte range covered by each cleaned token.
  std::vector<CharSpan> origin(ranges.size());
  for (size_t t = 0; t < ranges.size(); ++t) {
    origin[t].begin = cleaned.source_offset[ranges[t].begin];
    size_t last = cleaned.source_offset[ranges[t].end - 1];
    decode_utf8(original_text, last);
    origin[t].end = last;
  }

  std::vector<EntitySpan> spans;
  for (const CharSpan& cs : char_spans) {
    if (cs.begin >= cs.end || cs.end > original_text.size()) {
      log_warning("recognizer returned an invalid span [" + std::to_string(cs.begin) + ", " +
                  std::to_string(cs.end) + "); dropped");
      continue;
    }
    int first = -1;
    int last = -1;
    bool contained = true;
    for (size_t t = 0; t < origin.size(); ++t) {
      const bool overlaps = origin[t].begin < cs.end && origin[t].end > cs.begin;
      if (!overlaps) continue;
      if (origin[t].begin < cs.begin || origin[t].end > cs.end) {
        contained = false;
        break;
      }
      if (first < 0) first = static_cast<int>(t);
      last = static_cast<int>(t);
    }
    if (!contained || first < 0) continue;
    EntitySpan span;
    span.start = first;
    span.end = last + 1;
    for (int t = first; t <= last; ++t) {
      if (t > first) span.surface.push_back(' ');
      span.surface.append(cleaned.text, ranges[t].begin, ranges[t].end - ranges[t].begin);
    }
    spans.push_back(std::move(span));
  }
  return spans;
}

std::vector<EntitySpan> detect_entities(std::string_view original_text,
                                        const EntityRecognizer& recognizer) {
  std::vector<CharSpan> char_spans;
  try {
    char_spans = recognizer.recognize(original_text);
  } catch (const std::exception& e) {
    log_warning(std::string("entity recognizer failed, using plain tokens: ") + e.what());
    return {};
  }
  const CleanedText cleaned = clean_text_aligned(original_text);
  return resolve_overlaps(align_spans(cleaned, original_text, char_spans));
}

TokenSequence tokenize_and_merge(std::string_view clean, const std::vector<EntitySpan>& spans) {
  const std::vector<std::string> words = split_whitespace(clean);
  TokenSequence seq;
  seq.tokens.reserve(words.size());
  seq.is_entity.reserve(words.size());
  size_t next_span = 0;
  int i = 0;
  const int n = static_cast<int>(words.size());
  int previous_end = 0;
  for (const EntitySpan& span : spans) {
    if (span.start < 0 || span.end > n || span.start >= span.end) {
      throw Error(ErrorKind::kInternal, "entity span [" + std::to_string(span.start) + ", " +
                                            std::to_string(span.end) + ") out of range for " +
                                            std::to_string(n) + " tokens");
    }
    if (span.start < previous_end) {
      throw Error(ErrorKind::kInternal, "entity spans overlap or are unsorted");
    }
    previous_end = span.end;
  }
  while (i < n) {
    if (next_span < spans.size() && spans[next_span].start == i) {
      const EntitySpan& span = spans[next_span++];
      std::string merged;
      for (int t = span.start; t < span.end; ++t) {
        if (t > span.start) merged.push_back(' ');
        merged.append(words[t]);
      }
      seq.tokens.push_back(std::move(merged));
      seq.is_entity.push_back(span.length() > 1);
      i = span.end;
    } else {
      seq.tokens.push_back(words[i]);
      seq.is_entity.push_back(false);
      ++i;
    }
  }
  return seq;
}

TokenSequence truncate(const TokenSequence& seq, size_t limit) {
  if (seq.size() <= limit) return seq;
  TokenSequence out;
  out.tokens.assign(seq.tokens.begin(), seq.tokens.begin() + static_cast<long>(limit));
  out.is_entity.assign(seq.is_entity.begin(), seq.is_entity.begin() + static_cast<long>(limit));
  return out;
}

std::string unmerge_for_eval(const std::vector<std::string>& tokens) {
  std::vector<std::string> words;
  for (const std::string& token : tokens) {
    for (std::string& w : split_whitespace(token)) words.push_back(std::move(w));
  }
  return join(words, " ");
}

std::string unmerge_for_eval(std::string_view text_with_merged_tokens) {
  return join(split_whitespace(text_with_merged_tokens), " ");
}

void count_tokens(const TokenSequence& seq, TokenCounts& counts) {
  for (const std::string& token : seq.tokens) ++counts[token];
}

Vocabulary::Vocabulary() {
  for (int i = 0; i < kNumSpecialTokens; ++i) {
    id_to_token_.push_back(kSpecialNames[i]);
    counts_.push_back(0);
  }
}

void Vocabulary::add(std::string token, uint64_t count) {
  if (token_to_id_.count(token) > 0) {
    throw Error(ErrorKind::kData, "duplicate vocabulary entry '" + token + "'");
  }
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(std::move(token));
  counts_.push_back(count);
}

Vocabulary Vocabulary::from_counts(const TokenCounts& counts, size_t max_size) {
  if (max_size < kNumSpecialTokens) {
    throw Error(ErrorKind::kUsage, "vocabulary max_size must be at least 4");
  }
  std::vector<std::pair<std::string, uint64_t>> entries(counts.begin(), counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const size_t keep = std::min(entries.size(), max_size - kNumSpecialTokens);
  Vocabulary vocab;
  for (size_t i = 0; i < keep; ++i) vocab.add(entries[i].first, entries[i].second);
  return vocab;
}

int Vocabulary::id_of(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size()) {
    throw Error(ErrorKind::kInternal, "vocabulary id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<size_t>(id)];
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (size_t i = kNumSpecialTokens; i < id_to_token_.size(); ++i) {
    out.append(id_to_token_[i]);
    out.push_back('\t');
    out.append(std::to_string(counts_[i]));
    out.push_back('\n');
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kInput, "cannot write vocabulary " + path.string());
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing vocabulary file " + path.string());
  Vocabulary vocab;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.rfind('\t');
    if (tab == std::string::npos || tab == 0) {
      throw Error(ErrorKind::kData,
                  path.string() + ":" + std::to_string(line_no) + ": expected token<TAB>count");
    }
    uint64_t count = 0;
    try {
      count = std::stoull(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw Error(ErrorKind::kData,
                  path.string() + ":" + std::to_string(line_no) + ": bad count");
    }
    vocab.add(line.substr(0, tab), count);
  }
  return vocab;
}

uint64_t Vocabulary::fingerprint() const { return fnv1a(serialize()); }

Vocabulary build_vocabulary(const std::vector<TokenSequence>& sequences, size_t max_size) {
  TokenCounts counts;
  for (const TokenSequence& seq : sequences) count_tokens(seq, counts);
  if (counts.empty()) log_warning("building a vocabulary from no tokens; only specials remain");
  return Vocabulary::from_counts(counts, max_size);
}

EncodedExample encode_example(const TokenSequence& source, const TokenSequence& target,
                              const Vocabulary& vocab, size_t max_target_len) {
  EncodedExample ex;
  const int v = vocab.size();
  std::unordered_map<std::string, int> oov_index;
  for (const std::string& token : source.tokens) {
    const int id = vocab.id_of(token);
    ex.source_ids.push_back(id);
    if (vocab.contains(token)) {
      ex.source_ids_extended.push_back(id);
      continue;
    }
    auto [it, inserted] = oov_index.emplace(token, static_cast<int>(ex.oov_tokens.size()));
    if (inserted) ex.oov_tokens.push_back(token);
    ex.source_ids_extended.push_back(v + it->second);
  }
  const size_t target_len = std::min(target.size(), max_target_len);
  ex.decoder_input_ids.push_back(kStartId);
  for (size_t t = 0; t < target_len; ++t) {
    const std::string& token = target.tokens[t];
    const int id = vocab.id_of(token);
    ex.decoder_input_ids.push_back(id);
    if (!vocab.contains(token)) {
      auto it = oov_index.find(token);
      ex.target_ids_extended.push_back(it == oov_index.end() ? kUnkId : v + it->second);
    } else {
      ex.target_ids_extended.push_back(id);
    }
  }
  ex.target_ids_extended.push_back(kStopId);
  return ex;
}

std::string extended_token(int id, const Vocabulary& vocab,
                           const std::vector<std::string>& oov_tokens) {
  const int v = vocab.size();
  if (id >= 0 && id < v) return vocab.token_of(id);
  const int j = id - v;
  if (j >= 0 && j < static_cast<int>(oov_tokens.size())) return oov_tokens[static_cast<size_t>(j)];
  throw Error(ErrorKind::kInternal, "extended id " + std::to_string(id) + " out of range (vocab " +
                                        std::to_string(v) + ", oov " +
                                        std::to_string(oov_tokens.size()) + ")");
}

std::vector<EntitySpan> offset_spans(const std::vector<EntitySpan>& spans, int offset) {
  std::vector<EntitySpan> out = spans;
  for (EntitySpan& s : out) {
    s.start += offset;
    s.end += offset;
  }
  return out;
}

}  // namespace hlgen
