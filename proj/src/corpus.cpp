#include "hlgen/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "hlgen/error.hpp"
#include "hlgen/log.hpp"
#include "hlgen/rng.hpp"
#include "hlgen/text.hpp"
#include "json.hpp"

namespace hlgen {
namespace {

using nlohmann::json;

// Published split sizes; used as allocation proportions.
constexpr double kTrainShare = 8116.0;
constexpr double kValidationShare = 1017.0;
constexpr double kTestShare = 1014.0;

std::optional<std::string> string_field(const json& record, const char* key) {
  auto it = record.find(key);
  if (it == record.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; });
}

}  // namespace

std::string_view input_mode_name(InputMode mode) {
  switch (mode) {
    case InputMode::kAbstract:
      return "abstract";
    case InputMode::kAbstractConclusion:
      return "abstract_conclusion";
    case InputMode::kIntroductionConclusion:
      return "introduction_conclusion";
  }
  return "abstract";
}

InputMode parse_input_mode(std::string_view name) {
  if (name == "abstract") return InputMode::kAbstract;
  if (name == "abstract_conclusion") return InputMode::kAbstractConclusion;
  if (name == "introduction_conclusion") return InputMode::kIntroductionConclusion;
  throw Error(ErrorKind::kUsage,
              "unknown input mode '" + std::string(name) +
                  "' (expected abstract, abstract_conclusion or introduction_conclusion)");
}

int source_token_limit(InputMode mode) { return mode == InputMode::kAbstract ? 400 : 1500; }

IngestResult ingest_corpus_stream(std::istream& in, std::string_view source_name) {
  IngestResult result;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  size_t line_no = 0;
  const auto skip = [&](const std::string& why) {
    ++result.skipped;
    result.diagnostics.push_back(std::string(source_name) + ":" + std::to_string(line_no) +
                                 ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      skip(std::string("malformed record: ") + e.what());
      continue;
    }
    if (!record.is_object()) {
      skip("record is not an object");
      continue;
    }
    Document doc;
    auto id = string_field(record, "id");
    if (!id || id->empty()) {
      skip("missing id");
      continue;
    }
    doc.doc_id = *id;
    auto abstract = string_field(record, "abstract");
    if (!abstract || is_blank(*abstract)) {
      skip("record " + doc.doc_id + " has no abstract");
      continue;
    }
    doc.abstract = *abstract;
    auto highlights = record.find("highlights");
    if (highlights == record.end() || !highlights->is_array()) {
      skip("record " + doc.doc_id + " has no highlights list");
      continue;
    }
    bool bad_bullet = false;
    for (const json& bullet : *highlights) {
      if (!bullet.is_string()) {
        bad_bullet = true;
        break;
      }
      if (!is_blank(bullet.get_ref<const std::string&>())) {
        doc.highlights.push_back(bullet.get<std::string>());
      }
    }
    if (bad_bullet) {
      skip("record " + doc.doc_id + " has a non-string highlight");
      continue;
    }
    if (doc.highlights.empty()) {
      skip("record " + doc.doc_id + " has empty highlights");
      continue;
    }
    if (!seen_ids.insert(doc.doc_id).second) {
      skip("duplicate id " + doc.doc_id);
      continue;
    }
    doc.title = string_field(record, "title").value_or("");
    doc.introduction = string_field(record, "introduction").value_or("");
    doc.conclusion = string_field(record, "conclusion").value_or("");
    if (auto kw = record.find("keywords"); kw != record.end() && kw->is_array()) {
      for (const json& k : *kw) {
        if (k.is_string()) doc.keywords.push_back(k.get<std::string>());
      }
    }
    result.documents.push_back(std::move(doc));
  }
  return result;
}

IngestResult ingest_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kInput, "cannot read corpus file " + path.string());
  IngestResult result = ingest_corpus_stream(in, path.filename().string());
  if (in.bad()) throw Error(ErrorKind::kInput, "read error on corpus file " + path.string());
  return result;
}

Document clean_document(const Document& doc) {
  Document out;
  out.doc_id = doc.doc_id;
  out.title = clean_text(doc.title);
  out.abstract = clean_text(doc.abstract);
  out.introduction = clean_text(doc.introduction);
  out.conclusion = clean_text(doc.conclusion);
  for (const std::string& bullet : doc.highlights) {
    std::string cleaned = clean_text(bullet);
    if (!cleaned.empty()) out.highlights.push_back(std::move(cleaned));
  }
  out.keywords = doc.keywords;
  return out;
}

std::vector<std::string_view> source_sections(const Document& doc, InputMode mode) {
  switch (mode) {
    case InputMode::kAbstract:
      return {doc.abstract};
    case InputMode::kAbstractConclusion:
      return {doc.abstract, doc.conclusion};
    case InputMode::kIntroductionConclusion:
      return {doc.introduction, doc.conclusion};
  }
  return {};
}

std::string join_highlights(const std::vector<std::string>& bullets) {
  std::string sep = " ";
  sep.append(kSentenceSeparator);
  sep.push_back(' ');
  return join(bullets, sep);
}

BuildResult build_examples(const std::vector<Document>& cleaned_docs, InputMode mode) {
  BuildResult result;
  std::unordered_set<std::string> seen;
  for (const Document& doc : cleaned_docs) {
    const auto skip = [&](const std::string& why) {
      ++result.skipped;
      result.diagnostics.push_back("document " + doc.doc_id + ": " + why);
    };
    if (!seen.insert(doc.doc_id).second) {
      skip("duplicate id");
      continue;
    }
    std::vector<std::string> parts;
    bool missing = false;
    for (std::string_view section : source_sections(doc, mode)) {
      if (section.empty()) {
        missing = true;
        break;
      }
      parts.emplace_back(section);
    }
    if (missing) {
      skip(std::string("missing a section required by mode ") +
           std::string(input_mode_name(mode)));
      continue;
    }
    if (doc.highlights.empty()) {
      skip("no highlights");
      continue;
    }
    Example ex;
    ex.doc_id = doc.doc_id;
    ex.source_text = join(parts, " ");
    ex.target_text = join_highlights(doc.highlights);
    ex.mode = mode;
    result.examples.push_back(std::move(ex));
  }
  return result;
}

SplitManifest read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot read split manifest " + path.string());
  SplitManifest manifest;
  std::vector<std::string>* section = nullptr;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line == "[train]") {
      section = &manifest.train;
    } else if (line == "[val]") {
      section = &manifest.validation;
    } else if (line == "[test]") {
      section = &manifest.test;
    } else if (section == nullptr) {
      throw Error(ErrorKind::kInput, path.string() + ":" + std::to_string(line_no) +
                                         ": doc id before any [train]/[val]/[test] header");
    } else {
      section->push_back(line);
    }
  }
  return manifest;
}

void write_split_manifest(const SplitManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kInput, "cannot write split manifest " + path.string());
  const auto section = [&](const char* header, const std::vector<std::string>& ids) {
    out << header << '\n';
    for (const std::string& id : ids) out << id << '\n';
  };
  section("[train]", manifest.train);
  section("[val]", manifest.validation);
  section("[test]", manifest.test);
}

CorpusSplit split_corpus(const std::vector<Example>& examples, uint64_t split_seed,
                         const std::optional<SplitManifest>& manifest) {
  if (examples.size() < 3) {
    throw Error(ErrorKind::kData, "need at least 3 examples to form train/val/test splits, got " +
                                      std::to_string(examples.size()));
  }
  CorpusSplit split;
  split.split_seed = split_seed;

  if (manifest) {
    std::unordered_map<std::string, const Example*> by_id;
    for (const Example& ex : examples) by_id.emplace(ex.doc_id, &ex);
    std::set<std::string> assigned;
    const auto take = [&](const std::vector<std::string>& ids, std::vector<Example>& into,
                          const char* name) {
      for (const std::string& id : ids) {
        if (!assigned.insert(id).second) {
          throw Error(ErrorKind::kData, "split manifest lists doc id " + id + " twice");
        }
        auto it = by_id.find(id);
        if (it == by_id.end()) {
          log_warning(std::string("split manifest ") + name + " id " + id +
                      " has no example; skipped");
          continue;
        }
        into.push_back(*it->second);
      }
    };
    take(manifest->train, split.train, "train");
    take(manifest->validation, split.validation, "val");
    take(manifest->test, split.test, "test");
    const size_t unassigned = examples.size() - split.train.size() - split.validation.size() -
                              split.test.size();
    if (unassigned > 0) {
      log_warning(std::to_string(unassigned) + " examples are not listed in the split manifest");
    }
    return split;
  }

  const double n = static_cast<double>(examples.size());
  const double total = kTrainShare + kValidationShare + kTestShare;
  const size_t n_val = std::max<size_t>(1, static_cast<size_t>(std::llround(n * kValidationShare / total)));
  const size_t n_test = std::max<size_t>(1, static_cast<size_t>(std::llround(n * kTestShare / total)));
  const size_t n_train = examples.size() - n_val - n_test;

  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(split_seed);
  rng.shuffle(order);

  std::vector<size_t> train_idx(order.begin(), order.begin() + n_train);
  std::vector<size_t> val_idx(order.begin() + n_train, order.begin() + n_train + n_val);
  std::vector<size_t> test_idx(order.begin() + n_train + n_val, order.end());
  for (auto* idx : {&train_idx, &val_idx, &test_idx}) std::sort(idx->begin(), idx->end());
  for (size_t i : train_idx) split.train.push_back(examples[i]);
  for (size_t i : val_idx) split.validation.push_back(examples[i]);
  for (size_t i : test_idx) split.test.push_back(examples[i]);
  return split;
}

void write_examples_jsonl(const std::vector<Example>& examples,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kInput, "cannot write " + path.string());
  for (const Example& ex : examples) {
    json record = {{"id", ex.doc_id},
                   {"mode", input_mode_name(ex.mode)},
                   {"source", ex.source_text},
                   {"target", ex.target_text}};
    out << record.dump() << '\n';
  }
}

std::vector<Example> read_examples_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing example file " + path.string());
  std::vector<Example> examples;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json record = json::parse(line);
      Example ex;
      ex.doc_id = record.at("id").get<std::string>();
      ex.mode = parse_input_mode(record.at("mode").get<std::string>());
      ex.source_text = record.at("source").get<std::string>();
      ex.target_text = record.at("target").get<std::string>();
      examples.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kData,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return examples;
}

}  // namespace hlgen
