#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "doctest.h"
#include "hlgen/corpus.hpp"
#include "hlgen/error.hpp"

using namespace hlgen;

namespace {

Example make_example(int i) {
  Example ex;
  ex.doc_id = "d" + std::to_string(i);
  ex.source_text = "source " + std::to_string(i);
  ex.target_text = "target";
  return ex;
}

std::vector<Example> make_examples(int n) {
  std::vector<Example> out;
  for (int i = 0; i < n; ++i) out.push_back(make_example(i));
  return out;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("ingest skips malformed and incomplete records") {
    std::istringstream in(
        "{\"id\":\"a\",\"abstract\":\"Text A.\",\"highlights\":[\"h1\",\"h2\"]}\n"
        "not json\n"
        "{\"id\":\"b\",\"highlights\":[\"h\"]}\n"
        "{\"id\":\"c\",\"abstract\":\"Text C.\",\"highlights\":[]}\n"
        "{\"id\":\"a\",\"abstract\":\"dup\",\"highlights\":[\"h\"]}\n"
        "\n"
        "{\"id\":\"d\",\"abstract\":\"Text D.\",\"highlights\":[\"x\"],\"conclusion\":\"End.\"}\n");
    const IngestResult r = ingest_corpus_stream(in, "mem");
    REQUIRE(r.documents.size() == 2);
    CHECK(r.documents[0].doc_id == "a");
    CHECK(r.documents[1].doc_id == "d");
    CHECK(r.skipped == 4);
    CHECK(r.diagnostics.size() == 4);
  }

  TEST_CASE("missing corpus file is an input error") {
    CHECK_THROWS_AS(ingest_corpus("/nonexistent/corpus.jsonl"), Error);
  }

  TEST_CASE("source sections per mode and missing-section skip") {
    Document d;
    d.doc_id = "x";
    d.abstract = "abs";
    d.conclusion = "conc";
    d.highlights = {"We propose X.", "It works."};
    const Document c = clean_document(d);
    CHECK(c.highlights == std::vector<std::string>{"we propose x", "it works"});

    const BuildResult abs = build_examples({c}, InputMode::kAbstractConclusion);
    REQUIRE(abs.examples.size() == 1);
    CHECK(abs.examples[0].source_text == "abs conc");
    CHECK(abs.examples[0].target_text == "we propose x . it works");

    const BuildResult ic = build_examples({c}, InputMode::kIntroductionConclusion);
    CHECK(ic.examples.empty());
    CHECK(ic.skipped == 1);
  }

  TEST_CASE("input mode names round trip and limits") {
    for (InputMode m : {InputMode::kAbstract, InputMode::kAbstractConclusion,
                        InputMode::kIntroductionConclusion}) {
      CHECK(parse_input_mode(input_mode_name(m)) == m);
    }
    CHECK(source_token_limit(InputMode::kAbstract) == 400);
    CHECK(source_token_limit(InputMode::kAbstractConclusion) == 1500);
    CHECK(source_token_limit(InputMode::kIntroductionConclusion) == 1500);
    CHECK_THROWS_AS(parse_input_mode("bogus"), Error);
  }

  TEST_CASE("split sizes follow the 8116:1017:1014 proportions") {
    for (int n : {3, 10, 32, 100, 10147}) {
      const CorpusSplit s = split_corpus(make_examples(n), 5);
      const int val = std::max(1, static_cast<int>(std::lround(n * 1017.0 / 10147)));
      const int test = std::max(1, static_cast<int>(std::lround(n * 1014.0 / 10147)));
      CHECK(static_cast<int>(s.validation.size()) == val);
      CHECK(static_cast<int>(s.test.size()) == test);
      CHECK(static_cast<int>(s.train.size()) == n - val - test);
    }
    const CorpusSplit full = split_corpus(make_examples(10147), 5);
    CHECK(full.train.size() == 8116);
    CHECK(full.validation.size() == 1017);
    CHECK(full.test.size() == 1014);
  }

  TEST_CASE("split is a seeded partition") {
    const auto examples = make_examples(50);
    const CorpusSplit a = split_corpus(examples, 11);
    const CorpusSplit b = split_corpus(examples, 11);
    const CorpusSplit c = split_corpus(examples, 12);
    std::set<std::string> ids;
    for (const auto* part : {&a.train, &a.validation, &a.test}) {
      for (const Example& e : *part) CHECK(ids.insert(e.doc_id).second);
    }
    CHECK(ids.size() == 50);
    const auto id_list = [](const std::vector<Example>& v) {
      std::vector<std::string> out;
      for (const Example& e : v) out.push_back(e.doc_id);
      return out;
    };
    CHECK(id_list(a.test) == id_list(b.test));
    CHECK(id_list(a.test) != id_list(c.test));
    CHECK_THROWS_AS(split_corpus(make_examples(2), 1), Error);
  }

  TEST_CASE("explicit manifest overrides the seeded split") {
    SplitManifest m;
    m.train = {"d0", "d1"};
    m.validation = {"d2"};
    m.test = {"d3"};
    const auto path = std::filesystem::temp_directory_path() / "hlgen_split_manifest.txt";
    write_split_manifest(m, path);
    const SplitManifest back = read_split_manifest(path);
    CHECK(back.train == m.train);
    CHECK(back.validation == m.validation);
    CHECK(back.test == m.test);
    const CorpusSplit s = split_corpus(make_examples(4), 99, back);
    REQUIRE(s.test.size() == 1);
    CHECK(s.test[0].doc_id == "d3");
    std::filesystem::remove(path);
  }

  TEST_CASE("example files round trip") {
    auto examples = make_examples(3);
    examples[1].mode = InputMode::kAbstractConclusion;
    const auto path = std::filesystem::temp_directory_path() / "hlgen_examples.jsonl";
    write_examples_jsonl(examples, path);
    const auto back = read_examples_jsonl(path);
    REQUIRE(back.size() == 3);
    CHECK(back[1].doc_id == "d1");
    CHECK(back[1].mode == InputMode::kAbstractConclusion);
    CHECK(back[2].source_text == "source 2");
    std::filesystem::remove(path);
  }

  TEST_CASE("fixture corpus ingests completely") {
    const IngestResult r = ingest_corpus(std::string(HLGEN_FIXTURES) + "/fixture_corpus.jsonl");
    CHECK(r.documents.size() == 32);
    CHECK(r.skipped == 0);
  }
}
