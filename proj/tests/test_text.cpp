#include <string>

#include "doctest.h"
#include "hlgen/rng.hpp"
#include "hlgen/text.hpp"

using namespace hlgen;

TEST_SUITE("text") {
  TEST_CASE("clean_text lowercases and strips punctuation") {
    CHECK(clean_text("Artificial Neural Network, (ANN)!") == "artificial neural network ann");
    CHECK(clean_text("  KOMPSAT-2   imaging ") == "kompsat 2 imaging");
    CHECK(clean_text("") == "");
    CHECK(clean_text("...;;") == "");
  }

  TEST_CASE("clean_text folds accents and keeps digits") {
    CHECK(clean_text("Caf\xc3\xa9 Na\xc3\xafve 3D") == "cafe naive 3d");
    CHECK(clean_text("Stra\xc3\x9f" "e") == "strasse");
  }

  TEST_CASE("clean_text is idempotent on random input") {
    Rng rng(7);
    const std::string alphabet = "aZ9 .,-\t\xc3\xa9\xe2\x80\x94xyQ";
    for (int trial = 0; trial < 500; ++trial) {
      std::string s;
      const int n = static_cast<int>(rng.below(40));
      for (int i = 0; i < n; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
      const std::string once = clean_text(s);
      CHECK(clean_text(once) == once);
      CHECK(once.find("  ") == std::string::npos);
    }
  }

  TEST_CASE("aligned cleaning maps every output byte to its source byte") {
    const std::string raw = "The KOMPSAT-2 sat";
    const CleanedText c = clean_text_aligned(raw);
    REQUIRE(c.text == clean_text(raw));
    REQUIRE(c.source_offset.size() == c.text.size());
    for (size_t i = 0; i < c.text.size(); ++i) {
      if (c.text[i] == ' ') continue;
      CHECK(std::tolower(static_cast<unsigned char>(raw[c.source_offset[i]])) == c.text[i]);
    }
  }

  TEST_CASE("sentence helpers") {
    CHECK(split_sentences("a b . c d . ") == std::vector<std::string>{"a b", "c d"});
    CHECK(split_sentences(". .").empty());
    CHECK(format_sentences("a b . c") == "a b. c.");
    CHECK(format_sentences("") == "");
  }

  TEST_CASE("utf8 decoding tolerates invalid bytes") {
    size_t pos = 0;
    const std::string bad = "\xc3";
    CHECK(decode_utf8(bad, pos) == 0xFFFD);
    CHECK(pos == 1);
    std::string out;
    append_utf8(out, 0x00E9);
    CHECK(out == "\xc3\xa9");
    CHECK(codepoint_byte_offsets("a\xc3\xa9" "b") == std::vector<size_t>{0, 1, 3, 4});
  }
}
