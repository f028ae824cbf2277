#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "hlgen/error.hpp"
#include "hlgen/metrics.hpp"
#include "hlgen/rng.hpp"
#include "hlgen/text.hpp"
#include "metric_oracle.hpp"

using namespace hlgen;

namespace {

Words w(std::string_view s) { return split_whitespace(s); }

class StubEmbedder : public Embedder {
 public:
  explicit StubEmbedder(std::map<std::string, Eigen::Vector2d> table) : table_(std::move(table)) {}
  Eigen::MatrixXd embed(const Words& tokens) const override {
    Eigen::MatrixXd m(2, static_cast<Eigen::Index>(tokens.size()));
    for (size_t i = 0; i < tokens.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = table_.at(tokens[i]);
    return m;
  }

 private:
  std::map<std::string, Eigen::Vector2d> table_;
};

Words random_words(Rng& rng, const std::vector<std::string>& lexicon, size_t max_len) {
  Words out;
  const size_t n = rng.below(max_len + 1);
  for (size_t i = 0; i < n; ++i) out.push_back(lexicon[rng.below(lexicon.size())]);
  return out;
}

DecodeRecord record(std::string mode, std::string variant, std::string gen, std::string ref,
                    std::string id = "d") {
  return {std::move(id), std::move(mode), std::move(variant), std::move(gen), std::move(ref)};
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("rouge hand values") {
    const ScoreTriple r1 = rouge_n(w("a b c"), w("a b d"), 1);
    CHECK(r1.precision == doctest::Approx(2.0 / 3));
    CHECK(r1.recall == doctest::Approx(2.0 / 3));
    CHECK(r1.f1 == doctest::Approx(0.6667).epsilon(1e-4));
    CHECK(rouge_n(w("a b c"), w("a b d"), 2).f1 == doctest::Approx(0.5));
    CHECK(rouge_n(w("the the the"), w("the cat"), 1).precision == doctest::Approx(1.0 / 3));
    CHECK(rouge_l(w("a b c d"), w("a c b d")).f1 == doctest::Approx(0.75));
    CHECK(rouge_n({}, w("a"), 1).f1 == 0.0);
    CHECK(rouge_l(w("a"), {}).f1 == 0.0);
    CHECK(rouge_n(w("a"), w("a"), 2).f1 == 0.0);
  }

  TEST_CASE("rouge agrees with brute-force oracles") {
    Rng rng(77);
    const std::vector<std::string> lexicon = {"a", "b", "c", "d", "e"};
    for (int trial = 0; trial < 1000; ++trial) {
      const Words c = random_words(rng, lexicon, 9);
      const Words r = random_words(rng, lexicon, 9);
      for (int n = 1; n <= 2; ++n) CHECK(rouge_n(c, r, n).f1 == doctest::Approx(oracle::rouge_n_f1(c, r, n)).epsilon(1e-12));
      CHECK(rouge_l(c, r).f1 == doctest::Approx(oracle::rouge_l_f1(c, r)).epsilon(1e-12));
    }
  }

  TEST_CASE("rouge symmetry and recall monotonicity") {
    Rng rng(5);
    const std::vector<std::string> lexicon = {"x", "y", "z", "q"};
    for (int trial = 0; trial < 300; ++trial) {
      const Words c = random_words(rng, lexicon, 8);
      Words r = random_words(rng, lexicon, 8);
      CHECK(rouge_n(c, r, 1).f1 == doctest::Approx(rouge_n(r, c, 1).f1));
      CHECK(rouge_l(c, r).f1 == doctest::Approx(rouge_l(r, c).f1));
      // Appending a candidate word never lowers recall.
      Words longer = c;
      longer.push_back(lexicon[rng.below(lexicon.size())]);
      CHECK(rouge_n(longer, r, 1).recall >= rouge_n(c, r, 1).recall);
      CHECK(rouge_l(longer, r).recall >= rouge_l(c, r).recall);
    }
  }

  TEST_CASE("meteor hand values") {
    CHECK(meteor(w("the cat"), w("the cat")) == doctest::Approx(0.9375).epsilon(1e-9));
    CHECK(meteor(w("the cat sat"), w("the cat")) == doctest::Approx(0.8929).epsilon(1e-3));
    CHECK(meteor(w("b a"), w("a b")) == doctest::Approx(0.5));
    CHECK(meteor(w("x"), w("y")) == 0.0);
    CHECK(meteor({}, w("y")) == 0.0);
    // The stem stage fills the gap so the alignment is one chunk.
    const MeteorAlignment a = meteor_align(w("the cats sat"), w("the cat sat"));
    CHECK(a.matches == 3);
    CHECK(a.chunks == 1);
  }

  TEST_CASE("meteor minimizes chunks among maximal matchings") {
    // Greedy left-to-right pairing would give "the" -> first "the" and two
    // chunks; the best alignment is a single chunk.
    const MeteorAlignment a = meteor_align(w("the cat"), w("the dog the cat"));
    CHECK(a.matches == 2);
    CHECK(a.chunks == 1);
  }

  TEST_CASE("stemmer") {
    CHECK(stem_word("cats") == "cat");
    CHECK(stem_word("running") == "runn");
    CHECK(stem_word("studies") == "study");
    CHECK(stem_word("class") == "class");
    CHECK(stem_word("analysis") == "analysis");
    CHECK(stem_word("is") == "is");
  }

  TEST_CASE("meteor alignment agrees with exhaustive search") {
    Rng rng(12);
    const std::vector<std::string> lexicon = {"a", "b", "cat", "cats", "run", "runs", "the"};
    for (int trial = 0; trial < 400; ++trial) {
      const Words c = random_words(rng, lexicon, 6);
      const Words r = random_words(rng, lexicon, 6);
      const MeteorAlignment got = meteor_align(c, r);
      const oracle::Alignment want =
          oracle::meteor_alignment(c, r, [](const std::string& s) { return stem_word(s); });
      CHECK(got.matches == want.matches);
      std::vector<int> exact_stage(c.size(), -1);
      for (const auto& [i, j] : got.pairs) {
        if (c[static_cast<size_t>(i)] == r[static_cast<size_t>(j)]) exact_stage[static_cast<size_t>(i)] = j;
      }
      CHECK(oracle::chunks_of(exact_stage) == want.stage1_chunks);
      CHECK(std::find(want.final_chunks.begin(), want.final_chunks.end(), got.chunks) !=
            want.final_chunks.end());
    }
  }

  TEST_CASE("bertscore with a stub embedder") {
    const double s60 = std::sqrt(3.0) / 2;
    const StubEmbedder emb({{"x", {1, 0}}, {"y", {0.5, s60}}, {"z", {0, 1}}, {"neg", {-1, 0}}});
    const ScoreTriple same = bertscore(w("x y"), w("x y"), emb);
    CHECK(same.f1 == doctest::Approx(1.0));
    CHECK(bertscore(w("x"), w("z"), emb).f1 == doctest::Approx(0.0));
    const ScoreTriple half = bertscore(w("x"), w("x y"), emb);
    CHECK(half.recall == doctest::Approx(0.75));
    CHECK(half.precision == doctest::Approx(1.0));
    CHECK(bertscore(w("x"), w("neg"), emb).f1 == 0.0);
    CHECK(bertscore({}, w("x"), emb).f1 == 0.0);
  }

  TEST_CASE("table embedder reads GloVe text and covers unknown words") {
    const auto path = std::filesystem::temp_directory_path() / "hlgen_glove.txt";
    {
      std::ofstream out(path);
      out << "cat 1 0 0\ndog 0.9 0.1 0\n";
    }
    const auto emb = TableEmbedder::from_file(path);
    CHECK(emb->dimension() == 3);
    const Eigen::MatrixXd m = emb->embed(w("cat zebra zebra"));
    CHECK(m.cols() == 3);
    CHECK(m(0, 0) == 1.0);
    CHECK(m.col(1) == m.col(2));
    CHECK(m.col(1).norm() > 0);
    CHECK(bertscore(w("cat"), w("dog"), *emb).f1 > 0.9);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(TableEmbedder::from_file("/nonexistent/glove.txt"), Error);
  }

  TEST_CASE("bootstrap confidence intervals") {
    const ConfidenceInterval flat = bootstrap_ci(std::vector<double>(50, 0.4), 500, 0.95, 3);
    CHECK(flat.mean == doctest::Approx(0.4));
    CHECK(flat.half_width == doctest::Approx(0.0));

    Rng rng(8);
    std::vector<double> small, large;
    for (int i = 0; i < 100; ++i) small.push_back(rng.uniform01());
    for (int i = 0; i < 1600; ++i) large.push_back(rng.uniform01());
    const auto a = bootstrap_ci(small, 2000, 0.95, 1);
    CHECK(a.half_width == bootstrap_ci(small, 2000, 0.95, 1).half_width);
    CHECK(a.half_width != bootstrap_ci(small, 2000, 0.95, 2).half_width);
    // Width shrinks like 1/sqrt(n): 16x the data, a quarter of the width.
    const auto b = bootstrap_ci(large, 2000, 0.95, 1);
    CHECK(a.half_width / b.half_width == doctest::Approx(4.0).epsilon(0.2));
    // Close to the normal approximation 1.96 * sd / sqrt(n) for U(0,1).
    CHECK(a.half_width == doctest::Approx(1.96 * std::sqrt(1.0 / 12) / 10).epsilon(0.15));

    CHECK_THROWS_AS(bootstrap_ci({}, 10), Error);
    CHECK_THROWS_AS(bootstrap_ci({1.0}, 0), Error);
  }

  TEST_CASE("scoring words expand entities and drop separators") {
    CHECK(scoring_words("neural network . a b") == w("neural network a b"));
    CHECK(scoring_words(" . ").empty());
  }

  TEST_CASE("identity corpus scores 100 on overlap metrics") {
    std::vector<DecodeRecord> recs;
    for (int i = 0; i < 5; ++i) {
      const std::string text = "we propose model " + std::to_string(i) + " . it works well";
      recs.push_back(record("abstract", "pgm", text, text, "d" + std::to_string(i)));
    }
    const MetricReport rep = evaluate_records(recs, {});
    REQUIRE(rep.rows.size() == 1);
    for (MetricIndex m : {kRouge1, kRouge2, kRougeL}) {
      CHECK(rep.rows[0].metrics[m].mean == doctest::Approx(100.0));
      CHECK(rep.rows[0].metrics[m].half_width == doctest::Approx(0.0));
    }
    CHECK(!rep.rows[0].metrics[kBertScore].available);
    CHECK(report_tsv(rep).find("\t100.00\t100.00\t100.00\t") != std::string::npos);
  }

  TEST_CASE("report rows follow mode then variant order") {
    std::vector<DecodeRecord> recs;
    for (const char* mode : {"introduction_conclusion", "abstract", "abstract_conclusion"}) {
      for (const char* variant : {"ner_pgm_cov", "pgm", "ner_pgm", "pgm_cov"}) {
        recs.push_back(record(mode, variant, "a b c", "a b d"));
      }
    }
    const MetricReport rep = evaluate_records(recs, {nullptr, 50, 1});
    REQUIRE(rep.rows.size() == 12);
    const std::vector<std::string> variants = {"pgm", "pgm_cov", "ner_pgm", "ner_pgm_cov"};
    const std::vector<std::string> modes = {"abstract", "abstract_conclusion", "introduction_conclusion"};
    for (size_t k = 0; k < 12; ++k) {
      CHECK(rep.rows[k].mode == modes[k / 4]);
      CHECK(rep.rows[k].variant == variants[k % 4]);
    }
    const std::string tsv = report_tsv(rep);
    CHECK(tsv.rfind("mode\tmodel\trouge1\trouge2\trougeL\tmeteor\tbertscore\tci_halfwidth_rougeL\tn_examples\n", 0) == 0);
    CHECK(tsv.find("abstract\tPGM+Cov\t66.67\t50.00\t66.67\t") != std::string::npos);
    CHECK(tsv.find("\tn/a\t") != std::string::npos);
    CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 13);
    CHECK(report_table(rep).find("NER+PGM+Cov") != std::string::npos);
    CHECK(report_json(rep).find("\"bertscore\": null") != std::string::npos);
  }

  TEST_CASE("row means average the per-example scores") {
    const std::vector<DecodeRecord> recs = {record("abstract", "pgm", "a b c", "a b d"),
                                            record("abstract", "pgm", "a b", "a b"),
                                            record("abstract", "pgm", "x", "y")};
    const MetricReport rep = evaluate_records(recs, {nullptr, 100, 1});
    CHECK(rep.rows[0].metrics[kRouge1].mean == doctest::Approx(100 * (2.0 / 3 + 1 + 0) / 3));
    CHECK(rep.rows[0].metrics[kRouge2].mean == doctest::Approx(100 * (0.5 + 1 + 0) / 3));
    CHECK(rep.rows[0].metrics[kMeteor].mean ==
          doctest::Approx(100 * (meteor(w("a b c"), w("a b d")) + 0.9375) / 3));
    CHECK(rep.rows[0].n_examples == 3);
  }

  TEST_CASE("decode records round trip") {
    const auto path = std::filesystem::temp_directory_path() / "hlgen_decode.jsonl";
    const std::vector<DecodeRecord> recs = {record("abstract", "pgm", "a \"quoted\" b", "c", "x1"),
                                            record("abstract", "ner_pgm", "", "d", "x2")};
    write_decode_records(recs, path);
    const auto back = read_decode_records(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].generated == "a \"quoted\" b");
    CHECK(back[1].variant == "ner_pgm");
    std::filesystem::remove(path);
    CHECK_THROWS_AS(evaluate_records({}, {}), Error);
  }
}
