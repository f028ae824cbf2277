#include <cmath>
#include <functional>
#include <map>

#include "doctest.h"
#include "hlgen/beam_decoder.hpp"
#include "hlgen/error.hpp"
#include "hlgen/rng.hpp"
#include "test_support.hpp"

using namespace hlgen;

namespace {

struct PrefixState : ScorerState {
  std::vector<int> prefix;
};

// Next-token table computed from the consumed prefix.
class TableScorer : public StepScorer {
 public:
  using Table = std::function<std::vector<double>(const std::vector<int>&)>;
  explicit TableScorer(Table table) : table_(std::move(table)) {}

  std::shared_ptr<const ScorerState> initial_state() const override {
    return std::make_shared<PrefixState>();
  }
  ScoredStep step(const ScorerState& state, int input_id) const override {
    auto next = std::make_shared<PrefixState>(static_cast<const PrefixState&>(state));
    next->prefix.push_back(input_id);
    ++calls;
    ScoredStep out;
    std::vector<double> probs = table_(next->prefix);
    for (double p : probs) out.log_probs.push_back(std::log(std::max(p, 1e-12)));
    out.state = std::move(next);
    return out;
  }
  mutable int calls = 0;

 private:
  Table table_;
};

// Vocabulary layout: 0 PAD, 1 UNK, 2 START, 3 STOP, then a=4, b=5, c=6.
constexpr int kA = 4, kB = 5, kC = 6;

std::vector<double> one_hot(int id, double mass = 0.9) {
  std::vector<double> p(7, (1 - mass) / 6);
  p[static_cast<size_t>(id)] = mass;
  return p;
}

// Random but fixed distribution per prefix.
std::vector<double> hashed_distribution(const std::vector<int>& prefix, uint64_t seed, int size) {
  uint64_t h = seed;
  for (int id : prefix) h = h * 1000003 + static_cast<uint64_t>(id) + 1;
  Rng rng(h);
  std::vector<double> p(static_cast<size_t>(size));
  double sum = 0;
  for (double& x : p) {
    x = std::exp(3 * rng.uniform01());
    sum += x;
  }
  for (double& x : p) x /= sum;
  return p;
}

// Best length-normalized score over every sequence the search may produce.
double exhaustive_best(const TableScorer& scorer, int max_length, int vocab) {
  double best = -1e300;
  std::function<void(std::vector<int>, double, std::shared_ptr<const ScorerState>)> walk =
      [&](std::vector<int> ids, double lp, std::shared_ptr<const ScorerState> state) {
        ScoredStep next = scorer.step(*state, ids.back());
        for (int t = 0; t < vocab; ++t) {
          if (t == kPadId || t == kStartId) continue;
          std::vector<int> ext = ids;
          ext.push_back(t);
          const double score = lp + next.log_probs[static_cast<size_t>(t)];
          const int n = static_cast<int>(ext.size()) - 1;
          if (t == kStopId || n >= max_length) {
            best = std::max(best, score / n);
          } else {
            walk(ext, score, next.state);
          }
        }
      };
  walk({kStartId}, 0.0, scorer.initial_state());
  return best;
}

Vocabulary small_vocab() { return Vocabulary::from_counts({{"the", 9}, {"model", 5}}, 10); }

}  // namespace

TEST_SUITE("beam_decoder") {
  TEST_CASE("rigged table decodes a b STOP") {
    const TableScorer scorer([](const std::vector<int>& prefix) {
      if (prefix.size() == 1) return one_hot(kA);
      if (prefix.size() == 2) return one_hot(kB);
      return one_hot(kStopId);
    });
    const Hypothesis h = beam_search(scorer);
    CHECK(h.ids == std::vector<int>{kStartId, kA, kB, kStopId});
    CHECK(h.finished);
    CHECK(h.generated_length() == 3);
    CHECK(h.normalized_score() == doctest::Approx(std::log(0.9)));
    CHECK(body_ids(h.ids) == std::vector<int>{kA, kB});
  }

  TEST_CASE("beam search recovers a sequence greedy misses") {
    // Greedy takes a (0.5) and is then stuck with a flat tail; c (0.4) leads
    // to a confident STOP.
    const TableScorer scorer([](const std::vector<int>& prefix) {
      std::vector<double> p(7, 0.02);
      if (prefix.size() == 1) {
        p = {0, 0.0, 0, 0.0, 0.5, 0.1, 0.4};
      } else if (prefix[1] == kC) {
        p = {0, 0.0, 0, 0.96, 0.02, 0.01, 0.01};
      } else {
        p = {0, 0.25, 0, 0.25, 0.25, 0.25, 0.0};
      }
      return p;
    });
    const Hypothesis greedy = greedy_search(scorer, 5);
    CHECK(greedy.ids[1] == kA);
    const Hypothesis beam = beam_search(scorer, {2, 5});
    CHECK(beam.ids == std::vector<int>{kStartId, kC, kStopId});
    CHECK(beam.normalized_score() > greedy.normalized_score());
  }

  TEST_CASE("width one matches greedy") {
    for (uint64_t seed = 0; seed < 30; ++seed) {
      const TableScorer scorer([seed](const std::vector<int>& p) { return hashed_distribution(p, seed, 7); });
      const Hypothesis beam = beam_search(scorer, {1, 12});
      const Hypothesis greedy = greedy_search(scorer, 12);
      CHECK(beam.ids == greedy.ids);
      CHECK(beam.log_prob == doctest::Approx(greedy.log_prob));
    }
  }

  TEST_CASE("decoding never scores below greedy") {
    for (uint64_t seed = 100; seed < 140; ++seed) {
      const TableScorer scorer([seed](const std::vector<int>& p) { return hashed_distribution(p, seed, 8); });
      for (int width : {2, 3, 4}) {
        const Hypothesis beam = beam_search(scorer, {width, 10});
        CHECK(beam.normalized_score() >= greedy_search(scorer, 10).normalized_score() - 1e-12);
        CHECK(beam.ids.front() == kStartId);
        CHECK(beam.finished);
      }
    }
  }

  TEST_CASE("a wide enough beam finds the exhaustive optimum") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      const TableScorer scorer([seed](const std::vector<int>& p) { return hashed_distribution(p, seed, 6); });
      const Hypothesis beam = beam_search(scorer, {200, 3});
      CHECK(beam.normalized_score() == doctest::Approx(exhaustive_best(scorer, 3, 6)).epsilon(1e-12));
    }
  }

  TEST_CASE("hypotheses are force-finished at the length cap") {
    const TableScorer scorer([](const std::vector<int>&) { return one_hot(kA, 0.99); });
    const Hypothesis h = beam_search(scorer, {4, 100});
    CHECK(h.generated_length() == 100);
    CHECK(h.finished);
    CHECK(h.ids.back() == kA);
    CHECK(greedy_search(scorer).generated_length() == kMaxDecodeLength);
  }

  TEST_CASE("PAD and START are never emitted") {
    const TableScorer scorer([](const std::vector<int>&) {
      return std::vector<double>{0.4, 0.05, 0.4, 0.1, 0.05, 0.0, 0.0};
    });
    const Hypothesis h = beam_search(scorer, {3, 6});
    for (size_t i = 1; i < h.ids.size(); ++i) {
      CHECK(h.ids[i] != kPadId);
      CHECK(h.ids[i] != kStartId);
    }
  }

  TEST_CASE("invalid options are rejected") {
    const TableScorer scorer([](const std::vector<int>&) { return one_hot(kStopId); });
    CHECK_THROWS_AS(beam_search(scorer, {0, 10}), Error);
    CHECK_THROWS_AS(beam_search(scorer, {2, 0}), Error);
    CHECK_THROWS_AS(greedy_search(scorer, 0), Error);
  }

  TEST_CASE("rendering ids as text") {
    const Vocabulary v = small_vocab();
    const int the = v.id_of("the");
    const int base = v.size();
    CHECK(ids_to_text({kStartId, the, base, kStopId}, v, {"kompsat"}) == "the kompsat");
    CHECK(ids_to_text({kStartId, kUnkId, kStopId}, v, {}) == "[UNK]");
    CHECK(ids_to_text({kStartId, kStopId}, v, {}).empty());
    CHECK_THROWS_AS(ids_to_text({base}, v, {}), Error);
    CHECK_THROWS_AS(ids_to_text({-1}, v, {}), Error);

    const Vocabulary merged = Vocabulary::from_counts({{"neural network", 3}}, 10);
    CHECK(ids_to_text({merged.id_of("neural network")}, merged, {}) == "neural network");
  }

  TEST_CASE("repetition report") {
    const RepetitionReport r = repetition_report("a b a b");
    CHECK(r.duplicate_rate[0] == doctest::Approx(0.5));
    CHECK(r.duplicate_rate[1] == doctest::Approx(1.0 / 3));
    CHECK(r.duplicate_rate[2] == doctest::Approx(0.0));
    CHECK(r.repeated_sentences == 0);

    const RepetitionReport s = repetition_report("x y z . x y z . w");
    CHECK(s.repeated_sentences == 1);
    CHECK(s.duplicate_rate[2] == doctest::Approx(1.0 - 4.0 / 5));

    const RepetitionReport e = repetition_report("");
    CHECK(e.duplicate_rate[0] == 0.0);
    CHECK(e.repeated_sentences == 0);
    CHECK(repetition_report("one").duplicate_rate[1] == 0.0);
  }

  TEST_CASE("pointer-generator scorer drives the search") {
    Rng rng(21);
    const Hyperparams hp = support::tiny_hyperparams(true, 10, 6, 4);
    const auto params = support::random_parameters<float>(hp, 4);
    const EncodedExample ex = support::random_example(rng, hp, 7, 3, 2);
    const PointerGeneratorScorer scorer(params, hp, ex);
    const ScoredStep first = scorer.step(*scorer.initial_state(), kStartId);
    CHECK(static_cast<int>(first.log_probs.size()) == hp.vocab_size + ex.oov_count());
    double mass = 0;
    for (double lp : first.log_probs) mass += std::exp(lp);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-4));

    const Hypothesis h = beam_search(scorer, {4, 20});
    CHECK(h.finished);
    CHECK(h.generated_length() <= 20);
    for (int id : h.ids) CHECK(id < hp.vocab_size + ex.oov_count());
    CHECK(beam_search(scorer, {4, 20}).ids == h.ids);
  }
}
