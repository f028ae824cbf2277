#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "hlgen/entity_tokenizer.hpp"
#include "hlgen/model.hpp"

namespace hlgen {

inline constexpr int kDefaultBeamWidth = 4;
inline constexpr int kMaxDecodeLength = 100;

// Opaque per-hypothesis decoder state owned by a StepScorer.
struct ScorerState {
  virtual ~ScorerState() = default;
};

struct ScoredStep {
  std::shared_ptr<const ScorerState> state;
  std::vector<double> log_probs;  // over the extended vocabulary
};

// Next-token model seen by the beam search. The pointer-generator is one
// implementation; tests plug in rigged tables.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::shared_ptr<const ScorerState> initial_state() const = 0;
  // Consumes input_id and returns the distribution for the following token.
  virtual ScoredStep step(const ScorerState& state, int input_id) const = 0;
};

struct Hypothesis {
  std::vector<int> ids;  // extended ids, beginning with START
  double log_prob = 0.0;
  std::shared_ptr<const ScorerState> state;
  bool finished = false;

  // Tokens generated after START, STOP included.
  int generated_length() const { return static_cast<int>(ids.size()) - 1; }
  double normalized_score() const;
};

struct BeamOptions {
  int beam_width = kDefaultBeamWidth;
  int max_length = kMaxDecodeLength;
};

// Width-W beam over log-probabilities. Hypotheses that emit STOP, or reach
// max_length generated tokens, are finished; the search ends once W are
// finished. The result has the highest length-normalized log-probability
// among the finished pool and the greedy decode.
Hypothesis beam_search(const StepScorer& scorer, const BeamOptions& options = {});

Hypothesis greedy_search(const StepScorer& scorer, int max_length = kMaxDecodeLength);

// Wraps a checkpoint's parameters around one encoded source.
class PointerGeneratorScorer : public StepScorer {
 public:
  PointerGeneratorScorer(const Parameters<float>& params, const Hyperparams& hp,
                         const EncodedExample& example);

  std::shared_ptr<const ScorerState> initial_state() const override;
  ScoredStep step(const ScorerState& state, int input_id) const override;

 private:
  const Parameters<float>& params_;
  const Hyperparams& hp_;
  std::vector<int> source_ids_extended_;
  int oov_count_;
  EncoderOutput<float> encoder_;
};

// Body tokens of a hypothesis: START, STOP and PAD removed.
std::vector<int> body_ids(const std::vector<int>& ids);

// Space-joined surface tokens. Merged entities stay intact; UNK renders as
// "[UNK]". Out-of-range ids throw.
std::string ids_to_text(const std::vector<int>& ids, const Vocabulary& vocab,
                        const std::vector<std::string>& oov_tokens);

struct RepetitionReport {
  // 1 - distinct/total for n = 1, 2, 3; zero when there are no n-grams.
  double duplicate_rate[3] = {0.0, 0.0, 0.0};
  int repeated_sentences = 0;
};

// Sentence separators are not counted as words.
RepetitionReport repetition_report(std::string_view text);

}  // namespace hlgen
