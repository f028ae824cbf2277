#include "hlgen/beam_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "hlgen/error.hpp"
#include "hlgen/text.hpp"

namespace hlgen {
namespace {

struct Candidate {
  size_t parent;
  int token;
  double log_prob;
  std::shared_ptr<const ScorerState> state;
};

bool expandable(int token) { return token != kPadId && token != kStartId; }

// Indices of the k largest entries, ties to the lower id.
std::vector<int> top_tokens(const std::vector<double>& log_probs, size_t k) {
  std::vector<int> ids;
  ids.reserve(log_probs.size());
  for (int i = 0; i < static_cast<int>(log_probs.size()); ++i) {
    if (expandable(i)) ids.push_back(i);
  }
  k = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](int a, int b) {
                      if (log_probs[a] != log_probs[b]) return log_probs[a] > log_probs[b];
                      return a < b;
                    });
  ids.resize(k);
  return ids;
}

Hypothesis start_hypothesis(const StepScorer& scorer) {
  Hypothesis h;
  h.ids = {kStartId};
  h.state = scorer.initial_state();
  return h;
}

bool better(const Hypothesis& a, const Hypothesis& b) {
  return a.normalized_score() > b.normalized_score();
}

struct DecoderScorerState : ScorerState {
  DecoderState<float> decoder;
};

}  // namespace

double Hypothesis::normalized_score() const {
  const int n = generated_length();
  return n > 0 ? log_prob / n : log_prob;
}

Hypothesis greedy_search(const StepScorer& scorer, int max_length) {
  if (max_length < 1) throw Error(ErrorKind::kUsage, "max_length must be positive");
  Hypothesis h = start_hypothesis(scorer);
  while (!h.finished) {
    ScoredStep next = scorer.step(*h.state, h.ids.back());
    const int token = top_tokens(next.log_probs, 1).at(0);
    h.ids.push_back(token);
    h.log_prob += next.log_probs[static_cast<size_t>(token)];
    h.state = std::move(next.state);
    h.finished = token == kStopId || h.generated_length() >= max_length;
  }
  return h;
}

Hypothesis beam_search(const StepScorer& scorer, const BeamOptions& options) {
  if (options.beam_width < 1) throw Error(ErrorKind::kUsage, "beam_width must be at least 1");
  if (options.max_length < 1) throw Error(ErrorKind::kUsage, "max_length must be positive");
  const size_t width = static_cast<size_t>(options.beam_width);

  std::vector<Hypothesis> live = {start_hypothesis(scorer)};
  std::vector<Hypothesis> finished;
  while (!live.empty() && finished.size() < width) {
    std::vector<Candidate> candidates;
    for (size_t p = 0; p < live.size(); ++p) {
      ScoredStep next = scorer.step(*live[p].state, live[p].ids.back());
      auto state = std::make_shared<ScoredStep>(std::move(next));
      for (int token : top_tokens(state->log_probs, 2 * width)) {
        candidates.push_back({p, token,
                              live[p].log_prob + state->log_probs[static_cast<size_t>(token)],
                              state->state});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) {
                       return std::tie(b.log_prob, a.parent, a.token) <
                              std::tie(a.log_prob, b.parent, b.token);
                     });
    std::vector<Hypothesis> next_live;
    for (const Candidate& c : candidates) {
      Hypothesis h;
      h.ids = live[c.parent].ids;
      h.ids.push_back(c.token);
      h.log_prob = c.log_prob;
      h.state = c.state;
      h.finished = c.token == kStopId || h.generated_length() >= options.max_length;
      if (h.finished) {
        if (finished.size() < width) finished.push_back(std::move(h));
      } else {
        next_live.push_back(std::move(h));
      }
      if (next_live.size() >= width || finished.size() >= width) break;
    }
    live = std::move(next_live);
  }
  // The pool is never empty: every surviving branch is forced to finish at
  // max_length.
  Hypothesis best = finished.front();
  for (const Hypothesis& h : finished) {
    if (better(h, best)) best = h;
  }
  if (width > 1) {
    Hypothesis greedy = greedy_search(scorer, options.max_length);
    if (better(greedy, best)) best = std::move(greedy);
  }
  return best;
}

PointerGeneratorScorer::PointerGeneratorScorer(const Parameters<float>& params,
                                               const Hyperparams& hp,
                                               const EncodedExample& example)
    : params_(params),
      hp_(hp),
      source_ids_extended_(example.source_ids_extended),
      oov_count_(example.oov_count()),
      encoder_(encode_source<float>(example.source_ids, params, hp)) {}

std::shared_ptr<const ScorerState> PointerGeneratorScorer::initial_state() const {
  auto state = std::make_shared<DecoderScorerState>();
  state->decoder = initial_decoder_state(encoder_, hp_.coverage_enabled);
  return state;
}

ScoredStep PointerGeneratorScorer::step(const ScorerState& state, int input_id) const {
  auto next = std::make_shared<DecoderScorerState>(static_cast<const DecoderScorerState&>(state));
  const StepPrediction<float> pred =
      decoder_step(next->decoder, input_id, encoder_, source_ids_extended_, oov_count_, params_, hp_);
  ScoredStep out;
  out.log_probs.resize(static_cast<size_t>(pred.final_dist.size()));
  for (Eigen::Index i = 0; i < pred.final_dist.size(); ++i) {
    out.log_probs[static_cast<size_t>(i)] =
        std::log(std::max(static_cast<double>(pred.final_dist[i]), kProbabilityFloor));
  }
  out.state = std::move(next);
  return out;
}

std::vector<int> body_ids(const std::vector<int>& ids) {
  std::vector<int> body;
  for (int id : ids) {
    if (id != kStartId && id != kStopId && id != kPadId) body.push_back(id);
  }
  return body;
}

std::string ids_to_text(const std::vector<int>& ids, const Vocabulary& vocab,
                        const std::vector<std::string>& oov_tokens) {
  const int limit = vocab.size() + static_cast<int>(oov_tokens.size());
  std::vector<std::string> words;
  for (int id : ids) {
    if (id < 0 || id >= limit) {
      throw Error(ErrorKind::kInternal, "token id " + std::to_string(id) +
                                            " outside extended vocabulary of size " +
                                            std::to_string(limit));
    }
    if (id == kStartId || id == kStopId || id == kPadId) continue;
    words.push_back(extended_token(id, vocab, oov_tokens));
  }
  return join(words, " ");
}

RepetitionReport repetition_report(std::string_view text) {
  RepetitionReport report;
  std::vector<std::string> words;
  for (std::string& w : split_whitespace(text)) {
    if (w != kSentenceSeparator) words.push_back(std::move(w));
  }
  for (size_t n = 1; n <= 3; ++n) {
    if (words.size() < n) continue;
    std::set<std::vector<std::string>> distinct;
    const size_t total = words.size() - n + 1;
    for (size_t i = 0; i < total; ++i) {
      distinct.emplace(words.begin() + static_cast<std::ptrdiff_t>(i),
                       words.begin() + static_cast<std::ptrdiff_t>(i + n));
    }
    report.duplicate_rate[n - 1] =
        1.0 - static_cast<double>(distinct.size()) / static_cast<double>(total);
  }
  std::set<std::string> seen;
  for (const std::string& sentence : split_sentences(text)) {
    if (!seen.insert(join(split_whitespace(sentence), " ")).second) ++report.repeated_sentences;
  }
  return report;
}

}  // namespace hlgen
