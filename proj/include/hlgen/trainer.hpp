#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hlgen/checkpoint.hpp"
#include "hlgen/entity_tokenizer.hpp"
#include "hlgen/model.hpp"
#include "hlgen/rng.hpp"

namespace hlgen {

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 0.15;
  double initial_accumulator = 0.1;
  double max_grad_norm = 1.2;
  int64_t max_steps = 0;                    // phase 1 budget
  int64_t coverage_finetune_steps = 3000;   // phase 2, coverage models only
  int64_t validate_every = 100;
  uint64_t seed = 1;
  double coverage_weight = 1.0;

  void validate() const;
};

// Scales all groups by max_norm / g when the global L2 norm g exceeds
// max_norm. Returns g. A non-finite entry throws, naming its group.
template <typename Scalar>
double clip_gradients(Parameters<Scalar>& grads, double max_norm = 1.2);

// Adagrad with a per-coordinate accumulator.
class AdagradOptimizer {
 public:
  AdagradOptimizer(const Parameters<float>& shape_like, double learning_rate,
                   double initial_accumulator);
  AdagradOptimizer(Parameters<float> accumulators, double learning_rate);

  // Groups named in frozen are neither read nor updated.
  void apply(Parameters<float>& params, const Parameters<float>& grads,
             const std::vector<std::string>& frozen = {});

  const Parameters<float>& accumulators() const { return accumulators_; }

 private:
  Parameters<float> accumulators_;
  double learning_rate_;
};

// Seeded, length-bucketed batch order. Each epoch is shuffled, cut into
// windows of several batches, sorted by source length within a window, and
// the resulting batches are shuffled again.
class Batcher {
 public:
  Batcher(std::vector<int> source_lengths, int batch_size, uint64_t seed);
  std::vector<size_t> next_batch();

 private:
  void refill();

  std::vector<int> lengths_;
  int batch_size_;
  Rng rng_;
  std::vector<std::vector<size_t>> pending_;
};

struct LossCurvePoint {
  int64_t step = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  int phase = 1;  // 1: plain training, 2: coverage fine-tuning
  double coverage_weight = 0.0;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> checkpoint_path;  // best checkpoint, rewritten on improvement
  std::optional<std::filesystem::path> loss_curve_path;  // appended per validation
  std::function<void(const LossCurvePoint&)> on_validate;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<LossCurvePoint> curve;
  bool diverged = false;
  std::string divergence_reason;
};

// Mean sequence loss over examples. Empty input throws.
double validate(const Parameters<float>& params, const Hyperparams& hp,
                const std::vector<EncodedExample>& examples, const LossOptions& options);

// Phase 1 trains max_steps with coverage off. Coverage models then
// fine-tune for coverage_finetune_steps with the coverage feature on and
// the loss weighted by coverage_weight. The best checkpoint is the lowest
// validation loss within the final phase.
TrainResult train(const std::vector<EncodedExample>& train_examples,
                  const std::vector<EncodedExample>& validation_examples, const Hyperparams& hp,
                  const TrainConfig& cfg, uint64_t vocab_fingerprint,
                  const TrainOutputs& outputs = {});

void append_loss_curve(const std::filesystem::path& path, const LossCurvePoint& point);
std::vector<LossCurvePoint> read_loss_curve(const std::filesystem::path& path);

}  // namespace hlgen
