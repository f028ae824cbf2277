#include "hlgen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "hlgen/error.hpp"
#include "hlgen/log.hpp"

namespace hlgen {
namespace {

// Batches per length-sorted window.
constexpr int kBucketWindow = 8;

constexpr const char* kCoverageGroup = "attention_wc";

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorKind::kUsage, "batch_size must be positive");
  if (!(learning_rate > 0)) throw Error(ErrorKind::kUsage, "learning_rate must be positive");
  if (!(initial_accumulator > 0)) {
    throw Error(ErrorKind::kUsage, "initial_accumulator must be positive");
  }
  if (!(max_grad_norm > 0)) throw Error(ErrorKind::kUsage, "max_grad_norm must be positive");
  if (max_steps < 0) throw Error(ErrorKind::kUsage, "max_steps must be non-negative");
  if (coverage_finetune_steps < 0) {
    throw Error(ErrorKind::kUsage, "coverage_finetune_steps must be non-negative");
  }
  if (validate_every < 1) throw Error(ErrorKind::kUsage, "validate_every must be positive");
  if (!(coverage_weight >= 0)) throw Error(ErrorKind::kUsage, "coverage_weight must be >= 0");
}

template <typename Scalar>
double clip_gradients(Parameters<Scalar>& grads, double max_norm) {
  double sq = 0.0;
  grads.for_each([&](const char* name, const auto& m) {
    if (!m.allFinite()) {
      throw Error(ErrorKind::kDivergence, std::string("non-finite gradient in ") + name);
    }
    sq += m.template cast<double>().squaredNorm();
  });
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto scale = static_cast<Scalar>(max_norm / norm);
    grads.for_each([&](const char*, auto& m) { m *= scale; });
  }
  return norm;
}

template double clip_gradients(Parameters<float>&, double);
template double clip_gradients(Parameters<double>&, double);

AdagradOptimizer::AdagradOptimizer(const Parameters<float>& shape_like, double learning_rate,
                                   double initial_accumulator)
    : accumulators_(shape_like.zeros_like()), learning_rate_(learning_rate) {
  const auto init = static_cast<float>(initial_accumulator);
  accumulators_.for_each([&](const char*, auto& m) { m.setConstant(init); });
}

AdagradOptimizer::AdagradOptimizer(Parameters<float> accumulators, double learning_rate)
    : accumulators_(std::move(accumulators)), learning_rate_(learning_rate) {}

void AdagradOptimizer::apply(Parameters<float>& params, const Parameters<float>& grads,
                             const std::vector<std::string>& frozen) {
  std::vector<Parameters<float>::Matrix*> p_groups;
  std::vector<const Parameters<float>::Matrix*> g_groups;
  std::vector<std::string> names;
  params.for_each([&](const char* name, auto& m) {
    p_groups.push_back(&m);
    names.emplace_back(name);
  });
  grads.for_each([&](const char*, const auto& m) { g_groups.push_back(&m); });
  size_t k = 0;
  const auto lr = static_cast<float>(learning_rate_);
  accumulators_.for_each([&](const char*, auto& acc) {
    const size_t i = k++;
    if (std::find(frozen.begin(), frozen.end(), names[i]) != frozen.end()) return;
    auto& p = *p_groups[i];
    const auto& g = *g_groups[i];
    acc.array() += g.array().square();
    p.array() -= lr * g.array() / acc.array().sqrt();
  });
}

Batcher::Batcher(std::vector<int> source_lengths, int batch_size, uint64_t seed)
    : lengths_(std::move(source_lengths)), batch_size_(batch_size), rng_(seed) {
  if (lengths_.empty()) throw Error(ErrorKind::kData, "no training examples");
  if (batch_size_ < 1) throw Error(ErrorKind::kUsage, "batch_size must be positive");
}

void Batcher::refill() {
  std::vector<size_t> order(lengths_.size());
  std::iota(order.begin(), order.end(), 0);
  rng_.shuffle(order);
  const size_t b = static_cast<size_t>(batch_size_);
  const size_t window = b * kBucketWindow;
  std::vector<std::vector<size_t>> batches;
  for (size_t w = 0; w < order.size(); w += window) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(w);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), w + window));
    std::stable_sort(first, last, [&](size_t x, size_t y) { return lengths_[x] < lengths_[y]; });
    for (auto it = first; it < last; it += static_cast<std::ptrdiff_t>(std::min<size_t>(b, last - it))) {
      batches.emplace_back(it, it + static_cast<std::ptrdiff_t>(std::min<size_t>(b, last - it)));
    }
  }
  rng_.shuffle(batches);
  // Consumed from the back.
  std::reverse(batches.begin(), batches.end());
  pending_ = std::move(batches);
}

std::vector<size_t> Batcher::next_batch() {
  if (pending_.empty()) refill();
  std::vector<size_t> batch = std::move(pending_.back());
  pending_.pop_back();
  return batch;
}

double validate(const Parameters<float>& params, const Hyperparams& hp,
                const std::vector<EncodedExample>& examples, const LossOptions& options) {
  if (examples.empty()) throw Error(ErrorKind::kData, "validation set is empty");
  double sum = 0.0;
  for (const EncodedExample& ex : examples) sum += sequence_loss(ex, params, hp, options).total;
  return sum / static_cast<double>(examples.size());
}

void append_loss_curve(const std::filesystem::path& path, const LossCurvePoint& point) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorKind::kInput, "cannot append to " + path.string());
  std::ostringstream line;
  line << std::setprecision(9) << point.step << '\t' << point.train_loss << '\t'
       << point.validation_loss << '\t' << point.phase << '\n';
  out << line.str();
}

std::vector<LossCurvePoint> read_loss_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing loss curve " + path.string());
  std::vector<LossCurvePoint> points;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    LossCurvePoint p;
    if (!(fields >> p.step >> p.train_loss >> p.validation_loss >> p.phase)) {
      throw Error(ErrorKind::kInput, "malformed loss curve line in " + path.string());
    }
    points.push_back(p);
  }
  return points;
}

TrainResult train(const std::vector<EncodedExample>& train_examples,
                  const std::vector<EncodedExample>& validation_examples, const Hyperparams& hp,
                  const TrainConfig& cfg, uint64_t vocab_fingerprint,
                  const TrainOutputs& outputs) {
  hp.validate();
  cfg.validate();
  if (train_examples.empty()) throw Error(ErrorKind::kData, "training set is empty");
  if (validation_examples.empty()) throw Error(ErrorKind::kData, "validation set is empty");

  TrainResult result;
  Checkpoint current;
  current.hp = hp;
  current.params = init_parameters<float>(hp, cfg.seed);
  current.vocab_fingerprint = vocab_fingerprint;
  current.best_validation_loss = std::numeric_limits<double>::quiet_NaN();
  AdagradOptimizer optimizer(current.params, cfg.learning_rate, cfg.initial_accumulator);
  current.accumulators = optimizer.accumulators();
  result.best = current;

  struct Phase {
    int index;
    int64_t steps;
    LossOptions options;
  };
  std::vector<Phase> phases;
  if (cfg.max_steps > 0) phases.push_back({1, cfg.max_steps, {false, 0.0}});
  if (hp.coverage_enabled && cfg.coverage_finetune_steps > 0) {
    phases.push_back({2, cfg.coverage_finetune_steps, {true, cfg.coverage_weight}});
  }
  if (phases.empty()) {
    result.last = current;
    return result;
  }
  const int final_phase = phases.back().index;

  std::vector<int> lengths;
  lengths.reserve(train_examples.size());
  for (const auto& ex : train_examples) lengths.push_back(static_cast<int>(ex.source_ids.size()));
  Batcher batcher(std::move(lengths), cfg.batch_size, cfg.seed ^ 0x5bd1e995ULL);

  Parameters<float> grad = current.params.zeros_like();
  int64_t step = 0;
  double best_loss = std::numeric_limits<double>::infinity();

  for (const Phase& phase : phases) {
    // Without coverage in play, the coverage weight stays untouched.
    std::vector<std::string> frozen;
    if (!phase.options.use_coverage) frozen.emplace_back(kCoverageGroup);
    double window_loss = 0.0;
    int64_t window_steps = 0;
    for (int64_t k = 1; k <= phase.steps; ++k) {
      ++step;
      const std::vector<size_t> batch = batcher.next_batch();
      grad.for_each([](const char*, auto& m) { m.setZero(); });
      double batch_loss = 0.0;
      for (size_t idx : batch) {
        batch_loss +=
            sequence_loss_and_gradient(train_examples[idx], current.params, hp, phase.options, grad)
                .total;
      }
      const float inv = 1.0f / static_cast<float>(batch.size());
      grad.for_each([&](const char*, auto& m) { m *= inv; });
      batch_loss /= static_cast<double>(batch.size());

      try {
        if (!std::isfinite(batch_loss)) {
          throw Error(ErrorKind::kDivergence, "non-finite training loss");
        }
        clip_gradients(grad, cfg.max_grad_norm);
      } catch (const Error& e) {
        result.diverged = true;
        result.divergence_reason = "step " + std::to_string(step) + ": " + e.what();
        result.last = current;
        return result;
      }
      optimizer.apply(current.params, grad, frozen);
      window_loss += batch_loss;
      ++window_steps;

      if (k % cfg.validate_every != 0 && k != phase.steps) continue;
      LossCurvePoint point;
      point.step = step;
      point.train_loss = window_loss / static_cast<double>(window_steps);
      point.validation_loss = validate(current.params, hp, validation_examples, phase.options);
      point.phase = phase.index;
      point.coverage_weight = phase.options.coverage_weight;
      window_loss = 0.0;
      window_steps = 0;
      result.curve.push_back(point);
      if (outputs.loss_curve_path) append_loss_curve(*outputs.loss_curve_path, point);
      if (outputs.on_validate) outputs.on_validate(point);

      current.step = step;
      current.accumulators = optimizer.accumulators();
      if (!std::isfinite(point.validation_loss)) {
        result.diverged = true;
        result.divergence_reason =
            "step " + std::to_string(step) + ": validation loss is not finite";
        result.last = current;
        return result;
      }
      if (phase.index == final_phase && point.validation_loss < best_loss) {
        best_loss = point.validation_loss;
        current.best_validation_loss = best_loss;
        result.best = current;
        if (outputs.checkpoint_path) save_checkpoint(result.best, *outputs.checkpoint_path);
      }
    }
  }
  current.best_validation_loss = best_loss;
  result.last = current;
  return result;
}

}  // namespace hlgen
