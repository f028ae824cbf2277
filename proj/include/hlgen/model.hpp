#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hlgen {

struct Hyperparams {
  int vocab_size = 50000;
  int embedding_dim = 128;
  int hidden_dim = 256;  // per encoder direction; also the decoder cell size
  bool coverage_enabled = false;
  double coverage_weight = 1.0;
  int max_source_len = 400;
  int max_target_len = 100;

  // Attention feature size; twice the cell size like the encoder states.
  int attention_dim() const { return 2 * hidden_dim; }
  void validate() const;
  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

// All trainable weights. Vectors are column matrices of one column so that
// every group shares one storage type. Gate blocks in the recurrent
// matrices are ordered input, forget, cell, output.
template <typename Scalar>
struct Parameters {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Matrix embedding;     // V x E
  Matrix encoder_fw_w;  // 4H x (E + H)
  Matrix encoder_fw_b;  // 4H
  Matrix encoder_bw_w;
  Matrix encoder_bw_b;
  Matrix reduce_c_w;  // H x 2H
  Matrix reduce_c_b;
  Matrix reduce_h_w;
  Matrix reduce_h_b;
  Matrix decoder_w;  // 4H x (E + H)
  Matrix decoder_b;
  Matrix attention_wh;  // A x 2H
  Matrix attention_ws;  // A x H
  Matrix attention_b;   // A
  Matrix attention_v;   // A
  Matrix attention_wc;  // A, empty unless coverage is enabled
  Matrix output1_w;     // H x 3H
  Matrix output1_b;
  Matrix output2_w;  // V x H
  Matrix output2_b;
  Matrix pgen_wh;  // 2H
  Matrix pgen_ws;  // H
  Matrix pgen_wx;  // E
  Matrix pgen_b;   // 1

  // Visits (name, matrix) for every group in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  // Zero-filled parameters of identical shape.
  Parameters zeros_like() const;

  template <typename To>
  Parameters<To> cast() const;

 private:
  template <typename Self, typename F>
  static void visit(Self& p, F& f) {
    f("embedding", p.embedding);
    f("encoder_fw_w", p.encoder_fw_w);
    f("encoder_fw_b", p.encoder_fw_b);
    f("encoder_bw_w", p.encoder_bw_w);
    f("encoder_bw_b", p.encoder_bw_b);
    f("reduce_c_w", p.reduce_c_w);
    f("reduce_c_b", p.reduce_c_b);
    f("reduce_h_w", p.reduce_h_w);
    f("reduce_h_b", p.reduce_h_b);
    f("decoder_w", p.decoder_w);
    f("decoder_b", p.decoder_b);
    f("attention_wh", p.attention_wh);
    f("attention_ws", p.attention_ws);
    f("attention_b", p.attention_b);
    f("attention_v", p.attention_v);
    f("attention_wc", p.attention_wc);
    f("output1_w", p.output1_w);
    f("output1_b", p.output1_b);
    f("output2_w", p.output2_w);
    f("output2_b", p.output2_b);
    f("pgen_wh", p.pgen_wh);
    f("pgen_ws", p.pgen_ws);
    f("pgen_wx", p.pgen_wx);
    f("pgen_b", p.pgen_b);
  }
};

template <typename Scalar>
Parameters<Scalar> Parameters<Scalar>::zeros_like() const {
  Parameters out = *this;
  out.for_each([](const char*, Matrix& m) { m.setZero(); });
  return out;
}

template <typename Scalar>
template <typename To>
Parameters<To> Parameters<Scalar>::cast() const {
  Parameters<To> out;
  std::vector<const Matrix*> sources;
  for_each([&](const char*, const Matrix& m) { sources.push_back(&m); });
  size_t k = 0;
  out.for_each([&](const char*, typename Parameters<To>::Matrix& m) {
    m = sources[k++]->template cast<To>();
  });
  return out;
}

// Uniform in [-0.02, 0.02], deterministic per seed. The coverage weight is
// drawn from its own stream so that every other group is identical whether
// or not coverage is enabled.
template <typename Scalar>
Parameters<Scalar> init_parameters(const Hyperparams& hp, uint64_t init_seed);

// Throws ErrorKind::kInternal when shapes disagree with hp.
template <typename Scalar>
void check_shapes(const Parameters<Scalar>& params, const Hyperparams& hp);

template <typename Scalar>
struct EncoderOutput {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix states;    // 2H x n, zero columns at masked positions
  Matrix features;  // attention_wh * states, A x n
  std::vector<bool> mask;  // true for real tokens
  Vector initial_c;
  Vector initial_h;

  int length() const { return static_cast<int>(mask.size()); }
};

// PAD positions are masked. Ids must be plain vocabulary ids (< vocab_size);
// all-PAD input is rejected.
template <typename Scalar>
EncoderOutput<Scalar> encode_source(std::span<const int> source_ids,
                                    const Parameters<Scalar>& params, const Hyperparams& hp);

template <typename Scalar>
struct AttentionResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> attention;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> context;
};

// e_i = v . tanh(Wh h_i + Ws s + wc c_i + b), normalized over unmasked i.
// Pass an empty coverage vector to run without the coverage feature.
template <typename Scalar>
AttentionResult<Scalar> attention_step(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& decoder_state,
    const EncoderOutput<Scalar>& enc, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& coverage,
    const Parameters<Scalar>& params);

// softmax(W2 (W1 [s; h*] + b1) + b2)
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> vocab_distribution(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& decoder_state,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& context, const Parameters<Scalar>& params);

// sigmoid(wh . h* + ws . s + wx . x + b)
template <typename Scalar>
Scalar generation_probability(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& context,
                              const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& decoder_state,
                              const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& input_embedding,
                              const Parameters<Scalar>& params);

// p_gen * P_vocab over the first V slots plus (1 - p_gen) * attention
// scattered onto source_ids_extended, over V + oov_count slots.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> final_distribution(
    Scalar p_gen, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& p_vocab,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& attention,
    std::span<const int> source_ids_extended, int oov_count);

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> coverage_update(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& coverage,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& attention);

inline constexpr double kProbabilityFloor = 1e-10;

struct StepLoss {
  double nll = 0.0;
  double coverage = 0.0;
};

// nll = -log(max(P(target), 1e-10)); coverage = sum_i min(a_i, c_i), zero
// when coverage_weight is zero.
template <typename Scalar>
StepLoss step_loss(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& final_dist,
                   int target_id_extended,
                   const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& attention,
                   const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& coverage,
                   double coverage_weight);

// Whether the coverage feature and loss are active for a forward pass; the
// trainer switches this on only for the fine-tuning phase.
struct LossOptions {
  bool use_coverage = false;
  double coverage_weight = 0.0;
};

struct SequenceLoss {
  double total = 0.0;  // mean over steps of nll + lambda * covloss
  double nll = 0.0;    // mean nll
  double coverage = 0.0;
  int steps = 0;
};

struct EncodedExample;

// Teacher-forced forward pass.
template <typename Scalar>
SequenceLoss sequence_loss(const EncodedExample& example, const Parameters<Scalar>& params,
                           const Hyperparams& hp, const LossOptions& options);

// Forward plus backward; gradients of SequenceLoss::total are added into
// grad (which must have the shape of params).
template <typename Scalar>
SequenceLoss sequence_loss_and_gradient(const EncodedExample& example,
                                        const Parameters<Scalar>& params, const Hyperparams& hp,
                                        const LossOptions& options, Parameters<Scalar>& grad);

// Inference-time decoder state.
template <typename Scalar>
struct DecoderState {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> h;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> c;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> coverage;  // empty without coverage
};

template <typename Scalar>
struct StepPrediction {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> attention;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> context;
  Scalar p_gen = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> final_dist;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> coverage_after;
};

template <typename Scalar>
DecoderState<Scalar> initial_decoder_state(const EncoderOutput<Scalar>& enc, bool use_coverage);

// One decoder step: consumes input_id (extended ids are fed as UNK), updates
// state in place and returns the prediction for the next token.
template <typename Scalar>
StepPrediction<Scalar> decoder_step(DecoderState<Scalar>& state, int input_id,
                                    const EncoderOutput<Scalar>& enc,
                                    std::span<const int> source_ids_extended, int oov_count,
                                    const Parameters<Scalar>& params, const Hyperparams& hp);

}  // namespace hlgen
