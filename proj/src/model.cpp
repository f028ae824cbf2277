#include "hlgen/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hlgen/entity_tokenizer.hpp"
#include "hlgen/error.hpp"
#include "hlgen/rng.hpp"

namespace hlgen {
namespace {

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

constexpr double kInitScale = 0.02;
constexpr uint64_t kCoverageStreamSalt = 0x9e3779b97f4a7c15ULL;

template <typename S>
Vec<S> sigmoid(const Vec<S>& z) {
  return (S(1) + (-z.array()).exp()).inverse().matrix();
}

template <typename S>
S sigmoid(S z) {
  return S(1) / (S(1) + std::exp(-z));
}

// Softmax over unmasked entries; masked entries get exactly zero.
template <typename S>
Vec<S> masked_softmax(const Vec<S>& scores, const std::vector<bool>& mask) {
  S max_score = -std::numeric_limits<S>::infinity();
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (mask[static_cast<size_t>(i)]) max_score = std::max(max_score, scores[i]);
  }
  Vec<S> out = Vec<S>::Zero(scores.size());
  S total = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    out[i] = std::exp(scores[i] - max_score);
    total += out[i];
  }
  return out / total;
}

template <typename S>
Vec<S> softmax(const Vec<S>& logits) {
  const S max_logit = logits.maxCoeff();
  Vec<S> out = (logits.array() - max_logit).exp().matrix();
  return out / out.sum();
}

// Q factor of a matrix of standard normal draws (Box-Muller over raw
// engine output), sign-corrected so the result is uniformly distributed.
template <typename S>
Mat<S> random_orthogonal(int n, Rng& rng) {
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u1 = 1.0 - rng.uniform01();
      const double u2 = rng.uniform01();
      g(i, j) = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q.cast<S>();
}

template <typename S>
struct LstmStep {
  Vec<S> input;  // [x; h_prev]
  Vec<S> i, f, g, o;
  Vec<S> c_prev, c, tanh_c, h;
};

template <typename S>
LstmStep<S> lstm_forward(const Mat<S>& w, const Mat<S>& b, const Vec<S>& x, const Vec<S>& h_prev,
                         const Vec<S>& c_prev) {
  const Eigen::Index hd = h_prev.size();
  LstmStep<S> st;
  st.input.resize(x.size() + hd);
  st.input << x, h_prev;
  const Vec<S> z = w * st.input + b.col(0);
  st.i = sigmoid<S>(z.segment(0, hd));
  st.f = sigmoid<S>(z.segment(hd, hd));
  st.g = z.segment(2 * hd, hd).array().tanh().matrix();
  st.o = sigmoid<S>(z.segment(3 * hd, hd));
  st.c_prev = c_prev;
  st.c = st.f.cwiseProduct(c_prev) + st.i.cwiseProduct(st.g);
  st.tanh_c = st.c.array().tanh().matrix();
  st.h = st.o.cwiseProduct(st.tanh_c);
  return st;
}

// Backpropagates through one cell. dc is the gradient w.r.t. the cell's
// output c and is replaced by the gradient w.r.t. c_prev. Returns the
// gradient w.r.t. [x; h_prev].
template <typename S>
Vec<S> lstm_backward(const LstmStep<S>& st, const Mat<S>& w, const Vec<S>& dh, Vec<S>& dc,
                     Mat<S>& dw, Mat<S>& db) {
  const Eigen::Index hd = dh.size();
  const Vec<S> dcell =
      dc + dh.cwiseProduct(st.o).cwiseProduct((S(1) - st.tanh_c.array().square()).matrix());
  Vec<S> dz(4 * hd);
  dz.segment(0, hd) = dcell.cwiseProduct(st.g).cwiseProduct(
      st.i.cwiseProduct((S(1) - st.i.array()).matrix()));
  dz.segment(hd, hd) = dcell.cwiseProduct(st.c_prev).cwiseProduct(
      st.f.cwiseProduct((S(1) - st.f.array()).matrix()));
  dz.segment(2 * hd, hd) =
      dcell.cwiseProduct(st.i).cwiseProduct((S(1) - st.g.array().square()).matrix());
  dz.segment(3 * hd, hd) = dh.cwiseProduct(st.tanh_c).cwiseProduct(
      st.o.cwiseProduct((S(1) - st.o.array()).matrix()));
  dc = dcell.cwiseProduct(st.f);
  dw.noalias() += dz * st.input.transpose();
  db.col(0) += dz;
  return w.transpose() * dz;
}

template <typename S>
struct EncoderCache {
  std::vector<int> positions;  // unmasked positions in order
  std::vector<LstmStep<S>> fw;
  std::vector<LstmStep<S>> bw;  // bw[k] processes positions[K - 1 - k]
  Vec<S> final_c;               // [fw_c_last; bw_c_last]
  Vec<S> final_h;
};

template <typename S>
EncoderOutput<S> encode_impl(std::span<const int> ids, const Parameters<S>& p,
                             const Hyperparams& hp, EncoderCache<S>* cache) {
  const int hd = hp.hidden_dim;
  const int n = static_cast<int>(ids.size());
  EncoderOutput<S> enc;
  enc.mask.assign(ids.size(), false);
  std::vector<int> positions;
  for (int i = 0; i < n; ++i) {
    const int id = ids[static_cast<size_t>(i)];
    if (id < 0 || id >= hp.vocab_size) {
      throw Error(ErrorKind::kInternal,
                  "encoder input id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(hp.vocab_size) + " (extended ids must not be embedded)");
    }
    if (id != kPadId) {
      enc.mask[static_cast<size_t>(i)] = true;
      positions.push_back(i);
    }
  }
  if (positions.empty()) throw Error(ErrorKind::kData, "source has no unpadded tokens");

  enc.states = Mat<S>::Zero(2 * hd, n);
  const int k_count = static_cast<int>(positions.size());
  Vec<S> h = Vec<S>::Zero(hd);
  Vec<S> c = Vec<S>::Zero(hd);
  std::vector<LstmStep<S>> fw;
  fw.reserve(positions.size());
  for (int k = 0; k < k_count; ++k) {
    const int pos = positions[static_cast<size_t>(k)];
    const Vec<S> x = p.embedding.row(ids[static_cast<size_t>(pos)]).transpose();
    fw.push_back(lstm_forward<S>(p.encoder_fw_w, p.encoder_fw_b, x, h, c));
    h = fw.back().h;
    c = fw.back().c;
    enc.states.block(0, pos, hd, 1) = h;
  }
  const Vec<S> fw_h = h;
  const Vec<S> fw_c = c;
  h.setZero();
  c.setZero();
  std::vector<LstmStep<S>> bw;
  bw.reserve(positions.size());
  for (int k = 0; k < k_count; ++k) {
    const int pos = positions[static_cast<size_t>(k_count - 1 - k)];
    const Vec<S> x = p.embedding.row(ids[static_cast<size_t>(pos)]).transpose();
    bw.push_back(lstm_forward<S>(p.encoder_bw_w, p.encoder_bw_b, x, h, c));
    h = bw.back().h;
    c = bw.back().c;
    enc.states.block(hd, pos, hd, 1) = h;
  }
  Vec<S> final_c(2 * hd);
  final_c << fw_c, c;
  Vec<S> final_h(2 * hd);
  final_h << fw_h, h;
  enc.initial_c = p.reduce_c_w * final_c + p.reduce_c_b.col(0);
  enc.initial_h = p.reduce_h_w * final_h + p.reduce_h_b.col(0);
  enc.features = p.attention_wh * enc.states;
  if (cache != nullptr) {
    cache->positions = std::move(positions);
    cache->fw = std::move(fw);
    cache->bw = std::move(bw);
    cache->final_c = std::move(final_c);
    cache->final_h = std::move(final_h);
  }
  return enc;
}

// tanh(F + (Ws s + b) 1^T + wc c^T), A x n.
template <typename S>
Mat<S> attention_hidden(const Vec<S>& s, const EncoderOutput<S>& enc, const Vec<S>& coverage,
                        const Parameters<S>& p) {
  Mat<S> z = enc.features;
  const Vec<S> shift = p.attention_ws * s + p.attention_b.col(0);
  z.colwise() += shift;
  if (coverage.size() > 0) z.noalias() += p.attention_wc.col(0) * coverage.transpose();
  return z.array().tanh().matrix();
}

template <typename S>
void check_source_ids_extended(std::span<const int> source_ids_extended, int vocab_size,
                               int oov_count) {
  for (int id : source_ids_extended) {
    if (id < 0 || id >= vocab_size + oov_count) {
      throw Error(ErrorKind::kInternal, "extended source id " + std::to_string(id) +
                                            " inconsistent with oov count " +
                                            std::to_string(oov_count));
    }
  }
}

// Everything the backward pass needs from one teacher-forced step.
template <typename S>
struct StepCache {
  int input_id = 0;
  int target = 0;
  LstmStep<S> lstm;
  Vec<S> coverage;  // c^t, empty without coverage
  Vec<S> attention;
  Vec<S> context;
  Vec<S> output_input;  // [s; h*]
  Vec<S> output_hidden;
  Vec<S> p_vocab;
  S p_gen = 0;
  S copy_mass = 0;  // attention mass on positions holding the target
  S target_prob = 0;
};

template <typename S>
struct ForwardPass {
  EncoderOutput<S> enc;
  EncoderCache<S> enc_cache;
  std::vector<StepCache<S>> steps;
  SequenceLoss loss;
};

template <typename S>
ForwardPass<S> forward(const EncodedExample& ex, const Parameters<S>& p, const Hyperparams& hp,
                       const LossOptions& opt, bool keep_cache) {
  const int steps = static_cast<int>(ex.target_ids_extended.size());
  if (steps == 0) throw Error(ErrorKind::kData, "target sequence is empty");
  if (ex.decoder_input_ids.size() != ex.target_ids_extended.size()) {
    throw Error(ErrorKind::kInternal, "decoder inputs and targets differ in length");
  }
  if (opt.use_coverage && !hp.coverage_enabled) {
    throw Error(ErrorKind::kInternal, "coverage requested for a model without coverage weights");
  }
  const int v = hp.vocab_size;
  const int oov = ex.oov_count();
  if (ex.source_ids.size() != ex.source_ids_extended.size()) {
    throw Error(ErrorKind::kInternal, "source id lists differ in length");
  }
  check_source_ids_extended<S>(ex.source_ids_extended, v, oov);

  ForwardPass<S> fp;
  fp.enc = encode_impl<S>(ex.source_ids, p, hp, keep_cache ? &fp.enc_cache : nullptr);
  const EncoderOutput<S>& enc = fp.enc;
  const int n = enc.length();
  Vec<S> h = enc.initial_h;
  Vec<S> c = enc.initial_c;
  Vec<S> coverage;
  if (opt.use_coverage) coverage = Vec<S>::Zero(n);
  const double lambda = opt.use_coverage ? opt.coverage_weight : 0.0;

  double nll_sum = 0.0;
  double cov_sum = 0.0;
  if (keep_cache) fp.steps.reserve(static_cast<size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    StepCache<S> sc;
    sc.input_id = ex.decoder_input_ids[static_cast<size_t>(t)];
    sc.target = ex.target_ids_extended[static_cast<size_t>(t)];
    if (sc.input_id < 0 || sc.input_id >= v) {
      throw Error(ErrorKind::kInternal, "decoder input id out of vocabulary");
    }
    if (sc.target < 0 || sc.target >= v + oov) {
      throw Error(ErrorKind::kInternal, "target id " + std::to_string(sc.target) + " out of range");
    }
    const Vec<S> x = p.embedding.row(sc.input_id).transpose();
    sc.lstm = lstm_forward<S>(p.decoder_w, p.decoder_b, x, h, c);
    h = sc.lstm.h;
    c = sc.lstm.c;
    AttentionResult<S> att = attention_step<S>(h, enc, coverage, p);
    sc.attention = std::move(att.attention);
    sc.context = std::move(att.context);
    sc.output_input.resize(h.size() + sc.context.size());
    sc.output_input << h, sc.context;
    sc.output_hidden = p.output1_w * sc.output_input + p.output1_b.col(0);
    sc.p_vocab = softmax<S>(p.output2_w * sc.output_hidden + p.output2_b.col(0));
    sc.p_gen = generation_probability<S>(sc.context, h, x, p);
    sc.copy_mass = 0;
    for (int i = 0; i < n; ++i) {
      if (ex.source_ids_extended[static_cast<size_t>(i)] == sc.target) {
        sc.copy_mass += sc.attention[i];
      }
    }
    const S gen_mass = sc.target < v ? sc.p_vocab[sc.target] : S(0);
    sc.target_prob = sc.p_gen * gen_mass + (S(1) - sc.p_gen) * sc.copy_mass;
    nll_sum += -std::log(std::max(static_cast<double>(sc.target_prob), kProbabilityFloor));
    if (opt.use_coverage) {
      cov_sum += static_cast<double>(sc.attention.cwiseMin(coverage).sum());
      sc.coverage = coverage;
      coverage += sc.attention;
    }
    if (keep_cache) fp.steps.push_back(std::move(sc));
  }
  fp.loss.steps = steps;
  fp.loss.nll = nll_sum / steps;
  fp.loss.coverage = cov_sum / steps;
  fp.loss.total = fp.loss.nll + lambda * fp.loss.coverage;
  return fp;
}

}  // namespace

void Hyperparams::validate() const {
  const auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::kUsage, std::string("invalid hyperparameter: ") + what);
  };
  require(vocab_size > kNumSpecialTokens, "vocab_size must exceed the 4 special tokens");
  require(embedding_dim > 0, "embedding_dim must be positive");
  require(hidden_dim > 0, "hidden_dim must be positive");
  require(max_source_len > 0, "max_source_len must be positive");
  require(max_target_len > 0, "max_target_len must be positive");
  require(coverage_weight >= 0.0, "coverage_weight must be non-negative");
}

template <typename S>
Parameters<S> init_parameters(const Hyperparams& hp, uint64_t init_seed) {
  hp.validate();
  const int v = hp.vocab_size;
  const int e = hp.embedding_dim;
  const int hd = hp.hidden_dim;
  const int a = hp.attention_dim();
  Parameters<S> p;
  p.embedding.resize(v, e);
  p.encoder_fw_w.resize(4 * hd, e + hd);
  p.encoder_fw_b.resize(4 * hd, 1);
  p.encoder_bw_w.resize(4 * hd, e + hd);
  p.encoder_bw_b.resize(4 * hd, 1);
  p.reduce_c_w.resize(hd, 2 * hd);
  p.reduce_c_b.resize(hd, 1);
  p.reduce_h_w.resize(hd, 2 * hd);
  p.reduce_h_b.resize(hd, 1);
  p.decoder_w.resize(4 * hd, e + hd);
  p.decoder_b.resize(4 * hd, 1);
  p.attention_wh.resize(a, 2 * hd);
  p.attention_ws.resize(a, hd);
  p.attention_b.resize(a, 1);
  p.attention_v.resize(a, 1);
  p.attention_wc.resize(hp.coverage_enabled ? a : 0, hp.coverage_enabled ? 1 : 0);
  p.output1_w.resize(hd, 3 * hd);
  p.output1_b.resize(hd, 1);
  p.output2_w.resize(v, hd);
  p.output2_b.resize(v, 1);
  p.pgen_wh.resize(2 * hd, 1);
  p.pgen_ws.resize(hd, 1);
  p.pgen_wx.resize(e, 1);
  p.pgen_b.resize(1, 1);

  Rng rng(init_seed);
  Rng coverage_rng(init_seed ^ kCoverageStreamSalt);
  p.for_each([&](const char* name, Mat<S>& m) {
    Rng& source = std::string_view(name) == "attention_wc" ? coverage_rng : rng;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        m(i, j) = static_cast<S>(source.uniform(-kInitScale, kInitScale));
      }
    }
  });
  // Recurrent blocks (the h_prev columns of each gate) start orthogonal.
  for (Mat<S>* w : {&p.encoder_fw_w, &p.encoder_bw_w, &p.decoder_w}) {
    for (int gate = 0; gate < 4; ++gate) {
      w->block(gate * hd, e, hd, hd) = random_orthogonal<S>(hd, rng);
    }
  }
  return p;
}

template <typename S>
void check_shapes(const Parameters<S>& params, const Hyperparams& hp) {
  const Parameters<S> expected = init_parameters<S>(hp, 0);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  expected.for_each([&](const char*, const Mat<S>& m) { shapes.emplace_back(m.rows(), m.cols()); });
  size_t k = 0;
  params.for_each([&](const char* name, const Mat<S>& m) {
    const auto [r, c] = shapes[k++];
    if (m.rows() != r || m.cols() != c) {
      throw Error(ErrorKind::kCheckpoint,
                  std::string("parameter group ") + name + " has shape " +
                      std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ", expected " +
                      std::to_string(r) + "x" + std::to_string(c));
    }
  });
}

template <typename S>
EncoderOutput<S> encode_source(std::span<const int> source_ids, const Parameters<S>& params,
                               const Hyperparams& hp) {
  if (static_cast<int>(source_ids.size()) > hp.max_source_len) {
    throw Error(ErrorKind::kData, "source of " + std::to_string(source_ids.size()) +
                                      " tokens exceeds max_source_len " +
                                      std::to_string(hp.max_source_len));
  }
  return encode_impl<S>(source_ids, params, hp, nullptr);
}

template <typename S>
AttentionResult<S> attention_step(const Vec<S>& decoder_state, const EncoderOutput<S>& enc,
                                  const Vec<S>& coverage, const Parameters<S>& params) {
  if (std::none_of(enc.mask.begin(), enc.mask.end(), [](bool m) { return m; })) {
    throw Error(ErrorKind::kInternal, "attention over a fully masked source");
  }
  if (coverage.size() > 0 && coverage.size() != enc.length()) {
    throw Error(ErrorKind::kInternal, "coverage length differs from source length");
  }
  if (coverage.size() > 0 && params.attention_wc.size() == 0) {
    throw Error(ErrorKind::kInternal, "coverage given but model has no coverage weight");
  }
  const Mat<S> hidden = attention_hidden<S>(decoder_state, enc, coverage, params);
  const Vec<S> scores = hidden.transpose() * params.attention_v.col(0);
  AttentionResult<S> out;
  out.attention = masked_softmax<S>(scores, enc.mask);
  out.context = enc.states * out.attention;
  return out;
}

template <typename S>
Vec<S> vocab_distribution(const Vec<S>& decoder_state, const Vec<S>& context,
                          const Parameters<S>& params) {
  Vec<S> joined(decoder_state.size() + context.size());
  joined << decoder_state, context;
  const Vec<S> hidden = params.output1_w * joined + params.output1_b.col(0);
  return softmax<S>(params.output2_w * hidden + params.output2_b.col(0));
}

template <typename S>
S generation_probability(const Vec<S>& context, const Vec<S>& decoder_state,
                         const Vec<S>& input_embedding, const Parameters<S>& params) {
  const S z = params.pgen_wh.col(0).dot(context) + params.pgen_ws.col(0).dot(decoder_state) +
              params.pgen_wx.col(0).dot(input_embedding) + params.pgen_b(0, 0);
  return sigmoid<S>(z);
}

template <typename S>
Vec<S> final_distribution(S p_gen, const Vec<S>& p_vocab, const Vec<S>& attention,
                          std::span<const int> source_ids_extended, int oov_count) {
  if (static_cast<Eigen::Index>(source_ids_extended.size()) != attention.size()) {
    throw Error(ErrorKind::kInternal, "attention length differs from source length");
  }
  const int v = static_cast<int>(p_vocab.size());
  check_source_ids_extended<S>(source_ids_extended, v, oov_count);
  Vec<S> out = Vec<S>::Zero(v + oov_count);
  out.head(v) = p_gen * p_vocab;
  const S copy_weight = S(1) - p_gen;
  for (size_t i = 0; i < source_ids_extended.size(); ++i) {
    out[source_ids_extended[i]] += copy_weight * attention[static_cast<Eigen::Index>(i)];
  }
  return out;
}

template <typename S>
Vec<S> coverage_update(const Vec<S>& coverage, const Vec<S>& attention) {
  if (coverage.size() != attention.size()) {
    throw Error(ErrorKind::kInternal, "coverage and attention lengths differ");
  }
  return coverage + attention;
}

template <typename S>
StepLoss step_loss(const Vec<S>& final_dist, int target_id_extended, const Vec<S>& attention,
                   const Vec<S>& coverage, double coverage_weight) {
  if (target_id_extended < 0 || target_id_extended >= final_dist.size()) {
    throw Error(ErrorKind::kInternal, "target id " + std::to_string(target_id_extended) +
                                          " outside distribution of size " +
                                          std::to_string(final_dist.size()));
  }
  StepLoss loss;
  const double prob = static_cast<double>(final_dist[target_id_extended]);
  loss.nll = -std::log(std::max(prob, kProbabilityFloor));
  if (coverage_weight > 0.0 && coverage.size() > 0) {
    if (coverage.size() != attention.size()) {
      throw Error(ErrorKind::kInternal, "coverage and attention lengths differ");
    }
    loss.coverage = static_cast<double>(attention.cwiseMin(coverage).sum());
  }
  return loss;
}

template <typename S>
SequenceLoss sequence_loss(const EncodedExample& example, const Parameters<S>& params,
                           const Hyperparams& hp, const LossOptions& options) {
  return forward<S>(example, params, hp, options, false).loss;
}

template <typename S>
SequenceLoss sequence_loss_and_gradient(const EncodedExample& ex, const Parameters<S>& p,
                                        const Hyperparams& hp, const LossOptions& opt,
                                        Parameters<S>& g) {
  ForwardPass<S> fp = forward<S>(ex, p, hp, opt, true);
  const EncoderOutput<S>& enc = fp.enc;
  const int hd = hp.hidden_dim;
  const int e = hp.embedding_dim;
  const int v = hp.vocab_size;
  const int n = enc.length();
  const int steps = fp.loss.steps;
  const S scale = S(1) / static_cast<S>(steps);
  const S lambda = opt.use_coverage ? static_cast<S>(opt.coverage_weight) : S(0);

  Mat<S> d_states = Mat<S>::Zero(2 * hd, n);
  Mat<S> d_features = Mat<S>::Zero(hp.attention_dim(), n);
  Vec<S> dh_next = Vec<S>::Zero(hd);
  Vec<S> dc_next = Vec<S>::Zero(hd);
  Vec<S> dcov_next;  // gradient w.r.t. c^{t+1}
  if (opt.use_coverage) dcov_next = Vec<S>::Zero(n);
  const Vec<S> attn_v = p.attention_v.col(0);

  for (int t = steps - 1; t >= 0; --t) {
    const StepCache<S>& sc = fp.steps[static_cast<size_t>(t)];
    const Vec<S>& s = sc.lstm.h;
    const Vec<S> x = p.embedding.row(sc.input_id).transpose();

    Vec<S> d_attention = Vec<S>::Zero(n);
    Vec<S> d_context = Vec<S>::Zero(2 * hd);
    Vec<S> d_s = Vec<S>::Zero(hd);
    Vec<S> d_x = Vec<S>::Zero(e);

    // d nll / d P(target); zero under the probability floor.
    S d_prob = 0;
    if (static_cast<double>(sc.target_prob) > kProbabilityFloor) d_prob = -scale / sc.target_prob;
    const S gen_mass = sc.target < v ? sc.p_vocab[sc.target] : S(0);

    // Generation probability.
    const S d_pgen = d_prob * (gen_mass - sc.copy_mass);
    const S d_pgen_pre = d_pgen * sc.p_gen * (S(1) - sc.p_gen);
    g.pgen_wh.col(0) += d_pgen_pre * sc.context;
    g.pgen_ws.col(0) += d_pgen_pre * s;
    g.pgen_wx.col(0) += d_pgen_pre * x;
    g.pgen_b(0, 0) += d_pgen_pre;
    d_context += d_pgen_pre * p.pgen_wh.col(0);
    d_s += d_pgen_pre * p.pgen_ws.col(0);
    d_x += d_pgen_pre * p.pgen_wx.col(0);

    // Copy branch.
    const S d_copy = d_prob * (S(1) - sc.p_gen);
    for (int i = 0; i < n; ++i) {
      if (ex.source_ids_extended[static_cast<size_t>(i)] == sc.target) d_attention[i] += d_copy;
    }

    // Vocabulary branch: only P_vocab[target] is used.
    if (sc.target < v && d_prob != S(0)) {
      const S d_pv = d_prob * sc.p_gen;
      Vec<S> d_logits = -d_pv * gen_mass * sc.p_vocab;
      d_logits[sc.target] += d_pv * gen_mass;
      g.output2_w.noalias() += d_logits * sc.output_hidden.transpose();
      g.output2_b.col(0) += d_logits;
      const Vec<S> d_hidden = p.output2_w.transpose() * d_logits;
      g.output1_w.noalias() += d_hidden * sc.output_input.transpose();
      g.output1_b.col(0) += d_hidden;
      const Vec<S> d_joined = p.output1_w.transpose() * d_hidden;
      d_s += d_joined.head(hd);
      d_context += d_joined.tail(2 * hd);
    }

    // Coverage loss and the running-sum carry c^{t+1} = c^t + a^t.
    Vec<S> d_coverage;
    if (opt.use_coverage) {
      d_coverage = dcov_next;
      d_attention += dcov_next;
      const S w = lambda * scale;
      if (w != S(0)) {
        for (int i = 0; i < n; ++i) {
          if (sc.attention[i] <= sc.coverage[i]) {
            d_attention[i] += w;
          } else {
            d_coverage[i] += w;
          }
        }
      }
    }

    // Context vector.
    d_attention.noalias() += enc.states.transpose() * d_context;
    d_states.noalias() += d_context * sc.attention.transpose();

    // Masked softmax.
    const S weighted = sc.attention.dot(d_attention);
    const Vec<S> d_scores = sc.attention.cwiseProduct((d_attention.array() - weighted).matrix());

    // Scores e_i = v . tanh(z_i).
    const Mat<S> hidden = attention_hidden<S>(s, enc, sc.coverage, p);
    g.attention_v.col(0).noalias() += hidden * d_scores;
    Mat<S> d_z = attn_v * d_scores.transpose();
    d_z.array() *= (S(1) - hidden.array().square());
    d_features += d_z;
    const Vec<S> d_shift = d_z.rowwise().sum();
    g.attention_ws.noalias() += d_shift * s.transpose();
    g.attention_b.col(0) += d_shift;
    d_s.noalias() += p.attention_ws.transpose() * d_shift;
    if (opt.use_coverage) {
      g.attention_wc.col(0).noalias() += d_z * sc.coverage;
      d_coverage.noalias() += d_z.transpose() * p.attention_wc.col(0);
      dcov_next = d_coverage;
    }

    // Decoder cell.
    const Vec<S> dh = d_s + dh_next;
    const Vec<S> d_input = lstm_backward<S>(sc.lstm, p.decoder_w, dh, dc_next, g.decoder_w, g.decoder_b);
    d_x += d_input.head(e);
    dh_next = d_input.tail(hd);
    g.embedding.row(sc.input_id) += d_x.transpose();
  }

  // Attention features F = Wh H.
  g.attention_wh.noalias() += d_features * enc.states.transpose();
  d_states.noalias() += p.attention_wh.transpose() * d_features;

  // State reduction.
  const EncoderCache<S>& ec = fp.enc_cache;
  g.reduce_h_w.noalias() += dh_next * ec.final_h.transpose();
  g.reduce_h_b.col(0) += dh_next;
  g.reduce_c_w.noalias() += dc_next * ec.final_c.transpose();
  g.reduce_c_b.col(0) += dc_next;
  const Vec<S> d_final_h = p.reduce_h_w.transpose() * dh_next;
  const Vec<S> d_final_c = p.reduce_c_w.transpose() * dc_next;

  const int k_count = static_cast<int>(ec.positions.size());
  // Forward direction, last step first.
  Vec<S> dh = d_final_h.head(hd);
  Vec<S> dc = d_final_c.head(hd);
  for (int k = k_count - 1; k >= 0; --k) {
    const int pos = ec.positions[static_cast<size_t>(k)];
    const Vec<S> dh_total = dh + d_states.block(0, pos, hd, 1);
    const Vec<S> d_input = lstm_backward<S>(ec.fw[static_cast<size_t>(k)], p.encoder_fw_w,
                                            dh_total, dc, g.encoder_fw_w, g.encoder_fw_b);
    g.embedding.row(ex.source_ids[static_cast<size_t>(pos)]) += d_input.head(e).transpose();
    dh = d_input.tail(hd);
  }
  // Backward direction.
  dh = d_final_h.tail(hd);
  dc = d_final_c.tail(hd);
  for (int k = k_count - 1; k >= 0; --k) {
    const int pos = ec.positions[static_cast<size_t>(k_count - 1 - k)];
    const Vec<S> dh_total = dh + d_states.block(hd, pos, hd, 1);
    const Vec<S> d_input = lstm_backward<S>(ec.bw[static_cast<size_t>(k)], p.encoder_bw_w,
                                            dh_total, dc, g.encoder_bw_w, g.encoder_bw_b);
    g.embedding.row(ex.source_ids[static_cast<size_t>(pos)]) += d_input.head(e).transpose();
    dh = d_input.tail(hd);
  }
  return fp.loss;
}

template <typename S>
DecoderState<S> initial_decoder_state(const EncoderOutput<S>& enc, bool use_coverage) {
  DecoderState<S> state;
  state.h = enc.initial_h;
  state.c = enc.initial_c;
  if (use_coverage) state.coverage = Vec<S>::Zero(enc.length());
  return state;
}

template <typename S>
StepPrediction<S> decoder_step(DecoderState<S>& state, int input_id, const EncoderOutput<S>& enc,
                               std::span<const int> source_ids_extended, int oov_count,
                               const Parameters<S>& params, const Hyperparams& hp) {
  if (input_id < 0 || input_id >= hp.vocab_size + oov_count) {
    throw Error(ErrorKind::kInternal, "decoder input id " + std::to_string(input_id) +
                                          " out of range");
  }
  const int embed_id = input_id >= hp.vocab_size ? kUnkId : input_id;
  const Vec<S> x = params.embedding.row(embed_id).transpose();
  const LstmStep<S> cell = lstm_forward<S>(params.decoder_w, params.decoder_b, x, state.h, state.c);
  state.h = cell.h;
  state.c = cell.c;
  StepPrediction<S> pred;
  AttentionResult<S> att = attention_step<S>(state.h, enc, state.coverage, params);
  const Vec<S> p_vocab = vocab_distribution<S>(state.h, att.context, params);
  pred.p_gen = generation_probability<S>(att.context, state.h, x, params);
  pred.final_dist =
      final_distribution<S>(pred.p_gen, p_vocab, att.attention, source_ids_extended, oov_count);
  if (state.coverage.size() > 0) state.coverage = coverage_update<S>(state.coverage, att.attention);
  pred.coverage_after = state.coverage;
  pred.attention = std::move(att.attention);
  pred.context = std::move(att.context);
  return pred;
}

#define HLGEN_INSTANTIATE_MODEL(S)                                                             \
  template Parameters<S> init_parameters<S>(const Hyperparams&, uint64_t);                     \
  template void check_shapes<S>(const Parameters<S>&, const Hyperparams&);                    \
  template EncoderOutput<S> encode_source<S>(std::span<const int>, const Parameters<S>&,       \
                                             const Hyperparams&);                              \
  template AttentionResult<S> attention_step<S>(const Vec<S>&, const EncoderOutput<S>&,        \
                                                const Vec<S>&, const Parameters<S>&);          \
  template Vec<S> vocab_distribution<S>(const Vec<S>&, const Vec<S>&, const Parameters<S>&);  \
  template S generation_probability<S>(const Vec<S>&, const Vec<S>&, const Vec<S>&,           \
                                       const Parameters<S>&);                                  \
  template Vec<S> final_distribution<S>(S, const Vec<S>&, const Vec<S>&, std::span<const int>, \
                                        int);                                                  \
  template Vec<S> coverage_update<S>(const Vec<S>&, const Vec<S>&);                           \
  template StepLoss step_loss<S>(const Vec<S>&, int, const Vec<S>&, const Vec<S>&, double);   \
  template SequenceLoss sequence_loss<S>(const EncodedExample&, const Parameters<S>&,          \
                                         const Hyperparams&, const LossOptions&);              \
  template SequenceLoss sequence_loss_and_gradient<S>(const EncodedExample&,                   \
                                                      const Parameters<S>&, const Hyperparams&, \
                                                      const LossOptions&, Parameters<S>&);     \
  template DecoderState<S> initial_decoder_state<S>(const EncoderOutput<S>&, bool);            \
  template StepPrediction<S> decoder_step<S>(DecoderState<S>&, int, const EncoderOutput<S>&,   \
                                             std::span<const int>, int, const Parameters<S>&,  \
                                             const Hyperparams&);

HLGEN_INSTANTIATE_MODEL(float)
HLGEN_INSTANTIATE_MODEL(double)

#undef HLGEN_INSTANTIATE_MODEL

}  // namespace hlgen
