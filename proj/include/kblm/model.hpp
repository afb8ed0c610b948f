#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "kblm/corpus.hpp"
#include "kblm/lstm.hpp"
#include "kblm/random.hpp"
#include "kblm/tensor.hpp"

namespace kblm {

enum class Variant { Baseline, Conditional, Grounded, ConditionalGrounded };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::Conditional: return "c";
    case Variant::Grounded: return "g";
    case Variant::ConditionalGrounded: return "c+g";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "baseline") return Variant::Baseline;
  if (s == "c" || s == "+c") return Variant::Conditional;
  if (s == "g" || s == "+g") return Variant::Grounded;
  if (s == "c+g" || s == "+c+g") return Variant::ConditionalGrounded;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

struct ModelConfig {
  int dim = 50;
  std::size_t vocab_budget = 1000;
  bool conditional = false;
  bool grounded = false;
  int epochs = 20;
  int minibatch = 64;
  int bptt_limit = 256;
  std::uint64_t seed = 1;
  double value_scale = 1.0;
  double rho = 0.95;
  double epsilon = 1e-6;
  double init_range = 0.08;
  double forget_bias = 1.0;
  bool share_embeddings = true;

  Variant variant() const {
    if (conditional && grounded) return Variant::ConditionalGrounded;
    if (conditional) return Variant::Conditional;
    if (grounded) return Variant::Grounded;
    return Variant::Baseline;
  }
  void set_variant(Variant v) {
    conditional = v == Variant::Conditional || v == Variant::ConditionalGrounded;
    grounded = v == Variant::Grounded || v == Variant::ConditionalGrounded;
  }
  void validate() const {
    if (dim < 1) throw std::invalid_argument("dim must be >= 1");
    if (vocab_budget < 1) throw std::invalid_argument("vocab_budget must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (minibatch < 1) throw std::invalid_argument("minibatch must be >= 1");
    if (bptt_limit < 1) throw std::invalid_argument("bptt_limit must be >= 1");
  }
  bool operator==(const ModelConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, dim, vocab_budget, conditional, grounded, epochs,
                                                minibatch, bptt_limit, seed, value_scale, rho, epsilon, init_range,
                                                forget_bias, share_embeddings)

/// Test-time ablations: -kb bypasses the encoder, -v zeroes numeric features.
struct AblationFlags {
  bool ignore_kb = false;
  bool ignore_values = false;

  std::string label() const {
    if (ignore_kb && ignore_values) return "-kb-v";
    if (ignore_kb) return "-kb";
    if (ignore_values) return "-v";
    return "";
  }
};

/// Named dense blocks inside one flat parameter buffer. Blocks are column-major.
struct ParamLayout {
  struct Block {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    std::size_t offset = 0;
    std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
  };
  std::vector<Block> blocks;
  std::size_t total = 0;

  void add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    blocks.push_back({std::move(name), rows, cols, total});
    total += static_cast<std::size_t>(rows * cols);
  }
  const Block* find(std::string_view name) const {
    for (const auto& b : blocks)
      if (b.name == name) return &b;
    return nullptr;
  }
  const Block& at(std::string_view name) const {
    if (const auto* b = find(name)) return *b;
    throw std::out_of_range("no parameter block '" + std::string(name) + "'");
  }
};

struct DecodeState {
  Vec h, c;
};

class LanguageModel {
 public:
  LanguageModel(ModelConfig config, Vocabulary vocab) : config_(std::move(config)), vocab_(std::move(vocab)) {
    config_.validate();
    const Eigen::Index D = config_.dim;
    const auto N = static_cast<Eigen::Index>(vocab_.size());
    const Eigen::Index d_in = D + (config_.grounded ? 1 : 0);
    layout_.add("e_in", D, N);
    layout_.add("e_out", N, D);
    layout_.add("decoder.w", 4 * D, d_in + D);
    layout_.add("decoder.b", 4 * D, 1);
    if (config_.conditional) {
      if (!config_.share_embeddings) layout_.add("encoder.e_in", D, N);
      layout_.add("encoder.w", 4 * D, d_in + D);
      layout_.add("encoder.b", 4 * D, 1);
    }
    params_.assign(layout_.total, 0.0);
  }

  /// Uniform(-r, r) weights, forget-gate biases at config.forget_bias, other biases 0.
  void initialize() {
    auto rng = make_rng(config_.seed, 0x1a17);
    for (auto& v : params_) v = uniform(rng, -config_.init_range, config_.init_range);
    const Eigen::Index D = config_.dim;
    for (const char* name : {"decoder.b", "encoder.b"}) {
      if (const auto* b = layout_.find(name)) {
        auto bias = vec(params_, *b);
        bias.setZero();
        bias.segment(D, D).setConstant(config_.forget_bias);
      }
    }
  }

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  Eigen::Index dim() const { return config_.dim; }
  Eigen::Index input_dim() const { return config_.dim + (config_.grounded ? 1 : 0); }

  ConstMatMap e_in() const { return cmat(layout_.at("e_in")); }
  ConstMatMap e_out() const { return cmat(layout_.at("e_out")); }
  ConstMatMap encoder_embeddings() const {
    return cmat(layout_.at(config_.share_embeddings ? "e_in" : "encoder.e_in"));
  }
  LstmWeights decoder() const { return lstm("decoder"); }
  std::optional<LstmWeights> encoder() const {
    if (!config_.conditional) return std::nullopt;
    return lstm("encoder");
  }

  MatMap block(std::span<double> buffer, std::string_view name) const { return mat(buffer, layout_.at(name)); }
  LstmGrads lstm_grads(std::span<double> buffer, std::string_view prefix) const {
    const std::string p(prefix);
    return {mat(buffer, layout_.at(p + ".w")), vec(buffer, layout_.at(p + ".b"))};
  }

  static MatMap mat(std::span<double> buf, const ParamLayout::Block& b) {
    return MatMap(buf.data() + b.offset, b.rows, b.cols);
  }
  static VecMap vec(std::span<double> buf, const ParamLayout::Block& b) {
    return VecMap(buf.data() + b.offset, b.rows * b.cols);
  }

 private:
  ConstMatMap cmat(const ParamLayout::Block& b) const { return ConstMatMap(params_.data() + b.offset, b.rows, b.cols); }
  LstmWeights lstm(const std::string& prefix) const {
    const auto& w = layout_.at(prefix + ".w");
    const auto& b = layout_.at(prefix + ".b");
    return {cmat(w), ConstVecMap(params_.data() + b.offset, b.rows)};
  }

  ModelConfig config_;
  Vocabulary vocab_;
  ParamLayout layout_;
  std::vector<double> params_;
};

// ---------------------------------------------------------------------------
// Inference

inline double numeric_feature(const Token& token, const AblationFlags& ablation, double value_scale = 1.0) {
  if (ablation.ignore_values || !token.numeric_value) return 0.0;
  return *token.numeric_value * value_scale;
}

/// Begin-of-document input: the <eos> symbol with no numeric value.
inline Token bos_token(const Vocabulary& vocab) {
  Token t;
  t.surface = std::string(kEosSymbol);
  t.vocab_id = vocab.eos_id();
  return t;
}

inline Token eos_token(const Vocabulary& vocab) { return bos_token(vocab); }

namespace detail {

inline void check_token(const LanguageModel& m, const Token& t) {
  if (t.vocab_id < 0 || static_cast<std::size_t>(t.vocab_id) >= m.vocab().size())
    throw std::invalid_argument("token '" + t.surface + "' was not encoded against this model's vocabulary");
}

inline Vec input_vector(const LanguageModel& m, const ConstMatMap& embeddings, const Token& t,
                        const AblationFlags& ablation) {
  check_token(m, t);
  Vec x(m.input_dim());
  x.head(m.dim()) = embeddings.col(t.vocab_id);
  if (m.config().grounded) x[m.dim()] = numeric_feature(t, ablation, m.config().value_scale);
  return x;
}

}  // namespace detail

/// Encoder-side tokens for a KB, encoded against the model vocabulary.
inline std::vector<Token> kb_tokens(const LanguageModel& model, const std::vector<KbTuple>& kb) {
  return encode_all(lexicalize_kb(kb), model.vocab());
}

inline DecodeState zero_state(const LanguageModel& model) {
  return {Vec::Zero(model.dim()), Vec::Zero(model.dim())};
}

inline DecodeState init_state(const LanguageModel& model, const std::vector<KbTuple>& kb,
                              const AblationFlags& ablation = {}) {
  DecodeState s = zero_state(model);
  const auto enc = model.encoder();
  if (!enc || ablation.ignore_kb) return s;
  const auto emb = model.encoder_embeddings();
  Vec h = Vec::Zero(model.dim()), c = Vec::Zero(model.dim());
  for (const auto& t : kb_tokens(model, kb)) {
    auto out = lstm_step(*enc, detail::input_vector(model, emb, t, ablation), h, c);
    h = std::move(out.h);
    c = std::move(out.c);
  }
  s.h = std::move(h);
  return s;
}

struct StepResult {
  DecodeState state;
  Vec dist;
};

inline StepResult step(const LanguageModel& model, const DecodeState& state, const Token& token,
                       const AblationFlags& ablation = {}) {
  auto out = lstm_step(model.decoder(), detail::input_vector(model, model.e_in(), token, ablation), state.h, state.c);
  Vec logits = model.e_out() * out.h;
  return {{std::move(out.h), std::move(out.c)}, softmax(logits)};
}

struct NllResult {
  double total = 0;
  std::size_t count = 0;
};

/// Calls fn(position, target, dist) for every teacher-forced prediction of `doc`
/// (positions 0..T-1 are the words, position T the closing <eos>).
template <class Fn>
void for_each_prediction(const LanguageModel& model, const Document& doc, const AblationFlags& ablation, Fn&& fn) {
  if (!doc.encoded()) throw std::invalid_argument("document '" + doc.id + "' is not encoded");
  for (const auto& t : doc.tokens) detail::check_token(model, t);
  DecodeState s = init_state(model, doc.kb, ablation);
  Token input = bos_token(model.vocab());
  const std::size_t T = doc.tokens.size();
  for (std::size_t t = 0; t <= T; ++t) {
    auto r = step(model, s, input, ablation);
    if (t < T) {
      fn(t, doc.tokens[t], r.dist);
      input = doc.tokens[t];
    } else {
      fn(t, eos_token(model.vocab()), r.dist);
    }
    s = std::move(r.state);
  }
}

inline NllResult sequence_nll(const LanguageModel& model, const Document& doc, const AblationFlags& ablation = {}) {
  NllResult r;
  if (!doc.encoded()) throw std::invalid_argument("document '" + doc.id + "' is not encoded");
  if (doc.tokens.empty()) return r;
  for_each_prediction(model, doc, ablation, [&](std::size_t, const Token& target, const Vec& dist) {
    r.total += cross_entropy(dist, target.vocab_id);
    ++r.count;
  });
  return r;
}

inline double perplexity(const LanguageModel& model, const std::vector<Document>& docs,
                         const AblationFlags& ablation = {}) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& d : docs) {
    const auto r = sequence_nll(model, d, ablation);
    total += r.total;
    count += r.count;
  }
  if (count == 0) throw DataError("perplexity over zero tokens");
  return std::exp(total / static_cast<double>(count));
}

/// Natural-log probability of the whole document, closing <eos> included.
inline double doc_log_probability(const LanguageModel& model, const Document& doc, const AblationFlags& ablation = {}) {
  return -sequence_nll(model, doc, ablation).total;
}

// ---------------------------------------------------------------------------
// Training objective: summed cross-entropy of one document and its gradient

namespace detail {

struct StepTape {
  TokenId input_id;
  TokenId target_id;
  LstmCache cell;
  Vec dist;
};

/// Backpropagates an encoder run given dL/dh of its final state.
inline void encoder_backward(const LanguageModel& m, const std::vector<Token>& toks, const std::vector<LstmCache>& tape,
                             const Vec& dh_final, std::span<double> grad) {
  const auto enc = *m.encoder();
  auto g = m.lstm_grads(grad, "encoder");
  auto demb = m.block(grad, m.config().share_embeddings ? "e_in" : "encoder.e_in");
  Vec dh = dh_final;
  Vec dc = Vec::Zero(m.dim());
  for (std::size_t k = tape.size(); k-- > 0;) {
    auto b = lstm_backward(enc, tape[k], dh, dc, g);
    demb.col(toks[k].vocab_id) += b.dx.head(m.dim());
    dh = std::move(b.dh_prev);
    dc = std::move(b.dc_prev);
  }
}

}  // namespace detail

/// Summed cross-entropy of `doc` (closing <eos> included); when `grad` is non-empty
/// the gradient is accumulated into it. Gradients are truncated every bptt_limit
/// steps while the state is carried forward.
inline double document_loss(const LanguageModel& m, const Document& doc, std::span<double> grad,
                            const AblationFlags& ablation = {}) {
  if (!doc.encoded()) throw std::invalid_argument("document '" + doc.id + "' is not encoded");
  if (doc.tokens.empty()) return 0.0;
  for (const auto& t : doc.tokens) detail::check_token(m, t);
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != m.params().size()) throw std::invalid_argument("gradient buffer size mismatch");
  const Eigen::Index D = m.dim();

  // Encoder pass.
  std::vector<Token> enc_toks;
  std::vector<LstmCache> enc_tape;
  DecodeState s = zero_state(m);
  const auto enc = m.encoder();
  if (enc && !ablation.ignore_kb) {
    enc_toks = kb_tokens(m, doc.kb);
    const auto emb = m.encoder_embeddings();
    Vec h = Vec::Zero(D), c = Vec::Zero(D);
    for (const auto& t : enc_toks) {
      enc_tape.push_back(lstm_forward(*enc, detail::input_vector(m, emb, t, ablation), h, c));
      h = enc_tape.back().h;
      c = enc_tape.back().c;
    }
    s.h = h;
  }

  const auto dec = m.decoder();
  const auto e_in = m.e_in();
  const auto e_out = m.e_out();
  const std::size_t T = doc.tokens.size();
  const Token bos = bos_token(m.vocab());
  const std::size_t seg_len = static_cast<std::size_t>(m.config().bptt_limit);

  double loss = 0;
  std::vector<detail::StepTape> tape;
  tape.reserve(std::min(T + 1, seg_len));
  for (std::size_t seg_begin = 0; seg_begin <= T; seg_begin += seg_len) {
    const std::size_t seg_end = std::min(T + 1, seg_begin + seg_len);
    tape.clear();
    for (std::size_t t = seg_begin; t < seg_end; ++t) {
      const Token& input = t == 0 ? bos : doc.tokens[t - 1];
      const TokenId target = t < T ? doc.tokens[t].vocab_id : m.vocab().eos_id();
      auto cell = lstm_forward(dec, detail::input_vector(m, e_in, input, ablation), s.h, s.c);
      Vec dist = softmax(e_out * cell.h);
      loss += cross_entropy(dist, target);
      s.h = cell.h;
      s.c = cell.c;
      if (want_grad) tape.push_back({input.vocab_id, target, std::move(cell), std::move(dist)});
    }
    if (!want_grad) continue;

    auto g_dec = m.lstm_grads(grad, "decoder");
    auto g_in = m.block(grad, "e_in");
    auto g_out = m.block(grad, "e_out");
    Vec dh_next = Vec::Zero(D), dc_next = Vec::Zero(D);
    for (std::size_t k = tape.size(); k-- > 0;) {
      auto& st = tape[k];
      Vec dlogits = std::move(st.dist);
      dlogits[st.target_id] -= 1.0;
      g_out.noalias() += dlogits * st.cell.h.transpose();
      Vec dh = dh_next;
      dh.noalias() += e_out.transpose() * dlogits;
      auto b = lstm_backward(dec, st.cell, dh, dc_next, g_dec);
      g_in.col(st.input_id) += b.dx.head(D);
      dh_next = std::move(b.dh_prev);
      dc_next = std::move(b.dc_prev);
    }
    if (seg_begin == 0 && !enc_tape.empty()) detail::encoder_backward(m, enc_toks, enc_tape, dh_next, grad);
  }
  return loss;
}

}  // namespace kblm
