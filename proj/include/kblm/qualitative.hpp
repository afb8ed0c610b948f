#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "kblm/model.hpp"
#include "kblm/predict_eval.hpp"

namespace kblm {

/// Next-word distribution after teacher-forcing `context` from the KB-initialized state.
inline Vec next_word_distribution(const LanguageModel& model, const std::vector<KbTuple>& kb,
                                  const std::vector<Token>& context, const AblationFlags& ablation = {}) {
  DecodeState s = init_state(model, kb, ablation);
  auto r = step(model, s, bos_token(model.vocab()), ablation);
  for (const auto& t : context) r = step(model, r.state, t, ablation);
  return std::move(r.dist);
}

struct Suggestion {
  std::string word;
  TokenId id = 0;
  double probability = 0;
  std::size_t rank = 0;
};

/// Top-k entries by descending probability, ties to ascending id. With
/// `words_only` the special symbols are skipped and ranks count words only.
inline std::vector<Suggestion> top_k(const Vec& dist, const Vocabulary& vocab, std::size_t k, bool words_only) {
  std::vector<TokenId> ids;
  for (Eigen::Index j = 0; j < dist.size(); ++j) {
    const auto id = static_cast<TokenId>(j);
    if (!words_only || !vocab.is_special(id)) ids.push_back(id);
  }
  k = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), [&](TokenId a, TokenId b) {
    return dist[a] > dist[b] || (dist[a] == dist[b] && a < b);
  });
  std::vector<Suggestion> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({vocab.surface(ids[i]), ids[i], dist[ids[i]], i + 1});
  return out;
}

struct WatchedWord {
  std::string word;
  std::optional<std::size_t> rank;  // nullopt: out of vocabulary
  double probability = 0;
};

struct SuggestionList {
  std::vector<Suggestion> top;
  std::vector<WatchedWord> watched;
};

/// Suggestions for the word at `position`, seeing only the strict prefix and the KB.
inline SuggestionList suggestion_list(const LanguageModel& model, const Document& doc, std::size_t position,
                                      std::size_t k, const std::vector<std::string>& watch_words,
                                      const AblationFlags& ablation = {}, bool words_only = true) {
  if (!doc.encoded()) throw std::invalid_argument("document is not encoded");
  if (position > doc.tokens.size()) throw std::out_of_range("suggestion position beyond document end");
  const std::vector<Token> context(doc.tokens.begin(), doc.tokens.begin() + static_cast<std::ptrdiff_t>(position));
  const Vec dist = next_word_distribution(model, doc.kb, context, ablation);
  SuggestionList out;
  out.top = top_k(dist, model.vocab(), k, words_only);
  for (const auto& w : watch_words) {
    WatchedWord ww{w, std::nullopt, 0};
    const auto id = model.vocab().find(w);
    if (id && !(words_only && model.vocab().is_special(*id))) {
      ww.rank = words_only ? rank_among_words(dist, *id, model.vocab()) : rank_of(dist, *id);
      ww.probability = dist[*id];
    }
    out.watched.push_back(std::move(ww));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Value substitution

struct ValueConfiguration {
  std::string label;
  std::map<std::string, double> values;  // attribute -> replacement value
};

struct SubstitutionStudy {
  Document document;  // needs alignment metadata for in-text value rewrites
  std::size_t slot = 0;
  std::vector<std::string> candidates;
  std::vector<ValueConfiguration> configurations;
};

struct SubstitutionResult {
  std::vector<std::string> candidates;
  std::vector<std::string> configurations;
  std::vector<std::vector<double>> doc_log_prob;   // [config][candidate], natural log
  std::vector<std::vector<double>> doc_prob;       // renormalized within each row
  std::vector<std::vector<double>> slot_prob;      // next-word probability at the slot
};

/// Rewrites the KB tuple and every aligned in-text numeral of each attribute.
inline Document apply_configuration(const Document& doc, const ValueConfiguration& config) {
  Document out = doc;
  for (const auto& [attr, value] : config.values) {
    bool found = false;
    for (auto& t : out.kb) {
      if (t.attribute == attr) {
        t.value = value;
        found = true;
      }
    }
    if (!found) out.kb.push_back({attr, value});
    if (auto it = out.align.values.find(attr); it != out.align.values.end()) {
      for (auto pos : it->second) {
        if (pos >= out.words.size()) throw std::out_of_range("alignment position beyond document end");
        out.words[pos] = format_numeral(value);
      }
    }
  }
  out.raw_text = join_tokens(out.words);
  out.tokens.clear();
  return out;
}

inline SubstitutionResult substitution_study(const LanguageModel& model, const SubstitutionStudy& study,
                                             const AblationFlags& ablation = {}) {
  if (study.candidates.empty()) throw std::invalid_argument("substitution study needs candidates");
  if (study.slot >= study.document.words.size()) throw std::out_of_range("substitution slot beyond document end");
  for (const auto& c : study.candidates) {
    const auto id = model.vocab().find(c);
    if (!id || model.vocab().is_special(*id))
      throw std::invalid_argument("candidate '" + c + "' is out of vocabulary");
  }
  auto configs = study.configurations;
  if (configs.empty()) configs.push_back({"original", {}});

  SubstitutionResult res;
  res.candidates = study.candidates;
  for (const auto& cfg : configs) {
    res.configurations.push_back(cfg.label);
    Document base = apply_configuration(study.document, cfg);
    std::vector<double> logp, slot;
    for (const auto& cand : study.candidates) {
      Document d = base;
      d.words[study.slot] = cand;
      d.raw_text = join_tokens(d.words);
      encode_document(d, model.vocab());
      logp.push_back(doc_log_probability(model, d, ablation));
    }
    encode_document(base, model.vocab());
    const std::vector<Token> context(base.tokens.begin(), base.tokens.begin() + static_cast<std::ptrdiff_t>(study.slot));
    const Vec dist = next_word_distribution(model, base.kb, context, ablation);
    for (const auto& cand : study.candidates) slot.push_back(dist[*model.vocab().find(cand)]);

    const double lse = log_sum_exp(logp);
    std::vector<double> row;
    for (double v : logp) row.push_back(std::exp(v - lse));
    res.doc_log_prob.push_back(std::move(logp));
    res.doc_prob.push_back(std::move(row));
    res.slot_prob.push_back(std::move(slot));
  }
  return res;
}

inline nlohmann::json to_json(const SubstitutionResult& r) {
  return {{"candidates", r.candidates},
          {"configurations", r.configurations},
          {"doc_log_prob", r.doc_log_prob},
          {"doc_prob", r.doc_prob},
          {"slot_prob", r.slot_prob}};
}

inline void write_substitution_csv(std::ostream& os, const SubstitutionResult& r) {
  os << "configuration";
  for (const auto& c : r.candidates) os << ',' << csv_field(c);
  os << '\n';
  for (std::size_t i = 0; i < r.configurations.size(); ++i) {
    os << csv_field(r.configurations[i]);
    for (double p : r.doc_prob[i]) os << ',' << p;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Likelihood ratios

struct RatioSeries {
  std::vector<std::string> tokens;  // includes the closing <eos>
  std::vector<double> log_ratio;    // ln p_a - ln p_b

  std::vector<double> ratios() const {
    std::vector<double> out;
    for (double v : log_ratio) out.push_back(std::exp(v));
    return out;
  }
};

/// Per-token p_a(w_t | ...) / p_b(w_t | ...) under teacher forcing.
inline RatioSeries likelihood_ratio(const LanguageModel& model_a, const LanguageModel& model_b, const Document& doc,
                                    const AblationFlags& ablation_a = {}, const AblationFlags& ablation_b = {}) {
  if (!(model_a.vocab() == model_b.vocab())) throw std::invalid_argument("likelihood_ratio: vocabulary mismatch");
  std::vector<double> la, lb;
  RatioSeries out;
  for_each_prediction(model_a, doc, ablation_a, [&](std::size_t, const Token& target, const Vec& dist) {
    la.push_back(-cross_entropy(dist, target.vocab_id));
    out.tokens.push_back(target.surface);
  });
  for_each_prediction(model_b, doc, ablation_b, [&](std::size_t, const Token& target, const Vec& dist) {
    lb.push_back(-cross_entropy(dist, target.vocab_id));
  });
  for (std::size_t i = 0; i < la.size(); ++i) out.log_ratio.push_back(la[i] - lb[i]);
  return out;
}

/// Two-column TSV (token, ratio) with a header line; plots directly with gnuplot
/// `using 0:2:xticlabels(1)`.
inline void write_ratio_tsv(std::ostream& os, const RatioSeries& s) {
  os << "token\tratio\n";
  const auto r = s.ratios();
  for (std::size_t i = 0; i < r.size(); ++i) os << s.tokens[i] << '\t' << r[i] << '\n';
}

}  // namespace kblm
