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

namespace kblm {

/// How a target that was out of vocabulary before masking is ranked.
enum class OovPolicy {
  Miss,    // never suggestible: counts as a miss; special symbols are not ranked
  Masked,  // the mask symbol is the target; ranking covers the whole vocabulary
};

inline OovPolicy parse_oov_policy(std::string_view s) {
  if (s == "miss") return OovPolicy::Miss;
  if (s == "masked") return OovPolicy::Masked;
  throw std::invalid_argument("unknown oov policy '" + std::string(s) + "'");
}
inline std::string to_string(OovPolicy p) { return p == OovPolicy::Miss ? "miss" : "masked"; }

/// 1-based rank of `target` under descending probability, ties broken by ascending id.
inline std::size_t rank_of(const Vec& dist, TokenId target) {
  const double pt = dist[target];
  std::size_t rank = 1;
  for (Eigen::Index j = 0; j < dist.size(); ++j)
    if (dist[j] > pt || (dist[j] == pt && j < target)) ++rank;
  return rank;
}

/// Rank among displayable words only (special symbols skipped).
inline std::size_t rank_among_words(const Vec& dist, TokenId target, const Vocabulary& vocab) {
  const double pt = dist[target];
  std::size_t rank = 1;
  for (Eigen::Index j = 0; j < dist.size(); ++j) {
    if (vocab.is_special(static_cast<TokenId>(j))) continue;
    if (dist[j] > pt || (dist[j] == pt && j < target)) ++rank;
  }
  return rank;
}

/// Highest-probability entry, ties to the lowest id, optionally skipping specials.
inline TokenId top_suggestion(const Vec& dist, const Vocabulary* skip_specials) {
  TokenId best = -1;
  for (Eigen::Index j = 0; j < dist.size(); ++j) {
    const auto id = static_cast<TokenId>(j);
    if (skip_specials && skip_specials->is_special(id)) continue;
    if (best < 0 || dist[j] > dist[best]) best = id;
  }
  return best;
}

struct PredictionRecord {
  std::string doc_id;
  std::size_t position = 0;
  std::string target;  // original surface
  TokenId target_id = 0;
  bool target_oov = false;
  std::optional<std::size_t> rank;  // nullopt = miss
  bool top1_correct = false;
};

struct PredictionMetrics {
  double mrr = 0;
  std::map<int, double> recall_at;
  double precision_at_1 = 0;
  double perplexity = 0;
  std::size_t n_positions = 0;
  std::size_t n_tokens = 0;  // positions that entered the perplexity (word targets plus <eos>)
  double nll_total = 0;
};

struct PredictionOptions {
  std::vector<int> ks = {1, 2, 3, 5, 10};
  OovPolicy oov_policy = OovPolicy::Miss;
};

struct PredictionResult {
  PredictionMetrics metrics;
  std::vector<PredictionRecord> records;
};

/// Ranks of the true next word at every word position of one document, plus the
/// summed NLL over all positions (closing <eos> included).
inline std::vector<PredictionRecord> rank_document(const LanguageModel& model, const Document& doc,
                                                   const AblationFlags& ablation, OovPolicy policy,
                                                   NllResult* nll = nullptr) {
  std::vector<PredictionRecord> out;
  const auto& vocab = model.vocab();
  for_each_prediction(model, doc, ablation, [&](std::size_t pos, const Token& target, const Vec& dist) {
    if (nll) {
      nll->total += cross_entropy(dist, target.vocab_id);
      ++nll->count;
    }
    if (pos == doc.tokens.size()) return;  // <eos> is not a word the user types
    PredictionRecord r;
    r.doc_id = doc.id;
    r.position = pos;
    r.target = target.surface;
    r.target_id = target.vocab_id;
    r.target_oov = vocab.is_special(target.vocab_id);
    if (policy == OovPolicy::Miss) {
      if (!r.target_oov) r.rank = rank_among_words(dist, target.vocab_id, vocab);
      r.top1_correct = !r.target_oov && top_suggestion(dist, &vocab) == target.vocab_id;
    } else {
      r.rank = rank_of(dist, target.vocab_id);
      r.top1_correct = top_suggestion(dist, nullptr) == target.vocab_id;
    }
    out.push_back(std::move(r));
  });
  return out;
}

inline PredictionMetrics summarize_predictions(const std::vector<PredictionRecord>& records, const std::vector<int>& ks,
                                               const NllResult& nll) {
  PredictionMetrics m;
  m.n_positions = records.size();
  if (records.empty()) throw DataError("no prediction positions to evaluate");
  double rr = 0;
  std::size_t top1 = 0;
  std::map<int, std::size_t> hits;
  for (int k : ks) hits[k] = 0;
  for (const auto& r : records) {
    if (r.top1_correct) ++top1;
    if (!r.rank) continue;
    rr += 1.0 / static_cast<double>(*r.rank);
    for (int k : ks)
      if (*r.rank <= static_cast<std::size_t>(k)) ++hits[k];
  }
  const auto n = static_cast<double>(records.size());
  m.mrr = rr / n;
  for (const auto& [k, h] : hits) m.recall_at[k] = static_cast<double>(h) / n;
  m.precision_at_1 = static_cast<double>(top1) / n;
  m.nll_total = nll.total;
  m.n_tokens = nll.count;
  m.perplexity = nll.count ? std::exp(nll.total / static_cast<double>(nll.count)) : NAN;
  return m;
}

inline PredictionResult evaluate_prediction(const LanguageModel& model, const std::vector<Document>& docs,
                                            const AblationFlags& ablation = {}, const PredictionOptions& opts = {}) {
  if (docs.empty()) throw DataError("empty test set");
  PredictionResult res;
  NllResult nll;
  for (const auto& d : docs) {
    auto recs = rank_document(model, d, ablation, opts.oov_policy, &nll);
    res.records.insert(res.records.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  res.metrics = summarize_predictions(res.records, opts.ks, nll);
  return res;
}

inline nlohmann::json to_json(const PredictionMetrics& m) {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [k, v] : m.recall_at) recall[std::to_string(k)] = v;
  return {{"mrr", m.mrr},
          {"recall_at", recall},
          {"precision_at_1", m.precision_at_1},
          {"perplexity", m.perplexity},
          {"n_positions", m.n_positions},
          {"n_tokens", m.n_tokens},
          {"nll_total", m.nll_total}};
}

inline void write_prediction_csv(std::ostream& os, const std::vector<PredictionRecord>& records) {
  os << "doc_id,position,target,rank\n";
  for (const auto& r : records) {
    os << csv_field(r.doc_id) << ',' << r.position << ',' << csv_field(r.target) << ',';
    if (r.rank) {
      os << *r.rank;
    } else {
      os << "miss";
    }
    os << '\n';
  }
}

}  // namespace kblm
