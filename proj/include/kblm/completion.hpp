#pragma once

// Word-completion simulation with a simulated user.
//
// Per word of length L the user types one character at a time. After each typed
// character (prefix length p >= 1) the lexicon is filtered to words starting with
// the prefix and the best-scoring match is displayed. If it is the intended word
// the user accepts it, inserting L - p characters; otherwise its L' - p unseen
// characters count as distraction and typing continues. With no match left the
// word is typed out. Separating spaces are typed and never suggested.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "kblm/model.hpp"

namespace kblm {

/// Vocabulary words (special symbols excluded) sorted for prefix lookup.
class Lexicon {
 public:
  struct Entry {
    std::string word;
    TokenId id;
  };

  explicit Lexicon(const Vocabulary& vocab) {
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      const auto id = static_cast<TokenId>(i);
      if (!vocab.is_special(id)) entries_.push_back({vocab.surface(id), id});
    }
    std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) { return a.word < b.word; });
  }

  /// Entries whose word starts with `prefix`.
  std::span<const Entry> matches(std::string_view prefix) const {
    auto lo = std::lower_bound(entries_.begin(), entries_.end(), prefix,
                               [](const Entry& e, std::string_view p) { return std::string_view(e.word) < p; });
    auto hi = lo;
    while (hi != entries_.end() && std::string_view(hi->word).substr(0, prefix.size()) == prefix) ++hi;
    return {lo, hi};
  }

  /// Best-scoring match (ties to the lowest vocabulary id), or nullopt.
  std::optional<Entry> best_match(std::string_view prefix, std::span<const double> scores) const {
    const Entry* best = nullptr;
    for (const auto& e : matches(prefix)) {
      const double s = scores[static_cast<std::size_t>(e.id)];
      if (!best || s > scores[static_cast<std::size_t>(best->id)] ||
          (s == scores[static_cast<std::size_t>(best->id)] && e.id < best->id))
        best = &e;
    }
    if (!best) return std::nullopt;
    return *best;
  }

  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
};

struct CompletionOptions {
  bool count_accept_key = false;  // when set, the accept gesture costs one key
};

struct CompletionTally {
  std::uint64_t total_chars = 0;
  std::uint64_t typed_keys = 0;
  std::uint64_t accepted_chars = 0;
  std::uint64_t distraction_chars = 0;
  std::uint64_t accept_events = 0;

  CompletionTally& operator+=(const CompletionTally& o) {
    total_chars += o.total_chars;
    typed_keys += o.typed_keys;
    accepted_chars += o.accepted_chars;
    distraction_chars += o.distraction_chars;
    accept_events += o.accept_events;
    return *this;
  }
  bool operator==(const CompletionTally&) const = default;
};

struct WordEvent {
  std::string doc_id;
  std::size_t word_index = 0;
  std::string word;
  bool accepted = false;
  std::size_t prefix_len_at_accept = 0;
  std::uint64_t distraction_chars = 0;
};

struct WordOutcome {
  CompletionTally tally;
  bool accepted = false;
  std::size_t prefix_len_at_accept = 0;
};

inline WordOutcome simulate_word(const Lexicon& lexicon, std::span<const double> scores, std::string_view target,
                                 const CompletionOptions& opts = {}) {
  WordOutcome out;
  const std::size_t L = target.size();
  out.tally.total_chars = L;
  for (std::size_t p = 1; p <= L; ++p) {
    const auto best = lexicon.best_match(target.substr(0, p), scores);
    if (!best) break;  // nothing can match any longer prefix either
    const std::uint64_t suffix = best->word.size() - p;
    if (best->word == target) {
      out.accepted = true;
      out.prefix_len_at_accept = p;
      out.tally.accept_events = 1;
      out.tally.accepted_chars = suffix;
      break;
    }
    out.tally.distraction_chars += suffix;
  }
  out.tally.typed_keys = L - out.tally.accepted_chars + (opts.count_accept_key ? out.tally.accept_events : 0);
  return out;
}

struct CompletionMetrics {
  double ks = 0;
  double recall = 0;
  std::optional<double> ud;
  std::optional<double> precision;
  double f1 = 0;
};

inline double f1_score(double precision, double recall) {
  return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

/// KS = (total - typed) / total, UD = distraction / accepted,
/// P = accepted / (accepted + distraction), R = accepted / total.
inline CompletionMetrics assemble_metrics(const CompletionTally& t) {
  CompletionMetrics m;
  if (t.total_chars == 0) return m;
  const auto total = static_cast<double>(t.total_chars);
  m.ks = (static_cast<double>(t.total_chars) - static_cast<double>(t.typed_keys)) / total;
  m.recall = static_cast<double>(t.accepted_chars) / total;
  if (t.accepted_chars > 0) {
    m.ud = static_cast<double>(t.distraction_chars) / static_cast<double>(t.accepted_chars);
    m.precision = static_cast<double>(t.accepted_chars) / static_cast<double>(t.accepted_chars + t.distraction_chars);
    m.f1 = f1_score(*m.precision, m.recall);
  }
  return m;
}

/// Metrics from rates alone, with recall taken equal to KS and precision = 1 / (1 + UD).
inline CompletionMetrics assemble_metrics_from_rates(double ks, double ud) {
  CompletionMetrics m;
  m.ks = ks;
  m.recall = ks;
  m.ud = ud;
  m.precision = 1.0 / (1.0 + ud);
  m.f1 = f1_score(*m.precision, m.recall);
  return m;
}

struct CompletionResult {
  CompletionTally tally;
  CompletionMetrics metrics;
  std::vector<WordEvent> events;
};

/// Runs the simulation over one document. `scores_at(t)` gives the frozen word-level
/// scores for word t; spaces between words are typed.
template <class ScoreFn>
CompletionTally simulate_document(const Lexicon& lexicon, const Document& doc, ScoreFn&& scores_at,
                                  const CompletionOptions& opts, std::vector<WordEvent>* events = nullptr) {
  CompletionTally tally;
  for (std::size_t t = 0; t < doc.words.size(); ++t) {
    const auto w = simulate_word(lexicon, scores_at(t), doc.words[t], opts);
    tally += w.tally;
    if (events)
      events->push_back({doc.id, t, doc.words[t], w.accepted, w.prefix_len_at_accept, w.tally.distraction_chars});
  }
  if (!doc.words.empty()) {
    tally.total_chars += doc.words.size() - 1;
    tally.typed_keys += doc.words.size() - 1;
  }
  return tally;
}

/// Model-driven simulation: the decoder is teacher-forced on the true tokens and its
/// next-word distribution scores every word.
inline CompletionResult simulate_corpus(const LanguageModel& model, const std::vector<Document>& docs,
                                        const AblationFlags& ablation = {}, const CompletionOptions& opts = {},
                                        bool keep_events = false) {
  const Lexicon lexicon(model.vocab());
  CompletionResult res;
  for (const auto& doc : docs) {
    std::vector<Vec> dists;
    dists.reserve(doc.tokens.size());
    for_each_prediction(model, doc, ablation, [&](std::size_t pos, const Token&, const Vec& dist) {
      if (pos < doc.tokens.size()) dists.push_back(dist);
    });
    res.tally += simulate_document(
        lexicon, doc, [&](std::size_t t) { return std::span<const double>(dists[t].data(), dists[t].size()); }, opts,
        keep_events ? &res.events : nullptr);
  }
  res.metrics = assemble_metrics(res.tally);
  return res;
}

/// Ideal completer: every word of length L is completed after its first character.
/// With `vocab`, only in-vocabulary words are completed (vocabulary bound).
inline CompletionTally bound_tally(const std::vector<Document>& docs, const Vocabulary* vocab) {
  CompletionTally t;
  for (const auto& doc : docs) {
    for (const auto& w : doc.words) {
      t.total_chars += w.size();
      bool known = true;
      if (vocab) {
        const auto id = vocab->find(w);
        known = id && !vocab->is_special(*id);
      }
      const std::uint64_t saved = known && !w.empty() ? w.size() - 1 : 0;
      t.accepted_chars += saved;
      if (known && !w.empty()) ++t.accept_events;
      t.typed_keys += w.size() - saved;
    }
    if (!doc.words.empty()) {
      t.total_chars += doc.words.size() - 1;
      t.typed_keys += doc.words.size() - 1;
    }
  }
  return t;
}

inline CompletionMetrics theoretical_bound(const std::vector<Document>& docs) {
  return assemble_metrics(bound_tally(docs, nullptr));
}

inline CompletionMetrics vocabulary_bound(const std::vector<Document>& docs, const Vocabulary& vocab) {
  return assemble_metrics(bound_tally(docs, &vocab));
}

inline nlohmann::json to_json(const CompletionTally& t) {
  return {{"total_chars", t.total_chars},
          {"typed_keys", t.typed_keys},
          {"accepted_chars", t.accepted_chars},
          {"distraction_chars", t.distraction_chars},
          {"accept_events", t.accept_events}};
}

inline nlohmann::json to_json(const CompletionMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json("n/a"); };
  return {{"ks", m.ks}, {"ud", opt(m.ud)}, {"precision", opt(m.precision)}, {"recall", m.recall}, {"f1", m.f1}};
}

inline void write_completion_events_csv(std::ostream& os, const std::vector<WordEvent>& events) {
  os << "doc_id,word_index,word,accepted,prefix_len_at_accept,distraction_chars\n";
  for (const auto& e : events)
    os << csv_field(e.doc_id) << ',' << e.word_index << ',' << csv_field(e.word) << ',' << (e.accepted ? 1 : 0) << ','
       << e.prefix_len_at_accept << ',' << e.distraction_chars << '\n';
}

}  // namespace kblm
