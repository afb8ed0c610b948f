#pragma once

// Keystroke-level typing session: the terminal front end feeds it keys, tests
// feed it scripts. Tab accepts the displayed completion, space ends the word.

#include <optional>
#include <string>
#include <vector>

#include "kblm/completion.hpp"
#include "kblm/qualitative.hpp"

namespace kblm {

class TypingSession {
 public:
  static constexpr char kAcceptKey = '\t';

  TypingSession(const LanguageModel& model, std::vector<KbTuple> kb, AblationFlags ablation = {},
                CompletionOptions opts = {})
      : model_(model), lexicon_(model.vocab()), kb_(std::move(kb)), ablation_(ablation), opts_(opts) {
    state_ = init_state(model_, kb_, ablation_);
    advance(bos_token(model_.vocab()));
  }

  /// Returns false for keys the session does not handle.
  bool press(char key) {
    if (key == kAcceptKey) return accept();
    if (key == ' ') {
      commit_word();
      return true;
    }
    if (static_cast<unsigned char>(key) < 0x21 || key == 0x7f) return false;
    flush_pending_distraction();
    prefix_ += key;
    ++tally_.typed_keys;
    ghost_ = lexicon_.best_match(prefix_, scores());
    if (ghost_) pending_distraction_ = ghost_->word.size() - prefix_.size();
    return true;
  }

  void press_all(std::string_view keys) {
    for (char k : keys) press(k);
  }

  /// Commits a trailing word without a separator.
  void finish() {
    if (!prefix_.empty()) commit(false);
  }

  /// Word predictions shown before the next word is started.
  std::vector<Suggestion> predictions(std::size_t k = 5) const { return top_k(dist_, model_.vocab(), k, true); }

  /// Completion currently displayed for the typed prefix.
  std::optional<std::string> ghost() const {
    if (!ghost_) return std::nullopt;
    return ghost_->word;
  }

  const std::string& prefix() const { return prefix_; }
  const std::vector<std::string>& words() const { return words_; }
  const CompletionTally& tally() const { return tally_; }
  CompletionMetrics metrics() const { return assemble_metrics(tally_); }

 private:
  std::span<const double> scores() const { return {dist_.data(), static_cast<std::size_t>(dist_.size())}; }

  bool accept() {
    if (!ghost_) return false;
    tally_.accepted_chars += ghost_->word.size() - prefix_.size();
    ++tally_.accept_events;
    if (opts_.count_accept_key) ++tally_.typed_keys;
    prefix_ = ghost_->word;
    ghost_.reset();
    pending_distraction_ = 0;
    return true;
  }

  void flush_pending_distraction() {
    tally_.distraction_chars += pending_distraction_;
    pending_distraction_ = 0;
  }

  void commit_word() {
    if (prefix_.empty()) return;  // repeated spaces are ignored
    commit(true);
  }

  void commit(bool separator) {
    flush_pending_distraction();
    ghost_.reset();
    tally_.total_chars += prefix_.size();
    if (separator) {
      ++tally_.total_chars;
      ++tally_.typed_keys;
    }
    words_.push_back(prefix_);
    advance(encode(prefix_, model_.vocab()));
    prefix_.clear();
  }

  void advance(const Token& t) {
    auto r = step(model_, state_, t, ablation_);
    state_ = std::move(r.state);
    dist_ = std::move(r.dist);
  }

  const LanguageModel& model_;
  Lexicon lexicon_;
  std::vector<KbTuple> kb_;
  AblationFlags ablation_;
  CompletionOptions opts_;
  DecodeState state_;
  Vec dist_;
  std::string prefix_;
  std::optional<Lexicon::Entry> ghost_;
  std::uint64_t pending_distraction_ = 0;
  std::vector<std::string> words_;
  CompletionTally tally_;
};

/// Keys a simulated user presses for `words`: type until the displayed
/// completion is correct, accept it, separate words with spaces.
inline std::string scripted_keys(TypingSession& session, const std::vector<std::string>& words) {
  std::string keys;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) {
      session.press(' ');
      keys += ' ';
    }
    const auto& w = words[i];
    for (std::size_t p = 0; p < w.size(); ++p) {
      session.press(w[p]);
      keys += w[p];
      if (session.ghost() == w) {
        session.press(TypingSession::kAcceptKey);
        keys += TypingSession::kAcceptKey;
        break;
      }
    }
  }
  session.finish();
  return keys;
}

}  // namespace kblm
