#pragma once

// Small models and corpora shared by the test binaries.

#include <random>
#include <string>
#include <vector>

#include "kblm/corpus.hpp"
#include "kblm/generator.hpp"
#include "kblm/model.hpp"
#include "kblm/random.hpp"
#include "kblm/train.hpp"

namespace fixture {

using namespace kblm;

inline constexpr Variant kAllVariants[] = {Variant::Baseline, Variant::Conditional, Variant::Grounded,
                                           Variant::ConditionalGrounded};

/// 17 words + 3 specials = V 20.
inline Vocabulary tiny_vocab() {
  return Vocabulary({"the", "left", "ventricle", "is", "mildly", "dilated", ".", "mm", "lvedd", ":", "ef", "rhythm",
                     "sinus", "af", "normal", "61", "4.5"});
}

/// Random document over the tiny vocabulary, with masked numerals, an unknown
/// word and a mixed KB.
inline Document random_doc(std::mt19937_64& rng, const Vocabulary& vocab, std::size_t len, const std::string& id) {
  static const std::vector<std::string> extra = {"57.3", "12", "zebra", "0.5", "61", "4.5"};
  const auto& words = vocab.entries();
  std::vector<std::string> text;
  for (std::size_t i = 0; i < len; ++i) {
    if (kblm::below(rng, 4) == 0)
      text.push_back(extra[kblm::below(rng, extra.size())]);
    else
      text.push_back(words[kblm::below(rng, words.size() - 3)]);
  }
  std::vector<KbTuple> kb = {{"lvedd", kblm::uniform(rng, 0.5, 3.0)},
                             {"rhythm", std::string(kblm::below(rng, 2) ? "sinus" : "af")},
                             {"ef", std::monostate{}},
                             {"la", kblm::uniform(rng, -1.0, 1.0)}};
  auto d = make_document(id, std::move(text), std::move(kb));
  encode_document(d, vocab);
  return d;
}

inline ModelConfig small_config(Variant v, std::uint64_t seed, int dim = 8) {
  ModelConfig c;
  c.dim = dim;
  c.seed = seed;
  c.set_variant(v);
  return c;
}

/// Randomly initialized model; `init_range` widened so gradients are not tiny.
inline LanguageModel random_model(Variant v, std::uint64_t seed, const Vocabulary& vocab, double init_range = 0.5,
                                  int dim = 8) {
  auto c = small_config(v, seed, dim);
  c.init_range = init_range;
  LanguageModel m(c, vocab);
  m.initialize();
  return m;
}

/// Generated corpus, vocabulary built over train text and KB, all splits encoded.
struct Corpus {
  CorpusSplit split;
  Vocabulary vocab;
};

inline Corpus generated_corpus(std::size_t n_docs, std::uint64_t seed, std::size_t budget = 1000) {
  auto cfg = default_generator_config();
  cfg.n_docs = n_docs;
  Corpus c{generate_corpus(cfg, seed), {}};
  c.vocab = build_vocabulary(c.split.train, budget, VocabSource::TextAndKb);
  encode_documents(c.split.train, c.vocab);
  encode_documents(c.split.dev, c.vocab);
  encode_documents(c.split.test, c.vocab);
  return c;
}

inline LanguageModel quick_train(Variant v, const Corpus& c, int epochs = 2, int dim = 8, std::uint64_t seed = 1) {
  auto cfg = small_config(v, seed, dim);
  cfg.epochs = epochs;
  cfg.minibatch = 8;
  return train(cfg, c.vocab, c.split.train).model;
}

}  // namespace fixture
