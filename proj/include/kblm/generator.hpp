#pragma once

// Deterministic synthetic echocardiography-style reports paired with a KB.
//
// Sentence templates are token lists. Placeholders:
//   {value}        the attribute's value (categorical values split on '_')
//   {grade}        the graded word chosen from the attribute value by a rule
//   {a|b_c|d}      a uniformly random alternative, '_' splits into tokens

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "kblm/corpus.hpp"
#include "kblm/random.hpp"

namespace kblm {

enum class AttributeKind { Integer, Decimal, Categorical };

NLOHMANN_JSON_SERIALIZE_ENUM(AttributeKind, {{AttributeKind::Integer, "integer"},
                                             {AttributeKind::Decimal, "decimal"},
                                             {AttributeKind::Categorical, "categorical"}})

struct AttributeSpec {
  std::string name;
  AttributeKind kind = AttributeKind::Integer;
  double min = 0, max = 0;
  std::vector<std::string> categories;
  double missing_prob = 0;
  std::vector<std::string> sentence;
};

/// Word i is used when value < cuts[i]; the last word covers everything above.
struct GradedRule {
  std::string name;
  std::string attribute;
  std::vector<double> cuts;
  std::vector<std::string> words;
  std::vector<std::string> sentence;
  double noise = 0;  // probability of replacing the rule's word with another one

  std::size_t band(double v) const {
    for (std::size_t i = 0; i < cuts.size(); ++i)
      if (v < cuts[i]) return i;
    return cuts.size();
  }
  const std::string& word_for(double v) const { return words.at(band(v)); }
};

struct GeneratorConfig {
  std::size_t n_docs = 1000;
  double train_frac = 0.8;
  double dev_frac = 0.1;
  std::vector<AttributeSpec> schema;
  std::vector<GradedRule> rules;
  std::vector<std::vector<std::string>> opening;
  std::vector<std::vector<std::string>> closing;

  void validate() const {
    if (n_docs == 0) throw std::invalid_argument("generator needs at least one document");
    if (schema.empty()) throw std::invalid_argument("generator schema is empty");
    if (train_frac < 0 || dev_frac < 0 || train_frac + dev_frac > 1)
      throw std::invalid_argument("split fractions must be non-negative and sum to at most 1");
    for (const auto& a : schema) {
      if (!valid_attribute(a.name)) throw std::invalid_argument("bad attribute name '" + a.name + "'");
      if (a.kind == AttributeKind::Categorical && a.categories.empty())
        throw std::invalid_argument("categorical attribute '" + a.name + "' has no categories");
      if (a.kind != AttributeKind::Categorical && !(a.min <= a.max))
        throw std::invalid_argument("attribute '" + a.name + "' has an empty range");
    }
    for (const auto& r : rules) {
      if (r.words.size() != r.cuts.size() + 1)
        throw std::invalid_argument("rule '" + r.name + "' needs one more word than cuts");
      if (!std::is_sorted(r.cuts.begin(), r.cuts.end()))
        throw std::invalid_argument("rule '" + r.name + "' cuts must be ascending");
      auto it = std::find_if(schema.begin(), schema.end(), [&](const auto& a) { return a.name == r.attribute; });
      if (it == schema.end() || it->kind == AttributeKind::Categorical)
        throw std::invalid_argument("rule '" + r.name + "' must reference a numeric attribute");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AttributeSpec, name, kind, min, max, categories, missing_prob, sentence)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GradedRule, name, attribute, cuts, words, sentence, noise)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorConfig, n_docs, train_frac, dev_frac, schema, rules, opening,
                                                closing)

namespace detail {

inline std::vector<std::string> words_of(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == '_' || c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::vector<std::string> split_choices(const std::string& tok) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 1; i + 1 < tok.size(); ++i) {
    if (tok[i] == '|') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(tok[i]);
    }
  }
  out.push_back(cur);
  return out;
}

struct Emitter {
  std::vector<std::string> words;
  Alignment align;
  std::mt19937_64& rng;

  void sentence(const std::vector<std::string>& tmpl, const std::string& attribute,
                const std::vector<std::string>& value_words, const std::string& rule, const std::string& grade) {
    for (const auto& tok : tmpl) {
      if (tok == "{value}") {
        for (const auto& w : value_words) {
          if (is_numeral(w)) align.values[attribute].push_back(words.size());
          words.push_back(w);
        }
      } else if (tok == "{grade}") {
        align.graded[rule] = words.size();
        words.push_back(grade);
      } else if (tok.size() > 2 && tok.front() == '{' && tok.back() == '}') {
        const auto choices = split_choices(tok);
        for (auto& w : words_of(choices[below(rng, choices.size())])) words.push_back(std::move(w));
      } else {
        words.push_back(tok);
      }
    }
  }
};

}  // namespace detail

/// The default report schema: five categorical findings and four one-decimal
/// measurements, each measurement driving a six-grade description. Measurements
/// are spread over hundreds of distinct surfaces, so each numeral is rare in text.
inline GeneratorConfig default_generator_config() {
  GeneratorConfig c;
  using K = AttributeKind;
  c.schema = {
      {"sex", K::Categorical, 0, 0, {"male", "female"}, 0.0, {"{value}", "patient", "."}},
      {"indication",
       K::Categorical,
       0,
       0,
       {"breathlessness", "chest_pain", "murmur", "palpitations", "syncope", "heart_failure"},
       0.0,
       {"referred", "for", "{value}", "."}},
      {"rhythm",
       K::Categorical,
       0,
       0,
       {"sinus_rhythm", "atrial_fibrillation", "paced_rhythm"},
       0.05,
       {"the", "rhythm", "is", "{value}", "."}},
      {"lvedd", K::Decimal, 38, 75, {}, 0.1, {"lvedd", "{value}", "mm", "."}},
      {"tapse", K::Decimal, 5, 30, {}, 0.1, {"tapse", "{value}", "mm", "."}},
      {"la_volume", K::Decimal, 15, 60, {}, 0.1, {"la", "volume", "{value}", "ml/m2", "."}},
      {"av_gradient", K::Decimal, 0, 70, {}, 0.1, {"aortic", "mean", "gradient", "{value}", "mmhg", "."}},
      {"aortic_valve",
       K::Categorical,
       0,
       0,
       {"normal", "thickened", "calcified", "bicuspid"},
       0.1,
       {"the", "aortic", "valve", "is", "{value}", "."}},
      {"mitral_regurgitation",
       K::Categorical,
       0,
       0,
       {"no", "mild", "moderate", "severe"},
       0.1,
       {"{value}", "mitral", "regurgitation", "."}},
  };
  const std::vector<std::string> increasing = {"not", "minimally", "mildly", "moderately", "markedly", "severely"};
  const std::vector<std::string> decreasing(increasing.rbegin(), increasing.rend());
  c.rules = {
      {"lv_dilation", "lvedd", {44.2, 50.3, 56.5, 62.7, 68.8}, increasing,
       {"the", "left", "ventricle", "is", "{grade}", "dilated", "."}, 0.03},
      {"rv_function", "tapse", {9.2, 13.3, 17.5, 21.7, 25.8}, decreasing,
       {"rv", "function", "is", "{grade}", "impaired", "."}, 0.03},
      {"la_size", "la_volume", {22.5, 30.0, 37.5, 45.0, 52.5}, increasing,
       {"the", "left", "atrium", "is", "{grade}", "enlarged", "."}, 0.03},
      {"aortic_stenosis", "av_gradient", {11.7, 23.3, 35.0, 46.7, 58.3},
       {"no", "minimal", "mild", "moderate", "severe", "critical"}, {"{grade}", "aortic", "stenosis", "."}, 0.03},
  };
  c.opening = {{"echocardiogram", "report", "."}};
  c.closing = {{"report", "completed", "."}};
  return c;
}

inline Document generate_document(const GeneratorConfig& config, std::uint64_t seed, std::size_t index) {
  auto rng = make_rng(seed, index);
  detail::Emitter em{{}, {}, rng};
  for (const auto& s : config.opening) em.sentence(s, {}, {}, {}, {});

  std::vector<KbTuple> kb;
  for (const auto& attr : config.schema) {
    const bool missing = uniform01(rng) < attr.missing_prob;
    KbTuple t{attr.name, {}};
    double numeric = 0;
    std::vector<std::string> value_words;
    switch (attr.kind) {
      case AttributeKind::Integer:
        numeric = attr.min + static_cast<double>(below(rng, static_cast<std::size_t>(attr.max - attr.min) + 1));
        break;
      case AttributeKind::Decimal:
        numeric = std::round(uniform(rng, attr.min, attr.max) * 10.0) / 10.0;
        break;
      case AttributeKind::Categorical: {
        const auto& cat = attr.categories[below(rng, attr.categories.size())];
        t.value = cat;
        value_words = detail::words_of(cat);
        break;
      }
    }
    if (attr.kind != AttributeKind::Categorical) {
      t.value = numeric;
      value_words = {format_numeral(numeric)};
    }
    if (missing) {
      t.value = std::monostate{};
      kb.push_back(std::move(t));
      continue;
    }
    em.sentence(attr.sentence, attr.name, value_words, {}, {});
    for (const auto& rule : config.rules) {
      if (rule.attribute != attr.name) continue;
      std::string grade = rule.word_for(numeric);
      if (rule.noise > 0 && uniform01(rng) < rule.noise && rule.words.size() > 1) {
        std::vector<std::string> others;
        for (const auto& w : rule.words)
          if (w != grade) others.push_back(w);
        grade = others[below(rng, others.size())];
      }
      em.sentence(rule.sentence, attr.name, value_words, rule.name, grade);
    }
    kb.push_back(std::move(t));
  }
  for (const auto& s : config.closing) em.sentence(s, {}, {}, {}, {});

  Document d = make_document("s" + std::to_string(seed) + "-" + [&] {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05zu", index);
    return std::string(buf);
  }(), std::move(em.words), std::move(kb));
  d.align = std::move(em.align);
  return d;
}

/// Documents [0, n_train) go to train, the next n_dev to dev, the rest to test.
inline CorpusSplit generate_corpus(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  const auto n = config.n_docs;
  const auto n_train = static_cast<std::size_t>(std::llround(config.train_frac * static_cast<double>(n)));
  const auto n_dev =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(config.dev_frac * static_cast<double>(n))));
  CorpusSplit split;
  split.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    auto doc = generate_document(config, seed, i);
    if (i < n_train) {
      split.train.push_back(std::move(doc));
    } else if (i < n_train + n_dev) {
      split.dev.push_back(std::move(doc));
    } else {
      split.test.push_back(std::move(doc));
    }
  }
  return split;
}

}  // namespace kblm
