#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"

namespace kblm {

/// Raised for malformed or missing input data (corpus files, vocabularies, checkpoints).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Numerals

/// True when `s` is a signed decimal numeral with an optional fraction part:
/// [+-]?[0-9]+(\.[0-9]+)?  Comma decimals are rejected.
inline bool is_numeral(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  const std::size_t int_begin = i;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
  if (i == int_begin) return false;
  if (i == s.size()) return true;
  if (s[i] != '.') return false;
  ++i;
  const std::size_t frac_begin = i;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
  return i > frac_begin && i == s.size();
}

/// Decimal value of a numeral, 0.0 for anything that is not one.
inline double parse_numeric(std::string_view s) {
  if (!is_numeral(s)) return 0.0;
  std::string_view digits = s;
  if (!digits.empty() && digits.front() == '+') digits.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || !std::isfinite(value)) return 0.0;
  return value == 0.0 ? 0.0 : value;  // drops the sign of -0
}

/// Numeral rendering shared by the generator and KB lexicalization:
/// integers without a fraction, everything else with one fraction digit.
inline std::string format_numeral(double v) {
  if (v == 0.0) v = 0.0;
  char buf[64];
  if (std::nearbyint(v) == v && std::fabs(v) < 1e15) {
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
  } else {
    std::snprintf(buf, sizeof buf, "%.1f", v);
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Knowledge base

using KbValue = std::variant<std::monostate, std::string, double>;

struct KbTuple {
  std::string attribute;
  KbValue value;

  bool missing() const { return std::holds_alternative<std::monostate>(value); }
  bool operator==(const KbTuple&) const = default;
};

inline bool valid_attribute(std::string_view a) {
  if (a.empty()) return false;
  return std::none_of(a.begin(), a.end(), [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; });
}

inline std::string render_kb_value(const KbValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  if (const auto* d = std::get_if<double>(&v)) return format_numeral(*d);
  return {};
}

/// KB tuples as "attribute : value" token triples; missing values are skipped.
inline std::vector<std::string> lexicalize_kb(const std::vector<KbTuple>& kb) {
  std::vector<std::string> out;
  out.reserve(kb.size() * 3);
  for (const auto& t : kb) {
    if (t.missing()) continue;
    out.push_back(t.attribute);
    out.emplace_back(":");
    out.push_back(render_kb_value(t.value));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

inline constexpr std::string_view kNumSymbol = "<num>";
inline constexpr std::string_view kUnkSymbol = "<unk>";
inline constexpr std::string_view kEosSymbol = "<eos>";

using TokenId = std::int32_t;

class Vocabulary {
 public:
  Vocabulary() = default;

  /// `frequent` must not contain the special symbols; they are appended after it.
  explicit Vocabulary(std::vector<std::string> frequent) : entries_(std::move(frequent)) {
    for (auto sym : {kNumSymbol, kUnkSymbol, kEosSymbol}) {
      if (std::find(entries_.begin(), entries_.end(), sym) != entries_.end())
        throw DataError("special symbol " + std::string(sym) + " listed as a frequent entry");
    }
    num_ = static_cast<TokenId>(entries_.size());
    entries_.emplace_back(kNumSymbol);
    unk_ = num_ + 1;
    entries_.emplace_back(kUnkSymbol);
    eos_ = num_ + 2;
    entries_.emplace_back(kEosSymbol);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!index_.emplace(entries_[i], static_cast<TokenId>(i)).second)
        throw DataError("duplicate vocabulary entry '" + entries_[i] + "'");
    }
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::string>& entries() const { return entries_; }
  const std::string& surface(TokenId id) const { return entries_.at(static_cast<std::size_t>(id)); }

  std::optional<TokenId> find(std::string_view s) const {
    auto it = index_.find(std::string(s));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view s) const { return find(s).has_value(); }

  TokenId num_id() const { return num_; }
  TokenId unk_id() const { return unk_; }
  TokenId eos_id() const { return eos_; }
  bool is_special(TokenId id) const { return id == num_ || id == unk_ || id == eos_; }

  bool operator==(const Vocabulary& o) const { return entries_ == o.entries_; }

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId num_ = 0, unk_ = 0, eos_ = 0;
};

struct Token {
  std::string surface;
  TokenId vocab_id = 0;
  std::optional<double> numeric_value;
  bool is_numeric = false;

  bool operator==(const Token&) const = default;
};

/// Masks out-of-vocabulary surfaces to <num>/<unk>; the numeric value always comes
/// from the original surface.
inline Token encode(std::string_view surface, const Vocabulary& vocab) {
  Token t;
  t.surface = std::string(surface);
  t.is_numeric = is_numeral(surface);
  if (t.is_numeric) t.numeric_value = parse_numeric(surface);
  if (auto id = vocab.find(surface)) {
    t.vocab_id = *id;
  } else {
    t.vocab_id = t.is_numeric ? vocab.num_id() : vocab.unk_id();
  }
  return t;
}

inline std::vector<Token> encode_all(const std::vector<std::string>& surfaces, const Vocabulary& vocab) {
  std::vector<Token> out;
  out.reserve(surfaces.size());
  for (const auto& s : surfaces) out.push_back(encode(s, vocab));
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

/// A CSV field, quoted when it contains a separator, quote or newline.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Documents

/// Generator bookkeeping used by the substitution study: which token positions
/// render which KB attribute, and where the graded words sit.
struct Alignment {
  std::map<std::string, std::vector<std::size_t>> values;
  std::map<std::string, std::size_t> graded;  // rule name -> token position

  bool empty() const { return values.empty() && graded.empty(); }
  bool operator==(const Alignment&) const = default;
};

struct Document {
  std::string id;
  std::vector<std::string> words;  // surfaces, in order
  std::vector<Token> tokens;       // empty until encoded
  std::vector<KbTuple> kb;
  std::string raw_text;
  Alignment align;

  bool encoded() const { return tokens.size() == words.size(); }
};

inline Document make_document(std::string id, std::vector<std::string> words, std::vector<KbTuple> kb) {
  Document d;
  d.id = std::move(id);
  d.raw_text = join_tokens(words);
  d.words = std::move(words);
  d.kb = std::move(kb);
  return d;
}

inline void encode_document(Document& doc, const Vocabulary& vocab) { doc.tokens = encode_all(doc.words, vocab); }

inline void encode_documents(std::vector<Document>& docs, const Vocabulary& vocab) {
  for (auto& d : docs) encode_document(d, vocab);
}

struct CorpusSplit {
  std::vector<Document> train, dev, test;
  std::uint64_t seed = 0;
};

enum class VocabSource {
  Text,       // document tokens only
  TextAndKb,  // document tokens plus the lexicalized KB, so attribute names get ids
};

/// The `budget` most frequent raw surfaces of the training documents (ties broken
/// lexicographically ascending) followed by <num>, <unk>, <eos>.
inline Vocabulary build_vocabulary(const std::vector<Document>& train_docs, std::size_t budget,
                                   VocabSource source = VocabSource::Text) {
  if (budget < 1) throw std::invalid_argument("vocabulary budget must be >= 1");
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  auto count = [&](const std::vector<std::string>& words) {
    for (const auto& w : words) {
      ++counts[w];
      ++total;
    }
  };
  for (const auto& d : train_docs) {
    count(d.words);
    if (source == VocabSource::TextAndKb) count(lexicalize_kb(d.kb));
  }
  if (total == 0) throw DataError("empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> frequent;
  for (const auto& [w, c] : ranked) {
    if (frequent.size() == budget) break;
    if (w == kNumSymbol || w == kUnkSymbol || w == kEosSymbol) continue;
    frequent.push_back(w);
  }
  return Vocabulary(std::move(frequent));
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json kb_to_json(const std::vector<KbTuple>& kb) {
  auto arr = nlohmann::json::array();
  for (const auto& t : kb) {
    nlohmann::json v;
    if (const auto* s = std::get_if<std::string>(&t.value)) {
      v = *s;
    } else if (const auto* d = std::get_if<double>(&t.value)) {
      v = *d;
    }
    arr.push_back({{"attribute", t.attribute}, {"value", v}});
  }
  return arr;
}

inline std::vector<KbTuple> kb_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw DataError("kb must be an array");
  std::vector<KbTuple> kb;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("attribute") || !e["attribute"].is_string())
      throw DataError("kb entry needs a string 'attribute'");
    KbTuple t;
    t.attribute = e["attribute"].get<std::string>();
    if (!valid_attribute(t.attribute)) throw DataError("invalid kb attribute '" + t.attribute + "'");
    const auto v = e.value("value", nlohmann::json());
    if (v.is_string()) {
      t.value = v.get<std::string>();
    } else if (v.is_number()) {
      t.value = v.get<double>();
    } else if (!v.is_null()) {
      throw DataError("kb value for '" + t.attribute + "' must be string, number or null");
    }
    kb.push_back(std::move(t));
  }
  return kb;
}

inline nlohmann::json document_to_json(const Document& d) {
  nlohmann::json j = {{"id", d.id}, {"text", d.raw_text}, {"kb", kb_to_json(d.kb)}};
  if (!d.align.empty()) j["align"] = {{"values", d.align.values}, {"graded", d.align.graded}};
  return j;
}

inline Document document_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("id") || !j.contains("text"))
    throw DataError("corpus record needs 'id' and 'text'");
  Document d = make_document(j["id"].get<std::string>(), split_whitespace(j["text"].get<std::string>()),
                             kb_from_json(j.value("kb", nlohmann::json::array())));
  if (j.contains("align")) {
    const auto& a = j["align"];
    if (a.contains("values")) d.align.values = a["values"].get<std::map<std::string, std::vector<std::size_t>>>();
    if (a.contains("graded")) d.align.graded = a["graded"].get<std::map<std::string, std::size_t>>();
  }
  return d;
}

inline void write_corpus(std::ostream& os, const std::vector<Document>& docs) {
  for (const auto& d : docs) os << document_to_json(d).dump() << '\n';
}

inline std::vector<Document> read_corpus(std::istream& is) {
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      docs.push_back(document_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return docs;
}

inline std::vector<Document> read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path);
  return read_corpus(in);
}

inline nlohmann::json vocabulary_to_json(const Vocabulary& v) {
  nlohmann::json header = {{"version", 1},
                           {"specials",
                            {{std::string(kNumSymbol), v.num_id()},
                             {std::string(kUnkSymbol), v.unk_id()},
                             {std::string(kEosSymbol), v.eos_id()}}}};
  auto arr = nlohmann::json::array({header});
  for (const auto& e : v.entries()) arr.push_back(e);
  return arr;
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_object()) throw DataError("vocabulary file needs a header object");
  if (j[0].value("version", 0) != 1) throw DataError("unsupported vocabulary version");
  std::vector<std::string> entries;
  for (std::size_t i = 1; i < j.size(); ++i) entries.push_back(j[i].get<std::string>());
  if (entries.size() < 3 || entries[entries.size() - 3] != kNumSymbol || entries[entries.size() - 2] != kUnkSymbol ||
      entries.back() != kEosSymbol)
    throw DataError("vocabulary file must end with <num>, <unk>, <eos>");
  entries.resize(entries.size() - 3);
  return Vocabulary(std::move(entries));
}

}  // namespace kblm
