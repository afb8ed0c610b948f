// kblm: command-line front end for corpus generation, training, evaluation,
// qualitative studies, the HTTP service and the interactive typing mode.

#include <termios.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "kblm/checkpoint.hpp"
#include "kblm/completion.hpp"
#include "kblm/generator.hpp"
#include "kblm/interactive.hpp"
#include "kblm/predict_eval.hpp"
#include "kblm/qualitative.hpp"
#include "kblm/report.hpp"
#include "kblm/service.hpp"
#include "kblm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kblm;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kNumeric = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Run configuration: defaults < config file < environment < flags.

json default_run_config() {
  return {{"seed", 1},
          {"threads", 1},
          {"model", ModelConfig{}},
          {"generator", default_generator_config()},
          {"eval", {{"k", {1, 2, 3, 5, 10}}, {"oov_policy", "miss"}, {"count_accept_key", false}}},
          {"serve", {{"host", "127.0.0.1"}, {"port", 8080}, {"model_dir", "models"}, {"default_k", 5}}}};
}

struct EnvBinding {
  const char* name;
  const char* pointer;
  enum { Int, Real, Bool, String } type;
};

const std::vector<EnvBinding>& env_bindings() {
  static const std::vector<EnvBinding> b = {
      {"KBLM_SEED", "/seed", EnvBinding::Int},
      {"KBLM_THREADS", "/threads", EnvBinding::Int},
      {"KBLM_EPOCHS", "/model/epochs", EnvBinding::Int},
      {"KBLM_MINIBATCH", "/model/minibatch", EnvBinding::Int},
      {"KBLM_DIM", "/model/dim", EnvBinding::Int},
      {"KBLM_VOCAB_BUDGET", "/model/vocab_budget", EnvBinding::Int},
      {"KBLM_VALUE_SCALE", "/model/value_scale", EnvBinding::Real},
      {"KBLM_OOV_POLICY", "/eval/oov_policy", EnvBinding::String},
      {"KBLM_COUNT_ACCEPT_KEY", "/eval/count_accept_key", EnvBinding::Bool},
      {"KBLM_HOST", "/serve/host", EnvBinding::String},
      {"KBLM_PORT", "/serve/port", EnvBinding::Int},
      {"KBLM_MODEL_DIR", "/serve/model_dir", EnvBinding::String},
      {"KBLM_DEFAULT_K", "/serve/default_k", EnvBinding::Int},
  };
  return b;
}

json parse_scalar(const std::string& text, decltype(EnvBinding::type) type, const std::string& origin) {
  try {
    switch (type) {
      case EnvBinding::Int: {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case EnvBinding::Real: {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case EnvBinding::Bool:
        if (text == "1" || text == "true") return true;
        if (text == "0" || text == "false") return false;
        break;
      case EnvBinding::String:
        return text;
    }
  } catch (const std::exception&) {
  }
  throw UsageError("invalid value '" + text + "' for " + origin);
}

/// Flags given on the command line, applied last.
struct FlagOverrides {
  std::vector<std::pair<std::string, json>> values;
  void set(const std::string& pointer, json v) { values.emplace_back(pointer, std::move(v)); }
};

struct RunConfig {
  std::uint64_t seed = 1;
  unsigned threads = 1;
  ModelConfig model;
  GeneratorConfig generator;
  std::vector<int> ks;
  OovPolicy oov_policy = OovPolicy::Miss;
  bool count_accept_key = false;
  ServiceOptions serve;
  std::string model_dir;
  json resolved;
};

RunConfig resolve_config(const std::string& config_path, const FlagOverrides& flags) {
  json j = default_run_config();
  std::string path = config_path;
  if (path.empty())
    if (const char* e = std::getenv("KBLM_CONFIG")) path = e;
  if (!path.empty()) {
    const json file = read_json_file(path);
    if (!file.is_object()) throw DataError("config file " + path + " must hold a JSON object");
    j.merge_patch(file);
  }
  for (const auto& b : env_bindings())
    if (const char* e = std::getenv(b.name)) j[json::json_pointer(b.pointer)] = parse_scalar(e, b.type, b.name);
  for (const auto& [ptr, v] : flags.values) j[json::json_pointer(ptr)] = v;

  RunConfig rc;
  try {
    rc.seed = j.at("seed").get<std::uint64_t>();
    rc.threads = j.at("threads").get<unsigned>();
    rc.model = j.at("model").get<ModelConfig>();
    rc.model.seed = rc.seed;
    rc.generator = j.at("generator").get<GeneratorConfig>();
    rc.ks = j.at("eval").at("k").get<std::vector<int>>();
    rc.oov_policy = parse_oov_policy(j.at("eval").at("oov_policy").get<std::string>());
    rc.count_accept_key = j.at("eval").at("count_accept_key").get<bool>();
    const auto& s = j.at("serve");
    rc.serve.host = s.at("host").get<std::string>();
    rc.serve.port = s.at("port").get<int>();
    rc.serve.default_k = s.at("default_k").get<std::size_t>();
    rc.model_dir = s.at("model_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  for (int k : rc.ks)
    if (k < 1) throw UsageError("--k values must be >= 1");
  rc.resolved = j;
  return rc;
}

// ---------------------------------------------------------------------------
// Shared helpers

std::vector<int> parse_k_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      const int k = std::stoi(part, &used);
      if (used != part.size() || k < 1) throw std::invalid_argument(part);
      out.push_back(k);
    } catch (const std::exception&) {
      throw UsageError("--k expects a comma-separated list of positive integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError("--k list is empty");
  return out;
}

AblationFlags parse_ablation(const std::string& s) {
  if (s == "none") return {};
  if (s == "kb") return {true, false};
  if (s == "v") return {false, true};
  throw UsageError("--ablation must be one of none, kb, v");
}

std::string ablation_name(const AblationFlags& a) {
  if (a.ignore_kb) return "kb";
  if (a.ignore_values) return "v";
  return "none";
}

fs::path vocab_path_for(const fs::path& checkpoint) { return checkpoint.parent_path() / "vocab.json"; }

std::vector<Document> load_split(const fs::path& corpus_dir, const std::string& split, const Vocabulary& vocab) {
  auto docs = read_corpus_file((corpus_dir / (split + ".jsonl")).string());
  encode_documents(docs, vocab);
  return docs;
}

const Document& find_document(const std::vector<Document>& docs, const std::string& id) {
  for (const auto& d : docs)
    if (d.id == id) return d;
  throw DataError("document '" + id + "' not found");
}

void write_text_atomic(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

json model_summary(const LanguageModel& m, const fs::path& path) {
  return {{"checkpoint", path.filename().string()},
          {"variant", to_string(m.config().variant())},
          {"vocab_size", m.vocab().size()},
          {"vocab_sha256", vocabulary_hash(m.vocab())}};
}

// ---------------------------------------------------------------------------
// Subcommands

struct Common {
  std::string config_path;
  FlagOverrides flags;
};

int cmd_gen_corpus(const RunConfig& rc, const fs::path& out) {
  const auto split = generate_corpus(rc.generator, rc.seed);
  fs::create_directories(out);
  auto write_split = [&](const char* name, const std::vector<Document>& docs) {
    std::ostringstream os;
    write_corpus(os, docs);
    write_text_atomic(out / (std::string(name) + ".jsonl"), os.str());
  };
  write_split("train", split.train);
  write_split("dev", split.dev);
  write_split("test", split.test);
  auto rep = make_report("gen-corpus");
  rep["seed"] = rc.seed;
  rep["generator"] = rc.generator;
  rep["counts"] = {{"train", split.train.size()}, {"dev", split.dev.size()}, {"test", split.test.size()}};
  write_json_atomic(out / "gen-corpus.json", rep);
  std::cout << "wrote " << split.train.size() << "/" << split.dev.size() << "/" << split.test.size()
            << " documents to " << out.string() << "\n";
  return kOk;
}

int cmd_train(const RunConfig& rc, const fs::path& corpus, const fs::path& out, const fs::path& report_path,
              bool quiet) {
  auto train_docs = read_corpus_file((corpus / "train.jsonl").string());
  const auto vocab = build_vocabulary(train_docs, rc.model.vocab_budget, VocabSource::TextAndKb);
  encode_documents(train_docs, vocab);
  std::vector<Document> dev;
  if (fs::exists(corpus / "dev.jsonl")) dev = load_split(corpus, "dev", vocab);

  TrainOptions opts;
  opts.threads = rc.threads;
  if (!quiet) opts.log = &std::cerr;
  const auto result = train(rc.model, vocab, train_docs, dev, opts);

  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const auto vpath = vocab_path_for(out);
  if (fs::exists(vpath)) {
    const auto existing = vocabulary_from_json(read_json_file(vpath));
    if (!(existing == vocab))
      throw DataError(vpath.string() + " holds a different vocabulary; use a separate output directory");
  } else {
    write_json_atomic(vpath, vocabulary_to_json(vocab));
  }
  save_model(result.model, out.string());

  auto rep = make_report("train");
  rep["config"] = rc.model;
  rep["model"] = model_summary(result.model, out);
  auto epochs = json::array();
  for (const auto& e : result.epochs) {
    json row = {{"epoch", e.epoch}, {"train_nll_per_token", e.train_nll_per_token}};
    row["dev_perplexity"] = e.dev_perplexity ? json(*e.dev_perplexity) : json(nullptr);
    epochs.push_back(row);
  }
  rep["epochs"] = epochs;
  write_json_atomic(report_path.empty() ? fs::path(out).replace_extension(".train.json") : report_path, rep);
  return kOk;
}

LanguageModel load_checked(const fs::path& ckpt) {
  const auto vpath = vocab_path_for(ckpt);
  if (fs::exists(vpath)) {
    const auto vocab = vocabulary_from_json(read_json_file(vpath));
    return load_model(ckpt.string(), &vocab);
  }
  return load_model(ckpt.string());
}

/// An ablation of a component the model lacks changes nothing; say so.
void warn_inapplicable(const LanguageModel& m, const AblationFlags& a) {
  if (a.ignore_kb && !m.config().conditional)
    std::cerr << "warning: --ablation kb has no effect on a " << to_string(m.config().variant()) << " model\n";
  if (a.ignore_values && !m.config().grounded)
    std::cerr << "warning: --ablation v has no effect on a " << to_string(m.config().variant()) << " model\n";
}

fs::path default_report(const fs::path& ckpt, const std::string& kind, const AblationFlags& a) {
  auto name = ckpt.stem().string() + "." + kind;
  if (a.ignore_kb || a.ignore_values) name += "." + ablation_name(a);
  return ckpt.parent_path() / (name + ".json");
}

int cmd_eval_predict(const RunConfig& rc, const fs::path& ckpt, const fs::path& corpus, const std::string& split,
                     const AblationFlags& ablation, fs::path report_path, const fs::path& csv_path) {
  const auto model = load_checked(ckpt);
  warn_inapplicable(model, ablation);
  const auto docs = load_split(corpus, split, model.vocab());
  const auto res = evaluate_prediction(model, docs, ablation, {rc.ks, rc.oov_policy});
  auto rep = make_report("eval-predict");
  rep["row"] = row_label(model.config().variant(), ablation);
  rep["model"] = model_summary(model, ckpt);
  rep["split"] = split;
  rep["ablation"] = ablation_name(ablation);
  rep["oov_policy"] = to_string(rc.oov_policy);
  rep["seed"] = rc.seed;
  rep["metrics"] = to_json(res.metrics);
  if (report_path.empty()) report_path = default_report(ckpt, "eval-predict", ablation);
  write_json_atomic(report_path, rep);
  if (!csv_path.empty()) {
    std::ostringstream os;
    write_prediction_csv(os, res.records);
    write_text_atomic(csv_path, os.str());
  }
  std::cout << rep["metrics"].dump(2) << "\n";
  return kOk;
}

int cmd_eval_complete(const RunConfig& rc, const fs::path& ckpt, const fs::path& corpus, const std::string& split,
                      const AblationFlags& ablation, fs::path report_path, const fs::path& events_path) {
  const auto model = load_checked(ckpt);
  warn_inapplicable(model, ablation);
  const auto docs = load_split(corpus, split, model.vocab());
  CompletionOptions opts;
  opts.count_accept_key = rc.count_accept_key;
  const auto res = simulate_corpus(model, docs, ablation, opts, !events_path.empty());
  auto rep = make_report("eval-complete");
  rep["row"] = row_label(model.config().variant(), ablation);
  rep["model"] = model_summary(model, ckpt);
  rep["split"] = split;
  rep["ablation"] = ablation_name(ablation);
  rep["count_accept_key"] = rc.count_accept_key;
  rep["seed"] = rc.seed;
  rep["tally"] = to_json(res.tally);
  rep["metrics"] = to_json(res.metrics);
  if (report_path.empty()) report_path = default_report(ckpt, "eval-complete", ablation);
  write_json_atomic(report_path, rep);
  if (!events_path.empty()) {
    std::ostringstream os;
    write_completion_events_csv(os, res.events);
    write_text_atomic(events_path, os.str());
  }
  std::cout << rep["metrics"].dump(2) << "\n";
  return kOk;
}

int cmd_bounds(const RunConfig& rc, const fs::path& corpus, const std::string& split, const fs::path& vocab_file,
               const fs::path& report_path) {
  const auto docs = read_corpus_file((corpus / (split + ".jsonl")).string());
  Vocabulary vocab;
  if (!vocab_file.empty()) {
    vocab = vocabulary_from_json(read_json_file(vocab_file));
  } else {
    vocab = build_vocabulary(read_corpus_file((corpus / "train.jsonl").string()), rc.model.vocab_budget,
                             VocabSource::TextAndKb);
  }
  auto rep = make_report("bounds");
  rep["split"] = split;
  rep["seed"] = rc.seed;
  rep["theoretical"] = {{"tally", to_json(bound_tally(docs, nullptr))}, {"metrics", to_json(theoretical_bound(docs))}};
  rep["vocabulary"] = {{"tally", to_json(bound_tally(docs, &vocab))}, {"metrics", to_json(vocabulary_bound(docs, vocab))}};
  write_json_atomic(report_path.empty() ? corpus / ("bounds." + split + ".json") : report_path, rep);
  std::cout << json{{"theoretical", rep["theoretical"]["metrics"]}, {"vocabulary", rep["vocabulary"]["metrics"]}}.dump(2)
            << "\n";
  return kOk;
}

struct QualitativeArgs {
  std::string mode;
  fs::path model, against, corpus, study, report, table;
  std::string split = "test", doc;
  std::size_t position = 0, k = 5;
  std::vector<std::string> watch;
};

int cmd_qualitative(const RunConfig&, const QualitativeArgs& q, const AblationFlags& ablation) {
  const auto model = load_checked(q.model);
  warn_inapplicable(model, ablation);
  auto rep = make_report("qualitative");
  rep["mode"] = q.mode;
  rep["model"] = model_summary(model, q.model);
  rep["ablation"] = ablation_name(ablation);
  std::string table;
  if (q.mode == "suggest") {
    if (q.doc.empty()) throw UsageError("--doc is required for suggest");
    const auto docs = load_split(q.corpus, q.split, model.vocab());
    const auto& doc = find_document(docs, q.doc);
    const auto list = suggestion_list(model, doc, q.position, q.k, q.watch, ablation);
    auto top = json::array();
    std::ostringstream os;
    os << "rank\tword\tprobability\n";
    for (const auto& s : list.top) {
      top.push_back({{"rank", s.rank}, {"word", s.word}, {"probability", s.probability}});
      os << s.rank << '\t' << s.word << '\t' << s.probability << '\n';
    }
    auto watched = json::array();
    for (const auto& w : list.watched) {
      watched.push_back({{"word", w.word},
                         {"rank", w.rank ? json(*w.rank) : json("oov")},
                         {"probability", w.probability}});
      os << (w.rank ? std::to_string(*w.rank) : std::string("oov")) << '\t' << w.word << '\t' << w.probability << '\n';
    }
    rep["doc"] = doc.id;
    rep["position"] = q.position;
    rep["suggestions"] = top;
    rep["watched"] = watched;
    table = os.str();
  } else if (q.mode == "substitution") {
    if (q.study.empty()) throw UsageError("--study is required for substitution");
    const json sj = read_json_file(q.study);
    ModelRegistry single;
    single.insert("study", std::make_shared<const LanguageModel>(model));
    json body = sj;
    body["model_id"] = "study";
    body["ablation"] = {{"ignore_kb", ablation.ignore_kb}, {"ignore_values", ablation.ignore_values}};
    const auto r = handle_substitution(single, body);
    if (r.status != 200) throw DataError("substitution study rejected: " + r.body.dump());
    rep["result"] = r.body;
    rep["result"].erase("model_id");
    std::ostringstream os;
    os << "configuration";
    for (const auto& c : r.body["candidates"]) os << ',' << csv_field(c.get<std::string>());
    os << '\n';
    for (std::size_t i = 0; i < r.body["configurations"].size(); ++i) {
      os << csv_field(r.body["configurations"][i].get<std::string>());
      for (const auto& p : r.body["doc_prob"][i]) os << ',' << p.dump();
      os << '\n';
    }
    table = os.str();
  } else if (q.mode == "ratio") {
    if (q.against.empty() || q.doc.empty()) throw UsageError("--against and --doc are required for ratio");
    const auto other = load_checked(q.against);
    const auto docs = load_split(q.corpus, q.split, model.vocab());
    const auto& doc = find_document(docs, q.doc);
    const auto series = likelihood_ratio(model, other, doc, ablation, {});
    rep["doc"] = doc.id;
    rep["against"] = model_summary(other, q.against);
    rep["tokens"] = series.tokens;
    rep["ratio"] = series.ratios();
    rep["log_ratio"] = series.log_ratio;
    std::ostringstream os;
    write_ratio_tsv(os, series);
    table = os.str();
  } else {
    throw UsageError("--mode must be suggest, substitution or ratio");
  }
  write_json_atomic(q.report.empty() ? q.model.parent_path() / (q.model.stem().string() + ".qualitative." + q.mode + ".json")
                                     : q.report,
                    rep);
  if (!q.table.empty()) write_text_atomic(q.table, table);
  std::cout << table;
  return kOk;
}

int cmd_serve(const RunConfig& rc) {
  ModelRegistry registry(rc.model_dir);
  Service service(registry, rc.serve);
  const int port = service.bind();
  if (port < 0) throw DataError("cannot bind " + rc.serve.host + ":" + std::to_string(rc.serve.port));
  std::cerr << "serving " << registry.list().size() << " model(s) from " << rc.model_dir << " on " << rc.serve.host
            << ":" << port << "\n";
  return service.listen_after_bind() ? kOk : kFailure;
}

class RawTerminal {
 public:
  RawTerminal() {
    if (tcgetattr(STDIN_FILENO, &saved_) != 0) return;
    termios raw = saved_;
    raw.c_lflag &= static_cast<tcflag_t>(~(ICANON | ECHO));
    raw.c_cc[VMIN] = 1;
    raw.c_cc[VTIME] = 0;
    active_ = tcsetattr(STDIN_FILENO, TCSANOW, &raw) == 0;
  }
  ~RawTerminal() {
    if (active_) tcsetattr(STDIN_FILENO, TCSANOW, &saved_);
  }
  RawTerminal(const RawTerminal&) = delete;
  RawTerminal& operator=(const RawTerminal&) = delete;

 private:
  termios saved_{};
  bool active_ = false;
};

void draw(std::ostream& os, const TypingSession& s) {
  const auto m = s.metrics();
  os << "\r\x1b[2K";
  if (s.prefix().empty()) {
    os << "next:";
    for (const auto& p : s.predictions(5)) os << ' ' << p.word;
    os << "  | ";
  }
  std::string text;
  for (const auto& w : s.words()) text += w + ' ';
  os << text << s.prefix();
  if (const auto g = s.ghost(); g && g->size() > s.prefix().size())
    os << "\x1b[2m" << g->substr(s.prefix().size()) << "\x1b[0m";
  os << "   [KS " << std::fixed << std::setprecision(1) << 100.0 * m.ks << "% UD ";
  if (m.ud) {
    os << std::setprecision(2) << *m.ud;
  } else {
    os << "n/a";
  }
  os << "]" << std::flush;
}

int cmd_interactive(const RunConfig& rc, const fs::path& ckpt, const fs::path& corpus, const std::string& split,
                    const std::string& doc_id, const fs::path& kb_file, const AblationFlags& ablation,
                    const std::string& script, const fs::path& report_path) {
  const auto model = load_checked(ckpt);
  warn_inapplicable(model, ablation);
  std::vector<KbTuple> kb;
  if (!kb_file.empty()) {
    kb = kb_from_json(read_json_file(kb_file));
  } else if (!doc_id.empty()) {
    kb = find_document(read_corpus_file((corpus / (split + ".jsonl")).string()), doc_id).kb;
  }
  CompletionOptions opts;
  opts.count_accept_key = rc.count_accept_key;
  TypingSession session(model, kb, ablation, opts);

  const bool tty = script.empty() && isatty(STDIN_FILENO);
  if (tty) {
    RawTerminal raw;
    std::cout << "tab accepts, enter finishes\n";
    draw(std::cout, session);
    char c = 0;
    while (read(STDIN_FILENO, &c, 1) == 1 && c != '\n' && c != '\r' && c != 4) {
      session.press(c);
      draw(std::cout, session);
    }
    std::cout << "\n";
  } else {
    std::string keys = script;
    if (keys.empty()) keys.assign(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
    for (char c : keys) {
      if (c == '\n') break;
      session.press(c);
    }
  }
  session.finish();

  auto rep = make_report("interactive");
  rep["model"] = model_summary(model, ckpt);
  rep["ablation"] = ablation_name(ablation);
  rep["text"] = join_tokens(session.words());
  rep["tally"] = to_json(session.tally());
  rep["metrics"] = to_json(session.metrics());
  if (!report_path.empty()) write_json_atomic(report_path, rep);
  if (!tty) std::cout << rep.dump(2) << "\n";
  return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const fs::path& out, const fs::path& table_path,
               const fs::path& csv_path) {
  std::vector<json> reports;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        auto j = read_json_file(f);
        if (j.is_object() && j.contains("row")) reports.push_back(std::move(j));
      }
    } else {
      reports.push_back(read_json_file(in));
    }
  }
  if (reports.empty()) throw DataError("no evaluation reports found");
  const auto table = build_comparison(reports);
  std::ostringstream text, csv;
  render_table_text(text, table);
  render_table_csv(csv, table);
  write_json_atomic(out, table.to_json());
  if (!table_path.empty()) write_text_atomic(table_path, text.str());
  if (!csv_path.empty()) write_text_atomic(csv_path, csv.str());
  std::cout << text.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-base conditioned language models for text prediction"};
  app.require_subcommand(1);

  std::string config_path;
  FlagOverrides flags;
  app.add_option("--config", config_path, "JSON run configuration (also KBLM_CONFIG)");

  // Options shared by several subcommands register into these.
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--config", config_path, "JSON run configuration (also KBLM_CONFIG)");
  };

  std::string corpus, split = "test", out, report, csv, events, vocab_file, variant = "baseline", ablation = "none";
  std::string k_list, oov_policy, doc_id, kb_file, script, table_path;
  std::string model_path;
  bool count_accept_key = false, quiet = false;
  std::optional<int> epochs, minibatch, port, default_k;
  std::optional<double> value_scale;
  std::optional<std::string> host, model_dir;
  std::vector<std::string> report_inputs;
  QualitativeArgs q;

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  add_common(gen);
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train one variant");
  add_common(tr);
  tr->add_option("--corpus", corpus, "corpus directory")->required();
  tr->add_option("--variant", variant, "baseline, c, g or c+g")
      ->check(CLI::IsMember({"baseline", "c", "g", "c+g"}));
  tr->add_option("--out", out, "checkpoint path (*.ckpt)")->required();
  tr->add_option("--report", report, "training report path");
  tr->add_option("--epochs", epochs, "training epochs");
  tr->add_option("--minibatch", minibatch, "documents per update");
  tr->add_option("--value-scale", value_scale, "multiplier on numeric features");
  tr->add_option("--threads", threads, "worker threads for gradient computation");
  tr->add_flag("--quiet", quiet, "no per-epoch log");

  auto add_eval = [&](CLI::App* sub) {
    add_common(sub);
    sub->add_option("--model", model_path, "checkpoint")->required();
    sub->add_option("--corpus", corpus, "corpus directory")->required();
    sub->add_option("--split", split, "train, dev or test");
    sub->add_option("--ablation", ablation, "none, kb or v")->check(CLI::IsMember({"none", "kb", "v"}));
    sub->add_option("--report", report, "report path");
  };
  auto* ep = app.add_subcommand("eval-predict", "next-word prediction metrics");
  add_eval(ep);
  ep->add_option("--k", k_list, "comma-separated recall cutoffs");
  ep->add_option("--oov-policy", oov_policy, "miss or masked")->check(CLI::IsMember({"miss", "masked"}));
  ep->add_option("--csv", csv, "per-position ranks");

  auto* ec = app.add_subcommand("eval-complete", "simulated word completion");
  add_eval(ec);
  ec->add_flag("--count-accept-key", count_accept_key, "the accept key costs one keystroke");
  ec->add_option("--events", events, "per-word event CSV");

  auto* bd = app.add_subcommand("bounds", "theoretical and vocabulary keystroke-saving bounds");
  add_common(bd);
  bd->add_option("--corpus", corpus, "corpus directory")->required();
  bd->add_option("--split", split, "train, dev or test");
  bd->add_option("--vocab", vocab_file, "vocab.json (default: rebuilt from train)");
  bd->add_option("--report", report, "report path");

  auto* ql = app.add_subcommand("qualitative", "suggestion lists, substitution study, likelihood ratios");
  add_common(ql);
  ql->add_option("--mode", q.mode, "suggest, substitution or ratio")
      ->required()
      ->check(CLI::IsMember({"suggest", "substitution", "ratio"}));
  ql->add_option("--model", q.model, "checkpoint")->required();
  ql->add_option("--against", q.against, "second checkpoint for ratio");
  ql->add_option("--corpus", q.corpus, "corpus directory");
  ql->add_option("--split", q.split, "split holding --doc");
  ql->add_option("--doc", q.doc, "document id");
  ql->add_option("--position", q.position, "word position for suggest");
  ql->add_option("--k", q.k, "list length for suggest");
  ql->add_option("--watch", q.watch, "words whose rank is reported");
  ql->add_option("--study", q.study, "substitution study JSON");
  ql->add_option("--ablation", ablation, "none, kb or v")->check(CLI::IsMember({"none", "kb", "v"}));
  ql->add_option("--report", q.report, "report path");
  ql->add_option("--table", q.table, "plain table output (CSV or TSV)");

  auto* sv = app.add_subcommand("serve", "HTTP JSON API");
  add_common(sv);
  sv->add_option("--model-dir", model_dir, "directory of *.ckpt files");
  sv->add_option("--host", host, "listen address");
  sv->add_option("--port", port, "listen port (0 picks a free one)");
  sv->add_option("--default-k", default_k, "list length when a request omits k");

  auto* ia = app.add_subcommand("interactive", "terminal typing with prediction and completion");
  add_common(ia);
  ia->add_option("--model", model_path, "checkpoint")->required();
  ia->add_option("--corpus", corpus, "corpus directory holding --doc");
  ia->add_option("--split", split, "split holding --doc");
  ia->add_option("--doc", doc_id, "take the KB from this document");
  ia->add_option("--kb", kb_file, "KB JSON array");
  ia->add_option("--ablation", ablation, "none, kb or v")->check(CLI::IsMember({"none", "kb", "v"}));
  ia->add_flag("--count-accept-key", count_accept_key, "the accept key costs one keystroke");
  ia->add_option("--script", script, "keys to replay instead of reading the terminal");
  ia->add_option("--report", report, "report path");

  auto* rp = app.add_subcommand("report", "merge evaluation reports into comparison tables");
  rp->add_option("inputs", report_inputs, "report files or directories")->required();
  rp->add_option("--out", out, "merged JSON")->required();
  rp->add_option("--table", table_path, "aligned text table");
  rp->add_option("--csv", csv, "CSV table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (seed) flags.set("/seed", *seed);
    if (threads) flags.set("/threads", *threads);
    if (epochs) flags.set("/model/epochs", *epochs);
    if (minibatch) flags.set("/model/minibatch", *minibatch);
    if (value_scale) flags.set("/model/value_scale", *value_scale);
    if (!k_list.empty()) flags.set("/eval/k", parse_k_list(k_list));
    if (!oov_policy.empty()) flags.set("/eval/oov_policy", oov_policy);
    if (count_accept_key) flags.set("/eval/count_accept_key", true);
    if (host) flags.set("/serve/host", *host);
    if (port) flags.set("/serve/port", *port);
    if (model_dir) flags.set("/serve/model_dir", *model_dir);
    if (default_k) flags.set("/serve/default_k", *default_k);
    const RunConfig rc = resolve_config(config_path, flags);
    const auto abl = parse_ablation(ablation);

    if (*gen) return cmd_gen_corpus(rc, out);
    if (*tr) {
      RunConfig r = rc;
      r.model.set_variant(parse_variant(variant));
      r.model.validate();
      return cmd_train(r, corpus, out, report, quiet);
    }
    if (*ep) return cmd_eval_predict(rc, model_path, corpus, split, abl, report, csv);
    if (*ec) return cmd_eval_complete(rc, model_path, corpus, split, abl, report, events);
    if (*bd) return cmd_bounds(rc, corpus, split, vocab_file, report);
    if (*ql) {
      if (q.corpus.empty()) q.corpus = corpus;
      return cmd_qualitative(rc, q, abl);
    }
    if (*sv) return cmd_serve(rc);
    if (*ia) return cmd_interactive(rc, model_path, corpus, split, doc_id, kb_file, abl, script, report);
    if (*rp) return cmd_report(report_inputs, out, table_path, csv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
