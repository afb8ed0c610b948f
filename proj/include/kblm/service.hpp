#pragma once

// HTTP JSON API over loaded checkpoints. Handlers are plain functions from a
// request body to a (status, body) pair so they can be exercised without sockets;
// `Service` binds them to an httplib server.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "kblm/checkpoint.hpp"
#include "kblm/completion.hpp"
#include "kblm/qualitative.hpp"

namespace kblm {

inline constexpr std::string_view kCheckpointExtension = ".ckpt";

/// Checkpoints of one directory, keyed by file stem. Reads share the lock;
/// reload takes it exclusively.
class ModelRegistry {
 public:
  ModelRegistry() = default;
  explicit ModelRegistry(std::filesystem::path dir) : dir_(std::move(dir)) { reload(); }

  void insert(const std::string& id, std::shared_ptr<const LanguageModel> model) {
    std::unique_lock lock(mu_);
    models_[id] = std::move(model);
  }

  void reload() {
    if (dir_.empty()) return;
    std::map<std::string, std::shared_ptr<const LanguageModel>> fresh;
    if (std::filesystem::is_directory(dir_)) {
      for (const auto& e : std::filesystem::directory_iterator(dir_)) {
        if (!e.is_regular_file() || e.path().extension() != kCheckpointExtension) continue;
        fresh.emplace(e.path().stem().string(), std::make_shared<const LanguageModel>(load_model(e.path().string())));
      }
    } else {
      throw DataError("model directory " + dir_.string() + " does not exist");
    }
    std::unique_lock lock(mu_);
    models_ = std::move(fresh);
  }

  std::shared_ptr<const LanguageModel> find(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = models_.find(id);
    return it == models_.end() ? nullptr : it->second;
  }

  std::vector<std::pair<std::string, std::shared_ptr<const LanguageModel>>> list() const {
    std::shared_lock lock(mu_);
    return {models_.begin(), models_.end()};
  }

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const LanguageModel>> models_;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

namespace detail {

struct FieldErrors {
  nlohmann::json list = nlohmann::json::array();

  void add(std::string field, std::string message) {
    list.push_back({{"field", std::move(field)}, {"message", std::move(message)}});
  }
  bool empty() const { return list.empty(); }
  ApiResponse response() const { return {400, {{"error", "malformed request"}, {"fields", list}}}; }
};

inline ApiResponse error(int status, const std::string& message) { return {status, {{"error", message}}}; }

inline AblationFlags parse_ablation(const nlohmann::json& body, FieldErrors& errs) {
  AblationFlags a;
  if (!body.contains("ablation") || body["ablation"].is_null()) return a;
  const auto& j = body["ablation"];
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "kb") {
      a.ignore_kb = true;
    } else if (s == "v") {
      a.ignore_values = true;
    } else if (s != "none") {
      errs.add("ablation", "expected one of none, kb, v");
    }
  } else if (j.is_object()) {
    for (const auto& [key, val] : j.items()) {
      if (!val.is_boolean()) {
        errs.add("ablation." + key, "expected a boolean");
      } else if (key == "ignore_kb") {
        a.ignore_kb = val.get<bool>();
      } else if (key == "ignore_values") {
        a.ignore_values = val.get<bool>();
      } else {
        errs.add("ablation." + key, "unknown flag");
      }
    }
  } else {
    errs.add("ablation", "expected a string or an object");
  }
  return a;
}

inline nlohmann::json ablation_json(const AblationFlags& a) {
  return {{"ignore_kb", a.ignore_kb}, {"ignore_values", a.ignore_values}};
}

inline std::vector<std::string> parse_tokens(const nlohmann::json& body, const char* field, FieldErrors& errs) {
  std::vector<std::string> out;
  if (!body.contains(field)) return out;
  const auto& j = body[field];
  if (!j.is_array()) {
    errs.add(field, "expected an array of strings");
    return out;
  }
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_string() || j[i].get<std::string>().empty()) {
      errs.add(std::string(field) + "[" + std::to_string(i) + "]", "expected a non-empty string");
    } else {
      out.push_back(j[i].get<std::string>());
    }
  }
  return out;
}

inline std::vector<KbTuple> parse_kb(const nlohmann::json& body, const char* field, FieldErrors& errs) {
  if (!body.contains(field)) return {};
  try {
    return kb_from_json(body[field]);
  } catch (const DataError& e) {
    errs.add(field, e.what());
    return {};
  }
}

/// Common prologue: object body, model lookup. Returns an error response or null.
inline std::optional<ApiResponse> resolve_model(const ModelRegistry& reg, const nlohmann::json& body, FieldErrors& errs,
                                                std::shared_ptr<const LanguageModel>& model) {
  if (!body.is_object()) {
    errs.add("", "body must be a JSON object");
    return errs.response();
  }
  if (!body.contains("model_id") || !body["model_id"].is_string()) {
    errs.add("model_id", "required string");
    return std::nullopt;
  }
  model = reg.find(body["model_id"].get<std::string>());
  if (!model) return error(404, "unknown model_id '" + body["model_id"].get<std::string>() + "'");
  return std::nullopt;
}

inline Vec context_distribution(const LanguageModel& model, const std::vector<KbTuple>& kb,
                                const std::vector<std::string>& context, const AblationFlags& ablation) {
  return next_word_distribution(model, kb, encode_all(context, model.vocab()), ablation);
}

}  // namespace detail

inline ApiResponse handle_predict(const ModelRegistry& reg, const nlohmann::json& body, std::size_t default_k = 5) {
  detail::FieldErrors errs;
  std::shared_ptr<const LanguageModel> model;
  if (auto r = detail::resolve_model(reg, body, errs, model)) return *r;
  const auto context = detail::parse_tokens(body, "context_tokens", errs);
  const auto kb = detail::parse_kb(body, "kb", errs);
  const auto ablation = detail::parse_ablation(body, errs);
  std::size_t k = default_k;
  if (body.contains("k")) {
    if (!body["k"].is_number_integer() || body["k"].get<std::int64_t>() < 1) {
      errs.add("k", "expected an integer >= 1");
    } else {
      k = body["k"].get<std::size_t>();
    }
  }
  if (!errs.empty()) return errs.response();

  const Vec dist = detail::context_distribution(*model, kb, context, ablation);
  auto list = nlohmann::json::array();
  for (const auto& s : top_k(dist, model->vocab(), k, true))
    list.push_back({{"word", s.word}, {"probability", s.probability}, {"rank", s.rank}});
  return {200, {{"model_id", body["model_id"]}, {"ablation", detail::ablation_json(ablation)}, {"suggestions", list}}};
}

inline ApiResponse handle_complete(const ModelRegistry& reg, const nlohmann::json& body) {
  detail::FieldErrors errs;
  std::shared_ptr<const LanguageModel> model;
  if (auto r = detail::resolve_model(reg, body, errs, model)) return *r;
  const auto context = detail::parse_tokens(body, "context_tokens", errs);
  const auto kb = detail::parse_kb(body, "kb", errs);
  const auto ablation = detail::parse_ablation(body, errs);
  std::string prefix;
  if (!body.contains("prefix") || !body["prefix"].is_string() || body["prefix"].get<std::string>().empty()) {
    errs.add("prefix", "required non-empty string");
  } else {
    prefix = body["prefix"].get<std::string>();
  }
  if (!errs.empty()) return errs.response();

  const Vec dist = detail::context_distribution(*model, kb, context, ablation);
  const Lexicon lexicon(model->vocab());
  const auto best = lexicon.best_match(prefix, std::span<const double>(dist.data(), dist.size()));
  nlohmann::json out = {{"model_id", body["model_id"]}, {"ablation", detail::ablation_json(ablation)}};
  if (best) {
    out["suggestion"] = best->word;
    out["probability"] = dist[best->id];
  } else {
    out["suggestion"] = nullptr;
    out["probability"] = nullptr;
  }
  return {200, out};
}

inline ApiResponse handle_substitution(const ModelRegistry& reg, const nlohmann::json& body) {
  detail::FieldErrors errs;
  std::shared_ptr<const LanguageModel> model;
  if (auto r = detail::resolve_model(reg, body, errs, model)) return *r;
  const auto ablation = detail::parse_ablation(body, errs);
  SubstitutionStudy study;
  if (!body.contains("document") || !body["document"].is_object()) {
    errs.add("document", "required corpus record object");
  } else {
    try {
      study.document = document_from_json(body["document"]);
    } catch (const std::exception& e) {
      errs.add("document", e.what());
    }
  }
  if (!body.contains("slot") || !body["slot"].is_number_integer() || body["slot"].get<std::int64_t>() < 0) {
    errs.add("slot", "required integer >= 0");
  } else {
    study.slot = body["slot"].get<std::size_t>();
  }
  study.candidates = detail::parse_tokens(body, "candidates", errs);
  if (!body.contains("candidates")) errs.add("candidates", "required array of strings");
  if (body.contains("configurations")) {
    const auto& cj = body["configurations"];
    if (!cj.is_array()) {
      errs.add("configurations", "expected an array");
    } else {
      for (std::size_t i = 0; i < cj.size(); ++i) {
        const std::string f = "configurations[" + std::to_string(i) + "]";
        if (!cj[i].is_object() || !cj[i].contains("label") || !cj[i]["label"].is_string()) {
          errs.add(f + ".label", "required string");
          continue;
        }
        ValueConfiguration vc{cj[i]["label"].get<std::string>(), {}};
        const auto values = cj[i].value("values", nlohmann::json::object());
        if (!values.is_object()) {
          errs.add(f + ".values", "expected an object");
          continue;
        }
        for (const auto& [attr, v] : values.items()) {
          if (!v.is_number()) {
            errs.add(f + ".values." + attr, "expected a number");
          } else {
            vc.values[attr] = v.get<double>();
          }
        }
        study.configurations.push_back(std::move(vc));
      }
    }
  }
  if (!errs.empty()) return errs.response();
  try {
    auto j = to_json(substitution_study(*model, study, ablation));
    j["model_id"] = body["model_id"];
    j["ablation"] = detail::ablation_json(ablation);
    return {200, j};
  } catch (const std::invalid_argument& e) {
    errs.add("candidates", e.what());
  } catch (const std::out_of_range& e) {
    errs.add("slot", e.what());
  }
  return errs.response();
}

inline ApiResponse handle_models(const ModelRegistry& reg) {
  auto arr = nlohmann::json::array();
  for (const auto& [id, m] : reg.list()) {
    const auto& c = m->config();
    arr.push_back({{"model_id", id},
                   {"variant", to_string(c.variant())},
                   {"conditional", c.conditional},
                   {"grounded", c.grounded},
                   {"dim", c.dim},
                   {"vocab_size", m->vocab().size()}});
  }
  return {200, arr};
}

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t default_k = 5;
};

class Service {
 public:
  Service(const ModelRegistry& registry, ServiceOptions opts) : reg_(registry), opts_(std::move(opts)) {
    auto post = [this](const char* path, auto handler) {
      server_.Post(path, [this, handler](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body;
        try {
          body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::parse_error& e) {
          send(res, detail::error(400, std::string("invalid JSON: ") + e.what()));
          return;
        }
        send(res, handler(body));
      });
    };
    post("/v1/predict", [this](const nlohmann::json& b) { return handle_predict(reg_, b, opts_.default_k); });
    post("/v1/complete", [this](const nlohmann::json& b) { return handle_complete(reg_, b); });
    post("/v1/substitution", [this](const nlohmann::json& b) { return handle_substitution(reg_, b); });
    server_.Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) { send(res, handle_models(reg_)); });
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send(res, detail::error(500, what));
    });
  }

  /// Binds (port 0 picks a free port) and returns the bound port, or -1.
  int bind() {
    if (opts_.port == 0) return server_.bind_to_any_port(opts_.host);
    return server_.bind_to_port(opts_.host, opts_.port) ? opts_.port : -1;
  }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  static void send(httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  const ModelRegistry& reg_;
  ServiceOptions opts_;
  httplib::Server server_;
};

}  // namespace kblm
