#pragma once

// Provider-agnostic model access. Every call goes through one of four modes:
//   live     - OpenAI-compatible HTTP endpoint
//   record   - live (or scripted) plus an appended tape entry
//   replay   - answered from a tape, never touching the network
//   scripted - deterministic canned responses
// Tapes are JSON-Lines, one entry per call.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <openssl/evp.h>

#include "teamfusion/core.hpp"
#include "teamfusion/persona.hpp"

namespace teamfusion {

// ---------------------------------------------------------------------------
// Hashing and encoding helpers

inline std::string to_hex(const unsigned char* data, std::size_t n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    out += kDigits[data[i] >> 4];
    out += kDigits[data[i] & 0xf];
  }
  return out;
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("CryptoError", "sha256 failed");
  }
  return to_hex(md, len);
}

inline std::optional<std::string> base64_decode(std::string_view in) {
  std::string clean;
  for (char c : in) {
    if (c != '\n' && c != '\r' && c != ' ') clean += c;
  }
  if (clean.size() % 4 != 0) return std::nullopt;
  std::string out(clean.size() / 4 * 3, '\0');
  int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(clean.data()),
                          static_cast<int>(clean.size()));
  if (n < 0) return std::nullopt;
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

inline std::string base64_encode(std::string_view in) {
  std::string out(4 * ((in.size() + 2) / 3) + 1, '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(in.data()),
                          static_cast<int>(in.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// ChatCall and its canonical encoding

enum class CallPurpose { proxy_turn, summary_remix, design_remix, final_pick, judge };

NLOHMANN_JSON_SERIALIZE_ENUM(CallPurpose, {{CallPurpose::proxy_turn, "proxy_turn"},
                                           {CallPurpose::summary_remix, "summary_remix"},
                                           {CallPurpose::design_remix, "design_remix"},
                                           {CallPurpose::final_pick, "final_pick"},
                                           {CallPurpose::judge, "judge"}})

struct ChatCall {
  CallPurpose purpose = CallPurpose::proxy_turn;
  // Speaking agent for proxy turns; empty otherwise.
  std::string speaker;
  std::string system_prompt;
  std::vector<Message> history_view;
  std::vector<Attachment> attachments;
  double temperature = 1.0;
  std::string model_id;

  friend bool operator==(const ChatCall&, const ChatCall&) = default;
};

namespace detail {

// CRLF -> LF and no trailing blanks at line ends.
inline std::string normalize_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\r' && i + 1 < s.size() && s[i + 1] == '\n') continue;
    if (s[i] == '\n') {
      while (!out.empty() && (out.back() == ' ' || out.back() == '\t')) out.pop_back();
    }
    out += s[i];
  }
  while (!out.empty() && (out.back() == ' ' || out.back() == '\t')) out.pop_back();
  return out;
}

}  // namespace detail

// Images may arrive as data: URIs or local file paths; both normalize to the
// digest of the raw bytes so they hash equal. Remote URLs are kept verbatim.
inline std::string normalize_media_uri(const std::string& uri) {
  if (uri.rfind("data:", 0) == 0) {
    auto comma = uri.find(',');
    if (comma != std::string::npos && uri.substr(0, comma).find(";base64") != std::string::npos) {
      if (auto bytes = base64_decode(std::string_view(uri).substr(comma + 1))) {
        return "sha256:" + sha256_hex(*bytes);
      }
    }
    return uri;
  }
  if (uri.find("://") == std::string::npos && uri.rfind("sha256:", 0) != 0 && !uri.empty()) {
    std::error_code ec;
    if (std::filesystem::is_regular_file(uri, ec)) return "sha256:" + sha256_hex(read_file(uri));
  }
  return uri;
}

inline json chat_call_to_json(const ChatCall& call) {
  json history = json::array();
  for (const auto& m : call.history_view) {
    history.push_back({{"seq", m.seq},
                       {"speaker", detail::normalize_text(m.speaker)},
                       {"role", m.role},
                       {"content", detail::normalize_text(m.content)},
                       {"iteration", m.iteration}});
  }
  json attachments = json::array();
  for (const auto& a : call.attachments) {
    attachments.push_back({{"label", detail::normalize_text(a.label)},
                           {"uri", normalize_media_uri(a.uri)}});
  }
  return json{{"purpose", call.purpose},
              {"speaker", detail::normalize_text(call.speaker)},
              {"system_prompt", detail::normalize_text(call.system_prompt)},
              {"history", std::move(history)},
              {"attachments", std::move(attachments)},
              {"temperature", call.temperature},
              {"model_id", call.model_id}};
}

// Stable byte encoding: sorted keys, compact, normalized whitespace.
inline std::string canonicalize(const ChatCall& call) {
  return chat_call_to_json(call).dump(-1, ' ', false, json::error_handler_t::replace);
}

inline ChatCall decode_canonical(std::string_view bytes) {
  json j = json::parse(bytes);
  ChatCall call;
  call.purpose = j.at("purpose").get<CallPurpose>();
  call.speaker = j.at("speaker").get<std::string>();
  call.system_prompt = j.at("system_prompt").get<std::string>();
  for (const auto& m : j.at("history")) call.history_view.push_back(m.get<Message>());
  for (const auto& a : j.at("attachments")) {
    call.attachments.push_back({a.at("label").get<std::string>(), a.at("uri").get<std::string>()});
  }
  call.temperature = j.at("temperature").get<double>();
  call.model_id = j.at("model_id").get<std::string>();
  return call;
}

inline std::string request_digest(const ChatCall& call) { return sha256_hex(canonicalize(call)); }

// ---------------------------------------------------------------------------
// Transport

struct MultipartField {
  std::string name;
  std::string content;
  std::string filename;
  std::string content_type;
};

struct HttpRequest {
  std::string base_url;
  std::string path;
  std::map<std::string, std::string> headers;
  std::string body;
  std::string content_type = "application/json";
  std::vector<MultipartField> multipart;
  std::chrono::milliseconds timeout{60000};
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

// Fails every request; installed wherever network access must not happen.
class NoNetworkTransport : public Transport {
 public:
  HttpResponse post(const HttpRequest& request) override {
    ++attempts_;
    throw Error("NetworkForbidden", "network access attempted: " + request.base_url + request.path);
  }
  int attempts() const { return attempts_.load(); }

 private:
  std::atomic<int> attempts_{0};
};

// cpp-httplib backed transport; https needs CPPHTTPLIB_OPENSSL_SUPPORT.
class HttplibTransport : public Transport {
 public:
  HttpResponse post(const HttpRequest& request) override {
    httplib::Client client(request.base_url);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout).count();
    client.set_connection_timeout(static_cast<time_t>(secs));
    client.set_read_timeout(static_cast<time_t>(secs));
    client.set_write_timeout(static_cast<time_t>(secs));
    httplib::Headers headers(request.headers.begin(), request.headers.end());

    httplib::Result res;
    if (request.multipart.empty()) {
      res = client.Post(request.path, headers, request.body, request.content_type);
    } else {
      httplib::MultipartFormDataItems items;
      for (const auto& f : request.multipart) {
        items.push_back({f.name, f.content, f.filename, f.content_type});
      }
      res = client.Post(request.path, headers, items);
    }
    if (!res) {
      if (res.error() == httplib::Error::ConnectionTimeout || res.error() == httplib::Error::Read) {
        throw Timeout("request to " + request.base_url + request.path + " timed out");
      }
      throw HttpError(0, httplib::to_string(res.error()));
    }
    return {res->status, res->body};
  }
};

inline std::shared_ptr<Transport> make_http_transport() {
  return std::make_shared<HttplibTransport>();
}

// ---------------------------------------------------------------------------
// Tape

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct TapeEntry {
  std::size_t call_index = 0;
  std::string kind = "chat";  // "chat" or "image_edit"
  std::string request_digest;
  json request;
  std::string response_text;
  std::optional<TokenUsage> usage;
};

inline json tape_entry_to_json(const TapeEntry& e) {
  json j{{"call_index", e.call_index},
         {"kind", e.kind},
         {"request_digest", e.request_digest},
         {"request", e.request},
         {"response_text", e.response_text}};
  if (e.usage) {
    j["usage"] = {{"prompt_tokens", e.usage->prompt_tokens},
                  {"completion_tokens", e.usage->completion_tokens}};
  }
  return j;
}

inline TapeEntry tape_entry_from_json(const json& j) {
  TapeEntry e;
  e.call_index = j.at("call_index").get<std::size_t>();
  e.kind = j.value("kind", "chat");
  e.request_digest = j.at("request_digest").get<std::string>();
  e.request = j.at("request");
  e.response_text = j.at("response_text").get<std::string>();
  if (j.contains("usage")) {
    e.usage = TokenUsage{j["usage"].value("prompt_tokens", std::int64_t{0}),
                         j["usage"].value("completion_tokens", std::int64_t{0})};
  }
  return e;
}

inline std::vector<TapeEntry> load_tape(const std::filesystem::path& path) {
  std::vector<TapeEntry> entries;
  std::ifstream in(path);
  if (!in) throw NotFound("tape not found: " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      entries.push_back(tape_entry_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const auto& e = entries.back();
    if (entries.size() > 1 && e.call_index <= entries[entries.size() - 2].call_index) {
      throw InvariantViolation("tape call_index not increasing at line " + std::to_string(lineno));
    }
  }
  return entries;
}

// ---------------------------------------------------------------------------
// Backends

struct ChatResponse {
  std::string text;
  std::optional<TokenUsage> usage;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse chat(const ChatCall& call) = 0;
};

struct ImageEditResult {
  std::string media_uri;
  json metadata;
};

class ImageBackend {
 public:
  virtual ~ImageBackend() = default;
  virtual ImageEditResult edit_image(const std::vector<std::string>& option_media,
                                     const std::string& directions) = 0;
};

enum class GatewayMode { live, record, replay, scripted };
enum class ImageMode { live, record, replay, stub };

NLOHMANN_JSON_SERIALIZE_ENUM(GatewayMode, {{GatewayMode::live, "live"},
                                           {GatewayMode::record, "record"},
                                           {GatewayMode::replay, "replay"},
                                           {GatewayMode::scripted, "scripted"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ImageMode, {{ImageMode::live, "live"},
                                         {ImageMode::record, "record"},
                                         {ImageMode::replay, "replay"},
                                         {ImageMode::stub, "stub"}})

using ScriptFn = std::function<std::string(const ChatCall&, std::size_t call_index)>;

struct ChatBackendConfig {
  GatewayMode mode = GatewayMode::scripted;
  ImageMode image_mode = ImageMode::stub;
  std::string endpoint_url = "https://api.openai.com";
  std::string model_id = "gpt-4.1-mini";
  std::string image_model_id = "gpt-image-1";
  std::string api_key_env_name = "OPENAI_API_KEY";
  std::chrono::milliseconds timeout{60000};
  int max_retries = 2;
  std::optional<std::filesystem::path> tape_path;
  // Record mode appends to an existing tape instead of truncating it.
  bool resume_tape = false;
  // Inline script: responses returned in order, cycling.
  std::vector<std::string> script;
  // Programmatic script; takes precedence over `script`.
  ScriptFn script_fn;
  // Where live image edits are written.
  std::filesystem::path artifact_dir = "artifacts";
  // When false, attachments are dropped before live calls with a warning.
  bool multimodal = true;
  // Bounds concurrent live requests across gateways sharing it.
  std::shared_ptr<std::counting_semaphore<64>> inflight;
};

inline std::vector<std::string> config_violations(const ChatBackendConfig& cfg) {
  std::vector<std::string> out;
  const bool needs_tape = cfg.mode == GatewayMode::record || cfg.mode == GatewayMode::replay ||
                          cfg.image_mode == ImageMode::record ||
                          cfg.image_mode == ImageMode::replay;
  if (needs_tape && !cfg.tape_path) out.emplace_back("record/replay modes require tape_path");
  if (cfg.mode == GatewayMode::scripted && cfg.script.empty() && !cfg.script_fn) {
    out.emplace_back("scripted mode requires a script");
  }
  if (cfg.max_retries < 0) out.emplace_back("max_retries must be >= 0");
  return out;
}

// Deterministic responder for offline runs: proxy turns get a short stance,
// remix calls get a well-formed ranking over every attached option, judge
// calls answer "first".
inline std::string synthetic_response(const ChatCall& call, std::size_t /*call_index*/) {
  const std::string digest = request_digest(call);
  switch (call.purpose) {
    case CallPurpose::proxy_turn:
      return call.speaker + ": after " + std::to_string(call.history_view.size()) +
             " messages I still lean toward my stated preferences (" + digest.substr(0, 8) + ").";
    case CallPurpose::summary_remix:
      return "Participants broadly agree on the main themes while minority views remain "
             "visible (" + digest.substr(0, 8) + ").";
    case CallPurpose::judge:
      return "first";
    case CallPurpose::design_remix:
    case CallPurpose::final_pick: {
      std::vector<int> numbers;
      static const std::regex kImage(R"(Image (\d+))");
      for (const auto& a : call.attachments) {
        std::smatch m;
        if (std::regex_search(a.label, m, kImage)) numbers.push_back(std::stoi(m[1].str()));
      }
      // Rotate by a digest-derived offset so rankings vary between calls.
      if (!numbers.empty()) {
        std::size_t offset = std::stoul(digest.substr(0, 6), nullptr, 16) % numbers.size();
        std::rotate(numbers.begin(), numbers.begin() + static_cast<long>(offset), numbers.end());
      }
      json ranking = json::array();
      for (std::size_t i = 0; i < numbers.size(); ++i) {
        ranking.push_back({{"rank", i + 1},
                           {"image_number", numbers[i]},
                           {"reason", "consensus position " + std::to_string(i + 1)}});
      }
      std::string directions =
          numbers.empty() ? "Keep the current design."
                          : "Use the overall layout and structure from Image " +
                                std::to_string(numbers.front()) + ".";
      if (numbers.size() > 1) {
        directions += " Adopt the color scheme from Image " + std::to_string(numbers[1]) + ".";
      }
      json out{{"final_ranking", ranking}, {"editing_directions", directions}};
      return "```json\n" + out.dump(2) + "\n```";
    }
  }
  return "ok";
}

// The standard gateway implementation of both backends. One instance owns one
// tape and must not be shared between sessions.
class ModelGateway : public ChatBackend, public ImageBackend {
 public:
  explicit ModelGateway(ChatBackendConfig cfg, std::shared_ptr<Transport> transport = nullptr)
      : cfg_(std::move(cfg)), transport_(std::move(transport)) {
    auto violations = config_violations(cfg_);
    if (!violations.empty()) throw ConfigError(violations.front());
    if (cfg_.mode == GatewayMode::replay || cfg_.image_mode == ImageMode::replay) {
      replay_entries_ = load_tape(*cfg_.tape_path);
      used_.assign(replay_entries_.size(), false);
      if (!transport_) transport_ = std::make_shared<NoNetworkTransport>();
    }
    if (cfg_.mode == GatewayMode::record || cfg_.image_mode == ImageMode::record) {
      std::filesystem::create_directories(cfg_.tape_path->parent_path().empty()
                                              ? std::filesystem::path(".")
                                              : cfg_.tape_path->parent_path());
      if (cfg_.resume_tape && std::filesystem::exists(*cfg_.tape_path)) {
        auto existing = load_tape(*cfg_.tape_path);
        next_index_ = existing.empty() ? 0 : existing.back().call_index + 1;
        tape_out_.open(*cfg_.tape_path, std::ios::app | std::ios::binary);
      } else {
        tape_out_.open(*cfg_.tape_path, std::ios::trunc | std::ios::binary);
      }
      if (!tape_out_) throw ConfigError("cannot open tape " + cfg_.tape_path->string());
    }
  }

  const ChatBackendConfig& config() const { return cfg_; }
  std::size_t calls_made() const { return calls_made_; }

  ChatResponse chat(const ChatCall& call) override {
    std::lock_guard lock(mu_);
    const std::size_t index = calls_made_++;
    switch (cfg_.mode) {
      case GatewayMode::scripted:
        return {scripted(call, index), std::nullopt};
      case GatewayMode::live:
        return live_chat(call);
      case GatewayMode::replay:
        return {replay("chat", request_digest(call)), std::nullopt};
      case GatewayMode::record: {
        ChatResponse r = (cfg_.script.empty() && !cfg_.script_fn)
                             ? live_chat(call)
                             : ChatResponse{scripted(call, index), std::nullopt};
        append_tape("chat", request_digest(call), chat_call_to_json(call), r.text, r.usage);
        return r;
      }
    }
    throw ConfigError("unknown gateway mode");
  }

  ImageEditResult edit_image(const std::vector<std::string>& option_media,
                             const std::string& directions) override {
    if (directions.empty()) throw InvalidArgument("edit_image: directions must be nonempty");
    std::lock_guard lock(mu_);
    json request{{"directions", directions}, {"model", cfg_.image_model_id}};
    json sources = json::array();
    for (const auto& m : option_media) sources.push_back(normalize_media_uri(m));
    request["sources"] = sources;
    const std::string digest = sha256_hex(request.dump(-1, ' ', false, json::error_handler_t::replace));
    json metadata{{"directions", directions}, {"sources", option_media}};

    switch (cfg_.image_mode) {
      case ImageMode::stub:
        return {"stub://remix/" + digest.substr(0, 16), metadata};
      case ImageMode::replay:
        return {replay("image_edit", digest), metadata};
      case ImageMode::live:
        return {live_image(option_media, directions, digest), metadata};
      case ImageMode::record: {
        std::string uri = live_image(option_media, directions, digest);
        append_tape("image_edit", digest, request, uri, std::nullopt);
        return {uri, metadata};
      }
    }
    throw ConfigError("unknown image mode");
  }

 private:
  std::string scripted(const ChatCall& call, std::size_t index) const {
    if (cfg_.script_fn) return cfg_.script_fn(call, index);
    return cfg_.script[index % cfg_.script.size()];
  }

  std::string replay(const std::string& kind, const std::string& digest) {
    auto matches = [&](std::size_t i) {
      return !used_[i] && replay_entries_[i].kind == kind &&
             replay_entries_[i].request_digest == digest;
    };
    std::optional<std::size_t> hit;
    if (cursor_ < replay_entries_.size() && matches(cursor_)) {
      hit = cursor_;
    } else {
      // Resumed runs start mid-tape.
      for (std::size_t i = 0; i < replay_entries_.size(); ++i) {
        if (matches(i)) {
          hit = i;
          break;
        }
      }
    }
    if (!hit) {
      if (cursor_ >= replay_entries_.size()) throw TapeExhausted("tape has no entry for " + digest);
      throw TapeMismatch(replay_entries_[cursor_].call_index, replay_entries_[cursor_].request_digest,
                         digest);
    }
    used_[*hit] = true;
    cursor_ = *hit + 1;
    return replay_entries_[*hit].response_text;
  }

  void append_tape(const std::string& kind, const std::string& digest, json request,
                   const std::string& response, const std::optional<TokenUsage>& usage) {
    TapeEntry e{next_index_++, kind, digest, std::move(request), response, usage};
    tape_out_ << tape_entry_to_json(e).dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    tape_out_.flush();
  }

  Transport& transport() {
    if (!transport_) transport_ = make_http_transport();
    return *transport_;
  }

  std::map<std::string, std::string> auth_headers() const {
    std::map<std::string, std::string> headers;
    if (!cfg_.api_key_env_name.empty()) {
      if (const char* key = std::getenv(cfg_.api_key_env_name.c_str())) {
        headers["Authorization"] = std::string("Bearer ") + key;
      }
    }
    return headers;
  }

  static std::string media_as_url(const std::string& uri) {
    if (uri.find("://") != std::string::npos || uri.rfind("data:", 0) == 0) return uri;
    return "data:image/png;base64," + base64_encode(read_file(uri));
  }

  json build_chat_body(const ChatCall& call) const {
    json messages = json::array();
    messages.push_back({{"role", "system"}, {"content", call.system_prompt}});
    std::vector<Attachment> attachments;
    for (const auto& a : call.attachments) {
      if (!a.uri.empty()) attachments.push_back(a);
    }
    if (!attachments.empty() && !cfg_.multimodal) {
      std::cerr << "warning: text-only backend; dropping " << attachments.size()
                << " attachment(s)\n";
      attachments.clear();
    }
    if (!attachments.empty()) {
      json parts = json::array();
      for (const auto& a : attachments) {
        parts.push_back({{"type", "text"}, {"text", a.label}});
        parts.push_back({{"type", "image_url"}, {"image_url", {{"url", media_as_url(a.uri)}}}});
      }
      messages.push_back({{"role", "user"}, {"content", parts}});
    }
    for (const auto& m : call.history_view) {
      std::string name;
      for (char c : m.speaker) {
        name += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') ? c : '_';
      }
      json msg{{"role", "user"}, {"content", m.content}};
      if (!name.empty()) msg["name"] = name.substr(0, 64);
      messages.push_back(std::move(msg));
    }
    if (call.history_view.empty() && attachments.empty()) {
      messages.push_back({{"role", "user"}, {"content", "Please respond."}});
    }
    return json{{"model", call.model_id.empty() ? cfg_.model_id : call.model_id},
                {"temperature", call.temperature},
                {"messages", messages}};
  }

  HttpResponse post_with_retries(const HttpRequest& request) {
    if (cfg_.inflight) cfg_.inflight->acquire();
    struct Release {
      std::shared_ptr<std::counting_semaphore<64>> sem;
      ~Release() {
        if (sem) sem->release();
      }
    } release{cfg_.inflight};

    for (int attempt = 0;; ++attempt) {
      try {
        HttpResponse r = transport().post(request);
        const bool retryable = r.status == 429 || r.status >= 500;
        if (r.status >= 200 && r.status < 300) return r;
        if (!retryable || attempt >= cfg_.max_retries) throw HttpError(r.status, r.body);
      } catch (const Timeout&) {
        if (attempt >= cfg_.max_retries) throw;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(200) * (1 << attempt));
    }
  }

  ChatResponse live_chat(const ChatCall& call) {
    HttpRequest req;
    req.base_url = cfg_.endpoint_url;
    req.path = "/v1/chat/completions";
    req.headers = auth_headers();
    req.body = build_chat_body(call).dump(-1, ' ', false, json::error_handler_t::replace);
    req.timeout = cfg_.timeout;
    HttpResponse r = post_with_retries(req);
    json body;
    try {
      body = json::parse(r.body);
    } catch (const json::exception& e) {
      throw HttpError(r.status, std::string("unparseable response: ") + e.what());
    }
    ChatResponse out;
    try {
      const auto& content = body.at("choices").at(0).at("message").at("content");
      out.text = content.is_string() ? content.get<std::string>() : content.dump();
    } catch (const json::exception&) {
      throw HttpError(r.status, "response without choices[0].message.content");
    }
    if (body.contains("usage")) {
      out.usage = TokenUsage{body["usage"].value("prompt_tokens", std::int64_t{0}),
                             body["usage"].value("completion_tokens", std::int64_t{0})};
    }
    return out;
  }

  std::string live_image(const std::vector<std::string>& option_media,
                         const std::string& directions, const std::string& digest) {
    HttpRequest req;
    req.base_url = cfg_.endpoint_url;
    req.path = "/v1/images/edits";
    req.headers = auth_headers();
    req.timeout = cfg_.timeout;
    req.multipart.push_back({"model", cfg_.image_model_id, "", ""});
    req.multipart.push_back({"prompt", directions, "", ""});
    for (const auto& m : option_media) {
      if (m.find("://") != std::string::npos) continue;
      req.multipart.push_back(
          {"image[]", read_file(m), std::filesystem::path(m).filename().string(), "image/png"});
    }
    HttpResponse r = post_with_retries(req);
    json body = json::parse(r.body, nullptr, false);
    if (body.is_discarded() || !body.contains("data") || body["data"].empty()) {
      throw HttpError(r.status, "image edit response without data");
    }
    const auto& item = body["data"][0];
    if (item.contains("url")) return item["url"].get<std::string>();
    auto bytes = base64_decode(item.value("b64_json", ""));
    if (!bytes) throw HttpError(r.status, "image edit response with invalid b64_json");
    std::filesystem::create_directories(cfg_.artifact_dir);
    auto path = cfg_.artifact_dir / ("remix-" + digest.substr(0, 16) + ".png");
    std::ofstream out(path, std::ios::binary);
    out << *bytes;
    return path.string();
  }

  ChatBackendConfig cfg_;
  std::shared_ptr<Transport> transport_;
  std::mutex mu_;
  std::size_t calls_made_ = 0;
  std::vector<TapeEntry> replay_entries_;
  std::vector<bool> used_;
  std::size_t cursor_ = 0;
  std::ofstream tape_out_;
  std::size_t next_index_ = 0;
};

}  // namespace teamfusion
