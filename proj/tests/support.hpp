#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "teamfusion/teamfusion.hpp"

namespace tf_test {

using namespace teamfusion;

inline std::filesystem::path data_dir() { return TEAMFUSION_TEST_DATA_DIR; }
inline std::filesystem::path source_dir() { return TEAMFUSION_SOURCE_DIR; }

inline std::string slurp(const std::filesystem::path& p) { return read_file(p); }

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "tf-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline TaskContext design_context(int n_options = 6, std::string id = "brief-1") {
  TaskContext c;
  c.context_id = std::move(id);
  c.kind = TaskKind::design;
  c.prompt_text = "Lumen Coffee needs an Instagram ad announcing its seasonal launch.";
  for (int i = 1; i <= n_options; ++i) {
    c.options.push_back({i, "media/option-" + std::to_string(i) + ".png", std::nullopt});
  }
  return c;
}

inline TaskContext deliberation_context(TaskKind kind = TaskKind::open_qa) {
  TaskContext c;
  c.context_id = "q-1";
  c.kind = kind;
  c.prompt_text = "How has AI changed the way you look for information?";
  return c;
}

// ranks[i] is the rank given to option i + 1.
inline ParticipantEvidence designer(const std::string& id, const std::string& name,
                                    const std::vector<int>& ranks) {
  ParticipantEvidence e;
  e.participant_id = id;
  e.display_name = name;
  std::map<int, Opinion> ops;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    ops[static_cast<int>(i) + 1] = {ranks[i], name + " justification for option " + std::to_string(i + 1)};
  }
  e.option_opinions = ops;
  return e;
}

inline ParticipantEvidence commenter(const std::string& id, const std::string& name,
                                     const std::string& comment) {
  ParticipantEvidence e;
  e.participant_id = id;
  e.display_name = name;
  e.comment_text = comment;
  return e;
}

inline std::vector<ParticipantEvidence> designers(int n, int n_options = 6) {
  std::vector<ParticipantEvidence> out;
  for (int k = 0; k < n; ++k) {
    std::vector<int> ranks(static_cast<std::size_t>(n_options));
    for (int i = 0; i < n_options; ++i) ranks[static_cast<std::size_t>(i)] = (i + k) % n_options + 1;
    out.push_back(designer("d" + std::to_string(k + 1), "Designer " + std::to_string(k + 1), ranks));
  }
  return out;
}

inline std::vector<ParticipantEvidence> commenters(int n) {
  std::vector<ParticipantEvidence> out;
  for (int k = 0; k < n; ++k) {
    out.push_back(commenter("p" + std::to_string(k + 1), "Participant " + std::to_string(k + 1),
                            "Comment number " + std::to_string(k + 1) + " about AI and search."));
  }
  return out;
}

// Backend driven by a function; records every call it receives.
class FnBackend : public ChatBackend {
 public:
  using Fn = std::function<std::string(const ChatCall&, std::size_t)>;
  explicit FnBackend(Fn fn = synthetic_response) : fn_(std::move(fn)) {}

  ChatResponse chat(const ChatCall& call) override {
    std::size_t index;
    {
      std::lock_guard lock(mu_);
      index = calls_.size();
      calls_.push_back(call);
    }
    return {fn_(call, index), std::nullopt};
  }

  std::vector<ChatCall> calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  Fn fn_;
  mutable std::mutex mu_;
  std::vector<ChatCall> calls_;
};

inline ChatBackendConfig scripted_config() {
  ChatBackendConfig c;
  c.mode = GatewayMode::scripted;
  c.script_fn = synthetic_response;
  return c;
}

// Transport that answers with queued responses and counts requests.
class FakeTransport : public Transport {
 public:
  std::vector<HttpResponse> responses;
  std::vector<HttpRequest> requests;

  HttpResponse post(const HttpRequest& request) override {
    requests.push_back(request);
    if (responses.empty()) throw std::runtime_error("FakeTransport: no queued response");
    HttpResponse r = responses.front();
    responses.erase(responses.begin());
    return r;
  }
};

inline std::string chat_completion_body(const std::string& content) {
  return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}},
              {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 7}}}}
      .dump();
}

}  // namespace tf_test
