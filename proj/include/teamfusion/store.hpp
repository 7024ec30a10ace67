#pragma once

// File-backed session persistence: <root>/sessions/<id>.json is the commit
// point (written to a temp file, then renamed); <id>.transcript.jsonl mirrors
// the transcript one message per line and is repaired from the document on
// load.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "teamfusion/core.hpp"

namespace teamfusion {

inline bool valid_session_id(std::string_view id) {
  static const std::regex kId(R"([A-Za-z0-9_-][A-Za-z0-9_.-]{0,127})");
  return std::regex_match(id.begin(), id.end(), kId);
}

class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(sessions_dir());
  }

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path sessions_dir() const { return root_ / "sessions"; }
  std::filesystem::path document_path(const std::string& id) const {
    return sessions_dir() / (id + ".json");
  }
  std::filesystem::path transcript_path(const std::string& id) const {
    return sessions_dir() / (id + ".transcript.jsonl");
  }

  bool exists(const std::string& id) const {
    return valid_session_id(id) && std::filesystem::exists(document_path(id));
  }

  void save(const SessionState& state) const {
    if (!valid_session_id(state.session_id)) {
      throw InvalidArgument("invalid session id: " + state.session_id);
    }
    const auto doc = document_path(state.session_id);
    const auto tmp = doc.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("IoError", "cannot write " + tmp);
      out << json(state).dump(2, ' ', false, json::error_handler_t::replace) << '\n';
      out.flush();
      if (!out) throw Error("IoError", "short write to " + tmp);
    }
    std::filesystem::rename(tmp, doc);
    sync_transcript(state);
  }

  std::optional<SessionState> load(const std::string& id) const {
    if (!exists(id)) return std::nullopt;
    std::ifstream in(document_path(id), std::ios::binary);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ParseError("corrupt session document " + document_path(id).string());
    SessionState state = j.get<SessionState>();
    sync_transcript(state);
    return state;
  }

  // Session ids with a committed document, sorted.
  std::vector<std::string> list() const {
    std::vector<std::string> out;
    for (const auto& entry : std::filesystem::directory_iterator(sessions_dir())) {
      const auto name = entry.path().filename().string();
      if (entry.path().extension() == ".json" && name.find(".transcript") == std::string::npos) {
        out.push_back(entry.path().stem().string());
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  // Appends messages missing from the JSONL file; rewrites it when it holds
  // lines the committed document does not (a crash between the two writes).
  void sync_transcript(const SessionState& state) const {
    const auto path = transcript_path(state.session_id);
    const auto& msgs = state.transcript.messages();
    std::vector<std::string> lines;
    if (std::ifstream in{path, std::ios::binary}) {
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
      }
    }
    bool prefix_ok = lines.size() <= msgs.size();
    for (std::size_t i = 0; prefix_ok && i < lines.size(); ++i) {
      prefix_ok = lines[i] == encode(msgs[i]);
    }
    if (prefix_ok) {
      if (lines.size() == msgs.size()) return;
      std::ofstream out(path, std::ios::binary | std::ios::app);
      for (std::size_t i = lines.size(); i < msgs.size(); ++i) out << encode(msgs[i]) << '\n';
      return;
    }
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      for (const auto& m : msgs) out << encode(m) << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  static std::string encode(const Message& m) {
    return json(m).dump(-1, ' ', false, json::error_handler_t::replace);
  }

  std::filesystem::path root_;
};

}  // namespace teamfusion
