#pragma once

#include <cstdio>
#include <filesystem>
#include <mutex>
#include <vector>

#include <nlohmann/json.hpp>

namespace modgate {

/// Append-only JSONL log. Every append is flushed before returning.
class EventLog {
 public:
  explicit EventLog(std::filesystem::path path);
  ~EventLog();

  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  void append(const nlohmann::json& event);
  const std::filesystem::path& path() const noexcept { return path_; }

  /// All complete records; a torn final line is ignored, a missing file is empty.
  static std::vector<nlohmann::json> read(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
  std::FILE* file_ = nullptr;
};

}  // namespace modgate
