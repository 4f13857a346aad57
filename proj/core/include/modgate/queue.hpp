#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>

namespace modgate {

struct QueueMessage {
  std::uint64_t seq = 0;
  std::string payload;
};

/// File-backed queue with at-least-once delivery. Publishes and acks are
/// appended to one JSONL log; reopening the log makes every unacked message
/// ready again, in publish order. A torn final line (crash mid-write) is
/// dropped on open.
class DurableQueue {
 public:
  DurableQueue(std::string name, std::filesystem::path log_path);
  ~DurableQueue();

  DurableQueue(const DurableQueue&) = delete;
  DurableQueue& operator=(const DurableQueue&) = delete;

  const std::string& name() const noexcept { return name_; }
  const std::filesystem::path& path() const noexcept { return path_; }

  std::uint64_t publish(const std::string& payload);
  /// Lowest-seq ready message, now in flight. Empty when nothing is ready.
  std::optional<QueueMessage> poll();
  /// Acking an unknown or already-acked seq is a no-op.
  void ack(std::uint64_t seq);
  /// Returns an in-flight message to the ready set without acking it.
  void nack(std::uint64_t seq);

  /// Ready plus in-flight.
  std::size_t outstanding() const;
  std::size_t ready() const;
  std::uint64_t published_total() const;

 private:
  void append_line(const std::string& line);

  std::string name_;
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::FILE* file_ = nullptr;
  std::uint64_t next_seq_ = 1;
  std::map<std::uint64_t, std::string> ready_;
  std::map<std::uint64_t, std::string> in_flight_;
};

}  // namespace modgate
