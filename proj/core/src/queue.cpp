#include "modgate/queue.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "modgate/error.hpp"

namespace modgate {

DurableQueue::DurableQueue(std::string name, std::filesystem::path log_path)
    : name_(std::move(name)), path_(std::move(log_path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());

  std::map<std::uint64_t, std::string> published;
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_, std::ios::binary);
    std::string line;
    std::uintmax_t good_bytes = 0;
    bool torn = false;
    while (std::getline(in, line)) {
      const bool complete = !in.eof();
      nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
      if (rec.is_discarded() || !complete) {
        if (in.peek() != std::char_traits<char>::eof() && complete) {
          throw Error(ErrorKind::DecodeError, "corrupt queue log " + path_.string());
        }
        torn = true;
        break;
      }
      good_bytes += line.size() + 1;
      const auto seq = rec.at("seq").get<std::uint64_t>();
      const auto op = rec.at("op").get<std::string>();
      if (op == "pub") {
        published[seq] = rec.at("payload").get<std::string>();
        next_seq_ = std::max(next_seq_, seq + 1);
      } else if (op == "ack") {
        published.erase(seq);
      }
    }
    in.close();
    if (torn) std::filesystem::resize_file(path_, good_bytes);
  }
  ready_ = std::move(published);

  file_ = std::fopen(path_.string().c_str(), "ab");
  if (file_ == nullptr) throw Error(ErrorKind::IoError, "cannot open queue log " + path_.string());
}

DurableQueue::~DurableQueue() {
  if (file_ != nullptr) std::fclose(file_);
}

void DurableQueue::append_line(const std::string& line) {
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fputc('\n', file_) == EOF ||
      std::fflush(file_) != 0) {
    throw Error(ErrorKind::IoError, "write failed on queue log " + path_.string());
  }
}

std::uint64_t DurableQueue::publish(const std::string& payload) {
  std::lock_guard lock(mutex_);
  const std::uint64_t seq = next_seq_++;
  append_line(nlohmann::json{{"op", "pub"}, {"seq", seq}, {"payload", payload}}.dump());
  ready_.emplace(seq, payload);
  return seq;
}

std::optional<QueueMessage> DurableQueue::poll() {
  std::lock_guard lock(mutex_);
  if (ready_.empty()) return std::nullopt;
  auto node = ready_.extract(ready_.begin());
  QueueMessage msg{node.key(), node.mapped()};
  in_flight_.insert(std::move(node));
  return msg;
}

void DurableQueue::ack(std::uint64_t seq) {
  std::lock_guard lock(mutex_);
  if (in_flight_.erase(seq) == 0 && ready_.erase(seq) == 0) return;
  append_line(nlohmann::json{{"op", "ack"}, {"seq", seq}}.dump());
}

void DurableQueue::nack(std::uint64_t seq) {
  std::lock_guard lock(mutex_);
  auto node = in_flight_.extract(seq);
  if (!node.empty()) ready_.insert(std::move(node));
}

std::size_t DurableQueue::outstanding() const {
  std::lock_guard lock(mutex_);
  return ready_.size() + in_flight_.size();
}

std::size_t DurableQueue::ready() const {
  std::lock_guard lock(mutex_);
  return ready_.size();
}

std::uint64_t DurableQueue::published_total() const {
  std::lock_guard lock(mutex_);
  return next_seq_ - 1;
}

}  // namespace modgate
