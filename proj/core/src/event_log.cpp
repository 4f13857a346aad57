#include "modgate/event_log.hpp"

#include <fstream>

#include "modgate/error.hpp"

namespace modgate {

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  // Drop a torn tail so later appends start on a fresh line.
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto last_nl = content.find_last_of('\n');
    const std::uintmax_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (keep != content.size()) std::filesystem::resize_file(path_, keep);
  }
  file_ = std::fopen(path_.string().c_str(), "ab");
  if (file_ == nullptr) throw Error(ErrorKind::IoError, "cannot open event log " + path_.string());
}

EventLog::~EventLog() {
  if (file_ != nullptr) std::fclose(file_);
}

void EventLog::append(const nlohmann::json& event) {
  const std::string line = event.dump() + "\n";
  std::lock_guard lock(mutex_);
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0) {
    throw Error(ErrorKind::IoError, "write failed on event log " + path_.string());
  }
}

std::vector<nlohmann::json> EventLog::read(const std::filesystem::path& path) {
  std::vector<nlohmann::json> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (in.eof()) break;
    if (line.empty()) continue;
    auto rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw Error(ErrorKind::DecodeError, "corrupt event log " + path.string());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace modgate
