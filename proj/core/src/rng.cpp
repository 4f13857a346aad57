#include "modgate/rng.hpp"

#include <limits>

namespace modgate {

Rng Rng::derive(std::uint64_t master, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6d6f6467u};
  std::uint64_t words[2];
  std::uint32_t raw[4];
  seq.generate(raw, raw + 4);
  words[0] = (static_cast<std::uint64_t>(raw[0]) << 32) | raw[1];
  words[1] = (static_cast<std::uint64_t>(raw[2]) << 32) | raw[3];
  return Rng(words[0] ^ (words[1] * 0x9E3779B97F4A7C15ull));
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(engine_());
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return lo + static_cast<std::int64_t>(v % span);
}

}  // namespace modgate
