#include "lpt/numerics/rng.hpp"

#include <cmath>
#include <numbers>

#include "lpt/errors.hpp"

namespace lpt {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Substream 0 is reserved for the bank's own streams.
constexpr std::uint64_t kDerivedOffset = 1;

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

const char* stream_name(StreamId id) {
  switch (id) {
    case StreamId::init: return "init";
    case StreamId::langevin: return "langevin";
    case StreamId::sampling: return "sampling";
    case StreamId::shuffle: return "shuffle";
  }
  return "unknown";
}

RngStream::RngStream(std::uint64_t seed, StreamId stream, std::uint64_t substream)
    : seed_(seed), stream_(stream), substream_(substream) {
  const std::uint64_t k = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream)));
  key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

std::array<std::uint32_t, 4> RngStream::next_block() {
  const std::uint64_t c = counter_++;
  return philox4x32_10({static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32),
                        static_cast<std::uint32_t>(substream_),
                        static_cast<std::uint32_t>(substream_ >> 32)},
                       key_);
}

std::uint64_t RngStream::next_u64() {
  const auto b = next_block();
  return (static_cast<std::uint64_t>(b[1]) << 32) | b[0];
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::normal() {
  const auto b = next_block();
  const std::uint64_t a = (static_cast<std::uint64_t>(b[1]) << 32) | b[0];
  const std::uint64_t c = (static_cast<std::uint64_t>(b[3]) << 32) | b[2];
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(c >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("RngStream::below(0)");
  const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

RngBank::RngBank(std::uint64_t seed) : seed_(seed) {
  for (auto id : {StreamId::init, StreamId::langevin, StreamId::sampling, StreamId::shuffle}) {
    streams_.emplace(id, RngStream(seed, id));
  }
}

RngStream& RngBank::stream(StreamId id) { return streams_.at(id); }

RngStream RngBank::derive(StreamId id, std::uint64_t substream) const {
  return RngStream(seed_, id, substream + kDerivedOffset);
}

std::map<std::string, std::uint64_t> RngBank::counters() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [id, s] : streams_) out[stream_name(id)] = s.counter();
  return out;
}

void RngBank::restore_counters(const std::map<std::string, std::uint64_t>& counters) {
  for (auto& [id, s] : streams_) {
    auto it = counters.find(stream_name(id));
    if (it == counters.end()) {
      throw CheckpointError(std::string("missing rng stream state '") + stream_name(id) + "'");
    }
    s.set_counter(it->second);
  }
}

}  // namespace lpt
