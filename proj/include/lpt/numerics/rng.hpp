#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

namespace lpt {

/// Philox4x32-10 block function (Salmon et al., Random123).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

/// Named independent random streams. Parameter initialisation and fresh chain
/// starts draw from `init`; Langevin noise from `langevin`; ancestral decoding
/// from `sampling`; epoch shuffles and donor picks from `shuffle`.
enum class StreamId : std::uint32_t { init = 1, langevin = 2, sampling = 3, shuffle = 4 };

const char* stream_name(StreamId id);

/// Counter-based stream: output block i is Philox(key(seed, stream), (i, substream)).
/// The entire state is the block counter, so streams serialise exactly.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamId stream, std::uint64_t substream = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Standard normal via Box-Muller; consumes one block.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }
  std::uint64_t seed() const { return seed_; }
  StreamId stream() const { return stream_; }
  std::uint64_t substream() const { return substream_; }

 private:
  std::array<std::uint32_t, 4> next_block();

  std::uint64_t seed_;
  StreamId stream_;
  std::uint64_t substream_;
  std::array<std::uint32_t, 2> key_;
  std::uint64_t counter_ = 0;
};

/// The four named streams of one run.
class RngBank {
 public:
  explicit RngBank(std::uint64_t seed);

  RngStream& stream(StreamId id);
  std::uint64_t seed() const { return seed_; }

  /// Fresh stream keyed by (seed, id, substream); independent of the bank's own streams.
  RngStream derive(StreamId id, std::uint64_t substream) const;

  std::map<std::string, std::uint64_t> counters() const;
  void restore_counters(const std::map<std::string, std::uint64_t>& counters);

 private:
  std::uint64_t seed_;
  std::map<StreamId, RngStream> streams_;
};

}  // namespace lpt
