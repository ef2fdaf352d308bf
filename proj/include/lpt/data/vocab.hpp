#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lpt::data {

inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kBos = 1;
inline constexpr std::int32_t kEos = 2;
inline constexpr std::int32_t kFirstToken = 3;

/// Token ids of one sequence, without BOS. Ends in EOS unless the sequence
/// filled all max_len positions, in which case it is truncated and has none.
using TokenSequence = std::vector<std::int32_t>;

/// Splits a corpus line on whitespace.
std::vector<std::string> split_tokens(std::string_view line);

class Vocabulary {
 public:
  Vocabulary() = default;
  /// Ids are assigned in lexicographic token order starting at kFirstToken.
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Every token appearing in the non-blank lines of `corpus_path`.
  static Vocabulary build(const std::string& corpus_path);
  static Vocabulary from_map(const std::map<std::string, std::int32_t>& token_to_id);

  /// Total id count including the reserved ids.
  std::size_t size() const { return tokens_.size() + kFirstToken; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::map<std::string, std::int32_t> to_map() const;

  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;

  /// Encodes a whitespace-separated line. Appends EOS when it fits in
  /// `max_len`; a line of exactly `max_len` tokens is stored truncated.
  TokenSequence encode(std::string_view text, std::size_t max_len) const;
  /// Inverse of encode. Stops at EOS; PAD, BOS or interior EOS are errors.
  std::string decode(std::span<const std::int32_t> seq) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::int32_t, std::less<>> index_;
};

/// Content tokens of `seq` (everything before EOS).
std::span<const std::int32_t> content(std::span<const std::int32_t> seq);

/// Checks the sequence invariants: ids in range, no reserved id other than a
/// terminal EOS, and length at most `max_len`.
void validate_sequence(std::span<const std::int32_t> seq, std::size_t vocab_size,
                       std::size_t max_len);

}  // namespace lpt::data
