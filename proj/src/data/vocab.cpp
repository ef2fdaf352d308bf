#include "lpt/data/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "lpt/errors.hpp"

namespace lpt::data {

std::vector<std::string> split_tokens(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f'; };
  while (i < line.size()) {
    while (i < line.size() && space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !space(line[j])) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  std::sort(tokens_.begin(), tokens_.end());
  tokens_.erase(std::unique(tokens_.begin(), tokens_.end()), tokens_.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    index_.emplace(tokens_[i], static_cast<std::int32_t>(i) + kFirstToken);
}

Vocabulary Vocabulary::build(const std::string& corpus_path) {
  std::ifstream in(corpus_path);
  if (!in) throw DataError("cannot read corpus '" + corpus_path + "'");
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line))
    for (auto& tok : split_tokens(line)) seen.insert(std::move(tok));
  if (in.bad()) throw DataError("I/O error reading '" + corpus_path + "'");
  if (seen.empty()) throw DataError("corpus '" + corpus_path + "' contains no tokens");
  return Vocabulary(std::vector<std::string>(seen.begin(), seen.end()));
}

Vocabulary Vocabulary::from_map(const std::map<std::string, std::int32_t>& token_to_id) {
  std::vector<std::string> tokens;
  for (const auto& [tok, id] : token_to_id) tokens.push_back(tok);
  Vocabulary v(std::move(tokens));
  if (v.to_map() != token_to_id)
    throw DataError("vocabulary map is not the lexicographic assignment starting at 3");
  return v;
}

std::map<std::string, std::int32_t> Vocabulary::to_map() const {
  return {index_.begin(), index_.end()};
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw UnknownTokenError(std::string(token));
  return it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < kFirstToken || static_cast<std::size_t>(id) >= size())
    throw DataError("no token for id " + std::to_string(id));
  return tokens_[id - kFirstToken];
}

TokenSequence Vocabulary::encode(std::string_view text, std::size_t max_len) const {
  TokenSequence seq;
  for (const auto& tok : split_tokens(text)) seq.push_back(id(tok));
  if (seq.size() > max_len)
    throw DataError("sequence of " + std::to_string(seq.size()) + " tokens exceeds max_len " +
                    std::to_string(max_len));
  if (seq.size() < max_len) seq.push_back(kEos);
  return seq;
}

std::string Vocabulary::decode(std::span<const std::int32_t> seq) const {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] == kEos) {
      if (i + 1 != seq.size()) throw DataError("EOS before the end of the sequence");
      break;
    }
    if (!out.empty()) out += ' ';
    out += token(seq[i]);
  }
  return out;
}

std::span<const std::int32_t> content(std::span<const std::int32_t> seq) {
  if (!seq.empty() && seq.back() == kEos) return seq.first(seq.size() - 1);
  return seq;
}

void validate_sequence(std::span<const std::int32_t> seq, std::size_t vocab_size,
                       std::size_t max_len) {
  if (seq.size() > max_len)
    throw DataError("sequence length " + std::to_string(seq.size()) + " exceeds max_len " +
                    std::to_string(max_len));
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto id = seq[i];
    if (id == kEos && i + 1 == seq.size()) continue;
    if (id < kFirstToken || static_cast<std::size_t>(id) >= vocab_size)
      throw DataError("invalid token id " + std::to_string(id) + " at position " +
                      std::to_string(i));
  }
}

}  // namespace lpt::data
