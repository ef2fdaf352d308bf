#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lpt/data/vocab.hpp"

namespace lpt::data {

struct PropertyRecord {
  TokenSequence x;
  /// Property vector of length M; absent for unannotated sequences.
  std::optional<std::vector<double>> y;
};

struct Corpus {
  std::vector<PropertyRecord> records;
  std::string path;

  std::size_t annotated() const;
};

/// Non-blank lines of a corpus file, in order.
std::vector<std::string> read_corpus_lines(const std::string& path);

/// Loads `corpus_path` under `vocab`. With a property file, attaches each
/// {"seq_index": i, "y": [...]} line to record i (the i-th non-blank line);
/// every y must have `objectives` finite entries.
Corpus load_corpus(const std::string& corpus_path, const Vocabulary& vocab, std::size_t max_len,
                   const std::string& properties_path = "", std::size_t objectives = 1);

/// Writes a property file in the format load_corpus reads.
void write_properties(const std::string& path, const std::vector<std::vector<double>>& ys);

}  // namespace lpt::data
