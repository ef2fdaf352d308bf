#include "lpt/data/corpus.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "lpt/errors.hpp"

namespace lpt::data {

std::size_t Corpus::annotated() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.y.has_value();
  return n;
}

std::vector<std::string> read_corpus_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!split_tokens(line).empty()) lines.push_back(line);
  if (in.bad()) throw DataError("I/O error reading '" + path + "'");
  return lines;
}

Corpus load_corpus(const std::string& corpus_path, const Vocabulary& vocab, std::size_t max_len,
                   const std::string& properties_path, std::size_t objectives) {
  Corpus corpus;
  corpus.path = corpus_path;
  const auto lines = read_corpus_lines(corpus_path);
  if (lines.empty()) throw DataError("corpus '" + corpus_path + "' is empty");
  corpus.records.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      corpus.records.push_back({vocab.encode(lines[i], max_len), std::nullopt});
    } catch (const UnknownTokenError&) {
      throw;
    } catch (const DataError& e) {
      throw DataError(corpus_path + " record " + std::to_string(i) + ": " + e.what());
    }
  }
  if (properties_path.empty()) return corpus;

  std::ifstream in(properties_path);
  if (!in) throw DataError("cannot read property file '" + properties_path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (split_tokens(line).empty()) continue;
    const std::string where = properties_path + ":" + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw DataError(where + "malformed JSON");
    }
    if (!j.is_object() || !j.contains("seq_index") || !j.contains("y") ||
        !j["seq_index"].is_number_integer() || !j["y"].is_array())
      throw DataError(where + "expected {\"seq_index\": int, \"y\": [floats]}");
    const auto idx = j["seq_index"].get<long long>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= corpus.records.size())
      throw DataError(where + "seq_index " + std::to_string(idx) + " out of range");
    std::vector<double> y;
    for (const auto& v : j["y"]) {
      if (!v.is_number()) throw DataError(where + "non-numeric y");
      y.push_back(v.get<double>());
      if (!std::isfinite(y.back())) throw DataError(where + "non-finite y");
    }
    if (y.size() != objectives)
      throw DataError(where + "y has " + std::to_string(y.size()) + " entries, expected " +
                      std::to_string(objectives));
    auto& rec = corpus.records[idx];
    if (rec.y) throw DataError(where + "duplicate seq_index " + std::to_string(idx));
    rec.y = std::move(y);
  }
  return corpus;
}

void write_properties(const std::string& path, const std::vector<std::vector<double>>& ys) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (std::size_t i = 0; i < ys.size(); ++i)
    out << nlohmann::json{{"seq_index", i}, {"y", ys[i]}}.dump() << '\n';
}

}  // namespace lpt::data
