#include "lpt/app/toml_lite.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lpt/errors.hpp"

namespace lpt::app::toml {

using nlohmann::ordered_json;

namespace {

class Parser {
 public:
  Parser(std::string_view text, std::string origin) : s_(text), origin_(std::move(origin)) {}

  ordered_json run() {
    ordered_json root = ordered_json::object();
    ordered_json* table = &root;
    while (true) {
      skip_blank();
      if (eof()) break;
      if (peek() == '[') {
        ++i_;
        skip_ws();
        std::string name = bare_key();
        skip_ws();
        expect(']');
        end_of_line();
        if (root.contains(name)) fail("duplicate section [" + name + "]");
        root[name] = ordered_json::object();
        table = &root[name];
        continue;
      }
      std::string key = bare_key();
      skip_ws();
      expect('=');
      skip_ws();
      ordered_json v = value();
      end_of_line();
      if (table->contains(key)) fail("duplicate key '" + key + "'");
      (*table)[key] = std::move(v);
    }
    return root;
  }

 private:
  bool eof() const { return i_ >= s_.size(); }
  char peek() const { return s_[i_]; }

  [[noreturn]] void fail(const std::string& what) const {
    std::size_t line = 1;
    for (std::size_t k = 0; k < i_ && k < s_.size(); ++k) line += s_[k] == '\n';
    throw ConfigError(origin_ + ":" + std::to_string(line) + ": " + what);
  }

  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++i_;
  }
  void skip_comment() {
    if (!eof() && peek() == '#')
      while (!eof() && peek() != '\n') ++i_;
  }
  // Whitespace, comments and newlines.
  void skip_blank() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (!eof() && (peek() == '\n' || peek() == '\r'))
        ++i_;
      else
        break;
    }
  }
  void end_of_line() {
    skip_ws();
    skip_comment();
    if (!eof() && peek() == '\r') ++i_;
    if (!eof() && peek() != '\n') fail("unexpected text after value");
  }
  void expect(char c) {
    if (eof() || peek() != c) fail(std::string("expected '") + c + "'");
    ++i_;
  }

  std::string bare_key() {
    std::string k;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-'))
      k += s_[i_++];
    if (k.empty()) fail("expected a key");
    if (!eof() && peek() == '.') fail("dotted keys are not supported");
    return k;
  }

  ordered_json value() {
    if (eof()) fail("missing value");
    const char c = peek();
    if (c == '"') return string();
    if (c == '[') return array();
    if (c == '{') fail("inline tables are not supported");
    std::string tok;
    while (!eof() && !std::isspace(static_cast<unsigned char>(peek())) && peek() != ',' &&
           peek() != ']' && peek() != '#')
      tok += s_[i_++];
    if (tok == "true") return true;
    if (tok == "false") return false;
    return number(tok);
  }

  ordered_json number(const std::string& tok) {
    std::string t;
    for (char ch : tok)
      if (ch != '_') t += ch;
    if (t.empty()) fail("missing value");
    const bool is_float = t.find_first_of(".eE") != std::string::npos || t == "inf" ||
                          t == "+inf" || t == "-inf" || t == "nan";
    try {
      std::size_t used = 0;
      if (is_float) {
        double d = std::stod(t, &used);
        if (used == t.size()) return d;
      } else {
        long long v = std::stoll(t, &used);
        if (used == t.size()) return v;
      }
    } catch (const std::exception&) {
    }
    fail("invalid value '" + tok + "'");
  }

  ordered_json string() {
    ++i_;
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      char c = s_[i_++];
      if (c == '"') break;
      if (c == '\\') {
        if (eof()) fail("unterminated string");
        char e = s_[i_++];
        switch (e) {
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
        continue;
      }
      out += c;
    }
    return out;
  }

  ordered_json array() {
    ++i_;
    ordered_json arr = ordered_json::array();
    while (true) {
      skip_blank();
      if (eof()) fail("unterminated array");
      if (peek() == ']') {
        ++i_;
        return arr;
      }
      arr.push_back(value());
      skip_blank();
      if (!eof() && peek() == ',') {
        ++i_;
        continue;
      }
      skip_blank();
      if (eof() || peek() != ']') fail("expected ',' or ']' in array");
    }
  }

  std::string_view s_;
  std::string origin_;
  std::size_t i_ = 0;
};

}  // namespace

ordered_json parse(std::string_view text, const std::string& origin) {
  return Parser(text, origin).run();
}

ordered_json parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string format_value(const ordered_json& v) {
  if (v.is_array()) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_value(v[i]);
    return out + "]";
  }
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
    if (std::isnan(d)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    std::string s = buf;
    if (d == std::trunc(d) && std::abs(d) < 1e15) {
      std::snprintf(buf, sizeof buf, "%.1f", d);
      return buf;
    }
    // Shortest representation that round-trips.
    for (int prec = 1; prec <= 17; ++prec) {
      std::snprintf(buf, sizeof buf, "%.*g", prec, d);
      if (std::stod(buf) == d) {
        s = buf;
        break;
      }
    }
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
  }
  if (v.is_string()) {
    std::string out = "\"";
    for (char c : v.get<std::string>()) {
      if (c == '"' || c == '\\') out += '\\';
      if (c == '\n') {
        out += "\\n";
        continue;
      }
      if (c == '\t') {
        out += "\\t";
        continue;
      }
      out += c;
    }
    return out + "\"";
  }
  return v.dump();
}

}  // namespace lpt::app::toml
