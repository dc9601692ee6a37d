#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "atx/numerics/tensor.hpp"

namespace atx::cli {

using json = nlohmann::json;

/// Reader for the flat TOML subset used by run configs: `[table]` headers,
/// `key = value` pairs with strings, integers, floats and booleans, and `#`
/// comments. Arrays, inline tables and dotted keys are rejected. The result
/// is a JSON object of tables; keys before any header land in "".
class FlatToml {
 public:
  static json parse(std::string_view text, const std::string& origin = "<toml>") {
    FlatToml p(origin);
    std::size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
      const std::size_t nl = std::min(text.find('\n', pos), text.size());
      ++line_no;
      p.line(text.substr(pos, nl - pos), line_no);
      pos = nl + 1;
    }
    return p.root_;
  }

  static json parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
  }

 private:
  explicit FlatToml(std::string origin) : origin_(std::move(origin)), root_(json::object()) {
    root_[""] = json::object();
  }

  [[noreturn]] void fail(std::size_t line_no, const std::string& what) const {
    throw InputError(origin_ + ":" + std::to_string(line_no) + ": " + what);
  }

  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static bool bare_key(std::string_view k) {
    if (k.empty()) return false;
    for (char c : k)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
  }

  void line(std::string_view raw, std::size_t n) {
    std::string_view s = trim(raw);
    if (s.empty() || s.front() == '#') return;
    if (s.front() == '[') {
      const auto close = s.find(']');
      if (close == std::string_view::npos) fail(n, "unterminated table header");
      const std::string_view rest = trim(s.substr(close + 1));
      if (!rest.empty() && rest.front() != '#') fail(n, "unexpected text after table header");
      const std::string name(trim(s.substr(1, close - 1)));
      if (!bare_key(name)) fail(n, "table name '" + name + "' is not a bare key (nested tables are unsupported)");
      if (root_.contains(name) && !root_[name].empty()) fail(n, "duplicate table [" + name + "]");
      root_[name] = json::object();
      table_ = name;
      return;
    }
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) fail(n, "expected key = value");
    const std::string key(trim(s.substr(0, eq)));
    if (!bare_key(key)) fail(n, "key '" + key + "' is not a bare key");
    json& table = root_[table_];
    if (table.contains(key)) fail(n, "duplicate key '" + key + "'");
    table[key] = value(trim(s.substr(eq + 1)), n);
  }

  json value(std::string_view v, std::size_t n) const {
    if (v.empty()) fail(n, "missing value");
    if (v.front() == '"' || v.front() == '\'') return string_value(v, n);
    const auto hash = v.find('#');
    if (hash != std::string_view::npos) v = trim(v.substr(0, hash));
    if (v.empty()) fail(n, "missing value");
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '[' || v.front() == '{') fail(n, "arrays and inline tables are unsupported");

    std::string digits;
    for (char c : v)
      if (c != '_') digits += c;
    const bool is_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" || digits == "nan" ||
                          digits == "+inf" || digits == "-inf" || digits == "+nan" || digits == "-nan";
    if (!is_float) {
      const char* b = digits.data() + (digits.front() == '+' ? 1 : 0);
      const char* e = digits.data() + digits.size();
      if (digits.front() == '-') {
        std::int64_t x = 0;
        auto [p, ec] = std::from_chars(b, e, x);
        if (ec == std::errc() && p == e) return x;
      } else {
        std::uint64_t x = 0;
        auto [p, ec] = std::from_chars(b, e, x);
        if (ec == std::errc() && p == e) return x;
      }
      fail(n, "invalid value '" + std::string(v) + "'");
    }
    char* end = nullptr;
    const double d = std::strtod(digits.c_str(), &end);
    if (end != digits.c_str() + digits.size()) fail(n, "invalid value '" + std::string(v) + "'");
    if (!std::isfinite(d)) fail(n, "non-finite number '" + std::string(v) + "'");
    return d;
  }

  json string_value(std::string_view v, std::size_t n) const {
    const char q = v.front();
    std::string out;
    std::size_t i = 1;
    for (; i < v.size() && v[i] != q; ++i) {
      if (q == '"' && v[i] == '\\') {
        if (++i >= v.size()) break;
        switch (v[i]) {
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          default: fail(n, std::string("unsupported escape \\") + v[i]);
        }
      } else {
        out += v[i];
      }
    }
    if (i >= v.size()) fail(n, "unterminated string");
    const std::string_view rest = trim(v.substr(i + 1));
    if (!rest.empty() && rest.front() != '#') fail(n, "unexpected text after string");
    return out;
  }

  std::string origin_;
  json root_;
  std::string table_;
};

}  // namespace atx::cli
