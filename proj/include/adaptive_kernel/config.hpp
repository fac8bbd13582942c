// Configuration loading: a flat TOML subset (primary) or JSON, plus
// key=value overrides and strict unknown-key rejection.
//
// The TOML subset covers what run configurations need: comments, [table]
// headers (dotted), and key = value lines whose values are strings,
// integers, floats, booleans, or one-level arrays of those.  Every parse
// error names the offending line.
#pragma once

#include "adaptive_kernel/common.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace adaptive_kernel {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] inline void toml_fail(int line, const std::string& what) {
  throw config_error("TOML parse error at line " + std::to_string(line) + ": " + what);
}

// Parses one scalar TOML value.
inline nlohmann::json toml_scalar(const std::string& raw, int line) {
  const std::string v = trim(raw);
  if (v.empty()) toml_fail(line, "empty value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') toml_fail(line, "unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        ++i;
        switch (v[i]) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: toml_fail(line, std::string("unsupported escape \\") + v[i]);
        }
      } else {
        out += v[i];
      }
    }
    return out;
  }
  if (v == "true") return true;
  if (v == "false") return false;
  // Integer if it parses fully without . / e; float otherwise.
  const bool looks_float = v.find_first_of(".eE") != std::string::npos &&
                           v.find_first_not_of("+-0123456789.eE") == std::string::npos;
  try {
    std::size_t used = 0;
    if (!looks_float) {
      const long long i = std::stoll(v, &used);
      if (used == v.size()) return i;
    }
    used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
    // fall through to the failure below
  }
  toml_fail(line, "cannot parse value '" + v + "'");
}

// Strips a trailing comment that is not inside a string literal.
inline std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

inline bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.')
      return false;
  return true;
}

// Writes value at a dotted path inside a JSON object tree.
inline void set_dotted(nlohmann::json& root, const std::string& dotted,
                       const nlohmann::json& value) {
  nlohmann::json* node = &root;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', pos);
    const std::string part = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (part.empty()) throw config_error("empty key segment in '" + dotted + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (!node->is_object() && !node->is_null())
      throw config_error("key '" + dotted + "' collides with a scalar");
    pos = dot + 1;
  }
}

// Parses a value position: a one-level array or a scalar.
inline nlohmann::json toml_value(const std::string& raw, int line) {
  const std::string v = trim(raw);
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') toml_fail(line, "unterminated array");
    nlohmann::json parsed = nlohmann::json::array();
    const std::string inner = v.substr(1, v.size() - 2);
    std::string cell;
    std::istringstream cells(inner);
    while (std::getline(cells, cell, ',')) {
      if (trim(cell).empty()) continue;
      parsed.push_back(toml_scalar(cell, line));
    }
    return parsed;
  }
  return toml_scalar(v, line);
}

}  // namespace detail

// Parses the TOML subset into a JSON object tree.
inline nlohmann::json parse_toml(const std::string& text) {
  nlohmann::json root = nlohmann::json::object();
  std::istringstream in(text);
  std::string raw;
  std::string table;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') detail::toml_fail(line_no, "unterminated table header");
      table = detail::trim(line.substr(1, line.size() - 2));
      if (!detail::valid_key(table)) detail::toml_fail(line_no, "invalid table name '" + table + "'");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) detail::toml_fail(line_no, "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (!detail::valid_key(key)) detail::toml_fail(line_no, "invalid key '" + key + "'");
    const std::string value = detail::trim(line.substr(eq + 1));
    const nlohmann::json parsed = detail::toml_value(value, line_no);
    const std::string dotted = table.empty() ? key : table + "." + key;
    detail::set_dotted(root, dotted, parsed);
  }
  return root;
}

// Loads a config file, dispatching on extension (.toml primary, .json accepted).
inline nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.extension() == ".json") {
    try {
      return nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
      throw config_error(std::string("JSON parse error: ") + e.what());
    }
  }
  return parse_toml(buf.str());
}

// Applies --set key=value overrides after the file parse.  Values use the
// TOML scalar syntax; anything unparsable is taken as a bare string.
inline void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw config_error("override must look like key=value, got '" + kv + "'");
    const std::string key = detail::trim(kv.substr(0, eq));
    const std::string value = detail::trim(kv.substr(eq + 1));
    if (!detail::valid_key(key)) throw config_error("invalid override key '" + key + "'");
    nlohmann::json parsed;
    try {
      parsed = detail::toml_value(value, 0);
    } catch (const config_error&) {
      parsed = value;  // bare string
    }
    detail::set_dotted(config, key, parsed);
  }
}

// ---------------------------------------------------------------------------
// Strict typed access.  Every key a command understands must be consumed
// through the reader; finalize() rejects anything left over, so a typo in a
// config never goes silently ignored.
// ---------------------------------------------------------------------------
class ConfigReader {
 public:
  explicit ConfigReader(const nlohmann::json& config) { flatten("", config); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    it->second.consumed = true;
    return convert<T>(key, it->second.value);
  }

  template <typename T>
  T require(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("missing required config key '" + key + "'");
    it->second.consumed = true;
    return convert<T>(key, it->second.value);
  }

  // Arrays stay whole during flattening; fetch one as a json array.
  nlohmann::json require_array(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("missing required config key '" + key + "'");
    if (!it->second.value.is_array())
      throw config_error("config key '" + key + "' must be an array");
    it->second.consumed = true;
    return it->second.value;
  }

  // Rejects unconsumed keys.
  void finalize() const {
    std::string unknown;
    for (const auto& [key, entry] : values_) {
      if (!entry.consumed) unknown += (unknown.empty() ? "" : ", ") + key;
    }
    if (!unknown.empty()) throw config_error("unknown config key(s): " + unknown);
  }

 private:
  struct Entry {
    nlohmann::json value;
    bool consumed = false;
  };
  std::map<std::string, Entry> values_;

  void flatten(const std::string& prefix, const nlohmann::json& node) {
    if (node.is_object()) {
      for (const auto& [k, v] : node.items())
        flatten(prefix.empty() ? k : prefix + "." + k, v);
    } else {
      values_[prefix] = Entry{node, false};
    }
  }

  template <typename T>
  static T convert(const std::string& key, const nlohmann::json& v) {
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception&) {
      throw config_error("config key '" + key + "' has the wrong type (value: " + v.dump() + ")");
    }
  }
};

}  // namespace adaptive_kernel
