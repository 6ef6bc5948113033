#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "weaklab/digest.hpp"
#include "weaklab/error.hpp"
#include "weaklab/gateway.hpp"
#include "weaklab/json_io.hpp"

namespace weaklab {

// ---------------------------------------------------------------------------
// Minimal TOML subset, enough for flat run configs: [section] headers,
// `key = value` with basic strings, integers, floats, booleans, and
// single-line arrays of those. No dotted keys, no multi-line strings, no
// nested tables. (No TOML library ships in this environment.)
// ---------------------------------------------------------------------------

struct TomlValue;
using TomlArray = std::vector<TomlValue>;

struct TomlValue {
  std::variant<std::string, std::int64_t, double, bool, TomlArray> value;

  const std::string& as_string() const {
    if (auto* s = std::get_if<std::string>(&value)) return *s;
    throw ConfigError("expected a string value");
  }
  std::int64_t as_int() const {
    if (auto* i = std::get_if<std::int64_t>(&value)) return *i;
    throw ConfigError("expected an integer value");
  }
  double as_double() const {
    if (auto* d = std::get_if<double>(&value)) return *d;
    if (auto* i = std::get_if<std::int64_t>(&value)) return static_cast<double>(*i);
    throw ConfigError("expected a numeric value");
  }
  bool as_bool() const {
    if (auto* b = std::get_if<bool>(&value)) return *b;
    throw ConfigError("expected a boolean value");
  }
  const TomlArray& as_array() const {
    if (auto* a = std::get_if<TomlArray>(&value)) return *a;
    throw ConfigError("expected an array value");
  }
};

using TomlSection = std::map<std::string, TomlValue>;
using TomlTable = std::map<std::string, TomlSection>;

namespace detail {

inline std::string_view toml_trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::string parse_toml_string(std::string_view raw, std::size_t line_no) {
  if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"')
    throw ParseError("unterminated string", line_no);
  std::string out;
  for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
    if (raw[i] != '\\') {
      out += raw[i];
      continue;
    }
    if (i + 2 >= raw.size()) throw ParseError("dangling escape", line_no);
    ++i;
    switch (raw[i]) {
      case '"': out += '"'; break;
      case '\\': out += '\\'; break;
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case 'r': out += '\r'; break;
      default: throw ParseError(std::string("unsupported escape \\") + raw[i], line_no);
    }
  }
  return out;
}

inline TomlValue parse_toml_scalar(std::string_view raw, std::size_t line_no) {
  raw = toml_trim(raw);
  if (raw.empty()) throw ParseError("missing value", line_no);
  if (raw.front() == '"') return TomlValue{parse_toml_string(raw, line_no)};
  if (raw == "true") return TomlValue{true};
  if (raw == "false") return TomlValue{false};
  const std::string s(raw);
  if (s.find_first_of(".eE") == std::string::npos) {
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (errno == 0 && end && *end == '\0') return TomlValue{static_cast<std::int64_t>(v)};
  }
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(s.c_str(), &end);
  if (errno == 0 && end && *end == '\0') return TomlValue{d};
  throw ParseError("cannot parse value '" + s + "'", line_no);
}

inline TomlValue parse_toml_value(std::string_view raw, std::size_t line_no) {
  raw = toml_trim(raw);
  if (!raw.empty() && raw.front() == '[') {
    if (raw.back() != ']') throw ParseError("unterminated array", line_no);
    TomlArray items;
    std::string_view body = raw.substr(1, raw.size() - 2);
    std::size_t start = 0;
    bool in_string = false;
    for (std::size_t i = 0; i <= body.size(); ++i) {
      if (i < body.size() && body[i] == '"' && (i == 0 || body[i - 1] != '\\'))
        in_string = !in_string;
      if (i == body.size() || (body[i] == ',' && !in_string)) {
        const auto piece = toml_trim(body.substr(start, i - start));
        if (!piece.empty()) items.push_back(parse_toml_scalar(piece, line_no));
        start = i + 1;
      }
    }
    return TomlValue{std::move(items)};
  }
  return parse_toml_scalar(raw, line_no);
}

/// Strip a trailing comment that is not inside a quoted string.
inline std::string_view strip_toml_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

}  // namespace detail

inline TomlTable parse_toml(std::string_view text) {
  TomlTable table;
  std::string section;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    auto line = detail::toml_trim(detail::strip_toml_comment(lines[i]));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", line_no);
      section = std::string(detail::toml_trim(line.substr(1, line.size() - 2)));
      if (section.empty()) throw ParseError("empty section name", line_no);
      table[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
    const auto key = std::string(detail::toml_trim(line.substr(0, eq)));
    if (key.empty()) throw ParseError("empty key", line_no);
    table[section][key] = detail::parse_toml_value(line.substr(eq + 1), line_no);
  }
  return table;
}

inline std::string serialize_toml_value(const TomlValue& v) {
  struct Visitor {
    std::string operator()(const std::string& s) const {
      std::string out = "\"";
      for (char c : s) {
        switch (c) {
          case '"': out += "\\\""; break;
          case '\\': out += "\\\\"; break;
          case '\n': out += "\\n"; break;
          case '\t': out += "\\t"; break;
          case '\r': out += "\\r"; break;
          default: out += c;
        }
      }
      return out + "\"";
    }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const {
      std::ostringstream os;
      os.precision(17);
      os << d;
      return os.str();
    }
    std::string operator()(bool b) const { return b ? "true" : "false"; }
    std::string operator()(const TomlArray& a) const {
      std::string out = "[";
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (i) out += ", ";
        out += std::visit(Visitor{}, a[i].value);
      }
      return out + "]";
    }
  };
  return std::visit(Visitor{}, v.value);
}

/// Canonical form: sections and keys sorted, one key per line.
inline std::string serialize_toml(const TomlTable& table) {
  std::string out;
  for (const auto& [section, keys] : table) {
    out += "[" + section + "]\n";
    for (const auto& [key, value] : keys)
      out += key + " = " + serialize_toml_value(value) + "\n";
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run configuration.
// ---------------------------------------------------------------------------

struct MockSpec {
  enum class Mode { echo_gold, fixed, file_scripted, fault_inject };
  Mode mode = Mode::fixed;
  std::string fixed_text = "[]";
  std::filesystem::path script_path;
  double fault_rate = 0;
  std::uint64_t seed = 0;

  std::string spec_string() const {
    switch (mode) {
      case Mode::echo_gold: return "echo-gold";
      case Mode::fixed: return "fixed:" + fixed_text;
      case Mode::file_scripted: return "file:" + script_path.string();
      case Mode::fault_inject: {
        std::ostringstream os;
        os << "fault:" << fault_rate;
        return os.str();
      }
    }
    return "fixed:[]";
  }
};

inline MockSpec parse_mock_spec(std::string_view spec, std::uint64_t seed) {
  MockSpec m;
  m.seed = seed;
  if (spec == "echo-gold" || spec == "echo_gold") {
    m.mode = MockSpec::Mode::echo_gold;
    return m;
  }
  if (spec.rfind("fixed:", 0) == 0) {
    m.mode = MockSpec::Mode::fixed;
    m.fixed_text = std::string(spec.substr(6));
    return m;
  }
  if (spec.rfind("file:", 0) == 0) {
    m.mode = MockSpec::Mode::file_scripted;
    m.script_path = std::string(spec.substr(5));
    return m;
  }
  if (spec.rfind("fault:", 0) == 0) {
    m.mode = MockSpec::Mode::fault_inject;
    m.fault_rate = std::strtod(std::string(spec.substr(6)).c_str(), nullptr);
    if (m.fault_rate < 0 || m.fault_rate > 1)
      throw ConfigError("mock fault rate must lie in [0, 1]");
    return m;
  }
  throw ConfigError("unknown mock spec '" + std::string(spec) +
                    "' (expected echo-gold, fixed:<text>, file:<path>, fault:<rate>)");
}

struct GatewaySettings {
  std::optional<std::string> url;
  std::optional<MockSpec> mock;
  std::string model_id = "llama2-13b";
  std::size_t parallelism = 4;
  std::uint32_t max_new_tokens = 128;
  std::uint32_t top_k = 1;
  double timeout_seconds = 120.0;
  RetryPolicy retry;
};

struct CostSettings {
  std::uint64_t total_params = 13015864320ull;
  std::uint64_t n_layer = 40;
  std::uint64_t n_ctx = 400;
  std::uint64_t d_attn = 4096;
  std::uint64_t n_tokens_out = 128;
  std::uint64_t target_notes = 59652;
  double encoder_flops_per_sentence = 4.4e10;
  std::vector<std::uint64_t> sample_note_counts;  // empty -> evenly spaced default
};

struct RunConfig {
  std::string benchmark_id = "2018";
  std::filesystem::path train_dir;
  std::optional<std::filesystem::path> test_dir;
  std::size_t n_s = 3;
  std::uint64_t seed = 0;
  std::size_t few_shot_k = 8;
  bool few_shot_require_entities = false;
  GatewaySettings gateway;
  std::filesystem::path vocabulary;
  bool include_failed_as_empty = false;
  CostSettings cost;
};

namespace detail {

inline const TomlValue* toml_find(const TomlTable& t, const std::string& section,
                                  const std::string& key) {
  const auto s = t.find(section);
  if (s == t.end()) return nullptr;
  const auto k = s->second.find(key);
  return k == s->second.end() ? nullptr : &k->second;
}

}  // namespace detail

inline RunConfig run_config_from_toml(const TomlTable& t) {
  using detail::toml_find;
  RunConfig cfg;
  try {
    if (auto* v = toml_find(t, "task", "benchmark")) cfg.benchmark_id = v->as_string();
    if (auto* v = toml_find(t, "corpus", "train")) cfg.train_dir = v->as_string();
    if (auto* v = toml_find(t, "corpus", "test")) cfg.test_dir = v->as_string();
    if (auto* v = toml_find(t, "selection", "n_s"))
      cfg.n_s = static_cast<std::size_t>(v->as_int());
    if (auto* v = toml_find(t, "selection", "seed"))
      cfg.seed = static_cast<std::uint64_t>(v->as_int());
    if (auto* v = toml_find(t, "gateway", "few_shot_k"))
      cfg.few_shot_k = static_cast<std::size_t>(v->as_int());
    if (auto* v = toml_find(t, "gateway", "few_shot_require_entities"))
      cfg.few_shot_require_entities = v->as_bool();
    if (auto* v = toml_find(t, "gateway", "url")) cfg.gateway.url = v->as_string();
    if (auto* v = toml_find(t, "gateway", "mock"))
      cfg.gateway.mock = parse_mock_spec(v->as_string(), cfg.seed);
    if (auto* v = toml_find(t, "gateway", "model_id")) cfg.gateway.model_id = v->as_string();
    if (auto* v = toml_find(t, "gateway", "parallelism"))
      cfg.gateway.parallelism = static_cast<std::size_t>(v->as_int());
    if (auto* v = toml_find(t, "gateway", "max_new_tokens"))
      cfg.gateway.max_new_tokens = static_cast<std::uint32_t>(v->as_int());
    if (auto* v = toml_find(t, "gateway", "top_k"))
      cfg.gateway.top_k = static_cast<std::uint32_t>(v->as_int());
    if (auto* v = toml_find(t, "gateway", "timeout_seconds"))
      cfg.gateway.timeout_seconds = v->as_double();
    if (auto* v = toml_find(t, "gateway", "retry_base_seconds"))
      cfg.gateway.retry.base_seconds = v->as_double();
    if (auto* v = toml_find(t, "gateway", "retry_factor"))
      cfg.gateway.retry.factor = v->as_double();
    if (auto* v = toml_find(t, "gateway", "retry_max_attempts"))
      cfg.gateway.retry.max_attempts = static_cast<int>(v->as_int());
    if (auto* v = toml_find(t, "export", "vocabulary")) cfg.vocabulary = v->as_string();
    if (auto* v = toml_find(t, "export", "include_failed_as_empty"))
      cfg.include_failed_as_empty = v->as_bool();
    if (auto* v = toml_find(t, "cost", "total_params"))
      cfg.cost.total_params = static_cast<std::uint64_t>(v->as_int());
    if (auto* v = toml_find(t, "cost", "n_layer"))
      cfg.cost.n_layer = static_cast<std::uint64_t>(v->as_int());
    if (auto* v = toml_find(t, "cost", "n_ctx"))
      cfg.cost.n_ctx = static_cast<std::uint64_t>(v->as_int());
    if (auto* v = toml_find(t, "cost", "d_attn"))
      cfg.cost.d_attn = static_cast<std::uint64_t>(v->as_int());
    if (auto* v = toml_find(t, "cost", "n_tokens_out"))
      cfg.cost.n_tokens_out = static_cast<std::uint64_t>(v->as_int());
    if (auto* v = toml_find(t, "cost", "target_notes"))
      cfg.cost.target_notes = static_cast<std::uint64_t>(v->as_int());
    if (auto* v = toml_find(t, "cost", "encoder_flops_per_sentence"))
      cfg.cost.encoder_flops_per_sentence = v->as_double();
    if (auto* v = toml_find(t, "cost", "sample_note_counts")) {
      for (const TomlValue& item : v->as_array())
        cfg.cost.sample_note_counts.push_back(static_cast<std::uint64_t>(item.as_int()));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  // Mock specs are parsed before the seed when `mock` precedes `seed` in the
  // file; re-bind so the mock always sees the final seed.
  if (cfg.gateway.mock) cfg.gateway.mock->seed = cfg.seed;
  return cfg;
}

/// Environment override: LLM_GATEWAY_URL beats both config backends.
inline void apply_env_overrides(RunConfig& cfg) {
  if (const char* url = std::getenv("LLM_GATEWAY_URL"); url && *url) {
    cfg.gateway.url = std::string(url);
    cfg.gateway.mock.reset();
  }
}

inline void validate_run_config(const RunConfig& cfg) {
  if (cfg.n_s < 1) throw ConfigError("n_s must be >= 1");
  if (cfg.gateway.parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (cfg.gateway.max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
  if (cfg.gateway.top_k < 1) throw ConfigError("top_k must be >= 1");
  if (cfg.train_dir.empty()) throw ConfigError("corpus.train is required");
  if (cfg.vocabulary.empty()) throw ConfigError("export.vocabulary is required");
  if (cfg.gateway.retry.max_attempts < 1) throw ConfigError("retry_max_attempts must be >= 1");
  const bool has_url = cfg.gateway.url.has_value();
  const bool has_mock = cfg.gateway.mock.has_value();
  if (has_url == has_mock)
    throw ConfigError("exactly one gateway backend must be configured (url or mock)");
  builtin_schema(cfg.benchmark_id);  // throws on unknown ids
}

inline TomlTable run_config_to_toml(const RunConfig& cfg) {
  TomlTable t;
  t["task"]["benchmark"] = TomlValue{cfg.benchmark_id};
  t["corpus"]["train"] = TomlValue{cfg.train_dir.string()};
  if (cfg.test_dir) t["corpus"]["test"] = TomlValue{cfg.test_dir->string()};
  t["selection"]["n_s"] = TomlValue{static_cast<std::int64_t>(cfg.n_s)};
  t["selection"]["seed"] = TomlValue{static_cast<std::int64_t>(cfg.seed)};
  t["gateway"]["few_shot_k"] = TomlValue{static_cast<std::int64_t>(cfg.few_shot_k)};
  t["gateway"]["few_shot_require_entities"] = TomlValue{cfg.few_shot_require_entities};
  if (cfg.gateway.url) t["gateway"]["url"] = TomlValue{*cfg.gateway.url};
  if (cfg.gateway.mock) t["gateway"]["mock"] = TomlValue{cfg.gateway.mock->spec_string()};
  t["gateway"]["model_id"] = TomlValue{cfg.gateway.model_id};
  t["gateway"]["parallelism"] = TomlValue{static_cast<std::int64_t>(cfg.gateway.parallelism)};
  t["gateway"]["max_new_tokens"] =
      TomlValue{static_cast<std::int64_t>(cfg.gateway.max_new_tokens)};
  t["gateway"]["top_k"] = TomlValue{static_cast<std::int64_t>(cfg.gateway.top_k)};
  t["gateway"]["timeout_seconds"] = TomlValue{cfg.gateway.timeout_seconds};
  t["gateway"]["retry_base_seconds"] = TomlValue{cfg.gateway.retry.base_seconds};
  t["gateway"]["retry_factor"] = TomlValue{cfg.gateway.retry.factor};
  t["gateway"]["retry_max_attempts"] =
      TomlValue{static_cast<std::int64_t>(cfg.gateway.retry.max_attempts)};
  t["export"]["vocabulary"] = TomlValue{cfg.vocabulary.string()};
  t["export"]["include_failed_as_empty"] = TomlValue{cfg.include_failed_as_empty};
  t["cost"]["total_params"] = TomlValue{static_cast<std::int64_t>(cfg.cost.total_params)};
  t["cost"]["n_layer"] = TomlValue{static_cast<std::int64_t>(cfg.cost.n_layer)};
  t["cost"]["n_ctx"] = TomlValue{static_cast<std::int64_t>(cfg.cost.n_ctx)};
  t["cost"]["d_attn"] = TomlValue{static_cast<std::int64_t>(cfg.cost.d_attn)};
  t["cost"]["n_tokens_out"] = TomlValue{static_cast<std::int64_t>(cfg.cost.n_tokens_out)};
  t["cost"]["target_notes"] = TomlValue{static_cast<std::int64_t>(cfg.cost.target_notes)};
  t["cost"]["encoder_flops_per_sentence"] = TomlValue{cfg.cost.encoder_flops_per_sentence};
  if (!cfg.cost.sample_note_counts.empty()) {
    TomlArray arr;
    for (auto k : cfg.cost.sample_note_counts)
      arr.push_back(TomlValue{static_cast<std::int64_t>(k)});
    t["cost"]["sample_note_counts"] = TomlValue{std::move(arr)};
  }
  return t;
}

inline std::string config_snapshot(const RunConfig& cfg) {
  return serialize_toml(run_config_to_toml(cfg));
}

}  // namespace weaklab
