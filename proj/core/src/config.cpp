#include "fedasync/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace fedasync::config {

namespace {

bool is_bare_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '-';
}

class Cursor {
 public:
  Cursor(std::string_view text, std::size_t line) : s_(text), line_(line) {}

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  bool at_end() {
    skip_ws();
    return pos_ >= s_.size() || s_[pos_] == '#';
  }
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line_, what); }

  Value value() {
    skip_ws();
    if (peek() == '[') return array();
    return std::visit([](auto&& v) -> Value { return v; }, scalar());
  }

 private:
  std::vector<Scalar> array() {
    ++pos_;  // '['
    std::vector<Scalar> out;
    skip_ws();
    if (peek() == ']') {
      ++pos_;
      return out;
    }
    while (true) {
      out.push_back(scalar());
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        skip_ws();
        if (peek() == ']') {
          ++pos_;
          return out;
        }
        continue;
      }
      if (peek() == ']') {
        ++pos_;
        return out;
      }
      fail("expected ',' or ']' in array");
    }
  }

  Scalar scalar() {
    skip_ws();
    const char c = peek();
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    std::size_t end = pos_;
    while (end < s_.size() && s_[end] != ',' && s_[end] != ']' && s_[end] != '#' && s_[end] != ' ' &&
           s_[end] != '\t') {
      ++end;
    }
    const std::string_view tok = s_.substr(pos_, end - pos_);
    if (tok.empty()) fail("missing value");
    pos_ = end;
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string digits;
    for (std::size_t i = 0; i < tok.size(); ++i) {
      if (tok[i] == '_') {
        if (i == 0 || i + 1 == tok.size() || !std::isdigit(static_cast<unsigned char>(tok[i - 1])) ||
            !std::isdigit(static_cast<unsigned char>(tok[i + 1]))) {
          fail("misplaced '_' in number '" + std::string(tok) + "'");
        }
        continue;
      }
      digits += tok[i];
    }
    std::string_view num = digits;
    if (!num.empty() && num.front() == '+') num.remove_prefix(1);
    const bool is_float = num.find_first_of(".eE") != std::string_view::npos || num == "inf" || num == "-inf" ||
                          num == "nan" || num == "-nan";
    if (!is_float) {
      std::int64_t v = 0;
      const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
      if (ec == std::errc() && ptr == num.data() + num.size()) return v;
    } else {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
      if (ec == std::errc() && ptr == num.data() + num.size()) return v;
    }
    fail("invalid value '" + std::string(tok) + "'");
  }

  std::string basic_string() {
    ++pos_;
    std::string out;
    while (pos_ < s_.size()) {
      const char c = s_[pos_++];
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (pos_ >= s_.size()) break;
      const char e = s_[pos_++];
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(std::string("unsupported escape '\\") + e + "'");
      }
    }
    fail("unterminated string");
  }

  std::string literal_string() {
    ++pos_;
    const auto end = s_.find('\'', pos_);
    if (end == std::string_view::npos) fail("unterminated string");
    std::string out(s_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return out;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// ---- typed accessors --------------------------------------------------------

std::string type_name(const Value& v) {
  static constexpr const char* names[] = {"bool", "integer", "float", "string", "array"};
  return names[v.index()];
}

[[noreturn]] void wrong_type(const std::string& key, const Value& v, const char* want) {
  throw ConfigError(key, std::string("expected ") + want + ", got " + type_name(v));
}

double to_double(const std::string& key, const Scalar& s) {
  if (const auto* d = std::get_if<double>(&s)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&s)) return static_cast<double>(*i);
  throw ConfigError(key, "expected a number");
}

double as_double(const std::string& key, const Value& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  wrong_type(key, v, "a number");
}

std::int64_t as_int(const std::string& key, const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  wrong_type(key, v, "an integer");
}

std::size_t as_count(const std::string& key, const Value& v) {
  const std::int64_t i = as_int(key, v);
  if (i < 0) throw ConfigError(key, "must be >= 0");
  return static_cast<std::size_t>(i);
}

int as_small_int(const std::string& key, const Value& v) {
  const std::int64_t i = as_int(key, v);
  if (i < -1000000000 || i > 1000000000) throw ConfigError(key, "out of range");
  return static_cast<int>(i);
}

bool as_bool(const std::string& key, const Value& v) {
  if (const auto* b = std::get_if<bool>(&v)) return *b;
  wrong_type(key, v, "a boolean");
}

std::string as_string(const std::string& key, const Value& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  wrong_type(key, v, "a string");
}

const std::vector<Scalar>& as_array(const std::string& key, const Value& v) {
  if (const auto* a = std::get_if<std::vector<Scalar>>(&v)) return *a;
  wrong_type(key, v, "an array");
}

std::vector<double> as_double_list(const std::string& key, const Value& v) {
  std::vector<double> out;
  for (const auto& s : as_array(key, v)) out.push_back(to_double(key, s));
  return out;
}

std::vector<std::int64_t> as_int_list(const std::string& key, const Value& v) {
  std::vector<std::int64_t> out;
  for (const auto& s : as_array(key, v)) {
    const auto* i = std::get_if<std::int64_t>(&s);
    if (!i) throw ConfigError(key, "expected an array of integers");
    out.push_back(*i);
  }
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const Value&)>;

std::map<std::string, Setter> setters(const std::filesystem::path& base) {
  std::map<std::string, Setter> m;
  m["mode"] = [](auto& c, const auto& k, const auto& v) {
    try {
      c.mode = parse_mode(as_string(k, v));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(k, e.what());
    }
  };

  m["model.kind"] = [](auto& c, const auto& k, const auto& v) {
    try {
      c.model.kind = parse_model_kind(as_string(k, v));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(k, e.what());
    }
  };
  m["model.hidden_dim"] = [](auto& c, const auto& k, const auto& v) { c.model.hidden_dim = as_count(k, v); };
  m["model.fine_tune_last_layer"] = [](auto& c, const auto& k, const auto& v) {
    c.fine_tune_last_layer = as_bool(k, v);
  };
  m["model.l2"] = [](auto& c, const auto& k, const auto& v) { c.model.l2_coeff = as_double(k, v); };

  m["data.source"] = [](auto& c, const auto& k, const auto& v) { c.data.source = as_string(k, v); };
  m["data.path"] = [base](auto& c, const auto& k, const auto& v) { c.data.path = resolve(base, as_string(k, v)); };
  m["data.num_classes"] = [](auto& c, const auto& k, const auto& v) { c.data.num_classes = as_count(k, v); };
  m["data.dim"] = [](auto& c, const auto& k, const auto& v) { c.data.dim = as_count(k, v); };
  m["data.samples_per_class"] = [](auto& c, const auto& k, const auto& v) {
    c.data.samples_per_class = as_count(k, v);
  };
  m["data.spread"] = [](auto& c, const auto& k, const auto& v) { c.data.spread = as_double(k, v); };
  m["data.holdout"] = [](auto& c, const auto& k, const auto& v) { c.data.holdout = as_count(k, v); };

  m["federation.n_clients"] = [](auto& c, const auto& k, const auto& v) { c.federation.n_clients = as_count(k, v); };
  m["federation.profiles"] = [base](auto& c, const auto& k, const auto& v) {
    c.federation.profiles = resolve(base, as_string(k, v));
  };
  m["federation.h_policy"] = [](auto& c, const auto& k, const auto& v) { c.federation.h_policy = as_string(k, v); };
  m["federation.h"] = [](auto& c, const auto& k, const auto& v) { c.federation.h = as_small_int(k, v); };
  m["federation.h_table"] = [](auto& c, const auto& k, const auto& v) {
    c.federation.h_table.clear();
    for (const auto h : as_int_list(k, v)) c.federation.h_table.push_back(static_cast<int>(h));
  };
  m["federation.iterations_per_local_epoch"] = [](auto& c, const auto& k, const auto& v) {
    c.federation.iterations_per_local_epoch = as_double(k, v);
  };
  m["federation.uplink_s"] = [](auto& c, const auto& k, const auto& v) { c.federation.uplink_s = as_double(k, v); };
  m["federation.downlink_s"] = [](auto& c, const auto& k, const auto& v) {
    c.federation.downlink_s = as_double(k, v);
  };
  m["federation.eval_every"] = [](auto& c, const auto& k, const auto& v) {
    c.federation.eval_every = as_small_int(k, v);
  };
  m["federation.initial_weights"] = [base](auto& c, const auto& k, const auto& v) {
    c.federation.initial_weights = resolve(base, as_string(k, v));
  };

  m["hyperparams.eta"] = [](auto& c, const auto& k, const auto& v) { c.hp.eta = as_double(k, v); };
  m["hyperparams.beta"] = [](auto& c, const auto& k, const auto& v) { c.hp.beta = as_double(k, v); };
  m["hyperparams.a"] = [](auto& c, const auto& k, const auto& v) { c.hp.a = as_double(k, v); };
  m["hyperparams.theta"] = [](auto& c, const auto& k, const auto& v) { c.hp.theta = as_double(k, v); };
  m["hyperparams.h_min"] = [](auto& c, const auto& k, const auto& v) { c.hp.h_min = as_small_int(k, v); };
  m["hyperparams.h_max"] = [](auto& c, const auto& k, const auto& v) { c.hp.h_max = as_small_int(k, v); };
  m["hyperparams.e_total"] = [](auto& c, const auto& k, const auto& v) { c.hp.e_total = as_small_int(k, v); };
  m["hyperparams.k_bound"] = [](auto& c, const auto& k, const auto& v) { c.hp.k_bound = as_small_int(k, v); };
  m["hyperparams.batch_size"] = [](auto& c, const auto& k, const auto& v) { c.hp.batch_size = as_small_int(k, v); };
  m["hyperparams.momentum"] = [](auto& c, const auto& k, const auto& v) { c.hp.momentum = as_double(k, v); };
  m["hyperparams.alpha_kd"] = [](auto& c, const auto& k, const auto& v) { c.hp.alpha_kd = as_double(k, v); };
  m["hyperparams.seed"] = [](auto& c, const auto& k, const auto& v) {
    const auto s = as_int(k, v);
    if (s < 0) throw ConfigError(k, "must be >= 0");
    c.hp.seed = static_cast<std::uint64_t>(s);
  };

  m["output.dir"] = [](auto& c, const auto& k, const auto& v) { c.output_dir = as_string(k, v); };
  m["output.plots"] = [](auto& c, const auto& k, const auto& v) { c.plots = as_bool(k, v); };

  m["net.bind"] = [](auto& c, const auto& k, const auto& v) { c.net.bind = as_string(k, v); };
  m["net.host"] = [](auto& c, const auto& k, const auto& v) { c.net.host = as_string(k, v); };
  m["net.port"] = [](auto& c, const auto& k, const auto& v) { c.net.port = as_small_int(k, v); };
  m["net.client_index"] = [](auto& c, const auto& k, const auto& v) { c.net.client_index = as_count(k, v); };
  m["net.max_retries"] = [](auto& c, const auto& k, const auto& v) { c.net.max_retries = as_small_int(k, v); };
  m["net.backoff_ms"] = [](auto& c, const auto& k, const auto& v) { c.net.backoff_ms = as_small_int(k, v); };

  m["distill.teacher_hidden"] = [](auto& c, const auto& k, const auto& v) {
    c.distill.teacher_hidden = as_count(k, v);
  };
  m["distill.ta_hidden"] = [](auto& c, const auto& k, const auto& v) {
    c.distill.ta_hidden.clear();
    for (const auto h : as_int_list(k, v)) {
      if (h <= 0) throw ConfigError(k, "hidden sizes must be >= 1");
      c.distill.ta_hidden.push_back(static_cast<std::size_t>(h));
    }
  };
  m["distill.student_hidden"] = [](auto& c, const auto& k, const auto& v) {
    c.distill.student_hidden = as_count(k, v);
  };
  m["distill.alpha"] = [](auto& c, const auto& k, const auto& v) { c.distill.alpha = as_double(k, v); };
  m["distill.epochs_per_stage"] = [](auto& c, const auto& k, const auto& v) {
    c.distill.epochs_per_stage = as_small_int(k, v);
  };
  m["distill.target_mode"] = [](auto& c, const auto& k, const auto& v) {
    try {
      c.distill.target_mode = distill::parse_target_mode(as_string(k, v));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(k, e.what());
    }
  };
  m["distill.eta"] = [](auto& c, const auto& k, const auto& v) { c.distill.eta = as_double(k, v); };
  m["distill.batch_size"] = [](auto& c, const auto& k, const auto& v) {
    c.distill.batch_size = as_small_int(k, v);
  };
  m["distill.momentum"] = [](auto& c, const auto& k, const auto& v) { c.distill.momentum = as_double(k, v); };
  m["distill.weight_decay"] = [](auto& c, const auto& k, const auto& v) {
    c.distill.weight_decay = as_double(k, v);
  };

  m["sweep.a"] = [](auto& c, const auto& k, const auto& v) { c.sweep.a = as_double_list(k, v); };
  m["sweep.beta"] = [](auto& c, const auto& k, const auto& v) { c.sweep.beta = as_double_list(k, v); };
  m["sweep.include_sync"] = [](auto& c, const auto& k, const auto& v) { c.sweep.include_sync = as_bool(k, v); };

  m["probe.e_grid"] = [](auto& c, const auto& k, const auto& v) {
    c.probe.e_grid.clear();
    for (const auto e : as_int_list(k, v)) {
      if (e <= 0 || e > 1000000000) throw ConfigError(k, "grid values must be >= 1");
      c.probe.e_grid.push_back(static_cast<int>(e));
    }
  };
  m["probe.eta0"] = [](auto& c, const auto& k, const auto& v) { c.probe.eta0 = as_double(k, v); };
  m["probe.tolerance"] = [](auto& c, const auto& k, const auto& v) { c.probe.tolerance = as_double(k, v); };

  m["gradcheck.draws"] = [](auto& c, const auto& k, const auto& v) { c.gradcheck_draws = as_small_int(k, v); };
  return m;
}

void apply(ExperimentConfig& cfg, const Table& table, const std::filesystem::path& base) {
  const auto known = setters(base);
  for (const auto& [key, value] : table) {
    const auto it = known.find(key);
    if (it == known.end()) throw ConfigError(key, "unknown key");
    it->second(cfg, key, value);
  }
}

Table parse_overrides(const std::vector<std::string>& overrides) {
  Table t;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(o, "override must look like section.key=value");
    t[std::string(trim(std::string_view(o).substr(0, eq)))] = parse_value_lenient(std::string_view(o).substr(eq + 1));
  }
  return t;
}

void require_file(const std::string& key, const std::filesystem::path& p) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(p, ec)) throw ConfigError(key, "file not found: " + p.string());
}

}  // namespace

Table parse_toml(std::string_view text) {
  Table table;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view raw = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') {
      if (end == text.size()) break;
      continue;
    }
    if (line.front() == '[') {
      const auto close = line.find(']');
      if (close == std::string_view::npos) throw ParseError(line_no, "unterminated section header");
      const std::string_view rest = trim(line.substr(close + 1));
      if (!rest.empty() && rest.front() != '#') throw ParseError(line_no, "trailing text after section header");
      const std::string_view name = trim(line.substr(1, close - 1));
      if (name.empty() || name.front() == '[') throw ParseError(line_no, "unsupported section header");
      for (const char c : name) {
        if (!is_bare_key_char(c)) throw ParseError(line_no, "invalid section name '" + std::string(name) + "'");
      }
      section = std::string(name);
    } else {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
      const std::string_view key = trim(line.substr(0, eq));
      if (key.empty()) throw ParseError(line_no, "empty key");
      for (const char c : key) {
        if (!is_bare_key_char(c)) throw ParseError(line_no, "invalid key '" + std::string(key) + "'");
      }
      Cursor cur(line.substr(eq + 1), line_no);
      Value v = cur.value();
      if (!cur.at_end()) cur.fail("trailing text after value");
      const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
      if (!table.emplace(full, std::move(v)).second) throw ParseError(line_no, "duplicate key '" + full + "'");
    }
    if (end == text.size()) break;
  }
  return table;
}

Table load_toml(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str());
}

Value parse_value_lenient(std::string_view text) {
  text = trim(text);
  try {
    Cursor cur(text, 0);
    Value v = cur.value();
    if (cur.at_end()) return v;
  } catch (const ParseError&) {
  }
  return std::string(text);
}

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::simulate_async: return "simulate-async";
    case Mode::simulate_sync: return "simulate-sync";
    case Mode::simulate_central: return "simulate-central";
    case Mode::serve: return "serve";
    case Mode::client: return "client";
    case Mode::distill: return "distill";
    case Mode::gradcheck: return "gradcheck";
    case Mode::sweep: return "sweep";
    case Mode::probe: return "probe";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  for (const Mode m : {Mode::simulate_async, Mode::simulate_sync, Mode::simulate_central, Mode::serve, Mode::client,
                       Mode::distill, Mode::gradcheck, Mode::sweep, Mode::probe}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown mode '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  try {
    hp.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("hyperparams." + e.key(), e.what());
  }
  if (model.kind == ModelKind::two_layer && model.hidden_dim == 0) {
    throw ConfigError("model.hidden_dim", "must be >= 1 for a two-layer model");
  }
  if (!(std::isfinite(model.l2_coeff) && model.l2_coeff >= 0.0)) throw ConfigError("model.l2", "must be >= 0");

  if (data.source == "csv") {
    require_file("data.path", data.path);
  } else if (data.source == "blobs") {
    if (data.num_classes < 2) throw ConfigError("data.num_classes", "must be >= 2");
    if (data.dim == 0) throw ConfigError("data.dim", "must be >= 1");
    if (data.samples_per_class == 0) throw ConfigError("data.samples_per_class", "must be >= 1");
    if (!(std::isfinite(data.spread) && data.spread > 0.0)) throw ConfigError("data.spread", "must be > 0");
    if (data.holdout >= data.num_classes * data.samples_per_class) {
      throw ConfigError("data.holdout", "must leave at least one training row");
    }
  } else {
    throw ConfigError("data.source", "expected \"blobs\" or \"csv\", got \"" + data.source + "\"");
  }

  if (federation.n_clients == 0) throw ConfigError("federation.n_clients", "must be >= 1");
  if (!federation.profiles.empty()) require_file("federation.profiles", federation.profiles);
  if (!federation.initial_weights.empty()) require_file("federation.initial_weights", federation.initial_weights);
  if (federation.h_policy == "fixed") {
    if (federation.h < hp.h_min || federation.h > hp.h_max) {
      throw ConfigError("federation.h", "must lie in [hyperparams.h_min, hyperparams.h_max] = [" +
                                            std::to_string(hp.h_min) + ", " + std::to_string(hp.h_max) + "]");
    }
  } else if (federation.h_policy == "per-device") {
    if (federation.h_table.size() != federation.n_clients) {
      throw ConfigError("federation.h_table", "needs one entry per client");
    }
    for (const int h : federation.h_table) {
      if (h < hp.h_min || h > hp.h_max) {
        throw ConfigError("federation.h_table", "entries must lie in [hyperparams.h_min, hyperparams.h_max]");
      }
    }
  } else if (federation.h_policy != "uniform") {
    throw ConfigError("federation.h_policy", "expected fixed, uniform or per-device");
  }
  if (!(federation.iterations_per_local_epoch > 0.0) || !std::isfinite(federation.iterations_per_local_epoch)) {
    throw ConfigError("federation.iterations_per_local_epoch", "must be > 0");
  }
  if (!(federation.uplink_s >= 0.0) || !std::isfinite(federation.uplink_s)) {
    throw ConfigError("federation.uplink_s", "must be >= 0");
  }
  if (!(federation.downlink_s >= 0.0) || !std::isfinite(federation.downlink_s)) {
    throw ConfigError("federation.downlink_s", "must be >= 0");
  }
  if (federation.eval_every < 1) throw ConfigError("federation.eval_every", "must be >= 1");

  if (output_dir.empty()) throw ConfigError("output.dir", "must not be empty");
  if (net.port < 0 || net.port > 65535) throw ConfigError("net.port", "must be in [0, 65535]");
  if (net.max_retries < 0) throw ConfigError("net.max_retries", "must be >= 0");
  if (net.backoff_ms < 0) throw ConfigError("net.backoff_ms", "must be >= 0");
  if (mode == Mode::client && net.client_index >= federation.n_clients) {
    throw ConfigError("net.client_index", "must be < federation.n_clients");
  }

  if (distill.teacher_hidden == 0) throw ConfigError("distill.teacher_hidden", "must be >= 1");
  if (distill.ta_hidden.size() > 3) throw ConfigError("distill.ta_hidden", "at most 3 teaching assistants");
  if (!(distill.alpha >= 0.0 && distill.alpha <= 1.0)) throw ConfigError("distill.alpha", "must be in [0, 1]");
  if (distill.epochs_per_stage < 1) throw ConfigError("distill.epochs_per_stage", "must be >= 1");
  if (!(distill.eta > 0.0) || !std::isfinite(distill.eta)) throw ConfigError("distill.eta", "must be > 0");
  if (distill.batch_size < 1) throw ConfigError("distill.batch_size", "must be >= 1");
  if (!(distill.momentum >= 0.0 && distill.momentum < 1.0)) throw ConfigError("distill.momentum", "must be in [0, 1)");
  if (!(distill.weight_decay >= 0.0) || !std::isfinite(distill.weight_decay)) {
    throw ConfigError("distill.weight_decay", "must be >= 0");
  }

  if (sweep.a.empty()) throw ConfigError("sweep.a", "must not be empty");
  if (sweep.beta.empty()) throw ConfigError("sweep.beta", "must not be empty");
  for (const double a : sweep.a) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("sweep.a", "values must be >= 0");
  }
  for (const double b : sweep.beta) {
    if (!(b > 0.0 && b <= 1.0)) throw ConfigError("sweep.beta", "values must be in (0, 1]");
  }

  if (probe.e_grid.size() < 3) throw ConfigError("probe.e_grid", "needs at least 3 values");
  if (!(probe.eta0 > 0.0) || !std::isfinite(probe.eta0)) throw ConfigError("probe.eta0", "must be > 0");
  if (!(probe.tolerance >= 1.0)) throw ConfigError("probe.tolerance", "must be >= 1");
  if (gradcheck_draws < 1) throw ConfigError("gradcheck.draws", "must be >= 1");
}

ExperimentConfig from_table(const Table& table, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  apply(cfg, table, base_dir);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = from_table(load_toml(path), path.parent_path());
  apply(cfg, parse_overrides(overrides), {});
  cfg.validate();
  return cfg;
}

ExperimentConfig config_from_overrides(const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  apply(cfg, parse_overrides(overrides), {});
  cfg.validate();
  return cfg;
}

}  // namespace fedasync::config
