#include "iidsu/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace iidsu {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("config: '" + key + "' expects a number, got '" + v +
                      "'");
  return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v +
                      "'");
  return out;
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("config: '" + key +
                      "' expects a nonnegative integer, got '" + v + "'");
  return out;
}

Precision parse_precision(const std::string& key, const std::string& v) {
  if (v == "f32") return Precision::f32;
  if (v == "f64") return Precision::f64;
  throw ConfigError("config: '" + key + "' must be f32 or f64, got '" + v +
                    "'");
}

}  // namespace

void TrainSection::validate() const {
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (steps < 0) throw ConfigError("train: steps must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("train: momentum must lie in [0, 1)");
  if (checkpoint_every < 0)
    throw ConfigError("train: checkpoint_every must be >= 0");
}

void EvalSection::validate() const {
  if (routes < 1) throw ConfigError("eval: routes must be >= 1");
  if (difficulty < 0) throw ConfigError("eval: difficulty must be >= 0");
}

void AppConfig::validate() const {
  model.validate();
  train.validate();
  eval.validate();
  controller.validate();
}

AppConfig parse_config(const std::string& text) {
  AppConfig cfg;
  enum class Section { none, model, train, eval, controller };
  Section section = Section::none;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unterminated section header");
      const std::string name = trim(line.substr(1, line.size() - 2));
      if (name == "model") section = Section::model;
      else if (name == "train") section = Section::train;
      else if (name == "eval") section = Section::eval;
      else if (name == "controller") section = Section::controller;
      else
        throw ConfigError("config: unknown section [" + name + "]");
      continue;
    }

    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key or value");

    switch (section) {
      case Section::none:
        throw ConfigError("config: key '" + key +
                          "' appears before any [section]");
      case Section::model:
        if (key == "width_factor") cfg.model.width_factor = parse_double(key, value);
        else if (key == "r") cfg.model.r = static_cast<int>(parse_int(key, value));
        else if (key == "gru_hidden") cfg.model.gru_hidden = static_cast<int>(parse_int(key, value));
        else if (key == "attention_heads") cfg.model.attention_heads = static_cast<int>(parse_int(key, value));
        else if (key == "eca_kernel") cfg.model.eca_kernel = static_cast<int>(parse_int(key, value));
        else if (key == "precision") cfg.model.precision = parse_precision(key, value);
        else if (key == "seed") cfg.model_seed = parse_uint(key, value);
        else throw ConfigError("config: unknown key '" + key + "' in [model]");
        break;
      case Section::train:
        if (key == "batch") cfg.train.batch = static_cast<int>(parse_int(key, value));
        else if (key == "steps") cfg.train.steps = static_cast<int>(parse_int(key, value));
        else if (key == "lr") cfg.train.lr = parse_double(key, value);
        else if (key == "momentum") cfg.train.momentum = parse_double(key, value);
        else if (key == "checkpoint_every") cfg.train.checkpoint_every = static_cast<int>(parse_int(key, value));
        else if (key == "seed") cfg.train.seed = parse_uint(key, value);
        else throw ConfigError("config: unknown key '" + key + "' in [train]");
        break;
      case Section::eval:
        if (key == "routes") cfg.eval.routes = static_cast<int>(parse_int(key, value));
        else if (key == "difficulty") cfg.eval.difficulty = static_cast<int>(parse_int(key, value));
        else if (key == "seed") cfg.eval.seed = parse_uint(key, value);
        else throw ConfigError("config: unknown key '" + key + "' in [eval]");
        break;
      case Section::controller:
        if (key == "lat_kp") cfg.controller.lat_kp = parse_double(key, value);
        else if (key == "lat_ki") cfg.controller.lat_ki = parse_double(key, value);
        else if (key == "lat_kd") cfg.controller.lat_kd = parse_double(key, value);
        else if (key == "lon_kp") cfg.controller.lon_kp = parse_double(key, value);
        else if (key == "lon_ki") cfg.controller.lon_ki = parse_double(key, value);
        else if (key == "lon_kd") cfg.controller.lon_kd = parse_double(key, value);
        else if (key == "kappa") cfg.controller.kappa = parse_double(key, value);
        else if (key == "brake_threshold") cfg.controller.brake_threshold = parse_double(key, value);
        else if (key == "overspeed_margin") cfg.controller.overspeed_margin = parse_double(key, value);
        else if (key == "integral_window") cfg.controller.integral_window = static_cast<int>(parse_int(key, value));
        else throw ConfigError("config: unknown key '" + key + "' in [controller]");
        break;
    }
  }
  cfg.validate();
  return cfg;
}

AppConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config '" + path + "': cannot open");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str());
}

}  // namespace iidsu
