#include "wmcir/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace wmcir {

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.preset = "toy";
  c.lr = 1e-2;
  c.warmup_steps = 30;
  c.batch_size = 16;
  c.max_steps = 300;
  c.predictor_depth = 4;
  c.predictor_width = 64;
  c.encoder = "toy";
  c.embed_dim = 32;
  c.grid = 4;
  c.patch = 16;
  return c;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  try {
    crop.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (predictor_depth < 0) throw ConfigError("predictor_depth must be >= 0");
  if (predictor_width < 1 || predictor_heads < 1 || predictor_width % predictor_heads != 0)
    throw ConfigError("predictor_heads must divide predictor_width");
  if (predictor_mlp_ratio < 1) throw ConfigError("predictor_mlp_ratio must be >= 1");
  if (residual_wiring != "literal" && residual_wiring != "standard")
    throw ConfigError("residual_wiring must be literal or standard");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (encoder != "toy" && encoder != "paper_scale") throw ConfigError("encoder must be toy or paper_scale");
  if (embed_dim < 1 || grid < 2 || patch < 1) throw ConfigError("embed_dim, grid and patch must be positive (grid >= 2)");
  if (grid * patch < 32) throw ConfigError("encoder input (grid * patch) must be at least 32 px");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (ablation.no_crop && ablation.mask_source) throw ConfigError("no_crop and mask_source are mutually exclusive");
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct KeyHandler {
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

double parse_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const std::string s(v);
    const double d = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(key) + "': expected a number, got '" + std::string(v) + "'");
  }
}

long long parse_int(std::string_view key, std::string_view v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end)
    throw ConfigError("config key '" + std::string(key) + "': expected an integer, got '" + std::string(v) + "'");
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end)
    throw ConfigError("config key '" + std::string(key) + "': expected an unsigned integer, got '" + std::string(v) +
                      "'");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true/false, got '" + std::string(v) + "'");
}

#define WMCIR_DOUBLE(field)                                                                      \
  {                                                                                              \
    #field, {[](TrainConfig& c, std::string_view v) { c.field = parse_double(#field, v); },      \
             [](const TrainConfig& c) { return fmt_double(c.field); } }                          \
  }
#define WMCIR_INT(field)                                                                                    \
  {                                                                                                         \
    #field, {[](TrainConfig& c, std::string_view v) { c.field = static_cast<int>(parse_int(#field, v)); }, \
             [](const TrainConfig& c) { return std::to_string(c.field); } }                                 \
  }
#define WMCIR_U64(field)                                                                    \
  {                                                                                         \
    #field, {[](TrainConfig& c, std::string_view v) { c.field = parse_u64(#field, v); },    \
             [](const TrainConfig& c) { return std::to_string(c.field); } }                 \
  }
#define WMCIR_STR(field)                                                           \
  {                                                                                \
    #field, {[](TrainConfig& c, std::string_view v) { c.field = std::string(v); }, \
             [](const TrainConfig& c) { return c.field; } }                        \
  }
#define WMCIR_FLAG(field)                                                                             \
  {                                                                                                   \
    #field, {[](TrainConfig& c, std::string_view v) { c.ablation.field = parse_bool(#field, v); },    \
             [](const TrainConfig& c) { return fmt_bool(c.ablation.field); } }                        \
  }

const std::map<std::string, KeyHandler, std::less<>>& handlers() {
  static const std::map<std::string, KeyHandler, std::less<>> h{
      {"preset", {[](TrainConfig& c, std::string_view v) { c.preset = std::string(v); },
                  [](const TrainConfig& c) { return c.preset; }}},
      WMCIR_DOUBLE(lr),
      WMCIR_DOUBLE(weight_decay),
      WMCIR_INT(warmup_steps),
      WMCIR_INT(batch_size),
      WMCIR_INT(max_steps),
      WMCIR_U64(seed),
      WMCIR_DOUBLE(beta1),
      WMCIR_DOUBLE(beta2),
      WMCIR_DOUBLE(eps),
      WMCIR_DOUBLE(grad_clip),
      {"crop_scale_min", {[](TrainConfig& c, std::string_view v) { c.crop.scale_min = parse_double("crop_scale_min", v); },
                          [](const TrainConfig& c) { return fmt_double(c.crop.scale_min); }}},
      {"crop_scale_max", {[](TrainConfig& c, std::string_view v) { c.crop.scale_max = parse_double("crop_scale_max", v); },
                          [](const TrainConfig& c) { return fmt_double(c.crop.scale_max); }}},
      {"crop_aspect_min",
       {[](TrainConfig& c, std::string_view v) { c.crop.aspect_min = parse_double("crop_aspect_min", v); },
        [](const TrainConfig& c) { return fmt_double(c.crop.aspect_min); }}},
      {"crop_aspect_max",
       {[](TrainConfig& c, std::string_view v) { c.crop.aspect_max = parse_double("crop_aspect_max", v); },
        [](const TrainConfig& c) { return fmt_double(c.crop.aspect_max); }}},
      WMCIR_INT(predictor_depth),
      WMCIR_INT(predictor_width),
      WMCIR_INT(predictor_heads),
      WMCIR_INT(predictor_mlp_ratio),
      WMCIR_STR(residual_wiring),
      WMCIR_DOUBLE(tau),
      WMCIR_FLAG(no_crop),
      WMCIR_FLAG(no_action),
      WMCIR_FLAG(no_gate),
      WMCIR_FLAG(mask_source),
      WMCIR_FLAG(predict_entire),
      WMCIR_FLAG(average_then_map),
      WMCIR_STR(encoder),
      WMCIR_INT(embed_dim),
      WMCIR_INT(grid),
      WMCIR_INT(patch),
      WMCIR_U64(encoder_seed),
      WMCIR_INT(checkpoint_every),
      WMCIR_INT(workers),
  };
  return h;
}

#undef WMCIR_DOUBLE
#undef WMCIR_INT
#undef WMCIR_U64
#undef WMCIR_STR
#undef WMCIR_FLAG

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

TrainConfig preset_config(std::string_view name) {
  if (name == "toy") return TrainConfig::toy();
  if (name == "paper") return TrainConfig::paper();
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected toy or paper)");
}

}  // namespace

std::map<std::string, std::string> TrainConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, h] : handlers()) out[k] = h.get(*this);
  return out;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : to_map()) os << k << " = " << v << "\n";
  return os.str();
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, h] : handlers()) k.push_back(name);
    return k;
  }();
  return keys;
}

std::string nearest_config_key(std::string_view key) {
  std::string best;
  std::size_t best_d = SIZE_MAX;
  for (const auto& k : config_keys()) {
    const auto d = edit_distance(key, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

void apply_setting(TrainConfig& cfg, std::string_view key, std::string_view value) {
  const auto it = handlers().find(key);
  if (it == handlers().end())
    throw ConfigError("unknown config key '" + std::string(key) + "' (did you mean '" + nearest_config_key(key) +
                      "'?)");
  it->second.set(cfg, trim(value));
}

TrainConfig parse_config(const std::map<std::string, std::string>& kv) {
  TrainConfig cfg = preset_config(kv.contains("preset") ? kv.at("preset") : "toy");
  for (const auto& [k, v] : kv)
    if (k != "preset") apply_setting(cfg, k, v);
  cfg.validate();
  return cfg;
}

TrainConfig parse_config(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (!handlers().contains(key))
      throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(lineno) + " (did you mean '" +
                        nearest_config_key(key) + "'?)");
    kv[key] = std::string(trim(line.substr(eq + 1)));
  }
  return parse_config(kv);
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

}  // namespace wmcir
