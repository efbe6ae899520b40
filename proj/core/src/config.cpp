#include "mdrlab/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mdrlab/error.hpp"

namespace mdrlab {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

std::vector<std::string> split_list(const std::string& raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw ConfigError("unterminated list '" + s + "'");
    s = s.substr(1, s.size() - 2);
  }
  std::vector<std::string> items;
  if (trim(s).empty()) return items;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = unquote(trim(item));
    if (item.empty()) throw ConfigError("empty list element in '" + raw + "'");
    items.push_back(item);
  }
  return items;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return v;
}

std::size_t parse_count(const std::string& s) { return static_cast<std::size_t>(parse_u64(s)); }

double parse_double(const std::string& s) {
  if (s.empty()) throw ConfigError("expected a number, got ''");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T, class F>
std::string fmt_list(const std::vector<T>& xs, F&& f) {
  std::string out = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += f(xs[i]);
  }
  return out + "]";
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"preset", [](ExperimentConfig& c, const std::string& v) { c.preset = v; }},
      {"env", [](ExperimentConfig& c, const std::string& v) { c.env = v; }},
      {"mode",
       [](ExperimentConfig& c, const std::string& v) {
         c.modes.clear();
         for (const auto& item : split_list(v)) c.modes.push_back(parse_mode_plan(item));
         if (c.modes.empty()) throw ConfigError("mode list is empty");
       }},
      {"seeds", [](ExperimentConfig& c, const std::string& v) { c.seeds = parse_seed_list(v); }},
      {"steps", [](ExperimentConfig& c, const std::string& v) { c.steps = parse_count(v); }},
      {"num_envs", [](ExperimentConfig& c, const std::string& v) { c.num_envs = parse_count(v); }},
      {"steps_per_env", [](ExperimentConfig& c, const std::string& v) { c.steps_per_env = parse_count(v); }},
      {"hidden",
       [](ExperimentConfig& c, const std::string& v) {
         c.hidden.clear();
         for (const auto& item : split_list(v)) c.hidden.push_back(parse_count(item));
       }},
      {"activation",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "tanh") {
           c.activation = ActivationKind::Tanh;
         } else if (v == "relu") {
           c.activation = ActivationKind::Relu;
         } else {
           throw ConfigError("activation must be tanh or relu, got '" + v + "'");
         }
       }},
      {"actor_head_scale", [](ExperimentConfig& c, const std::string& v) { c.actor_head_scale = parse_double(v); }},
      {"bn_momentum", [](ExperimentConfig& c, const std::string& v) { c.bn_momentum = parse_double(v); }},
      {"bn_eta", [](ExperimentConfig& c, const std::string& v) { c.bn_eta = parse_double(v); }},
      {"dropout_rate", [](ExperimentConfig& c, const std::string& v) { c.dropout_rate = parse_double(v); }},
      {"alpha1", [](ExperimentConfig& c, const std::string& v) { c.alpha1 = parse_count(v); }},
      {"alpha2", [](ExperimentConfig& c, const std::string& v) { c.alpha2 = parse_count(v); }},
      {"clip_eps", [](ExperimentConfig& c, const std::string& v) { c.ppo.clip_eps = parse_double(v); }},
      {"value_coef", [](ExperimentConfig& c, const std::string& v) { c.ppo.value_coef = parse_double(v); }},
      {"entropy_coef", [](ExperimentConfig& c, const std::string& v) { c.ppo.entropy_coef = parse_double(v); }},
      {"minibatch", [](ExperimentConfig& c, const std::string& v) { c.ppo.minibatch = parse_count(v); }},
      {"epochs", [](ExperimentConfig& c, const std::string& v) { c.ppo.epochs = parse_count(v); }},
      {"lr", [](ExperimentConfig& c, const std::string& v) { c.ppo.lr = parse_double(v); }},
      {"gamma", [](ExperimentConfig& c, const std::string& v) { c.ppo.gamma = parse_double(v); }},
      {"lambda", [](ExperimentConfig& c, const std::string& v) { c.ppo.lambda = parse_double(v); }},
      {"max_grad_norm", [](ExperimentConfig& c, const std::string& v) { c.ppo.max_grad_norm = parse_double(v); }},
      {"weight_decay", [](ExperimentConfig& c, const std::string& v) { c.ppo.weight_decay = parse_double(v); }},
      {"recompute_every", [](ExperimentConfig& c, const std::string& v) { c.ppo.recompute_every = parse_count(v); }},
      {"normalize_advantages",
       [](ExperimentConfig& c, const std::string& v) { c.ppo.normalize_advantages = parse_bool(v); }},
      {"eval_every", [](ExperimentConfig& c, const std::string& v) { c.eval_every = parse_count(v); }},
      {"eval_episodes", [](ExperimentConfig& c, const std::string& v) { c.eval_episodes = parse_count(v); }},
      {"checkpoints", [](ExperimentConfig& c, const std::string& v) { c.checkpoints = parse_bool(v); }},
      {"checkpoint_every", [](ExperimentConfig& c, const std::string& v) { c.checkpoint_every = parse_count(v); }},
      {"wallclock", [](ExperimentConfig& c, const std::string& v) { c.wallclock = parse_bool(v); }},
      {"out", [](ExperimentConfig& c, const std::string& v) { c.out = v; }},
  };
  return table;
}

[[noreturn]] void fail(const std::string& origin, const std::string& msg) { throw ConfigError(origin + ": " + msg); }

void apply(ExperimentConfig& cfg, const ConfigEntry& e) {
  if (e.key.rfind("env.", 0) == 0) {
    const std::string name = e.key.substr(4);
    if (name.empty()) fail(e.origin, "empty environment override name");
    try {
      cfg.env_overrides[name] = parse_double(e.value);
    } catch (const ConfigError& err) {
      fail(e.origin, "key '" + e.key + "': " + err.what());
    }
    return;
  }
  const auto& table = setters();
  auto it = table.find(e.key);
  if (it == table.end()) fail(e.origin, "unknown key '" + e.key + "'");
  try {
    it->second(cfg, e.value);
  } catch (const ConfigError& err) {
    fail(e.origin, "key '" + e.key + "': " + err.what());
  }
}

}  // namespace

std::string_view to_string(ModePlan plan) {
  switch (plan) {
    case ModePlan::Bn:
      return "bn";
    case ModePlan::Eval:
      return "eval";
    case ModePlan::BnMdr:
      return "bn-mdr";
    case ModePlan::NoNorm:
      return "nonorm";
    case ModePlan::Dropout:
      return "dropout";
    case ModePlan::DropoutMdr:
      return "dropout-mdr";
  }
  return "?";
}

const std::vector<ModePlan>& all_mode_plans() {
  static const std::vector<ModePlan> plans{ModePlan::Bn,     ModePlan::Eval,    ModePlan::BnMdr,
                                           ModePlan::NoNorm, ModePlan::Dropout, ModePlan::DropoutMdr};
  return plans;
}

ModePlan parse_mode_plan(std::string_view name) {
  for (ModePlan p : all_mode_plans()) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown mode plan '" + std::string(name) +
                    "' (expected bn, eval, bn-mdr, nonorm, dropout or dropout-mdr)");
}

MdrSchedule ExperimentConfig::schedule(ModePlan plan) const {
  switch (plan) {
    case ModePlan::Eval:
      return MdrSchedule::eval_only(ppo.epochs);
    case ModePlan::BnMdr:
    case ModePlan::DropoutMdr:
      return MdrSchedule::split(ppo.epochs, alpha1, alpha2);
    default:
      return MdrSchedule::plain(ppo.epochs);
  }
}

NetworkSpec ExperimentConfig::network(ModePlan plan, std::size_t input_dim, std::size_t num_actions) const {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.num_actions = num_actions;
  spec.hidden = hidden;
  spec.activation = activation;
  spec.actor_head_scale = actor_head_scale;
  spec.bn_momentum = bn_momentum;
  spec.bn_eta = bn_eta;
  spec.dropout_rate = dropout_rate;
  spec.batchnorm = plan == ModePlan::Bn || plan == ModePlan::Eval || plan == ModePlan::BnMdr;
  spec.dropout = plan == ModePlan::Dropout || plan == ModePlan::DropoutMdr;
  return spec;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds list is empty");
  if (modes.empty()) throw ConfigError("mode list is empty");
  if (steps == 0) throw ConfigError("steps must be positive");
  if (num_envs == 0 || steps_per_env == 0) throw ConfigError("num_envs and steps_per_env must be positive");
  if (hidden.empty()) throw ConfigError("hidden must list at least one layer width");
  for (std::size_t w : hidden) {
    if (w == 0) throw ConfigError("hidden layer widths must be positive");
  }
  ppo.validate();
  if (ppo.minibatch > rollout_size()) {
    throw ConfigError("minibatch " + std::to_string(ppo.minibatch) + " exceeds rollout size " +
                      std::to_string(rollout_size()));
  }
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("bn_momentum must lie in (0, 1]");
  if (!(bn_eta > 0.0)) throw ConfigError("bn_eta must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  for (ModePlan p : modes) {
    if (p == ModePlan::BnMdr || p == ModePlan::DropoutMdr) (void)schedule(p);
  }
  const auto known = env_override_keys(env);
  for (const auto& [k, v] : env_overrides) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ConfigError("unknown override 'env." + k + "' for environment '" + env + "'");
    }
  }
  (void)make_env(env, env_overrides);
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  auto line = [&](const std::string& k, const std::string& v) { os << k << " = " << v << '\n'; };
  line("preset", preset);
  line("env", env);
  for (const auto& [k, v] : env_overrides) line("env." + k, fmt_double(v));
  line("mode", fmt_list(modes, [](ModePlan p) { return std::string(to_string(p)); }));
  line("seeds", fmt_list(seeds, [](std::uint64_t s) { return std::to_string(s); }));
  line("steps", std::to_string(steps));
  line("num_envs", std::to_string(num_envs));
  line("steps_per_env", std::to_string(steps_per_env));
  line("hidden", fmt_list(hidden, [](std::size_t w) { return std::to_string(w); }));
  line("activation", activation == ActivationKind::Tanh ? "tanh" : "relu");
  line("actor_head_scale", fmt_double(actor_head_scale));
  line("bn_momentum", fmt_double(bn_momentum));
  line("bn_eta", fmt_double(bn_eta));
  line("dropout_rate", fmt_double(dropout_rate));
  line("alpha1", std::to_string(alpha1));
  line("alpha2", std::to_string(alpha2));
  line("clip_eps", fmt_double(ppo.clip_eps));
  line("value_coef", fmt_double(ppo.value_coef));
  line("entropy_coef", fmt_double(ppo.entropy_coef));
  line("minibatch", std::to_string(ppo.minibatch));
  line("epochs", std::to_string(ppo.epochs));
  line("lr", fmt_double(ppo.lr));
  line("gamma", fmt_double(ppo.gamma));
  line("lambda", fmt_double(ppo.lambda));
  line("max_grad_norm", fmt_double(ppo.max_grad_norm));
  line("weight_decay", fmt_double(ppo.weight_decay));
  line("recompute_every", std::to_string(ppo.recompute_every));
  line("normalize_advantages", ppo.normalize_advantages ? "true" : "false");
  line("eval_every", std::to_string(eval_every));
  line("eval_episodes", std::to_string(eval_episodes));
  line("checkpoints", checkpoints ? "true" : "false");
  line("checkpoint_every", std::to_string(checkpoint_every));
  line("wallclock", wallclock ? "true" : "false");
  line("out", out);
  return os.str();
}

std::vector<ConfigEntry> parse_config_text(std::string_view text, const std::string& source) {
  std::vector<ConfigEntry> entries;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const std::string origin = source + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(origin, "expected 'key = value', got '" + line + "'");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (const auto hash = value.find(" #"); hash != std::string::npos) value = trim(value.substr(0, hash));
    if (key.empty()) fail(origin, "missing key before '='");
    entries.push_back({std::move(key), unquote(value), origin});
  }
  return entries;
}

std::vector<ConfigEntry> read_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

ConfigEntry parse_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("--set " + std::string(assignment) + ": expected key=value");
  }
  std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("--set " + std::string(assignment) + ": missing key");
  return {key, unquote(trim(assignment.substr(eq + 1))), "--set " + key};
}

ExperimentConfig resolve_config(const std::vector<ConfigEntry>& entries) {
  std::string preset = "collapse-demo";
  std::string preset_origin = "default";
  for (const auto& e : entries) {
    if (e.key == "preset") {
      preset = e.value;
      preset_origin = e.origin;
    }
  }
  ExperimentConfig cfg;
  try {
    cfg = preset_config(preset);
  } catch (const ConfigError& err) {
    fail(preset_origin, err.what());
  }
  for (const auto& e : entries) {
    if (e.key != "preset") apply(cfg, e);
  }
  cfg.validate();
  return cfg;
}

std::vector<std::string> preset_names() { return {"collapse-demo", "generalization", "smoke"}; }

ExperimentConfig preset_config(std::string_view name) {
  ExperimentConfig c;
  c.preset = std::string(name);
  if (name == "collapse-demo") {
    // Reduced setting: small datasets, few epochs, four environments.
    c.env = "patchloc";
    c.env_overrides = {{"view", 8}};
    c.num_envs = 4;
    c.steps_per_env = 128;
    c.ppo.epochs = 3;
    c.ppo.minibatch = 128;
    c.ppo.lr = 1e-3;
    c.steps = 150;
    return c;
  }
  if (name == "generalization") {
    c.env = "gridgame";
    c.env_overrides = {{"levels", 16}};
    c.modes = {ModePlan::NoNorm, ModePlan::Dropout, ModePlan::DropoutMdr};
    c.num_envs = 8;
    c.steps_per_env = 64;
    c.ppo.epochs = 3;
    c.ppo.minibatch = 128;
    c.ppo.lr = 1e-3;
    c.steps = 100;
    c.eval_every = 10;
    c.eval_episodes = 16;
    return c;
  }
  if (name == "smoke") {
    c.env = "gridgame";
    c.env_overrides = {{"length", 16}, {"horizon", 64}};
    c.num_envs = 2;
    c.steps_per_env = 32;
    c.ppo.minibatch = 32;
    c.steps = 3;
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : setters()) keys.push_back(k);
  keys.push_back("env.<name>");
  return keys;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : split_list(std::string(text))) seeds.push_back(parse_u64(item));
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

}  // namespace mdrlab
