// SPDX-License-Identifier: Apache-2.0
#include "ebmforge/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace ebmforge::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const KeyValue& kv, const std::string& what) {
  std::string where = kv.line > 0 ? " (line " + std::to_string(kv.line) + ")" : "";
  throw ConfigError("config key \"" + kv.key + "\"" + where + ": " + what);
}

double parse_double(const KeyValue& kv) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(kv.value, &pos);
    if (pos != kv.value.size()) fail(kv, "trailing characters in number \"" + kv.value + "\"");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    fail(kv, "expected a number, got \"" + kv.value + "\"");
  }
}

std::uint64_t parse_u64(const KeyValue& kv) {
  std::uint64_t v = 0;
  const char* first = kv.value.data();
  const char* last = first + kv.value.size();
  const auto [p, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || p != last) fail(kv, "expected an integer, got \"" + kv.value + "\"");
  return v;
}

bool parse_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "0") return false;
  fail(kv, "expected true/false, got \"" + kv.value + "\"");
}

std::vector<std::size_t> parse_size_list(const KeyValue& kv) {
  std::vector<std::size_t> out;
  std::stringstream ss(kv.value);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    KeyValue sub{kv.key, tok, kv.line};
    out.push_back(static_cast<std::size_t>(parse_u64(sub)));
  }
  if (out.empty()) fail(kv, "expected a comma-separated list");
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

std::vector<KeyValue> parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::vector<KeyValue> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config parse error at line " + std::to_string(lineno) +
                        ": expected key = value");
    }
    KeyValue kv;
    kv.key = trim(line.substr(0, eq));
    kv.value = trim(line.substr(eq + 1));
    kv.line = lineno;
    if (kv.key.empty()) {
      throw ConfigError("config parse error at line " + std::to_string(lineno) + ": empty key");
    }
    out.push_back(std::move(kv));
  }
  return out;
}

KeyValue parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override \"" + assignment + "\" is not of the form key=value");
  }
  return {trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), 0};
}

void TrainConfig::set(const KeyValue& kv) {
  using Setter = std::function<void(TrainConfig&, const KeyValue&)>;
  static const std::map<std::string, Setter> table = {
      {"dataset", [](TrainConfig& c, const KeyValue& k) { c.dataset = k.value; }},
      {"data.n", [](TrainConfig& c, const KeyValue& k) { c.data_n = parse_u64(k); }},
      {"data.filter", [](TrainConfig& c, const KeyValue& k) { c.data_filter = k.value; }},
      {"batch_size", [](TrainConfig& c, const KeyValue& k) { c.batch_size = parse_u64(k); }},
      {"iterations", [](TrainConfig& c, const KeyValue& k) { c.iterations = parse_u64(k); }},
      {"model.kind", [](TrainConfig& c, const KeyValue& k) { c.model_kind = k.value; }},
      {"model.hidden", [](TrainConfig& c, const KeyValue& k) { c.hidden = parse_size_list(k); }},
      {"model.scales", [](TrainConfig& c, const KeyValue& k) { c.scales = parse_size_list(k); }},
      {"model.condition_dim",
       [](TrainConfig& c, const KeyValue& k) { c.condition_dim = parse_u64(k); }},
      {"model.condition", [](TrainConfig& c, const KeyValue& k) { c.condition = parse_u64(k); }},
      {"langevin.steps", [](TrainConfig& c, const KeyValue& k) { c.langevin_steps = parse_u64(k); }},
      {"langevin.step_size",
       [](TrainConfig& c, const KeyValue& k) { c.langevin_step_size = parse_double(k); }},
      {"langevin.noise_sigma",
       [](TrainConfig& c, const KeyValue& k) { c.langevin_noise_sigma = parse_double(k); }},
      {"aug.perturb_p", [](TrainConfig& c, const KeyValue& k) { c.aug_perturb_p = parse_double(k); }},
      {"aug.perturb_sigma",
       [](TrainConfig& c, const KeyValue& k) { c.aug_perturb_sigma = parse_double(k); }},
      {"aug.reflect_p", [](TrainConfig& c, const KeyValue& k) { c.aug_reflect_p = parse_double(k); }},
      {"aug.reflect_axes",
       [](TrainConfig& c, const KeyValue& k) { c.aug_reflect_axes = parse_size_list(k); }},
      {"aug.flip_p", [](TrainConfig& c, const KeyValue& k) { c.aug_flip_p = parse_double(k); }},
      {"aug.rescale_p", [](TrainConfig& c, const KeyValue& k) { c.aug_rescale_p = parse_double(k); }},
      {"aug.rescale_lo", [](TrainConfig& c, const KeyValue& k) { c.aug_rescale_lo = parse_double(k); }},
      {"aug.rescale_hi", [](TrainConfig& c, const KeyValue& k) { c.aug_rescale_hi = parse_double(k); }},
      {"aug.blur_p", [](TrainConfig& c, const KeyValue& k) { c.aug_blur_p = parse_double(k); }},
      {"aug.blur_sigma_lo",
       [](TrainConfig& c, const KeyValue& k) { c.aug_blur_sigma_lo = parse_double(k); }},
      {"aug.blur_sigma_hi",
       [](TrainConfig& c, const KeyValue& k) { c.aug_blur_sigma_hi = parse_double(k); }},
      {"aug.brightness_p",
       [](TrainConfig& c, const KeyValue& k) { c.aug_brightness_p = parse_double(k); }},
      {"aug.brightness_lo",
       [](TrainConfig& c, const KeyValue& k) { c.aug_brightness_lo = parse_double(k); }},
      {"aug.brightness_hi",
       [](TrainConfig& c, const KeyValue& k) { c.aug_brightness_hi = parse_double(k); }},
      {"buffer.capacity",
       [](TrainConfig& c, const KeyValue& k) { c.buffer_capacity = parse_u64(k); }},
      {"buffer.reuse_probability",
       [](TrainConfig& c, const KeyValue& k) { c.buffer_reuse_probability = parse_double(k); }},
      {"chain_init", [](TrainConfig& c, const KeyValue& k) { c.chain_init = k.value; }},
      {"loss.weight_opt", [](TrainConfig& c, const KeyValue& k) { c.weight_opt = parse_double(k); }},
      {"loss.weight_ent", [](TrainConfig& c, const KeyValue& k) { c.weight_ent = parse_double(k); }},
      {"lr", [](TrainConfig& c, const KeyValue& k) { c.lr = parse_double(k); }},
      {"adam.beta1", [](TrainConfig& c, const KeyValue& k) { c.adam_beta1 = parse_double(k); }},
      {"adam.beta2", [](TrainConfig& c, const KeyValue& k) { c.adam_beta2 = parse_double(k); }},
      {"adam.eps", [](TrainConfig& c, const KeyValue& k) { c.adam_eps = parse_double(k); }},
      {"ema.decay", [](TrainConfig& c, const KeyValue& k) { c.ema_decay = parse_double(k); }},
      {"seed", [](TrainConfig& c, const KeyValue& k) { c.seed = parse_u64(k); }},
      {"divergence.threshold",
       [](TrainConfig& c, const KeyValue& k) { c.divergence_threshold = parse_double(k); }},
      {"divergence.window",
       [](TrainConfig& c, const KeyValue& k) { c.divergence_window = parse_u64(k); }},
      {"checkpoint_every",
       [](TrainConfig& c, const KeyValue& k) { c.checkpoint_every = parse_u64(k); }},
      {"metrics.wallclock",
       [](TrainConfig& c, const KeyValue& k) { c.metrics_wallclock = parse_bool(k); }},
      {"paths.checkpoint", [](TrainConfig& c, const KeyValue& k) { c.checkpoint_name = k.value; }},
      {"paths.metrics", [](TrainConfig& c, const KeyValue& k) { c.metrics_name = k.value; }},
  };
  const auto it = table.find(kv.key);
  if (it == table.end()) fail(kv, "unknown key");
  it->second(*this, kv);
}

void TrainConfig::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lr < 0.0) throw ConfigError("lr must be >= 0");
  if (!in_unit(adam_beta1) || !in_unit(adam_beta2)) throw ConfigError("adam betas must be in [0,1]");
  if (adam_eps <= 0.0) throw ConfigError("adam.eps must be > 0");
  if (!in_unit(ema_decay)) throw ConfigError("ema.decay must be in [0,1]");
  if (!in_unit(buffer_reuse_probability)) {
    throw ConfigError("buffer.reuse_probability must be in [0,1]");
  }
  if (langevin_steps < 1) throw ConfigError("langevin.steps must be >= 1");
  if (langevin_step_size <= 0.0) throw ConfigError("langevin.step_size must be > 0");
  if (langevin_noise_sigma < 0.0) throw ConfigError("langevin.noise_sigma must be >= 0");
  if (divergence_window < 1) throw ConfigError("divergence.window must be >= 1");
  if (chain_init != "buffer" && chain_init != "noise") {
    throw ConfigError("chain_init must be buffer or noise");
  }
  if (data_filter != "none" && data_filter != "x0pos" && data_filter != "x1pos") {
    throw ConfigError("data.filter must be none, x0pos or x1pos");
  }
  if (model_kind != "auto" && model_kind != "mlp" && model_kind != "multiscale" &&
      model_kind != "conditional") {
    throw ConfigError("model.kind must be auto, mlp, multiscale or conditional");
  }
  if (aug_rescale_lo <= 0.0 || aug_rescale_hi > 1.0 || aug_rescale_lo > aug_rescale_hi) {
    throw ConfigError("aug.rescale range must satisfy 0 < lo <= hi <= 1");
  }
  for (double p : {aug_perturb_p, aug_reflect_p, aug_flip_p, aug_rescale_p, aug_blur_p,
                   aug_brightness_p}) {
    if (!in_unit(p)) throw ConfigError("augmentation probabilities must be in [0,1]");
  }
}

std::vector<KeyValue> TrainConfig::to_key_values() const {
  std::vector<KeyValue> out;
  auto put = [&out](const std::string& k, const std::string& v) { out.push_back({k, v, 0}); };
  put("dataset", dataset);
  put("data.n", std::to_string(data_n));
  put("data.filter", data_filter);
  put("batch_size", std::to_string(batch_size));
  put("iterations", std::to_string(iterations));
  put("model.kind", model_kind);
  put("model.hidden", fmt_list(hidden));
  put("model.scales", fmt_list(scales));
  put("model.condition_dim", std::to_string(condition_dim));
  put("model.condition", std::to_string(condition));
  put("langevin.steps", std::to_string(langevin_steps));
  put("langevin.step_size", fmt_double(langevin_step_size));
  put("langevin.noise_sigma", fmt_double(langevin_noise_sigma));
  put("aug.perturb_p", fmt_double(aug_perturb_p));
  put("aug.perturb_sigma", fmt_double(aug_perturb_sigma));
  put("aug.reflect_p", fmt_double(aug_reflect_p));
  put("aug.reflect_axes", fmt_list(aug_reflect_axes));
  put("aug.flip_p", fmt_double(aug_flip_p));
  put("aug.rescale_p", fmt_double(aug_rescale_p));
  put("aug.rescale_lo", fmt_double(aug_rescale_lo));
  put("aug.rescale_hi", fmt_double(aug_rescale_hi));
  put("aug.blur_p", fmt_double(aug_blur_p));
  put("aug.blur_sigma_lo", fmt_double(aug_blur_sigma_lo));
  put("aug.blur_sigma_hi", fmt_double(aug_blur_sigma_hi));
  put("aug.brightness_p", fmt_double(aug_brightness_p));
  put("aug.brightness_lo", fmt_double(aug_brightness_lo));
  put("aug.brightness_hi", fmt_double(aug_brightness_hi));
  put("buffer.capacity", std::to_string(buffer_capacity));
  put("buffer.reuse_probability", fmt_double(buffer_reuse_probability));
  put("chain_init", chain_init);
  put("loss.weight_opt", fmt_double(weight_opt));
  put("loss.weight_ent", fmt_double(weight_ent));
  put("lr", fmt_double(lr));
  put("adam.beta1", fmt_double(adam_beta1));
  put("adam.beta2", fmt_double(adam_beta2));
  put("adam.eps", fmt_double(adam_eps));
  put("ema.decay", fmt_double(ema_decay));
  put("seed", std::to_string(seed));
  put("divergence.threshold", fmt_double(divergence_threshold));
  put("divergence.window", std::to_string(divergence_window));
  put("checkpoint_every", std::to_string(checkpoint_every));
  put("metrics.wallclock", metrics_wallclock ? "true" : "false");
  put("paths.checkpoint", checkpoint_name);
  put("paths.metrics", metrics_name);
  return out;
}

TrainConfig load_train_config(const std::optional<std::filesystem::path>& file,
                              const std::vector<std::string>& overrides) {
  TrainConfig cfg;
  if (file) {
    for (const KeyValue& kv : parse_file(*file)) cfg.set(kv);
  }
  for (const std::string& o : overrides) cfg.set(parse_override(o));
  cfg.validate();
  return cfg;
}

void write_effective_config(const std::filesystem::path& path, const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write effective config: " + path.string());
  out << "# effective configuration (re-runnable)\n";
  for (const KeyValue& kv : cfg.to_key_values()) out << kv.key << " = " << kv.value << "\n";
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace ebmforge::config
