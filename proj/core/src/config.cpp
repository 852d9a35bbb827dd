#include "ntta/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "ntta/errors.hpp"

namespace ntta {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_list(const std::vector<double>& xs) {
  if (!xs.empty() && std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); }))
    return fmt_double(xs.front());
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + fmt_double(xs[i]);
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Get>
Field size_field(Get member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            member(c) = static_cast<std::size_t>(parse_u64(k, v));
          },
          [member](const ExperimentConfig& c) {
            return std::to_string(member(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Get>
Field double_field(Get member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) { member(c) = parse_double(k, v); },
          [member](const ExperimentConfig& c) { return fmt_double(member(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Get>
Field bool_field(Get member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) { member(c) = parse_bool(k, v); },
          [member](const ExperimentConfig& c) {
            return std::string(member(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          }};
}

const std::vector<std::pair<std::string, Field>>& registry() {
  static const std::vector<std::pair<std::string, Field>> fields = [] {
    std::vector<std::pair<std::string, Field>> f;
    auto add = [&](const std::string& key, Field field) { f.emplace_back(key, std::move(field)); };
    add("model.channels", size_field([](ExperimentConfig& c) -> auto& { return c.model.channels; }));
    add("model.time_len", size_field([](ExperimentConfig& c) -> auto& { return c.model.time_len; }));
    add("model.patch_len", size_field([](ExperimentConfig& c) -> auto& { return c.model.patch_len; }));
    add("model.d_model", size_field([](ExperimentConfig& c) -> auto& { return c.model.d_model; }));
    add("model.n_layers", size_field([](ExperimentConfig& c) -> auto& { return c.model.n_layers; }));
    add("model.n_heads", size_field([](ExperimentConfig& c) -> auto& { return c.model.n_heads; }));
    add("model.n_classes", size_field([](ExperimentConfig& c) -> auto& { return c.model.n_classes; }));
    add("model.ff_hidden", size_field([](ExperimentConfig& c) -> auto& { return c.model.ff_hidden; }));
    add("model.dropout", double_field([](ExperimentConfig& c) -> auto& { return c.model.dropout; }));
    add("mdm.enabled", bool_field([](ExperimentConfig& c) -> auto& { return c.mdm_enabled; }));
    add("mdm.levels", size_field([](ExperimentConfig& c) -> auto& { return c.mdm.levels; }));
    add("mdm.kernel", size_field([](ExperimentConfig& c) -> auto& { return c.mdm.kernel; }));
    add("mdm.rank", size_field([](ExperimentConfig& c) -> auto& { return c.mdm.rank; }));
    add("sd.enabled", bool_field([](ExperimentConfig& c) -> auto& { return c.sd.enabled; }));
    add("sd.lambda", double_field([](ExperimentConfig& c) -> auto& { return c.sd.lambda; }));
    add("sd.temperature", double_field([](ExperimentConfig& c) -> auto& { return c.sd.temperature; }));
    add("tent.enabled", bool_field([](ExperimentConfig& c) -> auto& { return c.tent.enabled; }));
    add("tent.lr", double_field([](ExperimentConfig& c) -> auto& { return c.tent.options.lr; }));
    add("tent.momentum", double_field([](ExperimentConfig& c) -> auto& { return c.tent.options.momentum; }));
    add("tent.steps", size_field([](ExperimentConfig& c) -> auto& { return c.tent.options.steps_per_batch; }));
    add("tent.mode", {[](ExperimentConfig& c, const std::string&, const std::string& v) {
                        c.tent.options.mode = parse_adapt_mode(v);
                      },
                      [](const ExperimentConfig& c) { return to_string(c.tent.options.mode); }});
    add("tent.batch_size", size_field([](ExperimentConfig& c) -> auto& { return c.tent.batch_size; }));
    add("train.lr", double_field([](ExperimentConfig& c) -> auto& { return c.train.lr; }));
    add("train.weight_decay", double_field([](ExperimentConfig& c) -> auto& { return c.train.weight_decay; }));
    add("train.epochs", size_field([](ExperimentConfig& c) -> auto& { return c.train.epochs; }));
    add("train.batch_size", size_field([](ExperimentConfig& c) -> auto& { return c.train.batch_size; }));
    add("data.path", {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.path = v; },
                      [](const ExperimentConfig& c) { return c.data.path; }});
    add("data.n_trials", size_field([](ExperimentConfig& c) -> auto& { return c.data.n_trials; }));
    add("data.stream_trials", size_field([](ExperimentConfig& c) -> auto& { return c.data.stream_trials; }));
    add("data.noise_sd", double_field([](ExperimentConfig& c) -> auto& { return c.data.noise_sd; }));
    add("data.levels", size_field([](ExperimentConfig& c) -> auto& { return c.data.levels; }));
    add("data.normalization", {[](ExperimentConfig& c, const std::string&, const std::string& v) {
                                 c.data.normalization = parse_normalization(v);
                               },
                               [](const ExperimentConfig& c) { return to_string(c.data.normalization); }});
    add("data.seed", {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.seed = parse_u64(k, v); },
                      [](const ExperimentConfig& c) { return std::to_string(c.data.seed); }});
    add("data.split", {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                         const auto parts = split_list(v);
                         if (parts.size() != 3) throw ConfigError("config: data.split expects three fractions");
                         for (std::size_t i = 0; i < 3; ++i) c.data.fractions[i] = parse_double(k, parts[i]);
                       },
                       [](const ExperimentConfig& c) {
                         return fmt_double(c.data.fractions[0]) + "," + fmt_double(c.data.fractions[1]) + "," +
                                fmt_double(c.data.fractions[2]);
                       }});
    auto per_channel = [&](const std::string& key, std::vector<double> ShiftSpec::*member) {
      add(key, {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
                  std::vector<double> xs;
                  for (const auto& p : split_list(v)) xs.push_back(parse_double(k, p));
                  c.shift.*member = xs;
                },
                [member](const ExperimentConfig& c) { return fmt_list(c.shift.*member); }});
    };
    per_channel("shift.gain", &ShiftSpec::gain);
    per_channel("shift.offset", &ShiftSpec::offset);
    add("shift.noise_sd", double_field([](ExperimentConfig& c) -> auto& { return c.shift.noise_sd; }));
    add("shift.schedule", {[](ExperimentConfig& c, const std::string&, const std::string& v) {
                             c.shift.schedule = parse_drift_schedule(v);
                           },
                           [](const ExperimentConfig& c) { return to_string(c.shift.schedule); }});
    add("shift.at_batch", size_field([](ExperimentConfig& c) -> auto& { return c.shift.at_batch; }));
    add("shift.ramp_batches", size_field([](ExperimentConfig& c) -> auto& { return c.shift.ramp_batches; }));
    add("shift.seed", {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.shift.seed = parse_u64(k, v); },
                       [](const ExperimentConfig& c) { return std::to_string(c.shift.seed); }});
    add("seeds", {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                    c.seeds.clear();
                    for (const auto& p : split_list(v)) c.seeds.push_back(parse_u64(k, p));
                  },
                  [](const ExperimentConfig& c) {
                    std::string out;
                    for (std::size_t i = 0; i < c.seeds.size(); ++i) out += (i ? "," : "") + std::to_string(c.seeds[i]);
                    return out;
                  }});
    return f;
  }();
  return fields;
}

}  // namespace

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m = model;
  m.sd_enabled = sd.enabled;
  m.mdm = mdm_enabled ? std::optional<MdmConfig>(mdm) : std::nullopt;
  return m;
}

SynthSpec ExperimentConfig::synth_spec() const {
  SynthSpec s;
  s.n_classes = model.n_classes;
  s.channels = model.channels;
  s.time_len = model.time_len;
  s.noise_sd = data.noise_sd;
  s.seed = data.seed;
  s.levels = data.levels;
  s.normalization = data.normalization;
  return s;
}

void ExperimentConfig::validate() const {
  model_config().validate();
  if (data.path.empty()) synth_spec().validate();
  const double total = data.fractions[0] + data.fractions[1] + data.fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("config: data.split must sum to 1");
  if (train.batch_size < 2) throw ConfigError("config: train.batch_size must be >= 2");
  if (tent.batch_size == 0) throw ConfigError("config: tent.batch_size must be >= 1");
  if (tent.options.lr <= 0.0) throw ConfigError("config: tent.lr must be positive");
  if (tent.options.steps_per_batch == 0) throw ConfigError("config: tent.steps must be >= 1");
  if (sd.temperature <= 0.0) throw ConfigError("config: sd.temperature must be positive");
  if (seeds.empty()) throw ConfigError("config: at least one seed is required");
  for (const auto* v : {&shift.gain, &shift.offset})
    if (!v->empty() && v->size() != 1 && v->size() != model.channels)
      throw ConfigError("config: per-channel shift lists need " + std::to_string(model.channels) + " entries");
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  std::map<std::string, const Field*> lookup;
  for (const auto& [k, f] : registry()) lookup[k] = &f;
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = lookup.find(key);
    if (it == lookup.end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    it->second->set(cfg, key, value);
  }
  // Single-value shift lists broadcast over channels.
  for (auto* v : {&cfg.shift.gain, &cfg.shift.offset})
    if (v->size() == 1) v->assign(cfg.model.channels, v->front());
  if (!seen.count("shift.gain") && cfg.shift.gain.size() != cfg.model.channels)
    cfg.shift.gain.assign(cfg.model.channels, cfg.shift.gain.empty() ? 1.0 : cfg.shift.gain.front());
  if (!seen.count("shift.offset") && cfg.shift.offset.size() != cfg.model.channels)
    cfg.shift.offset.assign(cfg.model.channels, cfg.shift.offset.empty() ? 0.0 : cfg.shift.offset.front());
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return parse(std::string(bytes.begin(), bytes.end()));
}

std::string ExperimentConfig::serialize() const {
  std::string out;
  for (const auto& [k, f] : registry()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  const auto text = serialize();
  const auto h = detail::fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [key, f] : registry()) out.push_back(key);
    return out;
  }();
  return k;
}

}  // namespace ntta
