#include "color_sieve/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "color_sieve/rng.hpp"

namespace color_sieve {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error(fmt::format("config key '{}': expected a non-negative integer, got '{}'", key, v));
  }
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error(fmt::format("config key '{}': expected a number, got '{}'", key, v));
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(fmt::format("config key '{}': expected true/false, got '{}'", key, v));
}

std::string real(double v) { return fmt::format("{:.17g}", v); }

template <typename T, typename Fn>
std::string join(const std::vector<T>& items, Fn&& fn) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += fn(items[i]);
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string_view source) {
  KeyValueConfig cfg;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(fmt::format("{}:{}: unterminated section header", source, line_no));
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw Error(fmt::format("{}:{}: empty section name", source, line_no));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(fmt::format("{}:{}: expected 'key = value'", source, line_no));
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw Error(fmt::format("{}:{}: empty key", source, line_no));
    if (section.empty()) throw Error(fmt::format("{}:{}: key '{}' outside a section", source, line_no, key));
    cfg.values_[section + "." + key] = trim(std::string_view(line).substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open config '{}'", path.string()));
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), path.string());
}

void KeyValueConfig::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw Error(fmt::format("override '{}' is not of the form section.key=value", assignment));
  }
  const std::string key = trim(assignment.substr(0, eq));
  if (key.find('.') == std::string::npos) {
    throw Error(fmt::format("override key '{}' must be section.key", key));
  }
  values_[key] = trim(assignment.substr(eq + 1));
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

RunConfig RunConfig::from(const KeyValueConfig& kv) {
  RunConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto u64 = [](auto& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) {
      field = static_cast<std::remove_reference_t<decltype(field)>>(to_u64(k, v));
    };
  };
  auto dbl = [](double& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) { field = to_real(k, v); };
  };
  auto str = [](std::string& field) -> Setter {
    return [&field](const std::string&, const std::string& v) { field = v; };
  };
  auto flag = [](bool& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) { field = to_bool(k, v); };
  };

  const std::map<std::string, Setter> setters{
      {"run.seed", u64(c.seed)},
      {"run.workers", u64(c.workers)},
      {"data.synthetic", flag(c.synthetic)},
      {"data.train", str(c.train_path)},
      {"data.prior", str(c.prior_path)},
      {"data.down", str(c.down_path)},
      {"data.eval_down", str(c.eval_down_path)},
      {"data.eval_train", str(c.eval_train_path)},
      {"data.target_label", str(c.target_label)},
      {"data.context_length", u64(c.context_length)},
      {"synth.alphabet_size", u64(c.alphabet_size)},
      {"synth.sharpness", dbl(c.sharpness)},
      {"synth.overlap", dbl(c.overlap)},
      {"synth.target_fraction", dbl(c.target_fraction)},
      {"synth.train_docs", u64(c.train_docs)},
      {"synth.prior_docs", u64(c.prior_docs)},
      {"synth.down_docs", u64(c.down_docs)},
      {"synth.eval_down_docs", u64(c.eval_down_docs)},
      {"synth.eval_train_docs", u64(c.eval_train_docs)},
      {"synth.min_doc_len", u64(c.min_doc_len)},
      {"synth.max_doc_len", u64(c.max_doc_len)},
      {"model.aux_order", u64(c.aux_order)},
      {"model.alpha", dbl(c.alpha)},
      {"model.conditional",
       [&c](const std::string& k, const std::string& v) {
         if (v == "interpolate") {
           c.conditional.kind = ConditionalMode::Kind::kInterpolate;
         } else if (v == "count_add") {
           c.conditional.kind = ConditionalMode::Kind::kCountAdd;
         } else {
           throw Error(fmt::format("config key '{}': expected interpolate or count_add", k));
         }
       }},
      {"model.lambda", dbl(c.conditional.lambda)},
      {"model.count_add_weight", u64(c.conditional.weight)},
      {"select.method",
       [&c](const std::string&, const std::string& v) { c.method = parse_method(v); }},
      {"select.n", u64(c.n)},
      {"select.tau", u64(c.tau)},
      {"select.batch_size", u64(c.batch_size)},
      {"select.dsir_buckets", u64(c.dsir_buckets)},
      {"eval.target_order", u64(c.target_order)},
      {"eval.target_alpha", dbl(c.target_alpha)},
      {"eval.methods",
       [&c](const std::string& k, const std::string& v) {
         c.sweep_methods.clear();
         for (const auto& m : split_list(v)) c.sweep_methods.push_back(parse_method(m));
         if (c.sweep_methods.empty()) throw Error(fmt::format("config key '{}' is empty", k));
       }},
      {"eval.taus",
       [&c](const std::string& k, const std::string& v) {
         c.sweep_taus.clear();
         for (const auto& t : split_list(v)) c.sweep_taus.push_back(to_u64(k, t));
         if (c.sweep_taus.empty()) throw Error(fmt::format("config key '{}' is empty", k));
       }},
      {"eval.shuffle_curves", flag(c.shuffle_curves)},
      {"cost.m", dbl(c.cost_m)},
      {"cost.L", dbl(c.cost_L)},
  };

  for (const auto& [key, value] : kv.values()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw Error(fmt::format("unknown config key '{}'", key));
    it->second(key, value);
  }
  if (c.context_length < 2) throw Error("data.context_length must be at least 2");
  if (c.workers == 0) throw Error("run.workers must be positive");
  if (!c.synthetic) {
    for (const auto* p : {&c.train_path, &c.prior_path, &c.down_path, &c.eval_down_path,
                          &c.eval_train_path}) {
      if (p->empty()) throw Error("data.synthetic = false requires all five corpus paths");
    }
  }
  return c;
}

KeyValueConfig RunConfig::to_key_values() const {
  KeyValueConfig kv;
  kv.set("run.seed", std::to_string(seed));
  kv.set("data.synthetic", synthetic ? "true" : "false");
  kv.set("data.train", train_path);
  kv.set("data.prior", prior_path);
  kv.set("data.down", down_path);
  kv.set("data.eval_down", eval_down_path);
  kv.set("data.eval_train", eval_train_path);
  kv.set("data.target_label", target_label);
  kv.set("data.context_length", std::to_string(context_length));
  kv.set("synth.alphabet_size", std::to_string(alphabet_size));
  kv.set("synth.sharpness", real(sharpness));
  kv.set("synth.overlap", real(overlap));
  kv.set("synth.target_fraction", real(target_fraction));
  kv.set("synth.train_docs", std::to_string(train_docs));
  kv.set("synth.prior_docs", std::to_string(prior_docs));
  kv.set("synth.down_docs", std::to_string(down_docs));
  kv.set("synth.eval_down_docs", std::to_string(eval_down_docs));
  kv.set("synth.eval_train_docs", std::to_string(eval_train_docs));
  kv.set("synth.min_doc_len", std::to_string(min_doc_len));
  kv.set("synth.max_doc_len", std::to_string(max_doc_len));
  kv.set("model.aux_order", std::to_string(aux_order));
  kv.set("model.alpha", real(alpha));
  kv.set("model.conditional",
         conditional.kind == ConditionalMode::Kind::kInterpolate ? "interpolate" : "count_add");
  kv.set("model.lambda", real(conditional.lambda));
  kv.set("model.count_add_weight", std::to_string(conditional.weight));
  kv.set("select.method", std::string(method_name(method)));
  kv.set("select.n", std::to_string(n));
  kv.set("select.tau", std::to_string(tau));
  kv.set("select.batch_size", std::to_string(batch_size));
  kv.set("select.dsir_buckets", std::to_string(dsir_buckets));
  kv.set("eval.target_order", std::to_string(target_order));
  kv.set("eval.target_alpha", real(target_alpha));
  kv.set("eval.methods", join(sweep_methods, [](Method m) { return std::string(method_name(m)); }));
  kv.set("eval.taus", join(sweep_taus, [](std::size_t t) { return std::to_string(t); }));
  kv.set("eval.shuffle_curves", shuffle_curves ? "true" : "false");
  kv.set("cost.m", real(cost_m));
  kv.set("cost.L", real(cost_L));
  return kv;
}

std::string RunConfig::canonical() const {
  // run.workers is excluded: outputs do not depend on it.
  const auto kv = to_key_values();
  std::string out, section;
  for (const auto& [key, value] : kv.values()) {
    const auto dot = key.find('.');
    if (key.substr(0, dot) != section) {
      section = key.substr(0, dot);
      out += "[" + section + "]\n";
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

std::string RunConfig::hash() const { return fmt::format("{:016x}", fnv1a64(canonical())); }

SynthSpec RunConfig::synth_spec() const {
  auto spec = SynthSpec::with_random_transitions(stage_seed("synth"), alphabet_size, sharpness, overlap);
  spec.mixture = {1.0 - target_fraction, target_fraction};
  spec.domain_labels = {"A", "B"};
  spec.target_domain = 1;
  spec.train_docs = train_docs;
  spec.prior_docs = prior_docs;
  spec.down_docs = down_docs;
  spec.eval_down_docs = eval_down_docs;
  spec.eval_train_docs = eval_train_docs;
  spec.min_doc_len = min_doc_len;
  spec.max_doc_len = max_doc_len;
  return spec;
}

std::uint64_t RunConfig::stage_seed(std::string_view stage) const {
  return substream_seed(seed, stage);
}

ArtifactMeta RunConfig::meta(std::string_view stage) const {
  ArtifactMeta m;
  m.config_hash = hash();
  m.seed = stage_seed(stage);
  return m;
}

}  // namespace color_sieve
