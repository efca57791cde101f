#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "color_sieve/corpus.hpp"
#include "color_sieve/evaluator.hpp"
#include "color_sieve/ngram_lm.hpp"
#include "color_sieve/selector.hpp"

namespace color_sieve {

// Config grammar (one setting per line):
//
//   # comment            ; comment
//   [section]
//   key = value
//
// Keys are addressed as "section.key". Whitespace around keys and values is
// trimmed; values run to the end of the line. Lists are comma separated.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, std::string_view source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  /// Override from a "section.key=value" string.
  void set_assignment(std::string_view assignment);
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  std::optional<std::string> get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Everything an end-to-end run depends on. Unset keys take the defaults of
/// the synthetic two-domain benchmark.
struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  // [data]  Paths to JSONL corpora; when `synthetic` is true they are generated.
  bool synthetic = true;
  std::string train_path, prior_path, down_path, eval_down_path, eval_train_path;
  std::string target_label = "B";
  std::size_t context_length = 128;

  // [synth]
  std::size_t alphabet_size = 16;
  double sharpness = 2.0;
  double overlap = 0.25;
  double target_fraction = 0.1;
  std::size_t train_docs = 20000;
  std::size_t prior_docs = 5000;
  std::size_t down_docs = 100;
  std::size_t eval_down_docs = 200;
  std::size_t eval_train_docs = 200;
  std::size_t min_doc_len = 127;
  std::size_t max_doc_len = 200;

  // [model]
  std::size_t aux_order = 3;
  double alpha = 0.1;
  ConditionalMode conditional;

  // [select]
  Method method = Method::kColorFilter;
  std::size_t n = 1000;
  std::size_t tau = 8;
  std::size_t batch_size = 0;
  std::size_t dsir_buckets = std::size_t{1} << 16;

  // [eval]
  std::size_t target_order = 5;
  double target_alpha = 0.1;
  std::vector<Method> sweep_methods{Method::kColorFilter, Method::kRandom};
  std::vector<std::size_t> sweep_taus{1, 2, 4, 8, 16};
  bool shuffle_curves = false;

  // [cost]  Sizes in billions of tokens, as in the compute tables.
  double cost_m = 3.1;
  double cost_L = 5.5;

  static RunConfig from(const KeyValueConfig& kv);
  KeyValueConfig to_key_values() const;

  /// 16 hex digits of FNV-1a over the canonical resolved form; equal
  /// configurations hash equal no matter how they were written.
  std::string hash() const;
  std::string canonical() const;

  SynthSpec synth_spec() const;
  std::uint64_t stage_seed(std::string_view stage) const;
  ArtifactMeta meta(std::string_view stage) const;
};

}  // namespace color_sieve
