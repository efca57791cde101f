#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "color_sieve/artifact.hpp"
#include "color_sieve/corpus.hpp"
#include "color_sieve/seq_store.hpp"

namespace color_sieve {

/// Exact sequence likelihoods. Position i of a sequence is predicted from the
/// k-1 tokens before it; positions before the start of the sequence read as a
/// padding symbol that is distinct from every token id. All positions of the
/// sequence are scored.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::size_t vocab_size() const = 0;

  /// probs[i] = P(seq[i] | seq[..i]) for every position.
  virtual void token_probs(std::span<const TokenId> seq, std::span<double> probs) const = 0;

  /// Sum of log token probabilities. Throws Error on an empty sequence.
  virtual double log_prob(std::span<const TokenId> seq) const;

  virtual std::unique_ptr<LanguageModel> clone() const = 0;
};

/// Analytic uniform predictor, P(v | ctx) = 1/V.
class UniformModel final : public LanguageModel {
 public:
  explicit UniformModel(std::size_t vocab_size = kByteVocabSize);

  std::size_t vocab_size() const override { return vocab_size_; }
  void token_probs(std::span<const TokenId> seq, std::span<double> probs) const override;
  double log_prob(std::span<const TokenId> seq) const override;
  std::unique_ptr<LanguageModel> clone() const override;

 private:
  std::size_t vocab_size_;
};

/// Add-alpha smoothed count model of order k:
///   P(v | ctx) = (count(ctx, v) + alpha) / (total(ctx) + alpha * V).
class NGramModel final : public LanguageModel {
 public:
  struct ContextCounts {
    std::uint64_t total = 0;
    /// (token, count) sorted by token; every count >= 1.
    std::vector<std::pair<TokenId, std::uint64_t>> entries;

    bool operator==(const ContextCounts&) const = default;
  };

  NGramModel(std::size_t order, double alpha, std::size_t vocab_size = kByteVocabSize);

  static NGramModel train(SequenceSource& corpus, std::size_t order, double alpha,
                          std::size_t vocab_size = kByteVocabSize);
  static NGramModel train(std::span<const TokenSequence> corpus, std::size_t order, double alpha,
                          std::size_t vocab_size = kByteVocabSize);

  /// Counts every position of `seq`, exactly as train() would have.
  void add_counts(std::span<const TokenId> seq);
  /// Adds another model's counts. Orders, alpha and vocabularies must match.
  void merge(const NGramModel& other, std::uint64_t times = 1);

  std::size_t vocab_size() const override { return vocab_size_; }
  void token_probs(std::span<const TokenId> seq, std::span<double> probs) const override;
  double log_prob(std::span<const TokenId> seq) const override;
  std::unique_ptr<LanguageModel> clone() const override;

  /// P(token | context) for an explicit context of exactly order-1 entries.
  /// `padding_token()` stands for positions before the sequence start.
  double prob(std::span<const TokenId> context, TokenId token) const;
  std::uint64_t count(std::span<const TokenId> context, TokenId token) const;
  std::uint64_t context_total(std::span<const TokenId> context) const;

  std::size_t order() const { return order_; }
  double alpha() const { return alpha_; }
  std::uint64_t trained_tokens() const { return trained_tokens_; }
  std::size_t num_contexts() const { return table_.size(); }
  /// Context symbol for "before the sequence start"; equals vocab_size().
  TokenId padding_token() const { return static_cast<TokenId>(vocab_size_); }

  /// Contexts in canonical order, each as its order-1 symbols.
  std::vector<std::pair<std::vector<TokenId>, const ContextCounts*>> sorted_contexts() const;
  /// Installs counts for one context (deserialization). Replaces existing counts.
  void set_context(std::span<const TokenId> context, ContextCounts counts);
  void set_trained_tokens(std::uint64_t n) { trained_tokens_ = n; }

  bool operator==(const NGramModel& other) const;

 private:
  std::uint64_t pack(std::span<const TokenId> context) const;
  std::vector<TokenId> unpack(std::uint64_t key) const;
  std::uint64_t push(std::uint64_t key, TokenId token) const {
    return ((key << bits_) | token) & mask_;
  }
  std::uint64_t initial_key() const { return initial_key_; }
  double prob_key(std::uint64_t key, TokenId token) const;

  std::size_t order_;
  double alpha_;
  std::size_t vocab_size_;
  unsigned bits_;
  std::uint64_t mask_;
  std::uint64_t initial_key_;
  std::uint64_t trained_tokens_ = 0;
  std::unordered_map<std::uint64_t, ContextCounts> table_;
};

/// Per-token mixture sum_i w_i P_i(v | ctx).
class InterpolatedModel final : public LanguageModel {
 public:
  InterpolatedModel(std::vector<NGramModel> components, std::vector<double> weights);

  std::size_t vocab_size() const override;
  void token_probs(std::span<const TokenId> seq, std::span<double> probs) const override;
  std::unique_ptr<LanguageModel> clone() const override;

  std::span<const NGramModel> components() const { return components_; }
  NGramModel& component(std::size_t i) { return components_.at(i); }
  std::span<const double> weights() const { return weights_; }

 private:
  std::vector<NGramModel> components_;
  std::vector<double> weights_;
};

/// How the conditional (prior adapted toward downstream data) is built.
struct ConditionalMode {
  enum class Kind { kInterpolate, kCountAdd };
  Kind kind = Kind::kInterpolate;
  /// Interpolation weight on the downstream model, in (0, 1].
  double lambda = 0.5;
  /// Count-add mode: downstream counts are added this many times.
  std::uint64_t weight = 1;
};

/// Interpolate: mixture [(prior, 1-lambda), (train(down), lambda)] where the
/// downstream model shares the prior's order and alpha; lambda == 1 yields the
/// downstream model alone. Count-add: prior with downstream counts added
/// `weight` times.
std::unique_ptr<LanguageModel> make_conditional(const NGramModel& prior,
                                                std::span<const TokenSequence> down,
                                                const ConditionalMode& mode);

// Model file (text, UTF-8):
//
//   color-sieve-lm 1
//   meta <json>
//   <body>
//
// ngram body:
//   model ngram
//   order <k>
//   alpha <%.17g>
//   vocab <V>
//   trained_tokens <n>
//   contexts <count>
//   <ctx symbols space separated, '^' = padding>\t<total>\t<tok>:<count> ...
//
// interpolated body:
//   model interpolated
//   components <count>
//   then per component: "weight <%.17g>" followed by an ngram body
//
// Contexts are written in ascending packed-key order, so equal models produce
// identical files.

void save_model(const LanguageModel& model, const std::filesystem::path& path,
                const ArtifactMeta& meta);

struct LoadedModel {
  std::unique_ptr<LanguageModel> model;
  ArtifactMeta meta;
};

LoadedModel load_model(const std::filesystem::path& path);
/// Loads a file that must contain a plain n-gram model.
NGramModel load_ngram(const std::filesystem::path& path, ArtifactMeta* meta = nullptr);

}  // namespace color_sieve
