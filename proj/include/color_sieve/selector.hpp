#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "color_sieve/artifact.hpp"
#include "color_sieve/corpus.hpp"
#include "color_sieve/ngram_lm.hpp"
#include "color_sieve/scorer.hpp"

namespace color_sieve {

enum class Method {
  kColorFilter,
  kColorFilterBatchwise,
  kConditionalOnly,
  kRhoDown,
  kRhoDownPrior,
  kDsir,
  kRandom,
  kOnlineColor,
};

std::string_view method_name(Method method);
Method parse_method(std::string_view name);

/// True for methods that select from a score file (color_filter,
/// conditional_only, color_filter_batchwise, random).
bool selects_from_scores(Method method);

struct SelectionConfig {
  std::size_t n = 0;
  /// Candidates considered per selected sequence; the pool is tau * n.
  std::size_t tau = 1;
  /// Batch size for batchwise, RHO-down and online modes. 0 means n.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  Method method = Method::kColorFilter;

  std::size_t pool_size() const { return tau * n; }
  std::size_t effective_batch() const { return batch_size == 0 ? n : batch_size; }
  void validate() const;
};

/// Selected sequence ids in selection order, with the score each was selected
/// on. Ties are always broken by (score, seq_id).
struct SelectionResult {
  Method method = Method::kColorFilter;
  std::size_t n = 0;
  std::size_t tau = 1;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> selected;
  std::vector<double> scores;
  /// Worst score that made the cut; absent for unscored methods.
  std::optional<double> threshold;
  nlohmann::ordered_json diagnostics = nlohmann::ordered_json::object();
  ArtifactMeta meta;

  nlohmann::ordered_json to_json() const;
  static SelectionResult from_json(const nlohmann::json& j);
};

void save_selection(const SelectionResult& result, const std::filesystem::path& path);
SelectionResult load_selection(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Primitives

/// First k entries of a seeded uniform permutation of [0, N) (partial
/// Fisher-Yates). A longer prefix with the same seed extends a shorter one.
std::vector<std::size_t> permutation_prefix(std::size_t population, std::size_t k,
                                            std::uint64_t seed);

/// Indices of `ids` sorted by id.
std::vector<std::size_t> canonical_order(std::span<const std::string> ids);

/// Uniform subset of `size` indices into `ids`, in draw order. The draw runs
/// over the canonical (sorted) id order, so it ignores input order.
std::vector<std::size_t> sample_subset(std::span<const std::string> ids, std::size_t size,
                                       std::uint64_t seed);

/// Indices of the k smallest (scores[i], ids[i]) pairs, ascending. Uses a
/// bounded max-heap, O(N log k). Throws on NaN scores or k > N.
std::vector<std::size_t> bottom_k(std::span<const double> scores, std::span<const std::string> ids,
                                  std::size_t k);

// ---------------------------------------------------------------------------
// Score-file selectors. `pool` is D_tau in draw order.

SelectionResult select_color_filter(std::span<const ScoreRecord> pool, std::size_t n);
/// Ranks by nll_cond alone (the marginal term is taken as zero).
SelectionResult select_conditional_only(std::span<const ScoreRecord> pool, std::size_t n);
/// Splits the pool into consecutive batches of tau * b and keeps the bottom b
/// of each; the last batch shrinks when b does not divide n.
SelectionResult select_color_batchwise(std::span<const ScoreRecord> pool, std::size_t n,
                                       std::size_t tau, std::size_t batch_size);
SelectionResult select_random(std::span<const std::string> ids, std::size_t n, std::uint64_t seed);

/// Samples D_tau from all records with the config seed, then dispatches to the
/// score-based selector named by config.method (color_filter, conditional_only,
/// color_filter_batchwise or random).
SelectionResult select_from_scores(std::span<const ScoreRecord> records,
                                   const SelectionConfig& config);

// ---------------------------------------------------------------------------
// Model-driven selectors. `train` is the full candidate corpus.

struct OnlineSelectorOptions {
  /// Order and alpha of the marginal that starts from zero counts (RHO-down).
  std::size_t marginal_order = 3;
  double marginal_alpha = 0.1;
  std::size_t workers = 1;
};

/// Batches B_t are consecutive slices of one seeded permutation of `train`, so
/// no candidate is seen twice. Each round keeps the bottom b by
/// nll(cond) - nll(marginal_t) and then trains the marginal on them.
/// Pass a prior+downstream conditional for RHO-down + prior.
SelectionResult select_rho_down(const LanguageModel& cond, std::span<const TokenSequence> train,
                                const SelectionConfig& config,
                                const OnlineSelectorOptions& options = {});

/// Both models start from the prior and are updated on every selected batch;
/// the conditional is a lambda-interpolation with the downstream model.
/// diagnostics["rounds"] holds per-round mean scores.
SelectionResult select_online_color(const NGramModel& prior, std::span<const TokenSequence> down,
                                    std::span<const TokenSequence> train,
                                    const SelectionConfig& config, double lambda,
                                    const OnlineSelectorOptions& options = {});

/// Hashed unigram + bigram importance weights between a downstream and a
/// candidate distribution, each an add-one smoothed categorical over buckets.
class DsirWeights {
 public:
  DsirWeights(std::span<const TokenSequence> train, std::span<const TokenSequence> down,
              std::size_t buckets);

  /// sum over features f of x: log p_down[f] - log p_train[f].
  double log_weight(std::span<const TokenId> tokens) const;
  std::size_t buckets() const { return log_ratio_.size(); }

  static std::size_t bucket_of(std::span<const TokenId> ngram, std::size_t buckets);

 private:
  std::vector<double> log_ratio_;
};

struct DsirOptions {
  std::size_t buckets = std::size_t{1} << 16;
  /// Multiplier on the Gumbel perturbation; 0 gives a deterministic top-n.
  double gumbel_scale = 1.0;
};

/// Top-n of log_weight(x) + Gumbel noise, i.e. sampling without replacement
/// proportionally to the importance weights.
SelectionResult select_dsir(std::span<const TokenSequence> train,
                            std::span<const TokenSequence> down, std::size_t n, std::uint64_t seed,
                            const DsirOptions& options = {});

}  // namespace color_sieve
