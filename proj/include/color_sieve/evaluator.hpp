#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "color_sieve/cost_model.hpp"
#include "color_sieve/corpus.hpp"
#include "color_sieve/ngram_lm.hpp"
#include "color_sieve/scorer.hpp"
#include "color_sieve/selector.hpp"

namespace color_sieve {

/// Target model trained only on the selected sequences.
NGramModel train_target(std::span<const TokenSequence> selection, std::size_t order, double alpha);

/// Mean negative log-likelihood per token, in nats.
double held_out_ce(const LanguageModel& model, std::span<const TokenSequence> eval);

/// Fraction of `selected` whose domain label equals `target`. Unlabelled
/// sequences count as off-target; ids missing from `labels` are an error.
double selection_precision(std::span<const std::string> selected,
                           const std::unordered_map<std::string, std::optional<std::string>>& labels,
                           std::string_view target);

std::unordered_map<std::string, std::optional<std::string>> label_map(
    std::span<const TokenSequence> corpus);

/// Sequences of `corpus` named by `ids`, in the order of `ids`.
std::vector<TokenSequence> gather(std::span<const TokenSequence> corpus,
                                  std::span<const std::string> ids);

/// Trains on growing prefixes of `selection` and evaluates after
/// `checkpoints[i]` sequences. Checkpoints must be ascending.
std::vector<CurvePoint> learning_curve(std::span<const TokenSequence> selection,
                                       std::span<const TokenSequence> eval,
                                       std::span<const std::size_t> checkpoints, std::size_t order,
                                       double alpha);

/// Sequence counts 1/8, 2/8, ..., 8/8 of n (deduplicated, at least 1).
std::vector<std::size_t> default_checkpoints(std::size_t n);

/// Chunked corpora for one experiment.
struct ExperimentData {
  std::size_t context_length = 0;
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> prior;
  std::vector<TokenSequence> down;
  std::vector<TokenSequence> eval_down;
  std::vector<TokenSequence> eval_train;
  std::string target_label;
};

ExperimentData build_synthetic_experiment(const SynthSpec& spec, std::size_t context_length,
                                          std::size_t workers = 1);

struct AuxiliaryConfig {
  std::size_t order = 3;
  double alpha = 0.1;
  ConditionalMode conditional;
  std::size_t workers = 1;
};

/// Prior (marginal), conditional, and color scores for every train sequence.
struct AuxiliaryModels {
  std::unique_ptr<NGramModel> prior;
  std::unique_ptr<LanguageModel> conditional;
  std::vector<ScoreRecord> scores;
};

AuxiliaryModels fit_auxiliary(const ExperimentData& data, const AuxiliaryConfig& config);

struct EvalReport {
  std::string method;
  std::size_t tau = 1;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double ce_down = 0.0;
  double ce_train = 0.0;
  double precision = 0.0;
  std::optional<double> threshold;
  /// Score distribution over the candidate pool, for score-based methods.
  std::optional<CdfSummary> cdf;
  std::vector<CurvePoint> curve;
  ArtifactMeta meta;

  nlohmann::ordered_json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

struct EvalSettings {
  std::size_t target_order = 5;
  double target_alpha = 0.1;
  std::vector<double> cdf_quantiles{0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99};
  bool curves = true;
  /// Learning curves in shuffled rather than selection order.
  bool shuffle_curves = false;
};

/// Trains the target on a selection (unless `target` is given) and evaluates
/// it. `pool` (may be empty) is the scored candidate pool the selection was
/// drawn from.
EvalReport evaluate_selection(const ExperimentData& data, const SelectionResult& selection,
                              std::span<const ScoreRecord> pool, const EvalSettings& settings,
                              const NGramModel* target = nullptr);

/// The D_tau pool select_from_scores draws for (size, seed), in draw order.
std::vector<ScoreRecord> sampled_pool(std::span<const ScoreRecord> records, std::size_t size,
                                      std::uint64_t seed);

struct SweepConfig {
  std::vector<Method> methods{Method::kColorFilter, Method::kRandom};
  std::vector<std::size_t> taus{1, 2, 4, 8, 16};
  std::size_t n = 1000;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  double lambda = 0.5;
  DsirOptions dsir;
  OnlineSelectorOptions online;
  EvalSettings eval;
  /// Stamped onto every selection and report.
  ArtifactMeta meta;
};

/// Runs one selection method at one tau against shared data and models.
SelectionResult run_selection(const ExperimentData& data, const AuxiliaryModels& models,
                              Method method, std::size_t tau, const SweepConfig& config);

/// Every (method, tau) pair with shared pools: every method draws from the
/// same seeded permutation, so D_tau pools are nested across tau. Methods
/// that ignore tau (random, dsir) run once, reported at tau = 1.
std::vector<EvalReport> tau_sweep(const ExperimentData& data, const AuxiliaryModels& models,
                                  const SweepConfig& config);

/// Writes results.tsv, curves/<run>.tsv and cdf/<run>.tsv under `dir`.
/// Refuses reports whose config hashes differ.
void write_report(const std::filesystem::path& dir, std::span<const EvalReport> reports);

}  // namespace color_sieve
