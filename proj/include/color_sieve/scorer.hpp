#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "color_sieve/artifact.hpp"
#include "color_sieve/ngram_lm.hpp"
#include "color_sieve/seq_store.hpp"

namespace color_sieve {

/// Conditional loss reduction of one sequence. Lower color = more preferred.
struct ScoreRecord {
  std::string seq_id;
  double nll_cond = 0.0;  // -log P(x | conditional)
  double nll_marg = 0.0;  // -log P(x | marginal)
  double color = 0.0;     // nll_cond - nll_marg
  std::size_t length = 0;

  bool operator==(const ScoreRecord&) const = default;
};

ScoreRecord color_score(const LanguageModel& cond, const LanguageModel& marg,
                        const TokenSequence& seq);

struct ScoreOptions {
  std::size_t workers = 1;
  /// Sequences held in memory at once.
  std::size_t block_size = 4096;
};

struct ScoreStats {
  std::size_t records = 0;
  std::size_t max_resident_sequences = 0;
};

/// Scores a stream block by block. Returns records sorted by seq_id; the
/// result does not depend on worker count or block size. Throws on a
/// duplicate seq_id.
std::vector<ScoreRecord> score_sequences(const LanguageModel& cond, const LanguageModel& marg,
                                         SequenceSource& seqs, const ScoreOptions& options = {},
                                         ScoreStats* stats = nullptr);

// Score file: TSV, one metadata comment line, then
//   seq_id  nll_cond  nll_marg  color  color_per_token  tokens
// Reals are printed with 17 significant digits. color_per_token is
// diagnostic only and ignored on read.

void write_scores(std::ostream& out, std::span<const ScoreRecord> records, const ArtifactMeta& meta);
void write_scores(const std::filesystem::path& path, std::span<const ScoreRecord> records,
                  const ArtifactMeta& meta);
std::vector<ScoreRecord> read_scores(const std::filesystem::path& path, ArtifactMeta* meta = nullptr);

/// score_sequences followed by write_scores.
ScoreStats score_stream(const LanguageModel& cond, const LanguageModel& marg, SequenceSource& seqs,
                        const std::filesystem::path& out, const ArtifactMeta& meta,
                        const ScoreOptions& options = {});

struct CdfSummary {
  std::vector<std::pair<double, double>> quantiles;  // (q, value)
  double mean = 0.0;
  double fraction_below_zero = 0.0;
  std::size_t count = 0;
  double min = 0.0;
  double max = 0.0;
};

/// Lower nearest-rank order statistic: sorted[max(ceil(q * N), 1) - 1].
double nearest_rank(std::span<const double> sorted, double q);

CdfSummary score_cdf(std::span<const ScoreRecord> records, std::span<const double> quantiles);

/// Color of the n-th best record when n are kept out of a pool of
/// `pool_size`, i.e. the nearest-rank quantile at n / pool_size.
double selection_cutoff(std::span<const ScoreRecord> records, std::size_t n, std::size_t pool_size);

}  // namespace color_sieve
