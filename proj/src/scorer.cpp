#include "color_sieve/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "color_sieve/parallel.hpp"

namespace color_sieve {

ScoreRecord color_score(const LanguageModel& cond, const LanguageModel& marg,
                        const TokenSequence& seq) {
  if (cond.vocab_size() != marg.vocab_size()) {
    throw Error(fmt::format("conditional and marginal vocabularies differ ({} vs {})",
                            cond.vocab_size(), marg.vocab_size()));
  }
  ScoreRecord r;
  r.seq_id = seq.seq_id;
  r.length = seq.tokens.size();
  r.nll_cond = -cond.log_prob(seq.tokens);
  r.nll_marg = -marg.log_prob(seq.tokens);
  r.color = r.nll_cond - r.nll_marg;
  return r;
}

std::vector<ScoreRecord> score_sequences(const LanguageModel& cond, const LanguageModel& marg,
                                         SequenceSource& seqs, const ScoreOptions& options,
                                         ScoreStats* stats) {
  if (cond.vocab_size() != marg.vocab_size()) {
    throw Error(fmt::format("conditional and marginal vocabularies differ ({} vs {})",
                            cond.vocab_size(), marg.vocab_size()));
  }
  const std::size_t block_size = std::max<std::size_t>(1, options.block_size);
  const std::size_t workers = effective_workers(options.workers);
  std::vector<ScoreRecord> records;
  std::vector<TokenSequence> block;
  block.reserve(block_size);
  ScoreStats local;

  auto flush = [&] {
    const std::size_t base = records.size();
    records.resize(base + block.size());
    parallel_shards(block.size(), workers, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) records[base + i] = color_score(cond, marg, block[i]);
    });
    local.max_resident_sequences = std::max(local.max_resident_sequences, block.size());
    block.clear();
  };

  TokenSequence seq;
  while (seqs.next(seq)) {
    block.push_back(std::move(seq));
    if (block.size() == block_size) flush();
  }
  if (!block.empty()) flush();

  std::sort(records.begin(), records.end(),
            [](const ScoreRecord& a, const ScoreRecord& b) { return a.seq_id < b.seq_id; });
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].seq_id == records[i - 1].seq_id) {
      throw Error(fmt::format("duplicate seq_id '{}' in scoring input", records[i].seq_id));
    }
  }
  local.records = records.size();
  if (stats) *stats = local;
  return records;
}

void write_scores(std::ostream& out, std::span<const ScoreRecord> records,
                  const ArtifactMeta& meta) {
  out << "# " << meta.to_json().dump() << '\n';
  out << "seq_id\tnll_cond\tnll_marg\tcolor\tcolor_per_token\ttokens\n";
  for (const auto& r : records) {
    const double per_token = r.length ? r.color / static_cast<double>(r.length) : 0.0;
    out << fmt::format("{}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{}\n", r.seq_id, r.nll_cond,
                       r.nll_marg, r.color, per_token, r.length);
  }
}

void write_scores(const std::filesystem::path& path, std::span<const ScoreRecord> records,
                  const ArtifactMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write score file '{}'", path.string()));
  write_scores(out, records, meta);
  if (!out) throw Error(fmt::format("write failed for '{}'", path.string()));
}

namespace {

double parse_real(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(fmt::format("{}:{}: bad number '{}'", path.string(), line, s));
  }
}

}  // namespace

std::vector<ScoreRecord> read_scores(const std::filesystem::path& path, ArtifactMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open score file '{}'", path.string()));
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<ScoreRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (meta && line_no == 1) {
        try {
          *meta = ArtifactMeta::from_json(nlohmann::json::parse(line.substr(1)));
        } catch (const nlohmann::json::exception&) {
          throw Error(fmt::format("{}:1: corrupt metadata line", path.string()));
        }
      }
      continue;
    }
    if (!have_header) {
      if (line.rfind("seq_id\tnll_cond\tnll_marg\tcolor", 0) != 0) {
        throw Error(fmt::format("{}:{}: missing score header", path.string(), line_no));
      }
      have_header = true;
      continue;
    }
    std::vector<std::string> cols;
    std::istringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() < 4) throw Error(fmt::format("{}:{}: expected 4+ columns", path.string(), line_no));
    ScoreRecord r;
    r.seq_id = cols[0];
    r.nll_cond = parse_real(cols[1], path, line_no);
    r.nll_marg = parse_real(cols[2], path, line_no);
    r.color = parse_real(cols[3], path, line_no);
    if (r.color != r.nll_cond - r.nll_marg) {
      throw Error(fmt::format("{}:{}: color is not nll_cond - nll_marg", path.string(), line_no));
    }
    if (cols.size() >= 6) {
      try {
        r.length = std::stoull(cols[5]);
      } catch (const std::exception&) {
        throw Error(fmt::format("{}:{}: bad token count", path.string(), line_no));
      }
    }
    records.push_back(std::move(r));
  }
  if (!have_header) throw Error(fmt::format("'{}': missing score header", path.string()));
  return records;
}

ScoreStats score_stream(const LanguageModel& cond, const LanguageModel& marg, SequenceSource& seqs,
                        const std::filesystem::path& out, const ArtifactMeta& meta,
                        const ScoreOptions& options) {
  ScoreStats stats;
  const auto records = score_sequences(cond, marg, seqs, options, &stats);
  write_scores(out, records, meta);
  return stats;
}

double nearest_rank(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(fmt::format("quantile {} outside [0, 1]", q));
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

CdfSummary score_cdf(std::span<const ScoreRecord> records, std::span<const double> quantiles) {
  if (records.empty()) throw Error("score distribution of an empty record set");
  std::vector<double> colors;
  colors.reserve(records.size());
  for (const auto& r : records) colors.push_back(r.color);
  std::sort(colors.begin(), colors.end());

  CdfSummary summary;
  summary.count = colors.size();
  summary.min = colors.front();
  summary.max = colors.back();
  double total = 0.0;
  std::size_t below = 0;
  for (double c : colors) {
    total += c;
    if (c < 0.0) ++below;
  }
  summary.mean = total / static_cast<double>(colors.size());
  summary.fraction_below_zero = static_cast<double>(below) / static_cast<double>(colors.size());
  for (double q : quantiles) summary.quantiles.emplace_back(q, nearest_rank(colors, q));
  return summary;
}

double selection_cutoff(std::span<const ScoreRecord> records, std::size_t n, std::size_t pool_size) {
  if (pool_size == 0 || n > pool_size) throw Error("selection cutoff needs 0 < n <= pool size");
  std::vector<double> colors;
  colors.reserve(records.size());
  for (const auto& r : records) colors.push_back(r.color);
  std::sort(colors.begin(), colors.end());
  return nearest_rank(colors, static_cast<double>(n) / static_cast<double>(pool_size));
}

}  // namespace color_sieve
