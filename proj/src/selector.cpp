#include "color_sieve/selector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "color_sieve/parallel.hpp"
#include "color_sieve/rng.hpp"

namespace color_sieve {

namespace {

constexpr std::array<std::pair<Method, std::string_view>, 8> kMethodNames{{
    {Method::kColorFilter, "color_filter"},
    {Method::kColorFilterBatchwise, "color_filter_batchwise"},
    {Method::kConditionalOnly, "conditional_only"},
    {Method::kRhoDown, "rho_down"},
    {Method::kRhoDownPrior, "rho_down_prior"},
    {Method::kDsir, "dsir"},
    {Method::kRandom, "random"},
    {Method::kOnlineColor, "online_color"},
}};

double mean_of(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace

std::string_view method_name(Method method) {
  for (const auto& [m, name] : kMethodNames) {
    if (m == method) return name;
  }
  throw Error("unknown selection method");
}

Method parse_method(std::string_view name) {
  for (const auto& [m, n] : kMethodNames) {
    if (n == name) return m;
  }
  throw Error(fmt::format("unknown selection method '{}'", name));
}

bool selects_from_scores(Method method) {
  return method == Method::kColorFilter || method == Method::kConditionalOnly ||
         method == Method::kColorFilterBatchwise || method == Method::kRandom;
}

void SelectionConfig::validate() const {
  if (n == 0) throw Error("selection budget n must be positive");
  if (tau == 0) throw Error("subset size multiplier tau must be at least 1");
  if (batch_size > n) throw Error("batch size must not exceed n");
}

nlohmann::ordered_json SelectionResult::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "color-sieve-selection";
  j["version"] = 1;
  j["meta"] = meta.to_json();
  j["method"] = method_name(method);
  j["n"] = n;
  j["tau"] = tau;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["threshold"] = threshold ? nlohmann::ordered_json(*threshold) : nlohmann::ordered_json(nullptr);
  j["selected"] = selected;
  j["scores"] = scores;
  j["diagnostics"] = diagnostics;
  return j;
}

SelectionResult SelectionResult::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "color-sieve-selection") throw Error("not a selection file");
    SelectionResult r;
    r.meta = ArtifactMeta::from_json(j.at("meta"));
    r.method = parse_method(j.at("method").get<std::string>());
    r.n = j.at("n").get<std::size_t>();
    r.tau = j.at("tau").get<std::size_t>();
    r.batch_size = j.at("batch_size").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("threshold").is_null()) r.threshold = j.at("threshold").get<double>();
    r.selected = j.at("selected").get<std::vector<std::string>>();
    r.scores = j.at("scores").get<std::vector<double>>();
    r.diagnostics = j.value("diagnostics", nlohmann::ordered_json::object());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("malformed selection: {}", e.what()));
  }
}

void save_selection(const SelectionResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write selection '{}'", path.string()));
  out << result.to_json().dump(2) << '\n';
  if (!out) throw Error(fmt::format("write failed for '{}'", path.string()));
}

SelectionResult load_selection(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open selection '{}'", path.string()));
  try {
    return SelectionResult::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(fmt::format("'{}': {}", path.string(), e.what()));
  }
}

std::vector<std::size_t> permutation_prefix(std::size_t population, std::size_t k,
                                            std::uint64_t seed) {
  if (k > population) {
    throw Error(fmt::format("cannot draw {} items from a population of {}", k, population));
  }
  std::vector<std::size_t> perm(population);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(population - i);
    std::swap(perm[i], perm[j]);
  }
  perm.resize(k);
  return perm;
}

std::vector<std::size_t> canonical_order(std::span<const std::string> ids) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  return order;
}

std::vector<std::size_t> sample_subset(std::span<const std::string> ids, std::size_t size,
                                       std::uint64_t seed) {
  if (size > ids.size()) {
    throw Error(fmt::format("subset of {} requested from a corpus of {}", size, ids.size()));
  }
  const auto order = canonical_order(ids);
  auto picks = permutation_prefix(ids.size(), size, seed);
  for (auto& p : picks) p = order[p];
  return picks;
}

std::vector<std::size_t> bottom_k(std::span<const double> scores, std::span<const std::string> ids,
                                  std::size_t k) {
  if (scores.size() != ids.size()) throw Error("scores and ids differ in length");
  if (k > scores.size()) {
    throw Error(fmt::format("cannot select {} of {} candidates", k, scores.size()));
  }
  auto less = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return ids[a] < ids[b];
  };
  std::vector<std::size_t> heap;
  heap.reserve(k);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw Error(fmt::format("NaN score for '{}'", ids[i]));
    if (k == 0) continue;
    if (heap.size() < k) {
      heap.push_back(i);
      std::push_heap(heap.begin(), heap.end(), less);
    } else if (less(i, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), less);
      heap.back() = i;
      std::push_heap(heap.begin(), heap.end(), less);
    }
  }
  std::sort_heap(heap.begin(), heap.end(), less);
  return heap;
}

namespace {

SelectionResult bottom_by(std::span<const ScoreRecord> pool, std::size_t n, Method method,
                          double ScoreRecord::*field) {
  if (pool.size() < n) {
    throw Error(fmt::format("pool of {} records is smaller than the budget {}", pool.size(), n));
  }
  std::vector<double> scores;
  std::vector<std::string> ids;
  scores.reserve(pool.size());
  ids.reserve(pool.size());
  for (const auto& r : pool) {
    scores.push_back(r.*field);
    ids.push_back(r.seq_id);
  }
  SelectionResult result;
  result.method = method;
  result.n = n;
  for (std::size_t i : bottom_k(scores, ids, n)) {
    result.selected.push_back(ids[i]);
    result.scores.push_back(scores[i]);
  }
  if (!result.scores.empty()) result.threshold = result.scores.back();
  return result;
}

}  // namespace

SelectionResult select_color_filter(std::span<const ScoreRecord> pool, std::size_t n) {
  return bottom_by(pool, n, Method::kColorFilter, &ScoreRecord::color);
}

SelectionResult select_conditional_only(std::span<const ScoreRecord> pool, std::size_t n) {
  return bottom_by(pool, n, Method::kConditionalOnly, &ScoreRecord::nll_cond);
}

SelectionResult select_color_batchwise(std::span<const ScoreRecord> pool, std::size_t n,
                                       std::size_t tau, std::size_t batch_size) {
  if (batch_size == 0 || batch_size > n) throw Error("batch size must lie in [1, n]");
  if (tau == 0) throw Error("tau must be at least 1");
  SelectionResult result;
  result.method = Method::kColorFilterBatchwise;
  result.n = n;
  result.tau = tau;
  result.batch_size = batch_size;
  std::size_t pos = 0;
  while (result.selected.size() < n) {
    const std::size_t keep = std::min(batch_size, n - result.selected.size());
    const std::size_t len = tau * keep;
    if (pos + len > pool.size()) {
      throw Error(fmt::format("pool of {} records exhausted after {} selections", pool.size(),
                              result.selected.size()));
    }
    auto batch = bottom_by(pool.subspan(pos, len), keep, Method::kColorFilterBatchwise,
                           &ScoreRecord::color);
    result.selected.insert(result.selected.end(), batch.selected.begin(), batch.selected.end());
    result.scores.insert(result.scores.end(), batch.scores.begin(), batch.scores.end());
    pos += len;
  }
  if (!result.scores.empty()) {
    result.threshold = *std::max_element(result.scores.begin(), result.scores.end());
  }
  return result;
}

SelectionResult select_random(std::span<const std::string> ids, std::size_t n, std::uint64_t seed) {
  SelectionResult result;
  result.method = Method::kRandom;
  result.n = n;
  result.seed = seed;
  for (std::size_t i : sample_subset(ids, n, seed)) result.selected.push_back(ids[i]);
  return result;
}

SelectionResult select_from_scores(std::span<const ScoreRecord> records,
                                   const SelectionConfig& config) {
  config.validate();
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.seq_id);

  SelectionResult result;
  if (config.method == Method::kRandom) {
    result = select_random(ids, config.n, config.seed);
  } else {
    if (config.pool_size() > records.size()) {
      throw Error(fmt::format("tau * n = {} exceeds the {} scored sequences", config.pool_size(),
                              records.size()));
    }
    std::vector<ScoreRecord> pool;
    pool.reserve(config.pool_size());
    for (std::size_t i : sample_subset(ids, config.pool_size(), config.seed)) {
      pool.push_back(records[i]);
    }
    switch (config.method) {
      case Method::kColorFilter:
        result = select_color_filter(pool, config.n);
        break;
      case Method::kConditionalOnly:
        result = select_conditional_only(pool, config.n);
        break;
      case Method::kColorFilterBatchwise:
        result = select_color_batchwise(pool, config.n, config.tau, config.effective_batch());
        break;
      default:
        throw Error(fmt::format("method '{}' needs models and corpora, not a score file",
                                method_name(config.method)));
    }
  }
  result.method = config.method;
  result.n = config.n;
  result.tau = config.tau;
  result.batch_size = config.method == Method::kColorFilterBatchwise ? config.effective_batch() : 0;
  result.seed = config.seed;
  return result;
}

namespace {

struct BatchScores {
  std::vector<double> nll_cond;
  std::vector<double> nll_marg;
};

BatchScores score_batch(const LanguageModel& cond, const LanguageModel& marg,
                        std::span<const TokenSequence> train, std::span<const std::size_t> batch,
                        std::size_t workers) {
  BatchScores s{std::vector<double>(batch.size()), std::vector<double>(batch.size())};
  parallel_shards(batch.size(), effective_workers(workers), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto& tokens = train[batch[i]].tokens;
      s.nll_cond[i] = -cond.log_prob(tokens);
      s.nll_marg[i] = -marg.log_prob(tokens);
    }
  });
  return s;
}

// Shared round loop of RHO-down and the online variant. `update` is called
// with each selected sequence after the round's selection.
template <typename Update>
SelectionResult run_online_rounds(const LanguageModel& cond, const LanguageModel& marg,
                                  std::span<const TokenSequence> train,
                                  const SelectionConfig& config, std::size_t workers,
                                  Update&& update) {
  config.validate();
  const std::size_t b = config.effective_batch();
  if (config.pool_size() > train.size()) {
    throw Error(fmt::format("corpus exhausted: {} candidates needed, {} available",
                            config.pool_size(), train.size()));
  }
  std::vector<std::string> all_ids;
  all_ids.reserve(train.size());
  for (const auto& s : train) all_ids.push_back(s.seq_id);
  const auto stream = sample_subset(all_ids, config.pool_size(), config.seed);

  SelectionResult result;
  result.method = config.method;
  result.n = config.n;
  result.tau = config.tau;
  result.batch_size = b;
  result.seed = config.seed;
  auto rounds = nlohmann::ordered_json::array();

  std::size_t pos = 0;
  while (result.selected.size() < config.n) {
    const std::size_t keep = std::min(b, config.n - result.selected.size());
    const std::span<const std::size_t> batch(stream.data() + pos, config.tau * keep);
    pos += batch.size();

    const auto s = score_batch(cond, marg, train, batch, workers);
    std::vector<double> color(batch.size());
    std::vector<std::string> ids(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      color[i] = s.nll_cond[i] - s.nll_marg[i];
      ids[i] = train[batch[i]].seq_id;
    }
    const auto picked = bottom_k(color, ids, keep);

    std::vector<double> sel_color, sel_cond, sel_marg;
    for (std::size_t i : picked) {
      result.selected.push_back(ids[i]);
      result.scores.push_back(color[i]);
      sel_color.push_back(color[i]);
      sel_cond.push_back(s.nll_cond[i]);
      sel_marg.push_back(s.nll_marg[i]);
    }
    rounds.push_back({{"round", rounds.size() + 1},
                      {"batch_mean_color", mean_of(color)},
                      {"selected_mean_color", mean_of(sel_color)},
                      {"selected_mean_nll_cond", mean_of(sel_cond)},
                      {"selected_mean_nll_marg", mean_of(sel_marg)}});
    for (std::size_t i : picked) update(train[batch[i]].tokens);
  }
  result.threshold = *std::max_element(result.scores.begin(), result.scores.end());
  result.diagnostics["rounds"] = std::move(rounds);
  return result;
}

}  // namespace

SelectionResult select_rho_down(const LanguageModel& cond, std::span<const TokenSequence> train,
                                const SelectionConfig& config,
                                const OnlineSelectorOptions& options) {
  NGramModel marg(options.marginal_order, options.marginal_alpha, cond.vocab_size());
  auto result = run_online_rounds(cond, marg, train, config, options.workers,
                                  [&](std::span<const TokenId> tokens) { marg.add_counts(tokens); });
  result.diagnostics["marginal_trained_tokens"] = marg.trained_tokens();
  return result;
}

SelectionResult select_online_color(const NGramModel& prior, std::span<const TokenSequence> down,
                                    std::span<const TokenSequence> train,
                                    const SelectionConfig& config, double lambda,
                                    const OnlineSelectorOptions& options) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw Error("online lambda must lie in (0, 1)");
  if (down.empty()) throw Error("downstream corpus is empty");
  InterpolatedModel cond(
      {prior, NGramModel::train(down, prior.order(), prior.alpha(), prior.vocab_size())},
      {1.0 - lambda, lambda});
  NGramModel marg = prior;
  auto result = run_online_rounds(cond, marg, train, config, options.workers,
                                  [&](std::span<const TokenId> tokens) {
                                    marg.add_counts(tokens);
                                    cond.component(0).add_counts(tokens);
                                  });
  result.diagnostics["lambda"] = lambda;
  return result;
}

std::size_t DsirWeights::bucket_of(std::span<const TokenId> ngram, std::size_t buckets) {
  std::uint64_t h = splitmix64(ngram.size());
  for (TokenId t : ngram) h = splitmix64(h ^ t);
  return static_cast<std::size_t>(h % buckets);
}

namespace {

template <typename Fn>
void for_each_feature(std::span<const TokenId> tokens, std::size_t buckets, Fn&& fn) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    fn(DsirWeights::bucket_of(tokens.subspan(i, 1), buckets));
    if (i + 1 < tokens.size()) fn(DsirWeights::bucket_of(tokens.subspan(i, 2), buckets));
  }
}

std::vector<double> feature_log_probs(std::span<const TokenSequence> corpus, std::size_t buckets) {
  std::vector<std::uint64_t> counts(buckets, 0);
  std::uint64_t total = 0;
  for (const auto& seq : corpus) {
    for_each_feature(seq.tokens, buckets, [&](std::size_t f) {
      ++counts[f];
      ++total;
    });
  }
  std::vector<double> logp(buckets);
  const double denom = static_cast<double>(total) + static_cast<double>(buckets);
  for (std::size_t f = 0; f < buckets; ++f) {
    logp[f] = std::log((static_cast<double>(counts[f]) + 1.0) / denom);
  }
  return logp;
}

}  // namespace

DsirWeights::DsirWeights(std::span<const TokenSequence> train, std::span<const TokenSequence> down,
                         std::size_t buckets) {
  if (buckets < (std::size_t{1} << 10)) throw Error("DSIR needs at least 2^10 buckets");
  if (down.empty()) throw Error("downstream corpus is empty");
  const auto log_train = feature_log_probs(train, buckets);
  const auto log_down = feature_log_probs(down, buckets);
  log_ratio_.resize(buckets);
  for (std::size_t f = 0; f < buckets; ++f) log_ratio_[f] = log_down[f] - log_train[f];
}

double DsirWeights::log_weight(std::span<const TokenId> tokens) const {
  double w = 0.0;
  for_each_feature(tokens, log_ratio_.size(), [&](std::size_t f) { w += log_ratio_[f]; });
  return w;
}

SelectionResult select_dsir(std::span<const TokenSequence> train,
                            std::span<const TokenSequence> down, std::size_t n, std::uint64_t seed,
                            const DsirOptions& options) {
  if (n == 0) throw Error("selection budget n must be positive");
  if (n > train.size()) {
    throw Error(fmt::format("cannot select {} of {} candidates", n, train.size()));
  }
  const DsirWeights weights(train, down, options.buckets);
  std::vector<std::string> ids;
  ids.reserve(train.size());
  for (const auto& s : train) ids.push_back(s.seq_id);

  // Noise is drawn in canonical id order so it does not depend on input order.
  std::vector<double> key(train.size());
  std::vector<double> neg_key(train.size());
  Rng rng(substream_seed(seed, "dsir/gumbel"));
  for (std::size_t i : canonical_order(ids)) {
    const double noise = rng.gumbel();
    key[i] = weights.log_weight(train[i].tokens) + options.gumbel_scale * noise;
    neg_key[i] = -key[i];
  }

  SelectionResult result;
  result.method = Method::kDsir;
  result.n = n;
  result.seed = seed;
  for (std::size_t i : bottom_k(neg_key, ids, n)) {
    result.selected.push_back(ids[i]);
    result.scores.push_back(key[i]);
  }
  result.threshold = result.scores.back();
  result.diagnostics["buckets"] = options.buckets;
  result.diagnostics["gumbel_scale"] = options.gumbel_scale;
  result.diagnostics["score"] = "log importance weight + gumbel noise, higher is better";
  return result;
}

}  // namespace color_sieve
