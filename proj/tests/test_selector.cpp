#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>

#include "color_sieve/selector.hpp"
#include "test_util.hpp"

using namespace color_sieve;
using color_sieve::testing::TempDir;
using color_sieve::testing::random_corpus;
using color_sieve::testing::random_sequence;
using color_sieve::testing::read_file;

namespace {

std::vector<ScoreRecord> random_records(Rng& rng, std::size_t count, double granularity = 0.0) {
  std::vector<ScoreRecord> out;
  for (std::size_t i = 0; i < count; ++i) {
    double cond = 100.0 * rng.uniform();
    double marg = 100.0 * rng.uniform();
    if (granularity > 0) {
      cond = std::round(cond / granularity) * granularity;
      marg = std::round(marg / granularity) * granularity;
    }
    out.push_back({"r" + std::to_string(1000000 + rng.below(1000000)) + "_" + std::to_string(i),
                   cond, marg, cond - marg, 16});
  }
  return out;
}

// Oracle: sort a copy by (key, id) and take the prefix.
std::vector<std::string> full_sort_prefix(std::vector<ScoreRecord> pool, std::size_t n,
                                          double ScoreRecord::*key) {
  std::sort(pool.begin(), pool.end(), [&](const ScoreRecord& a, const ScoreRecord& b) {
    return std::tie(a.*key, a.seq_id) < std::tie(b.*key, b.seq_id);
  });
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(pool[i].seq_id);
  return ids;
}

std::vector<std::string> ids_of(std::span<const TokenSequence> seqs) {
  std::vector<std::string> ids;
  for (const auto& s : seqs) ids.push_back(s.seq_id);
  return ids;
}

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("method names round-trip") {
  for (auto m : {Method::kColorFilter, Method::kColorFilterBatchwise, Method::kConditionalOnly,
                 Method::kRhoDown, Method::kRhoDownPrior, Method::kDsir, Method::kRandom,
                 Method::kOnlineColor}) {
    CHECK(parse_method(method_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("best"), Error);
}

TEST_CASE("permutation prefixes are nested and uniform draws") {
  const auto longer = permutation_prefix(1000, 300, 5);
  const auto shorter = permutation_prefix(1000, 100, 5);
  CHECK(std::equal(shorter.begin(), shorter.end(), longer.begin()));
  CHECK(as_set(std::vector<std::string>{}).empty());
  CHECK(std::set<std::size_t>(longer.begin(), longer.end()).size() == 300);
  CHECK_THROWS_AS(permutation_prefix(3, 4, 1), Error);
}

TEST_CASE("sample_subset") {
  Rng rng(1);
  const auto corpus = random_corpus(rng, 100, 1, 2);
  const auto ids = ids_of(corpus);

  CHECK(sample_subset(ids, 30, 9) == sample_subset(ids, 30, 9));
  CHECK(sample_subset(ids, 30, 9) != sample_subset(ids, 30, 10));
  CHECK_THROWS_AS(sample_subset(ids, 101, 1), Error);

  SUBCASE("input order does not matter") {
    auto reversed = ids;
    std::reverse(reversed.begin(), reversed.end());
    std::vector<std::string> a, b;
    for (auto i : sample_subset(ids, 30, 4)) a.push_back(ids[i]);
    for (auto i : sample_subset(reversed, 30, 4)) b.push_back(reversed[i]);
    CHECK(a == b);
  }
  SUBCASE("inclusion frequency is within 3 sigma of the binomial rate") {
    const std::size_t seeds = 200, size = 30;
    std::vector<int> hits(ids.size(), 0);
    for (std::size_t s = 0; s < seeds; ++s) {
      const auto picks = sample_subset(ids, size, 1000 + s);
      CHECK(std::set<std::size_t>(picks.begin(), picks.end()).size() == size);
      for (auto i : picks) ++hits[i];
    }
    const double p = static_cast<double>(size) / ids.size();
    const double mean = seeds * p;
    const double sigma = std::sqrt(seeds * p * (1 - p));
    // 100 simultaneous 3-sigma checks fail somewhere about a quarter of the
    // time, so bound the number of 3-sigma excursions and cap every item at
    // the Bonferroni level instead.
    int beyond = 0;
    for (int h : hits) {
      CHECK(std::abs(h - mean) <= 4 * sigma);
      beyond += std::abs(h - mean) > 3 * sigma;
    }
    CHECK(beyond <= 2);
  }
}

TEST_CASE("bottom_k equals a full sort") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    // Coarse grid gives plenty of ties.
    const auto pool = random_records(rng, 10000, trial % 2 ? 0.5 : 0.0);
    const std::size_t n = 1 + rng.below(pool.size());
    CHECK(select_color_filter(pool, n).selected == full_sort_prefix(pool, n, &ScoreRecord::color));
    CHECK(select_conditional_only(pool, n).selected ==
          full_sort_prefix(pool, n, &ScoreRecord::nll_cond));
  }
  const std::vector<double> nan_scores{1.0, NAN};
  const std::vector<std::string> two{"a", "b"};
  CHECK_THROWS_AS(bottom_k(nan_scores, two, 1), Error);
  CHECK_THROWS_AS(bottom_k(std::vector<double>{1.0, 2.0}, two, 3), Error);
  CHECK(bottom_k(std::vector<double>{1.0, 2.0}, two, 0).empty());
}

TEST_CASE("color filter edge cases") {
  Rng rng(3);
  SUBCASE("budget equal to pool selects everything") {
    const auto pool = random_records(rng, 50);
    CHECK(as_set(select_color_filter(pool, 50).selected) == as_set(full_sort_prefix(pool, 50, &ScoreRecord::color)));
  }
  SUBCASE("equal scores fall back to lexicographic ids") {
    std::vector<ScoreRecord> pool;
    for (std::string id : {"d", "b", "e", "a", "c"}) pool.push_back({id, 1.0, 1.0, 0.0, 4});
    CHECK(select_color_filter(pool, 3).selected == std::vector<std::string>{"a", "b", "c"});
    CHECK(select_conditional_only(pool, 2).selected == std::vector<std::string>{"a", "b"});
  }
  SUBCASE("shifting every score leaves the selection unchanged") {
    auto pool = random_records(rng, 500, 0.25);
    const auto before = select_color_filter(pool, 60).selected;
    for (auto& r : pool) {
      r.nll_cond += 8.0;
      r.color = r.nll_cond - r.nll_marg;
    }
    CHECK(select_color_filter(pool, 60).selected == before);
  }
  SUBCASE("conditional-only matches color filter under a uniform marginal") {
    const auto corpus = random_corpus(rng, 400, 32, 40);
    const auto cond = NGramModel::train(std::span(corpus).first(50), 2, 0.1);
    const UniformModel uniform(kByteVocabSize);
    std::vector<ScoreRecord> pool;
    for (const auto& s : corpus) pool.push_back(color_score(cond, uniform, s));
    CHECK(select_conditional_only(pool, 40).selected == select_color_filter(pool, 40).selected);
  }
  SUBCASE("too small a pool") {
    const auto pool = random_records(rng, 5);
    CHECK_THROWS_AS(select_color_filter(pool, 6), Error);
  }
}

TEST_CASE("select_from_scores samples the pool then selects") {
  Rng rng(12);
  const auto records = random_records(rng, 2000);
  SelectionConfig config{.n = 100, .tau = 4, .seed = 77, .method = Method::kColorFilter};
  const auto r = select_from_scores(records, config);
  CHECK(r.selected.size() == 100);
  CHECK(as_set(r.selected).size() == 100);

  std::vector<std::string> ids;
  for (const auto& x : records) ids.push_back(x.seq_id);
  std::vector<ScoreRecord> pool;
  for (auto i : sample_subset(ids, 400, 77)) pool.push_back(records[i]);
  CHECK(r.selected == full_sort_prefix(pool, 100, &ScoreRecord::color));
  CHECK(r.threshold == doctest::Approx(r.scores.back()));

  SUBCASE("tau = 1 keeps the whole pool") {
    config.tau = 1;
    const auto all = select_from_scores(records, config);
    std::vector<std::string> drawn;
    for (auto i : sample_subset(ids, 100, 77)) drawn.push_back(ids[i]);
    CHECK(as_set(all.selected) == as_set(drawn));
    config.method = Method::kRandom;
    CHECK(as_set(select_from_scores(records, config).selected) == as_set(drawn));
  }
  SUBCASE("pools are nested across tau") {
    std::vector<std::string> small, large;
    for (auto i : sample_subset(ids, 200, 77)) small.push_back(ids[i]);
    for (auto i : sample_subset(ids, 800, 77)) large.push_back(ids[i]);
    CHECK(std::equal(small.begin(), small.end(), large.begin()));
  }
  SUBCASE("errors") {
    config.tau = 21;
    CHECK_THROWS_AS(select_from_scores(records, config), Error);
    config.tau = 2;
    config.method = Method::kRhoDown;
    CHECK_THROWS_AS(select_from_scores(records, config), Error);
    config.method = Method::kColorFilter;
    config.n = 0;
    CHECK_THROWS_AS(select_from_scores(records, config), Error);
  }
}

TEST_CASE("batchwise color filter") {
  Rng rng(21);
  const auto pool = random_records(rng, 4000);
  SUBCASE("one batch equals the global selection") {
    CHECK(select_color_batchwise(pool, 500, 8, 500).selected == select_color_filter(pool, 500).selected);
  }
  SUBCASE("smaller batches pick the bottom b of each slice") {
    const auto r = select_color_batchwise(pool, 500, 8, 50);
    REQUIRE(r.selected.size() == 500);
    CHECK(as_set(r.selected).size() == 500);
    for (std::size_t t = 0; t < 10; ++t) {
      const std::vector<ScoreRecord> slice(pool.begin() + t * 400, pool.begin() + (t + 1) * 400);
      const auto want = full_sort_prefix(slice, 50, &ScoreRecord::color);
      CHECK(std::equal(want.begin(), want.end(), r.selected.begin() + t * 50));
    }
    const auto global = as_set(select_color_filter(pool, 500).selected);
    std::size_t shared = 0;
    for (const auto& id : r.selected) shared += global.count(id);
    const double overlap = static_cast<double>(shared) / 500;
    MESSAGE("batchwise (b=50) vs global overlap on uniform scores: " << overlap);
    CHECK(overlap < 1.0);
    CHECK(overlap > 0.5);
  }
  SUBCASE("short final batch") {
    const auto r = select_color_batchwise(pool, 105, 4, 50);
    CHECK(r.selected.size() == 105);
  }
  SUBCASE("replay is identical") {
    CHECK(select_color_batchwise(pool, 300, 4, 30).to_json() ==
          select_color_batchwise(pool, 300, 4, 30).to_json());
  }
  CHECK_THROWS_AS(select_color_batchwise(pool, 100, 41, 10), Error);
  CHECK_THROWS_AS(select_color_batchwise(pool, 100, 2, 0), Error);
}

TEST_CASE("random selection") {
  Rng rng(2);
  const auto ids = ids_of(random_corpus(rng, 500, 1, 2));
  const auto r = select_random(ids, 50, 3);
  CHECK(r.selected.size() == 50);
  CHECK(as_set(r.selected).size() == 50);
  CHECK(!r.threshold);
  CHECK(select_random(ids, 50, 3).selected == r.selected);
  CHECK_THROWS_AS(select_random(ids, 501, 3), Error);
}

TEST_CASE("RHO-down") {
  Rng rng(40);
  const std::size_t vocab = 6;
  const auto train = random_corpus(rng, 200, 24, vocab, "t");
  std::vector<TokenSequence> down;
  for (int i = 0; i < 20; ++i) down.push_back(random_sequence(rng, 24, 3, "d" + std::to_string(i)));
  const auto cond = NGramModel::train(down, 3, 0.1, vocab);
  const auto ids = ids_of(train);

  SUBCASE("hand-stepped oracle over four rounds") {
    const SelectionConfig config{.n = 40, .tau = 2, .batch_size = 10, .seed = 9, .method = Method::kRhoDown};
    const auto r = select_rho_down(cond, train, config);
    CHECK(select_rho_down(cond, train, config).to_json() == r.to_json());

    const auto stream = sample_subset(ids, 80, 9);
    std::vector<TokenSequence> chosen;
    std::vector<std::string> want_ids;
    std::vector<double> want_scores;
    for (std::size_t t = 0; t < 4; ++t) {
      // Marginal retrained from scratch on everything selected so far.
      const auto marg = NGramModel::train(chosen, 3, 0.1, vocab);
      std::vector<ScoreRecord> batch;
      for (std::size_t j = 0; j < 20; ++j) batch.push_back(color_score(cond, marg, train[stream[t * 20 + j]]));
      std::sort(batch.begin(), batch.end(), [](const auto& a, const auto& b) {
        return std::tie(a.color, a.seq_id) < std::tie(b.color, b.seq_id);
      });
      for (std::size_t j = 0; j < 10; ++j) {
        want_ids.push_back(batch[j].seq_id);
        want_scores.push_back(batch[j].color);
        const auto it = std::find(ids.begin(), ids.end(), batch[j].seq_id);
        chosen.push_back(train[static_cast<std::size_t>(it - ids.begin())]);
      }
    }
    CHECK(r.selected == want_ids);
    CHECK(r.scores == want_scores);
    CHECK(r.diagnostics.at("rounds").size() == 4);
    CHECK(r.diagnostics.at("marginal_trained_tokens") == 40 * 24);
  }
  SUBCASE("tau = 1 selects the random stream") {
    const SelectionConfig config{.n = 40, .tau = 1, .batch_size = 10, .seed = 5, .method = Method::kRhoDown};
    CHECK(as_set(select_rho_down(cond, train, config).selected) ==
          as_set(select_random(ids, 40, 5).selected));
  }
  SUBCASE("b = n is color filter against a zero-count marginal") {
    const SelectionConfig config{.n = 40, .tau = 4, .batch_size = 0, .seed = 6, .method = Method::kRhoDown};
    const NGramModel empty(3, 0.1, vocab);
    VectorSource src(train);
    const auto records = score_sequences(cond, empty, src);
    CHECK(select_rho_down(cond, train, config).selected ==
          select_from_scores(records, {.n = 40, .tau = 4, .seed = 6}).selected);
  }
  SUBCASE("corpus exhaustion") {
    const SelectionConfig config{.n = 40, .tau = 6, .batch_size = 10, .seed = 1, .method = Method::kRhoDown};
    CHECK_THROWS_WITH_AS(select_rho_down(cond, train, config), doctest::Contains("exhausted"), Error);
  }
}

TEST_CASE("online variant reports per-round diagnostics") {
  Rng rng(41);
  const std::size_t vocab = 8;
  const auto train = random_corpus(rng, 300, 20, vocab, "t");
  const auto prior = NGramModel::train(random_corpus(rng, 100, 20, vocab, "p"), 3, 0.1, vocab);
  std::vector<TokenSequence> down;
  for (int i = 0; i < 10; ++i) down.push_back(random_sequence(rng, 20, 4, "d" + std::to_string(i)));
  const SelectionConfig config{.n = 60, .tau = 4, .batch_size = 15, .seed = 3, .method = Method::kOnlineColor};
  const auto r = select_online_color(prior, down, train, config, 0.5);
  CHECK(r.selected.size() == 60);
  CHECK(as_set(r.selected).size() == 60);
  const auto& rounds = r.diagnostics.at("rounds");
  REQUIRE(rounds.size() == 4);
  for (const auto& round : rounds) {
    CHECK(round.at("selected_mean_color").get<double>() <= round.at("batch_mean_color").get<double>());
  }
  // The first round has seen no updates, so it matches a plain color filter on that batch.
  const auto stream = sample_subset(ids_of(train), 240, 3);
  const auto cond = make_conditional(prior, down, {.lambda = 0.5});
  std::vector<ScoreRecord> first;
  for (std::size_t j = 0; j < 60; ++j) first.push_back(color_score(*cond, prior, train[stream[j]]));
  const auto want = full_sort_prefix(first, 15, &ScoreRecord::color);
  CHECK(std::equal(want.begin(), want.end(), r.selected.begin()));
  CHECK_THROWS_AS(select_online_color(prior, down, train, config, 1.0), Error);
  CHECK_THROWS_AS(select_online_color(prior, {}, train, config, 0.5), Error);
}

TEST_CASE("DSIR importance resampling") {
  Rng rng(50);
  const auto train = random_corpus(rng, 50, 12, 10, "t");

  SUBCASE("sequences without features weigh zero") {
    const DsirWeights w(train, std::span(train).first(5), 1024);
    CHECK(w.log_weight(std::vector<TokenId>{}) == 0.0);
  }
  SUBCASE("zero noise gives the exact top-n by weight") {
    std::vector<TokenSequence> down;
    for (int i = 0; i < 10; ++i) down.push_back(random_sequence(rng, 12, 3, "d" + std::to_string(i)));
    const DsirWeights w(train, down, 4096);
    std::vector<ScoreRecord> neg;
    for (const auto& s : train) {
      const double lw = w.log_weight(s.tokens);
      neg.push_back({s.seq_id, -lw, 0.0, -lw, 12});
    }
    const auto r = select_dsir(train, down, 12, 1, {.buckets = 4096, .gumbel_scale = 0.0});
    CHECK(r.selected == full_sort_prefix(neg, 12, &ScoreRecord::color));
  }
  SUBCASE("identical distributions give uniform selection") {
    const DsirWeights w(train, train, 1024);
    for (const auto& s : train) CHECK(w.log_weight(s.tokens) == 0.0);
    const std::size_t seeds = 500;
    for (std::size_t n : {1, 5}) {
      std::vector<double> hits(train.size(), 0.0);
      for (std::size_t s = 0; s < seeds; ++s) {
        const auto r = select_dsir(train, train, n, s, {.buckets = 1024});
        REQUIRE(as_set(r.selected).size() == n);
        for (const auto& id : r.selected) {
          hits[static_cast<std::size_t>(std::stoul(id.substr(1)) - 100000)] += 1;
        }
      }
      const double expected = static_cast<double>(seeds * n) / train.size();
      double stat = 0.0;
      for (double h : hits) stat += (h - expected) * (h - expected) / expected;
      const boost::math::chi_squared dist(static_cast<double>(train.size() - 1));
      const double p = boost::math::cdf(boost::math::complement(dist, stat));
      MESSAGE("DSIR uniformity n=" << n << ": chi2=" << stat << " p=" << p);
      CHECK(p > 1e-3);
    }
  }
  SUBCASE("input order does not change the draw") {
    auto reversed = train;
    std::reverse(reversed.begin(), reversed.end());
    const auto down = std::span(train).first(10);
    CHECK(as_set(select_dsir(train, down, 10, 4, {.buckets = 1024}).selected) ==
          as_set(select_dsir(reversed, down, 10, 4, {.buckets = 1024}).selected));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(DsirWeights(train, {}, 1024), Error);
    CHECK_THROWS_AS(DsirWeights(train, train, 512), Error);
    CHECK_THROWS_AS(select_dsir(train, train, 51, 0, {.buckets = 1024}), Error);
  }
}

TEST_CASE("selection files round-trip") {
  TempDir dir("selection");
  Rng rng(5);
  const auto records = random_records(rng, 300);
  auto r = select_from_scores(records, {.n = 30, .tau = 3, .seed = 2});
  r.meta = {std::string(kToolVersion), "abc", 2};
  r.diagnostics["note"] = "x";
  save_selection(r, dir / "s.json");
  const auto back = load_selection(dir / "s.json");
  CHECK(back.to_json() == r.to_json());
  save_selection(back, dir / "t.json");
  CHECK(read_file(dir / "s.json") == read_file(dir / "t.json"));
  color_sieve::testing::write_file(dir / "bad.json", "{\"format\": \"other\"}");
  CHECK_THROWS_AS(load_selection(dir / "bad.json"), Error);
  color_sieve::testing::write_file(dir / "broken.json", "{");
  CHECK_THROWS_AS(load_selection(dir / "broken.json"), Error);
}
