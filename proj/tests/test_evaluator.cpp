#include <doctest.h>

#include <cmath>
#include <set>

#include "color_sieve/evaluator.hpp"
#include "test_util.hpp"

using namespace color_sieve;
using color_sieve::testing::TempDir;
using color_sieve::testing::random_corpus;
using color_sieve::testing::random_sequence;
using color_sieve::testing::read_file;

namespace {

std::vector<TokenSequence> labelled(Rng& rng, std::size_t count, double fraction_b) {
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    auto s = random_sequence(rng, 8, 4, "s" + std::to_string(100000 + i));
    s.domain = rng.uniform() < fraction_b ? "B" : "A";
    out.push_back(std::move(s));
  }
  return out;
}

SynthSpec small_spec(std::uint64_t seed) {
  auto spec = SynthSpec::with_random_transitions(seed);
  spec.train_docs = 600;
  spec.prior_docs = 300;
  spec.down_docs = 20;
  spec.eval_down_docs = 30;
  spec.eval_train_docs = 30;
  return spec;
}

}  // namespace

TEST_CASE("held-out cross-entropy") {
  Rng rng(1);
  const auto eval = random_corpus(rng, 20, 50, kByteVocabSize);
  CHECK(held_out_ce(UniformModel(kByteVocabSize), eval) == doctest::Approx(std::log(257.0)).epsilon(1e-14));
  CHECK(held_out_ce(NGramModel(3, 0.1, kByteVocabSize), eval) == doctest::Approx(std::log(257.0)).epsilon(1e-12));

  const auto fitted = train_target(eval, 3, 0.1);
  CHECK(held_out_ce(fitted, eval) < std::log(257.0));

  // Oracle: total negative log-likelihood over all positions / token count.
  double nll = 0;
  std::size_t tokens = 0;
  for (const auto& s : eval) {
    nll -= fitted.log_prob(s.tokens);
    tokens += s.tokens.size();
  }
  CHECK(held_out_ce(fitted, eval) == doctest::Approx(nll / tokens).epsilon(1e-14));
  CHECK_THROWS_AS(held_out_ce(fitted, {}), Error);
}

TEST_CASE("selection precision") {
  Rng rng(4);
  SUBCASE("random selection from a 50/50 mixture") {
    const auto corpus = labelled(rng, 4000, 0.5);
    const auto labels = label_map(corpus);
    std::vector<std::string> ids;
    for (const auto& s : corpus) ids.push_back(s.seq_id);
    const std::size_t n = 400;
    const auto r = select_random(ids, n, 8);
    double pool_b = 0;
    for (const auto& s : corpus) pool_b += s.domain == "B";
    const double p = pool_b / corpus.size();
    const double sigma = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(selection_precision(r.selected, labels, "B") - 0.5) <= 3 * sigma + std::abs(p - 0.5));
  }
  SUBCASE("all-target selection") {
    const auto corpus = labelled(rng, 100, 0.3);
    std::vector<std::string> bs;
    for (const auto& s : corpus) {
      if (s.domain == "B") bs.push_back(s.seq_id);
    }
    CHECK(selection_precision(bs, label_map(corpus), "B") == 1.0);
    CHECK(selection_precision(bs, label_map(corpus), "A") == 0.0);
  }
  SUBCASE("tau = 1 color filter keeps its random pool") {
    const auto corpus = labelled(rng, 500, 0.2);
    std::vector<ScoreRecord> records;
    for (const auto& s : corpus) records.push_back({s.seq_id, rng.uniform(), 0.0, 0, 8});
    for (auto& r : records) r.color = r.nll_cond - r.nll_marg;
    const auto cf = select_from_scores(records, {.n = 80, .tau = 1, .seed = 3});
    const auto rnd = select_from_scores(records, {.n = 80, .tau = 1, .seed = 3, .method = Method::kRandom});
    const auto labels = label_map(corpus);
    CHECK(selection_precision(cf.selected, labels, "B") == selection_precision(rnd.selected, labels, "B"));
  }
  SUBCASE("unlabelled counts as off-target; unknown ids are errors") {
    std::vector<TokenSequence> corpus{{"x", {1}, std::nullopt}, {"y", {1}, "B"}};
    const auto labels = label_map(corpus);
    CHECK(selection_precision(std::vector<std::string>{"x", "y"}, labels, "B") == 0.5);
    CHECK_THROWS_AS(selection_precision(std::vector<std::string>{"z"}, labels, "B"), Error);
  }
}

TEST_CASE("learning curves train on selection prefixes") {
  Rng rng(6);
  const auto selection = random_corpus(rng, 40, 30, 6);
  const auto eval = random_corpus(rng, 10, 30, 6, "e");
  const std::vector<std::size_t> checkpoints{5, 10, 40};
  const auto curve = learning_curve(selection, eval, checkpoints, 2, 0.1);
  REQUIRE(curve.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto prefix = std::span(selection).first(checkpoints[i]);
    CHECK(curve[i].tokens == checkpoints[i] * 30.0);
    CHECK(curve[i].loss == held_out_ce(train_target(prefix, 2, 0.1), eval));
  }
  CHECK(default_checkpoints(16) == std::vector<std::size_t>{2, 4, 6, 8, 10, 12, 14, 16});
  CHECK(default_checkpoints(3) == std::vector<std::size_t>{1, 2, 3});
  const std::vector<std::size_t> bad{10, 5};
  CHECK_THROWS_AS(learning_curve(selection, eval, bad, 2, 0.1), Error);
}

TEST_CASE("gather keeps the requested order") {
  Rng rng(2);
  const auto corpus = random_corpus(rng, 5, 3, 4);
  const std::vector<std::string> ids{corpus[3].seq_id, corpus[0].seq_id};
  const auto got = gather(corpus, ids);
  REQUIRE(got.size() == 2);
  CHECK(got[0].seq_id == corpus[3].seq_id);
  CHECK(got[1].tokens == corpus[0].tokens);
  CHECK_THROWS_AS(gather(corpus, std::vector<std::string>{"nope"}), Error);
}

TEST_CASE("synthetic experiment splits are disjoint and labelled") {
  const auto data = build_synthetic_experiment(small_spec(3), 64);
  CHECK(data.target_label == "B");
  std::set<std::string> seen;
  std::size_t total = 0;
  for (const auto* split : {&data.train, &data.prior, &data.down, &data.eval_down, &data.eval_train}) {
    for (const auto& s : *split) {
      CHECK(s.tokens.size() == 64);
      seen.insert(s.seq_id);
      ++total;
    }
  }
  CHECK(seen.size() == total);
  for (const auto& s : data.down) CHECK(s.domain == "B");
  for (const auto& s : data.eval_down) CHECK(s.domain == "B");
}

TEST_CASE("sweep shares pools across tau and is reproducible") {
  const auto data = build_synthetic_experiment(small_spec(9), 64);
  const auto models = fit_auxiliary(data, {});
  SweepConfig config;
  config.methods = {Method::kColorFilter, Method::kConditionalOnly, Method::kRandom};
  config.taus = {1, 2, 4};
  config.n = 100;
  config.seed = 5;
  config.meta = {std::string(kToolVersion), "h1", 5};
  const auto reports = tau_sweep(data, models, config);
  REQUIRE(reports.size() == 7);
  CHECK(reports.back().method == "random");
  CHECK(reports.back().tau == 1);
  CHECK(!reports.back().cdf);
  for (const auto& r : reports) {
    CHECK(r.ce_down > 0);
    CHECK(r.precision >= 0.0);
    CHECK(r.precision <= 1.0);
    CHECK(r.curve.size() == 8);
    CHECK(r.meta.config_hash == "h1");
  }
  // tau = 1 keeps the random pool, so precision matches random at the same seed.
  CHECK(reports[0].precision == reports.back().precision);
  CHECK(reports[0].cdf->count == 100);
  CHECK(reports[2].cdf->count == 400);

  const auto again = tau_sweep(data, models, config);
  for (std::size_t i = 0; i < reports.size(); ++i) CHECK(again[i].to_json() == reports[i].to_json());

  SUBCASE("report files") {
    TempDir dir("report");
    write_report(dir.path(), reports);
    const auto results = read_file(dir / "results.tsv");
    CHECK(std::count(results.begin(), results.end(), '\n') == 2 + 7);
    CHECK(std::filesystem::exists(dir.path() / "curves" / "color_filter_tau4_seed5.tsv"));
    CHECK(std::filesystem::exists(dir.path() / "cdf" / "conditional_only_tau2_seed5.tsv"));
    CHECK_FALSE(std::filesystem::exists(dir.path() / "cdf" / "random_tau1_seed5.tsv"));

    auto mixed = reports;
    mixed[3].meta.config_hash = "h2";
    CHECK_THROWS_WITH_AS(write_report(dir / "other", mixed), doctest::Contains("mix"), Error);
    CHECK_THROWS_AS(write_report(dir / "none", std::vector<EvalReport>{}), Error);
  }
  SUBCASE("report json round-trip") {
    for (const auto& r : reports) CHECK(EvalReport::from_json(r.to_json()).to_json() == r.to_json());
  }
}
