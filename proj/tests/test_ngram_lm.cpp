#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "color_sieve/ngram_lm.hpp"
#include "test_util.hpp"

using namespace color_sieve;
using color_sieve::testing::TempDir;
using color_sieve::testing::random_corpus;
using color_sieve::testing::read_file;
using color_sieve::testing::write_file;

namespace {

constexpr TokenId a = 0;
constexpr TokenId b = 1;

TokenSequence seq_of(std::vector<TokenId> tokens, std::string id = "x") {
  return {std::move(id), std::move(tokens), std::nullopt};
}

// Independent oracle: enumerate every position of every sequence, compare its
// padded left context with `context`, count matches.
double brute_prob(std::span<const TokenSequence> corpus, std::span<const TokenId> context,
                  TokenId token, std::size_t order, double alpha, std::size_t vocab) {
  const TokenId pad = static_cast<TokenId>(vocab);
  double hits = 0, total = 0;
  for (const auto& s : corpus) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      bool match = true;
      for (std::size_t j = 0; j + 1 < order; ++j) {
        // context[j] is the symbol (order-1-j) positions back.
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(order - 1 - j);
        const TokenId sym = pos < 0 ? pad : s.tokens[static_cast<std::size_t>(pos)];
        if (sym != context[j]) {
          match = false;
          break;
        }
      }
      if (!match) continue;
      total += 1;
      if (s.tokens[i] == token) hits += 1;
    }
  }
  return (hits + alpha) / (total + alpha * static_cast<double>(vocab));
}

}  // namespace

TEST_CASE("hand-counted bigram example") {
  const std::vector<TokenSequence> corpus{seq_of({a, b, a, b})};
  const auto m = NGramModel::train(corpus, 2, 1.0, 2);
  // Oracle values from enumeration: a->b twice, a as context twice.
  CHECK(brute_prob(corpus, std::vector<TokenId>{a}, b, 2, 1.0, 2) == doctest::Approx(0.75));
  CHECK(m.prob(std::vector<TokenId>{a}, b) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(m.count(std::vector<TokenId>{a}, b) == 2);
  CHECK(m.context_total(std::vector<TokenId>{a}) == 2);
  CHECK(m.trained_tokens() == 4);

  // log P(a | pad) + log P(b | a) with P(a | pad) = (1+1)/(1+2).
  const double expected = std::log(2.0 / 3.0) + std::log(0.75);
  CHECK(m.log_prob(std::vector<TokenId>{a, b}) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("n-gram probabilities match the enumeration oracle") {
  Rng rng(17);
  for (std::size_t order : {1, 2, 3, 4}) {
    const std::size_t vocab = 5;
    const auto corpus = random_corpus(rng, 12, 9, vocab);
    const double alpha = 0.3;
    const auto m = NGramModel::train(corpus, order, alpha, vocab);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<TokenId> ctx(order - 1);
      for (auto& c : ctx) c = static_cast<TokenId>(rng.below(vocab + 1));  // includes padding
      const auto tok = static_cast<TokenId>(rng.below(vocab));
      CHECK(m.prob(ctx, tok) ==
            doctest::Approx(brute_prob(corpus, ctx, tok, order, alpha, vocab)).epsilon(1e-14));
    }
  }
}

TEST_CASE("zero-count model is uniform") {
  const NGramModel m(3, 0.1, kByteVocabSize);
  const std::vector<TokenId> ctx{5, 9};
  for (TokenId v : {0, 17, 255, 256}) CHECK(m.prob(ctx, v) == doctest::Approx(1.0 / 257));
  std::vector<TokenId> seq(40, 65);
  CHECK(m.log_prob(seq) == doctest::Approx(40 * std::log(1.0 / 257)).epsilon(1e-12));
  CHECK(UniformModel(257).log_prob(seq) == 40 * std::log(1.0 / 257));
}

TEST_CASE("log_prob is strictly negative and rejects bad input") {
  Rng rng(1);
  const auto corpus = random_corpus(rng, 5, 30, 8);
  const auto m = NGramModel::train(corpus, 3, 0.5, 8);
  for (const auto& s : corpus) CHECK(m.log_prob(s.tokens) < 0.0);
  CHECK_THROWS_AS(m.log_prob(std::vector<TokenId>{}), Error);
  CHECK_THROWS_AS(m.log_prob(std::vector<TokenId>{8}), Error);
  CHECK_THROWS_AS(NGramModel(0, 0.1), Error);
  CHECK_THROWS_AS(NGramModel(3, 0.0), Error);
  CHECK_THROWS_AS(NGramModel(9, 0.1, kByteVocabSize), Error);
  CHECK_NOTHROW(NGramModel(8, 0.1, kByteVocabSize));
}

TEST_CASE("counts are additive and order-independent") {
  Rng rng(23);
  const auto corpus = random_corpus(rng, 40, 25, 6);
  const auto once = NGramModel::train(corpus, 3, 0.2, 6);

  SUBCASE("training twice equals doubled counts") {
    auto twice = once;
    for (const auto& s : corpus) twice.add_counts(s.tokens);
    auto doubled = NGramModel(3, 0.2, 6);
    doubled.merge(once, 2);
    CHECK(twice == doubled);
  }
  SUBCASE("permuting the corpus leaves the model unchanged") {
    auto shuffled = corpus;
    std::reverse(shuffled.begin(), shuffled.end());
    std::swap(shuffled[3], shuffled[17]);
    const auto m = NGramModel::train(shuffled, 3, 0.2, 6);
    CHECK(m == once);
    for (const auto& s : corpus) CHECK(m.log_prob(s.tokens) == once.log_prob(s.tokens));
  }
  SUBCASE("train(A) + add_counts(B) == train(A u B)") {
    const std::span<const TokenSequence> all(corpus);
    auto m = NGramModel::train(all.first(15), 3, 0.2, 6);
    for (const auto& s : all.subspan(15)) m.add_counts(s.tokens);
    CHECK(m == once);
  }
  SUBCASE("empty add_counts is a no-op") {
    auto m = once;
    m.add_counts(std::vector<TokenId>{});
    CHECK(m == once);
  }
  SUBCASE("streaming add_counts reproduces batch training") {
    NGramModel m(3, 0.2, 6);
    for (const auto& s : corpus) m.add_counts(s.tokens);
    CHECK(m == once);
    for (const auto& s : corpus) CHECK(m.log_prob(s.tokens) == once.log_prob(s.tokens));
  }
}

TEST_CASE("conditionals normalize over the vocabulary") {
  Rng rng(99);
  const auto corpus = random_corpus(rng, 60, 40, kByteVocabSize);
  const auto m = NGramModel::train(corpus, 3, 0.1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<TokenId> ctx(2);
    if (trial % 2 == 0) {
      // A context that occurs in the data.
      const auto& s = corpus[rng.below(corpus.size())].tokens;
      const std::size_t i = 2 + rng.below(s.size() - 2);
      ctx = {s[i - 2], s[i - 1]};
    } else {
      for (auto& c : ctx) c = static_cast<TokenId>(rng.below(kByteVocabSize + 1));
    }
    double total = 0.0;
    for (std::size_t v = 0; v < kByteVocabSize; ++v) total += m.prob(ctx, static_cast<TokenId>(v));
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

TEST_CASE("larger alpha moves every conditional toward uniform") {
  Rng rng(4);
  const std::size_t vocab = 7;
  const auto corpus = random_corpus(rng, 20, 30, vocab);
  const double u = 1.0 / vocab;
  const std::vector<double> alphas{0.01, 0.1, 1.0, 10.0};
  std::vector<NGramModel> models;
  for (double al : alphas) models.push_back(NGramModel::train(corpus, 2, al, vocab));
  for (TokenId c = 0; c <= vocab; ++c) {
    for (TokenId v = 0; v < vocab; ++v) {
      const std::vector<TokenId> ctx{c};
      for (std::size_t i = 1; i < models.size(); ++i) {
        CHECK(std::abs(models[i].prob(ctx, v) - u) <= std::abs(models[i - 1].prob(ctx, v) - u) + 1e-15);
      }
    }
  }
}

TEST_CASE("make_conditional interpolation limits and bound") {
  Rng rng(31);
  const std::size_t vocab = 6;
  const auto prior_data = random_corpus(rng, 50, 20, vocab, "p");
  std::vector<TokenSequence> down;
  for (int i = 0; i < 10; ++i) {
    // Downstream favours low token ids.
    down.push_back(color_sieve::testing::random_sequence(rng, 20, 2, "d" + std::to_string(i)));
  }
  const auto prior = NGramModel::train(prior_data, 3, 0.1, vocab);
  const auto down_only = NGramModel::train(down, 3, 0.1, vocab);
  const auto probes = random_corpus(rng, 100, 24, vocab, "x");

  SUBCASE("lambda -> 0 recovers the prior") {
    const auto cond = make_conditional(prior, down, {.lambda = 1e-12});
    for (const auto& x : probes) {
      CHECK(cond->log_prob(x.tokens) == doctest::Approx(prior.log_prob(x.tokens)).epsilon(1e-9));
    }
  }
  SUBCASE("lambda = 1 is the downstream model") {
    const auto cond = make_conditional(prior, down, {.lambda = 1.0});
    for (const auto& x : probes) CHECK(cond->log_prob(x.tokens) == down_only.log_prob(x.tokens));
  }
  SUBCASE("lambda = 0.5 is within C log 2 of either component") {
    const auto cond = make_conditional(prior, down, {.lambda = 0.5});
    for (const auto& x : probes) {
      const double bound = static_cast<double>(x.tokens.size()) * std::log(0.5);
      CHECK(cond->log_prob(x.tokens) >= prior.log_prob(x.tokens) + bound - 1e-9);
      CHECK(cond->log_prob(x.tokens) >= down_only.log_prob(x.tokens) + bound - 1e-9);
    }
  }
  SUBCASE("count-add adds downstream counts w times") {
    const auto cond = make_conditional(prior, down, {.kind = ConditionalMode::Kind::kCountAdd, .weight = 3});
    auto expected = prior;
    for (int rep = 0; rep < 3; ++rep) {
      for (const auto& d : down) expected.add_counts(d.tokens);
    }
    CHECK(*dynamic_cast<const NGramModel*>(cond.get()) == expected);
  }
  SUBCASE("invalid arguments") {
    CHECK_THROWS_AS(make_conditional(prior, {}, {}), Error);
    CHECK_THROWS_AS(make_conditional(prior, down, {.lambda = 0.0}), Error);
    CHECK_THROWS_AS(make_conditional(prior, down, {.lambda = 1.5}), Error);
    CHECK_THROWS_AS(make_conditional(prior, down, {.kind = ConditionalMode::Kind::kCountAdd, .weight = 0}), Error);
  }
}

TEST_CASE("model files are canonical and round-trip bit-exactly") {
  TempDir dir("models");
  Rng rng(8);
  const auto corpus = random_corpus(rng, 80, 32, kByteVocabSize);
  const auto m = NGramModel::train(corpus, 3, 0.1);
  const ArtifactMeta meta{std::string(kToolVersion), "feedface", 1};
  save_model(m, dir / "a.model", meta);

  auto reversed = corpus;
  std::reverse(reversed.begin(), reversed.end());
  save_model(NGramModel::train(reversed, 3, 0.1), dir / "b.model", meta);
  CHECK(read_file(dir / "a.model") == read_file(dir / "b.model"));

  ArtifactMeta loaded_meta;
  const auto back = load_ngram(dir / "a.model", &loaded_meta);
  CHECK(back == m);
  CHECK(loaded_meta == meta);
  const auto probes = random_corpus(rng, 100, 32, kByteVocabSize, "q");
  for (const auto& x : probes) CHECK(back.log_prob(x.tokens) == m.log_prob(x.tokens));

  InterpolatedModel mix({m, NGramModel::train(probes, 2, 0.3)}, {0.7, 0.3});
  save_model(mix, dir / "mix.model", meta);
  const auto mix_back = load_model(dir / "mix.model");
  for (const auto& x : probes) CHECK(mix_back.model->log_prob(x.tokens) == mix.log_prob(x.tokens));
  CHECK_THROWS_AS(load_ngram(dir / "mix.model"), Error);

  save_model(UniformModel(257), dir / "u.model", meta);
  CHECK(load_model(dir / "u.model").model->log_prob(probes[0].tokens) ==
        UniformModel(257).log_prob(probes[0].tokens));
}

TEST_CASE("corrupt or mismatched model files are rejected") {
  TempDir dir("bad_models");
  const auto m = NGramModel::train(std::vector<TokenSequence>{seq_of({1, 2, 3, 1, 2})}, 2, 0.1);
  save_model(m, dir / "ok.model", {});
  const auto text = read_file(dir / "ok.model");

  auto replace = [&](std::string from, std::string to) {
    auto t = text;
    t.replace(t.find(from), from.size(), to);
    return t;
  };
  write_file(dir / "v9.model", replace("color-sieve-lm 1", "color-sieve-lm 9"));
  CHECK_THROWS_WITH_AS(load_model(dir / "v9.model"), doctest::Contains("version 9"), Error);

  write_file(dir / "total.model", replace("\t2\t", "\t7\t"));
  CHECK_THROWS_WITH_AS(load_model(dir / "total.model"), doctest::Contains("corrupt"), Error);

  write_file(dir / "trunc.model", text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(load_model(dir / "trunc.model"), Error);

  write_file(dir / "alpha.model", replace("alpha 0.1", "alpha zero"));
  CHECK_THROWS_AS(load_model(dir / "alpha.model"), Error);

  CHECK_THROWS_AS(load_model(dir / "missing.model"), Error);
}
