#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace color_sieve {

using TokenId = std::uint16_t;

/// Byte-level vocabulary: ids 0..255 are raw bytes, 256 marks the start of a
/// document.
inline constexpr TokenId kBos = 256;
inline constexpr std::size_t kByteVocabSize = 257;

struct Document {
  std::string doc_id;
  std::string text;
  std::optional<std::string> domain;

  bool operator==(const Document&) const = default;
};

/// Fixed-length window of a tokenized document; the unit that gets scored,
/// selected and trained on.
struct TokenSequence {
  std::string seq_id;
  std::vector<TokenId> tokens;
  std::optional<std::string> domain;

  bool operator==(const TokenSequence&) const = default;
};

/// Streams documents out of a JSONL file ({"id", "text", "domain"?} per line).
/// Fails fast on the first malformed line, naming its line number.
class JsonlReader {
 public:
  explicit JsonlReader(const std::filesystem::path& path);

  std::optional<Document> next();
  std::size_t line_number() const { return line_no_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
  std::unordered_set<std::string> seen_ids_;
};

std::vector<Document> load_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const Document> docs);

/// [BOS] followed by the UTF-8 bytes of `text`.
std::vector<TokenId> tokenize(std::string_view text);
inline std::vector<TokenId> tokenize(const Document& doc) { return tokenize(doc.text); }

/// Inverse of tokenize; BOS tokens are skipped.
std::string detokenize(std::span<const TokenId> tokens);

std::string make_seq_id(std::string_view doc_id, std::size_t chunk_index);

/// Consecutive non-overlapping windows of exactly `context_length` tokens.
/// A trailing partial window is dropped.
std::vector<TokenSequence> chunk(std::span<const TokenId> tokens,
                                 std::size_t context_length,
                                 std::string_view doc_id,
                                 const std::optional<std::string>& domain = std::nullopt);

/// Tokenizes and chunks every document, in parallel when workers > 1. Output
/// is ordered by (doc_id, chunk index) regardless of worker count.
std::vector<TokenSequence> chunk_documents(std::span<const Document> docs,
                                           std::size_t context_length,
                                           std::size_t workers = 1);

/// Two-domain first-order Markov source over a reduced alphabet, used to build
/// labelled candidate/prior/downstream/eval corpora.
struct SynthSpec {
  std::size_t alphabet_size = 16;
  /// transitions[domain][from][to]; each row must sum to 1.
  std::vector<std::vector<std::vector<double>>> transitions;
  /// Domain probabilities for the mixed corpora (train, prior, eval_train).
  std::vector<double> mixture{0.9, 0.1};
  std::vector<std::string> domain_labels{"A", "B"};
  /// Domain the downstream and eval_down corpora are drawn from.
  std::size_t target_domain = 1;

  std::size_t train_docs = 20000;
  std::size_t prior_docs = 5000;
  std::size_t down_docs = 100;
  std::size_t eval_down_docs = 200;
  std::size_t eval_train_docs = 200;
  /// Document length in symbols (bytes), inclusive range.
  std::size_t min_doc_len = 127;
  std::size_t max_doc_len = 200;
  std::uint64_t seed = 0;

  /// Spec with random transition rows. Rows are Dirichlet(1) draws raised to
  /// `sharpness` and renormalized; the target domain's rows are then mixed
  /// with the other domain's by `overlap`.
  static SynthSpec with_random_transitions(std::uint64_t seed,
                                           std::size_t alphabet_size = 16,
                                           double sharpness = 2.0,
                                           double overlap = 0.25);

  /// Throws Error on malformed matrices, mixture or counts.
  void validate() const;
};

struct SynthCorpora {
  std::vector<Document> train;
  std::vector<Document> prior;
  std::vector<Document> down;
  std::vector<Document> eval_down;
  std::vector<Document> eval_train;
};

SynthCorpora gen_synth(const SynthSpec& spec);

}  // namespace color_sieve
