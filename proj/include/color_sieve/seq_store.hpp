#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "color_sieve/artifact.hpp"
#include "color_sieve/corpus.hpp"

namespace color_sieve {

/// Pull-based stream of sequences.
class SequenceSource {
 public:
  virtual ~SequenceSource() = default;
  /// Fills `out` and returns true, or returns false at end of stream.
  virtual bool next(TokenSequence& out) = 0;
};

class VectorSource final : public SequenceSource {
 public:
  explicit VectorSource(std::span<const TokenSequence> seqs) : seqs_(seqs) {}
  bool next(TokenSequence& out) override {
    if (pos_ >= seqs_.size()) return false;
    out = seqs_[pos_++];
    return true;
  }

 private:
  std::span<const TokenSequence> seqs_;
  std::size_t pos_ = 0;
};

// Sequence store layout (all integers little-endian):
//
//   line 1:  "color-sieve-seqs 1 <C> <meta-json>\n"
//   records until EOF, each:
//     u32 id_len, id bytes
//     u32 domain_len (0xFFFFFFFF = no label), domain bytes
//     C x u16 token ids

class SequenceWriter {
 public:
  SequenceWriter(const std::filesystem::path& path, std::size_t context_length,
                 const ArtifactMeta& meta);
  void write(const TokenSequence& seq);
  void close();
  std::size_t written() const { return written_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t context_length_;
  std::size_t written_ = 0;
};

class SequenceReader final : public SequenceSource {
 public:
  explicit SequenceReader(const std::filesystem::path& path);
  bool next(TokenSequence& out) override;

  std::size_t context_length() const { return context_length_; }
  const ArtifactMeta& meta() const { return meta_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t context_length_ = 0;
  ArtifactMeta meta_;
  std::size_t index_ = 0;
};

void write_sequences(const std::filesystem::path& path, std::size_t context_length,
                     std::span<const TokenSequence> seqs, const ArtifactMeta& meta);
std::vector<TokenSequence> read_sequences(const std::filesystem::path& path,
                                          ArtifactMeta* meta = nullptr);

}  // namespace color_sieve
