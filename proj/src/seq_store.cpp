#include "color_sieve/seq_store.hpp"

#include <array>
#include <cstdint>
#include <sstream>
#include <string>

#include <fmt/format.h>

namespace color_sieve {

namespace {

constexpr std::string_view kMagic = "color-sieve-seqs";
constexpr int kFormatVersion = 1;
constexpr std::uint32_t kNoDomain = 0xFFFFFFFFu;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF),
                              static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), b.size());
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), b.size())) return false;
  v = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

}  // namespace

SequenceWriter::SequenceWriter(const std::filesystem::path& path, std::size_t context_length,
                               const ArtifactMeta& meta)
    : path_(path), out_(path, std::ios::binary), context_length_(context_length) {
  if (!out_) throw Error(fmt::format("cannot write sequence store '{}'", path.string()));
  out_ << kMagic << ' ' << kFormatVersion << ' ' << context_length << ' ' << meta.to_json().dump()
       << '\n';
}

void SequenceWriter::write(const TokenSequence& seq) {
  if (seq.tokens.size() != context_length_) {
    throw Error(fmt::format("sequence '{}' has {} tokens, store expects {}", seq.seq_id,
                            seq.tokens.size(), context_length_));
  }
  put_u32(out_, static_cast<std::uint32_t>(seq.seq_id.size()));
  out_.write(seq.seq_id.data(), static_cast<std::streamsize>(seq.seq_id.size()));
  if (seq.domain) {
    put_u32(out_, static_cast<std::uint32_t>(seq.domain->size()));
    out_.write(seq.domain->data(), static_cast<std::streamsize>(seq.domain->size()));
  } else {
    put_u32(out_, kNoDomain);
  }
  std::vector<char> buf(2 * context_length_);
  for (std::size_t i = 0; i < context_length_; ++i) {
    buf[2 * i] = static_cast<char>(seq.tokens[i] & 0xFF);
    buf[2 * i + 1] = static_cast<char>(seq.tokens[i] >> 8);
  }
  out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  ++written_;
}

void SequenceWriter::close() {
  out_.flush();
  if (!out_) throw Error(fmt::format("write failed for '{}'", path_.string()));
  out_.close();
}

SequenceReader::SequenceReader(const std::filesystem::path& path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw Error(fmt::format("cannot open sequence store '{}'", path.string()));
  std::string header;
  std::getline(in_, header);
  std::istringstream fields(header);
  std::string magic;
  int version = 0;
  fields >> magic >> version >> context_length_;
  if (magic != kMagic) throw Error(fmt::format("'{}' is not a sequence store", path.string()));
  if (version != kFormatVersion) {
    throw Error(fmt::format("'{}': unsupported sequence store version {}", path.string(), version));
  }
  if (context_length_ < 2) throw Error(fmt::format("'{}': corrupt header", path.string()));
  std::string meta_json;
  std::getline(fields >> std::ws, meta_json);
  try {
    meta_ = ArtifactMeta::from_json(nlohmann::json::parse(meta_json));
  } catch (const nlohmann::json::exception&) {
    throw Error(fmt::format("'{}': corrupt metadata", path.string()));
  }
}

bool SequenceReader::next(TokenSequence& out) {
  std::uint32_t id_len = 0;
  if (!get_u32(in_, id_len)) {
    if (in_.eof() && in_.gcount() == 0) return false;
    throw Error(fmt::format("'{}': truncated record {}", path_.string(), index_));
  }
  auto fail = [&] { return Error(fmt::format("'{}': truncated record {}", path_.string(), index_)); };
  if (id_len > (1u << 20)) throw fail();
  out.seq_id.resize(id_len);
  if (!in_.read(out.seq_id.data(), id_len)) throw fail();
  std::uint32_t domain_len = 0;
  if (!get_u32(in_, domain_len)) throw fail();
  if (domain_len == kNoDomain) {
    out.domain.reset();
  } else {
    if (domain_len > (1u << 20)) throw fail();
    std::string domain(domain_len, '\0');
    if (!in_.read(domain.data(), domain_len)) throw fail();
    out.domain = std::move(domain);
  }
  std::vector<unsigned char> buf(2 * context_length_);
  if (!in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw fail();
  }
  out.tokens.resize(context_length_);
  for (std::size_t i = 0; i < context_length_; ++i) {
    out.tokens[i] = static_cast<TokenId>(buf[2 * i] | (buf[2 * i + 1] << 8));
  }
  ++index_;
  return true;
}

void write_sequences(const std::filesystem::path& path, std::size_t context_length,
                     std::span<const TokenSequence> seqs, const ArtifactMeta& meta) {
  SequenceWriter writer(path, context_length, meta);
  for (const auto& seq : seqs) writer.write(seq);
  writer.close();
}

std::vector<TokenSequence> read_sequences(const std::filesystem::path& path, ArtifactMeta* meta) {
  SequenceReader reader(path);
  if (meta) *meta = reader.meta();
  std::vector<TokenSequence> out;
  TokenSequence seq;
  while (reader.next(seq)) out.push_back(seq);
  return out;
}

}  // namespace color_sieve
