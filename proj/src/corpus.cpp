#include "color_sieve/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "color_sieve/artifact.hpp"
#include "color_sieve/parallel.hpp"
#include "color_sieve/rng.hpp"

namespace color_sieve {

JsonlReader::JsonlReader(const std::filesystem::path& path) : path_(path), in_(path) {
  if (!in_) throw Error(fmt::format("cannot open corpus file '{}'", path.string()));
}

std::optional<Document> JsonlReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(fmt::format("{}:{}: malformed JSON: {}", path_.string(), line_no_, e.what()));
    }
    if (!obj.is_object()) {
      throw Error(fmt::format("{}:{}: expected a JSON object", path_.string(), line_no_));
    }
    auto id = obj.find("id");
    auto text = obj.find("text");
    if (id == obj.end() || !id->is_string()) {
      throw Error(fmt::format("{}:{}: missing string field \"id\"", path_.string(), line_no_));
    }
    if (text == obj.end() || !text->is_string()) {
      throw Error(fmt::format("{}:{}: missing string field \"text\"", path_.string(), line_no_));
    }
    Document doc{id->get<std::string>(), text->get<std::string>(), std::nullopt};
    if (doc.text.empty()) {
      throw Error(fmt::format("{}:{}: empty \"text\"", path_.string(), line_no_));
    }
    if (auto domain = obj.find("domain"); domain != obj.end() && !domain->is_null()) {
      if (!domain->is_string()) {
        throw Error(fmt::format("{}:{}: \"domain\" must be a string", path_.string(), line_no_));
      }
      doc.domain = domain->get<std::string>();
    }
    if (!seen_ids_.insert(doc.doc_id).second) {
      throw Error(fmt::format("{}:{}: duplicate document id '{}'", path_.string(), line_no_,
                              doc.doc_id));
    }
    return doc;
  }
  return std::nullopt;
}

std::vector<Document> load_jsonl(const std::filesystem::path& path) {
  JsonlReader reader(path);
  std::vector<Document> docs;
  while (auto doc = reader.next()) docs.push_back(std::move(*doc));
  return docs;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Document> docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  for (const auto& doc : docs) {
    nlohmann::ordered_json obj{{"id", doc.doc_id}, {"text", doc.text}};
    if (doc.domain) obj["domain"] = *doc.domain;
    out << obj.dump() << '\n';
  }
  if (!out) throw Error(fmt::format("write failed for '{}'", path.string()));
}

std::vector<TokenId> tokenize(std::string_view text) {
  std::vector<TokenId> tokens;
  tokens.reserve(text.size() + 1);
  tokens.push_back(kBos);
  for (unsigned char c : text) tokens.push_back(c);
  return tokens;
}

std::string detokenize(std::span<const TokenId> tokens) {
  std::string text;
  text.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t == kBos) continue;
    text.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return text;
}

std::string make_seq_id(std::string_view doc_id, std::size_t chunk_index) {
  return fmt::format("{}#{:06}", doc_id, chunk_index);
}

std::vector<TokenSequence> chunk(std::span<const TokenId> tokens, std::size_t context_length,
                                 std::string_view doc_id,
                                 const std::optional<std::string>& domain) {
  if (context_length < 2) throw Error("context length must be at least 2");
  std::vector<TokenSequence> out;
  const std::size_t windows = tokens.size() / context_length;
  out.reserve(windows);
  for (std::size_t w = 0; w < windows; ++w) {
    auto window = tokens.subspan(w * context_length, context_length);
    out.push_back({make_seq_id(doc_id, w), {window.begin(), window.end()}, domain});
  }
  return out;
}

std::vector<TokenSequence> chunk_documents(std::span<const Document> docs,
                                           std::size_t context_length, std::size_t workers) {
  if (context_length < 2) throw Error("context length must be at least 2");
  std::vector<std::vector<TokenSequence>> per_doc(docs.size());
  parallel_shards(docs.size(), effective_workers(workers), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      per_doc[i] = chunk(tokenize(docs[i]), context_length, docs[i].doc_id, docs[i].domain);
    }
  });

  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return docs[a].doc_id < docs[b].doc_id; });

  std::vector<TokenSequence> out;
  for (std::size_t i : order) {
    for (auto& seq : per_doc[i]) out.push_back(std::move(seq));
  }
  return out;
}

namespace {

constexpr double kRowTolerance = 1e-9;

std::vector<double> random_row(Rng& rng, std::size_t size, double sharpness) {
  std::vector<double> row(size);
  double total = 0.0;
  for (auto& w : row) {
    w = std::pow(-std::log(rng.uniform()), sharpness);
    total += w;
  }
  for (auto& w : row) w /= total;
  return row;
}

std::size_t draw_categorical(Rng& rng, std::span<const double> probs) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

char symbol_byte(std::size_t symbol) { return static_cast<char>('a' + symbol); }

}  // namespace

SynthSpec SynthSpec::with_random_transitions(std::uint64_t seed, std::size_t alphabet_size,
                                             double sharpness, double overlap) {
  if (overlap < 0.0 || overlap > 1.0) throw Error("synth overlap must lie in [0, 1]");
  SynthSpec spec;
  spec.seed = seed;
  spec.alphabet_size = alphabet_size;
  Rng rng(substream_seed(seed, "synth/transitions"));
  spec.transitions.assign(2, {});
  for (auto& matrix : spec.transitions) {
    for (std::size_t from = 0; from < alphabet_size; ++from) {
      matrix.push_back(random_row(rng, alphabet_size, sharpness));
    }
  }
  const std::size_t other = 1 - spec.target_domain;
  for (std::size_t from = 0; from < alphabet_size; ++from) {
    auto& row = spec.transitions[spec.target_domain][from];
    const auto& base = spec.transitions[other][from];
    double total = 0.0;
    for (std::size_t to = 0; to < alphabet_size; ++to) {
      row[to] = (1.0 - overlap) * row[to] + overlap * base[to];
      total += row[to];
    }
    for (auto& w : row) w /= total;
  }
  return spec;
}

void SynthSpec::validate() const {
  if (alphabet_size < 2 || alphabet_size > 26) {
    throw Error("synth alphabet size must lie in [2, 26]");
  }
  if (domain_labels.size() != 2 || mixture.size() != 2 || transitions.size() != 2) {
    throw Error("synth spec must describe exactly two domains");
  }
  if (target_domain >= 2) throw Error("synth target domain must be 0 or 1");
  double mix_total = 0.0;
  for (double w : mixture) {
    if (!(w >= 0.0)) throw Error("synth mixture weights must be non-negative");
    mix_total += w;
  }
  if (std::abs(mix_total - 1.0) > kRowTolerance) throw Error("synth mixture weights must sum to 1");
  for (std::size_t d = 0; d < transitions.size(); ++d) {
    if (transitions[d].size() != alphabet_size) {
      throw Error(fmt::format("synth domain {} transition matrix has wrong row count", d));
    }
    for (std::size_t r = 0; r < alphabet_size; ++r) {
      const auto& row = transitions[d][r];
      if (row.size() != alphabet_size) {
        throw Error(fmt::format("synth domain {} row {} has wrong length", d, r));
      }
      double total = 0.0;
      for (double p : row) {
        if (!(p >= 0.0)) throw Error(fmt::format("synth domain {} row {} has a negative entry", d, r));
        total += p;
      }
      if (std::abs(total - 1.0) > kRowTolerance) {
        throw Error(fmt::format("synth domain {} row {} sums to {:.17g}, not 1", d, r, total));
      }
    }
  }
  if (min_doc_len == 0 || min_doc_len > max_doc_len) throw Error("synth document length range is empty");
}

namespace {

std::vector<Document> generate_split(const SynthSpec& spec, std::string_view name,
                                     std::size_t count, std::optional<std::size_t> fixed_domain) {
  Rng rng(substream_seed(spec.seed, fmt::format("synth/{}", name)));
  const std::vector<double> initial(spec.alphabet_size, 1.0 / static_cast<double>(spec.alphabet_size));
  std::vector<Document> docs;
  docs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t domain = fixed_domain ? *fixed_domain : draw_categorical(rng, spec.mixture);
    const std::size_t length =
        spec.min_doc_len + rng.below(spec.max_doc_len - spec.min_doc_len + 1);
    std::string text;
    text.reserve(length);
    std::size_t state = draw_categorical(rng, initial);
    text.push_back(symbol_byte(state));
    while (text.size() < length) {
      state = draw_categorical(rng, spec.transitions[domain][state]);
      text.push_back(symbol_byte(state));
    }
    docs.push_back({fmt::format("{}-{:07}", name, i), std::move(text), spec.domain_labels[domain]});
  }
  return docs;
}

}  // namespace

SynthCorpora gen_synth(const SynthSpec& spec) {
  spec.validate();
  SynthCorpora out;
  out.train = generate_split(spec, "train", spec.train_docs, std::nullopt);
  out.prior = generate_split(spec, "prior", spec.prior_docs, std::nullopt);
  out.down = generate_split(spec, "down", spec.down_docs, spec.target_domain);
  out.eval_down = generate_split(spec, "eval_down", spec.eval_down_docs, spec.target_domain);
  out.eval_train = generate_split(spec, "eval_train", spec.eval_train_docs, std::nullopt);
  return out;
}

}  // namespace color_sieve
