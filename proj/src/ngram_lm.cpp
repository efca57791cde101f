#include "color_sieve/ngram_lm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>

namespace color_sieve {

double LanguageModel::log_prob(std::span<const TokenId> seq) const {
  if (seq.empty()) throw Error("log_prob of an empty sequence");
  std::vector<double> probs(seq.size());
  token_probs(seq, probs);
  double total = 0.0;
  for (double p : probs) total += std::log(p);
  return total;
}

UniformModel::UniformModel(std::size_t vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size < 2) throw Error("vocabulary size must be at least 2");
}

void UniformModel::token_probs(std::span<const TokenId> seq, std::span<double> probs) const {
  const double p = 1.0 / static_cast<double>(vocab_size_);
  for (std::size_t i = 0; i < seq.size(); ++i) probs[i] = p;
}

double UniformModel::log_prob(std::span<const TokenId> seq) const {
  if (seq.empty()) throw Error("log_prob of an empty sequence");
  return static_cast<double>(seq.size()) * std::log(1.0 / static_cast<double>(vocab_size_));
}

std::unique_ptr<LanguageModel> UniformModel::clone() const {
  return std::make_unique<UniformModel>(*this);
}

NGramModel::NGramModel(std::size_t order, double alpha, std::size_t vocab_size)
    : order_(order), alpha_(alpha), vocab_size_(vocab_size) {
  if (order < 1) throw Error("n-gram order must be at least 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error("smoothing alpha must be positive");
  if (vocab_size < 2 || vocab_size >= 0xFFFF) throw Error("vocabulary size must lie in [2, 65535)");
  bits_ = static_cast<unsigned>(std::bit_width(vocab_size));
  const std::size_t key_bits = (order - 1) * bits_;
  if (key_bits >= 64) {
    throw Error(fmt::format("order {} is too large for vocabulary size {}", order, vocab_size));
  }
  mask_ = (std::uint64_t{1} << key_bits) - 1;
  initial_key_ = 0;
  for (std::size_t i = 0; i + 1 < order; ++i) initial_key_ = push(initial_key_, padding_token());
}

NGramModel NGramModel::train(SequenceSource& corpus, std::size_t order, double alpha,
                             std::size_t vocab_size) {
  NGramModel model(order, alpha, vocab_size);
  TokenSequence seq;
  while (corpus.next(seq)) model.add_counts(seq.tokens);
  return model;
}

NGramModel NGramModel::train(std::span<const TokenSequence> corpus, std::size_t order,
                             double alpha, std::size_t vocab_size) {
  NGramModel model(order, alpha, vocab_size);
  for (const auto& seq : corpus) model.add_counts(seq.tokens);
  return model;
}

void NGramModel::add_counts(std::span<const TokenId> seq) {
  std::uint64_t key = initial_key_;
  for (TokenId token : seq) {
    if (token >= vocab_size_) {
      throw Error(fmt::format("token id {} outside vocabulary of size {}", token, vocab_size_));
    }
    auto& ctx = table_[key];
    auto it = std::lower_bound(ctx.entries.begin(), ctx.entries.end(), token,
                               [](const auto& e, TokenId t) { return e.first < t; });
    if (it != ctx.entries.end() && it->first == token) {
      ++it->second;
    } else {
      ctx.entries.insert(it, {token, 1});
    }
    ++ctx.total;
    ++trained_tokens_;
    key = push(key, token);
  }
}

void NGramModel::merge(const NGramModel& other, std::uint64_t times) {
  if (other.order_ != order_ || other.vocab_size_ != vocab_size_ || other.alpha_ != alpha_) {
    throw Error("cannot merge n-gram models with different order, alpha or vocabulary");
  }
  if (times == 0) return;
  for (const auto& [key, counts] : other.table_) {
    auto& ctx = table_[key];
    for (const auto& [token, c] : counts.entries) {
      auto it = std::lower_bound(ctx.entries.begin(), ctx.entries.end(), token,
                                 [](const auto& e, TokenId t) { return e.first < t; });
      if (it != ctx.entries.end() && it->first == token) {
        it->second += c * times;
      } else {
        ctx.entries.insert(it, {token, c * times});
      }
    }
    ctx.total += counts.total * times;
  }
  trained_tokens_ += other.trained_tokens_ * times;
}

double NGramModel::prob_key(std::uint64_t key, TokenId token) const {
  const double denom_extra = alpha_ * static_cast<double>(vocab_size_);
  auto found = table_.find(key);
  if (found == table_.end()) return alpha_ / denom_extra;
  const auto& ctx = found->second;
  auto it = std::lower_bound(ctx.entries.begin(), ctx.entries.end(), token,
                             [](const auto& e, TokenId t) { return e.first < t; });
  const double c = (it != ctx.entries.end() && it->first == token) ? static_cast<double>(it->second)
                                                                     : 0.0;
  return (c + alpha_) / (static_cast<double>(ctx.total) + denom_extra);
}

void NGramModel::token_probs(std::span<const TokenId> seq, std::span<double> probs) const {
  std::uint64_t key = initial_key_;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] >= vocab_size_) {
      throw Error(fmt::format("token id {} outside vocabulary of size {}", seq[i], vocab_size_));
    }
    probs[i] = prob_key(key, seq[i]);
    key = push(key, seq[i]);
  }
}

double NGramModel::log_prob(std::span<const TokenId> seq) const {
  if (seq.empty()) throw Error("log_prob of an empty sequence");
  std::uint64_t key = initial_key_;
  double total = 0.0;
  for (TokenId token : seq) {
    if (token >= vocab_size_) {
      throw Error(fmt::format("token id {} outside vocabulary of size {}", token, vocab_size_));
    }
    total += std::log(prob_key(key, token));
    key = push(key, token);
  }
  return total;
}

std::unique_ptr<LanguageModel> NGramModel::clone() const {
  return std::make_unique<NGramModel>(*this);
}

std::uint64_t NGramModel::pack(std::span<const TokenId> context) const {
  if (context.size() + 1 != order_) {
    throw Error(fmt::format("context has {} symbols, order-{} model expects {}", context.size(),
                            order_, order_ - 1));
  }
  std::uint64_t key = 0;
  for (TokenId t : context) {
    if (t > vocab_size_) throw Error(fmt::format("context symbol {} out of range", t));
    key = push(key, t);
  }
  return key;
}

std::vector<TokenId> NGramModel::unpack(std::uint64_t key) const {
  std::vector<TokenId> context(order_ - 1);
  const std::uint64_t symbol_mask = (std::uint64_t{1} << bits_) - 1;
  for (std::size_t i = context.size(); i-- > 0;) {
    context[i] = static_cast<TokenId>(key & symbol_mask);
    key >>= bits_;
  }
  return context;
}

double NGramModel::prob(std::span<const TokenId> context, TokenId token) const {
  if (token >= vocab_size_) throw Error(fmt::format("token id {} out of range", token));
  return prob_key(pack(context), token);
}

std::uint64_t NGramModel::count(std::span<const TokenId> context, TokenId token) const {
  auto found = table_.find(pack(context));
  if (found == table_.end()) return 0;
  for (const auto& [t, c] : found->second.entries) {
    if (t == token) return c;
  }
  return 0;
}

std::uint64_t NGramModel::context_total(std::span<const TokenId> context) const {
  auto found = table_.find(pack(context));
  return found == table_.end() ? 0 : found->second.total;
}

std::vector<std::pair<std::vector<TokenId>, const NGramModel::ContextCounts*>>
NGramModel::sorted_contexts() const {
  std::vector<std::uint64_t> keys;
  keys.reserve(table_.size());
  for (const auto& entry : table_) keys.push_back(entry.first);
  std::sort(keys.begin(), keys.end());
  std::vector<std::pair<std::vector<TokenId>, const ContextCounts*>> out;
  out.reserve(keys.size());
  for (auto key : keys) out.emplace_back(unpack(key), &table_.at(key));
  return out;
}

void NGramModel::set_context(std::span<const TokenId> context, ContextCounts counts) {
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < counts.entries.size(); ++i) {
    const auto& [token, c] = counts.entries[i];
    if (token >= vocab_size_ || c == 0 || (i > 0 && counts.entries[i - 1].first >= token)) {
      throw Error("invalid context counts");
    }
    sum += c;
  }
  if (sum != counts.total) throw Error("context total does not match its counts");
  table_[pack(context)] = std::move(counts);
}

bool NGramModel::operator==(const NGramModel& other) const {
  return order_ == other.order_ && alpha_ == other.alpha_ && vocab_size_ == other.vocab_size_ &&
         trained_tokens_ == other.trained_tokens_ && table_ == other.table_;
}

InterpolatedModel::InterpolatedModel(std::vector<NGramModel> components,
                                     std::vector<double> weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
  if (components_.empty() || components_.size() != weights_.size()) {
    throw Error("interpolation needs one weight per component");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w > 0.0 && w <= 1.0)) throw Error("interpolation weights must lie in (0, 1]");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("interpolation weights must sum to 1");
  for (const auto& c : components_) {
    if (c.vocab_size() != components_.front().vocab_size()) {
      throw Error("interpolated components must share a vocabulary");
    }
  }
}

std::size_t InterpolatedModel::vocab_size() const { return components_.front().vocab_size(); }

void InterpolatedModel::token_probs(std::span<const TokenId> seq, std::span<double> probs) const {
  std::vector<double> part(seq.size());
  std::fill(probs.begin(), probs.begin() + static_cast<std::ptrdiff_t>(seq.size()), 0.0);
  for (std::size_t c = 0; c < components_.size(); ++c) {
    components_[c].token_probs(seq, part);
    for (std::size_t i = 0; i < seq.size(); ++i) probs[i] += weights_[c] * part[i];
  }
}

std::unique_ptr<LanguageModel> InterpolatedModel::clone() const {
  return std::make_unique<InterpolatedModel>(*this);
}

std::unique_ptr<LanguageModel> make_conditional(const NGramModel& prior,
                                                std::span<const TokenSequence> down,
                                                const ConditionalMode& mode) {
  if (down.empty()) throw Error("downstream corpus is empty");
  auto down_model = NGramModel::train(down, prior.order(), prior.alpha(), prior.vocab_size());
  switch (mode.kind) {
    case ConditionalMode::Kind::kInterpolate:
      if (!(mode.lambda > 0.0 && mode.lambda <= 1.0)) {
        throw Error("interpolation lambda must lie in (0, 1]");
      }
      if (mode.lambda == 1.0) return std::make_unique<NGramModel>(std::move(down_model));
      return std::make_unique<InterpolatedModel>(
          std::vector<NGramModel>{prior, std::move(down_model)},
          std::vector<double>{1.0 - mode.lambda, mode.lambda});
    case ConditionalMode::Kind::kCountAdd: {
      if (mode.weight == 0) throw Error("count-add weight must be positive");
      auto cond = std::make_unique<NGramModel>(prior);
      cond->merge(down_model, mode.weight);
      return cond;
    }
  }
  throw Error("unknown conditional mode");
}

namespace {

constexpr std::string_view kModelMagic = "color-sieve-lm";
constexpr int kModelVersion = 1;

void write_ngram_body(std::string& out, const NGramModel& m) {
  out += fmt::format("model ngram\norder {}\nalpha {:.17g}\nvocab {}\ntrained_tokens {}\ncontexts {}\n",
                     m.order(), m.alpha(), m.vocab_size(), m.trained_tokens(), m.num_contexts());
  for (const auto& [context, counts] : m.sorted_contexts()) {
    std::string ctx;
    for (std::size_t i = 0; i < context.size(); ++i) {
      if (i) ctx += ' ';
      ctx += context[i] == m.padding_token() ? std::string("^") : std::to_string(context[i]);
    }
    out += ctx;
    out += fmt::format("\t{}\t", counts->total);
    for (std::size_t i = 0; i < counts->entries.size(); ++i) {
      if (i) out += ' ';
      out += fmt::format("{}:{}", counts->entries[i].first, counts->entries[i].second);
    }
    out += '\n';
  }
}

class LineParser {
 public:
  LineParser(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  std::string line() {
    std::string l;
    if (!std::getline(in_, l)) fail("unexpected end of file");
    ++line_no_;
    return l;
  }

  /// Reads "<key> <value>" and returns value.
  std::string field(std::string_view key) {
    const std::string l = line();
    if (l.size() <= key.size() || l.compare(0, key.size(), key) != 0 || l[key.size()] != ' ') {
      fail(fmt::format("expected '{}'", key));
    }
    return l.substr(key.size() + 1);
  }

  template <typename T>
  T number(std::string_view key) {
    const std::string v = field(key);
    std::istringstream ss(v);
    T value{};
    if (!(ss >> value) || !(ss >> std::ws).eof()) fail(fmt::format("bad value for '{}'", key));
    return value;
  }

  double real(std::string_view key) {
    const std::string v = field(key);
    try {
      std::size_t used = 0;
      const double value = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return value;
    } catch (const std::exception&) {
      fail(fmt::format("bad value for '{}'", key));
    }
  }

  [[noreturn]] void fail(std::string_view what) const {
    throw Error(fmt::format("corrupt model file '{}' (line {}): {}", name_, line_no_, what));
  }

 private:
  std::istream& in_;
  std::string name_;
  std::size_t line_no_ = 0;
};

// Everything after the "model ngram" line.
NGramModel read_ngram_fields(LineParser& p) {
  const auto order = p.number<std::size_t>("order");
  const double alpha = p.real("alpha");
  const auto vocab = p.number<std::size_t>("vocab");
  const auto trained = p.number<std::uint64_t>("trained_tokens");
  const auto contexts = p.number<std::size_t>("contexts");
  NGramModel model = [&] {
    try {
      return NGramModel(order, alpha, vocab);
    } catch (const Error& e) {
      p.fail(e.what());
    }
  }();
  for (std::size_t c = 0; c < contexts; ++c) {
    const std::string l = p.line();
    const auto tab1 = l.find('\t');
    const auto tab2 = tab1 == std::string::npos ? tab1 : l.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) p.fail("malformed context line");
    std::vector<TokenId> context;
    std::istringstream ctx(l.substr(0, tab1));
    std::string sym;
    while (ctx >> sym) {
      if (sym == "^") {
        context.push_back(model.padding_token());
      } else {
        try {
          context.push_back(static_cast<TokenId>(std::stoul(sym)));
        } catch (const std::exception&) {
          p.fail("bad context symbol");
        }
      }
    }
    NGramModel::ContextCounts counts;
    try {
      counts.total = std::stoull(l.substr(tab1 + 1, tab2 - tab1 - 1));
    } catch (const std::exception&) {
      p.fail("bad context total");
    }
    std::istringstream entries(l.substr(tab2 + 1));
    std::string item;
    while (entries >> item) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) p.fail("bad count entry");
      try {
        counts.entries.emplace_back(static_cast<TokenId>(std::stoul(item.substr(0, colon))),
                                    std::stoull(item.substr(colon + 1)));
      } catch (const std::exception&) {
        p.fail("bad count entry");
      }
    }
    try {
      model.set_context(context, std::move(counts));
    } catch (const Error& e) {
      p.fail(e.what());
    }
  }
  model.set_trained_tokens(trained);
  return model;
}

NGramModel read_ngram_body(LineParser& p) {
  if (p.field("model") != "ngram") p.fail("expected an ngram body");
  return read_ngram_fields(p);
}

}  // namespace

void save_model(const LanguageModel& model, const std::filesystem::path& path,
                const ArtifactMeta& meta) {
  std::string out = fmt::format("{} {}\nmeta {}\n", kModelMagic, kModelVersion, meta.to_json().dump());
  if (const auto* ngram = dynamic_cast<const NGramModel*>(&model)) {
    write_ngram_body(out, *ngram);
  } else if (const auto* mix = dynamic_cast<const InterpolatedModel*>(&model)) {
    out += fmt::format("model interpolated\ncomponents {}\n", mix->components().size());
    for (std::size_t i = 0; i < mix->components().size(); ++i) {
      out += fmt::format("weight {:.17g}\n", mix->weights()[i]);
      write_ngram_body(out, mix->components()[i]);
    }
  } else if (const auto* uniform = dynamic_cast<const UniformModel*>(&model)) {
    out += fmt::format("model uniform\nvocab {}\n", uniform->vocab_size());
  } else {
    throw Error("unsupported model type for serialization");
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error(fmt::format("cannot write model file '{}'", path.string()));
  file << out;
  if (!file) throw Error(fmt::format("write failed for '{}'", path.string()));
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(fmt::format("cannot open model file '{}'", path.string()));
  LineParser p(file, path.string());
  {
    const std::string header = p.line();
    std::istringstream ss(header);
    std::string magic;
    int version = 0;
    ss >> magic >> version;
    if (magic != kModelMagic) p.fail("not a color-sieve model file");
    if (version != kModelVersion) {
      throw Error(fmt::format("model file '{}' has format version {}, expected {}", path.string(),
                              version, kModelVersion));
    }
  }
  LoadedModel loaded;
  try {
    loaded.meta = ArtifactMeta::from_json(nlohmann::json::parse(p.field("meta")));
  } catch (const nlohmann::json::exception&) {
    p.fail("bad metadata");
  }
  const std::string kind = p.field("model");
  if (kind == "ngram") {
    loaded.model = std::make_unique<NGramModel>(read_ngram_fields(p));
  } else if (kind == "interpolated") {
    const auto count = p.number<std::size_t>("components");
    std::vector<NGramModel> components;
    std::vector<double> weights;
    for (std::size_t i = 0; i < count; ++i) {
      weights.push_back(p.real("weight"));
      components.push_back(read_ngram_body(p));
    }
    try {
      loaded.model = std::make_unique<InterpolatedModel>(std::move(components), std::move(weights));
    } catch (const Error& e) {
      p.fail(e.what());
    }
  } else if (kind == "uniform") {
    loaded.model = std::make_unique<UniformModel>(p.number<std::size_t>("vocab"));
  } else {
    p.fail(fmt::format("unknown model kind '{}'", kind));
  }
  return loaded;
}

NGramModel load_ngram(const std::filesystem::path& path, ArtifactMeta* meta) {
  auto loaded = load_model(path);
  auto* ngram = dynamic_cast<NGramModel*>(loaded.model.get());
  if (!ngram) throw Error(fmt::format("'{}' does not hold a plain n-gram model", path.string()));
  if (meta) *meta = loaded.meta;
  return std::move(*ngram);
}

}  // namespace color_sieve
