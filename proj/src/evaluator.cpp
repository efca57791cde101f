#include "color_sieve/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "color_sieve/rng.hpp"

namespace color_sieve {

NGramModel train_target(std::span<const TokenSequence> selection, std::size_t order, double alpha) {
  return NGramModel::train(selection, order, alpha);
}

double held_out_ce(const LanguageModel& model, std::span<const TokenSequence> eval) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& seq : eval) {
    if (seq.tokens.empty()) continue;
    nll -= model.log_prob(seq.tokens);
    tokens += seq.tokens.size();
  }
  if (tokens == 0) throw Error("held-out corpus has no tokens");
  return nll / static_cast<double>(tokens);
}

double selection_precision(std::span<const std::string> selected,
                           const std::unordered_map<std::string, std::optional<std::string>>& labels,
                           std::string_view target) {
  if (selected.empty()) throw Error("precision of an empty selection");
  std::size_t hits = 0;
  for (const auto& id : selected) {
    auto it = labels.find(id);
    if (it == labels.end()) throw Error(fmt::format("selected id '{}' has no label entry", id));
    if (it->second && *it->second == target) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(selected.size());
}

std::unordered_map<std::string, std::optional<std::string>> label_map(
    std::span<const TokenSequence> corpus) {
  std::unordered_map<std::string, std::optional<std::string>> labels;
  labels.reserve(corpus.size());
  for (const auto& s : corpus) labels.emplace(s.seq_id, s.domain);
  return labels;
}

std::vector<TokenSequence> gather(std::span<const TokenSequence> corpus,
                                  std::span<const std::string> ids) {
  std::unordered_map<std::string_view, std::size_t> index;
  index.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) index.emplace(corpus[i].seq_id, i);
  std::vector<TokenSequence> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw Error(fmt::format("selected id '{}' not found in corpus", id));
    out.push_back(corpus[it->second]);
  }
  return out;
}

std::vector<CurvePoint> learning_curve(std::span<const TokenSequence> selection,
                                       std::span<const TokenSequence> eval,
                                       std::span<const std::size_t> checkpoints, std::size_t order,
                                       double alpha) {
  NGramModel model(order, alpha);
  std::vector<CurvePoint> curve;
  std::size_t consumed = 0;
  std::size_t tokens = 0;
  for (std::size_t cp : checkpoints) {
    if (cp < consumed || cp > selection.size()) throw Error("learning-curve checkpoints out of order");
    for (; consumed < cp; ++consumed) {
      model.add_counts(selection[consumed].tokens);
      tokens += selection[consumed].tokens.size();
    }
    curve.push_back({static_cast<double>(tokens), held_out_ce(model, eval)});
  }
  return curve;
}

std::vector<std::size_t> default_checkpoints(std::size_t n) {
  std::vector<std::size_t> cps;
  for (std::size_t i = 1; i <= 8; ++i) {
    const std::size_t cp = std::max<std::size_t>(1, n * i / 8);
    if (cps.empty() || cps.back() != cp) cps.push_back(cp);
  }
  return cps;
}

ExperimentData build_synthetic_experiment(const SynthSpec& spec, std::size_t context_length,
                                          std::size_t workers) {
  const auto corpora = gen_synth(spec);
  ExperimentData data;
  data.context_length = context_length;
  data.train = chunk_documents(corpora.train, context_length, workers);
  data.prior = chunk_documents(corpora.prior, context_length, workers);
  data.down = chunk_documents(corpora.down, context_length, workers);
  data.eval_down = chunk_documents(corpora.eval_down, context_length, workers);
  data.eval_train = chunk_documents(corpora.eval_train, context_length, workers);
  data.target_label = spec.domain_labels.at(spec.target_domain);
  return data;
}

AuxiliaryModels fit_auxiliary(const ExperimentData& data, const AuxiliaryConfig& config) {
  AuxiliaryModels models;
  models.prior = std::make_unique<NGramModel>(NGramModel::train(data.prior, config.order, config.alpha));
  models.conditional = make_conditional(*models.prior, data.down, config.conditional);
  VectorSource source(data.train);
  models.scores = score_sequences(*models.conditional, *models.prior, source,
                                  ScoreOptions{.workers = config.workers});
  return models;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "color-sieve-eval";
  j["version"] = 1;
  j["meta"] = meta.to_json();
  j["method"] = method;
  j["tau"] = tau;
  j["n"] = n;
  j["seed"] = seed;
  j["ce_down"] = ce_down;
  j["ce_train"] = ce_train;
  j["precision"] = precision;
  j["threshold"] = threshold ? nlohmann::ordered_json(*threshold) : nlohmann::ordered_json(nullptr);
  if (cdf) {
    nlohmann::ordered_json c;
    c["count"] = cdf->count;
    c["mean"] = cdf->mean;
    c["fraction_below_zero"] = cdf->fraction_below_zero;
    c["min"] = cdf->min;
    c["max"] = cdf->max;
    auto q = nlohmann::ordered_json::array();
    for (const auto& [p, v] : cdf->quantiles) q.push_back({p, v});
    c["quantiles"] = std::move(q);
    j["cdf"] = std::move(c);
  } else {
    j["cdf"] = nullptr;
  }
  auto points = nlohmann::ordered_json::array();
  for (const auto& p : curve) points.push_back({p.tokens, p.loss});
  j["curve"] = std::move(points);
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "color-sieve-eval") throw Error("not an eval report");
    EvalReport r;
    r.meta = ArtifactMeta::from_json(j.at("meta"));
    r.method = j.at("method").get<std::string>();
    r.tau = j.at("tau").get<std::size_t>();
    r.n = j.at("n").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ce_down = j.at("ce_down").get<double>();
    r.ce_train = j.at("ce_train").get<double>();
    r.precision = j.at("precision").get<double>();
    if (!j.at("threshold").is_null()) r.threshold = j.at("threshold").get<double>();
    if (!j.at("cdf").is_null()) {
      const auto& c = j.at("cdf");
      CdfSummary s;
      s.count = c.at("count").get<std::size_t>();
      s.mean = c.at("mean").get<double>();
      s.fraction_below_zero = c.at("fraction_below_zero").get<double>();
      s.min = c.at("min").get<double>();
      s.max = c.at("max").get<double>();
      for (const auto& q : c.at("quantiles")) s.quantiles.emplace_back(q.at(0).get<double>(), q.at(1).get<double>());
      r.cdf = std::move(s);
    }
    for (const auto& p : j.at("curve")) r.curve.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("malformed eval report: {}", e.what()));
  }
}

EvalReport evaluate_selection(const ExperimentData& data, const SelectionResult& selection,
                              std::span<const ScoreRecord> pool, const EvalSettings& settings,
                              const NGramModel* target_model) {
  auto selected = gather(data.train, selection.selected);
  std::optional<NGramModel> trained;
  if (!target_model) trained = train_target(selected, settings.target_order, settings.target_alpha);
  const NGramModel& target = target_model ? *target_model : *trained;

  EvalReport report;
  report.method = std::string(method_name(selection.method));
  report.tau = selection.tau;
  report.n = selection.n;
  report.seed = selection.seed;
  report.meta = selection.meta;
  report.ce_down = held_out_ce(target, data.eval_down);
  report.ce_train = held_out_ce(target, data.eval_train);
  report.precision = selection_precision(selection.selected, label_map(data.train), data.target_label);
  report.threshold = selection.threshold;
  if (!pool.empty()) report.cdf = score_cdf(pool, settings.cdf_quantiles);
  if (settings.curves) {
    if (settings.shuffle_curves) {
      const auto order = permutation_prefix(selected.size(), selected.size(),
                                            substream_seed(selection.seed, "eval/curve-shuffle"));
      std::vector<TokenSequence> shuffled;
      shuffled.reserve(selected.size());
      for (std::size_t i : order) shuffled.push_back(std::move(selected[i]));
      selected = std::move(shuffled);
    }
    const auto checkpoints = default_checkpoints(selected.size());
    report.curve = learning_curve(selected, data.eval_down, checkpoints, settings.target_order,
                                  settings.target_alpha);
  }
  return report;
}

namespace {

bool uses_tau(Method m) { return m != Method::kRandom && m != Method::kDsir; }

bool score_based(Method m) { return selects_from_scores(m) && m != Method::kRandom; }

}  // namespace

std::vector<ScoreRecord> sampled_pool(std::span<const ScoreRecord> records, std::size_t size,
                                      std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.seq_id);
  std::vector<ScoreRecord> pool;
  pool.reserve(size);
  for (std::size_t i : sample_subset(ids, size, seed)) pool.push_back(records[i]);
  return pool;
}

SelectionResult run_selection(const ExperimentData& data, const AuxiliaryModels& models,
                              Method method, std::size_t tau, const SweepConfig& config) {
  SelectionConfig sel;
  sel.n = config.n;
  sel.tau = tau;
  sel.batch_size = config.batch_size;
  sel.seed = config.seed;
  sel.method = method;
  SelectionResult result;
  switch (method) {
    case Method::kColorFilter:
    case Method::kConditionalOnly:
    case Method::kColorFilterBatchwise:
    case Method::kRandom:
      result = select_from_scores(models.scores, sel);
      break;
    case Method::kRhoDown: {
      const auto cond = NGramModel::train(data.down, models.prior->order(), models.prior->alpha());
      result = select_rho_down(cond, data.train, sel, config.online);
      break;
    }
    case Method::kRhoDownPrior:
      result = select_rho_down(*models.conditional, data.train, sel, config.online);
      break;
    case Method::kDsir:
      result = select_dsir(data.train, data.down, config.n, config.seed, config.dsir);
      break;
    case Method::kOnlineColor:
      result = select_online_color(*models.prior, data.down, data.train, sel, config.lambda,
                                   config.online);
      break;
  }
  result.meta = config.meta;
  return result;
}

std::vector<EvalReport> tau_sweep(const ExperimentData& data, const AuxiliaryModels& models,
                                  const SweepConfig& config) {
  std::vector<EvalReport> reports;
  for (Method method : config.methods) {
    const std::vector<std::size_t> taus =
        uses_tau(method) ? config.taus : std::vector<std::size_t>{1};
    for (std::size_t tau : taus) {
      auto selection = run_selection(data, models, method, tau, config);
      std::vector<ScoreRecord> pool;
      if (score_based(method)) pool = sampled_pool(models.scores, tau * config.n, config.seed);
      reports.push_back(evaluate_selection(data, selection, pool, config.eval));
    }
  }
  return reports;
}

namespace {

std::string run_name(const EvalReport& r) {
  return fmt::format("{}_tau{}_seed{}", r.method, r.tau, r.seed);
}

std::string real(double v) { return fmt::format("{:.17g}", v); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw Error(fmt::format("write failed for '{}'", path.string()));
}

}  // namespace

void write_report(const std::filesystem::path& dir, std::span<const EvalReport> reports) {
  if (reports.empty()) throw Error("no eval reports to write");
  for (const auto& r : reports) {
    if (r.meta.config_hash != reports.front().meta.config_hash) {
      throw Error(fmt::format("refusing to mix config hashes '{}' and '{}'",
                              reports.front().meta.config_hash, r.meta.config_hash));
    }
  }
  std::filesystem::create_directories(dir / "curves");
  std::filesystem::create_directories(dir / "cdf");

  std::string results = "# " + reports.front().meta.to_json().dump() + "\n";
  results +=
      "run\tmethod\ttau\tn\tseed\tce_down\tce_train\tprecision\tthreshold\tcdf_mean\t"
      "cdf_fraction_below_zero\n";
  for (const auto& r : reports) {
    results += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", run_name(r), r.method,
                           r.tau, r.n, r.seed, real(r.ce_down), real(r.ce_train), real(r.precision),
                           r.threshold ? real(*r.threshold) : "NA", r.cdf ? real(r.cdf->mean) : "NA",
                           r.cdf ? real(r.cdf->fraction_below_zero) : "NA");
    if (!r.curve.empty()) {
      std::string curve = "tokens\tce_down\n";
      for (const auto& p : r.curve) curve += fmt::format("{}\t{}\n", real(p.tokens), real(p.loss));
      write_text(dir / "curves" / (run_name(r) + ".tsv"), curve);
    }
    if (r.cdf) {
      std::string cdf = fmt::format("# count={} mean={} fraction_below_zero={} cutoff={}\n",
                                    r.cdf->count, real(r.cdf->mean), real(r.cdf->fraction_below_zero),
                                    r.threshold ? real(*r.threshold) : "NA");
      cdf += "quantile\tcolor\n";
      for (const auto& [q, v] : r.cdf->quantiles) cdf += fmt::format("{}\t{}\n", real(q), real(v));
      write_text(dir / "cdf" / (run_name(r) + ".tsv"), cdf);
    }
  }
  write_text(dir / "results.tsv", results);
}

}  // namespace color_sieve
