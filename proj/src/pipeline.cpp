#include "color_sieve/pipeline.hpp"

#include <array>
#include <fstream>
#include <functional>

#include <fmt/format.h>

#include "color_sieve/evaluator.hpp"
#include "color_sieve/scorer.hpp"
#include "color_sieve/selector.hpp"
#include "color_sieve/seq_store.hpp"

namespace color_sieve {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, 5> kSplits{"train", "prior", "down", "eval_down",
                                                  "eval_train"};

struct Layout {
  fs::path root;
  fs::path jsonl(std::string_view split) const { return root / "data" / fmt::format("{}.jsonl", split); }
  fs::path seqs(std::string_view split) const { return root / "data" / fmt::format("{}.seq", split); }
  fs::path prior_model() const { return root / "models" / "prior.model"; }
  fs::path cond_model() const { return root / "models" / "cond.model"; }
  fs::path target_model() const { return root / "models" / "target.model"; }
  fs::path scores() const { return root / "scores.tsv"; }
  fs::path selection() const { return root / "selection.json"; }
  fs::path eval() const { return root / "eval.json"; }
  fs::path report_dir() const { return root / "report"; }
};

struct Stage {
  std::string name;
  std::function<std::vector<fs::path>(const Layout&)> outputs;
  std::function<void(const RunConfig&, const Layout&)> run;
};

ExperimentData load_experiment(const RunConfig& config, const Layout& layout) {
  ExperimentData data;
  data.context_length = config.context_length;
  data.target_label = config.target_label;
  data.train = read_sequences(layout.seqs("train"));
  data.prior = read_sequences(layout.seqs("prior"));
  data.down = read_sequences(layout.seqs("down"));
  data.eval_down = read_sequences(layout.seqs("eval_down"));
  data.eval_train = read_sequences(layout.seqs("eval_train"));
  return data;
}

void run_corpus(const RunConfig& config, const Layout& layout) {
  fs::create_directories(layout.root / "data");
  std::array<std::vector<Document>, kSplits.size()> docs;
  if (config.synthetic) {
    auto corpora = gen_synth(config.synth_spec());
    docs = {std::move(corpora.train), std::move(corpora.prior), std::move(corpora.down),
            std::move(corpora.eval_down), std::move(corpora.eval_train)};
  } else {
    const std::array<const std::string*, kSplits.size()> paths{
        &config.train_path, &config.prior_path, &config.down_path, &config.eval_down_path,
        &config.eval_train_path};
    for (std::size_t i = 0; i < kSplits.size(); ++i) docs[i] = load_jsonl(*paths[i]);
  }
  const auto meta = config.meta("corpus");
  for (std::size_t i = 0; i < kSplits.size(); ++i) {
    write_jsonl(layout.jsonl(kSplits[i]), docs[i]);
    const auto seqs = chunk_documents(docs[i], config.context_length, config.workers);
    write_sequences(layout.seqs(kSplits[i]), config.context_length, seqs, meta);
  }
}

void run_train_prior(const RunConfig& config, const Layout& layout) {
  fs::create_directories(layout.root / "models");
  SequenceReader prior(layout.seqs("prior"));
  const auto model = NGramModel::train(prior, config.aux_order, config.alpha);
  save_model(model, layout.prior_model(), config.meta("train-prior"));
}

void run_finetune(const RunConfig& config, const Layout& layout) {
  const auto prior = load_ngram(layout.prior_model());
  const auto down = read_sequences(layout.seqs("down"));
  const auto cond = make_conditional(prior, down, config.conditional);
  save_model(*cond, layout.cond_model(), config.meta("finetune"));
}

void run_score(const RunConfig& config, const Layout& layout) {
  const auto cond = load_model(layout.cond_model());
  const auto marg = load_model(layout.prior_model());
  SequenceReader train(layout.seqs("train"));
  score_stream(*cond.model, *marg.model, train, layout.scores(), config.meta("score"),
               ScoreOptions{.workers = config.workers});
}

SweepConfig sweep_config(const RunConfig& config) {
  SweepConfig sweep;
  sweep.methods = config.sweep_methods;
  sweep.taus = config.sweep_taus;
  sweep.n = config.n;
  sweep.batch_size = config.batch_size;
  sweep.seed = config.stage_seed("select");
  sweep.lambda = config.conditional.lambda;
  sweep.dsir.buckets = config.dsir_buckets;
  sweep.online.marginal_order = config.aux_order;
  sweep.online.marginal_alpha = config.alpha;
  sweep.online.workers = config.workers;
  sweep.eval.target_order = config.target_order;
  sweep.eval.target_alpha = config.target_alpha;
  sweep.eval.shuffle_curves = config.shuffle_curves;
  sweep.meta = config.meta("select");
  return sweep;
}

AuxiliaryModels load_auxiliary(const Layout& layout) {
  AuxiliaryModels models;
  models.prior = std::make_unique<NGramModel>(load_ngram(layout.prior_model()));
  models.conditional = load_model(layout.cond_model()).model;
  models.scores = read_scores(layout.scores());
  return models;
}

void run_select(const RunConfig& config, const Layout& layout) {
  const auto sweep = sweep_config(config);
  SelectionResult result;
  if (selects_from_scores(config.method)) {
    SelectionConfig sel{.n = config.n, .tau = config.tau, .batch_size = config.batch_size,
                        .seed = sweep.seed, .method = config.method};
    result = select_from_scores(read_scores(layout.scores()), sel);
    result.meta = sweep.meta;
  } else {
    const auto data = load_experiment(config, layout);
    const auto models = load_auxiliary(layout);
    result = run_selection(data, models, config.method, config.tau, sweep);
  }
  save_selection(result, layout.selection());
}

void run_train_target(const RunConfig& config, const Layout& layout) {
  const auto selection = load_selection(layout.selection());
  const auto train = read_sequences(layout.seqs("train"));
  const auto model = train_target(gather(train, selection.selected), config.target_order,
                                  config.target_alpha);
  save_model(model, layout.target_model(), config.meta("train-target"));
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << j.dump(2) << '\n';
  if (!out) throw Error(fmt::format("write failed for '{}'", path.string()));
}

void run_eval(const RunConfig& config, const Layout& layout) {
  const auto data = load_experiment(config, layout);
  const auto selection = load_selection(layout.selection());
  const auto target = load_ngram(layout.target_model());
  std::vector<ScoreRecord> pool;
  if (selects_from_scores(config.method) && config.method != Method::kRandom) {
    pool = sampled_pool(read_scores(layout.scores()), config.tau * config.n, selection.seed);
  }
  EvalSettings settings = sweep_config(config).eval;
  auto report = evaluate_selection(data, selection, pool, settings, &target);
  report.meta = config.meta("eval");
  write_json(layout.eval(), report.to_json());
}

void run_report(const RunConfig& config, const Layout& layout) {
  const auto data = load_experiment(config, layout);
  const auto models = load_auxiliary(layout);
  const auto reports = tau_sweep(data, models, sweep_config(config));
  write_report(layout.report_dir(), reports);
}

const std::vector<Stage>& stages() {
  static const std::vector<Stage> kStages{
      {"corpus",
       [](const Layout& l) {
         std::vector<fs::path> out;
         for (auto split : kSplits) {
           out.push_back(l.jsonl(split));
           out.push_back(l.seqs(split));
         }
         return out;
       },
       run_corpus},
      {"train-prior", [](const Layout& l) { return std::vector<fs::path>{l.prior_model()}; },
       run_train_prior},
      {"finetune", [](const Layout& l) { return std::vector<fs::path>{l.cond_model()}; },
       run_finetune},
      {"score", [](const Layout& l) { return std::vector<fs::path>{l.scores()}; }, run_score},
      {"select", [](const Layout& l) { return std::vector<fs::path>{l.selection()}; }, run_select},
      {"train-target", [](const Layout& l) { return std::vector<fs::path>{l.target_model()}; },
       run_train_target},
      {"eval", [](const Layout& l) { return std::vector<fs::path>{l.eval()}; }, run_eval},
      {"report",
       [](const Layout& l) { return std::vector<fs::path>{l.report_dir() / "results.tsv"}; },
       run_report},
  };
  return kStages;
}

bool outputs_current(const std::vector<fs::path>& outputs, const std::string& hash) {
  for (const auto& path : outputs) {
    if (!fs::exists(path)) return false;
    if (path.extension() == ".jsonl") continue;
    if (artifact_config_hash(path) != hash) return false;
  }
  return true;
}

}  // namespace

nlohmann::ordered_json PipelineSummary::to_json() const {
  nlohmann::ordered_json j;
  j["run_dir"] = run_dir.string();
  j["config_hash"] = config_hash;
  auto list = nlohmann::ordered_json::array();
  for (const auto& s : stages) list.push_back({{"stage", s.name}, {"ran", s.ran}});
  j["stages"] = std::move(list);
  return j;
}

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> kNames = [] {
    std::vector<std::string> names;
    for (const auto& s : stages()) names.push_back(s.name);
    return names;
  }();
  return kNames;
}

PipelineSummary run_pipeline(const RunConfig& config, const fs::path& run_dir) {
  const Layout layout{run_dir};
  fs::create_directories(run_dir);
  const std::string hash = config.hash();
  {
    std::ofstream resolved(run_dir / "config.resolved.ini", std::ios::binary);
    resolved << "# config_hash " << hash << '\n' << config.canonical();
  }

  PipelineSummary summary{run_dir, hash, {}};
  bool upstream_ran = false;
  for (const auto& stage : stages()) {
    const bool current = !upstream_ran && outputs_current(stage.outputs(layout), hash);
    if (!current) {
      try {
        stage.run(config, layout);
      } catch (const std::exception& e) {
        throw Error(fmt::format("stage '{}' failed: {}", stage.name, e.what()));
      }
      upstream_ran = true;
    }
    summary.stages.push_back({stage.name, !current});
  }
  return summary;
}

std::optional<std::string> artifact_config_hash(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    const auto ext = path.extension();
    if (ext == ".seq") return SequenceReader(path).meta().config_hash;
    if (ext == ".model") {
      std::ifstream in(path, std::ios::binary);
      std::string line;
      std::getline(in, line);
      std::getline(in, line);
      if (line.rfind("meta ", 0) != 0) return std::nullopt;
      return ArtifactMeta::from_json(nlohmann::json::parse(line.substr(5))).config_hash;
    }
    if (ext == ".tsv") {
      std::ifstream in(path, std::ios::binary);
      std::string line;
      std::getline(in, line);
      if (line.rfind("# ", 0) != 0) return std::nullopt;
      return ArtifactMeta::from_json(nlohmann::json::parse(line.substr(2))).config_hash;
    }
    if (ext == ".json") {
      std::ifstream in(path, std::ios::binary);
      const auto j = nlohmann::json::parse(in);
      return ArtifactMeta::from_json(j.at("meta")).config_hash;
    }
  } catch (const std::exception&) {
    return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace color_sieve
