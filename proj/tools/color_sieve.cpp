// color-sieve command line: one subcommand per stage plus `pipeline`.
// Every subcommand prints a JSON summary on stdout and exits 0 on success.

#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "color_sieve/cost_model.hpp"
#include "color_sieve/evaluator.hpp"
#include "color_sieve/parallel.hpp"
#include "color_sieve/pipeline.hpp"

namespace fs = std::filesystem;
using namespace color_sieve;
using Json = nlohmann::ordered_json;

namespace {

// Options shared by every subcommand. Flags that correspond to config keys
// are collected in `overrides` and applied on top of --config and --set, so
// the artifact hash reflects them.
struct Common {
  std::string config_path;
  std::vector<std::string> assignments;
  std::map<std::string, std::string> overrides;

  RunConfig resolve() const {
    KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
    for (const auto& a : assignments) kv.set_assignment(a);
    for (const auto& [key, value] : overrides) kv.set(key, value);
    return RunConfig::from(kv);
  }
};

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_path, "Run configuration file")->check(CLI::ExistingFile);
  app->add_option("--set", common.assignments, "Override a config key: section.key=value (repeatable)");
  app->add_option_function<std::string>(
      "--workers", [&common](const std::string& v) { common.overrides["run.workers"] = v; },
      "Worker threads (capped by COLOR_SIEVE_WORKERS)");
}

/// Adds a flag that sets config key `key`.
CLI::Option* mapped(CLI::App* app, Common& common, const std::string& flag, const std::string& key,
                    const std::string& help) {
  return app->add_option_function<std::string>(
      flag, [&common, key](const std::string& v) { common.overrides[key] = v; },
      fmt::format("{} (config: {})", help, key));
}

Json meta_json(const ArtifactMeta& meta) { return meta.to_json(); }

std::vector<TokenSequence> read_seqs(const std::string& path) { return read_sequences(path); }

// ---------------------------------------------------------------------------

struct GenSynthArgs {
  std::string out_dir;
};

Json run_gen_synth(const Common& common, const GenSynthArgs& args) {
  const auto config = common.resolve();
  const auto corpora = gen_synth(config.synth_spec());
  fs::create_directories(args.out_dir);
  Json files = Json::object();
  auto write = [&](const char* name, const std::vector<Document>& docs) {
    const auto path = fs::path(args.out_dir) / (std::string(name) + ".jsonl");
    write_jsonl(path, docs);
    files[name] = {{"path", path.string()}, {"documents", docs.size()}};
  };
  write("train", corpora.train);
  write("prior", corpora.prior);
  write("down", corpora.down);
  write("eval_down", corpora.eval_down);
  write("eval_train", corpora.eval_train);
  return {{"config_hash", config.hash()}, {"seed", config.stage_seed("synth")}, {"files", files}};
}

struct ChunkArgs {
  std::string in, out;
};

Json run_chunk(const Common& common, const ChunkArgs& args) {
  const auto config = common.resolve();
  const auto docs = load_jsonl(args.in);
  const auto seqs = chunk_documents(docs, config.context_length, config.workers);
  const auto meta = config.meta("chunk");
  write_sequences(args.out, config.context_length, seqs, meta);
  std::size_t tokens = 0;
  for (const auto& d : docs) tokens += tokenize(d).size();
  const std::size_t kept = seqs.size() * config.context_length;
  return {{"out", args.out},
          {"documents", docs.size()},
          {"sequences", seqs.size()},
          {"context_length", config.context_length},
          {"tokens", tokens},
          {"dropped_tokens", tokens - kept},
          {"meta", meta_json(meta)}};
}

struct TrainLmArgs {
  std::string in, out;
};

Json run_train_lm(const Common& common, const TrainLmArgs& args) {
  const auto config = common.resolve();
  SequenceReader reader(args.in);
  const auto model = NGramModel::train(reader, config.aux_order, config.alpha);
  const auto meta = config.meta("train-prior");
  save_model(model, args.out, meta);
  return {{"out", args.out},
          {"order", model.order()},
          {"alpha", model.alpha()},
          {"trained_tokens", model.trained_tokens()},
          {"contexts", model.num_contexts()},
          {"meta", meta_json(meta)}};
}

struct FinetuneArgs {
  std::string prior, down, out;
};

Json run_finetune(const Common& common, const FinetuneArgs& args) {
  const auto config = common.resolve();
  const auto prior = load_ngram(args.prior);
  const auto down = read_seqs(args.down);
  const auto cond = make_conditional(prior, down, config.conditional);
  const auto meta = config.meta("finetune");
  save_model(*cond, args.out, meta);
  const bool count_add = config.conditional.kind == ConditionalMode::Kind::kCountAdd;
  Json out{{"out", args.out},
           {"mode", count_add ? "count_add" : "interpolate"},
           {"down_sequences", down.size()}};
  if (count_add) {
    out["weight"] = config.conditional.weight;
  } else {
    out["lambda"] = config.conditional.lambda;
  }
  out["meta"] = meta_json(meta);
  return out;
}

struct ScoreArgs {
  std::string cond, marg, in, out;
  std::size_t block_size = 4096;
};

Json run_score(const Common& common, const ScoreArgs& args) {
  const auto config = common.resolve();
  const auto cond = load_model(args.cond);
  std::unique_ptr<LanguageModel> marg;
  if (args.marg == "uniform") {
    marg = std::make_unique<UniformModel>(cond.model->vocab_size());
  } else {
    marg = load_model(args.marg).model;
  }
  SequenceReader reader(args.in);
  const auto meta = config.meta("score");
  const auto stats = score_stream(*cond.model, *marg, reader, args.out, meta,
                                  {.workers = config.workers, .block_size = args.block_size});
  return {{"out", args.out},
          {"records", stats.records},
          {"marginal", args.marg},
          {"workers", effective_workers(config.workers)},
          {"max_resident_sequences", stats.max_resident_sequences},
          {"meta", meta_json(meta)}};
}

struct SelectArgs {
  std::string scores, seqs, cond, prior, down, out;
  std::optional<std::uint64_t> seed;
};

Json run_select(const Common& common, const SelectArgs& args) {
  const auto config = common.resolve();
  SelectionConfig sel{.n = config.n,
                      .tau = config.tau,
                      .batch_size = config.batch_size,
                      .seed = args.seed.value_or(config.stage_seed("select")),
                      .method = config.method};
  auto need = [](const std::string& value, const char* flag) {
    if (value.empty()) throw Error(fmt::format("{} is required for this method", flag));
  };

  SelectionResult result;
  if (selects_from_scores(sel.method)) {
    need(args.scores, "--scores");
    result = select_from_scores(read_scores(args.scores), sel);
  } else {
    need(args.seqs, "--seqs");
    const auto train = read_seqs(args.seqs);
    const OnlineSelectorOptions online{.marginal_order = config.aux_order,
                                       .marginal_alpha = config.alpha,
                                       .workers = config.workers};
    switch (sel.method) {
      case Method::kRhoDown:
      case Method::kRhoDownPrior: {
        need(args.cond, "--cond");
        const auto cond = load_model(args.cond);
        result = select_rho_down(*cond.model, train, sel, online);
        break;
      }
      case Method::kOnlineColor: {
        need(args.prior, "--prior");
        need(args.down, "--down");
        result = select_online_color(load_ngram(args.prior), read_seqs(args.down), train, sel,
                                     config.conditional.lambda, online);
        break;
      }
      case Method::kDsir: {
        need(args.down, "--down");
        result = select_dsir(train, read_seqs(args.down), sel.n, sel.seed,
                             {.buckets = config.dsir_buckets});
        result.tau = sel.tau;
        break;
      }
      default:
        throw Error("unsupported method");
    }
  }
  result.meta = config.meta("select");
  result.meta.seed = sel.seed;
  save_selection(result, args.out);
  Json out{{"out", args.out},
           {"method", method_name(result.method)},
           {"n", result.n},
           {"tau", result.tau},
           {"seed", result.seed},
           {"selected", result.selected.size()}};
  out["threshold"] = result.threshold ? Json(*result.threshold) : Json(nullptr);
  out["meta"] = meta_json(result.meta);
  return out;
}

struct MaterializeArgs {
  std::string selection, seqs, out;
};

Json run_materialize(const Common&, const MaterializeArgs& args) {
  const auto selection = load_selection(args.selection);
  SequenceReader reader(args.seqs);
  std::vector<TokenSequence> all;
  for (TokenSequence s; reader.next(s);) all.push_back(std::move(s));
  const auto picked = gather(all, selection.selected);
  write_sequences(args.out, reader.context_length(), picked, selection.meta);
  return {{"out", args.out},
          {"sequences", picked.size()},
          {"context_length", reader.context_length()},
          {"meta", meta_json(selection.meta)}};
}

struct TrainTargetArgs {
  std::string in, out;
};

Json run_train_target(const Common& common, const TrainTargetArgs& args) {
  const auto config = common.resolve();
  const auto selected = read_seqs(args.in);
  const auto model = train_target(selected, config.target_order, config.target_alpha);
  const auto meta = config.meta("train-target");
  save_model(model, args.out, meta);
  return {{"out", args.out},
          {"order", model.order()},
          {"sequences", selected.size()},
          {"trained_tokens", model.trained_tokens()},
          {"meta", meta_json(meta)}};
}

struct EvalArgs {
  std::string model, selection, seqs, eval_down, eval_train, scores, out;
  bool no_curve = false;
};

Json run_eval(const Common& common, const EvalArgs& args) {
  const auto config = common.resolve();
  const auto selection = load_selection(args.selection);
  ExperimentData data;
  data.train = read_seqs(args.seqs);
  data.eval_down = read_seqs(args.eval_down);
  data.eval_train = read_seqs(args.eval_train);
  data.target_label = config.target_label;

  std::vector<ScoreRecord> pool;
  if (!args.scores.empty()) {
    const auto records = read_scores(args.scores);
    const bool pooled = selects_from_scores(selection.method) && selection.method != Method::kRandom;
    pool = pooled ? sampled_pool(records, selection.tau * selection.n, selection.seed) : records;
  }
  EvalSettings settings;
  settings.target_order = config.target_order;
  settings.target_alpha = config.target_alpha;
  settings.shuffle_curves = config.shuffle_curves;
  settings.curves = !args.no_curve;

  std::optional<NGramModel> target;
  if (!args.model.empty()) target = load_ngram(args.model);
  auto report = evaluate_selection(data, selection, pool, settings, target ? &*target : nullptr);
  report.meta = config.meta("eval");
  std::ofstream out(args.out, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", args.out));
  out << report.to_json().dump(2) << '\n';
  return {{"out", args.out},
          {"method", report.method},
          {"tau", report.tau},
          {"ce_down", report.ce_down},
          {"ce_train", report.ce_train},
          {"precision", report.precision},
          {"meta", meta_json(report.meta)}};
}

struct CostArgs {
  std::vector<std::string> methods;
  double m = 3.1, n = 0.0, tau = 1.0, L = 5.5;
  double flops_per_forward = kDefaultFlopsPerForward;
  bool raw_tokens = false;
  std::string format = "json";
};

Json run_cost(const Common&, const CostArgs& args) {
  // Sizes are in billions of tokens; --tokens takes raw counts.
  const double unit = 1e9;
  const double scale = args.raw_tokens ? 1.0 / unit : 1.0;
  std::vector<Method> methods;
  if (args.methods.empty()) {
    methods = {Method::kColorFilter, Method::kConditionalOnly, Method::kRhoDown,
               Method::kRhoDownPrior, Method::kRandom, Method::kOnlineColor};
  } else {
    for (const auto& m : args.methods) methods.push_back(parse_method(m));
  }
  Json rows = Json::array();
  for (Method method : methods) {
    const auto c = cost({.m = args.m * scale, .n = args.n * scale, .tau = args.tau, .L = args.L, .method = method});
    rows.push_back({{"method", method_name(method)},
                    {"prior_cost", c.prior_cost},
                    {"serial_cost", c.serial_cost},
                    {"parallel_cost", c.parallel_cost},
                    {"training_cost", c.training_cost},
                    {"total", c.total},
                    {"scoring_flops", flops(c.scoring_cost() * unit, args.flops_per_forward)},
                    {"training_flops", flops(c.training_cost * unit, args.flops_per_forward)},
                    {"total_flops", flops(c.total * unit, args.flops_per_forward)}});
  }
  return {{"units", "forwards per billion tokens"},
          {"m", args.m * scale},
          {"n", args.n * scale},
          {"tau", args.tau},
          {"L", args.L},
          {"rows", rows}};
}

void print_cost_tsv(const Json& summary) {
  std::cout << "method\tprior_cost\tserial_cost\tparallel_cost\ttraining_cost\ttotal\tscoring_flops\t"
               "training_flops\ttotal_flops\n";
  for (const auto& r : summary["rows"]) {
    std::cout << fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{:.6g}\t{:.6g}\t{:.6g}\n",
                             r["method"].get<std::string>(), r["prior_cost"].get<double>(),
                             r["serial_cost"].get<double>(), r["parallel_cost"].get<double>(),
                             r["training_cost"].get<double>(), r["total"].get<double>(),
                             r["scoring_flops"].get<double>(), r["training_flops"].get<double>(),
                             r["total_flops"].get<double>());
  }
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

Json run_report(const Common&, const ReportArgs& args) {
  std::vector<EvalReport> reports;
  for (const auto& path : args.inputs) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot open '{}'", path));
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(fmt::format("'{}': {}", path, e.what()));
    }
    if (j.is_array()) {
      for (const auto& item : j) reports.push_back(EvalReport::from_json(item));
    } else {
      reports.push_back(EvalReport::from_json(j));
    }
  }
  write_report(args.out, reports);
  return {{"out", args.out}, {"runs", reports.size()}, {"config_hash", reports.front().meta.config_hash}};
}

struct PipelineArgs {
  std::string run_dir;
};

Json run_pipeline_cmd(const Common& common, const PipelineArgs& args) {
  return run_pipeline(common.resolve(), args.run_dir).to_json();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Targeted pre-training data selection by conditional loss reduction"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Common common;
  std::function<Json()> action;
  std::string command;
  bool cost_tsv = false;

  auto sub = [&](const char* name, const char* help) {
    auto* s = app.add_subcommand(name, help);
    add_common(s, common);
    return s;
  };

  GenSynthArgs gen;
  {
    auto* s = sub("gen-synth", "Generate the two-domain synthetic corpora as JSONL");
    s->add_option("--out-dir", gen.out_dir, "Output directory")->required();
    mapped(s, common, "--seed", "run.seed", "Root seed");
    mapped(s, common, "--train-docs", "synth.train_docs", "Candidate documents");
    mapped(s, common, "--prior-docs", "synth.prior_docs", "Prior documents");
    mapped(s, common, "--down-docs", "synth.down_docs", "Downstream documents");
    mapped(s, common, "--target-fraction", "synth.target_fraction", "Target-domain share of mixed corpora");
    s->callback([&] { action = [&] { return run_gen_synth(common, gen); }; });
  }
  ChunkArgs chunk_args;
  {
    auto* s = sub("chunk", "Tokenize JSONL documents into fixed-length sequences");
    s->add_option("--in", chunk_args.in, "Input JSONL")->required()->check(CLI::ExistingFile);
    s->add_option("--out", chunk_args.out, "Output sequence file")->required();
    mapped(s, common, "--context-length", "data.context_length", "Tokens per sequence");
    s->callback([&] { action = [&] { return run_chunk(common, chunk_args); }; });
  }
  TrainLmArgs train_lm;
  {
    auto* s = sub("train-lm", "Train an n-gram model on a sequence file");
    s->add_option("--in", train_lm.in, "Sequence file")->required()->check(CLI::ExistingFile);
    s->add_option("--out", train_lm.out, "Model file")->required();
    mapped(s, common, "--order", "model.aux_order", "N-gram order");
    mapped(s, common, "--alpha", "model.alpha", "Add-alpha smoothing");
    s->callback([&] { action = [&] { return run_train_lm(common, train_lm); }; });
  }
  FinetuneArgs finetune;
  {
    auto* s = sub("finetune-lm", "Build the conditional model from a prior and downstream data");
    s->add_option("--prior", finetune.prior, "Prior model file")->required()->check(CLI::ExistingFile);
    s->add_option("--down", finetune.down, "Downstream sequence file")->required()->check(CLI::ExistingFile);
    s->add_option("--out", finetune.out, "Model file")->required();
    mapped(s, common, "--mode", "model.conditional", "interpolate or count_add");
    mapped(s, common, "--lambda", "model.lambda", "Downstream interpolation weight");
    mapped(s, common, "--weight", "model.count_add_weight", "Downstream count multiplier");
    s->callback([&] { action = [&] { return run_finetune(common, finetune); }; });
  }
  ScoreArgs score;
  {
    auto* s = sub("score", "Score sequences by conditional loss reduction");
    s->add_option("--cond", score.cond, "Conditional model")->required()->check(CLI::ExistingFile);
    s->add_option("--marg", score.marg, "Marginal model, or 'uniform'")->required();
    s->add_option("--in", score.in, "Sequence file")->required()->check(CLI::ExistingFile);
    s->add_option("--out", score.out, "Score TSV")->required();
    s->add_option("--block-size", score.block_size, "Sequences held in memory at once")
        ->check(CLI::PositiveNumber);
    s->callback([&] { action = [&] { return run_score(common, score); }; });
  }
  SelectArgs select;
  {
    auto* s = sub("select", "Select a subset of sequences");
    mapped(s, common, "--method", "select.method", "Selection method");
    mapped(s, common, "--n", "select.n", "Budget in sequences");
    mapped(s, common, "--tau", "select.tau", "Subset size multiplier");
    mapped(s, common, "--b", "select.batch_size", "Batch size for batched methods");
    mapped(s, common, "--lambda", "model.lambda", "Downstream weight (online_color)");
    mapped(s, common, "--dsir-buckets", "select.dsir_buckets", "Hashed feature buckets (dsir)");
    s->add_option("--seed", select.seed, "Selection seed (default: derived from run.seed)");
    s->add_option("--scores", select.scores, "Score TSV (score-based methods)")->check(CLI::ExistingFile);
    s->add_option("--seqs", select.seqs, "Candidate sequences (model-based methods)")->check(CLI::ExistingFile);
    s->add_option("--cond", select.cond, "Conditional model (rho_down, rho_down_prior)")->check(CLI::ExistingFile);
    s->add_option("--prior", select.prior, "Prior model (online_color)")->check(CLI::ExistingFile);
    s->add_option("--down", select.down, "Downstream sequences (online_color, dsir)")->check(CLI::ExistingFile);
    s->add_option("--out", select.out, "Selection JSON")->required();
    s->callback([&] { action = [&] { return run_select(common, select); }; });
  }
  MaterializeArgs materialize;
  {
    auto* s = sub("materialize", "Write the selected sequences, in selection order");
    s->add_option("--selection", materialize.selection, "Selection JSON")->required()->check(CLI::ExistingFile);
    s->add_option("--seqs", materialize.seqs, "Candidate sequences")->required()->check(CLI::ExistingFile);
    s->add_option("--out", materialize.out, "Output sequence file")->required();
    s->callback([&] { action = [&] { return run_materialize(common, materialize); }; });
  }
  TrainTargetArgs train_target_args;
  {
    auto* s = sub("train-target", "Train the target model on selected sequences");
    s->add_option("--in", train_target_args.in, "Selected sequence file")->required()->check(CLI::ExistingFile);
    s->add_option("--out", train_target_args.out, "Model file")->required();
    mapped(s, common, "--order", "eval.target_order", "Target n-gram order");
    mapped(s, common, "--alpha", "eval.target_alpha", "Target smoothing");
    s->callback([&] { action = [&] { return run_train_target(common, train_target_args); }; });
  }
  EvalArgs eval;
  {
    auto* s = sub("eval", "Evaluate a selection on held-out data");
    s->add_option("--selection", eval.selection, "Selection JSON")->required()->check(CLI::ExistingFile);
    s->add_option("--seqs", eval.seqs, "Candidate sequences (labels)")->required()->check(CLI::ExistingFile);
    s->add_option("--eval-down", eval.eval_down, "Held-out target-domain sequences")->required()->check(CLI::ExistingFile);
    s->add_option("--eval-train", eval.eval_train, "Held-out candidate-distribution sequences")
        ->required()
        ->check(CLI::ExistingFile);
    s->add_option("--model", eval.model, "Trained target model (default: train on the selection)")
        ->check(CLI::ExistingFile);
    s->add_option("--scores", eval.scores, "Score TSV for the distribution summary")->check(CLI::ExistingFile);
    s->add_option("--out", eval.out, "Eval JSON")->required();
    s->add_flag("--no-curve", eval.no_curve, "Skip the learning curve");
    mapped(s, common, "--target-label", "data.target_label", "Target domain label");
    mapped(s, common, "--order", "eval.target_order", "Target n-gram order");
    mapped(s, common, "--alpha", "eval.target_alpha", "Target smoothing");
    mapped(s, common, "--shuffle", "eval.shuffle_curves", "Learning curve in shuffled order (true/false)");
    s->callback([&] { action = [&] { return run_eval(common, eval); }; });
  }
  CostArgs cost_args;
  {
    auto* s = sub("cost", "Compute cost in model forwards and FLOPs");
    s->add_option("--method", cost_args.methods, "Method(s); default all with a cost row");
    s->add_option("--m", cost_args.m, "Prior data size")->check(CLI::NonNegativeNumber);
    s->add_option("--n", cost_args.n, "Selected data size")->required()->check(CLI::NonNegativeNumber);
    s->add_option("--tau", cost_args.tau, "Subset size multiplier")->check(CLI::Range(1.0, 1e12));
    s->add_option("--L", cost_args.L, "Target/auxiliary forward cost ratio")->check(CLI::NonNegativeNumber);
    s->add_option("--flops-per-forward", cost_args.flops_per_forward, "FLOPs per token forward");
    s->add_flag("--tokens", cost_args.raw_tokens, "--m and --n are raw token counts");
    s->add_option("--format", cost_args.format, "Output format")->check(CLI::IsMember({"json", "tsv"}));
    s->callback([&] {
      cost_tsv = cost_args.format == "tsv";
      action = [&] { return run_cost(common, cost_args); };
    });
  }
  ReportArgs report;
  {
    auto* s = sub("report", "Collect eval results into report tables");
    s->add_option("--inputs", report.inputs, "Eval JSON files")->required()->check(CLI::ExistingFile);
    s->add_option("--out", report.out, "Report directory")->required();
    s->callback([&] { action = [&] { return run_report(common, report); }; });
  }
  PipelineArgs pipeline;
  {
    auto* s = sub("pipeline", "Run every stage end to end, skipping stages that are up to date");
    s->add_option("--run-dir", pipeline.run_dir, "Run directory")->required();
    s->callback([&] { action = [&] { return run_pipeline_cmd(common, pipeline); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  command = app.get_subcommands().front()->get_name();

  try {
    auto summary = action();
    if (cost_tsv) {
      print_cost_tsv(summary);
      return 0;
    }
    Json out{{"command", command}, {"ok", true}};
    for (auto& [k, v] : summary.items()) out[k] = v;
    std::cout << out.dump(2) << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "color-sieve " << command << ": " << e.what() << '\n';
    std::cout << Json{{"command", command}, {"ok", false}, {"error", e.what()}}.dump(2) << '\n';
    return 1;
  }
}
