#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "fsb/config.hpp"
#include "fsb/datasets.hpp"
#include "fsb/distillation.hpp"
#include "fsb/embedder.hpp"
#include "fsb/embedding_cache.hpp"
#include "fsb/errors.hpp"
#include "fsb/evaluation.hpp"
#include "fsb/reports.hpp"

namespace fsb::cli {

/// Process exit codes.
enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kNumerical = 3 };

struct Streams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

struct CommonOptions {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
};

/// Splits leftover arguments into dotted-path overrides: `--a.b value` or `--a.b=value`.
inline std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() <= 2) throw InvalidInput("unexpected argument '" + a + "'");
    std::string key = a.substr(2);
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(key.substr(0, eq), key.substr(eq + 1));
      continue;
    }
    if (i + 1 >= extras.size()) throw InvalidInput("override '" + a + "' needs a value");
    out.emplace_back(key, extras[++i]);
  }
  return out;
}

inline RunConfig load_config(const CommonOptions& opts) {
  std::optional<json> file;
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) throw IoError("cannot open config " + opts.config_path);
    try {
      file = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidInput("config " + opts.config_path + " is not valid JSON: " + e.what());
    }
  }
  std::optional<std::string> env_seed;
  if (const char* s = std::getenv("FSB_SEED")) env_seed = s;
  return resolve_config(file, env_seed, opts.overrides);
}

inline void write_json(const std::filesystem::path& path, const json& doc) { io::write_text(path, doc.dump(2) + "\n"); }

struct Context {
  LabeledVectorDataset dataset;
  MetaSplit split;
};

inline Context load_context(const RunConfig& config, const std::string& data_path) {
  Context c{load_dataset(data_path), {}};
  c.split = make_meta_split(c.dataset, config.split, config.seed_for(RunConfig::Stage::split));
  return c;
}

inline json split_json(const MetaSplit& s) {
  return {{"train_classes", s.train_classes}, {"val_classes", s.val_classes}, {"test_classes", s.test_classes}};
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_synth(const RunConfig& config, const std::string& out_path, Streams io) {
  const auto ds = generate_synthetic(config.synth, config.seed_for(RunConfig::Stage::synth));
  save_dataset(ds, out_path);
  io.out << "n=" << ds.size() << " d=" << ds.dim() << " num_classes=" << ds.num_classes() << "\n";
  return kOk;
}

inline int cmd_train(const RunConfig& config, const std::string& data_path, const std::string& out_path,
                     const std::string& report_path, bool multitask, Streams io) {
  const Context ctx = load_context(config, data_path);
  const MergedTask task = merge_meta_train(ctx.dataset, ctx.split);
  const MlpConfig mlp = config.mlp(ctx.dataset.dim(), task.num_classes());
  const auto init_seed = config.seed_for(RunConfig::Stage::init);
  TrainResult r = multitask ? train_multitask(mlp, init_seed, task, config.train_config())
                            : train_classifier(init_model(mlp, init_seed), task, config.train_config());
  save_model(r.model, out_path);
  const EmbeddingModel stored = round_to_f32(r.model);
  json doc = {{"config", to_json(config)},
              {"mode", multitask ? "multitask" : "multi_way"},
              {"split", split_json(ctx.split)},
              {"checkpoint", out_path},
              {"model_checksum", hex_checksum(stored.checksum())},
              {"train_report", to_json(r.report)}};
  write_json(report_path, doc);
  io.out << "trained " << (multitask ? "multitask" : "multi-way") << " model: " << config.train.epochs
         << " epochs, final loss "
         << (r.report.epoch_losses.empty() ? 0.0 : r.report.epoch_losses.back()) << ", train accuracy "
         << r.report.final_train_accuracy << "\n";
  return kOk;
}

inline std::string generation_file(std::size_t k) { return "gen" + std::to_string(k) + ".fsm"; }

inline int cmd_distill(const RunConfig& config, const std::string& data_path, const std::string& gen0_path,
                       const std::filesystem::path& out_dir, Streams io) {
  const Context ctx = load_context(config, data_path);
  const MergedTask task = merge_meta_train(ctx.dataset, ctx.split);
  EmbeddingModel gen0 = load_model(gen0_path);
  const MlpConfig mlp = config.mlp(ctx.dataset.dim(), task.num_classes());
  if (gen0.config() != mlp) throw InvalidInput("distill: checkpoint architecture does not match config");
  if (gen0.head != HeadKind::multi_way) throw InvalidInput("distill: generation 0 must have a multi-way head");

  const EvalConfig val_cfg = config.eval_config(RunConfig::Stage::val);
  auto val_accuracy = [&](const EmbeddingModel& m) {
    return evaluate(m, ctx.dataset, ctx.split, SplitPart::val, val_cfg).reported_accuracy;
  };
  std::filesystem::create_directories(out_dir);
  const GenerationChain chain = sequential_distill(task, mlp, config.distill_config(),
                                                   config.seed_for(RunConfig::Stage::distill), val_accuracy,
                                                   std::move(gen0));
  std::vector<ManifestEntry> entries;
  for (std::size_t k = 0; k < chain.models.size(); ++k) {
    const auto path = out_dir / generation_file(k);
    save_model(chain.models[k], path);
    entries.push_back({generation_file(k), round_to_f32(chain.models[k]).checksum(), chain.val_accuracy[k]});
    io.out << "generation " << k << ": val accuracy " << chain.val_accuracy[k] << "\n";
  }
  write_json(out_dir / "manifest.json", chain_manifest(config, entries, chain.selected_index));
  io.out << "selected generation " << chain.selected_index << "\n";
  return kOk;
}

inline int cmd_extract(const std::string& checkpoint, const std::string& data_path, const std::string& out_path,
                       Streams io) {
  const EmbeddingModel model = load_model(checkpoint);
  const LabeledVectorDataset ds = load_dataset(data_path);
  const EmbeddingCache cache = extract_cache(model, ds);
  save_cache(cache, out_path);
  io.out << "extracted " << cache.size() << " x " << cache.dim() << " features\n";
  return kOk;
}

inline int cmd_eval(RunConfig config, const std::string& data_path, const std::string& checkpoint,
                    const std::string& cache_path, const std::string& out_path, Streams io) {
  if (checkpoint.empty() == cache_path.empty()) throw InvalidInput("eval: give exactly one of --checkpoint or --cache");
  EvalReport report;
  std::uint64_t checksum = 0;
  std::string source;
  if (!cache_path.empty()) {
    if (config.learner.augment_copies > 0) {
      io.err << "warning: augmentation disabled when evaluating from an embedding cache (no inputs to perturb)\n";
      config.learner.augment_copies = 0;
    }
    const EmbeddingCache cache = load_cache(cache_path);
    const MetaSplit split = make_meta_split(cache, config.split, config.seed_for(RunConfig::Stage::split));
    Checksum h;
    h.add(cache.features().data());
    checksum = h.value();
    source = "cache";
    report = evaluate(IdentityFeatures{}, cache, split, config.eval_split, config.eval_config());
  } else {
    if (data_path.empty()) throw InvalidInput("eval: --data is required with --checkpoint");
    const Context ctx = load_context(config, data_path);
    const EmbeddingModel model = load_model(checkpoint);
    if (model.input_dim() != ctx.dataset.dim()) throw InvalidInput("eval: model input dimension does not match dataset");
    checksum = model.checksum();
    source = "checkpoint";
    report = evaluate(model, ctx.dataset, ctx.split, config.eval_split, config.eval_config());
  }
  write_json(out_path, eval_report_document(config, report, checksum, source));
  io.out << "accuracy " << report.reported_accuracy << " +- " << report.runs[report.reported_run].ci95 << " ("
         << config.runs << " runs x " << config.episodes_per_run << " episodes, " << config.episode.n_way << "-way "
         << config.episode.k_shot << "-shot)\n";
  return kOk;
}

inline int cmd_ablate(const RunConfig& config, const std::string& data_path, const std::string& checkpoint,
                      const std::string& distilled_path, const std::string& out_path, const std::string& csv_path,
                      Streams io) {
  const Context ctx = load_context(config, data_path);
  const EmbeddingModel vanilla = load_model(checkpoint);
  std::optional<EmbeddingModel> distilled;
  if (!distilled_path.empty()) {
    distilled = load_model(distilled_path);
  } else {
    io.err << "notice: no distilled checkpoint given; skipping the distill row\n";
  }
  const auto rows = ablation_rows(vanilla, distilled ? &*distilled : nullptr, config.learner,
                                  config.ablate_augment_copies);
  const AblationTable table =
      ablation_grid(rows, config.ablate_shots, ctx.dataset, ctx.split, config.eval_split, config.eval_config());
  json row_names = json::array();
  for (const auto& r : rows) row_names.push_back(r.name);
  json doc = {{"config", to_json(config)},
              {"rows", row_names},
              {"shots", config.ablate_shots},
              {"cells", to_json(table)},
              {"skipped", distilled ? json::array() : json::array({"LR+L2+Aug+Distill"})}};
  write_json(out_path, doc);
  if (!csv_path.empty()) io::write_text(csv_path, ablation_csv(table));
  for (const auto& c : table.cells) {
    io.out << c.setting << " " << c.episode.k_shot << "-shot: ";
    if (c.report) {
      io.out << c.report->reported_accuracy << "\n";
    } else {
      io.out << "error: " << c.error << "\n";
    }
  }
  return table.succeeded() > 0 ? kOk : kUsage;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Runs the command line. Never throws; returns the process exit code.
inline int run(std::vector<std::string> args, Streams io = {}) {
  CLI::App app{"Few-shot baseline laboratory: synthesize, train, distill, extract, evaluate, ablate"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  CommonOptions common;
  std::string data, out, report, gen0, out_dir, checkpoint, cache, distilled, csv;
  bool multitask = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file");
    sub->allow_extras();
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic FSD1 dataset");
  add_common(synth);
  synth->add_option("--out", out, "Output dataset path")->required();

  auto* train = app.add_subcommand("train", "Train the embedding model on the merged meta-training classes");
  add_common(train);
  train->add_option("--data", data, "FSD1 dataset")->required();
  train->add_option("--out", out, "Output FSM1 checkpoint")->required();
  train->add_option("--report", report, "Training report JSON (default: <out>.json)");
  train->add_flag("--multitask", multitask, "Train one-vs-all heads instead of a multi-way head");

  auto* distill = app.add_subcommand("distill", "Sequential self-distillation from a generation-0 checkpoint");
  add_common(distill);
  distill->add_option("--data", data, "FSD1 dataset")->required();
  distill->add_option("--gen0", gen0, "Generation-0 checkpoint")->required();
  distill->add_option("--out-dir", out_dir, "Directory for generation checkpoints and manifest.json")->required();

  auto* extract = app.add_subcommand("extract", "Write an FSE1 cache of penultimate features");
  extract->add_option("--checkpoint", checkpoint, "FSM1 checkpoint")->required();
  extract->add_option("--data", data, "FSD1 dataset")->required();
  extract->add_option("--out", out, "Output FSE1 cache")->required();

  auto* eval = app.add_subcommand("eval", "Episodic evaluation of a checkpoint or feature cache");
  add_common(eval);
  eval->add_option("--data", data, "FSD1 dataset (required with --checkpoint)");
  eval->add_option("--checkpoint", checkpoint, "FSM1 checkpoint");
  eval->add_option("--cache", cache, "FSE1 feature cache");
  eval->add_option("--out", out, "Report JSON")->required();

  auto* ablate = app.add_subcommand("ablate", "NN / LR / +L2 / +Aug / +Distill ablation table");
  add_common(ablate);
  ablate->add_option("--data", data, "FSD1 dataset")->required();
  ablate->add_option("--checkpoint", checkpoint, "Vanilla (generation-0) checkpoint")->required();
  ablate->add_option("--distilled", distilled, "Distilled checkpoint (optional)");
  ablate->add_option("--out", out, "Table JSON")->required();
  ablate->add_option("--csv", csv, "Also write the table as CSV");

  std::vector<std::string> argv = std::move(args);
  std::reverse(argv.begin(), argv.end());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    io.out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    common.overrides = parse_overrides(sub->remaining());
    if (sub == extract) return cmd_extract(checkpoint, data, out, io);
    const RunConfig config = load_config(common);
    if (sub == synth) return cmd_synth(config, out, io);
    if (sub == train) return cmd_train(config, data, out, report.empty() ? out + ".json" : report, multitask, io);
    if (sub == distill) return cmd_distill(config, data, gen0, out_dir, io);
    if (sub == eval) return cmd_eval(config, data, checkpoint, cache, out, io);
    return cmd_ablate(config, data, checkpoint, distilled, out, csv, io);
  } catch (const DivergedTraining& e) {
    io.err << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const FormatError& e) {
    io.err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const IoError& e) {
    io.err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    io.err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    io.err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace fsb::cli
