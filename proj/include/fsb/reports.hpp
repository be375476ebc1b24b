#pragma once

#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "fsb/config.hpp"
#include "fsb/distillation.hpp"
#include "fsb/evaluation.hpp"

namespace fsb {

inline std::string hex_checksum(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Wall-clock fields live under "timing" so the rest of the document is
/// byte-stable across reruns.
inline json to_json(const TrainReport& r) {
  return {{"epoch_losses", r.epoch_losses},
          {"final_train_accuracy", r.final_train_accuracy},
          {"timing", {{"wall_seconds", r.wall_seconds}}}};
}

inline json to_json(const EvalReport& r) {
  json runs = json::array();
  for (const auto& s : r.runs) runs.push_back({{"mean", s.mean}, {"ci95", s.ci95}, {"n", s.n}});
  return {{"per_run", runs},
          {"reported_accuracy", r.reported_accuracy},
          {"reported_run", r.reported_run},
          {"episode_accuracies", r.episode_accuracies}};
}

/// Full evaluation report document.
inline json eval_report_document(const RunConfig& config, const EvalReport& r, std::uint64_t model_checksum,
                                 const std::string& source) {
  json doc = {{"config", to_json(config)}};
  const json body = to_json(r);
  for (const auto& [k, v] : body.items()) doc[k] = v;
  doc["model_checksum"] = hex_checksum(model_checksum);
  doc["feature_source"] = source;
  doc["seed"] = config.seed;
  doc["eval_seed"] = config.eval_config().seed;
  return doc;
}

struct ManifestEntry {
  std::string checkpoint;
  std::uint64_t checksum = 0;
  double val_accuracy = 0.0;
};

inline json chain_manifest(const RunConfig& config, const std::vector<ManifestEntry>& entries, std::size_t selected) {
  json gens = json::array();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    gens.push_back({{"generation", i},
                    {"checkpoint", entries[i].checkpoint},
                    {"checksum", hex_checksum(entries[i].checksum)},
                    {"val_accuracy", entries[i].val_accuracy}});
  }
  json dc = to_json(config.distill);
  dc["train"] = to_json(config.train);
  return {{"config", to_json(config)},
          {"distill_config", dc},
          {"generations", gens},
          {"selected_index", selected}};
}

inline json to_json(const AblationTable& t) {
  json cells = json::array();
  for (const auto& c : t.cells) {
    json cell = {{"setting", c.setting}, {"n_way", c.episode.n_way}, {"k_shot", c.episode.k_shot}};
    if (c.report) {
      cell["status"] = "ok";
      cell["reported_accuracy"] = c.report->reported_accuracy;
      cell["ci95"] = c.report->runs[c.report->reported_run].ci95;
      cell["report"] = to_json(*c.report);
    } else {
      cell["status"] = "error";
      cell["error"] = c.error;
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

/// setting,n_way,k_shot,status,accuracy,ci95
inline std::string ablation_csv(const AblationTable& t) {
  std::ostringstream out;
  out << "setting,n_way,k_shot,status,accuracy,ci95\n";
  out.precision(6);
  out << std::fixed;
  for (const auto& c : t.cells) {
    out << c.setting << ',' << c.episode.n_way << ',' << c.episode.k_shot << ',';
    if (c.report) {
      out << "ok," << c.report->reported_accuracy << ',' << c.report->runs[c.report->reported_run].ci95 << '\n';
    } else {
      out << "error,,\n";
    }
  }
  return out.str();
}

inline json to_json(const SweepTable& t) {
  json cells = json::array();
  for (const auto& c : t.cells) {
    cells.push_back({{"generation", c.generation},
                     {"kind", sweep_kind_name(c.kind)},
                     {"reported_accuracy", c.report.reported_accuracy},
                     {"ci95", c.report.runs[c.report.reported_run].ci95}});
  }
  return cells;
}

}  // namespace fsb
