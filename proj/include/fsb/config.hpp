#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fsb/baselearners.hpp"
#include "fsb/datasets.hpp"
#include "fsb/distillation.hpp"
#include "fsb/embedder.hpp"
#include "fsb/episodes.hpp"
#include "fsb/errors.hpp"
#include "fsb/evaluation.hpp"

namespace fsb {

using json = nlohmann::ordered_json;

/// Every knob of a batch experiment. Stage seeds are derived from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  SyntheticSpec synth;
  SplitFractions split;
  std::vector<std::size_t> hidden_widths{128, 64};
  TrainConfig train;
  DistillConfig distill;
  EpisodeSpec episode;
  BaseLearnerConfig learner;
  std::size_t episodes_per_run = 1000;
  std::size_t runs = 3;
  std::size_t workers = 0;
  SplitPart eval_split = SplitPart::test;
  std::vector<std::size_t> ablate_shots{1, 5};
  std::size_t ablate_augment_copies = 5;

  enum class Stage : std::uint64_t { synth = 1, split = 2, init = 3, shuffle = 4, distill = 5, eval = 6, val = 7 };

  std::uint64_t seed_for(Stage s) const { return derive_seed(seed, static_cast<std::uint64_t>(s)); }

  MlpConfig mlp(std::size_t input_dim, std::size_t num_train_classes) const {
    return {input_dim, hidden_widths, num_train_classes};
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed_for(Stage::shuffle);
    return t;
  }

  DistillConfig distill_config() const {
    DistillConfig d = distill;
    d.train = train_config();
    return d;
  }

  EvalConfig eval_config(Stage stage = Stage::eval) const {
    EvalConfig e;
    e.episodes_per_run = episodes_per_run;
    e.runs = runs;
    e.episode = episode;
    e.learner = learner;
    e.seed = seed_for(stage);
    e.workers = workers;
    return e;
  }

  void validate() const {
    synth.validate();
    if (!(split.train > 0.0 && split.val > 0.0 && split.test > 0.0) ||
        std::abs(split.train + split.val + split.test - 1.0) > 1e-9) {
      throw InvalidInput("config: split fractions must be positive and sum to 1");
    }
    if (hidden_widths.empty()) throw InvalidInput("config: model.hidden_widths must be non-empty");
    for (auto w : hidden_widths) {
      if (w < 1) throw InvalidInput("config: model.hidden_widths entries must be >= 1");
    }
    train.validate();
    distill_config().validate();
    eval_config().validate();
    for (auto k : ablate_shots) {
      if (k < 1) throw InvalidInput("config: ablate.shots entries must be >= 1");
    }
  }
};

// ---------------------------------------------------------------------------
// Enum names
// ---------------------------------------------------------------------------

inline const char* to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::logistic_regression: return "logistic_regression";
    case LearnerKind::linear_svm: return "linear_svm";
    case LearnerKind::nearest_centroid_l2: return "nearest_centroid_l2";
    case LearnerKind::nearest_centroid_cosine: break;
  }
  return "nearest_centroid_cosine";
}

inline LearnerKind learner_kind_from(const std::string& s) {
  for (auto k : {LearnerKind::logistic_regression, LearnerKind::linear_svm, LearnerKind::nearest_centroid_l2,
                 LearnerKind::nearest_centroid_cosine}) {
    if (s == to_string(k)) return k;
  }
  throw InvalidInput("config: learner.kind '" + s + "' is not one of logistic_regression, linear_svm, "
                     "nearest_centroid_l2, nearest_centroid_cosine");
}

inline const char* to_string(KlDirection d) {
  return d == KlDirection::teacher_student ? "teacher_student" : "student_teacher";
}

inline KlDirection kl_direction_from(const std::string& s) {
  if (s == "teacher_student") return KlDirection::teacher_student;
  if (s == "student_teacher") return KlDirection::student_teacher;
  throw InvalidInput("config: distill.kl_direction '" + s + "' is not teacher_student or student_teacher");
}

inline const char* to_string(SplitPart p) {
  switch (p) {
    case SplitPart::train: return "train";
    case SplitPart::val: return "val";
    case SplitPart::test: break;
  }
  return "test";
}

inline SplitPart split_part_from(const std::string& s) {
  if (s == "train") return SplitPart::train;
  if (s == "val") return SplitPart::val;
  if (s == "test") return SplitPart::test;
  throw InvalidInput("config: split '" + s + "' is not train, val or test");
}

// ---------------------------------------------------------------------------
// JSON <-> RunConfig
// ---------------------------------------------------------------------------

inline json to_json(const TrainConfig& t) {
  return {{"lr", t.learning_rate},       {"momentum", t.momentum},         {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},  {"epochs", t.epochs},             {"decay_epochs", t.decay_epochs},
          {"decay_factor", t.decay_factor}};
}

inline json to_json(const BaseLearnerConfig& l) {
  return {{"kind", to_string(l.kind)},
          {"normalize", l.normalize},
          {"augment_copies", l.augment_copies},
          {"augment_sigma_scale", l.augment_sigma_scale},
          {"lambda", l.lambda},
          {"solver_tol", l.solver_tol},
          {"solver_max_iters", l.solver_max_iters},
          {"regularize_bias", l.regularize_bias}};
}

inline json to_json(const EpisodeSpec& e) {
  return {{"n_way", e.n_way}, {"k_shot", e.k_shot}, {"q_queries", e.q_queries}};
}

inline json to_json(const DistillConfig& d) {
  return {{"alpha", d.alpha},
          {"beta", d.beta},
          {"temperature", d.temperature},
          {"generations", d.generations},
          {"kl_direction", to_string(d.direction)}};
}

inline json to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"synth",
       {{"num_classes", c.synth.num_classes},
        {"dim", c.synth.dim},
        {"samples_per_class", c.synth.samples_per_class},
        {"between_class_sigma", c.synth.between_class_sigma},
        {"within_class_sigma", c.synth.within_class_sigma}}},
      {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
      {"model", {{"hidden_widths", c.hidden_widths}}},
      {"train", to_json(c.train)},
      {"distill", to_json(c.distill)},
      {"episode", to_json(c.episode)},
      {"learner", to_json(c.learner)},
      {"eval",
       {{"episodes_per_run", c.episodes_per_run},
        {"runs", c.runs},
        {"workers", c.workers},
        {"split", to_string(c.eval_split)}}},
      {"ablate", {{"shots", c.ablate_shots}, {"augment_copies", c.ablate_augment_copies}}},
  };
}

namespace detail {

template <typename T>
T get_as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidInput("config: key '" + path + "' has the wrong type");
  }
}

inline bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // Integer-valued fields reject fractional or negative overrides.
    if (a.is_number_unsigned() || a.is_number_integer()) return b.is_number_unsigned() || b.is_number_integer() ? b >= 0 : false;
    return true;
  }
  return a.type() == b.type();
}

/// Overlays `src` onto `dst`, rejecting keys that do not already exist in `dst`.
inline void overlay(json& dst, const json& src, const std::string& prefix) {
  if (!src.is_object()) throw InvalidInput("config: " + (prefix.empty() ? std::string("document") : "'" + prefix + "'") + " must be an object");
  for (const auto& [key, value] : src.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!dst.contains(key)) throw InvalidInput("config: unknown key '" + path + "'");
    json& slot = dst[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
    } else {
      if (!same_kind(slot, value)) throw InvalidInput("config: key '" + path + "' has the wrong type");
      slot = value;
    }
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  using detail::get_as;
  c.seed = get_as<std::uint64_t>(j.at("seed"), "seed");
  const auto& s = j.at("synth");
  c.synth.num_classes = get_as<std::size_t>(s.at("num_classes"), "synth.num_classes");
  c.synth.dim = get_as<std::size_t>(s.at("dim"), "synth.dim");
  c.synth.samples_per_class = get_as<std::size_t>(s.at("samples_per_class"), "synth.samples_per_class");
  c.synth.between_class_sigma = get_as<double>(s.at("between_class_sigma"), "synth.between_class_sigma");
  c.synth.within_class_sigma = get_as<double>(s.at("within_class_sigma"), "synth.within_class_sigma");
  const auto& sp = j.at("split");
  c.split = {get_as<double>(sp.at("train"), "split.train"), get_as<double>(sp.at("val"), "split.val"),
             get_as<double>(sp.at("test"), "split.test")};
  c.hidden_widths = get_as<std::vector<std::size_t>>(j.at("model").at("hidden_widths"), "model.hidden_widths");
  const auto& t = j.at("train");
  c.train.learning_rate = get_as<double>(t.at("lr"), "train.lr");
  c.train.momentum = get_as<double>(t.at("momentum"), "train.momentum");
  c.train.weight_decay = get_as<double>(t.at("weight_decay"), "train.weight_decay");
  c.train.batch_size = get_as<std::size_t>(t.at("batch_size"), "train.batch_size");
  c.train.epochs = get_as<std::size_t>(t.at("epochs"), "train.epochs");
  c.train.decay_epochs = get_as<std::vector<std::size_t>>(t.at("decay_epochs"), "train.decay_epochs");
  c.train.decay_factor = get_as<double>(t.at("decay_factor"), "train.decay_factor");
  const auto& d = j.at("distill");
  c.distill.alpha = get_as<double>(d.at("alpha"), "distill.alpha");
  c.distill.beta = get_as<double>(d.at("beta"), "distill.beta");
  c.distill.temperature = get_as<double>(d.at("temperature"), "distill.temperature");
  c.distill.generations = get_as<std::size_t>(d.at("generations"), "distill.generations");
  c.distill.direction = kl_direction_from(get_as<std::string>(d.at("kl_direction"), "distill.kl_direction"));
  const auto& e = j.at("episode");
  c.episode.n_way = get_as<std::size_t>(e.at("n_way"), "episode.n_way");
  c.episode.k_shot = get_as<std::size_t>(e.at("k_shot"), "episode.k_shot");
  c.episode.q_queries = get_as<std::size_t>(e.at("q_queries"), "episode.q_queries");
  const auto& l = j.at("learner");
  c.learner.kind = learner_kind_from(get_as<std::string>(l.at("kind"), "learner.kind"));
  c.learner.normalize = get_as<bool>(l.at("normalize"), "learner.normalize");
  c.learner.augment_copies = get_as<std::size_t>(l.at("augment_copies"), "learner.augment_copies");
  c.learner.augment_sigma_scale = get_as<double>(l.at("augment_sigma_scale"), "learner.augment_sigma_scale");
  c.learner.lambda = get_as<double>(l.at("lambda"), "learner.lambda");
  c.learner.solver_tol = get_as<double>(l.at("solver_tol"), "learner.solver_tol");
  c.learner.solver_max_iters = get_as<std::size_t>(l.at("solver_max_iters"), "learner.solver_max_iters");
  c.learner.regularize_bias = get_as<bool>(l.at("regularize_bias"), "learner.regularize_bias");
  const auto& ev = j.at("eval");
  c.episodes_per_run = get_as<std::size_t>(ev.at("episodes_per_run"), "eval.episodes_per_run");
  c.runs = get_as<std::size_t>(ev.at("runs"), "eval.runs");
  c.workers = get_as<std::size_t>(ev.at("workers"), "eval.workers");
  c.eval_split = split_part_from(get_as<std::string>(ev.at("split"), "eval.split"));
  const auto& ab = j.at("ablate");
  c.ablate_shots = get_as<std::vector<std::size_t>>(ab.at("shots"), "ablate.shots");
  c.ablate_augment_copies = get_as<std::size_t>(ab.at("augment_copies"), "ablate.augment_copies");
  c.validate();
  return c;
}

/// Parses an override value: JSON literal when it parses as one, else a string.
inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return json(text);
  }
}

/// Resolution order, lowest to highest precedence: built-in defaults, config
/// file, FSB_SEED environment value, dotted-path flag overrides.
inline RunConfig resolve_config(const std::optional<json>& file, const std::optional<std::string>& env_seed,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  json merged = to_json(RunConfig{});
  if (file) detail::overlay(merged, *file, "");
  if (env_seed) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(*env_seed, &used);
      if (used != env_seed->size()) throw std::invalid_argument("trailing");
      merged["seed"] = v;
    } catch (const std::exception&) {
      throw InvalidInput("FSB_SEED='" + *env_seed + "' is not an unsigned integer");
    }
  }
  for (const auto& [path, text] : overrides) {
    json patch = parse_override_value(text);
    // Build {"a": {"b": value}} from "a.b".
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t dot; (dot = path.find('.', start)) != std::string::npos; start = dot + 1) {
      parts.push_back(path.substr(start, dot - start));
    }
    parts.push_back(path.substr(start));
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    detail::overlay(merged, patch, "");
  }
  return run_config_from_json(merged);
}

inline RunConfig load_run_config(const std::string& text) { return resolve_config(json::parse(text), {}, {}); }

}  // namespace fsb
