// Acceptance gate: prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fsb/cli.hpp"
#include "fsb/evaluation.hpp"
#include "oracles/convex_oracles.hpp"
#include "oracles/gradient_checks.hpp"

using namespace fsb;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark shared by criteria 5 to 9
// ---------------------------------------------------------------------------

struct Benchmark {
  LabeledVectorDataset data;
  MetaSplit split;
  MergedTask task;
  MlpConfig mlp;
  TrainConfig train;
  EvalConfig eval;
  EmbeddingModel gen0;
  double build_seconds = 0.0;
};

constexpr std::uint64_t kBenchSeed = 11;

SyntheticSpec bench_spec() { return {100, 32, 60, 1.0, 1.3}; }

TrainConfig bench_train() {
  TrainConfig t;
  t.learning_rate = 0.01;
  t.epochs = 30;
  t.decay_epochs = {15, 22, 27};
  t.seed = derive_seed(kBenchSeed, 4);
  return t;
}

EvalConfig bench_eval(std::size_t k_shot, std::uint64_t stream) {
  EvalConfig e;
  e.episodes_per_run = 600;
  e.runs = 3;
  e.episode = {5, k_shot, 15};
  e.seed = derive_seed(kBenchSeed, stream);
  e.workers = 0;
  return e;
}

const Benchmark& benchmark() {
  static const Benchmark b = [] {
    const auto t0 = Clock::now();
    Benchmark out;
    out.data = generate_synthetic(bench_spec(), derive_seed(kBenchSeed, 1));
    out.split = make_meta_split(out.data, {}, derive_seed(kBenchSeed, 2));
    out.task = merge_meta_train(out.data, out.split);
    out.mlp = {32, {128, 64}, out.task.num_classes()};
    out.train = bench_train();
    out.eval = bench_eval(1, 6);
    out.gen0 = train_classifier(init_model(out.mlp, derive_seed(kBenchSeed, 3)), out.task, out.train).model;
    out.build_seconds = seconds_since(t0);
    return out;
  }();
  return b;
}

double accuracy(const EmbeddingModel& m, const Benchmark& b, SplitPart part, const EvalConfig& cfg) {
  return 100.0 * evaluate(m, b.data, b.split, part, cfg).reported_accuracy;
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  double worst_ce = 0.0, worst_bce = 0.0, worst_kd = 0.0;
  std::size_t max_params = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto ce = oracle::random_tiny_problem(1000 + s, HeadKind::multi_way);
    const auto bce = oracle::random_tiny_problem(2000 + s, HeadKind::one_vs_all);
    const auto kd = oracle::random_tiny_problem(3000 + s, HeadKind::multi_way);
    max_params = std::max({max_params, ce.model.parameter_count(), bce.model.parameter_count(),
                           kd.model.parameter_count()});
    DistillConfig cfg;
    cfg.temperature = 1.0 + 0.5 * static_cast<double>(s);
    cfg.direction = s % 2 == 0 ? KlDirection::teacher_student : KlDirection::student_teacher;
    worst_ce = std::max(worst_ce, oracle::head_loss_gradient_error(ce));
    worst_bce = std::max(worst_bce, oracle::head_loss_gradient_error(bce));
    worst_kd = std::max(worst_kd, oracle::kd_gradient_error(kd, cfg));
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_ce < 1e-4 && worst_bce < 1e-4 && worst_kd < 1e-4 && max_params <= 1000 && secs < 10.0;
  return {ok, fmt("max rel err CE %.2e, BCE %.2e, KD %.2e (< 1e-4); max params %zu (<= 1000); %.2fs (< 10s)", worst_ce,
                  worst_bce, worst_kd, max_params, secs)};
}

struct ConvexCase {
  oracle::Problem p;
  bool svm = false;
};

DenseMatrix matrix_of(const oracle::Problem& p) {
  DenseMatrix m(p.x.size(), p.x.front().size());
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    for (std::size_t j = 0; j < p.x[i].size(); ++j) m(i, j) = p.x[i][j];
  }
  return m;
}

oracle::Problem random_convex_problem(SeededRng& rng, int classes, int points, int dim) {
  oracle::Problem p;
  p.classes = classes;
  p.lambda = 0.05 + rng.uniform();
  p.regularize_bias = rng.uniform() < 0.5;
  for (int i = 0; i < points; ++i) {
    const int y = i < classes ? i : static_cast<int>(rng.uniform_index(classes));
    std::vector<double> x(dim);
    for (double& v : x) v = rng.normal(static_cast<double>(y) - 1.0, 1.0);
    p.x.push_back(std::move(x));
    p.y.push_back(y);
  }
  return p;
}

Outcome convex_oracle() {
  const auto t0 = Clock::now();
  SeededRng rng(2024);
  double worst = 0.0;
  std::size_t grid_cases = 0, descent_cases = 0;
  for (int t = 0; t < 25; ++t) {
    const bool two_param = t < 10;
    const bool svm = t % 2 == 1;
    const int classes = two_param ? 2 : 2 + static_cast<int>(rng.uniform_index(2));
    const int points = classes + 1 + static_cast<int>(rng.uniform_index(12 - classes));
    const int dim = two_param ? 1 : 1 + static_cast<int>(rng.uniform_index(2));
    const auto p = random_convex_problem(rng, classes, points, dim);

    BaseLearnerConfig cfg;
    cfg.kind = svm ? LearnerKind::linear_svm : LearnerKind::logistic_regression;
    cfg.lambda = p.lambda;
    cfg.regularize_bias = p.regularize_bias;
    cfg.solver_tol = 1e-9;
    cfg.solver_max_iters = 100000;
    const DenseMatrix x = matrix_of(p);
    const std::vector<std::size_t> y(p.y.begin(), p.y.end());
    const auto clf = svm ? fit_linear_svm(x, y, cfg) : fit_logistic_regression(x, y, cfg);
    const double got = svm ? svm_objective(clf, x, y, cfg) : logistic_objective(clf, x, y, cfg);

    double best = 0.0;
    if (two_param && svm) {
      // Each one-vs-rest problem has exactly two parameters (w, b).
      for (int c = 0; c < 2; ++c) {
        best += oracle::grid_minimum_2d([&](double w, double b) { return oracle::hinge_value(p, c, {w, b}); });
      }
      ++grid_cases;
    } else if (two_param) {
      // Two-class logistic regression reduces exactly to (w, b): W = (w, −w), and b = (b, 0) or (b, −b).
      best = oracle::grid_minimum_2d([&](double w, double b) {
        return oracle::logistic_value(p, {w, -w, b, p.regularize_bias ? -b : 0.0});
      });
      ++grid_cases;
    } else {
      const int n = p.classes * (p.dim() + 1);
      best = svm ? oracle::coordinate_descent_minimum([&](const auto& th) { return oracle::svm_value(p, th); }, n)
                 : oracle::coordinate_descent_minimum([&](const auto& th) { return oracle::logistic_value(p, th); }, n);
      ++descent_cases;
    }
    worst = std::max(worst, std::abs(got - best));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 30.0,
          fmt("25 problems (%zu grid, %zu coordinate descent); max |objective gap| %.2e (< 1e-3); %.2fs (< 30s)",
              grid_cases, descent_cases, worst, secs)};
}

Outcome distillation_reduction() {
  const auto t0 = Clock::now();
  const auto ds = generate_synthetic({12, 8, 30, 1.0, 1.0}, 5);
  const auto split = make_meta_split(ds, {}, 6);
  const auto task = merge_meta_train(ds, split);
  const MlpConfig mlp{8, {16, 8}, task.num_classes()};
  DistillConfig cfg;
  cfg.alpha = 1.0;
  cfg.beta = 0.0;
  cfg.train.epochs = 5;
  cfg.train.decay_epochs = {3};
  cfg.train.seed = 7;
  const auto teacher = train_classifier(init_model(mlp, 1), task, cfg.train).model;
  const auto student = distill_generation(teacher, task, mlp, cfg, 99);
  const auto plain = train_classifier(init_model(mlp, 99), task, cfg.train);
  const bool identical = student.model == plain.model && student.report.epoch_losses == plain.report.epoch_losses;
  const double secs = seconds_since(t0);
  return {identical && secs < 10.0,
          fmt("student %s plain training (checksums %016llx / %016llx); %.2fs (< 10s)",
              identical ? "bit-identical to" : "DIFFERS from", static_cast<unsigned long long>(student.model.checksum()),
              static_cast<unsigned long long>(plain.model.checksum()), secs)};
}

Outcome sampler_invariants() {
  const auto t0 = Clock::now();
  const auto ds = generate_synthetic({30, 4, 40, 1.0, 1.0}, 8);
  std::vector<std::size_t> classes(30);
  for (std::size_t c = 0; c < 30; ++c) classes[c] = c;
  std::size_t violations = 0, episodes = 0;
  for (std::size_t k = 1; k <= 5; ++k) {
    const EpisodeSpec spec{5, k, 15};
    const EpisodeStream stream(ds, classes, spec, 200, 40 + k);
    const EpisodeStream again(ds, classes, spec, 200, 40 + k);
    for (std::size_t i = 0; i < 200; ++i, ++episodes) {
      const Episode ep = stream.at(i);
      if (!(again.at(i) == ep) || !(stream.at(i) == ep)) ++violations;
      if (std::set<std::size_t>(ep.class_map.begin(), ep.class_map.end()).size() != spec.n_way) ++violations;
      std::set<std::size_t> rows(ep.support_rows.begin(), ep.support_rows.end());
      if (rows.size() != ep.support_rows.size()) ++violations;
      for (auto r : ep.query_rows) {
        if (!rows.insert(r).second) ++violations;
      }
      std::vector<std::size_t> s(spec.n_way, 0), q(spec.n_way, 0);
      for (std::size_t j = 0; j < ep.support_labels.size(); ++j) {
        ++s[ep.support_labels[j]];
        if (ds.labels()[ep.support_rows[j]] != ep.class_map[ep.support_labels[j]]) ++violations;
      }
      for (std::size_t j = 0; j < ep.query_labels.size(); ++j) {
        ++q[ep.query_labels[j]];
        if (ds.labels()[ep.query_rows[j]] != ep.class_map[ep.query_labels[j]]) ++violations;
      }
      for (std::size_t c = 0; c < spec.n_way; ++c) {
        if (s[c] != k || q[c] != 15) ++violations;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && episodes == 1000 && secs < 5.0,
          fmt("%zu episodes, %zu violations; %.2fs (< 5s)", episodes, violations, secs)};
}

Outcome frozen_embedding() {
  const auto& b = benchmark();
  const auto before = b.gen0.checksum();
  auto cfg = b.eval;
  cfg.runs = 1;
  cfg.learner.augment_copies = 5;
  cfg.learner.normalize = true;
  evaluate(b.gen0, b.data, b.split, SplitPart::test, cfg);
  const auto after = b.gen0.checksum();
  return {before == after, fmt("checksum %016llx before, %016llx after a 600-episode evaluation",
                               static_cast<unsigned long long>(before), static_cast<unsigned long long>(after))};
}

Outcome ablation_direction() {
  const auto t0 = Clock::now();
  const auto& b = benchmark();
  const auto rows = ablation_rows(b.gen0, nullptr, BaseLearnerConfig{});
  const std::vector<std::size_t> shots{1, 5};
  const auto table = ablation_grid(rows, shots, b.data, b.split, SplitPart::test, b.eval);
  auto acc = [&](const char* row, std::size_t k) { return 100.0 * table.find(row, k)->report->reported_accuracy; };
  const double lr1 = acc("LR", 1), nn5 = acc("NN", 5), lr5 = acc("LR", 5), l2_1 = acc("LR+L2", 1),
               aug1 = acc("LR+L2+Aug", 1);
  const double secs = seconds_since(t0) + b.build_seconds;
  const bool in_band = lr1 >= 55.0 && lr1 <= 80.0;
  const bool a = lr5 - nn5 >= 2.0, bb = l2_1 - lr1 >= 1.0, c = aug1 - l2_1 >= -0.5;
  return {in_band && a && bb && c && secs < 300.0,
          fmt("1-shot LR %.2f (55-80: %s); (a) 5-shot LR %.2f - NN %.2f = %+.2f (>= 2: %s); (b) 1-shot LR+L2 %.2f - LR "
              "= %+.2f (>= 1: %s); (c) 1-shot Aug %.2f - LR+L2 = %+.2f (>= -0.5: %s); %.0fs incl. training (< 300s)",
              lr1, in_band ? "ok" : "no", lr5, nn5, lr5 - nn5, a ? "ok" : "no", l2_1, l2_1 - lr1, bb ? "ok" : "no", aug1,
              aug1 - l2_1, c ? "ok" : "no", secs)};
}

/// Rise then saturate: generation 1 improves on generation 0, generation 2
/// gains no more than generation 1 did, and never falls back below generation 0.
bool rise_then_saturate(const std::vector<double>& curve) {
  if (curve.size() < 3) return false;
  const double first = curve[1] - curve[0], second = curve[2] - curve[1];
  return first > 0.0 && second <= first && curve[2] >= curve[0];
}

Outcome distillation_direction() {
  const auto t0 = Clock::now();
  const auto& b = benchmark();
  DistillConfig cfg;
  cfg.generations = 2;
  cfg.train = b.train;
  const EvalConfig val_cfg = bench_eval(1, 7);
  auto val = [&](const EmbeddingModel& m) { return accuracy(m, b, SplitPart::val, val_cfg); };
  const auto chain = sequential_distill(b.task, b.mlp, cfg, derive_seed(kBenchSeed, 5), val, b.gen0);
  const auto& v = chain.val_accuracy;
  const bool kept = std::max(v[1], v[2]) >= v[0] - 0.3;

  const auto sweep = generation_sweep(chain, b.data, b.split, SplitPart::test, b.eval, kAllSweepKinds);
  std::string curves;
  bool shape = false;
  for (SweepKind k : kAllSweepKinds) {
    auto c = sweep.curve(k);
    for (double& x : c) x *= 100.0;
    const bool s = rise_then_saturate(c);
    shape = shape || s;
    curves += fmt(" %s %.2f/%.2f/%.2f%s;", sweep_kind_name(k), c[0], c[1], c[2], s ? " (rise-saturate)" : "");
  }
  const double secs = seconds_since(t0);
  return {kept && shape && secs < 600.0,
          fmt("val gen0/1/2 %.2f/%.2f/%.2f, best distilled - gen0 = %+.2f (>= -0.3: %s); test sweep:%s shape %s; %.0fs "
              "(< 600s)",
              v[0], v[1], v[2], std::max(v[1], v[2]) - v[0], kept ? "ok" : "no", curves.c_str(),
              shape ? "ok" : "no", secs)};
}

Outcome multiway_vs_multitask() {
  const auto t0 = Clock::now();
  const auto& b = benchmark();
  const auto mt = train_multitask(b.mlp, derive_seed(kBenchSeed, 3), b.task, b.train).model;
  const double mw_acc = accuracy(b.gen0, b, SplitPart::test, b.eval);
  const double mt_acc = accuracy(mt, b, SplitPart::test, b.eval);
  const double secs = seconds_since(t0);
  return {mw_acc - mt_acc >= 1.0 && secs < 300.0,
          fmt("1-shot multi-way %.2f vs multitask %.2f = %+.2f (>= 1); %.0fs (< 300s)", mw_acc, mt_acc, mw_acc - mt_acc,
              secs)};
}

Outcome nn_cosine_equivalence() {
  const auto& b = benchmark();
  const ModelFeatures extractor{&b.gen0};
  BaseLearnerConfig cfg;
  cfg.normalize = true;
  const EpisodeStream stream(b.data, b.split.test_classes, {5, 1, 15}, 1000, derive_seed(kBenchSeed, 9));
  std::size_t mismatches = 0, queries = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const Episode ep = stream.at(i);
    SeededRng rng(derive_seed(stream.episode_seed(i), 1));
    const auto support = preprocess_support(ep, extractor, cfg, rng);
    const auto q = prepare_queries(ep, extractor, cfg);
    const auto l2 = predict(fit_nearest_centroid(support.features, support.labels, CentroidMetric::l2), q);
    const auto cos = predict(fit_nearest_centroid(support.features, support.labels, CentroidMetric::cosine), q);
    for (std::size_t j = 0; j < l2.size(); ++j) mismatches += l2[j] != cos[j] ? 1 : 0;
    queries += l2.size();
  }
  return {mismatches == 0, fmt("1000 episodes, %zu queries, %zu prediction mismatches", queries, mismatches)};
}

Outcome protocol_arithmetic() {
  struct Case {
    std::vector<double> v;
    double expected;
  };
  const std::vector<Case> ci_cases{
      {{0.0, 1.0}, 0.98},
      {{0.2, 0.4, 0.6}, 1.96 * 0.2 / std::sqrt(3.0)},
      {{0.5, 0.5, 0.5, 1.0}, 0.245},
      {{0.7, 0.7, 0.7}, 0.0},
      {{0.1, 0.3}, 1.96 * std::sqrt(0.02) / std::sqrt(2.0)},
  };
  double worst = 0.0;
  for (const auto& c : ci_cases) worst = std::max(worst, std::abs(confidence_interval(c.v) - c.expected));

  struct MedianCase {
    std::vector<double> means;
    std::size_t expected;
  };
  const std::vector<MedianCase> median_cases{
      {{0.60, 0.62, 0.61}, 2}, {{0.61, 0.60, 0.62}, 0}, {{0.70, 0.70, 0.69}, 0}, {{0.50, 0.50, 0.50}, 1}, {{0.9}, 0}};
  std::size_t wrong = 0;
  for (const auto& m : median_cases) wrong += median_index(m.means) != m.expected ? 1 : 0;
  return {worst < 1e-12 && wrong == 0,
          fmt("max CI error %.1e (< 1e-12) over %zu cases; median selection %zu/%zu correct", worst, ci_cases.size(),
              median_cases.size() - wrong, median_cases.size())};
}

Outcome format_round_trips() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fsb_acceptance_formats";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::string> problems;
  auto f32 = [](double v) { return static_cast<double>(static_cast<float>(v)); };

  const auto ds = generate_synthetic({9, 7, 11, 1.7, 0.9}, 3);
  save_dataset(ds, dir / "d.fsd");
  const auto ds_back = load_dataset(dir / "d.fsd");
  bool same = ds_back.labels() == ds.labels() && ds_back.num_classes() == ds.num_classes();
  for (std::size_t i = 0; same && i < ds.features().size(); ++i) {
    same = ds_back.features().data()[i] == f32(ds.features().data()[i]);
  }
  if (!same) problems.push_back("FSD1 round trip");

  const auto model = init_model({7, {10, 6}, 6}, 4, HeadKind::one_vs_all);
  save_model(model, dir / "m.fsm");
  if (!(load_model(dir / "m.fsm") == round_to_f32(model))) problems.push_back("FSM1 round trip");

  const auto cache = extract_cache(model, ds);
  save_cache(cache, dir / "c.fse");
  const auto cache_back = load_cache(dir / "c.fse");
  same = cache_back.labels() == cache.labels();
  for (std::size_t i = 0; same && i < cache.features().size(); ++i) {
    same = cache_back.features().data()[i] == f32(cache.features().data()[i]);
  }
  if (!same) problems.push_back("FSE1 round trip");

  auto corrupt = [&](const fs::path& src, const fs::path& dst, std::size_t at, std::uint8_t value) {
    auto bytes = io::read_file(src);
    bytes[at] = value;
    io::write_file(dst, bytes);
  };
  auto expect_format_error = [&](const std::string& what, const std::function<void()>& load, std::size_t offset) {
    try {
      load();
      problems.push_back(what + ": no error");
    } catch (const FormatError& e) {
      if (e.offset() != offset) problems.push_back(what + ": offset " + std::to_string(e.offset()));
    }
  };
  corrupt(dir / "d.fsd", dir / "bad.fsd", 0, 'X');
  corrupt(dir / "m.fsm", dir / "bad.fsm", 4, 9);
  corrupt(dir / "c.fse", dir / "bad.fse", 3, '2');
  expect_format_error("FSD1 magic", [&] { load_dataset(dir / "bad.fsd"); }, 0);
  expect_format_error("FSM1 version", [&] { load_model(dir / "bad.fsm"); }, 4);
  expect_format_error("FSE1 magic", [&] { load_cache(dir / "bad.fse"); }, 0);

  std::ostringstream sink;
  const cli::Streams quiet{sink, sink};
  auto code = [&](std::vector<std::string> args) { return cli::run(std::move(args), quiet); };
  const std::string tiny_cfg = (dir / "cfg.json").string();
  std::ofstream(tiny_cfg) << R"({"train": {"epochs": 1, "decay_epochs": []}, "eval": {"episodes_per_run": 2, "runs": 1}})";
  const std::vector<std::pair<std::string, int>> exits{
      {"train", code({"train", "--config", tiny_cfg, "--data", (dir / "bad.fsd").string(), "--out",
                      (dir / "o.fsm").string()})},
      {"extract", code({"extract", "--checkpoint", (dir / "bad.fsm").string(), "--data", (dir / "d.fsd").string(),
                        "--out", (dir / "o.fse").string()})},
      {"eval", code({"eval", "--config", tiny_cfg, "--cache", (dir / "bad.fse").string(), "--out",
                     (dir / "o.json").string()})},
  };
  for (const auto& [name, rc] : exits) {
    if (rc != 2) problems.push_back(name + " exit " + std::to_string(rc));
  }
  fs::remove_all(dir);

  std::string detail = "FSD1/FSM1/FSE1 lossless at f32; corrupt magic/version rejected with offsets; CLI exit 2 on "
                       "corrupt inputs";
  if (!problems.empty()) {
    detail = "problems:";
    for (const auto& p : problems) detail += " [" + p + "]";
  }
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"convex solver oracle", convex_oracle},
      {"distillation reduction", distillation_reduction},
      {"sampler invariants", sampler_invariants},
      {"frozen embedding", frozen_embedding},
      {"ablation direction", ablation_direction},
      {"self-distillation direction", distillation_direction},
      {"multi-way vs multitask", multiway_vs_multitask},
      {"NN / cosine equivalence", nn_cosine_equivalence},
      {"protocol arithmetic", protocol_arithmetic},
      {"format round trips", format_round_trips},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %zu (%s): %s  %s\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
