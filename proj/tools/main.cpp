// geomem command-line tool: dataset generation, training, evaluation,
// ablation sweeps, gradient checking, and per-frame cost benchmarking.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <future>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geomem/episode_io.hpp"
#include "geomem/gradcheck.hpp"
#include "geomem/model.hpp"

namespace fs = std::filesystem;
using namespace geomem;

namespace {

constexpr const char* kToolVersion = "geomem 1.0";

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitCheckFailed = 5;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string dataset_path;
  std::int64_t seed_override = -1;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file (defaults apply if absent)");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--dataset", args.dataset_path, "dataset file path");
  cmd->add_option("--seed", args.seed_override, "seed override for both data and training");
  cmd->add_flag("--quiet", args.quiet, "suppress progress output");
}

ExperimentConfig load_config(const CommonArgs& args) {
  ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = ExperimentConfig::load(args.config_path);
  if (args.seed_override >= 0) {
    cfg.train.seed = static_cast<std::uint64_t>(args.seed_override);
    cfg.data.seed = static_cast<std::uint64_t>(args.seed_override);
  }
  cfg.validate();
  return cfg;
}

void say(const CommonArgs& args, const std::string& msg) {
  if (!args.quiet) std::printf("%s\n", msg.c_str());
}

std::uint64_t bytes_hash(const std::vector<std::uint8_t>& b) { return fnv1a(b.data(), b.size()); }

Manifest base_manifest(const std::string& command, const ExperimentConfig& cfg) {
  Manifest m;
  m.set("tool", kToolVersion);
  m.set("command", command);
  m.set("config_hash", hex64(cfg.hash()));
  m.set("data_seed", std::to_string(cfg.data.seed));
  m.set("train_seed", std::to_string(cfg.train.seed));
  return m;
}

template <class S>
DatasetT<S> build_dataset(const ExperimentConfig& cfg) {
  DatasetT<S> ds;
  ds.dims = cfg.dims;
  ds.config_hash = cfg.hash();
  for (int i = 0; i < cfg.data.episodes; ++i)
    ds.episodes.push_back(gen_episode<S>(cfg.dims, cfg.data, static_cast<std::uint64_t>(i)));
  return ds;
}

// ---- gen -------------------------------------------------------------------

template <class S>
int run_gen(const CommonArgs& args, const ExperimentConfig& cfg) {
  fs::create_directories(args.out_dir);
  auto ds = build_dataset<S>(cfg);
  const auto bytes = serialize_dataset(ds);
  const std::string path =
      args.dataset_path.empty() ? args.out_dir + "/dataset.bin" : args.dataset_path;
  write_file(path, bytes);
  Manifest m = base_manifest("gen", cfg);
  m.set("dataset", path);
  m.set("dataset_hash", hex64(bytes_hash(bytes)));
  m.set("episodes", std::to_string(ds.episodes.size()));
  m.save(args.out_dir + "/gen_manifest.txt");
  say(args, "wrote " + path + " (" + std::to_string(ds.episodes.size()) + " episodes, hash " +
                hex64(bytes_hash(bytes)) + ")");
  return 0;
}

// ---- train -----------------------------------------------------------------

template <class S>
int run_train(const CommonArgs& args, const ExperimentConfig& cfg, const std::string& eval_path) {
  fs::create_directories(args.out_dir);
  const std::string ds_path =
      args.dataset_path.empty() ? args.out_dir + "/dataset.bin" : args.dataset_path;
  auto ds = load_dataset_file<S>(ds_path);
  DatasetT<S> eval_ds;
  const bool have_eval = !eval_path.empty();
  if (have_eval) eval_ds = load_dataset_file<S>(eval_path);

  Rng init_rng(cfg.train.seed);
  ModelParamsT<S> params(ds.dims, init_rng);
  ModelOptions opt = ModelOptions::from_config(cfg);
  MetricsWriter metrics;
  int logged_since_eval = 0;
  double loss_acc = 0;
  train(params, ds, opt, cfg.train, cfg.data.vocab_seed, [&](const TrainStepInfo& info) {
    loss_acc += info.loss;
    ++logged_since_eval;
    if ((info.step + 1) % cfg.train.eval_interval == 0 || info.step + 1 == cfg.train.steps) {
      metrics.row(info.step + 1, "all", "all", "train_loss", loss_acc / logged_since_eval,
                  cfg.train.seed);
      if (have_eval)
        metrics.eval_rows(info.step + 1, evaluate(params, eval_ds, opt, cfg.data.vocab_seed),
                          cfg.train.seed);
      loss_acc = 0;
      logged_since_eval = 0;
      say(args, "step " + std::to_string(info.step + 1) + "/" + std::to_string(cfg.train.steps));
    }
  });

  ParamList<S> ps;
  params.collect(ps);
  const auto ckpt = serialize_checkpoint(ps);
  const std::string ckpt_path = args.out_dir + "/checkpoint.bin";
  write_file(ckpt_path, ckpt);
  const std::string csv_path = args.out_dir + "/train_metrics.csv";
  metrics.save(csv_path);

  Manifest m = base_manifest("train", cfg);
  m.set("dataset", ds_path);
  if (have_eval) m.set("eval_dataset", eval_path);
  m.set("checkpoint", ckpt_path);
  m.set("checkpoint_hash", hex64(bytes_hash(ckpt)));
  m.set("metrics", csv_path);
  m.save(args.out_dir + "/train_manifest.txt");
  say(args, "wrote " + ckpt_path + " (hash " + hex64(bytes_hash(ckpt)) + ")");
  return 0;
}

// ---- eval ------------------------------------------------------------------

template <class S>
int run_eval(const CommonArgs& args, const ExperimentConfig& cfg, const std::string& ckpt_path) {
  fs::create_directories(args.out_dir);
  const std::string ds_path =
      args.dataset_path.empty() ? args.out_dir + "/dataset.bin" : args.dataset_path;
  auto ds = load_dataset_file<S>(ds_path);
  Rng init_rng(cfg.train.seed);
  ModelParamsT<S> params(ds.dims, init_rng);
  ParamList<S> ps;
  params.collect(ps);
  load_checkpoint(ckpt_path, ps);
  ModelOptions opt = ModelOptions::from_config(cfg);
  MetricsWriter metrics;
  metrics.eval_rows(0, evaluate(params, ds, opt, cfg.data.vocab_seed), cfg.train.seed);
  const std::string csv_path = args.out_dir + "/eval_metrics.csv";
  metrics.save(csv_path);
  Manifest m = base_manifest("eval", cfg);
  m.set("dataset", ds_path);
  m.set("checkpoint", ckpt_path);
  m.set("metrics", csv_path);
  m.save(args.out_dir + "/eval_manifest.txt");
  say(args, "wrote " + csv_path);
  return 0;
}

// ---- ablate ----------------------------------------------------------------

struct AblateCell {
  std::string grid;  // "component" or "capacity"
  std::string name;
  AblationConfig ablation;
  int l_w = 8;
  int l_e = 32;
};

std::vector<AblateCell> component_grid(const ExperimentConfig& cfg) {
  std::vector<AblateCell> cells;
  for (int rep = 0; rep < 2; ++rep)
    for (int wm = 0; wm < 2; ++wm)
      for (int em = 0; em < 2; ++em) {
        AblateCell c;
        c.grid = "component";
        c.ablation = cfg.ablation;
        c.ablation.rep3d = rep != 0;
        c.ablation.working_memory = wm != 0;
        c.ablation.episodic_memory = em != 0;
        c.l_w = cfg.memory.working_capacity;
        c.l_e = cfg.memory.episodic_capacity;
        c.name = std::string("rep3d_") + (rep ? "on" : "off") + "_work_" + (wm ? "on" : "off") +
                 "_epis_" + (em ? "on" : "off");
        cells.push_back(c);
      }
  return cells;
}

std::vector<AblateCell> capacity_grid(const ExperimentConfig& cfg) {
  std::vector<AblateCell> cells;
  for (int lw : {4, 8, 16})
    for (int le : {8, 16, 32}) {
      AblateCell c;
      c.grid = "capacity";
      c.ablation = cfg.ablation;
      c.l_w = lw;
      c.l_e = le;
      c.name = "lw" + std::to_string(lw) + "_le" + std::to_string(le);
      cells.push_back(c);
    }
  return cells;
}

template <class S>
EvalResult run_cell(const ExperimentConfig& cfg, const AblateCell& cell, std::uint64_t seed,
                    const DatasetT<S>& train_ds, const DatasetT<S>& eval_ds) {
  ExperimentConfig c = cfg;
  c.ablation = cell.ablation;
  c.memory.working_capacity = cell.l_w;
  c.memory.episodic_capacity = cell.l_e;
  c.train.seed = seed;
  Rng init_rng(seed);
  ModelParamsT<S> params(train_ds.dims, init_rng);
  ModelOptions opt = ModelOptions::from_config(c);
  train(params, train_ds, opt, c.train, c.data.vocab_seed, [](const TrainStepInfo&) {});
  return evaluate(params, eval_ds, opt, c.data.vocab_seed);
}

template <class S>
int run_ablate(const CommonArgs& args, const ExperimentConfig& cfg, int seeds, int jobs) {
  fs::create_directories(args.out_dir);
  auto train_ds = build_dataset<S>(cfg);
  ExperimentConfig eval_cfg = cfg;
  eval_cfg.data.seed = cfg.data.seed + 1000;
  eval_cfg.data.episodes = std::max(1, cfg.data.episodes / 4);
  auto eval_ds = build_dataset<S>(eval_cfg);

  std::vector<AblateCell> cells = component_grid(cfg);
  for (auto& c : capacity_grid(cfg)) cells.push_back(c);

  struct Job {
    size_t cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs_list;
  for (size_t i = 0; i < cells.size(); ++i)
    for (int s = 0; s < seeds; ++s)
      jobs_list.push_back({i, cfg.train.seed + static_cast<std::uint64_t>(s)});

  std::vector<EvalResult> results(jobs_list.size());
  std::vector<std::future<void>> futures;
  std::atomic<size_t> next{0};
  const int workers = std::max(1, jobs);
  for (int wkr = 0; wkr < workers; ++wkr)
    futures.push_back(std::async(std::launch::async, [&]() {
      for (;;) {
        const size_t j = next.fetch_add(1);
        if (j >= jobs_list.size()) return;
        results[j] =
            run_cell<S>(cfg, cells[jobs_list[j].cell], jobs_list[j].seed, train_ds, eval_ds);
      }
    }));
  for (auto& f : futures) f.get();

  std::string csv = "grid,cell,seed,task_kind,length_group,metric_name,value\n";
  auto emit = [&](const Job& job, const EvalResult& res) {
    const auto& cell = cells[job.cell];
    auto row = [&](const std::string& task, const std::string& group, const std::string& metric,
                   double value) {
      char num[64];
      std::snprintf(num, sizeof(num), "%.17g", value);
      csv += cell.grid + "," + cell.name + "," + std::to_string(job.seed) + "," + task + "," +
             group + "," + metric + "," + num + "\n";
    };
    static const char* groups[3] = {"short", "mid", "long"};
    for (int k = 0; k < 5; ++k) {
      const TaskKind kind = static_cast<TaskKind>(k);
      const char* metric = task_is_numeric(kind) ? "mra" : "accuracy";
      for (int g = 0; g < 3; ++g)
        if (res.cells[k][g].count > 0)
          row(task_kind_name(kind), groups[g], metric, res.cells[k][g].mean());
      if (res.task_total(kind).count > 0)
        row(task_kind_name(kind), "all", metric, res.task_total(kind).mean());
    }
    row("all", "all", "score", res.overall().mean());
  };
  for (size_t j = 0; j < jobs_list.size(); ++j) emit(jobs_list[j], results[j]);

  const std::string csv_path = args.out_dir + "/ablate.csv";
  write_text_file(csv_path, csv);
  Manifest m = base_manifest("ablate", cfg);
  m.set("cells", std::to_string(cells.size()));
  m.set("seeds", std::to_string(seeds));
  m.set("metrics", csv_path);
  m.save(args.out_dir + "/ablate_manifest.txt");
  say(args, "wrote " + csv_path + " (" + std::to_string(jobs_list.size()) + " runs)");
  return 0;
}

// ---- gradcheck -------------------------------------------------------------

ExperimentConfig gradcheck_defaults() {
  ExperimentConfig cfg;
  cfg.dims.h = cfg.dims.w = 2;
  cfg.dims.patch = 2;
  cfg.dims.c = 8;
  cfg.dims.c_g = 4;
  cfg.dims.c_v = 4;
  cfg.dims.frames = 3;
  cfg.dims.bands = 2;
  cfg.memory.working_capacity = 2;
  cfg.memory.episodic_capacity = 2;
  cfg.data.objects_min = 2;
  cfg.data.objects_max = 3;
  cfg.data.qa_per_episode = 3;
  return cfg;
}

int run_gradcheck(const CommonArgs& args, const ExperimentConfig& cfg, double tol) {
  fs::create_directories(args.out_dir);
  using S = double;  // gradient checking is a 64-bit contract
  EpisodeT<S> ep = gen_episode<S>(cfg.dims, cfg.data, 0);
  Rng init_rng(cfg.train.seed);
  ModelParamsT<S> params(cfg.dims, init_rng);
  ModelOptions opt = ModelOptions::from_config(cfg);
  ParamList<S> ps;
  params.collect(ps);
  for (auto* p : ps) p->reset_grad();

  MemoryTraceT<S> trace;
  {
    TapeT<S> tape;
    auto fwd = forward_episode(tape, ep, params, cfg.dims, opt, cfg.data.vocab_seed, &trace);
    tape.backward(fwd.loss);
  }
  trace.replay = true;
  auto fwd_fn = [&]() {
    TapeT<S> tape;
    return forward_episode(tape, ep, params, cfg.dims, opt, cfg.data.vocab_seed, &trace)
        .loss.val()[0];
  };
  auto rep = gradcheck_fd<S>(fwd_fn, ps);

  std::string csv = "parameter,worst_rel,worst_index,analytic,numeric\n";
  for (const auto& e : rep.entries) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%.17g,%lld,%.17g,%.17g\n", e.name.c_str(), e.worst_rel,
                  static_cast<long long>(e.worst_index), e.analytic, e.numeric);
    csv += line;
  }
  const std::string csv_path = args.out_dir + "/gradcheck.csv";
  write_text_file(csv_path, csv);
  Manifest m = base_manifest("gradcheck", cfg);
  m.set("report", csv_path);
  m.set("worst_parameter", rep.worst_name);
  m.set("worst_rel", format_double(rep.worst_rel));
  m.set("tolerance", format_double(tol));
  m.set("result", rep.pass(tol) ? "pass" : "fail");
  m.save(args.out_dir + "/gradcheck_manifest.txt");
  std::printf("gradcheck: %zu parameters, worst %s rel %.3g -> %s\n", rep.entries.size(),
              rep.worst_name.c_str(), rep.worst_rel, rep.pass(tol) ? "PASS" : "FAIL");
  return rep.pass(tol) ? 0 : kExitCheckFailed;
}

// ---- bench -----------------------------------------------------------------

template <class S>
int run_bench(const CommonArgs& args, const ExperimentConfig& cfg, std::vector<int> lengths,
              bool unbounded, bool svg) {
  fs::create_directories(args.out_dir);
  if (lengths.empty()) lengths = {64, 256};
  const int cap = std::max(cfg.memory.working_capacity, cfg.memory.episodic_capacity);
  for (int n : lengths)
    if (n < cap + 8)
      throw ConfigError("bench length " + std::to_string(n) + " must be >= max(L_w,L_e)+8 = " +
                        std::to_string(cap + 8));

  std::string csv = "variant,length,frame,wall_ns,state_bytes\n";
  std::string plot_points;
  for (int n : lengths) {
    ExperimentConfig c = cfg;
    c.dims.frames = n;
    if (unbounded) c.memory.episodic_capacity = n;
    EpisodeT<S> ep = gen_episode<S>(c.dims, c.data, 0);
    Rng init_rng(c.train.seed);
    ModelParamsT<S> params(c.dims, init_rng);
    ModelOptions opt = ModelOptions::from_config(c);
    DualMemoryStateT<S> st;
    st.l_w = opt.working_capacity;
    st.l_e = opt.episodic_capacity;
    const char* variant = unbounded ? "unbounded" : "bounded";
    for (int t = 0; t < n; ++t) {
      const auto t0 = std::chrono::steady_clock::now();
      TapeT<S> tape;
      VarT<S> H = rep3d_forward(tape, ep.frames[static_cast<size_t>(t)], params.rep3d, c.dims,
                                opt.rep3d);
      auto step = dualmem_step(tape, H, st, params.dualmem, opt.dualmem);
      (void)step;
      const auto t1 = std::chrono::steady_clock::now();
      const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
      csv += std::string(variant) + "," + std::to_string(n) + "," + std::to_string(t) + "," +
             std::to_string(ns) + "," + std::to_string(st.state_bytes()) + "\n";
    }
  }
  const std::string csv_path = args.out_dir + "/bench.csv";
  write_text_file(csv_path, csv);
  if (svg) {
    // minimal cost-vs-frame scatter, one polyline per length
    std::string body;
    size_t pos = csv.find('\n') + 1;
    double max_ns = 1;
    std::vector<std::tuple<int, int, long long>> pts;
    while (pos < csv.size()) {
      size_t end = csv.find('\n', pos);
      if (end == std::string::npos) break;
      const std::string line = csv.substr(pos, end - pos);
      pos = end + 1;
      int n = 0, t = 0;
      long long ns = 0;
      char var[32];
      if (std::sscanf(line.c_str(), "%31[^,],%d,%d,%lld", var, &n, &t, &ns) == 4) {
        pts.emplace_back(n, t, ns);
        max_ns = std::max(max_ns, static_cast<double>(ns));
      }
    }
    body += "<svg xmlns='http://www.w3.org/2000/svg' width='640' height='400'>";
    body += "<rect width='640' height='400' fill='white'/>";
    int max_n = 1;
    for (auto& [n, t, ns] : pts) max_n = std::max(max_n, n);
    for (auto& [n, t, ns] : pts) {
      const double x = 40 + 560.0 * t / max_n;
      const double y = 380 - 360.0 * ns / max_ns;
      body += "<circle cx='" + std::to_string(x) + "' cy='" + std::to_string(y) +
              "' r='1.5' fill='" + (n == max_n ? "#d62728" : "#1f77b4") + "'/>";
    }
    body += "</svg>";
    write_text_file(args.out_dir + "/bench.svg", body);
  }
  Manifest m = base_manifest("bench", cfg);
  m.set("metrics", csv_path);
  m.set("variant", unbounded ? "unbounded" : "bounded");
  m.save(args.out_dir + "/bench_manifest.txt");
  say(args, "wrote " + csv_path);
  return 0;
}

template <class Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geometry-grounded memory toolkit"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, ablate_args, grad_args, bench_args;
  std::string eval_dataset, ckpt_path = "out/checkpoint.bin";
  int seeds = 3, jobs = 1;
  double grad_tol = 1e-4;
  std::string lengths_str = "64,256";
  bool unbounded = false, svg = false;
  std::string grad_config;

  add_common(app.add_subcommand("gen", "generate a synthetic dataset"), gen_args);
  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  add_common(train_cmd, train_args);
  train_cmd->add_option("--eval-dataset", eval_dataset, "held-out dataset for interval metrics");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path");
  auto* ablate_cmd = app.add_subcommand("ablate", "run the component and capacity ablation grids");
  add_common(ablate_cmd, ablate_args);
  ablate_cmd->add_option("--seeds", seeds, "seeds per cell");
  ablate_cmd->add_option("--jobs", jobs, "parallel worker threads");
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(grad_cmd, grad_args);
  grad_cmd->add_option("--tolerance", grad_tol, "worst relative error tolerance");
  auto* bench_cmd = app.add_subcommand("bench", "per-frame cost benchmark");
  add_common(bench_cmd, bench_args);
  bench_cmd->add_option("--lengths", lengths_str, "comma-separated episode lengths");
  bench_cmd->add_flag("--unbounded", unbounded, "episodic capacity = episode length (no eviction)");
  bench_cmd->add_flag("--svg", svg, "emit an SVG cost-vs-frame plot");

  CLI11_PARSE(app, argc, argv);

  return guarded([&]() -> int {
    if (app.got_subcommand("gen")) {
      auto cfg = load_config(gen_args);
      return cfg.train.precision == 32 ? run_gen<float>(gen_args, cfg) : run_gen<double>(gen_args, cfg);
    }
    if (app.got_subcommand("train")) {
      auto cfg = load_config(train_args);
      return cfg.train.precision == 32 ? run_train<float>(train_args, cfg, eval_dataset)
                                       : run_train<double>(train_args, cfg, eval_dataset);
    }
    if (app.got_subcommand("eval")) {
      auto cfg = load_config(eval_args);
      return cfg.train.precision == 32 ? run_eval<float>(eval_args, cfg, ckpt_path)
                                       : run_eval<double>(eval_args, cfg, ckpt_path);
    }
    if (app.got_subcommand("ablate")) {
      auto cfg = load_config(ablate_args);
      return cfg.train.precision == 32 ? run_ablate<float>(ablate_args, cfg, seeds, jobs)
                                       : run_ablate<double>(ablate_args, cfg, seeds, jobs);
    }
    if (app.got_subcommand("gradcheck")) {
      ExperimentConfig cfg = gradcheck_defaults();
      if (!grad_args.config_path.empty()) cfg = ExperimentConfig::load(grad_args.config_path);
      if (grad_args.seed_override >= 0) {
        cfg.train.seed = static_cast<std::uint64_t>(grad_args.seed_override);
        cfg.data.seed = static_cast<std::uint64_t>(grad_args.seed_override);
      }
      cfg.validate();
      return run_gradcheck(grad_args, cfg, grad_tol);
    }
    if (app.got_subcommand("bench")) {
      auto cfg = load_config(bench_args);
      std::vector<int> lengths;
      std::string cur;
      for (char ch : lengths_str + ",") {
        if (ch == ',') {
          if (!cur.empty()) lengths.push_back(std::stoi(cur));
          cur.clear();
        } else {
          cur += ch;
        }
      }
      return cfg.train.precision == 32
                 ? run_bench<float>(bench_args, cfg, lengths, unbounded, svg)
                 : run_bench<double>(bench_args, cfg, lengths, unbounded, svg);
    }
    return kExitConfig;
  });
}
