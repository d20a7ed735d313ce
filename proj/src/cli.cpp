#include "physattn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "physattn/dataset.hpp"
#include "physattn/error.hpp"
#include "physattn/metrics.hpp"
#include "physattn/ops.hpp"
#include "physattn/runtime.hpp"

namespace fs = std::filesystem;

namespace physattn {

namespace {

constexpr const char* kTrainFile = "train.pded";
constexpr const char* kTestFile = "test.pded";

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::stringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw ConfigError(what + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

// Run directories only grow: refuse a non-empty one unless forced.
void prepare_run_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw ConfigError("run directory " + dir.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

// Config file plus per-key command-line overrides.
struct ConfigOptions {
  std::string file;
  std::map<std::string, std::string> overrides;

  // `swept` names a key the command sets itself.
  void attach(CLI::App& app, const std::string& swept = {}) {
    app.add_option("--config", file, "key = value configuration file");
    for (const std::string& key : run_config_keys()) {
      if (key == swept) continue;
      app.add_option("--" + dashed(key), overrides[key], "override '" + key + "'");
    }
  }

  RunConfig resolve(const CLI::App& app) const {
    RunConfig config;
    if (!file.empty()) apply_config_file(config, file);
    for (const auto& [key, value] : overrides) {
      if (app.count("--" + dashed(key)) > 0) apply_setting(config, key, value);
    }
    config.model.validate();
    config.train.validate();
    return config;
  }
};

DatasetSplit load_split(const fs::path& dir, bool need_train) {
  DatasetSplit split;
  if (need_train) split.train = load_dataset(dir / kTrainFile);
  split.test = load_dataset(dir / kTestFile);
  return split;
}

void check_model_matches(const ModelConfig& model, const Dataset& data) {
  const MeshSample& s = data.samples.front();
  if (s.coords.cols() != model.geometry_dim || s.observed_dim() != model.observed_dim ||
      s.target.cols() != model.output_dim) {
    throw DataError("dataset channels (" + std::to_string(s.coords.cols()) + ", " + std::to_string(s.observed_dim()) +
                    ", " + std::to_string(s.target.cols()) + ") do not match the model configuration");
  }
}

// ---- gen-data

struct GenData {
  std::string task = "darcy";
  std::size_t resolution = 32, n_train = 400, n_test = 100;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;

  int run(std::ostream& os) const {
    const Task t = parse_task(task);
    prepare_run_dir(out, force);
    const auto start = std::chrono::steady_clock::now();
    const DatasetSplit split = build_dataset(t, n_train, n_test, resolution, seed);
    save_dataset(fs::path(out) / kTrainFile, split.train);
    save_dataset(fs::path(out) / kTestFile, split.test);
    std::ofstream manifest = open_out(fs::path(out) / "manifest.txt");
    manifest << "task = " << task << "\nresolution = " << resolution << "\nn_train = " << n_train
             << "\nn_test = " << n_test << "\nbase_seed = " << seed << "\ntrain_seeds = " << seed << ".."
             << seed + n_train - 1 << "\n";
    if (n_test > 0) manifest << "test_seeds = " << seed + n_train << ".." << seed + n_train + n_test - 1 << "\n";
    manifest << "format_version = " << kDatasetVersion << "\n";
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    os << "wrote " << n_train << " train / " << n_test << " test samples to " << out << " in " << secs << " s\n";
    return kExitOk;
  }
};

// ---- train

struct TrainCmd {
  ConfigOptions config;
  std::string data, out;
  bool force = false;

  int run(const CLI::App& app, std::ostream& os) const {
    const RunConfig rc = config.resolve(app);
    const DatasetSplit split = load_split(data, true);
    check_model_matches(rc.model, split.train);
    prepare_run_dir(out, force);
    const fs::path dir(out);
    {
      std::ofstream echo = open_out(dir / "config.txt");
      write_run_config(echo, rc);
    }
    TrainHooks hooks;
    hooks.checkpoint = dir / "checkpoint.tslv";
    hooks.on_epoch = [&os](const EpochRecord& r) {
      os << "epoch " << r.epoch << " train_loss " << num(r.train_loss);
      if (r.test_rel_l2) os << " test_rel_l2 " << num(*r.test_rel_l2);
      os << " lr " << num(r.lr) << " (" << r.seconds << " s)\n";
      os.flush();
    };
    const TrainResult result = train(rc.model, rc.train, split.train, &split.test, hooks);
    {
      std::ofstream history = open_out(dir / "history.csv");
      write_history_csv(history, result.history);
    }
    const double final_loss = result.history.epochs.back().train_loss;
    if (!std::isfinite(final_loss)) throw NumericError("final training loss is not finite");
    return kExitOk;
  }
};

// ---- eval

struct EvalCmd {
  std::string checkpoint, data, csv;
  bool kl = false;
  double resample = 1.0;
  std::uint64_t seed = 0;

  int run(const CLI::App& app, std::ostream& os) const {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    const DatasetSplit split = load_split(data, false);
    check_model_matches(ckpt.config, split.test);
    EvalOptions options;
    options.attention_kl = kl;
    if (app.count("--resample") > 0) {
      options.resample_fraction = resample;
      options.resample_seed = seed;
    }
    const EvalReport report = evaluate(ckpt.params, ckpt.config, split.test, options);
    write_report_text(os, report);
    const fs::path csv_path = csv.empty() ? fs::path(checkpoint).parent_path() / "eval.csv" : fs::path(csv);
    std::ofstream out = open_out(csv_path);
    write_report_csv(out, report);
    return kExitOk;
  }
};

// ---- ablate

struct AblateCmd {
  ConfigOptions config;
  std::string data, slices, seeds, out;
  bool regular_squares = false;

  struct Row {
    std::string mode;
    std::size_t m = 0, params = 0;
    double seconds_per_epoch = 0.0, rel_l2 = 0.0;
  };

  static double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }

  Row run_setting(RunConfig rc, const DatasetSplit& split, const std::vector<std::uint64_t>& seed_list,
                  std::ostream& os) const {
    Row row;
    row.mode = rc.model.slice_mode == SliceMode::learned ? "learned" : "regular_squares";
    row.m = rc.model.slices;
    if (rc.model.slice_mode == SliceMode::regular_squares) {
      row.m = regular_square_slices(split.train.samples.front().grid, rc.model.square_side).cols();
    }
    row.params = expected_parameter_count(rc.model);
    std::vector<double> errors;
    double seconds = 0.0;
    for (std::uint64_t s : seed_list) {
      rc.train.seed = s;
      const TrainResult result = train(rc.model, rc.train, split.train, nullptr);
      for (const EpochRecord& r : result.history.epochs) seconds += r.seconds;
      errors.push_back(mean_relative_l2(result.params, rc.model, split.test));
      os << "  " << row.mode << " M=" << row.m << " seed " << s << ": rel_l2 " << num(errors.back()) << "\n";
      os.flush();
    }
    row.seconds_per_epoch = seconds / static_cast<double>(seed_list.size() * rc.train.epochs);
    row.rel_l2 = median(errors);
    return row;
  }

  int run(const CLI::App& app, std::ostream& os) const {
    const RunConfig base = config.resolve(app);
    const DatasetSplit split = load_split(data, true);
    check_model_matches(base.model, split.train);
    if (split.test.empty()) throw DataError("ablation needs a test split");
    const std::vector<std::size_t> m_list = parse_list<std::size_t>(slices, "--slices");
    const std::vector<std::uint64_t> seed_list =
        seeds.empty() ? std::vector<std::uint64_t>{base.train.seed} : parse_list<std::uint64_t>(seeds, "--seeds");

    std::vector<Row> rows;
    for (std::size_t m : m_list) {
      RunConfig rc = base;
      rc.model.slice_mode = SliceMode::learned;
      rc.model.slices = m;
      rows.push_back(run_setting(rc, split, seed_list, os));
    }
    if (regular_squares) {
      if (!split.train.samples.front().grid) throw GeometryError("regular squares need a grid-structured dataset");
      RunConfig rc = base;
      rc.model.slice_mode = SliceMode::regular_squares;
      rows.push_back(run_setting(rc, split, seed_list, os));
    }

    std::ostringstream table;
    table << "mode,M,params,s_per_epoch,rel_l2\n";
    for (const Row& r : rows) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3f", r.seconds_per_epoch);
      table << r.mode << ',' << r.m << ',' << r.params << ',' << buf << ',' << num(r.rel_l2) << '\n';
    }
    os << table.str();
    if (!out.empty()) {
      std::ofstream file = open_out(out);
      file << table.str();
    }
    return kExitOk;
  }
};

// ---- bench

struct BenchCmd {
  ConfigOptions config;
  std::string sizes = "1024,2048,4096,8192", out;
  std::size_t repeats = 3;

  int run(const CLI::App& app, std::ostream& os) const {
    const RunConfig rc = config.resolve(app);
    if (rc.model.slice_mode != SliceMode::learned || rc.model.projector != ProjectorKind::pointwise) {
      throw ConfigError("bench runs on random unstructured inputs; use learned slices with the pointwise projector");
    }
    if (repeats < 1) throw ConfigError("--repeats must be at least 1");
    ParamStore params = init_params(rc.model, rc.train.seed);
    std::ostringstream csv;
    csv << "N,forward_backward_seconds,peak_bytes\n";
    for (std::size_t n : parse_list<std::size_t>(sizes, "--sizes")) {
      std::mt19937_64 rng(rc.train.seed + n);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      MeshSample s;
      s.coords = Tensor({n, rc.model.geometry_dim});
      for (double& v : s.coords.data()) v = unit(rng);
      if (rc.model.observed_dim > 0) {
        s.observed = Tensor({n, rc.model.observed_dim});
        for (double& v : s.observed->data()) v = unit(rng);
      }
      s.target = Tensor({n, rc.model.output_dim});
      for (double& v : s.target.data()) v = unit(rng);

      std::vector<double> times;
      std::size_t peak = 0;
      for (std::size_t r = 0; r <= repeats; ++r) {  // first pass warms up
        const auto start = std::chrono::steady_clock::now();
        Graph graph;
        const ModelWeights w = bind_weights(graph, params, rc.model);
        Var loss = relative_l2_loss(forward(graph, s, w, rc.model), s.target);
        graph.backward(loss);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        peak = std::max(peak, graph.bytes());
        if (r > 0) times.push_back(secs);
      }
      std::sort(times.begin(), times.end());
      char buf[96];
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%zu\n", n, times[times.size() / 2], peak);
      csv << buf;
    }
    os << csv.str();
    if (!out.empty()) {
      std::ofstream file = open_out(out);
      file << csv.str();
    }
    return kExitOk;
  }
};

// ---- export-slices

void write_pgm(const fs::path& path, const Tensor& weights, std::size_t slice, GridShape grid) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P5\n" << grid.width << ' ' << grid.height << "\n255\n";
  for (std::size_t i = 0; i < grid.points(); ++i) {
    const double w = std::clamp(weights(i, slice), 0.0, 1.0);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * w))));
  }
}

struct ExportCmd {
  std::string checkpoint, data, out, split = "test";
  std::size_t sample = 0, layer = 0, head = 0;

  int run(std::ostream& os) const {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    if (split != "test" && split != "train") throw ConfigError("--split must be train or test");
    const Dataset ds = load_dataset(fs::path(data) / (split == "test" ? kTestFile : kTrainFile));
    check_model_matches(ckpt.config, ds);
    if (sample >= ds.size()) throw ConfigError("--sample " + std::to_string(sample) + " out of range");
    if (layer >= ckpt.config.layers) throw ConfigError("--layer " + std::to_string(layer) + " out of range");
    if (head >= ckpt.config.heads) throw ConfigError("--head " + std::to_string(head) + " out of range");

    const MeshSample& s = ds.samples[sample];
    ForwardTrace trace;
    predict_fields(s, ckpt.params, ckpt.config, ds.normalizer, &trace);
    const Tensor& w = trace.layers[layer].heads[head].slice_weights;
    {
      std::ofstream csv = open_out(out);
      write_slice_weights_csv(csv, s.coords, w);
    }
    std::size_t images = 0;
    if (s.grid) {
      const fs::path base(out);
      for (std::size_t j = 0; j < w.cols(); ++j) {
        fs::path img = base;
        img.replace_filename(base.stem().string() + "_slice" + std::to_string(j + 1) + ".pgm");
        write_pgm(img, w, j, *s.grid);
        ++images;
      }
    }
    os << "wrote " << w.cols() << " slices for " << s.points() << " points to " << out;
    if (images) os << " and " << images << " PGM images";
    os << "\n";
    return kExitOk;
  }
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Physics-Attention neural operator toolkit"};
  app.require_subcommand(1);

  GenData gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate train/test datasets");
  gen_cmd->add_option("--task", gen.task, "task name")->capture_default_str();
  gen_cmd->add_option("--res", gen.resolution, "grid resolution")->capture_default_str();
  gen_cmd->add_option("--n-train", gen.n_train, "training samples")->capture_default_str();
  gen_cmd->add_option("--n-test", gen.n_test, "test samples")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "base seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_flag("--force", gen.force, "overwrite a non-empty output directory");

  TrainCmd tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  tr.config.attach(*train_cmd);
  train_cmd->add_option("--data", tr.data, "dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "run directory")->required();
  train_cmd->add_flag("--force", tr.force, "overwrite a non-empty run directory");

  EvalCmd ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "dataset directory")->required();
  eval_cmd->add_flag("--kl", ev.kl, "report per-layer attention KL from uniform");
  eval_cmd->add_option("--resample", ev.resample, "keep this fraction of each sample's points");
  eval_cmd->add_option("--seed", ev.seed, "resampling seed");
  eval_cmd->add_option("--csv", ev.csv, "CSV report path (default: eval.csv beside the checkpoint)");

  AblateCmd ab;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "slice-count ablation");
  ab.config.attach(*ablate_cmd, "slices");
  ablate_cmd->add_option("--slices", ab.slices, "comma-separated slice counts")->required();
  ablate_cmd->add_flag("--regular-squares", ab.regular_squares, "add a fixed regular-squares row");
  ablate_cmd->add_option("--data", ab.data, "dataset directory")->required();
  ablate_cmd->add_option("--seeds", ab.seeds, "comma-separated training seeds (default: config seed)");
  ablate_cmd->add_option("--out", ab.out, "also write the table to this CSV file");

  BenchCmd bn;
  CLI::App* bench_cmd = app.add_subcommand("bench", "forward+backward time versus mesh size");
  bn.config.attach(*bench_cmd);
  bench_cmd->add_option("--sizes", bn.sizes, "comma-separated point counts")->capture_default_str();
  bench_cmd->add_option("--repeats", bn.repeats, "timed passes per size")->capture_default_str();
  bench_cmd->add_option("--out", bn.out, "also write the CSV to this file");

  ExportCmd ex;
  CLI::App* export_cmd = app.add_subcommand("export-slices", "dump slice weights of one head");
  export_cmd->add_option("--checkpoint", ex.checkpoint, "checkpoint file")->required();
  export_cmd->add_option("--data", ex.data, "dataset directory")->required();
  export_cmd->add_option("--split", ex.split, "train or test")->capture_default_str();
  export_cmd->add_option("--sample", ex.sample, "sample index (0-based)")->capture_default_str();
  export_cmd->add_option("--layer", ex.layer, "layer index (0-based)")->capture_default_str();
  export_cmd->add_option("--head", ex.head, "head index (0-based)")->capture_default_str();
  export_cmd->add_option("--out", ex.out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen_cmd) return gen.run(out);
    if (*train_cmd) return tr.run(*train_cmd, out);
    if (*eval_cmd) return ev.run(*eval_cmd, out);
    if (*ablate_cmd) return ab.run(*ablate_cmd, out);
    if (*bench_cmd) return bn.run(*bench_cmd, out);
    if (*export_cmd) return ex.run(out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}

}  // namespace physattn
