// latlink: estimate linear alignment maps between latent spaces, measure
// geometric isomorphism, diagnose conditioning, and run the collaboration
// protocols, all from the command line. Every run writes a manifest.json
// holding the fully resolved configuration; re-running a subcommand with
// `--config manifest.json` reproduces the run.
#include <algorithm>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "latlink/align.hpp"
#include "latlink/collab.hpp"
#include "latlink/diagnostics.hpp"
#include "latlink/jepa.hpp"
#include "latlink/latents.hpp"
#include "latlink/matrix_io.hpp"
#include "latlink/metrics.hpp"
#include "latlink/synth.hpp"
#include "latlink/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace latlink;

namespace {

// ---------------------------------------------------------------------------
// Small helpers

class UsageError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  for (const std::string& item : split_list(s)) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("cannot parse '" + item + "' in " + flag + " as a number");
    }
  }
  if (out.empty()) throw UsageError(flag + " must list at least one value");
  return out;
}

std::vector<int> parse_ints(const std::string& s, const std::string& flag) {
  std::vector<int> out;
  for (double v : parse_doubles(s, flag)) {
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v) {
      throw UsageError(flag + " must list integers");
    }
    out.push_back(i);
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s, const std::string& flag) {
  std::vector<std::uint64_t> out;
  for (const std::string& item : split_list(s)) {
    try {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::uint64_t>(v));
    } catch (const std::exception&) {
      throw UsageError("cannot parse '" + item + "' in " + flag + " as a seed");
    }
  }
  if (out.empty()) throw UsageError(flag + " must list at least one value");
  return out;
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed while writing " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw UsageError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

fs::path prepare_out_dir(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

// Applies config-file values to option variables that were not set on the
// command line (precedence: flags > config file > defaults) and rejects keys
// that no option consumes.
class ConfigApplier {
 public:
  ConfigApplier(const CLI::App& cmd, std::optional<json> cfg)
      : cmd_(cmd), cfg_(std::move(cfg)) {
    consumed_.insert("subcommand");
  }

  template <typename T>
  void apply(const std::string& key, T& var) {
    if (!cfg_) return;
    if (!cfg_->contains(key)) return;
    consumed_.insert(key);
    if (cmd_.count("--" + key) > 0) return;
    try {
      var = cfg_->at(key).get<T>();
    } catch (const json::exception&) {
      throw UsageError("config key '" + key + "' has the wrong type");
    }
  }

  void finish() const {
    if (!cfg_) return;
    for (const auto& [key, value] : cfg_->items()) {
      if (!consumed_.count(key)) throw UsageError("unknown config key '" + key + "'");
    }
  }

 private:
  const CLI::App& cmd_;
  std::optional<json> cfg_;
  std::set<std::string> consumed_;
};

// ---------------------------------------------------------------------------
// Shared option bundles

struct CommonOpts {
  std::string config_path;
  int threads = 0;  // 0: LATLINK_THREADS env var, else hardware default
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path,
                  "JSON config file; command-line flags take precedence");
  cmd->add_option("--threads", opts.threads,
                  "worker threads (default: LATLINK_THREADS env var, else hardware)");
}

void activate_threads(const CLI::App& cmd, const CommonOpts& opts) {
  int t = opts.threads;
  if (cmd.count("--threads") == 0) {
    if (const char* env = std::getenv("LATLINK_THREADS")) {
      try {
        t = std::stoi(env);
      } catch (const std::exception&) {
        throw UsageError("LATLINK_THREADS must be an integer");
      }
    }
  }
  if (t < 0) throw UsageError("--threads must be >= 0");
  if (t == 0) t = std::max(1u, std::thread::hardware_concurrency());
  set_threads(t);
}

std::optional<json> load_config(const CommonOpts& opts) {
  if (opts.config_path.empty()) return std::nullopt;
  json j = read_json_file(opts.config_path);
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  return j;
}

struct WorldOpts {
  int d = 16;
  int n = 1000;
  double sigma = 0.0;
  std::uint64_t seed = 1;
  std::string dist = "normal";
  double kappa1 = 1.0;
  double kappa2 = 3.0;
  double split_frac = 0.5;
};

void add_world(CLI::App* cmd, WorldOpts& w) {
  cmd->add_option("--d", w.d, "state dimension");
  cmd->add_option("--n", w.n, "number of states");
  cmd->add_option("--sigma", w.sigma, "view-2 additive noise std");
  cmd->add_option("--seed", w.seed, "world seed");
  cmd->add_option("--dist", w.dist, "state distribution: normal | uniform_cube");
  cmd->add_option("--kappa1", w.kappa1, "condition number of the view-1 mix");
  cmd->add_option("--kappa2", w.kappa2, "condition number of the view-2 mix");
  cmd->add_option("--split-frac", w.split_frac, "train fraction of the pair split");
}

void apply_world(ConfigApplier& cfg, WorldOpts& w) {
  cfg.apply("d", w.d);
  cfg.apply("n", w.n);
  cfg.apply("sigma", w.sigma);
  cfg.apply("seed", w.seed);
  cfg.apply("dist", w.dist);
  cfg.apply("kappa1", w.kappa1);
  cfg.apply("kappa2", w.kappa2);
  cfg.apply("split-frac", w.split_frac);
}

json world_manifest(const WorldOpts& w) {
  return json{{"d", w.d},          {"n", w.n},
              {"sigma", w.sigma},  {"seed", w.seed},
              {"dist", w.dist},    {"kappa1", w.kappa1},
              {"kappa2", w.kappa2}, {"split-frac", w.split_frac}};
}

// The two mixing matrices are derived deterministically from the world seed
// with fixed stream tags, so a world is fully described by its manifest.
synth::SyntheticWorldSpec world_spec(const WorldOpts& w) {
  if (w.d < 1) throw UsageError("--d must be >= 1");
  const Eigen::MatrixXd mix1 = synth::random_invertible(w.d, w.kappa1, derive_seed(w.seed, 101));
  const Eigen::MatrixXd mix2 = synth::random_invertible(w.d, w.kappa2, derive_seed(w.seed, 102));
  return synth::make_world_spec(w.d, w.n, mix1, mix2, w.sigma, w.seed,
                                synth::state_distribution_from_string(w.dist));
}

struct FitOpts {
  std::string method = "ridge";
  double lambda = 0.0;
  bool no_auto_lambda = false;
  double tau = 1e6;
  bool raw = false;  // skip per-dimension standardization
  std::string ks = "1,5,10,20,50";
  int dsc_max = 2000;
  std::uint64_t dsc_seed = 0;
};

void add_fit(CLI::App* cmd, FitOpts& f) {
  cmd->add_option("--method", f.method, "fit method: ridge | ols | procrustes");
  cmd->add_option("--lambda", f.lambda, "ridge strength");
  cmd->add_flag("--no-auto-lambda", f.no_auto_lambda,
                "fail on singular Gram matrices instead of retrying with a scaled lambda");
  cmd->add_option("--tau", f.tau, "condition-number threshold for the exact inverse");
  cmd->add_flag("--raw", f.raw, "fit on raw latents (skip standardization)");
  cmd->add_option("--ks", f.ks, "comma-separated neighborhood sizes for NOS@k");
  cmd->add_option("--dsc-max", f.dsc_max, "max points scored by DSC before subsampling");
  cmd->add_option("--dsc-seed", f.dsc_seed, "subsample seed for DSC");
}

void apply_fit(ConfigApplier& cfg, FitOpts& f) {
  cfg.apply("method", f.method);
  cfg.apply("lambda", f.lambda);
  cfg.apply("no-auto-lambda", f.no_auto_lambda);
  cfg.apply("tau", f.tau);
  cfg.apply("raw", f.raw);
  cfg.apply("ks", f.ks);
  cfg.apply("dsc-max", f.dsc_max);
  cfg.apply("dsc-seed", f.dsc_seed);
}

json fit_manifest(const FitOpts& f) {
  return json{{"method", f.method},   {"lambda", f.lambda},
              {"no-auto-lambda", f.no_auto_lambda}, {"tau", f.tau},
              {"raw", f.raw},         {"ks", f.ks},
              {"dsc-max", f.dsc_max}, {"dsc-seed", f.dsc_seed}};
}

align::FitMethod method_from_string(const std::string& s) {
  if (s == "ridge") return align::FitMethod::ridge;
  if (s == "ols") return align::FitMethod::ols;
  if (s == "procrustes") return align::FitMethod::procrustes;
  throw UsageError("unknown fit method: " + s);
}

diagnostics::AlignmentOptions alignment_options(const FitOpts& f) {
  diagnostics::AlignmentOptions opts;
  opts.method = method_from_string(f.method);
  opts.lambda = f.lambda;
  opts.auto_lambda = !f.no_auto_lambda;
  opts.tau = f.tau;
  opts.standardize = !f.raw;
  opts.metrics.ks = parse_ints(f.ks, "--ks");
  opts.metrics.dsc_max_points = f.dsc_max;
  opts.metrics.dsc_seed = f.dsc_seed;
  return opts;
}

// ---------------------------------------------------------------------------
// World directory format: view1.bin / view2.bin (latent container), pairs.csv
// (state_id,split), world.bin (mixing matrices) and manifest.json.

void save_world(const fs::path& dir, const synth::SyntheticWorldSpec& spec,
                const latents::PairedDataset& data) {
  latents::save_latents(data.view1, (dir / "view1.bin").string(), latents::Format::bin);
  latents::save_latents(data.view2, (dir / "view2.bin").string(), latents::Format::bin);
  std::ofstream pairs(dir / "pairs.csv");
  if (!pairs) throw std::runtime_error("cannot open pairs.csv for writing");
  pairs << "state_id,split\n";
  for (const std::string& id : data.pair_ids) {
    pairs << id << ','
          << (data.split.at(id) == latents::Split::train ? "train" : "test") << '\n';
  }
  if (!pairs) throw std::runtime_error("failed while writing pairs.csv");
  matio::save_container((dir / "world.bin").string(), "WRLD",
                        {{"mix1", spec.mix1}, {"mix2", spec.mix2}});
}

latents::PairedDataset load_world(const std::string& in) {
  if (in.empty()) throw UsageError("--in is required");
  const fs::path dir(in);
  latents::PairedDataset data;
  data.view1 = latents::load_latents((dir / "view1.bin").string(), latents::Format::bin, "view1");
  data.view2 = latents::load_latents((dir / "view2.bin").string(), latents::Format::bin, "view2");
  std::ifstream pairs(dir / "pairs.csv");
  if (!pairs) throw std::runtime_error("cannot open " + (dir / "pairs.csv").string());
  std::string line;
  if (!std::getline(pairs, line) || line != "state_id,split") {
    throw std::runtime_error("malformed pairs.csv header");
  }
  while (std::getline(pairs, line)) {
    if (line.empty()) continue;
    const std::size_t comma = line.rfind(',');
    if (comma == std::string::npos) throw std::runtime_error("malformed pairs.csv row");
    const std::string id = line.substr(0, comma);
    const std::string part = line.substr(comma + 1);
    if (part != "train" && part != "test") {
      throw std::runtime_error("malformed split label in pairs.csv");
    }
    data.pair_ids.push_back(id);
    data.split[id] = part == "train" ? latents::Split::train : latents::Split::test;
  }
  if (data.pair_ids.empty()) throw std::runtime_error("pairs.csv lists no pairs");
  return data;
}

// Worlds generated by `gen` all name their states s0..s{N-1}, so a shifted
// world loaded for out-of-distribution scoring would collide with the fit
// world's ids even though its states are fresh draws. Prefixing keeps the
// library's id-leakage guard meaningful while letting two independently
// generated worlds meet in one evaluation.
latents::PairedDataset prefix_ids(latents::PairedDataset data, const std::string& prefix) {
  latents::PairedDataset out;
  std::vector<std::string> ids1;
  ids1.reserve(data.view1.state_ids.size());
  for (const auto& id : data.view1.state_ids) ids1.push_back(prefix + id);
  std::vector<std::string> ids2;
  ids2.reserve(data.view2.state_ids.size());
  for (const auto& id : data.view2.state_ids) ids2.push_back(prefix + id);
  out.view1 = latents::make_latent_set(std::move(data.view1.values), std::move(ids1),
                                       data.view1.view_tag);
  out.view2 = latents::make_latent_set(std::move(data.view2.values), std::move(ids2),
                                       data.view2.view_tag);
  for (const auto& id : data.pair_ids) out.pair_ids.push_back(prefix + id);
  for (const auto& [id, split] : data.split) out.split[prefix + id] = split;
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each returns the resolved-config manifest it wrote.

struct GenCmd {
  CommonOpts common;
  WorldOpts world;
  std::string out;

  void run(const CLI::App& cmd) {
    ConfigApplier cfg(cmd, load_config(common));
    apply_world(cfg, world);
    cfg.apply("out", out);
    cfg.finish();
    activate_threads(cmd, common);

    const synth::SyntheticWorldSpec spec = world_spec(world);
    const latents::PairedDataset data = synth::generate(spec, world.split_frac);
    const fs::path dir = prepare_out_dir(out);
    save_world(dir, spec, data);

    json manifest = world_manifest(world);
    manifest["subcommand"] = "gen";
    manifest["out"] = out;
    write_json_file(dir / "manifest.json", manifest);
    std::cout << "wrote " << data.pair_ids.size() << " paired latents to " << dir.string()
              << '\n';
  }
};

struct FitCmd {
  CommonOpts common;
  FitOpts fit;
  std::string in;
  std::string out;

  void run(const CLI::App& cmd) {
    ConfigApplier cfg(cmd, load_config(common));
    apply_fit(cfg, fit);
    cfg.apply("in", in);
    cfg.apply("out", out);
    cfg.finish();
    activate_threads(cmd, common);

    const latents::PairedDataset data = load_world(in);
    const diagnostics::AlignmentRun run = diagnostics::run_alignment(data, alignment_options(fit));
    const fs::path dir = prepare_out_dir(out);
    align::save_alignment(run.alignment, (dir / "alignment").string());
    write_json_file(dir / "report.json", metrics::report_to_json(run.report));
    write_json_file(dir / "spectrum.json", diagnostics::spectrum_to_json(run.spectrum));

    json manifest = fit_manifest(fit);
    manifest["subcommand"] = "fit";
    manifest["in"] = in;
    manifest["out"] = out;
    write_json_file(dir / "manifest.json", manifest);

    json summary = metrics::report_to_json(run.report);
    summary["kappa"] = diagnostics::spectrum_to_json(run.spectrum)["condition_number"];
    std::cout << summary.dump(2) << '\n';
  }
};

struct EvalCmd {
  CommonOpts common;
  std::string in;
  std::string alignment;
  std::string shifted;
  std::string out;
  std::string ks = "1,5,10,20,50";
  int dsc_max = 2000;
  std::uint64_t dsc_seed = 0;

  metrics::MetricsConfig metrics_config() const {
    metrics::MetricsConfig m;
    m.ks = parse_ints(ks, "--ks");
    m.dsc_max_points = dsc_max;
    m.dsc_seed = dsc_seed;
    return m;
  }

  void run(const CLI::App& cmd) {
    ConfigApplier cfg(cmd, load_config(common));
    cfg.apply("in", in);
    cfg.apply("alignment", alignment);
    cfg.apply("shifted", shifted);
    cfg.apply("out", out);
    cfg.apply("ks", ks);
    cfg.apply("dsc-max", dsc_max);
    cfg.apply("dsc-seed", dsc_seed);
    cfg.finish();
    activate_threads(cmd, common);
    if (alignment.empty()) throw UsageError("--alignment is required");

    const latents::PairedDataset data = load_world(in);
    diagnostics::AlignmentRun run;
    run.alignment = align::load_alignment(alignment);
    run.spectrum = diagnostics::spectrum(run.alignment.map);
    run.report = metrics::full_report(data, run.alignment.map, run.alignment.stats1,
                                      run.alignment.stats2, metrics_config());

    const fs::path dir = prepare_out_dir(out);
    write_json_file(dir / "report.json", metrics::report_to_json(run.report));
    json output = metrics::report_to_json(run.report);
    if (!shifted.empty()) {
      if (fs::weakly_canonical(shifted) == fs::weakly_canonical(in)) {
        throw std::invalid_argument("--shifted must name a different world than --in");
      }
      const latents::PairedDataset shifted_data = prefix_ids(load_world(shifted), "shift_");
      const auto [base, on_shifted] =
          diagnostics::distribution_shift_eval(data, shifted_data, run, metrics_config());
      json shift;
      shift["base"] = metrics::report_to_json(base);
      shift["shifted"] = metrics::report_to_json(on_shifted);
      write_json_file(dir / "shift_report.json", shift);
      output["shifted"] = shift["shifted"];
    }

    json manifest{{"in", in},     {"alignment", alignment}, {"shifted", shifted},
                  {"ks", ks},     {"dsc-max", dsc_max},     {"dsc-seed", dsc_seed},
                  {"out", out}};
    manifest["subcommand"] = "eval";
    write_json_file(dir / "manifest.json", manifest);
    std::cout << output.dump(2) << '\n';
  }
};

struct DiagnoseCmd {
  CommonOpts common;
  std::string alignment;
  std::string out;

  void run(const CLI::App& cmd) {
    ConfigApplier cfg(cmd, load_config(common));
    cfg.apply("alignment", alignment);
    cfg.apply("out", out);
    cfg.finish();
    activate_threads(cmd, common);
    if (alignment.empty()) throw UsageError("--alignment is required");

    const align::AlignmentFile file = align::load_alignment(alignment);
    const json spectrum = diagnostics::spectrum_to_json(diagnostics::spectrum(file.map));
    const fs::path dir = prepare_out_dir(out);
    write_json_file(dir / "spectrum.json", spectrum);
    json manifest{{"alignment", alignment}, {"out", out}};
    manifest["subcommand"] = "diagnose";
    write_json_file(dir / "manifest.json", manifest);
    std::cout << spectrum.dump(2) << '\n';
  }
};

struct SweepCmd {
  CommonOpts common;
  WorldOpts world;
  FitOpts fit;
  std::string axis;
  std::string in;
  std::string eps = "0,0.1,0.3";
  std::string budgets;
  std::string seeds = "1,2,3";
  std::uint64_t sweep_seed = 1;
  std::string out;

  void run(const CLI::App& cmd) {
    ConfigApplier cfg(cmd, load_config(common));
    apply_world(cfg, world);
    apply_fit(cfg, fit);
    cfg.apply("axis", axis);
    cfg.apply("in", in);
    cfg.apply("eps", eps);
    cfg.apply("budgets", budgets);
    cfg.apply("seeds", seeds);
    cfg.apply("sweep-seed", sweep_seed);
    cfg.apply("out", out);
    cfg.finish();
    activate_threads(cmd, common);

    std::string normalized = axis;
    for (char& c : normalized) {
      if (c == '-') c = '_';
    }
    const diagnostics::AlignmentOptions opts = alignment_options(fit);

    diagnostics::SweepResult result;
    json manifest;
    if (normalized == "pair_noise") {
      const latents::PairedDataset data = load_world(in);
      result = diagnostics::pair_noise_sweep(data, parse_doubles(eps, "--eps"), opts, sweep_seed);
      manifest["in"] = in;
      manifest["eps"] = eps;
      manifest["sweep-seed"] = sweep_seed;
    } else if (normalized == "pair_budget") {
      if (budgets.empty()) throw UsageError("--budgets is required for the pair_budget axis");
      const latents::PairedDataset data = load_world(in);
      result =
          diagnostics::pair_budget_sweep(data, parse_ints(budgets, "--budgets"), opts, sweep_seed);
      manifest["in"] = in;
      manifest["budgets"] = budgets;
      manifest["sweep-seed"] = sweep_seed;
    } else if (normalized == "seed" || normalized == "seeds") {
      // Regenerates the full world per seed (mixes included) and refits.
      WorldOpts w = world;
      const auto experiment = [&](std::uint64_t s) {
        w.seed = s;
        return diagnostics::run_alignment(synth::generate(world_spec(w), w.split_frac), opts);
      };
      result = diagnostics::seed_sweep(experiment, parse_seeds(seeds, "--seeds"));
      manifest = world_manifest(world);
      manifest.erase("seed");
      manifest["seeds"] = seeds;
    } else {
      throw UsageError("unknown sweep axis: " + axis +
                       " (expected pair_noise, pair_budget or seed)");
    }

    const fs::path dir = prepare_out_dir(out);
    diagnostics::write_sweep_csv(result, (dir / "sweep.csv").string());
    manifest.update(fit_manifest(fit));
    manifest["axis"] = axis;
    manifest["subcommand"] = "sweep";
    manifest["out"] = out;
    write_json_file(dir / "manifest.json", manifest);
    write_json_file(dir / "sweep_summary.json", diagnostics::sweep_manifest(result, manifest));
    std::cout << "wrote " << result.points.size() << " sweep points to "
              << (dir / "sweep.csv").string() << '\n';
  }
};

struct TrainOpts {
  int steps = 2000;
  double lr = 0.05;
  int batch = 0;
  int latent = 8;
  int hidden = 32;
  double scale1 = 0.1;
  double scale2 = 10.0;
  double jitter = 0.01;
};

void add_train(CLI::App* cmd, TrainOpts& t) {
  cmd->add_option("--steps", t.steps, "training steps");
  cmd->add_option("--lr", t.lr, "learning rate");
  cmd->add_option("--batch", t.batch, "batch size (0: full batch)");
  cmd->add_option("--latent", t.latent, "latent dimension");
  cmd->add_option("--hidden", t.hidden, "hidden width");
  cmd->add_option("--scale1", t.scale1, "first-layer init scale");
  cmd->add_option("--scale2", t.scale2, "second-layer init scale");
  cmd->add_option("--jitter", t.jitter, "observation jitter std for context/target pairs");
}

void apply_train(ConfigApplier& cfg, TrainOpts& t) {
  cfg.apply("steps", t.steps);
  cfg.apply("lr", t.lr);
  cfg.apply("batch", t.batch);
  cfg.apply("latent", t.latent);
  cfg.apply("hidden", t.hidden);
  cfg.apply("scale1", t.scale1);
  cfg.apply("scale2", t.scale2);
  cfg.apply("jitter", t.jitter);
}

json train_manifest(const TrainOpts& t) {
  return json{{"steps", t.steps},   {"lr", t.lr},         {"batch", t.batch},
              {"latent", t.latent}, {"hidden", t.hidden}, {"scale1", t.scale1},
              {"scale2", t.scale2}, {"jitter", t.jitter}};
}

jepa::TrainConfig train_config(const TrainOpts& t, std::uint64_t seed) {
  jepa::TrainConfig c;
  c.learning_rate = t.lr;
  c.steps = t.steps;
  c.batch_size = t.batch;
  c.seed = seed;
  c.latent_dim = t.latent;
  c.hidden_dim = t.hidden;
  c.init_scale1 = t.scale1;
  c.init_scale2 = t.scale2;
  c.jitter_std = t.jitter;
  return c;
}

struct EmergeCmd {
  CommonOpts common;
  WorldOpts world{.d = 8, .n = 2000};
  TrainOpts train{.steps = 5000};
  FitOpts fit;
  std::uint64_t seed1 = 1;
  std::uint64_t seed2 = 2;
  bool shuffle = false;
  std::string checkpoints = "0.1,0.5,1.0";
  std::string out;

  void run(const CLI::App& cmd) {
    ConfigApplier cfg(cmd, load_config(common));
    apply_world(cfg, world);
    apply_train(cfg, train);
    apply_fit(cfg, fit);
    cfg.apply("seed1", seed1);
    cfg.apply("seed2", seed2);
    cfg.apply("shuffle", shuffle);
    cfg.apply("checkpoints", checkpoints);
    cfg.apply("out", out);
    cfg.finish();
    activate_threads(cmd, common);

    const synth::SyntheticWorldSpec spec = world_spec(world);
    jepa::EmergenceConfig config;
    config.train = train_config(train, 0);
    config.seed1 = seed1;
    config.seed2 = seed2;
    config.shuffle_view2 = shuffle;
    config.split_fraction = world.split_frac;
    config.checkpoint_fractions = parse_doubles(checkpoints, "--checkpoints");
    config.metrics = alignment_options(fit).metrics;
    const jepa::EmergenceResult result = jepa::emergence_experiment(spec, config);

    const fs::path dir = prepare_out_dir(out);
    jepa::save_model(result.run1.model, (dir / "model1.tjpa").string());
    jepa::save_model(result.run2.model, (dir / "model2.tjpa").string());
    jepa::write_loss_csv(result.run1, (dir / "run1_loss.csv").string());
    jepa::write_loss_csv(result.run2, (dir / "run2_loss.csv").string());

    json report;
    report["final"] = metrics::report_to_json(result.report);
    report["checkpoints"] = json::array();
    for (const auto& [step, cp] : result.checkpoint_reports) {
      json entry = metrics::report_to_json(cp);
      entry["step"] = step;
      report["checkpoints"].push_back(entry);
    }
    write_json_file(dir / "emerge.json", report);

    json manifest = world_manifest(world);
    manifest.update(train_manifest(train));
    manifest.update(fit_manifest(fit));
    manifest["seed1"] = seed1;
    manifest["seed2"] = seed2;
    manifest["shuffle"] = shuffle;
    manifest["checkpoints"] = checkpoints;
    manifest["subcommand"] = "emerge";
    manifest["out"] = out;
    write_json_file(dir / "manifest.json", manifest);

    std::cout << "r2 = " << format_double(result.report.r2) << '\n';
  }
};

// Shared by `probe` and `collab --mode probe`: builds a labeled world, fits
// an alignment, fits a view-1 probe on the train split and compares keeping
// it, applying it untranslated, and migrating it through the map.
json run_probe_transfer(const WorldOpts& world, const FitOpts& fit, std::uint64_t label_seed,
                        double probe_lambda, const fs::path& dir) {
  const synth::SyntheticWorldSpec spec = world_spec(world);
  const latents::PairedDataset data = synth::generate(spec, world.split_frac);
  const diagnostics::AlignmentRun run = diagnostics::run_alignment(data, alignment_options(fit));

  // Labels live on the underlying states; look each split id up by index.
  const Eigen::MatrixXd states = synth::draw_states(spec);
  const std::vector<int> all_labels = collab::hyperplane_labels(states, label_seed);
  const auto labels_for = [&](const std::vector<std::string>& ids) {
    std::vector<int> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) {
      const std::size_t n = std::stoull(id.substr(1));
      out.push_back(all_labels.at(n));
    }
    return out;
  };

  // Score in the same coordinates the map was fitted in.
  latents::LatentSet z1 = data.view1;
  latents::LatentSet z2 = data.view2;
  if (run.alignment.stats1) z1 = latents::apply_standardizer(z1, *run.alignment.stats1);
  if (run.alignment.stats2) z2 = latents::apply_standardizer(z2, *run.alignment.stats2);
  const std::vector<std::string> train_ids = data.ids_in(latents::Split::train);
  const std::vector<std::string> test_ids = data.ids_in(latents::Split::test);
  const align::LinearProbe probe = collab::fit_linear_probe(
      latents::columns_for_ids(z1, train_ids), labels_for(train_ids), probe_lambda);
  const collab::ProbeTransferResult result = collab::probe_transfer_eval(
      probe, run.alignment.map, latents::columns_for_ids(z1, test_ids),
      latents::columns_for_ids(z2, test_ids), labels_for(test_ids));

  json j;
  j["source_accuracy"] = result.source_accuracy;
  j["a_probe_accuracy"] = result.a_probe_accuracy;
  j["migrated_accuracy"] = result.migrated_accuracy;
  j["condition_number"] = result.condition_number;
  j["inverse_kind"] = align::to_string(result.inverse_kind);
  j["n_test"] = test_ids.size();
  write_json_file(dir / "probe.json", j);

  std::cout << "metric              accuracy\n";
  std::cout << "source (view 1)     " << format_double(result.source_accuracy) << '\n';
  std::cout << "a-probe (view 2)    " << format_double(result.a_probe_accuracy) << '\n';
  std::cout << "migrated (view 2)   " << format_double(result.migrated_accuracy) << '\n';
  return j;
}

struct CollabCmd {
  CommonOpts common;
  WorldOpts world{.d = 8, .n = 2000};
  TrainOpts train;
  std::string mode;
  std::uint64_t model_seed1 = 1;
  std::uint64_t model_seed2 = 2;
  int teacher_steps = 2000;
  double beta = 1.0;
  double gamma = 1.0;
  int refit_interval = 50;
  int eval_interval = 25;
  double threshold = 0.0;
  double probe_lambda = 1e-3;
  std::uint64_t label_seed = 7;
  double tau = 1e6;
  std::string out;

  void run(const CLI::App& cmd) {
    ConfigApplier cfg(cmd, load_config(common));
    apply_world(cfg, world);
    apply_train(cfg, train);
    cfg.apply("mode", mode);
    cfg.apply("model-seed1", model_seed1);
    cfg.apply("model-seed2", model_seed2);
    cfg.apply("teacher-steps", teacher_steps);
    cfg.apply("beta", beta);
    cfg.apply("gamma", gamma);
    cfg.apply("refit-interval", refit_interval);
    cfg.apply("eval-interval", eval_interval);
    cfg.apply("threshold", threshold);
    cfg.apply("probe-lambda", probe_lambda);
    cfg.apply("label-seed", label_seed);
    cfg.apply("tau", tau);
    cfg.apply("out", out);
    cfg.finish();
    activate_threads(cmd, common);
    if (mode.empty()) throw UsageError("--mode is required");

    const collab::CollabMode m = collab::collab_mode_from_string(mode);
    const fs::path dir = prepare_out_dir(out);

    json manifest = world_manifest(world);
    manifest.update(train_manifest(train));
    manifest["mode"] = mode;
    manifest["model-seed1"] = model_seed1;
    manifest["model-seed2"] = model_seed2;
    manifest["teacher-steps"] = teacher_steps;
    manifest["beta"] = beta;
    manifest["gamma"] = gamma;
    manifest["refit-interval"] = refit_interval;
    manifest["eval-interval"] = eval_interval;
    manifest["threshold"] = threshold;
    manifest["probe-lambda"] = probe_lambda;
    manifest["label-seed"] = label_seed;
    manifest["tau"] = tau;
    manifest["subcommand"] = "collab";
    manifest["out"] = out;

    if (m == collab::CollabMode::probe) {
      FitOpts fit;
      fit.tau = tau;
      run_probe_transfer(world, fit, label_seed, probe_lambda, dir);
      write_json_file(dir / "manifest.json", manifest);
      return;
    }

    collab::CollabConfig cc;
    cc.mode = m;
    cc.beta = beta;
    cc.gamma = gamma;
    cc.refit_interval = refit_interval;
    cc.eval_interval = eval_interval;
    cc.tau = tau;
    cc.threshold_value = threshold;
    cc.probe_lambda = probe_lambda;
    cc.label_seed = label_seed;

    const synth::SyntheticWorldSpec spec = world_spec(world);
    const jepa::JepaData data1 = jepa::make_view_data(spec, 1, train.jitter);
    const jepa::JepaData data2 = jepa::make_view_data(spec, 2, train.jitter);
    json summary;

    if (m == collab::CollabMode::teacher_student) {
      cc.threshold_metric = "migrated_probe_accuracy";
      jepa::TrainConfig teacher_cfg = train_config(train, model_seed1);
      teacher_cfg.steps = teacher_steps;
      const jepa::ToyJepaModel teacher0 =
          jepa::init_model(world.d, train.latent, train.hidden, teacher_cfg.init_scale1,
                           teacher_cfg.init_scale2, model_seed1);
      const jepa::ToyJepaModel teacher =
          jepa::train(teacher0, data1, teacher_cfg).model;

      const jepa::TrainConfig student_cfg = train_config(train, model_seed2);
      const jepa::ToyJepaModel student0 = jepa::init_model(
          world.d, train.latent, train.hidden, train.scale1, train.scale2, model_seed2);
      const collab::TeacherStudentResult result =
          collab::teacher_student(teacher, data1, data2, student0, student_cfg, cc);

      jepa::save_model(teacher, (dir / "teacher.tjpa").string());
      jepa::save_model(result.student.model, (dir / "student.tjpa").string());
      collab::write_ledger_csv(dir / "ledger.csv", result.ledger);
      summary["steps_to_threshold"] = result.ledger.steps_to_threshold;
      summary["flops_estimate"] = result.ledger.flops_estimate;
      summary["w_refits"] = result.ledger.w_refits;
      summary["w_bytes_exchanged"] = result.ledger.w_bytes_exchanged;
      summary["metric_non_monotone"] = result.ledger.metric_non_monotone;
      if (!result.ledger.rows.empty()) {
        summary["final_metric"] = result.ledger.rows.back().metric;
      }
    } else {
      cc.threshold_metric = "alignment_r2";
      const jepa::TrainConfig cfg1 = train_config(train, model_seed1);
      const jepa::TrainConfig cfg2 = train_config(train, model_seed2);
      const jepa::ToyJepaModel m1 = jepa::init_model(world.d, train.latent, train.hidden,
                                                     train.scale1, train.scale2, model_seed1);
      const jepa::ToyJepaModel m2 = jepa::init_model(world.d, train.latent, train.hidden,
                                                     train.scale1, train.scale2, model_seed2);
      const collab::MutualTeachResult result =
          collab::mutual_teach(data1, data2, m1, m2, cfg1, cfg2, cc);

      jepa::save_model(result.run1.model, (dir / "model1.tjpa").string());
      jepa::save_model(result.run2.model, (dir / "model2.tjpa").string());
      collab::write_ledger_csv(dir / "ledger.csv", result.ledger);
      summary["flops_estimate"] = result.ledger.flops_estimate;
      summary["w_refits"] = result.ledger.w_refits;
      summary["w_bytes_exchanged"] = result.ledger.w_bytes_exchanged;
      if (!result.ledger.rows.empty()) {
        summary["final_metric"] = result.ledger.rows.back().metric;
      }
    }

    write_json_file(dir / "collab.json", summary);
    write_json_file(dir / "manifest.json", manifest);
    std::cout << summary.dump(2) << '\n';
  }
};

struct ProbeCmd {
  CommonOpts common;
  WorldOpts world{.d = 8, .n = 2000};
  FitOpts fit;
  bool transfer = false;
  std::uint64_t label_seed = 7;
  double probe_lambda = 1e-3;
  std::string out;

  void run(const CLI::App& cmd) {
    ConfigApplier cfg(cmd, load_config(common));
    apply_world(cfg, world);
    apply_fit(cfg, fit);
    cfg.apply("transfer", transfer);
    cfg.apply("label-seed", label_seed);
    cfg.apply("probe-lambda", probe_lambda);
    cfg.apply("out", out);
    cfg.finish();
    activate_threads(cmd, common);

    const fs::path dir = prepare_out_dir(out);
    run_probe_transfer(world, fit, label_seed, probe_lambda, dir);

    json manifest = world_manifest(world);
    manifest.update(fit_manifest(fit));
    manifest["transfer"] = transfer;
    manifest["label-seed"] = label_seed;
    manifest["probe-lambda"] = probe_lambda;
    manifest["subcommand"] = "probe";
    manifest["out"] = out;
    write_json_file(dir / "manifest.json", manifest);
  }
};

struct ProjectCmd {
  CommonOpts common;
  std::string in;
  int view = 1;
  std::string out;

  void run(const CLI::App& cmd) {
    ConfigApplier cfg(cmd, load_config(common));
    cfg.apply("in", in);
    cfg.apply("view", view);
    cfg.apply("out", out);
    cfg.finish();
    activate_threads(cmd, common);
    if (view != 1 && view != 2) throw UsageError("--view must be 1 or 2");

    const latents::PairedDataset data = load_world(in);
    const latents::LatentSet& set = view == 1 ? data.view1 : data.view2;
    const diagnostics::PcaProjection proj = diagnostics::pca_project(set);
    const fs::path dir = prepare_out_dir(out);
    diagnostics::write_pca_csv(set, proj, (dir / "projection.csv").string());

    json info;
    info["explained"] = {proj.explained(0), proj.explained(1)};
    write_json_file(dir / "projection.json", info);
    json manifest{{"in", in}, {"view", view}, {"out", out}};
    manifest["subcommand"] = "project";
    write_json_file(dir / "manifest.json", manifest);
    std::cout << "explained variance: " << format_double(proj.explained(0)) << ", "
              << format_double(proj.explained(1)) << '\n';
  }
};

int fail(int code, const std::string& message) {
  json err{{"error", message}, {"exit_code", code}};
  std::cerr << err.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latlink: latent-space alignment, isomorphism metrics and collaboration"};
  app.require_subcommand(1);

  GenCmd gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic two-view world");
  add_common(gen_cmd, gen.common);
  add_world(gen_cmd, gen.world);
  gen_cmd->add_option("--out", gen.out, "output directory");

  FitCmd fit;
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit an alignment map on a paired world");
  add_common(fit_cmd, fit.common);
  add_fit(fit_cmd, fit.fit);
  fit_cmd->add_option("--in", fit.in, "world directory (from gen)");
  fit_cmd->add_option("--out", fit.out, "output directory");

  EvalCmd eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a stored alignment on a world");
  add_common(eval_cmd, eval.common);
  eval_cmd->add_option("--in", eval.in, "world directory the map was fitted on");
  eval_cmd->add_option("--alignment", eval.alignment, "alignment file stem (from fit)");
  eval_cmd->add_option("--shifted", eval.shifted, "optional shifted world directory");
  eval_cmd->add_option("--out", eval.out, "output directory");
  eval_cmd->add_option("--ks", eval.ks, "comma-separated neighborhood sizes for NOS@k");
  eval_cmd->add_option("--dsc-max", eval.dsc_max, "max points scored by DSC");
  eval_cmd->add_option("--dsc-seed", eval.dsc_seed, "subsample seed for DSC");

  DiagnoseCmd diagnose;
  CLI::App* diagnose_cmd =
      app.add_subcommand("diagnose", "spectral diagnostics of a stored alignment");
  add_common(diagnose_cmd, diagnose.common);
  diagnose_cmd->add_option("--alignment", diagnose.alignment, "alignment file stem");
  diagnose_cmd->add_option("--out", diagnose.out, "output directory");

  SweepCmd sweep;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "pair-noise, pair-budget or seed sweeps");
  add_common(sweep_cmd, sweep.common);
  add_world(sweep_cmd, sweep.world);
  add_fit(sweep_cmd, sweep.fit);
  sweep_cmd->add_option("--axis", sweep.axis, "pair_noise | pair_budget | seed");
  sweep_cmd->add_option("--in", sweep.in, "world directory (pair_noise / pair_budget)");
  sweep_cmd->add_option("--eps", sweep.eps, "mismatch fractions for pair_noise");
  sweep_cmd->add_option("--budgets", sweep.budgets, "train-pair budgets for pair_budget");
  sweep_cmd->add_option("--seeds", sweep.seeds, "seeds for the seed axis");
  sweep_cmd->add_option("--sweep-seed", sweep.sweep_seed, "selection seed for mismatch/budget");
  sweep_cmd->add_option("--out", sweep.out, "output directory");

  EmergeCmd emerge;
  CLI::App* emerge_cmd =
      app.add_subcommand("emerge", "train two independent toy models and align them post hoc");
  add_common(emerge_cmd, emerge.common);
  add_world(emerge_cmd, emerge.world);
  add_train(emerge_cmd, emerge.train);
  add_fit(emerge_cmd, emerge.fit);
  emerge_cmd->add_option("--seed1", emerge.seed1, "model-1 seed");
  emerge_cmd->add_option("--seed2", emerge.seed2, "model-2 seed");
  emerge_cmd->add_flag("--shuffle", emerge.shuffle,
                       "shuffle view-2 coordinates per sample (structure ablation)");
  emerge_cmd->add_option("--checkpoints", emerge.checkpoints,
                         "fractions of the budget to score at");
  emerge_cmd->add_option("--out", emerge.out, "output directory");

  CollabCmd collab_c;
  CLI::App* collab_cmd =
      app.add_subcommand("collab", "teacher-student or mutual-teaching protocols");
  add_common(collab_cmd, collab_c.common);
  add_world(collab_cmd, collab_c.world);
  add_train(collab_cmd, collab_c.train);
  collab_cmd->add_option("--mode", collab_c.mode, "probe | teacher_student | mutual");
  collab_cmd->add_option("--model-seed1", collab_c.model_seed1, "teacher / model-1 seed");
  collab_cmd->add_option("--model-seed2", collab_c.model_seed2, "student / model-2 seed");
  collab_cmd->add_option("--teacher-steps", collab_c.teacher_steps, "teacher pretraining steps");
  collab_cmd->add_option("--beta", collab_c.beta, "student alignment weight");
  collab_cmd->add_option("--gamma", collab_c.gamma, "mutual cross-model weight");
  collab_cmd->add_option("--refit-interval", collab_c.refit_interval, "steps between W refits");
  collab_cmd->add_option("--eval-interval", collab_c.eval_interval,
                         "steps between ledger evaluations");
  collab_cmd->add_option("--threshold", collab_c.threshold,
                         "metric threshold for cost accounting (0: off)");
  collab_cmd->add_option("--probe-lambda", collab_c.probe_lambda, "ridge strength of the probe");
  collab_cmd->add_option("--label-seed", collab_c.label_seed, "hyperplane labeling seed");
  collab_cmd->add_option("--tau", collab_c.tau, "condition threshold for refit maps");
  collab_cmd->add_option("--out", collab_c.out, "output directory");

  ProbeCmd probe;
  CLI::App* probe_cmd =
      app.add_subcommand("probe", "probe migration across two latent spaces");
  add_common(probe_cmd, probe.common);
  add_world(probe_cmd, probe.world);
  add_fit(probe_cmd, probe.fit);
  probe_cmd->add_flag("--transfer", probe.transfer, "run the three-way transfer comparison");
  probe_cmd->add_option("--label-seed", probe.label_seed, "hyperplane labeling seed");
  probe_cmd->add_option("--probe-lambda", probe.probe_lambda, "ridge strength of the probe");
  probe_cmd->add_option("--out", probe.out, "output directory");

  ProjectCmd project;
  CLI::App* project_cmd = app.add_subcommand("project", "2D PCA export of a latent view");
  add_common(project_cmd, project.common);
  project_cmd->add_option("--in", project.in, "world directory");
  project_cmd->add_option("--view", project.view, "latent view to project (1 or 2)");
  project_cmd->add_option("--out", project.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(2, e.what());
  }

  try {
    if (*gen_cmd) gen.run(*gen_cmd);
    if (*fit_cmd) fit.run(*fit_cmd);
    if (*eval_cmd) eval.run(*eval_cmd);
    if (*diagnose_cmd) diagnose.run(*diagnose_cmd);
    if (*sweep_cmd) sweep.run(*sweep_cmd);
    if (*emerge_cmd) emerge.run(*emerge_cmd);
    if (*collab_cmd) collab_c.run(*collab_cmd);
    if (*probe_cmd) probe.run(*probe_cmd);
    if (*project_cmd) project.run(*project_cmd);
  } catch (const std::invalid_argument& e) {
    return fail(2, e.what());
  } catch (const std::exception& e) {
    return fail(1, e.what());
  }
  return 0;
}
