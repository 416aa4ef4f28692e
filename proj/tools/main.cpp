// rrwkv: train, evaluate and probe restoration models from the command line.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "rrwkv/checkpoint.hpp"
#include "rrwkv/data.hpp"
#include "rrwkv/degrade.hpp"
#include "rrwkv/diagnostics.hpp"
#include "rrwkv/erf.hpp"
#include "rrwkv/errors.hpp"
#include "rrwkv/restore_net.hpp"
#include "rrwkv/rng.hpp"
#include "rrwkv/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rrwkv;

namespace {

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw FormatError("cannot write " + path.string());
}

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw FormatError("cannot create output directory " + dir.string());
  return dir;
}

// Reproducibility record written beside a run's outputs.
struct RunManifest {
  std::string subcommand;
  json config = json::object();
  std::uint64_t seed = 0;
  std::string started = now_utc();
  std::vector<std::string> argv;

  void write(const fs::path& path) const {
    json j{{"subcommand", subcommand}, {"version", RRWKV_VERSION}, {"argv", argv},
           {"config", config},         {"seed", seed},            {"started", started},
           {"finished", now_utc()}};
    write_text(path, j.dump(2) + "\n");
  }
};

std::vector<std::string> g_argv;

RunManifest manifest_for(const std::string& sub) {
  RunManifest m;
  m.subcommand = sub;
  m.argv = g_argv;
  return m;
}

// --- subcommands ---------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out;
};

int run_train(const TrainArgs& a) {
  const TrainConfig cfg = TrainConfig::load(a.config);
  const auto entries = read_manifest(a.data);
  const auto train_set = load_split(entries, Split::train, cfg.degradation, cfg.seed);
  const auto val_set = load_split(entries, Split::val, cfg.degradation, cfg.seed);
  if (train_set.empty()) throw ConfigError("data manifest " + a.data + " has no train entries");
  const fs::path out = ensure_dir(a.out);
  RunManifest man = manifest_for("train");
  man.seed = cfg.seed;
  man.config = {{"config_file", a.config}, {"data", a.data}, {"resolved", cfg.str()},
                {"model", json::parse(cfg.model.to_json())}};
  write_text(out / "config.txt", cfg.str());

  Model model = Model::build(cfg.model, cfg.seed);
  std::ofstream log(out / "log.csv");
  log << "iter,lr,l1,val_psnr\n";
  log.precision(10);
  TrainHooks hooks;
  hooks.on_log = [&](const LogRow& r) {
    log << r.iter << ',' << r.lr << ',' << r.l1 << ',';
    if (!std::isnan(r.val_psnr)) log << r.val_psnr;
    log << '\n' << std::flush;
    if (!std::isnan(r.val_psnr))
      std::cout << "iter " << r.iter << "  l1 " << r.l1 << "  val psnr " << r.val_psnr << std::endl;
  };
  hooks.on_checkpoint = [&](const CheckpointData& d) {
    const std::string name = d.iteration == cfg.iterations ? "final.ckpt"
                                                           : "iter_" + std::to_string(d.iteration) + ".ckpt";
    write_checkpoint(out / name, d);
  };
  TrainResult r;
  try {
    r = train(model, train_set, val_set, cfg, hooks);
  } catch (const NumericError&) {
    man.config["aborted"] = true;
    man.write(out / "manifest.json");
    throw;
  }
  const json summary{{"initial_train_l1", r.initial_train_l1}, {"final_train_l1", r.final_train_l1},
                     {"lq_val_psnr", r.lq_val_psnr},         {"final_val_psnr", r.final_val_psnr},
                     {"skipped_steps", r.skipped_steps},     {"iterations", cfg.iterations}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  man.write(out / "manifest.json");
  std::cout << "train l1 " << r.initial_train_l1 << " -> " << r.final_train_l1;
  if (!val_set.empty()) std::cout << "; val psnr " << r.lq_val_psnr << " (input) -> " << r.final_val_psnr;
  std::cout << '\n';
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, out, split = "test", spec = "kspace:0.0625";
  std::uint64_t seed = 0;
  bool save_images = false;
};

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

int run_eval(const EvalArgs& a) {
  const Model model = restore_model(read_checkpoint(a.ckpt));
  const DegradationSpec spec = DegradationSpec::parse(a.spec);
  const auto pairs = load_split(read_manifest(a.data), parse_split(a.split), spec, a.seed);
  if (pairs.empty()) throw ConfigError("data manifest " + a.data + " has no " + a.split + " entries");
  const fs::path out = ensure_dir(a.out);
  const MetricReport restored = evaluate(model, pairs), inputs = evaluate_inputs(pairs);
  write_text(out / "metrics.csv", restored.csv());
  write_text(out / "input_metrics.csv", inputs.csv());
  if (a.save_images) {
    const fs::path dir = ensure_dir(out / "restored");
    autograd::NoGradGuard guard;
    for (const auto& p : pairs) save_pgm(model.forward(p.lq), dir / (p.id + ".pgm"));
  }
  RunManifest man = manifest_for("eval");
  man.seed = a.seed;
  man.config = {{"ckpt", a.ckpt}, {"data", a.data}, {"split", a.split}, {"spec", spec.str()},
                {"save_images", a.save_images}};
  man.write(out / "manifest.json");
  std::cout << std::fixed << std::setprecision(3) << pairs.size() << " images: psnr "
            << restored.psnr().mean << " (input " << inputs.psnr().mean << "), ssim "
            << std::setprecision(4) << restored.ssim().mean << " (input " << inputs.ssim().mean << ")\n";
  return 0;
}

struct DegradeArgs {
  std::string in, spec = "kspace:0.0625", out;
  std::uint64_t seed = 0;
};

int run_degrade(const DegradeArgs& a) {
  const DegradationSpec spec = DegradationSpec::parse(a.spec);
  if (!fs::is_directory(a.in)) throw FormatError("input directory " + a.in + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.in))
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw FormatError("no .pgm files in " + a.in);
  const fs::path out = ensure_dir(a.out);
  for (const auto& f : files) {
    const Tensor hq = load_pgm(f);
    save_pgm(degrade(hq, spec, derive_seed(a.seed, f.filename().string())), out / f.filename());
  }
  RunManifest man = manifest_for("degrade");
  man.seed = a.seed;
  man.config = {{"in", a.in}, {"spec", spec.str()}, {"files", files.size()}};
  man.write(out / "manifest.json");
  std::cout << "degraded " << files.size() << " images with " << spec.str() << '\n';
  return 0;
}

struct ErfArgs {
  std::string ckpt, variant = "re-wkv+omni", out;
  bool all = false;
  std::size_t size = 32, samples = 8;
  std::uint64_t seed = 0, probe_seed = 11;
  double threshold = 1e-4;
};

std::string file_label(std::string s) {
  std::replace(s.begin(), s.end(), '+', '_');
  return s;
}

int run_erf(const ErfArgs& a) {
  if (a.size == 0 || a.samples == 0) throw ConfigError("erf: --size and --samples must be positive");
  std::vector<ErfMap> maps;
  if (!a.ckpt.empty()) {
    const Model model = restore_model(read_checkpoint(a.ckpt));
    const auto inputs = erf_inputs(a.size, a.size, a.samples, a.seed);
    maps.push_back(erf([&](const Tensor& x) { return model.forward(x); }, inputs, a.size / 2,
                       a.size / 2, "checkpoint"));
  } else {
    std::vector<ProbeConfig> configs;
    if (a.all) {
      configs = all_probe_configs(a.probe_seed);
    } else {
      ProbeConfig c = ProbeConfig::parse(a.variant);
      c.seed = a.probe_seed;
      configs.push_back(c);
    }
    maps = erf_compare(configs, a.size, a.size, a.samples, a.seed);
  }
  const fs::path out = ensure_dir(a.out);
  for (const auto& m : maps) save_pgm(m.map, out / ("erf_" + file_label(m.label) + ".pgm"));
  write_text(out / "erf.csv", erf_csv(maps, a.threshold));
  RunManifest man = manifest_for("erf");
  man.seed = a.seed;
  man.config = {{"ckpt", a.ckpt}, {"variant", a.ckpt.empty() ? a.variant : "checkpoint"},
                {"all", a.all},   {"size", a.size},
                {"samples", a.samples}, {"probe_seed", a.probe_seed},
                {"threshold", a.threshold}};
  man.write(out / "manifest.json");
  for (const auto& m : maps) std::cout << m.label << "  coverage " << m.coverage(a.threshold) << '\n';
  return 0;
}

int run_bench(const BenchOptions& o, const std::string& out) {
  const auto rows = bench_wkv(o);
  const std::string csv = timing_csv(rows);
  if (out.empty() || out == "-") {
    std::cout << csv;
  } else {
    const fs::path p(out);
    if (p.has_parent_path()) ensure_dir(p.parent_path());
    write_text(p, csv);
    RunManifest man = manifest_for("bench");
    man.seed = o.seed;
    man.config = {{"op", o.op}, {"sizes", o.sizes}, {"channels", o.channels}, {"repeats", o.repeats},
                  {"oracle_max_tokens", o.oracle_max_tokens}, {"out", out}};
    man.write(p.string() + ".manifest.json");
    std::cout << csv;
  }
  return 0;
}

int run_fuse_check(std::size_t trials, std::uint64_t seed, double tol, const std::string& out) {
  const FuseCheckResult r = fuse_check(trials, seed, tol);
  std::ostringstream tol_s;
  tol_s << tol;
  std::cout << r.passed << '/' << r.trials << " within " << tol_s.str() << "  (max abs err "
            << r.max_abs_err << ")\n";
  if (!out.empty()) {
    RunManifest man = manifest_for("fuse-check");
    man.seed = seed;
    man.config = {{"trials", trials}, {"tolerance", tol}, {"passed", r.passed},
                  {"max_abs_err", r.max_abs_err}};
    man.write(ensure_dir(out) / "manifest.json");
  }
  return r.passed == r.trials ? 0 : 3;
}

struct ParamsArgs {
  std::string variant = "light", out;
  std::size_t resample_kernel = 3, size = 128;
};

int run_params(const ParamsArgs& a) {
  ModelConfig cfg = parse_variant(a.variant) == Variant::full ? ModelConfig::full() : ModelConfig::light();
  cfg.resample_kernel = a.resample_kernel;
  cfg.validate();
  const Model m = Model::build(cfg, 0);
  const double reference = cfg.variant == Variant::full ? 27.91e6 : 1.16e6;
  const std::size_t total = m.count_params();
  std::ostringstream csv;
  csv << "module,params\n";
  std::cout << "variant " << to_string(cfg.variant) << " (C=" << cfg.base_channels << ", blocks "
            << cfg.blocks[0] << '/' << cfg.blocks[1] << '/' << cfg.blocks[2] << '/' << cfg.blocks[3]
            << ", refinement " << cfg.refinement << ", resample kernel " << cfg.resample_kernel << ")\n";
  for (const auto& mc : m.param_breakdown()) {
    std::cout << "  " << std::left << std::setw(14) << mc.module << std::right << std::setw(12)
              << mc.params << "  " << std::fixed << std::setprecision(1)
              << 100.0 * mc.params / total << "%\n";
    csv << mc.module << ',' << mc.params << '\n';
  }
  csv << "total," << total << '\n';
  const double dev = 100.0 * (total - reference) / reference;
  std::cout << "  total " << total << "  reference " << std::setprecision(2) << reference / 1e6
            << "M  deviation " << std::showpos << std::setprecision(1) << dev << std::noshowpos
            << "%  (" << (std::abs(dev) <= 15 ? "within" : "outside") << " 15%)\n";
  std::cout << "  MACs at " << a.size << "x" << a.size << ": " << std::setprecision(3)
            << m.estimate_flops(a.size, a.size) / 1e9 << "G\n";
  if (!a.out.empty()) {
    const fs::path p(a.out);
    if (p.has_parent_path()) ensure_dir(p.parent_path());
    write_text(p, csv.str());
    RunManifest man = manifest_for("params");
    man.config = {{"model", json::parse(cfg.to_json())}, {"total", total}, {"reference", reference}};
    man.write(p.string() + ".manifest.json");
  }
  return 0;
}

struct SynthArgs {
  std::string out;
  std::size_t count = 20, val = 4, size = 64;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  if (a.count == 0 || a.val > a.count || a.size < 8) throw ConfigError("synth: need count >= val, size >= 8");
  const fs::path out = ensure_dir(a.out);
  const auto entries = write_synthetic_dataset(out, a.count, a.val, a.size, a.seed);
  RunManifest man = manifest_for("synth");
  man.seed = a.seed;
  man.config = {{"count", a.count}, {"val", a.val}, {"size", a.size}};
  man.write(out / "manifest.json");
  std::cout << "wrote " << entries.size() << " phantoms and " << (out / "manifest.tsv").string() << '\n';
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const StateError*>(&e))
    return 1;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return 2;
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  CLI::App app{"Restore-RWKV style image restoration: train, evaluate and probe"};
  app.set_version_flag("--version", std::string("rrwkv ") + RRWKV_VERSION);
  app.require_subcommand(1);

  TrainArgs train_a;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config and a data manifest");
  train_cmd->add_option("--config", train_a.config, "key = value run config")->required();
  train_cmd->add_option("--data", train_a.data, "data manifest (id, hq path, split)")->required();
  train_cmd->add_option("--out", train_a.out, "output directory")->required();

  EvalArgs eval_a;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM/RMSE of a checkpoint on one split");
  eval_cmd->add_option("--ckpt", eval_a.ckpt)->required();
  eval_cmd->add_option("--data", eval_a.data)->required();
  eval_cmd->add_option("--out", eval_a.out)->required();
  eval_cmd->add_option("--split", eval_a.split, "train, val or test")->capture_default_str();
  eval_cmd->add_option("--spec", eval_a.spec, "degradation applied to the references")->capture_default_str();
  eval_cmd->add_option("--seed", eval_a.seed, "base seed for noise degradations")->capture_default_str();
  eval_cmd->add_flag("--save-images", eval_a.save_images, "write restored PGMs");

  DegradeArgs deg_a;
  auto* deg_cmd = app.add_subcommand("degrade", "apply a degradation to every PGM in a directory");
  deg_cmd->add_option("--in", deg_a.in)->required();
  deg_cmd->add_option("--spec", deg_a.spec, "kspace:F, gaussian:SIGMA or poisson:DOSE")->capture_default_str();
  deg_cmd->add_option("--out", deg_a.out)->required();
  deg_cmd->add_option("--seed", deg_a.seed)->capture_default_str();

  ErfArgs erf_a;
  auto* erf_cmd = app.add_subcommand("erf", "effective receptive field maps");
  erf_cmd->add_option("--ckpt", erf_a.ckpt, "probe a trained restoration model");
  erf_cmd->add_option("--variant", erf_a.variant, "<attention>+<shift> probe model")->capture_default_str();
  erf_cmd->add_flag("--all", erf_a.all, "all nine attention/shift pairings");
  erf_cmd->add_option("--out", erf_a.out)->required();
  erf_cmd->add_option("--size", erf_a.size)->capture_default_str();
  erf_cmd->add_option("--samples", erf_a.samples)->capture_default_str();
  erf_cmd->add_option("--seed", erf_a.seed, "input images")->capture_default_str();
  erf_cmd->add_option("--probe-seed", erf_a.probe_seed, "probe model weights")->capture_default_str();
  erf_cmd->add_option("--threshold", erf_a.threshold)->capture_default_str();

  BenchOptions bench_o;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "WKV scan vs quadratic oracle timings");
  bench_cmd->add_option("--op", bench_o.op, "bi-wkv or uni-wkv")->capture_default_str();
  bench_cmd->add_option("--sizes", bench_o.sizes, "token counts")->delimiter(',');
  bench_cmd->add_option("--channels", bench_o.channels)->capture_default_str();
  bench_cmd->add_option("--repeats", bench_o.repeats)->capture_default_str();
  bench_cmd->add_option("--oracle-max", bench_o.oracle_max_tokens)->capture_default_str();
  bench_cmd->add_option("--out", bench_out, "CSV path; stdout when omitted");

  std::size_t fuse_trials = 100;
  std::uint64_t fuse_seed = 3;
  double fuse_tol = 1e-12;
  std::string fuse_out;
  auto* fuse_cmd = app.add_subcommand("fuse-check", "train-mode vs fused Omni-Shift agreement");
  fuse_cmd->add_option("--trials", fuse_trials)->capture_default_str();
  fuse_cmd->add_option("--seed", fuse_seed)->capture_default_str();
  fuse_cmd->add_option("--tol", fuse_tol)->capture_default_str();
  fuse_cmd->add_option("--out", fuse_out, "directory for the run manifest");

  ParamsArgs params_a;
  auto* params_cmd = app.add_subcommand("params", "parameter count per module");
  params_cmd->add_option("--variant", params_a.variant, "light or full")->capture_default_str();
  params_cmd->add_option("--resample-kernel", params_a.resample_kernel, "1 or 3")->capture_default_str();
  params_cmd->add_option("--size", params_a.size, "image side for the MAC estimate")->capture_default_str();
  params_cmd->add_option("--out", params_a.out, "CSV path");

  SynthArgs synth_a;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic phantom dataset and manifest");
  synth_cmd->add_option("--out", synth_a.out)->required();
  synth_cmd->add_option("--count", synth_a.count)->capture_default_str();
  synth_cmd->add_option("--val", synth_a.val, "trailing entries assigned to val")->capture_default_str();
  synth_cmd->add_option("--size", synth_a.size)->capture_default_str();
  synth_cmd->add_option("--seed", synth_a.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) return run_train(train_a);
    if (*eval_cmd) return run_eval(eval_a);
    if (*deg_cmd) return run_degrade(deg_a);
    if (*erf_cmd) return run_erf(erf_a);
    if (*bench_cmd) return run_bench(bench_o, bench_out);
    if (*fuse_cmd) return run_fuse_check(fuse_trials, fuse_seed, fuse_tol, fuse_out);
    if (*params_cmd) return run_params(params_a);
    if (*synth_cmd) return run_synth(synth_a);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 1;
}
