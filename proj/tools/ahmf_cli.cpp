// ahmf: command-line driver (degrade | train | infer | eval | gradcheck | params).
//
// Exit codes: 0 success, 1 runtime failure (including partial eval
// failures), 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ahmf/ahmf.hpp"

namespace fs = std::filesystem;
using namespace ahmf;

namespace {

constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// --- degrade -----------------------------------------------------------------

struct DegradeArgs {
  std::string in, out, kind = "bicubic";
  int scale = 4;
  double sigma = 5.0;
  std::uint64_t seed = 0;
};

int cmd_degrade(const DegradeArgs& a) {
  DegradationSpec spec;
  spec.kind = parse_degradation(a.kind);
  spec.scale = a.scale;
  spec.noise_sigma = a.sigma;
  spec.seed = a.seed;
  const Image img = read_pnm(a.in);
  if (img.channels != 1) throw FormatError(a.in + ": depth must be a grayscale PGM");
  const Tensorf lr = degrade(image_to_tensor(img, img.maxval), spec);
  ensure_parent(a.out);
  save_depth(a.out, lr, img.maxval);
  std::cout << "degrade " << spec.str() << ": " << img.width << "x" << img.height
            << " -> " << lr.shape().w << "x" << lr.shape().h << " " << a.out << "\n";
  return 0;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string manifest, ckpt_dir, loss = "l1", ablation = "full", kind = "bicubic";
  int scale = 4, m = 4, n = 64;
  int epochs = 1, steps_per_epoch = 1000, batch = 32, patch = 256;
  int halve_every = 100, checkpoint_every = 1;
  double lr = 2e-4, sigma = 5.0;
  std::uint64_t seed = 0;
  bool unshared_gru = false;
};

int cmd_train(const TrainArgs& a) {
  ModelConfig cfg;
  cfg.scale = a.scale;
  cfg.depth = a.m;
  cfg.width = a.n;
  cfg.gru_shared = !a.unshared_gru;
  cfg = with_ablation(cfg, a.ablation);

  TrainConfig tcfg;
  tcfg.lr0 = a.lr;
  tcfg.halve_every = a.halve_every;
  tcfg.epochs = a.epochs;
  tcfg.steps_per_epoch = a.steps_per_epoch;
  tcfg.batch = a.batch;
  tcfg.patch = a.patch;
  tcfg.seed = a.seed;
  tcfg.checkpoint_every = a.checkpoint_every;
  tcfg.loss = parse_loss(a.loss);
  tcfg.checkpoint_dir = a.ckpt_dir;
  tcfg.validate();

  const auto entries = read_manifest(a.manifest);
  if (entries.empty()) throw std::runtime_error(a.manifest + ": manifest is empty");
  std::vector<HrPair> pairs;
  for (const auto& e : entries) {
    pairs.push_back(load_pair(e.guidance_path, e.depth_path, cfg.scale, e.max_value));
  }
  cfg.guidance_channels = pairs.front().guidance.shape().c;

  DegradationSpec spec;
  spec.kind = parse_degradation(a.kind);
  spec.scale = cfg.scale;
  spec.noise_sigma = a.sigma;

  Rng root(a.seed);
  const std::uint64_t model_seed = root.next_u64();
  const std::uint64_t data_seed = root.next_u64();
  auto model = AhmfModel<float>::build(cfg, model_seed);
  PatchSampler sampler(std::move(pairs), tcfg.patch, tcfg.batch, spec, data_seed);

  fs::create_directories(a.ckpt_dir);
  const std::string log_path = (fs::path(a.ckpt_dir) / "train.log").string();
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error(log_path + ": cannot open for writing");
  std::cout << "train " << ablation_name(cfg) << " scale=" << cfg.scale
            << " m=" << cfg.depth << " n=" << cfg.width
            << " params=" << model.parameters().scalar_count()
            << " data=" << entries.size() << " images, " << spec.str() << "\n";

  const TrainResult result =
      train(model, [&] { return sampler.next(); }, tcfg, &log);
  log.flush();
  if (result.aborted) {
    std::cerr << "error: " << result.abort_reason << "\n";
    return 1;
  }
  if (!result.losses.empty()) {
    std::printf("steps=%zu final_loss=%.6g\n", result.losses.size(), result.losses.back());
  }
  for (const auto& p : result.checkpoints) std::cout << "wrote " << p << "\n";
  std::cout << "log " << log_path << "\n";
  return 0;
}

// --- infer -------------------------------------------------------------------

struct InferArgs {
  std::string ckpt, guidance, lr_depth, out;
};

int cmd_infer(const InferArgs& a) {
  const auto model = model_from_checkpoint<float>(read_checkpoint(a.ckpt));
  const int scale = model.config().scale;
  const Image g = read_pnm(a.guidance);
  const Image d = read_pnm(a.lr_depth);
  if (d.channels != 1) throw FormatError(a.lr_depth + ": depth must be a grayscale PGM");
  if (g.width != d.width * scale || g.height != d.height * scale) {
    throw ShapeError("infer: guidance " + std::to_string(g.width) + "x" +
                     std::to_string(g.height) + " is not " + std::to_string(scale) +
                     " x depth " + std::to_string(d.width) + "x" +
                     std::to_string(d.height) + " (checkpoint scale " +
                     std::to_string(scale) + ")");
  }
  Tensorf pred;
  {
    NoGradGuard no_grad;
    pred = model.forward(image_to_tensor(d, d.maxval), image_to_tensor(g, g.maxval));
  }
  const Gray8 q = quantize8(pred);
  Image out{q.width, q.height, 1, 255, {}};
  out.samples.assign(q.pixels.begin(), q.pixels.end());
  ensure_parent(a.out);
  write_pnm(a.out, out);
  std::cout << "infer " << d.width << "x" << d.height << " -> " << q.width << "x"
            << q.height << " " << a.out << "\n";
  return 0;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, manifest, kinds = "bicubic", scales, report, out_dir;
  double sigma = 5.0;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  const auto model = model_from_checkpoint<float>(read_checkpoint(a.ckpt));
  const auto entries = read_manifest(a.manifest);
  std::vector<int> scales;
  if (a.scales.empty()) {
    scales.push_back(model.config().scale);
  } else {
    for (const auto& s : split_list(a.scales)) scales.push_back(std::stoi(s));
  }
  std::vector<DegradationSpec> specs;
  for (int scale : scales) {
    for (const auto& k : split_list(a.kinds)) {
      DegradationSpec spec;
      spec.kind = parse_degradation(k);
      spec.scale = scale;
      spec.noise_sigma = a.sigma;
      spec.seed = a.seed;
      specs.push_back(spec);
    }
  }
  if (specs.empty()) throw UsageError("eval: --kinds is empty");
  const std::string out_dir =
      a.out_dir.empty() ? fs::path(a.report).parent_path().string() : a.out_dir;
  const EvalReport report = benchmark(model, entries, specs, out_dir.empty() ? "." : out_dir);
  ensure_parent(a.report);
  {
    std::ofstream tsv(a.report);
    if (!tsv) throw std::runtime_error(a.report + ": cannot open for writing");
    report.write_tsv(tsv);
  }
  report.render_table(std::cout);
  std::cout << "report " << a.report << "\n";
  return report.failures.empty() ? 0 : 1;
}

// --- gradcheck ---------------------------------------------------------------

struct GradArgs {
  std::uint64_t seed = 0;
  int seeds = 20;
  std::string ops = "all";
};

int cmd_gradcheck(const GradArgs& a) {
  std::vector<std::string> names;
  const auto all = gradcheck_names();
  if (a.ops == "all") {
    names = all;
  } else {
    for (const auto& n : split_list(a.ops)) {
      if (std::find(all.begin(), all.end(), n) == all.end()) {
        std::string known;
        for (const auto& k : all) known += " " + k;
        throw UsageError("gradcheck: unknown op '" + n + "'; known:" + known);
      }
      names.push_back(n);
    }
  }
  if (a.seeds < 1) throw UsageError("gradcheck: --seeds must be >= 1");
  int failed = 0;
  std::printf("%-24s %5s %11s %9s %13s %13s  %s\n", "check", "seeds", "max_error",
              "tolerance", "refined", "skipped", "result");
  for (const auto& name : names) {
    double worst = 0;
    double tol = 0;
    std::string where;
    bool ok = true;
    std::size_t coords = 0, refined = 0, skipped = 0;
    for (int s = 0; s < a.seeds; ++s) {
      const auto r = run_gradcheck(name, a.seed + static_cast<std::uint64_t>(s));
      tol = r.tolerance;
      coords += r.coordinates + r.skipped;
      refined += r.refined;
      skipped += r.skipped;
      if (!r.passed()) ok = false;
      if (!(r.error <= worst)) {
        worst = r.error;
        where = r.worst + " seed " + std::to_string(r.seed);
      }
    }
    if (!ok) ++failed;
    const std::string total = "/" + std::to_string(coords);
    std::printf("%-24s %5d %11.3e %9.1e %13s %13s  %s%s\n", name.c_str(), a.seeds, worst,
                tol, (std::to_string(refined) + total).c_str(),
                (std::to_string(skipped) + total).c_str(), ok ? "PASS" : "FAIL",
                ok ? "" : ("  (" + where + ")").c_str());
  }
  std::printf("%d of %zu checks failed\n", failed, names.size());
  return failed == 0 ? 0 : 1;
}

// --- params ------------------------------------------------------------------

struct ParamsArgs {
  int scale = 4, m = 4, n = 64;
  std::string ablation = "full";
};

int cmd_params(const ParamsArgs& a) {
  ModelConfig cfg;
  cfg.scale = a.scale;
  cfg.depth = a.m;
  cfg.width = a.n;
  cfg = with_ablation(cfg, a.ablation);
  const std::size_t count = count_params(cfg);
  std::printf("scale=%d m=%d n=%d %s: %zu parameters (%.3fM)\n", cfg.scale, cfg.depth,
              cfg.width, ablation_name(cfg).c_str(), count, count / 1e6);
  double ref = 0;
  if (cfg.depth == 4 && cfg.width == 64 && a.ablation == "full") {
    ref = cfg.scale == 4 ? 2.54 : cfg.scale == 8 ? 3.36 : cfg.scale == 16 ? 5.75 : 0;
  }
  if (ref > 0) {
    std::printf("published: %.2fM, ratio %.3f\n", ref, count / (ref * 1e6));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();
  CLI::App app{"AHMF guided depth super-resolution"};
  app.require_subcommand(1);

  DegradeArgs da;
  auto* degrade_cmd = app.add_subcommand("degrade", "Synthesize a low-resolution depth map");
  degrade_cmd->add_option("--in", da.in, "High-resolution depth PGM")->required()->check(CLI::ExistingFile);
  degrade_cmd->add_option("--out", da.out, "Output PGM")->required();
  degrade_cmd->add_option("--scale", da.scale, "Downscaling factor")->check(CLI::PositiveNumber);
  degrade_cmd->add_option("--kind", da.kind, "bicubic | direct | tof_like");
  degrade_cmd->add_option("--sigma", da.sigma, "tof_like noise sigma in 8-bit units")->check(CLI::NonNegativeNumber);
  degrade_cmd->add_option("--seed", da.seed, "Noise seed");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a manifest");
  train_cmd->add_option("--manifest", ta.manifest, "Training manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--ckpt-dir", ta.ckpt_dir, "Checkpoint and log directory")->required();
  train_cmd->add_option("--scale", ta.scale, "Upscaling factor (4, 8, 16)");
  train_cmd->add_option("--m", ta.m, "Number of fusion levels")->check(CLI::PositiveNumber);
  train_cmd->add_option("--n", ta.n, "Feature channels")->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", ta.epochs, "Epochs (0 writes the initial model)")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--steps-per-epoch", ta.steps_per_epoch, "Batches per epoch")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", ta.batch, "Batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--patch", ta.patch, "High-resolution patch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", ta.lr, "Initial learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--halve-every", ta.halve_every, "Epochs between lr halvings")->check(CLI::PositiveNumber);
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Epochs between checkpoints (0: final only)")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--loss", ta.loss, "l1 | l2");
  train_cmd->add_option("--ablation", ta.ablation, "full | add | concat | no-bhfc | fwd-only | bwd-only");
  train_cmd->add_option("--kind", ta.kind, "Training degradation: bicubic | direct | tof_like");
  train_cmd->add_option("--sigma", ta.sigma, "tof_like noise sigma")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--seed", ta.seed, "Seed for initialization and sampling");
  train_cmd->add_flag("--unshared-gru", ta.unshared_gru, "One GRU cell per level");

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "Super-resolve one depth map");
  infer_cmd->add_option("--ckpt", ia.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--guidance", ia.guidance, "High-resolution guidance PPM/PGM")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--lr-depth", ia.lr_depth, "Low-resolution depth PGM")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--out", ia.out, "Output 8-bit PGM")->required();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Benchmark a checkpoint");
  eval_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", ea.manifest, "Test manifest")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--report", ea.report, "Output TSV report")->required();
  eval_cmd->add_option("--kinds", ea.kinds, "Comma-separated degradations");
  eval_cmd->add_option("--scales", ea.scales, "Comma-separated scales (default: checkpoint scale)");
  eval_cmd->add_option("--out-dir", ea.out_dir, "Prediction directory (default: next to the report)");
  eval_cmd->add_option("--sigma", ea.sigma, "tof_like noise sigma")->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("--seed", ea.seed, "tof_like noise seed");

  GradArgs ga;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad_cmd->add_option("--seed", ga.seed, "First seed");
  grad_cmd->add_option("--seeds", ga.seeds, "Number of seeds per check");
  grad_cmd->add_option("--ops", ga.ops, "all, or comma-separated check names");

  ParamsArgs pa;
  auto* params_cmd = app.add_subcommand("params", "Print the parameter count");
  params_cmd->add_option("--scale", pa.scale, "Upscaling factor");
  params_cmd->add_option("--m", pa.m, "Number of fusion levels")->check(CLI::PositiveNumber);
  params_cmd->add_option("--n", pa.n, "Feature channels")->check(CLI::PositiveNumber);
  params_cmd->add_option("--ablation", pa.ablation, "Ablation variant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*degrade_cmd) return cmd_degrade(da);
    if (*train_cmd) return cmd_train(ta);
    if (*infer_cmd) return cmd_infer(ia);
    if (*eval_cmd) return cmd_eval(ea);
    if (*grad_cmd) return cmd_gradcheck(ga);
    if (*params_cmd) return cmd_params(pa);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ManifestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}
