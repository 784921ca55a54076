// Command-line entry points: synthetic data generation, two-phase training,
// evaluation, frame interpolation, receptive-field analysis, and the
// window-size benchmark.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "vfi/attention.hpp"
#include "vfi/erf.hpp"
#include "vfi/io.hpp"
#include "vfi/metrics.hpp"
#include "vfi/model.hpp"
#include "vfi/synthdata.hpp"
#include "vfi/train.hpp"
#include "vfi/warp.hpp"

using namespace vfi;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string preset = "toy";
  std::string out_dir = "out";
  uint64_t seed = 1;
  std::string steps;  // "phase1,phase2"
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run-config JSON file");
  cmd->add_option("--preset", args.preset, "model preset: toy or paper")
      ->check(CLI::IsMember({"toy", "paper"}));
  cmd->add_option("--out-dir", args.out_dir, "directory for all outputs");
  cmd->add_option("--seed", args.seed, "global RNG seed");
  cmd->add_option("--steps", args.steps, "step budgets as phase1,phase2");
  cmd->add_option("--threads", args.threads, "worker threads (default: hardware)");
}

RunConfig make_run_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) {
    std::ifstream f(args.config_path);
    if (!f) throw IoError("cannot open config file " + args.config_path);
    std::stringstream ss;
    ss << f.rdbuf();
    cfg = RunConfig::from_json(ss.str());
  } else {
    cfg.model = ModelConfig::preset_by_name(args.preset);
  }
  cfg.out_dir = args.out_dir;
  cfg.seed = args.seed;
  if (!args.steps.empty()) {
    int p1 = 0, p2 = 0;
    if (std::sscanf(args.steps.c_str(), "%d,%d", &p1, &p2) != 2 || p1 < 0 || p2 < 0)
      throw UsageError("--steps expects 'phase1,phase2', got '" + args.steps + "'");
    cfg.steps_phase1 = p1;
    cfg.steps_phase2 = p2;
  }
  if (args.threads > 0) set_num_threads(args.threads);
  return cfg;
}

TensorF load_frame(const std::string& path) {
  Image8 img = read_png(path);
  std::vector<float> chw = from_image8(img);
  TensorF t({1, 3, img.h, img.w});
  std::copy(chw.begin(), chw.end(), t.data());
  return t;
}

int cmd_gen_data(const CommonArgs& args, int count, int size) {
  std::filesystem::create_directories(args.out_dir);
  write_corpus(args.out_dir, args.seed, count, size);
  std::printf("wrote %d triplets (size %d) to %s\n", count, size, args.out_dir.c_str());
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& corpus, const std::string& resume,
              const std::string& eval_corpus) {
  RunConfig cfg = make_run_config(args);
  if (!corpus.empty()) cfg.corpus_dir = corpus;
  if (!resume.empty()) cfg.resume = resume;
  if (cfg.corpus_dir.empty()) throw UsageError("train: --corpus is required");

  std::vector<FrameTriplet> data = load_corpus_triplets(cfg.corpus_dir);
  VfiModel<float> model(cfg.model, cfg.seed);
  std::printf("training: %zu triplets, %d+%d steps, %lld parameters\n", data.size(),
              cfg.steps_phase1, cfg.steps_phase2,
              static_cast<long long>(param_count(model.params())));
  auto t0 = std::chrono::steady_clock::now();
  TrainResult res = train_model(model, cfg, data, [&](int step, const LossReport<float>& rep) {
    if ((step + 1) % 100 == 0) {
      double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("step %5d  total %.5f  (%.1f s)\n", step + 1,
                  static_cast<double>(rep.total.item()), secs);
      std::fflush(stdout);
    }
  });
  std::printf("done: loss %.5f -> %.5f, checkpoint %s\n", res.first_total, res.last_total,
              res.checkpoint_path.c_str());

  if (!eval_corpus.empty()) {
    std::vector<FrameTriplet> ev = load_corpus_triplets(eval_corpus);
    std::vector<EvalRow> rows = evaluate_model(model, ev);
    std::fputs(eval_table(rows).c_str(), stdout);
    write_eval_csv(cfg.out_dir + "/eval.csv", rows);
  }
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& corpus) {
  if (checkpoint.empty() || corpus.empty())
    throw UsageError("eval: --checkpoint and --corpus are required");
  CheckpointHeader head = read_checkpoint_header(checkpoint);
  ModelConfig mc = ModelConfig::from_json(head.config_json);
  VfiModel<float> model(mc, 0);
  ParamMap<float> pm = model.params();
  load_checkpoint(checkpoint, pm);
  std::vector<FrameTriplet> data = load_corpus_triplets(corpus);
  std::vector<EvalRow> rows = evaluate_model(model, data);
  std::fputs(eval_table(rows).c_str(), stdout);
  std::filesystem::create_directories(args.out_dir);
  write_eval_csv(args.out_dir + "/eval.csv", rows);
  std::printf("wrote %s/eval.csv\n", args.out_dir.c_str());
  return 0;
}

int cmd_interpolate(const CommonArgs& args, const std::string& checkpoint,
                    const std::string& frame0, const std::string& frame1, int factor) {
  if (checkpoint.empty() || frame0.empty() || frame1.empty())
    throw UsageError("interpolate: --checkpoint, --frame0 and --frame1 are required");
  CheckpointHeader head = read_checkpoint_header(checkpoint);
  ModelConfig mc = ModelConfig::from_json(head.config_json);
  VfiModel<float> model(mc, 0);
  ParamMap<float> pm = model.params();
  load_checkpoint(checkpoint, pm);

  TensorF i0 = load_frame(frame0);
  TensorF i1 = load_frame(frame1);
  if (i0.shape() != i1.shape())
    throw InputError("frames differ in size: " + format_shape(i0.shape()) + " vs " +
                     format_shape(i1.shape()));
  NoGradGuard ng;
  std::vector<TensorF> frames = model.interpolate_recursive(i0, i1, factor);
  std::filesystem::create_directories(args.out_dir);
  int64_t h = i0.shape()[2], w = i0.shape()[3];
  for (size_t k = 0; k < frames.size(); ++k) {
    TensorF clamped = clamp01(frames[k]);
    char name[64];
    std::snprintf(name, sizeof(name), "/frame_%03d.png", static_cast<int>(k));
    write_png(args.out_dir + name, to_image8(clamped.values(), h, w));
  }
  std::printf("wrote %zu frames to %s\n", frames.size(), args.out_dir.c_str());
  return 0;
}

int cmd_erf(const CommonArgs& args, int window, int size, int samples, int seeds) {
  if (window % 4 != 0) throw ConfigError("erf: window must be divisible by 4");
  std::filesystem::create_directories(args.out_dir);
  const int width = 32, heads = 2;
  std::string csv = args.out_dir + "/erf_areas.csv";
  std::ofstream f(csv);
  f << "seed,wa_area,cswa_area\n";
  for (int s = 0; s < seeds; ++s) {
    Rng rng(args.seed + static_cast<uint64_t>(s) * 7919);
    auto wa_factory = [&](Rng& r) {
      auto blk = std::make_shared<AttentionParams<float>>();
      blk->init(width, window, heads, r, false);
      return std::function<TensorF(const TensorF&)>([blk, window](const TensorF& x) {
        return merge_windows(wa_forward(partition_windows(x, window), *blk));
      });
    };
    auto cswa_factory = [&](Rng& r) {
      auto blk = std::make_shared<CswaBlock<float>>();
      blk->init(width, window, heads, r);
      return std::function<TensorF(const TensorF&)>([blk, window](const TensorF& x) {
        WindowGrid<float> xg = partition_windows(x, window);
        WindowGrid<float> yg = partition_overlapping(downsample2x(x), window);
        return cswa_forward_map(xg, yg, *blk);
      });
    };
    ErfMap wa = compute_erf<float>(wa_factory, width, size, size, samples, rng);
    wa.block = "wa";
    wa.window = window;
    ErfMap cs = compute_erf<float>(cswa_factory, width, size, size, samples, rng);
    cs.block = "cswa";
    cs.window = window;
    if (s == 0) {
      write_erf_png(args.out_dir + "/erf_wa.png", wa);
      write_erf_png(args.out_dir + "/erf_cswa.png", cs);
    }
    char line[128];
    std::snprintf(line, sizeof(line), "%d,%lld,%lld", s,
                  static_cast<long long>(erf_area(wa)), static_cast<long long>(erf_area(cs)));
    f << line << "\n";
    std::printf("seed %d: wa area %lld, cswa area %lld\n", s,
                static_cast<long long>(erf_area(wa)), static_cast<long long>(erf_area(cs)));
  }
  std::printf("wrote %s and ERF maps under %s\n", csv.c_str(), args.out_dir.c_str());
  return 0;
}

int cmd_bench(const CommonArgs& args, const std::string& windows_csv, int size, bool with_train,
              const std::string& corpus) {
  std::vector<int> windows;
  {
    std::stringstream ss(windows_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) windows.push_back(std::stoi(tok));
  }
  for (int m : windows)
    if (m % 4 != 0)
      throw ConfigError("bench: window " + std::to_string(m) + " not divisible by 4");
  std::filesystem::create_directories(args.out_dir);
  std::string csv = args.out_dir + "/bench.csv";
  std::ofstream f(csv);
  f << "window,macs_measured,macs_formula,latency_ms,psnr\n";

  for (int m : windows) {
    if (size % m != 0 || size % 2 != 0)
      throw ConfigError("bench: size must be divisible by every window and by 2");
    const int width = 32, heads = 2;
    Rng rng(args.seed);
    CswaBlock<float> blk;
    blk.init(width, m, heads, rng);
    TensorF x = TensorF::randn({1, width, size, size}, rng);
    NoGradGuard ng;

    MacCounter::reset();
    MacCounter::enable(true);
    {
      WindowGrid<float> xg = partition_windows(x, m);
      WindowGrid<float> yg = partition_overlapping(downsample2x(x), m);
      cswa_forward_map(xg, yg, blk);
    }
    MacCounter::enable(false);
    int64_t measured = MacCounter::count();
    int64_t formula = attention_macs(1, width, size, size, m, heads, true);

    std::vector<double> times;
    for (int rep = 0; rep < 22; ++rep) {
      auto t0 = std::chrono::steady_clock::now();
      WindowGrid<float> xg = partition_windows(x, m);
      WindowGrid<float> yg = partition_overlapping(downsample2x(x), m);
      cswa_forward_map(xg, yg, blk);
      double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
      if (rep >= 2) times.push_back(ms);  // skip warmup
    }
    std::sort(times.begin(), times.end());
    double median = times[times.size() / 2];

    double quality = 0.0;
    if (with_train) {
      if (corpus.empty()) throw UsageError("bench --train requires --corpus");
      RunConfig rc = make_run_config(args);
      rc.model.window = m;
      rc.corpus_dir = corpus;
      rc.out_dir = args.out_dir + "/bench_m" + std::to_string(m);
      std::vector<FrameTriplet> data = load_corpus_triplets(rc.corpus_dir);
      std::vector<FrameTriplet> train_set(data.begin(), data.begin() + data.size() * 3 / 4);
      std::vector<FrameTriplet> eval_set(data.begin() + data.size() * 3 / 4, data.end());
      VfiModel<float> model(rc.model, rc.seed);
      train_model(model, rc, train_set);
      std::vector<EvalRow> rows = evaluate_model(model, eval_set);
      quality = rows[0].psnr_model;
    }

    char line[160];
    std::snprintf(line, sizeof(line), "%d,%lld,%lld,%.3f,%.3f", m,
                  static_cast<long long>(measured), static_cast<long long>(formula), median,
                  quality);
    f << line << "\n";
    std::printf("M=%-3d macs=%lld formula=%lld match=%s latency=%.3f ms%s\n", m,
                static_cast<long long>(measured), static_cast<long long>(formula),
                measured == formula ? "yes" : "NO", median,
                with_train ? (" psnr=" + std::to_string(quality)).c_str() : "");
  }
  std::printf("wrote %s\n", csv.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"window-attention video frame interpolation (training, evaluation, analysis)"};
  app.require_subcommand(1);

  CommonArgs common;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic triplet corpus");
  int gen_count = 512, gen_size = 64;
  add_common(gen, common);
  gen->add_option("--count", gen_count, "number of triplets");
  gen->add_option("--size", gen_size, "frame size (divisible by 16)");

  auto* train = app.add_subcommand("train", "two-phase training on a triplet corpus");
  std::string train_corpus, train_resume, train_eval;
  add_common(train, common);
  train->add_option("--corpus", train_corpus, "training corpus directory");
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_option("--eval-corpus", train_eval, "held-out corpus to evaluate after training");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  std::string eval_ckpt, eval_corpus;
  add_common(eval, common);
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint");
  eval->add_option("--corpus", eval_corpus, "corpus with ground truth");

  auto* interp = app.add_subcommand("interpolate", "synthesize frames between two images");
  std::string i_ckpt, i_f0, i_f1;
  int i_factor = 2;
  add_common(interp, common);
  interp->add_option("--checkpoint", i_ckpt, "model checkpoint");
  interp->add_option("--frame0", i_f0, "first frame (png)");
  interp->add_option("--frame1", i_f1, "second frame (png)");
  interp->add_option("--factor", i_factor, "power-of-two interpolation factor");

  auto* erf = app.add_subcommand("erf", "effective receptive field of WA vs CSWA");
  int erf_window = 8, erf_size = 32, erf_samples = 16, erf_seeds = 5;
  add_common(erf, common);
  erf->add_option("--window", erf_window, "attention window size");
  erf->add_option("--size", erf_size, "probe input size");
  erf->add_option("--samples", erf_samples, "random inputs per seed");
  erf->add_option("--erf-seeds", erf_seeds, "independent seeds");

  auto* bench = app.add_subcommand("bench", "attention cost across window sizes");
  std::string bench_windows = "4,8,12", bench_corpus;
  int bench_size = 48;
  bool bench_train = false;
  add_common(bench, common);
  bench->add_option("--windows", bench_windows, "comma-separated window sizes");
  bench->add_option("--size", bench_size, "benchmark feature-map size");
  bench->add_flag("--train", bench_train, "also train per window size and report PSNR");
  bench->add_option("--corpus", bench_corpus, "corpus for --train");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(common, gen_count, gen_size);
    if (train->parsed()) return cmd_train(common, train_corpus, train_resume, train_eval);
    if (eval->parsed()) return cmd_eval(common, eval_ckpt, eval_corpus);
    if (interp->parsed()) return cmd_interpolate(common, i_ckpt, i_f0, i_f1, i_factor);
    if (erf->parsed()) return cmd_erf(common, erf_window, erf_size, erf_samples, erf_seeds);
    if (bench->parsed())
      return cmd_bench(common, bench_windows, bench_size, bench_train, bench_corpus);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s: %s\n", error_category(e), e.what());
    return 1;
  }
  return 0;
}
