#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vfi/model.hpp"
#include "vfi/synthdata.hpp"

namespace vfi {

// Full run description: model config + paths + budgets. Mirrors the JSON
// config file one-to-one; unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  std::string corpus_dir;
  std::string out_dir = ".";
  std::string resume;  // checkpoint path to resume from (optional)
  uint64_t seed = 1;
  int steps_phase1 = 500;
  int steps_phase2 = 1500;
  int checkpoint_every = 500;
  int eval_every = 0;  // 0: only after training

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
};

struct TrainResult {
  double first_total = 0.0;
  double last_total = 0.0;
  int steps_run = 0;
  std::string checkpoint_path;
  std::string csv_path;
};

std::vector<FrameTriplet> load_corpus_triplets(const std::string& dir);

// One augmented training sample (random crop, flips, time reversal).
struct BatchSample {
  std::vector<float> i0, it, i1, f0, f1;
  int64_t size = 0;
};
BatchSample augment_sample(const FrameTriplet& t, int64_t crop, Rng& rng);

// Two-phase training: phase 1 fits the flow path on the distillation loss,
// phase 2 trains end-to-end on the weighted objective. Deterministic given
// cfg.seed (per-step RNG substreams, fixed data order). Writes loss.csv and
// periodic checkpoints under cfg.out_dir. Resumes from cfg.resume if set
// (config digest must match).
TrainResult train_model(VfiModel<float>& model, const RunConfig& cfg,
                        const std::vector<FrameTriplet>& corpus,
                        const std::function<void(int, const LossReport<float>&)>& on_step = {});

struct EvalRow {
  std::string name;  // "overall" or a motion level
  int count = 0;
  double psnr_model = 0, ssim_model = 0, ie_model = 0;
  double psnr_overlay = 0, ssim_overlay = 0, ie_overlay = 0;
  double epe = 0;  // mean endpoint error of predicted vs true flows
};

// per-level and overall metrics for the model and the overlay baseline
std::vector<EvalRow> evaluate_model(VfiModel<float>& model,
                                    const std::vector<FrameTriplet>& corpus);

std::string eval_table(const std::vector<EvalRow>& rows);
void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows);

// convenience: [1,3,S,S] tensor from a CHW float frame
TensorF frame_tensor(const std::vector<float>& chw, int64_t size);

}  // namespace vfi
