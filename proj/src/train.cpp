#include "vfi/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vfi/io.hpp"
#include "vfi/metrics.hpp"
#include "vfi/warp.hpp"

namespace vfi {

std::string RunConfig::to_json() const {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(model.to_json());
  j["corpus_dir"] = corpus_dir;
  j["out_dir"] = out_dir;
  j["resume"] = resume;
  j["seed"] = seed;
  j["steps_phase1"] = steps_phase1;
  j["steps_phase2"] = steps_phase2;
  j["checkpoint_every"] = checkpoint_every;
  j["eval_every"] = eval_every;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("run config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "model") c.model = ModelConfig::from_json(it->dump());
      else if (k == "corpus_dir") c.corpus_dir = it->get<std::string>();
      else if (k == "out_dir") c.out_dir = it->get<std::string>();
      else if (k == "resume") c.resume = it->get<std::string>();
      else if (k == "seed") c.seed = it->get<uint64_t>();
      else if (k == "steps_phase1") c.steps_phase1 = it->get<int>();
      else if (k == "steps_phase2") c.steps_phase2 = it->get<int>();
      else if (k == "checkpoint_every") c.checkpoint_every = it->get<int>();
      else if (k == "eval_every") c.eval_every = it->get<int>();
      else throw ConfigError("run config: unknown key '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("run config: bad value for '" + k + "': " + e.what());
    }
  }
  if (c.steps_phase1 < 0 || c.steps_phase2 < 0)
    throw ConfigError("run config: negative step budget");
  return c;
}

std::vector<FrameTriplet> load_corpus_triplets(const std::string& dir) {
  std::vector<FrameTriplet> out;
  for (const std::string& path : list_corpus(dir)) out.push_back(read_triplet(path));
  return out;
}

namespace {

void flip_x(std::vector<float>& buf, int64_t c, int64_t s) {
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < s; ++y) {
      float* row = buf.data() + (ch * s + y) * s;
      for (int64_t x = 0; x < s / 2; ++x) std::swap(row[x], row[s - 1 - x]);
    }
}

void flip_y(std::vector<float>& buf, int64_t c, int64_t s) {
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < s / 2; ++y) {
      float* a = buf.data() + (ch * s + y) * s;
      float* b = buf.data() + (ch * s + (s - 1 - y)) * s;
      for (int64_t x = 0; x < s; ++x) std::swap(a[x], b[x]);
    }
}

void negate_plane(std::vector<float>& buf, int64_t plane, int64_t s) {
  float* p = buf.data() + plane * s * s;
  for (int64_t i = 0; i < s * s; ++i) p[i] = -p[i];
}

std::vector<float> crop_chw(const std::vector<float>& buf, int64_t c, int64_t s, int64_t y0,
                            int64_t x0, int64_t cs) {
  std::vector<float> out(static_cast<size_t>(c * cs * cs));
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < cs; ++y)
      for (int64_t x = 0; x < cs; ++x)
        out[static_cast<size_t>((ch * cs + y) * cs + x)] =
            buf[static_cast<size_t>((ch * s + y0 + y) * s + x0 + x)];
  return out;
}

}  // namespace

BatchSample augment_sample(const FrameTriplet& t, int64_t crop, Rng& rng) {
  if (crop > t.size) throw ConfigError("crop larger than the corpus frames");
  BatchSample b;
  b.size = crop;
  int64_t y0 = 0, x0 = 0;
  if (crop < t.size) {
    y0 = rng.randint(0, t.size - crop + 1);
    x0 = rng.randint(0, t.size - crop + 1);
  }
  b.i0 = crop_chw(t.i0, 3, t.size, y0, x0, crop);
  b.it = crop_chw(t.it, 3, t.size, y0, x0, crop);
  b.i1 = crop_chw(t.i1, 3, t.size, y0, x0, crop);
  b.f0 = crop_chw(t.flow_t0, 2, t.size, y0, x0, crop);
  b.f1 = crop_chw(t.flow_t1, 2, t.size, y0, x0, crop);

  if (rng.uniform() < 0.5) {  // horizontal flip: u changes sign
    for (auto* v : {&b.i0, &b.it, &b.i1}) flip_x(*v, 3, crop);
    for (auto* v : {&b.f0, &b.f1}) {
      flip_x(*v, 2, crop);
      negate_plane(*v, 0, crop);
    }
  }
  if (rng.uniform() < 0.5) {  // vertical flip: v changes sign
    for (auto* v : {&b.i0, &b.it, &b.i1}) flip_y(*v, 3, crop);
    for (auto* v : {&b.f0, &b.f1}) {
      flip_y(*v, 2, crop);
      negate_plane(*v, 1, crop);
    }
  }
  if (rng.uniform() < 0.5) {  // time reversal: swap frames and the flow pair
    std::swap(b.i0, b.i1);
    std::swap(b.f0, b.f1);
  }
  return b;
}

TensorF frame_tensor(const std::vector<float>& chw, int64_t size) {
  int64_t c = static_cast<int64_t>(chw.size()) / (size * size);
  TensorF t({1, c, size, size});
  std::copy(chw.begin(), chw.end(), t.data());
  return t;
}

namespace {

TensorF stack_batch(const std::vector<const std::vector<float>*>& items, int64_t c, int64_t s) {
  TensorF t({static_cast<int64_t>(items.size()), c, s, s});
  float* p = t.data();
  for (const auto* item : items) {
    std::copy(item->begin(), item->end(), p);
    p += item->size();
  }
  return t;
}

std::string config_diff(const std::string& json_a, const std::string& json_b) {
  nlohmann::json a = nlohmann::json::parse(json_a, nullptr, false);
  nlohmann::json b = nlohmann::json::parse(json_b, nullptr, false);
  if (a.is_discarded() || b.is_discarded()) return "(unparseable config)";
  std::ostringstream os;
  for (auto it = a.begin(); it != a.end(); ++it) {
    if (!b.contains(it.key()))
      os << "  " << it.key() << ": checkpoint=" << it->dump() << " run=(missing)\n";
    else if (b[it.key()] != *it)
      os << "  " << it.key() << ": checkpoint=" << it->dump() << " run=" << b[it.key()].dump()
         << "\n";
  }
  for (auto it = b.begin(); it != b.end(); ++it)
    if (!a.contains(it.key()))
      os << "  " << it.key() << ": checkpoint=(missing) run=" << it->dump() << "\n";
  return os.str();
}

uint64_t step_seed(uint64_t base, int step) {
  uint64_t x = base + 0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(step + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace

TrainResult train_model(VfiModel<float>& model, const RunConfig& cfg,
                        const std::vector<FrameTriplet>& corpus,
                        const std::function<void(int, const LossReport<float>&)>& on_step) {
  if (corpus.empty()) throw IoError("training corpus is empty");
  std::filesystem::create_directories(cfg.out_dir);
  const ModelConfig& mc = model.cfg;
  const int total_steps = cfg.steps_phase1 + cfg.steps_phase2;

  int start_step = 0;
  ParamMap<float> all_params = model.params();
  if (!cfg.resume.empty()) {
    CheckpointHeader head = read_checkpoint_header(cfg.resume);
    if (head.digest != mc.digest())
      throw ConfigError("resume refused: config digest mismatch\n" +
                        config_diff(head.config_json, mc.to_json()));
    head = load_checkpoint(cfg.resume, all_params);
    start_step = static_cast<int>(head.global_step);
  }

  AdamWOptions opt;
  opt.beta1 = mc.beta1;
  opt.beta2 = mc.beta2;
  opt.eps = mc.adam_eps;
  opt.weight_decay = mc.weight_decay;

  std::vector<Parameter<float>*> phase1_params = values(model.trainable_flow_phase_params());
  std::vector<Parameter<float>*> phase2_params = values(model.trainable_params());

  TrainResult result;
  result.csv_path = cfg.out_dir + "/loss.csv";
  result.checkpoint_path = cfg.out_dir + "/model.ckpt";

  char line[256];
  for (int step = start_step; step < total_steps; ++step) {
    const bool phase1 = step < cfg.steps_phase1;
    Rng rng(step_seed(cfg.seed, step));

    // the flow-only phase uses twice the batch (mirroring the paper's
    // 48-then-24 schedule); its steps are much cheaper
    const int batch = phase1 ? 2 * mc.batch : mc.batch;
    std::vector<BatchSample> samples;
    samples.reserve(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      int64_t idx = rng.randint(0, static_cast<int64_t>(corpus.size()));
      samples.push_back(augment_sample(corpus[static_cast<size_t>(idx)], mc.crop, rng));
    }
    std::vector<const std::vector<float>*> v0, vt, v1, vf0, vf1;
    for (auto& s : samples) {
      v0.push_back(&s.i0);
      vt.push_back(&s.it);
      v1.push_back(&s.i1);
      vf0.push_back(&s.f0);
      vf1.push_back(&s.f1);
    }
    TensorF i0 = stack_batch(v0, 3, mc.crop);
    TensorF i1 = stack_batch(v1, 3, mc.crop);
    TensorF gt = stack_batch(vt, 3, mc.crop);
    TensorF tf0 = stack_batch(vf0, 2, mc.crop);
    TensorF tf1 = stack_batch(vf1, 2, mc.crop);

    Tape<float>::get().clear();
    LossReport<float> rep;
    if (phase1) {
      auto flows = model.estimate_flow(i0, i1);
      Tensor<float> dis = distill_loss<float>(flows, {tf0, tf1});
      rep.rec = TensorF::scalar(0.f);
      rep.census = TensorF::scalar(0.f);
      rep.distill = dis;
      rep.total = dis;
    } else {
      auto fwd = model.forward(i0, i1);
      rep = total_loss(recon_loss(fwd.out.frame, gt),
                       census_loss(fwd.out.frame, gt, mc.census()),
                       distill_loss<float>(fwd.flows, {tf0, tf1}), mc.lambda_rec,
                       mc.lambda_css, mc.lambda_dis);
    }
    if (step == start_step) result.first_total = rep.total.item();
    result.last_total = rep.total.item();

    backward(rep.total);

    double lr = mc.lr;
    if (!phase1 && mc.cosine_decay && cfg.steps_phase2 > 0) {
      double progress =
          static_cast<double>(step - cfg.steps_phase1) / static_cast<double>(cfg.steps_phase2);
      lr = mc.lr * (0.55 + 0.45 * std::cos(3.14159265358979323846 * progress));
    }
    opt.lr = lr;
    adamw_step(phase1 ? phase1_params : phase2_params, opt);

    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g", step,
                  static_cast<double>(rep.rec.item()), static_cast<double>(rep.census.item()),
                  static_cast<double>(rep.distill.item()),
                  static_cast<double>(rep.total.item()));
    append_csv_line(result.csv_path, line, "step,rec,census,distill,total");

    if (on_step) on_step(step, rep);

    bool last = (step + 1 == total_steps);
    if (last || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)) {
      save_checkpoint(result.checkpoint_path, all_params, mc.digest(), mc.to_json(), step + 1);
      if (!last) {
        char name[64];
        std::snprintf(name, sizeof(name), "/ckpt_%06d.bin", step + 1);
        save_checkpoint(cfg.out_dir + name, all_params, mc.digest(), mc.to_json(), step + 1);
      }
    }
    result.steps_run = step + 1 - start_step;
  }
  return result;
}

std::vector<EvalRow> evaluate_model(VfiModel<float>& model,
                                    const std::vector<FrameTriplet>& corpus) {
  if (corpus.empty()) throw IoError("evaluation corpus is empty");
  NoGradGuard ng;
  std::vector<EvalRow> rows(static_cast<size_t>(kNumLevels) + 1);
  rows[0].name = "overall";
  for (int i = 0; i < kNumLevels; ++i)
    rows[static_cast<size_t>(i) + 1].name = level_name(static_cast<MotionLevel>(i));

  for (const FrameTriplet& t : corpus) {
    int64_t S = t.size;
    TensorF i0 = frame_tensor(t.i0, S);
    TensorF i1 = frame_tensor(t.i1, S);
    FlowPyramid<float> pyr;
    auto fwd = model.forward(i0, i1);
    TensorF frame = clamp01(fwd.out.frame);
    std::vector<float> pred(frame.values());

    std::vector<float> overlay(t.i0.size());
    for (size_t i = 0; i < overlay.size(); ++i) overlay[i] = 0.5f * (t.i0[i] + t.i1[i]);

    std::vector<float> ef0(fwd.flows.first.values());
    std::vector<float> ef1(fwd.flows.second.values());
    double epe = 0.5 * (flow_epe(ef0, t.flow_t0, S, S) + flow_epe(ef1, t.flow_t1, S, S));

    EvalRow sample;
    sample.count = 1;
    sample.psnr_model = psnr(pred, t.it);
    sample.ssim_model = ssim(pred, t.it, 3, S, S);
    sample.ie_model = interp_error(pred, t.it);
    sample.psnr_overlay = psnr(overlay, t.it);
    sample.ssim_overlay = ssim(overlay, t.it, 3, S, S);
    sample.ie_overlay = interp_error(overlay, t.it);
    sample.epe = epe;

    for (EvalRow* row : {&rows[0], &rows[static_cast<size_t>(t.level) + 1]}) {
      row->count += sample.count;
      row->psnr_model += sample.psnr_model;
      row->ssim_model += sample.ssim_model;
      row->ie_model += sample.ie_model;
      row->psnr_overlay += sample.psnr_overlay;
      row->ssim_overlay += sample.ssim_overlay;
      row->ie_overlay += sample.ie_overlay;
      row->epe += sample.epe;
    }
  }
  for (EvalRow& row : rows) {
    if (row.count == 0) continue;
    double n = static_cast<double>(row.count);
    row.psnr_model /= n;
    row.ssim_model /= n;
    row.ie_model /= n;
    row.psnr_overlay /= n;
    row.ssim_overlay /= n;
    row.ie_overlay /= n;
    row.epe /= n;
  }
  return rows;
}

std::string eval_table(const std::vector<EvalRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-9s %5s %28s %28s %8s\n", "level", "n",
                "model psnr/ssim/ie", "overlay psnr/ssim/ie", "epe");
  os << line;
  for (const EvalRow& r : rows) {
    if (r.count == 0) continue;
    std::snprintf(line, sizeof(line),
                  "%-9s %5d %12.2f/%.4f/%6.2f %12.2f/%.4f/%6.2f %8.3f\n", r.name.c_str(),
                  r.count, r.psnr_model, r.ssim_model, r.ie_model, r.psnr_overlay,
                  r.ssim_overlay, r.ie_overlay, r.epe);
    os << line;
  }
  return os.str();
}

void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("eval: cannot open " + path);
  f << "level,count,psnr,ssim,ie,overlay_psnr,overlay_ssim,overlay_ie,epe\n";
  char line[256];
  for (const EvalRow& r : rows) {
    if (r.count == 0) continue;
    std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f",
                  r.name.c_str(), r.count, r.psnr_model, r.ssim_model, r.ie_model,
                  r.psnr_overlay, r.ssim_overlay, r.ie_overlay, r.epe);
    f << line << "\n";
  }
}

}  // namespace vfi
