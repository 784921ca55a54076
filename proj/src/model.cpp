#include "vfi/model.hpp"

#include <cmath>

#include "json.hpp"
#include "vfi/io.hpp"
#include "vfi/warp.hpp"

namespace vfi {

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  c.window = 8;
  c.width = 180;
  c.tfls = {2, 6, 6, 6};
  c.enc_widths = {24, 48, 96, 192};
  c.heads = 6;
  c.lr = 1e-4;
  c.batch = 24;
  c.crop = 192;
  return c;
}

ModelConfig ModelConfig::preset_by_name(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "paper") return paper();
  throw ConfigError("unknown preset '" + name + "' (expected toy or paper)");
}

CensusConfig ModelConfig::census() const {
  CensusConfig c;
  c.patch = census_patch;
  c.binarize_eps = census_binarize_eps;
  c.rho_eps = census_rho_eps;
  c.charbonnier_alpha = census_charbonnier_alpha;
  c.charbonnier_eps = census_charbonnier_eps;
  return c;
}

void ModelConfig::validate() const {
  if (window < 4 || window % 4 != 0)
    throw ConfigError("window size must be a positive multiple of 4, got " +
                      std::to_string(window));
  if (width <= 0 || width % heads != 0)
    throw ConfigError("width " + std::to_string(width) + " must divide by head count " +
                      std::to_string(heads));
  for (int w : enc_widths)
    if (w <= 0) throw ConfigError("encoder widths must be positive");
  for (int n : tfls)
    if (n <= 0) throw ConfigError("TFL counts must be positive");
  if (crop % 16 != 0)
    throw ConfigError("crop size must be divisible by 16, got " + std::to_string(crop));
  if (batch < 1) throw ConfigError("batch size must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("mlp ratio must be >= 1");
  if (corr_radius != 1) throw ConfigError("correlation radius is fixed at 1");
  if (census_patch != 7) throw ConfigError("census patch is fixed at 7");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["preset"] = preset;
  j["window"] = window;
  j["width"] = width;
  j["tfls"] = tfls;
  j["enc_widths"] = enc_widths;
  j["heads"] = heads;
  j["mlp_ratio"] = mlp_ratio;
  j["use_cross"] = use_cross;
  j["lambda_rec"] = lambda_rec;
  j["lambda_css"] = lambda_css;
  j["lambda_dis"] = lambda_dis;
  j["lr"] = lr;
  j["batch"] = batch;
  j["crop"] = crop;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["weight_decay"] = weight_decay;
  j["cosine_decay"] = cosine_decay;
  j["leaky_slope"] = leaky_slope;
  j["mlp_activation"] = mlp_activation;
  j["conv_activation"] = conv_activation;
  j["census_patch"] = census_patch;
  j["census_binarize_eps"] = census_binarize_eps;
  j["census_rho_eps"] = census_rho_eps;
  j["census_charbonnier_alpha"] = census_charbonnier_alpha;
  j["census_charbonnier_eps"] = census_charbonnier_eps;
  j["corr_radius"] = corr_radius;
  j["corr_eps"] = corr_eps;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ModelConfig c;
  if (j.contains("preset")) c = preset_by_name(j["preset"].get<std::string>());
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "preset") continue;
      else if (k == "window") c.window = it->get<int>();
      else if (k == "width") c.width = it->get<int>();
      else if (k == "tfls") c.tfls = it->get<std::array<int, 4>>();
      else if (k == "enc_widths") c.enc_widths = it->get<std::array<int, 4>>();
      else if (k == "heads") c.heads = it->get<int>();
      else if (k == "mlp_ratio") c.mlp_ratio = it->get<int>();
      else if (k == "use_cross") c.use_cross = it->get<bool>();
      else if (k == "lambda_rec") c.lambda_rec = it->get<double>();
      else if (k == "lambda_css") c.lambda_css = it->get<double>();
      else if (k == "lambda_dis") c.lambda_dis = it->get<double>();
      else if (k == "lr") c.lr = it->get<double>();
      else if (k == "batch") c.batch = it->get<int>();
      else if (k == "crop") c.crop = it->get<int>();
      else if (k == "beta1") c.beta1 = it->get<double>();
      else if (k == "beta2") c.beta2 = it->get<double>();
      else if (k == "adam_eps") c.adam_eps = it->get<double>();
      else if (k == "weight_decay") c.weight_decay = it->get<double>();
      else if (k == "cosine_decay") c.cosine_decay = it->get<bool>();
      else if (k == "leaky_slope") c.leaky_slope = it->get<double>();
      else if (k == "mlp_activation") c.mlp_activation = it->get<std::string>();
      else if (k == "conv_activation") c.conv_activation = it->get<std::string>();
      else if (k == "census_patch") c.census_patch = it->get<int>();
      else if (k == "census_binarize_eps") c.census_binarize_eps = it->get<double>();
      else if (k == "census_rho_eps") c.census_rho_eps = it->get<double>();
      else if (k == "census_charbonnier_alpha") c.census_charbonnier_alpha = it->get<double>();
      else if (k == "census_charbonnier_eps") c.census_charbonnier_eps = it->get<double>();
      else if (k == "corr_radius") c.corr_radius = it->get<int>();
      else if (k == "corr_eps") c.corr_eps = it->get<double>();
      else throw ConfigError("config: unknown key '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: bad value for '" + k + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

uint64_t ModelConfig::digest() const { return fnv1a64(to_json()); }

// ---------------- encoder ----------------

template <typename T>
void Encoder<T>::init(const ModelConfig& cfg, Rng& rng) {
  leaky = static_cast<T>(cfg.leaky_slope);
  int in_c = 3;
  for (int i = 0; i < 4; ++i) {
    int w = cfg.enc_widths[static_cast<size_t>(i)];
    blocks[static_cast<size_t>(i)].c1.init(in_c, w, 3, 2, 1, rng);
    blocks[static_cast<size_t>(i)].c2.init(w, w, 3, 1, 1, rng);
    in_c = w;
  }
}

template <typename T>
std::vector<Tensor<T>> Encoder<T>::forward(const Tensor<T>& img) {
  if (img.ndim() != 4 || img.shape()[1] != 3)
    throw InputError("encode: expected [N,3,H,W] frames, got " + format_shape(img.shape()));
  if (img.shape()[2] % 16 != 0 || img.shape()[3] % 16 != 0)
    throw InputError("encode: spatial extents must be divisible by 16, got " +
                     format_shape(img.shape()));
  std::vector<Tensor<T>> levels;
  Tensor<T> z = img;
  for (auto& b : blocks) {
    z = leaky_relu(b.c2.forward(leaky_relu(b.c1.forward(z), leaky)), leaky);
    levels.push_back(z);
  }
  return levels;
}

template <typename T>
void Encoder<T>::collect(ParamMap<T>& out, const std::string& prefix) {
  for (size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].c1.collect(out, prefix + ".b" + std::to_string(i) + ".c1");
    blocks[i].c2.collect(out, prefix + ".b" + std::to_string(i) + ".c2");
  }
}

// ---------------- synthesis ----------------

template <typename T>
Tensor<T> synthesize(const Tensor<T>& mask, const Tensor<T>& residual, const Tensor<T>& warped0,
                     const Tensor<T>& warped1) {
  Tensor<T> inv = add_scalar(neg(mask), T(1));
  return add(add(mul(mask, warped0), mul(inv, warped1)), residual);
}

template <typename T>
void SynthesisNet<T>::init(const ModelConfig& cfg, Rng& rng) {
  leaky = static_cast<T>(cfg.leaky_slope);
  int w = cfg.width;
  tfbs[0].init(12, w, cfg.tfls[0], cfg.window, cfg.heads, cfg.mlp_ratio, rng, cfg.use_cross);
  for (int i = 1; i < 4; ++i) {
    int in_c = w + 2 * cfg.enc_widths[static_cast<size_t>(i - 1)];
    tfbs[static_cast<size_t>(i)].init(in_c, w, cfg.tfls[static_cast<size_t>(i)], cfg.window,
                                      cfg.heads, cfg.mlp_ratio, rng, cfg.use_cross);
  }
  for (auto& u : ups) u.init(w, w, 2, 2, rng);
  for (auto& m : merges) m.init(2 * w, w, 3, 1, 1, rng);
  head.init(w, 4, 3, 1, 1, rng);
}

template <typename T>
SynthesisOutput<T> SynthesisNet<T>::forward(const Tensor<T>& i0, const Tensor<T>& i1,
                                            const Tensor<T>& wi0, const Tensor<T>& wi1,
                                            const std::vector<Tensor<T>>& wf0,
                                            const std::vector<Tensor<T>>& wf1) {
  if (wf0.size() < 3 || wf1.size() < 3)
    throw DimError("synthesis: need warped features at 1/2, 1/4 and 1/8 scale");
  Tensor<T> t0 = tfbs[0].forward(concat<T>({i0, i1, wi0, wi1}, 1));
  Tensor<T> t1 = tfbs[1].forward(downsample2x(t0), wf0[0], wf1[0]);
  Tensor<T> t2 = tfbs[2].forward(downsample2x(t1), wf0[1], wf1[1]);
  Tensor<T> t3 = tfbs[3].forward(downsample2x(t2), wf0[2], wf1[2]);

  Tensor<T> d = leaky_relu(ups[0].forward(t3), leaky);
  d = leaky_relu(merges[0].forward(concat<T>({d, t2}, 1)), leaky);
  d = leaky_relu(ups[1].forward(d), leaky);
  d = leaky_relu(merges[1].forward(concat<T>({d, t1}, 1)), leaky);
  d = leaky_relu(ups[2].forward(d), leaky);
  d = leaky_relu(merges[2].forward(concat<T>({d, t0}, 1)), leaky);
  Tensor<T> o = head.forward(d);

  SynthesisOutput<T> out;
  out.mask = sigmoid(slice(o, 1, 0, 1));
  out.residual = slice(o, 1, 1, 3);
  out.warped0 = wi0;
  out.warped1 = wi1;
  out.frame = synthesize(out.mask, out.residual, wi0, wi1);
  return out;
}

template <typename T>
void SynthesisNet<T>::collect(ParamMap<T>& out, const std::string& prefix) {
  for (size_t i = 0; i < tfbs.size(); ++i)
    tfbs[i].collect(out, prefix + ".tfb" + std::to_string(i));
  for (size_t i = 0; i < ups.size(); ++i) {
    ups[i].collect(out, prefix + ".up" + std::to_string(i));
    merges[i].collect(out, prefix + ".merge" + std::to_string(i));
  }
  head.collect(out, prefix + ".head");
}

// ---------------- full model ----------------

template <typename T>
VfiModel<T>::VfiModel(const ModelConfig& cfg_, uint64_t seed) : cfg(cfg_) {
  cfg.validate();
  Rng rng(seed);
  enc.init(cfg, rng);
  flow.init(cfg.enc_widths, rng);
  for (auto& b : flow.blocks) b.corr_eps = cfg.corr_eps;
  synth.init(cfg, rng);
}

template <typename T>
ParamMap<T> VfiModel<T>::params() {
  ParamMap<T> out;
  enc.collect(out, "enc");
  flow.collect(out, "flow");
  synth.collect(out, "synth");
  return out;
}

template <typename T>
ParamMap<T> VfiModel<T>::flow_phase_params() {
  ParamMap<T> out;
  enc.collect(out, "enc");
  flow.collect(out, "flow");
  return out;
}

namespace {

template <typename T>
ParamMap<T> drop_prefixes(ParamMap<T> in, std::initializer_list<const char*> prefixes) {
  ParamMap<T> out;
  for (auto& kv : in) {
    bool dropped = false;
    for (const char* p : prefixes)
      if (kv.first.rfind(p, 0) == 0) dropped = true;
    if (!dropped) out.push_back(kv);
  }
  return out;
}

}  // namespace

template <typename T>
ParamMap<T> VfiModel<T>::trainable_params() {
  return drop_prefixes(params(), {"enc.b3"});
}

template <typename T>
ParamMap<T> VfiModel<T>::trainable_flow_phase_params() {
  // the flow path consumes encoder levels 0 and 1 only
  return drop_prefixes(flow_phase_params(), {"enc.b2", "enc.b3"});
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> VfiModel<T>::estimate_flow(const Tensor<T>& i0,
                                                           const Tensor<T>& i1,
                                                           FlowPyramid<T>* pyramid) {
  if (i0.shape() != i1.shape())
    throw InputError("frames must share a shape, got " + format_shape(i0.shape()) + " and " +
                     format_shape(i1.shape()));
  std::vector<Tensor<T>> e0 = enc.forward(i0);
  std::vector<Tensor<T>> e1 = enc.forward(i1);
  return flow.forward(i0, i1, e0, e1, pyramid);
}

template <typename T>
typename VfiModel<T>::ForwardOut VfiModel<T>::forward(const Tensor<T>& i0, const Tensor<T>& i1) {
  if (i0.shape() != i1.shape())
    throw InputError("frames must share a shape, got " + format_shape(i0.shape()) + " and " +
                     format_shape(i1.shape()));
  std::vector<Tensor<T>> e0 = enc.forward(i0);
  std::vector<Tensor<T>> e1 = enc.forward(i1);
  auto [o0, o1] = flow.forward(i0, i1, e0, e1, nullptr);

  Tensor<T> wi0 = bilinear_warp(i0, o0);
  Tensor<T> wi1 = bilinear_warp(i1, o1);

  std::vector<Tensor<T>> wf0, wf1;
  Tensor<T> f0 = o0, f1 = o1;
  for (int level = 0; level < 3; ++level) {
    f0 = rescale_flow<T>(f0, 0.5);
    f1 = rescale_flow<T>(f1, 0.5);
    wf0.push_back(bilinear_warp(e0[static_cast<size_t>(level)], f0));
    wf1.push_back(bilinear_warp(e1[static_cast<size_t>(level)], f1));
  }

  ForwardOut out{synth.forward(i0, i1, wi0, wi1, wf0, wf1), {o0, o1}};
  return out;
}

template <typename T>
Tensor<T> VfiModel<T>::interpolate(const Tensor<T>& i0, const Tensor<T>& i1) {
  return forward(i0, i1).out.frame;
}

template <typename T>
std::vector<Tensor<T>> VfiModel<T>::interpolate_recursive(const Tensor<T>& i0,
                                                          const Tensor<T>& i1, int factor) {
  if (factor < 2 || (factor & (factor - 1)) != 0)
    throw UsageError("interpolation factor must be a power of two >= 2, got " +
                     std::to_string(factor));
  Tensor<T> mid = interpolate(i0, i1);
  if (factor == 2) return {mid};
  // recursion consumes valid [0,1] frames
  Tensor<T> mid_in = clamp01(mid);
  std::vector<Tensor<T>> left = interpolate_recursive(i0, mid_in, factor / 2);
  std::vector<Tensor<T>> right = interpolate_recursive(mid_in, i1, factor / 2);
  std::vector<Tensor<T>> out;
  out.insert(out.end(), left.begin(), left.end());
  out.push_back(mid);
  out.insert(out.end(), right.begin(), right.end());
  return out;
}

template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
  Tensor<T> out(x.shape(), x.values());
  T* p = out.data();
  for (int64_t i = 0; i < out.numel(); ++i)
    p[i] = p[i] < T(0) ? T(0) : (p[i] > T(1) ? T(1) : p[i]);
  return out;
}

#define VFI_INSTANTIATE(T)                                                                   \
  template struct Encoder<T>;                                                                \
  template struct SynthesisOutput<T>;                                                        \
  template Tensor<T> synthesize<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                   const Tensor<T>&);                                        \
  template struct SynthesisNet<T>;                                                           \
  template struct VfiModel<T>;                                                               \
  template Tensor<T> clamp01<T>(const Tensor<T>&);

VFI_INSTANTIATE(float)
VFI_INSTANTIATE(double)

#undef VFI_INSTANTIATE

}  // namespace vfi
