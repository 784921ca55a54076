#include "vfi/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "vfi/io.hpp"

namespace vfi {

const char* level_name(MotionLevel level) {
  switch (level) {
    case MotionLevel::easy: return "easy";
    case MotionLevel::medium: return "medium";
    case MotionLevel::hard: return "hard";
    case MotionLevel::extreme: return "extreme";
  }
  return "?";
}

MotionLevel level_from_name(const std::string& name) {
  for (int i = 0; i < kNumLevels; ++i)
    if (name == level_name(static_cast<MotionLevel>(i))) return static_cast<MotionLevel>(i);
  throw ConfigError("unknown motion level '" + name + "'");
}

double level_max_disp(MotionLevel level) {
  switch (level) {
    case MotionLevel::easy: return 2.0;
    case MotionLevel::medium: return 6.0;
    case MotionLevel::hard: return 12.0;
    case MotionLevel::extreme: return 24.0;
  }
  return 0.0;
}

namespace {

struct Shape {
  int kind = 0;  // 0 circle, 1 rectangle
  double cx = 0, cy = 0;      // center at t=0
  double dx = 0, dy = 0;      // displacement from t=0 to t=1
  double theta0 = 0, omega = 0;  // rectangle rotation
  double rx = 0, ry = 0;      // radius / half extents
  double color[3] = {0, 0, 0};
  double grad[3] = {0, 0, 0};  // linear shading along the body x-axis

  // signed distance at time t (negative inside)
  double sdf(double x, double y, double t) const {
    double px = x - (cx + t * dx);
    double py = y - (cy + t * dy);
    if (kind == 0) return std::sqrt(px * px + py * py) - rx;
    double th = theta0 + t * omega;
    double c = std::cos(-th), s = std::sin(-th);
    double lx = c * px - s * py;
    double ly = s * px + c * py;
    double qx = std::fabs(lx) - rx, qy = std::fabs(ly) - ry;
    double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
    return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0);
  }

  double coverage(double x, double y, double t) const {
    // linear anti-aliasing ramp over one pixel
    return std::clamp(0.5 - sdf(x, y, t), 0.0, 1.0);
  }

  // shading follows the material point, so shape pixels keep their color
  double shade(double x, double y, double t, int c) const {
    double px = x - (cx + t * dx);
    double py = y - (cy + t * dy);
    double th = theta0 + t * omega;
    double lx = std::cos(-th) * px - std::sin(-th) * py;
    return std::clamp(color[c] + grad[c] * (lx / std::max(rx, 1.0)), 0.0, 1.0);
  }

  // where the material point at (x,y,t) sits at time t2
  void track(double x, double y, double t, double t2, double& ox, double& oy) const {
    double px = x - (cx + t * dx);
    double py = y - (cy + t * dy);
    double dth = (theta0 + t2 * omega) - (theta0 + t * omega);
    double c = std::cos(dth), s = std::sin(dth);
    ox = (cx + t2 * dx) + c * px - s * py;
    oy = (cy + t2 * dy) + s * px + c * py;
  }
};

struct Scene {
  int64_t size = 0;
  double bg_dx = 0, bg_dy = 0;
  // background: per-channel bilinear ramp + two sinusoids
  double base[3], gx[3], gy[3];
  double amp1[3], fx1, fy1, ph1[3];
  double amp2[3], fx2, fy2, ph2[3];
  double amp3[3], fx3, fy3, ph3[3];  // fine texture: ghosts under small shifts
  std::vector<Shape> shapes;

  double bg_value(int c, double wx, double wy) const {
    double s = static_cast<double>(size);
    constexpr double kTau = 2 * 3.14159265358979323846;
    double v = base[c] + gx[c] * (wx / s) + gy[c] * (wy / s) +
               amp1[c] * std::sin(kTau * (fx1 * wx + fy1 * wy) / s + ph1[c]) +
               amp2[c] * std::sin(kTau * (fx2 * wx + fy2 * wy) / s + ph2[c]) +
               amp3[c] * std::sin(kTau * (fx3 * wx + fy3 * wy) / s + ph3[c]);
    return std::clamp(v, 0.0, 1.0);
  }

  void render(double t, std::vector<float>& out) const {
    int64_t S = size;
    out.resize(static_cast<size_t>(3 * S * S));
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x) {
        double wx = x - t * bg_dx, wy = y - t * bg_dy;
        double rgb[3];
        for (int c = 0; c < 3; ++c) rgb[c] = bg_value(c, wx, wy);
        for (const Shape& sh : shapes) {
          double a = sh.coverage(x, y, t);
          if (a <= 0) continue;
          for (int c = 0; c < 3; ++c)
            rgb[c] = (1 - a) * rgb[c] + a * sh.shade(x, y, t, c);
        }
        for (int c = 0; c < 3; ++c)
          out[static_cast<size_t>((c * S + y) * S + x)] = static_cast<float>(rgb[c]);
      }
  }

  // index of the topmost shape at (x,y,t), or -1 for background
  int owner(double x, double y, double t) const {
    for (int i = static_cast<int>(shapes.size()) - 1; i >= 0; --i)
      if (shapes[static_cast<size_t>(i)].coverage(x, y, t) > 0.5) return i;
    return -1;
  }
};

}  // namespace

FrameTriplet gen_triplet(uint64_t seed, MotionLevel level, int64_t size, bool flat) {
  if (size % 16 != 0)
    throw InputError("gen_triplet: size " + std::to_string(size) +
                     " must be divisible by 16");
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x853c49e6748fea9bULL + static_cast<uint64_t>(level));
  const double maxd = level_max_disp(level);
  const double s = static_cast<double>(size);

  Scene sc;
  sc.size = size;
  // background drift: 30-55% of the budget (sub-pixel drift would leave
  // the frame-mean baseline nearly optimal and the task degenerate)
  {
    double mag = rng.uniform(0.3, 0.55) * maxd;
    double ang = rng.uniform(0.0, 2 * 3.14159265358979323846);
    sc.bg_dx = mag * std::cos(ang);
    sc.bg_dy = mag * std::sin(ang);
  }
  for (int c = 0; c < 3; ++c) {
    sc.base[c] = rng.uniform(0.25, 0.6);
    sc.gx[c] = rng.uniform(-0.25, 0.25);
    sc.gy[c] = rng.uniform(-0.25, 0.25);
    sc.amp1[c] = rng.uniform(0.04, 0.12);
    sc.amp2[c] = rng.uniform(0.03, 0.08);
    sc.ph1[c] = rng.uniform(0.0, 6.28);
    sc.ph2[c] = rng.uniform(0.0, 6.28);
  }
  sc.fx1 = rng.uniform(0.6, 1.8);
  sc.fy1 = rng.uniform(0.6, 1.8);
  sc.fx2 = rng.uniform(1.2, 2.6);
  sc.fy2 = rng.uniform(1.2, 2.6);
  for (int c = 0; c < 3; ++c) {
    sc.amp3[c] = rng.uniform(0.05, 0.10);
    sc.ph3[c] = rng.uniform(0.0, 6.28);
  }
  sc.fx3 = rng.uniform(5.5, 9.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  sc.fy3 = rng.uniform(5.5, 9.0);
  if (flat) {
    for (int c = 0; c < 3; ++c) {
      sc.gx[c] = sc.gy[c] = 0.0;
      sc.amp1[c] = sc.amp2[c] = sc.amp3[c] = 0.0;
    }
  }

  int nshapes = static_cast<int>(rng.randint(2, 6));
  for (int i = 0; i < nshapes; ++i) {
    Shape sh;
    sh.kind = static_cast<int>(rng.randint(0, 2));
    sh.cx = rng.uniform(0.2 * s, 0.8 * s);
    sh.cy = rng.uniform(0.2 * s, 0.8 * s);
    double r = rng.uniform(0.06 * s, 0.16 * s);
    sh.rx = r;
    sh.ry = (sh.kind == 1) ? rng.uniform(0.5, 1.2) * r : r;
    // translation: 55-90% of the budget, so every level exercises its range
    double mag = rng.uniform(0.55, 0.9) * maxd;
    double ang = rng.uniform(0.0, 2 * 3.14159265358979323846);
    sh.dx = mag * std::cos(ang);
    sh.dy = mag * std::sin(ang);
    if (sh.kind == 1) {
      sh.theta0 = rng.uniform(0.0, 3.14159265358979323846);
      // rotational displacement at the corner radius stays within 10% of
      // the budget
      double rmax = std::sqrt(sh.rx * sh.rx + sh.ry * sh.ry);
      double wcap = 0.08 * maxd / std::max(rmax, 1.0);
      sh.omega = rng.uniform(-wcap, wcap);
    }
    for (int c = 0; c < 3; ++c) {
      sh.color[c] = rng.uniform(0.1, 0.9);
      sh.grad[c] = flat ? 0.0 : rng.uniform(-0.25, 0.25);
    }
    sc.shapes.push_back(sh);
  }

  FrameTriplet out;
  out.size = size;
  out.level = level;
  out.seed = seed;
  sc.render(0.0, out.i0);
  sc.render(0.5, out.it);
  sc.render(1.0, out.i1);

  out.flow_t0.assign(static_cast<size_t>(2 * size * size), 0.f);
  out.flow_t1.assign(static_cast<size_t>(2 * size * size), 0.f);
  out.valid0.assign(static_cast<size_t>(size * size), 0);
  out.valid1.assign(static_cast<size_t>(size * size), 0);
  out.edge.assign(static_cast<size_t>(size * size), 0);

  const double kEdgeBand = 2.0;
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      double xd = static_cast<double>(x), yd = static_cast<double>(y);
      int own = sc.owner(xd, yd, 0.5);
      double x0, y0, x1, y1;
      if (own >= 0) {
        const Shape& sh = sc.shapes[static_cast<size_t>(own)];
        sh.track(xd, yd, 0.5, 0.0, x0, y0);
        sh.track(xd, yd, 0.5, 1.0, x1, y1);
      } else {
        x0 = xd - 0.5 * sc.bg_dx;
        y0 = yd - 0.5 * sc.bg_dy;
        x1 = xd + 0.5 * sc.bg_dx;
        y1 = yd + 0.5 * sc.bg_dy;
      }
      size_t pi = static_cast<size_t>(y * size + x);
      out.flow_t0[pi] = static_cast<float>(x0 - xd);
      out.flow_t0[static_cast<size_t>(size * size) + pi] = static_cast<float>(y0 - yd);
      out.flow_t1[pi] = static_cast<float>(x1 - xd);
      out.flow_t1[static_cast<size_t>(size * size) + pi] = static_cast<float>(y1 - yd);

      bool in0 = x0 >= 0 && x0 <= s - 1 && y0 >= 0 && y0 <= s - 1;
      bool in1 = x1 >= 0 && x1 <= s - 1 && y1 >= 0 && y1 <= s - 1;
      out.valid0[pi] = (in0 && sc.owner(x0, y0, 0.0) == own) ? 1 : 0;
      out.valid1[pi] = (in1 && sc.owner(x1, y1, 1.0) == own) ? 1 : 0;

      bool near_edge = false;
      for (const Shape& sh : sc.shapes) {
        if (std::fabs(sh.sdf(xd, yd, 0.5)) < kEdgeBand ||
            std::fabs(sh.sdf(x0, y0, 0.0)) < kEdgeBand ||
            std::fabs(sh.sdf(x1, y1, 1.0)) < kEdgeBand) {
          near_edge = true;
          break;
        }
      }
      out.edge[pi] = near_edge ? 1 : 0;
    }
  return out;
}

void write_triplet(const std::string& dir, const FrameTriplet& t) {
  std::filesystem::create_directories(dir);
  write_png(dir + "/im0.png", to_image8(t.i0, t.size, t.size));
  write_png(dir + "/imt.png", to_image8(t.it, t.size, t.size));
  write_png(dir + "/im1.png", to_image8(t.i1, t.size, t.size));
  // planes -> interleaved (u,v)
  auto interleave = [&](const std::vector<float>& planes) {
    std::vector<float> uv(planes.size());
    int64_t hw = t.size * t.size;
    for (int64_t i = 0; i < hw; ++i) {
      uv[static_cast<size_t>(2 * i)] = planes[static_cast<size_t>(i)];
      uv[static_cast<size_t>(2 * i + 1)] = planes[static_cast<size_t>(hw + i)];
    }
    return uv;
  };
  write_flo(dir + "/flow_t0.flo", interleave(t.flow_t0), t.size, t.size);
  write_flo(dir + "/flow_t1.flo", interleave(t.flow_t1), t.size, t.size);
  nlohmann::json meta;
  meta["seed"] = t.seed;
  meta["level"] = level_name(t.level);
  meta["size"] = t.size;
  std::ofstream f(dir + "/meta.json");
  if (!f) throw IoError("write_triplet: cannot open " + dir + "/meta.json");
  f << meta.dump(2) << "\n";
}

FrameTriplet read_triplet(const std::string& dir) {
  std::ifstream f(dir + "/meta.json");
  if (!f) throw IoError("read_triplet: missing " + dir + "/meta.json");
  nlohmann::json meta = nlohmann::json::parse(f, nullptr, true);
  FrameTriplet t;
  t.seed = meta.at("seed").get<uint64_t>();
  t.level = level_from_name(meta.at("level").get<std::string>());
  t.size = meta.at("size").get<int64_t>();
  t.i0 = from_image8(read_png(dir + "/im0.png"));
  t.it = from_image8(read_png(dir + "/imt.png"));
  t.i1 = from_image8(read_png(dir + "/im1.png"));
  auto read_planes = [&](const std::string& path) {
    std::vector<float> uv;
    int64_t w = 0, h = 0;
    read_flo(path, uv, w, h);
    if (w != t.size || h != t.size)
      throw IoError("read_triplet: flow extents disagree with meta in " + dir);
    std::vector<float> planes(uv.size());
    int64_t hw = w * h;
    for (int64_t i = 0; i < hw; ++i) {
      planes[static_cast<size_t>(i)] = uv[static_cast<size_t>(2 * i)];
      planes[static_cast<size_t>(hw + i)] = uv[static_cast<size_t>(2 * i + 1)];
    }
    return planes;
  };
  t.flow_t0 = read_planes(dir + "/flow_t0.flo");
  t.flow_t1 = read_planes(dir + "/flow_t1.flo");
  return t;
}

void write_corpus(const std::string& dir, uint64_t base_seed, int count, int64_t size) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    MotionLevel level = static_cast<MotionLevel>(i % kNumLevels);
    FrameTriplet t = gen_triplet(base_seed + static_cast<uint64_t>(i), level, size);
    char name[32];
    std::snprintf(name, sizeof(name), "triplet_%05d", i);
    write_triplet(dir + "/" + name, t);
  }
}

std::vector<std::string> list_corpus(const std::string& dir) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("corpus directory not found: " + dir);
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "meta.json"))
      out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("corpus is empty: " + dir);
  return out;
}

}  // namespace vfi
