#include "vfi/io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace vfi {

namespace {

struct FileCloser {
  FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace

void write_png(const std::string& path, const Image8& img) {
  if (img.w <= 0 || img.h <= 0 || static_cast<int64_t>(img.rgb.size()) != img.w * img.h * 3)
    throw IoError("write_png: inconsistent image buffer for " + path);
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("write_png: cannot open " + path);
  FileCloser closer{f};
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw IoError("write_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png: encode failed for " + path);
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int64_t y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(img.rgb.data() + y * img.w * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png_gray(const std::string& path, int64_t w, int64_t h,
                    const std::vector<uint8_t>& gray) {
  if (static_cast<int64_t>(gray.size()) != w * h)
    throw IoError("write_png_gray: inconsistent buffer for " + path);
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("write_png_gray: cannot open " + path);
  FileCloser closer{f};
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw IoError("write_png_gray: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png_gray: encode failed for " + path);
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(gray.data() + y * w);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image8 read_png(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("read_png: cannot open " + path);
  FileCloser closer{f};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw IoError("read_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: decode failed for " + path);
  }
  png_init_io(png, f);
  png_read_info(png, info);
  // normalize to 8-bit RGB
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  Image8 img;
  img.w = png_get_image_width(png, info);
  img.h = png_get_image_height(png, info);
  img.rgb.resize(static_cast<size_t>(img.w * img.h * 3));
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int64_t y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] = img.rgb.data() + y * img.w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image8 to_image8(const std::vector<float>& chw, int64_t h, int64_t w) {
  if (static_cast<int64_t>(chw.size()) != 3 * h * w)
    throw IoError("to_image8: buffer size does not match 3x" + std::to_string(h) + "x" +
                  std::to_string(w));
  Image8 img;
  img.w = w;
  img.h = h;
  img.rgb.resize(static_cast<size_t>(3 * h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        float v = chw[static_cast<size_t>((c * h + y) * w + x)];
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        img.rgb[static_cast<size_t>((y * w + x) * 3 + c)] =
            static_cast<uint8_t>(v * 255.f + 0.5f);
      }
  return img;
}

std::vector<float> from_image8(const Image8& img) {
  std::vector<float> chw(static_cast<size_t>(3 * img.h * img.w));
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        chw[static_cast<size_t>((c * img.h + y) * img.w + x)] =
            static_cast<float>(img.rgb[static_cast<size_t>((y * img.w + x) * 3 + c)]) / 255.f;
  return chw;
}

void write_flo(const std::string& path, const std::vector<float>& uv, int64_t w, int64_t h) {
  if (static_cast<int64_t>(uv.size()) != 2 * w * h)
    throw IoError("write_flo: buffer size does not match 2x" + std::to_string(h) + "x" +
                  std::to_string(w));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_flo: cannot open " + path);
  const float magic = 202021.25f;
  int32_t wi = static_cast<int32_t>(w), hi = static_cast<int32_t>(h);
  f.write(reinterpret_cast<const char*>(&magic), 4);
  f.write(reinterpret_cast<const char*>(&wi), 4);
  f.write(reinterpret_cast<const char*>(&hi), 4);
  f.write(reinterpret_cast<const char*>(uv.data()), static_cast<std::streamsize>(uv.size() * 4));
  if (!f) throw IoError("write_flo: write failed for " + path);
}

void read_flo(const std::string& path, std::vector<float>& uv, int64_t& w, int64_t& h) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_flo: cannot open " + path);
  float magic = 0;
  int32_t wi = 0, hi = 0;
  f.read(reinterpret_cast<char*>(&magic), 4);
  f.read(reinterpret_cast<char*>(&wi), 4);
  f.read(reinterpret_cast<char*>(&hi), 4);
  if (!f || magic != 202021.25f)
    throw IoError("read_flo: bad magic in " + path);
  if (wi <= 0 || hi <= 0 || wi > 1 << 16 || hi > 1 << 16)
    throw IoError("read_flo: implausible extents in " + path);
  w = wi;
  h = hi;
  uv.resize(static_cast<size_t>(2 * w * h));
  f.read(reinterpret_cast<char*>(uv.data()), static_cast<std::streamsize>(uv.size() * 4));
  if (!f) throw IoError("read_flo: truncated file " + path);
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t hash = 1469598103934665603ULL;
  for (unsigned char c : s) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

namespace {

constexpr char kMagic[4] = {'V', 'F', 'I', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f, const std::string& path) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError("checkpoint: truncated file " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamMap<float>& params,
                     uint64_t config_digest, const std::string& config_json,
                     int64_t global_step) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
  f.write(kMagic, 4);
  put(f, kVersion);
  put(f, config_digest);
  put(f, static_cast<uint32_t>(config_json.size()));
  f.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  put(f, static_cast<int64_t>(global_step));
  put(f, static_cast<uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    put(f, static_cast<uint16_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(f, static_cast<uint8_t>(p->t.ndim()));
    for (int i = 0; i < p->t.ndim(); ++i) put(f, static_cast<int64_t>(p->t.shape()[i]));
    f.write(reinterpret_cast<const char*>(p->t.data()),
            static_cast<std::streamsize>(p->t.numel() * 4));
  }
  // optimizer state carries a per-parameter flag: after a flow-only phase
  // the synthesis parameters legitimately have no moments yet
  for (const auto& [name, p] : params) {
    uint8_t has_state = p->m.empty() ? 0 : 1;
    put(f, has_state);
    if (!has_state) continue;
    put(f, static_cast<int64_t>(p->steps));
    f.write(reinterpret_cast<const char*>(p->m.data()),
            static_cast<std::streamsize>(p->m.size() * 4));
    f.write(reinterpret_cast<const char*>(p->v.data()),
            static_cast<std::streamsize>(p->v.size() * 4));
  }
  if (!f) throw IoError("checkpoint: write failed for " + path);
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  uint32_t version = get<uint32_t>(f, path);
  if (version != kVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  CheckpointHeader h;
  h.digest = get<uint64_t>(f, path);
  uint32_t jlen = get<uint32_t>(f, path);
  h.config_json.resize(jlen);
  f.read(h.config_json.data(), jlen);
  h.global_step = get<int64_t>(f, path);
  if (!f) throw IoError("checkpoint: truncated file " + path);
  return h;
}

CheckpointHeader load_checkpoint(const std::string& path, ParamMap<float>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  uint32_t version = get<uint32_t>(f, path);
  if (version != kVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  CheckpointHeader h;
  h.digest = get<uint64_t>(f, path);
  uint32_t jlen = get<uint32_t>(f, path);
  h.config_json.resize(jlen);
  f.read(h.config_json.data(), jlen);
  h.global_step = get<int64_t>(f, path);

  uint32_t n = get<uint32_t>(f, path);
  if (n != params.size())
    throw DimError("checkpoint: has " + std::to_string(n) + " parameters, model expects " +
                   std::to_string(params.size()));
  for (auto& [name, p] : params) {
    uint16_t len = get<uint16_t>(f, path);
    std::string fname(len, '\0');
    f.read(fname.data(), len);
    if (fname != name)
      throw DimError("checkpoint: parameter order mismatch: file has '" + fname +
                     "', model expects '" + name + "'");
    uint8_t nd = get<uint8_t>(f, path);
    std::vector<int64_t> shape(nd);
    for (int i = 0; i < nd; ++i) shape[static_cast<size_t>(i)] = get<int64_t>(f, path);
    if (shape != p->t.shape())
      throw DimError("checkpoint: shape mismatch for '" + name + "': file " +
                     format_shape(shape) + ", model " + format_shape(p->t.shape()));
    f.read(reinterpret_cast<char*>(p->t.data()),
           static_cast<std::streamsize>(p->t.numel() * 4));
    if (!f) throw IoError("checkpoint: truncated file " + path);
  }
  for (auto& [name, p] : params) {
    uint8_t has_state = get<uint8_t>(f, path);
    if (!has_state) {
      p->steps = 0;
      p->m.clear();
      p->v.clear();
      continue;
    }
    p->steps = get<int64_t>(f, path);
    p->m.resize(static_cast<size_t>(p->t.numel()));
    p->v.resize(static_cast<size_t>(p->t.numel()));
    f.read(reinterpret_cast<char*>(p->m.data()),
           static_cast<std::streamsize>(p->m.size() * 4));
    f.read(reinterpret_cast<char*>(p->v.data()),
           static_cast<std::streamsize>(p->v.size() * 4));
    if (!f) throw IoError("checkpoint: truncated optimizer state in " + path);
  }
  return h;
}

void append_csv_line(const std::string& path, const std::string& line, const char* header) {
  bool fresh = !std::filesystem::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("csv: cannot open " + path);
  if (fresh && header) f << header << "\n";
  f << line << "\n";
  if (!f) throw IoError("csv: write failed for " + path);
}

}  // namespace vfi
