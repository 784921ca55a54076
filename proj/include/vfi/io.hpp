#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vfi/optim.hpp"

namespace vfi {

// 8-bit RGB image, row-major [h][w][3]
struct Image8 {
  int64_t w = 0, h = 0;
  std::vector<uint8_t> rgb;
};

void write_png(const std::string& path, const Image8& img);
void write_png_gray(const std::string& path, int64_t w, int64_t h,
                    const std::vector<uint8_t>& gray);
Image8 read_png(const std::string& path);

// float CHW [3,h,w] in [0,1] (clamped on export) <-> 8-bit RGB
Image8 to_image8(const std::vector<float>& chw, int64_t h, int64_t w);
std::vector<float> from_image8(const Image8& img);

// Middlebury .flo: "PIEH" magic float, int32 width/height, interleaved
// row-major (u,v) little-endian float32
void write_flo(const std::string& path, const std::vector<float>& uv, int64_t w, int64_t h);
void read_flo(const std::string& path, std::vector<float>& uv, int64_t& w, int64_t& h);

uint64_t fnv1a64(const std::string& s);

// Versioned binary checkpoint: magic "VFIT", format version, config digest,
// embedded config JSON, global step, then (name, shape, float32 data) per
// parameter plus AdamW state.
void save_checkpoint(const std::string& path, const ParamMap<float>& params,
                     uint64_t config_digest, const std::string& config_json,
                     int64_t global_step);

struct CheckpointHeader {
  uint64_t digest = 0;
  std::string config_json;
  int64_t global_step = 0;
};

// reads only the header (for digest checks without a model)
CheckpointHeader read_checkpoint_header(const std::string& path);

// loads parameters and optimizer state into a matching map; throws IoError
// on malformed files and DimError on name/shape mismatches
CheckpointHeader load_checkpoint(const std::string& path, ParamMap<float>& params);

void append_csv_line(const std::string& path, const std::string& line, const char* header);

}  // namespace vfi
