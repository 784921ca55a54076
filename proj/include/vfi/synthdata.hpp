#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vfi/common.hpp"

namespace vfi {

// Motion levels mirror an easy/medium/hard/extreme split by the maximum
// ground-truth displacement magnitude (in pixels at the generated size).
enum class MotionLevel { easy, medium, hard, extreme };

const char* level_name(MotionLevel level);
MotionLevel level_from_name(const std::string& name);
double level_max_disp(MotionLevel level);  // 2, 6, 12, 24 px
constexpr int kNumLevels = 4;

// Synthetic triplet: anti-aliased moving shapes over a smooth drifting
// background, the middle frame rendered analytically at t = 0.5, with true
// intermediate flows and per-direction validity masks (1 = the pixel's
// content is visible in that frame). edge marks pixels near shape borders,
// where resampled anti-aliasing differs from the analytic render.
struct FrameTriplet {
  int64_t size = 0;
  std::vector<float> i0, it, i1;        // [3,S,S], values in [0,1]
  std::vector<float> flow_t0, flow_t1;  // [2,S,S]: u then v planes
  std::vector<uint8_t> valid0, valid1;  // [S,S]
  std::vector<uint8_t> edge;            // [S,S]
  MotionLevel level = MotionLevel::easy;
  uint64_t seed = 0;
};

// flat=true renders a piecewise-constant scene (no background texture or
// shape shading): the regime where warp-consistency is exact off the edges.
FrameTriplet gen_triplet(uint64_t seed, MotionLevel level, int64_t size, bool flat = false);

// corpus layout: <dir>/im0.png, imt.png, im1.png, flow_t0.flo, flow_t1.flo,
// meta.json (seed, level, size)
void write_triplet(const std::string& dir, const FrameTriplet& t);
FrameTriplet read_triplet(const std::string& dir);  // masks are not persisted

// deterministic corpus: triplet_%05d subdirectories cycling through levels
void write_corpus(const std::string& dir, uint64_t base_seed, int count, int64_t size);
std::vector<std::string> list_corpus(const std::string& dir);

}  // namespace vfi
