#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vfi {

// Error taxonomy. Each carries a short machine-parseable category used by the
// CLI exit path ("error: <category>: <message>").
struct DimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const char* error_category(const std::exception& e);

// Deterministic RNG. All randomness in the project flows through this so a
// seed fully determines inits, data and augmentation. Normal variates use
// Box-Muller on the raw 64-bit stream instead of std::normal_distribution,
// which keeps the draw sequence independent of the standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal();

  // truncated normal: resample until |z| <= clip, then scale
  double trunc_normal(double stddev, double clip = 2.0);

  // integer in [lo, hi)
  int64_t randint(int64_t lo, int64_t hi);

  // derive an independent stream (for per-step / per-seed substreams)
  Rng fork(uint64_t salt) const;

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Worker-pool backed parallel loop. The range is split into one contiguous
// chunk per worker, so every output element is produced by exactly one thread
// with a fixed serial accumulation order: results are bitwise reproducible
// for a given thread count, and the thread count is stable per machine
// (override with VFI_THREADS).
int num_threads();
void set_num_threads(int n);
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn,
                  int64_t grain = 4096);

std::string format_shape(const std::vector<int64_t>& s);

}  // namespace vfi
