#include "vfi/common.hpp"

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

namespace vfi {

const char* error_category(const std::exception& e) {
  if (dynamic_cast<const DimError*>(&e)) return "dimension";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const InputError*>(&e)) return "input";
  return "internal";
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 in (0,1] to keep the log finite
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

double Rng::trunc_normal(double stddev, double clip) {
  double z;
  do {
    z = normal();
  } while (std::fabs(z) > clip);
  return z * stddev;
}

int64_t Rng::randint(int64_t lo, int64_t hi) {
  if (hi <= lo) throw UsageError("randint: empty range");
  uint64_t span = static_cast<uint64_t>(hi - lo);
  // rejection sampling to avoid modulo bias
  uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return lo + static_cast<int64_t>(v % span);
}

Rng Rng::fork(uint64_t salt) const {
  Rng copy = *this;
  uint64_t s = copy.next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
  return Rng(s);
}

namespace {

// Minimal persistent worker pool: one job at a time, submitted as a
// (function, chunk list) pair; the caller runs chunk 0 itself.
class Pool {
 public:
  explicit Pool(int workers) {
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~Pool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void run(const std::function<void(int)>& job, int njobs) {
    std::unique_lock<std::mutex> lk(mu_);
    job_ = &job;
    next_ = 1;  // caller takes job 0
    njobs_ = njobs;
    pending_ = njobs - 1;
    ++generation_;
    cv_.notify_all();
    lk.unlock();

    job(0);

    lk.lock();
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  void worker_loop() {
    uint64_t seen = 0;
    while (true) {
      std::unique_lock<std::mutex> lk(mu_);
      cv_.wait(lk, [&] { return stop_ || (job_ && generation_ != seen && next_ < njobs_); });
      if (stop_) return;
      seen = generation_;
      const std::function<void(int)>* job = job_;
      while (next_ < njobs_) {
        int idx = next_++;
        lk.unlock();
        (*job)(idx);
        lk.lock();
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  int next_ = 0, njobs_ = 0, pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

int g_threads = 0;

int detect_threads() {
  if (const char* env = std::getenv("VFI_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

Pool& pool() {
  static Pool p(num_threads() - 1);
  return p;
}

}  // namespace

int num_threads() {
  if (g_threads == 0) g_threads = detect_threads();
  return g_threads;
}

void set_num_threads(int n) {
  if (n < 1) throw ConfigError("thread count must be >= 1");
  if (g_threads != 0 && g_threads != n)
    throw UsageError("thread count already fixed for this process");
  g_threads = n;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn,
                  int64_t grain) {
  if (n <= 0) return;
  int nt = num_threads();
  if (nt == 1 || n < 2 * grain) {
    fn(0, n);
    return;
  }
  int chunks = static_cast<int>(std::min<int64_t>(nt, (n + grain - 1) / grain));
  int64_t per = (n + chunks - 1) / chunks;
  auto job = std::function<void(int)>([&](int c) {
    int64_t b = c * per;
    int64_t e = std::min<int64_t>(n, b + per);
    if (b < e) fn(b, e);
  });
  pool().run(job, chunks);
}

std::string format_shape(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

}  // namespace vfi
