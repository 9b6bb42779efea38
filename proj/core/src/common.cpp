#include "slad/common.hpp"

#include <atomic>
#include <cstdlib>
#include <cmath>
#include <condition_variable>
#include <mutex>
#include <sstream>
#include <thread>

namespace slad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

double Rng::normal(double mean, double stddev) {
  double u1 = uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log1p(-u1));
  return mean + stddev * r * std::cos(2.0 * M_PI * u2);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw ValueError("Rng::below: n must be positive");
  return static_cast<std::size_t>(
      (static_cast<unsigned __int128>(gen_()) * n) >> 64);
}

void Rng::shuffle(std::span<std::size_t> idx) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = below(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = fnv1a(label.data(), label.size());
  // splitmix64 finalizer over seed ^ label hash
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t checksum(std::span<const double> values) {
  return fnv1a(values.data(), values.size_bytes());
}

namespace {

// Minimal persistent worker pool. A job is split into fixed chunks; the
// calling thread runs the first chunk and workers drain the rest. Chunk
// boundaries depend only on (range, thread limit), never on scheduling.
class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  int threads() const { return limit_.load(); }
  void set_threads(int n) { limit_.store(n < 1 ? 1 : n); }

  void run(std::size_t begin, std::size_t end, std::size_t grain,
           const std::function<void(std::size_t, std::size_t)>& fn) {
    std::size_t total = end - begin;
    int ways = limit_.load();
    if (in_parallel_ || workers_.empty()) ways = 1;
    std::size_t chunk = (total + ways - 1) / ways;
    if (chunk < grain) chunk = grain;
    std::size_t chunks = (total + chunk - 1) / chunk;
    if (chunks <= 1) {
      fn(begin, end);
      return;
    }

    {
      std::unique_lock lock(mu_);
      job_fn_ = &fn;
      job_end_ = end;
      job_chunk_ = chunk;
      job_next_ = begin + chunk;  // first chunk belongs to the caller
      pending_ = chunks - 1;
      ++epoch_;
    }
    cv_.notify_all();

    in_parallel_ = true;
    fn(begin, begin + chunk);
    in_parallel_ = false;

    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

 private:
  Pool() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("SLADLAB_THREADS")) {
      int n = std::atoi(env);
      if (n >= 1) hw = static_cast<unsigned>(n);
    }
    limit_.store(static_cast<int>(hw));
    for (unsigned i = 0; i + 1 < hw; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~Pool() {
    {
      std::unique_lock lock(mu_);
      stop_ = true;
      ++epoch_;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    std::unique_lock lock(mu_);
    for (;;) {
      cv_.wait(lock, [&] { return stop_ || epoch_ != seen; });
      if (stop_) return;
      seen = epoch_;
      while (job_fn_ != nullptr && job_next_ < job_end_) {
        std::size_t b = job_next_;
        std::size_t e = std::min(job_end_, b + job_chunk_);
        job_next_ = e;
        const auto* fn = job_fn_;
        lock.unlock();
        in_parallel_ = true;
        (*fn)(b, e);
        in_parallel_ = false;
        lock.lock();
        --pending_;
        if (pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(std::size_t, std::size_t)>* job_fn_ = nullptr;
  std::size_t job_end_ = 0, job_chunk_ = 0, job_next_ = 0;
  std::size_t pending_ = 0;
  std::uint64_t epoch_ = 0;
  bool stop_ = false;
  std::atomic<int> limit_{1};
  static thread_local bool in_parallel_;
};

thread_local bool Pool::in_parallel_ = false;

}  // namespace

int max_threads() { return Pool::instance().threads(); }
void set_max_threads(int n) { Pool::instance().set_threads(n); }

void parallel_for(std::size_t begin, std::size_t end, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (begin >= end) return;
  Pool::instance().run(begin, end, grain, fn);
}

}  // namespace slad
