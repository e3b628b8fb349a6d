// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace wjepa {

// Process-wide worker pool. Worker count is capped by the WJEPA_THREADS
// environment variable (read once). parallel_for partitions [0, n) into
// contiguous chunks; tasks must write disjoint outputs, so results are
// bit-identical for any thread count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  void parallel_for(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    const int nthreads = std::min(size(), n);
    if (nthreads == 1 || inside_task()) {
      for (int i = 0; i < n; ++i) fn(i);
      return;
    }
    std::unique_lock<std::mutex> lock(mu_);
    job_ = &fn;
    job_n_ = n;
    next_ = 0;
    pending_ = n;
    ++generation_;
    lock.unlock();
    cv_.notify_all();
    run_worker();  // the calling thread participates
    lock.lock();
    done_cv_.wait(lock, [&] { return pending_ == 0; });
    job_ = nullptr;
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

 private:
  ThreadPool() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("WJEPA_THREADS")) {
      const int cap = std::atoi(env);
      if (cap >= 1) n = cap;
    }
    for (int i = 0; i < n - 1; ++i) {
      workers_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  static bool& inside_task() {
    thread_local bool flag = false;
    return flag;
  }

  void run_worker() {
    inside_task() = true;
    while (true) {
      int i;
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (next_ >= job_n_) break;
        i = next_++;
      }
      (*job_)(i);
      std::lock_guard<std::mutex> lock(mu_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
    inside_task() = false;
  }

  void worker_loop(int /*id*/) {
    uint64_t seen = 0;
    while (true) {
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [&] { return stop_ || (job_ && generation_ != seen); });
      if (stop_) return;
      seen = generation_;
      lock.unlock();
      run_worker();
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  int job_n_ = 0;
  int next_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

inline void parallel_for(int n, const std::function<void(int)>& fn) {
  ThreadPool::instance().parallel_for(n, fn);
}

}  // namespace wjepa
