#ifndef SWARM_DMPC_THREAD_POOL_HPP
#define SWARM_DMPC_THREAD_POOL_HPP

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace swarm_dmpc {

/// Fixed pool used for the node and edge phases. Tasks within one
/// parallel_for are independent and write disjoint slots, so results do not
/// depend on the worker count or scheduling.
class ThreadPool {
 public:
  /// workers <= 0 picks the hardware concurrency.
  explicit ThreadPool(int workers = 0);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int worker_count() const { return static_cast<int>(threads_.size()) + 1; }

  /// Runs fn(0..count-1), returning after all complete. Rethrows the first
  /// task exception. With no worker threads, runs inline.
  void parallel_for(int count, const std::function<void(int)>& fn);

 private:
  void worker_loop();

  // shared ownership keeps the batch alive for stragglers that probe for
  // more work after the submitting thread has already moved on
  struct Batch {
    int count = 0;
    std::atomic<int> next{0};
    std::atomic<int> done{0};
    const std::function<void(int)>* fn = nullptr;
  };

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable cv_done_;
  std::shared_ptr<Batch> batch_;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr first_error_;
};

/// Worker count from the SWARM_DMPC_THREADS environment variable
/// (0 or unset = auto).
int configured_thread_count();

}  // namespace swarm_dmpc

#endif  // SWARM_DMPC_THREAD_POOL_HPP
