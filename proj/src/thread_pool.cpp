#include "swarm_dmpc/thread_pool.hpp"

#include <cstdlib>
#include <string>

namespace swarm_dmpc {

ThreadPool::ThreadPool(int workers) {
  if (workers <= 0) {
    workers = static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
  }
  threads_.reserve(workers - 1);
  for (int i = 0; i + 1 < workers; ++i) {
    threads_.emplace_back([this] { worker_loop(); });
  }
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void ThreadPool::parallel_for(int count, const std::function<void(int)>& fn) {
  if (count <= 0) return;
  if (threads_.empty() || count == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }

  auto batch = std::make_shared<Batch>();
  batch->count = count;
  batch->fn = &fn;
  {
    std::lock_guard<std::mutex> lock(mu_);
    first_error_ = nullptr;
    batch_ = batch;
    ++generation_;
  }
  cv_.notify_all();

  int idx;
  while ((idx = batch->next.fetch_add(1)) < count) {
    try {
      fn(idx);
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu_);
      if (!first_error_) first_error_ = std::current_exception();
    }
    if (batch->done.fetch_add(1) + 1 == count) cv_done_.notify_all();
  }

  std::unique_lock<std::mutex> lock(mu_);
  cv_done_.wait(lock, [&] { return batch->done.load() == count; });
  batch_.reset();
  if (first_error_) {
    auto error = first_error_;
    first_error_ = nullptr;
    lock.unlock();
    std::rethrow_exception(error);
  }
}

void ThreadPool::worker_loop() {
  std::uint64_t seen = 0;
  std::unique_lock<std::mutex> lock(mu_);
  while (true) {
    cv_.wait(lock, [&] { return stop_ || (batch_ != nullptr && generation_ != seen); });
    if (stop_) return;
    seen = generation_;
    std::shared_ptr<Batch> batch = batch_;
    lock.unlock();

    int idx;
    while ((idx = batch->next.fetch_add(1)) < batch->count) {
      try {
        (*batch->fn)(idx);
      } catch (...) {
        std::lock_guard<std::mutex> guard(mu_);
        if (!first_error_) first_error_ = std::current_exception();
      }
      if (batch->done.fetch_add(1) + 1 == batch->count) {
        std::lock_guard<std::mutex> guard(mu_);
        cv_done_.notify_all();
      }
    }

    batch.reset();
    lock.lock();
  }
}

int configured_thread_count() {
  const char* env = std::getenv("SWARM_DMPC_THREADS");
  if (env == nullptr) return 0;
  try {
    return std::max(0, std::stoi(std::string(env)));
  } catch (...) {
    return 0;
  }
}

}  // namespace swarm_dmpc
