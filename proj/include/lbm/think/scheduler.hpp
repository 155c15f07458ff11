#pragma once

#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "lbm/think/backend.hpp"

namespace lbm::think {

struct SchedulerStats {
  int requested = 0;
  int delivered = 0;
  int misses = 0;   // decision made with the empty CoT because no CoT was ready
  int failures = 0; // backend errors (each also counted as a miss)
};

// Per-step mailbox between the reasoner and the decision loop. The CoT for
// step t is requested once step t-1 has resolved; take(t) waits at most until
// that request's deadline and falls back to the empty CoT.
class ThinkScheduler {
 public:
  ThinkScheduler(ThinkBackend& backend, std::chrono::milliseconds deadline) : backend_(backend), deadline_(deadline) {}
  ThinkScheduler(const ThinkScheduler&) = delete;
  ThinkScheduler& operator=(const ThinkScheduler&) = delete;
  ~ThinkScheduler() { join(); }

  void request(int t, const PromptContext& ctx) {
    auto box = std::make_shared<Mailbox>();
    box->deadline = Clock::now() + deadline_;
    {
      std::lock_guard lock(mu_);
      boxes_[t] = box;
      ++stats_.requested;
    }
    const std::string prompt = build_prompt(ctx);
    if (backend_.synchronous()) {
      fulfil(*box, ctx, prompt);
      return;
    }
    workers_.emplace_back([this, box, ctx, prompt] { fulfil(*box, ctx, prompt); });
  }

  // Empty CoT when nothing was requested for t (not a miss) or when the CoT
  // was not ready by its deadline (a miss).
  CotResponse take(int t) {
    std::shared_ptr<Mailbox> box;
    {
      std::lock_guard lock(mu_);
      auto it = boxes_.find(t);
      if (it == boxes_.end()) return {};
      box = it->second;
      boxes_.erase(it);
    }
    std::unique_lock lock(box->mu);
    box->cv.wait_until(lock, box->deadline, [&] { return box->done; });
    std::lock_guard slock(mu_);
    if (box->done && box->response) {
      ++stats_.delivered;
      return *box->response;
    }
    ++stats_.misses;
    if (box->done && box->failed) ++stats_.failures;
    return {};
  }

  SchedulerStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

  // Waits for outstanding requests; each is bounded by its own deadline.
  void join() {
    for (auto& w : workers_)
      if (w.joinable()) w.join();
    workers_.clear();
  }

 private:
  struct Mailbox {
    std::mutex mu;
    std::condition_variable cv;
    Clock::time_point deadline;
    bool done = false;
    bool failed = false;
    std::optional<CotResponse> response;
  };

  void fulfil(Mailbox& box, const PromptContext& ctx, const std::string& prompt) {
    std::optional<CotResponse> r;
    bool failed = false;
    try {
      auto v = backend_.generate(ctx, prompt, 1, box.deadline);
      if (!v.empty()) r = std::move(v.front());
    } catch (const std::exception&) {
      failed = true;
    }
    {
      std::lock_guard lock(box.mu);
      // A response arriving after the deadline is discarded, never used late.
      if (Clock::now() <= box.deadline || backend_.synchronous()) box.response = std::move(r);
      box.failed = failed;
      box.done = true;
    }
    box.cv.notify_all();
  }

  ThinkBackend& backend_;
  std::chrono::milliseconds deadline_;
  mutable std::mutex mu_;
  std::map<int, std::shared_ptr<Mailbox>> boxes_;
  std::vector<std::thread> workers_;
  SchedulerStats stats_;
};

}  // namespace lbm::think
