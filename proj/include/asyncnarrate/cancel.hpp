#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <thread>

namespace asyncnarrate {

namespace detail {
struct CancelState {
  std::mutex mutex;
  std::condition_variable cv;
  std::atomic<std::uint64_t> generation{0};
  std::atomic<bool> closed{false};
};
}  // namespace detail

// A token is cancelled when its source advances past the generation it was
// issued in, or when the source is closed. Sleeps wake early on either.
class CancelToken {
 public:
  using clock = std::chrono::steady_clock;

  CancelToken() = default;
  CancelToken(std::shared_ptr<detail::CancelState> state, std::uint64_t generation)
      : state_(std::move(state)), generation_(generation) {}

  bool cancelled() const {
    return state_ && (state_->closed.load() || state_->generation.load() != generation_);
  }

  // false if cancelled before the deadline.
  bool sleep_until(clock::time_point deadline) const {
    if (!state_) {
      std::this_thread::sleep_until(deadline);
      return true;
    }
    std::unique_lock lock(state_->mutex);
    return !state_->cv.wait_until(lock, deadline, [&] { return cancelled(); });
  }

  template <class Rep, class Period>
  bool sleep_for(std::chrono::duration<Rep, Period> d) const {
    return sleep_until(clock::now() + std::chrono::duration_cast<clock::duration>(d));
  }

  std::uint64_t generation() const noexcept { return generation_; }

 private:
  std::shared_ptr<detail::CancelState> state_;
  std::uint64_t generation_ = 0;
};

class CancelSource {
 public:
  CancelSource() : state_(std::make_shared<detail::CancelState>()) {}

  CancelToken token() const { return CancelToken(state_, state_->generation.load()); }
  // Token bound to an earlier generation; already cancelled if it has passed.
  CancelToken token_for(std::uint64_t generation) const { return CancelToken(state_, generation); }

  // Cancels every token issued so far; later tokens are live.
  std::uint64_t advance() {
    std::uint64_t g;
    {
      std::lock_guard lock(state_->mutex);
      g = ++state_->generation;
    }
    state_->cv.notify_all();
    return g;
  }

  // Cancels every token, past and future.
  void close() {
    {
      std::lock_guard lock(state_->mutex);
      state_->closed = true;
    }
    state_->cv.notify_all();
  }

  bool closed() const { return state_->closed.load(); }
  std::uint64_t generation() const { return state_->generation.load(); }

 private:
  std::shared_ptr<detail::CancelState> state_;
};

}  // namespace asyncnarrate
