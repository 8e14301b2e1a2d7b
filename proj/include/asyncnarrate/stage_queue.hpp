#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>

namespace asyncnarrate {

// Bounded FIFO between pipeline stages. push() blocks while full; pop()
// returns nullopt on timeout, close, or wake() so the caller can re-check
// its stop conditions.
template <class T>
class StageQueue {
 public:
  explicit StageQueue(std::size_t capacity = 64) : capacity_(capacity) {}

  bool push(T item) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_all();
    return true;
  }

  template <class Rep, class Period>
  std::optional<T> pop(std::chrono::duration<Rep, Period> timeout) {
    std::unique_lock lock(mutex_);
    const auto seen = wakes_;
    not_empty_.wait_for(lock, timeout, [&] { return closed_ || !items_.empty() || wakes_ != seen; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_all();
    return item;
  }

  std::optional<T> try_pop() {
    std::lock_guard lock(mutex_);
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_all();
    return item;
  }

  // Removes matching items, returns how many.
  template <class Pred>
  std::size_t remove_if(Pred pred) {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (auto it = items_.begin(); it != items_.end();) {
      if (pred(*it)) {
        it = items_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
    if (n) not_full_.notify_all();
    return n;
  }

  void wake() {
    std::lock_guard lock(mutex_);
    ++wakes_;
    not_empty_.notify_all();
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }
  bool empty() const { return size() == 0; }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<T> items_;
  std::uint64_t wakes_ = 0;
  bool closed_ = false;
};

}  // namespace asyncnarrate
