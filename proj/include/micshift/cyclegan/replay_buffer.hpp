#pragma once

#include <vector>

#include "micshift/core/rng.hpp"

namespace micshift::cyclegan {

/// Pool of past generator outputs fed to the discriminator. Until full, every
/// query is stored and returned; afterwards a fair coin decides between
/// returning the fresh item and swapping it for a uniformly chosen stored one.
template <typename Item>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 50, std::uint64_t seed = 0) : capacity_(capacity), rng_(seed) {}

  Item query(const Item& fresh) {
    if (capacity_ == 0) return fresh;
    if (items_.size() < capacity_) {
      items_.push_back(fresh);
      return fresh;
    }
    if (rng_.uniform() < 0.5) {
      const std::size_t k = rng_.index(items_.size());
      Item old = std::move(items_[k]);
      items_[k] = fresh;
      ++reused_;
      return old;
    }
    return fresh;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t reused() const { return reused_; }
  const std::vector<Item>& items() const { return items_; }

 private:
  std::size_t capacity_;
  Rng rng_;
  std::vector<Item> items_;
  std::size_t reused_ = 0;
};

}  // namespace micshift::cyclegan
