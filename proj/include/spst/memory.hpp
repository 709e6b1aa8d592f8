#pragma once

#include <atomic>
#include <cstddef>
#include <limits>
#include <new>

namespace spst::memory {

// Allocation categories tracked by the tensor allocator. Activation covers
// every tensor created while a forward or backward sweep is running.
enum class Category : int { general = 0, activation = 1 };

namespace detail {

struct Counters {
  std::atomic<std::size_t> live[2] = {0, 0};
  std::atomic<std::size_t> peak[2] = {0, 0};
};

inline Counters& counters() {
  static Counters c;
  return c;
}

inline thread_local Category current_category = Category::general;

inline void record_alloc(Category cat, std::size_t bytes) {
  auto& c = counters();
  const int i = static_cast<int>(cat);
  const std::size_t now = c.live[i].fetch_add(bytes) + bytes;
  std::size_t prev = c.peak[i].load();
  while (now > prev && !c.peak[i].compare_exchange_weak(prev, now)) {
  }
}

inline void record_free(Category cat, std::size_t bytes) {
  counters().live[static_cast<int>(cat)].fetch_sub(bytes);
}

}  // namespace detail

inline std::size_t live_bytes(Category cat) {
  return detail::counters().live[static_cast<int>(cat)].load();
}

inline std::size_t peak_bytes(Category cat) {
  return detail::counters().peak[static_cast<int>(cat)].load();
}

// Restart peak tracking from the current live count.
inline void reset_peak(Category cat) {
  auto& c = detail::counters();
  const int i = static_cast<int>(cat);
  c.peak[i].store(c.live[i].load());
}

// Tags allocations made on this thread for the lifetime of the scope.
class CategoryScope {
 public:
  explicit CategoryScope(Category cat) : saved_(detail::current_category) {
    detail::current_category = cat;
  }
  ~CategoryScope() { detail::current_category = saved_; }
  CategoryScope(const CategoryScope&) = delete;
  CategoryScope& operator=(const CategoryScope&) = delete;

 private:
  Category saved_;
};

// Standard allocator that books bytes against the category active when the
// allocator was created.
template <typename T>
struct TrackedAllocator {
  using value_type = T;

  Category category = detail::current_category;

  TrackedAllocator() = default;
  template <typename U>
  TrackedAllocator(const TrackedAllocator<U>& other) : category(other.category) {}

  T* allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) {
      throw std::bad_array_new_length();
    }
    auto* p = static_cast<T*>(::operator new(n * sizeof(T)));
    detail::record_alloc(category, n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    detail::record_free(category, n * sizeof(T));
    ::operator delete(p);
  }

  // Copies are booked against the category active where the copy happens.
  TrackedAllocator select_on_container_copy_construction() const {
    return TrackedAllocator();
  }

  template <typename U>
  bool operator==(const TrackedAllocator<U>& other) const {
    return category == other.category;
  }
};

}  // namespace spst::memory
