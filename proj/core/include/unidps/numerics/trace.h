#pragma once

#include <cstdint>

namespace unidps::trace {

// Fingerprint of every discrete branch taken during a forward evaluation
// (ReLU gates, attention mask bits, matching assignments, hinge and argmax
// selections). Finite differences are only meaningful when the fingerprint is
// identical at theta - h, theta and theta + h.
class Recorder {
 public:
  void add(std::uint64_t value) {
    hash_ ^= value + 0x9e3779b97f4a7c15ULL + (hash_ << 6) + (hash_ >> 2);
    ++count_;
  }
  std::uint64_t hash() const { return hash_; }
  std::uint64_t count() const { return count_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  std::uint64_t count_ = 0;
};

// Recorder active on the calling thread, or nullptr.
Recorder* active();

// Installs a recorder for the current thread for the lifetime of the scope.
class Scope {
 public:
  explicit Scope(Recorder& recorder);
  ~Scope();
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

 private:
  Recorder* previous_;
};

inline void record(std::uint64_t value) {
  if (Recorder* r = active()) r->add(value);
}

}  // namespace unidps::trace
