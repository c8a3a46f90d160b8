#include "unidps/numerics/trace.h"

namespace unidps::trace {

namespace {
thread_local Recorder* current = nullptr;
}

Recorder* active() { return current; }

Scope::Scope(Recorder& recorder) : previous_(current) { current = &recorder; }

Scope::~Scope() { current = previous_; }

}  // namespace unidps::trace
