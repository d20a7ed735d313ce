#pragma once

#include <cstddef>

namespace physattn {

/// Keeps large tensor buffers on the heap instead of fresh mmap pages. Tape
/// evaluation frees and reallocates the same activation sizes every step, and
/// glibc's default mmap threshold turns each of those into page faults.
/// Call once at program start; a no-op off glibc.
void tune_allocator();

/// Worker-thread cap from PHYSATTN_THREADS (default 1, minimum 1).
std::size_t worker_threads();

}  // namespace physattn
