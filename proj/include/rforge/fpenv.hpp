#pragma once

// Subnormal floats make the float training loops several times slower once
// activations and Adam moments decay. Flushing them to zero is applied per
// thread and keeps results deterministic.

#if defined(__SSE__) || defined(_M_X64)
#include <xmmintrin.h>
#endif

namespace rforge {

inline void enable_flush_to_zero() noexcept {
#if defined(__SSE__) || defined(_M_X64)
  _mm_setcsr(_mm_getcsr() | 0x8040);  // FTZ | DAZ
#endif
}

}  // namespace rforge
