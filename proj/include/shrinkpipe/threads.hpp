// SPDX-License-Identifier: Apache-2.0
//
// Intra-op parallelism cap. SHRINKPIPE_THREADS limits the number of OpenMP
// threads; kernels are written so that results are bit-identical for any
// thread count.

#pragma once

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace shrinkpipe::threads {

// Re-read on every call (one call per kernel launch, so the getenv cost is
// irrelevant) so the cap can be changed between launches within a process.
inline int count() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const char* env = std::getenv("SHRINKPIPE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1 && cap < n) n = cap;
  }
  return n;
}

}  // namespace shrinkpipe::threads
