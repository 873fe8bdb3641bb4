#pragma once

// Thread-count control. Kernels split work only across independent output
// rows and keep a fixed summation order inside each row, so results are
// bit-identical for every thread count.

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ahmf {

inline void set_num_threads(int n) {
#ifdef _OPENMP
  if (n <= 0) n = omp_get_num_procs();
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

inline int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// Applies AHMF_THREADS (0 or unset = all cores). Returns the effective count.
inline int configure_threads_from_env() {
  int n = 0;
  if (const char* env = std::getenv("AHMF_THREADS")) {
    try {
      n = std::stoi(env);
    } catch (...) {
      n = 0;
    }
  }
  set_num_threads(n);
  return num_threads();
}

}  // namespace ahmf
