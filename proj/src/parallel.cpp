#include "tdlab/parallel.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

#include "tdlab/errors.hpp"

namespace tdlab {

int workers() { return omp_get_max_threads(); }

void set_workers(int n) {
  if (n < 1) throw ConfigError("worker count must be positive");
  omp_set_num_threads(n);
}

int init_workers_from_env() {
  if (const char* v = std::getenv(kWorkersEnv); v && *v) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1)
      throw ConfigError(std::string(kWorkersEnv) + " must be a positive integer");
    set_workers(static_cast<int>(n));
  }
  return workers();
}

}  // namespace tdlab
