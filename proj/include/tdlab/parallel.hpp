#pragma once

namespace tdlab {

/// Environment variable read by the CLI to size the worker pool.
inline constexpr const char* kWorkersEnv = "TDLAB_WORKERS";

int workers();
void set_workers(int n);
/// Applies TDLAB_WORKERS when set; returns the resulting worker count.
int init_workers_from_env();

}  // namespace tdlab
