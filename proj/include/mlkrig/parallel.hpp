#pragma once

namespace mlkrig {

/// Sets the worker count for data-parallel loops (no-op without OpenMP).
/// Results never depend on this value.
void set_thread_count(int threads);
int thread_count();

}  // namespace mlkrig
