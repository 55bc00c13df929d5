#pragma once

#include <cstddef>
#include <functional>

namespace flatconv {

// Number of worker threads used by the convolution kernels. Defaults to 1.
void set_worker_count(std::size_t workers);
std::size_t worker_count();

// RAII override of the worker count.
class WorkerScope {
 public:
  explicit WorkerScope(std::size_t workers);
  ~WorkerScope();
  WorkerScope(const WorkerScope&) = delete;
  WorkerScope& operator=(const WorkerScope&) = delete;

 private:
  std::size_t previous_;
};

// Runs body(begin, end) over contiguous chunks of [0, n). Chunks are
// disjoint, so results never depend on the worker count as long as each
// index writes only its own outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace flatconv
