#pragma once

#include <functional>

namespace reart {

// Worker count used by parallel_for. 0 means hardware concurrency.
void set_thread_count(int n);
int thread_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks so results
// written by index are independent of the thread count. Nested calls from a
// worker run inline.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace reart
