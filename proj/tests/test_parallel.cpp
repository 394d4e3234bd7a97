#include <gtest/gtest.h>

#include <atomic>
#include <stdexcept>

#include "reart/parallel.hpp"

using namespace reart;

TEST(Parallel, CoversEveryIndexOnce) {
  for (int threads : {1, 2, 4}) {
    set_thread_count(threads);
    std::vector<int> hits(1000, 0);
    parallel_for(1000, [&](int i) { ++hits[static_cast<std::size_t>(i)]; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
  set_thread_count(0);
}

TEST(Parallel, PropagatesExceptions) {
  set_thread_count(3);
  EXPECT_THROW(parallel_for(10, [](int i) {
                 if (i == 7) throw std::runtime_error("boom");
               }),
               std::runtime_error);
  set_thread_count(0);
}

TEST(Parallel, NestedCallsRunInline) {
  set_thread_count(2);
  std::atomic<int> total{0};
  parallel_for(4, [&](int) { parallel_for(5, [&](int) { ++total; }); });
  EXPECT_EQ(total.load(), 20);
  set_thread_count(0);
}

TEST(Parallel, ThreadCountDefaultsToHardware) {
  set_thread_count(0);
  EXPECT_GE(thread_count(), 1);
  set_thread_count(5);
  EXPECT_EQ(thread_count(), 5);
  set_thread_count(0);
}
