#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <vector>

#include "protoforge/parallel.hpp"

namespace protoforge {
namespace {

class ThreadEnv : public ::testing::Test {
 protected:
  void TearDown() override { unsetenv("PROTO_FORGE_THREADS"); }
};

TEST_F(ThreadEnv, VisitsEveryIndexOnce) {
  setenv("PROTO_FORGE_THREADS", "4", 1);
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST_F(ThreadEnv, ZeroWorkIsNoop) {
  bool called = false;
  parallel_for(0, [&](std::size_t) { called = true; });
  EXPECT_FALSE(called);
}

TEST_F(ThreadEnv, RethrowsWorkerException) {
  setenv("PROTO_FORGE_THREADS", "3", 1);
  EXPECT_THROW(parallel_for(50,
                            [](std::size_t i) {
                              if (i == 17) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

TEST_F(ThreadEnv, EnvironmentControlsWorkerCount) {
  setenv("PROTO_FORGE_THREADS", "3", 1);
  EXPECT_EQ(thread_count(), 3u);
  setenv("PROTO_FORGE_THREADS", "0", 1);
  EXPECT_GE(thread_count(), 1u);
  setenv("PROTO_FORGE_THREADS", "abc", 1);
  EXPECT_GE(thread_count(), 1u);
}

TEST_F(ThreadEnv, ResultsIndependentOfThreadCount) {
  auto run = [](const char* threads) {
    setenv("PROTO_FORGE_THREADS", threads, 1);
    std::vector<double> out(200);
    parallel_for(out.size(), [&](std::size_t i) { out[i] = 1.0 / static_cast<double>(i + 1); });
    return out;
  };
  EXPECT_EQ(run("1"), run("8"));
}

}  // namespace
}  // namespace protoforge
