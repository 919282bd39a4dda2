#include <gtest/gtest.h>

#include <sstream>

#include "bomtrace/stats.hpp"
#include "test_support.hpp"

using namespace bomtrace;

namespace {

LogStats stats_of(const std::string& fixture) {
  ReplaySource src(test::fixture(fixture));
  return compute_log_stats(src);
}

}  // namespace

TEST(Stats, ExtensionRules) {
  EXPECT_EQ(extension_of("/a/b/print.go"), ".go");
  EXPECT_EQ(extension_of("/usr/lib/libgcc_s.so"), ".so");
  EXPECT_EQ(extension_of("/lib/libc.so.6"), ".so");
  EXPECT_EQ(extension_of("/lib/libstdc++.so.6.0.30"), ".so");
  EXPECT_EQ(extension_of("/x/libfoo.so.conf"), ".conf");
  EXPECT_EQ(extension_of("/x/rt0_openbsd_arm.s"), ".s");
  EXPECT_EQ(extension_of("/x/VERSION"), "(none)");
  EXPECT_EQ(extension_of("/x/.bashrc"), "(none)");
  EXPECT_EQ(extension_of("/x/trailing."), "(none)");
  EXPECT_EQ(extension_of("/x.d/file"), "(none)");
  EXPECT_EQ(extension_of("/x/a.tar.gz"), ".gz");
}

TEST(Stats, GoSampleCounts) {
  auto s = stats_of("go_sample.jsonl");
  EXPECT_EQ(s.total_events, 26u);
  EXPECT_EQ(s.open_events, 12u);
  EXPECT_EQ(s.distinct_files, 12u);
  EXPECT_EQ(s.by_extension[".go"], 5u);
  EXPECT_EQ(s.by_extension[".so"], 2u);
  EXPECT_EQ(s.by_extension[".s"], 1u);
  std::uint64_t other = 0;
  for (const auto& [ext, n] : s.by_extension)
    if (ext != ".go" && ext != ".so" && ext != ".s") other += n;
  EXPECT_EQ(other, 4u);
  EXPECT_EQ(s.dropped, 0u);
}

TEST(Stats, EmptyLogIsAllZero) {
  auto s = stats_of("empty.jsonl");
  EXPECT_EQ(s, LogStats{});
  EXPECT_EQ(render_text(s), "total events: 0\nfile access events: 0\ndistinct files: 0\nfiles by extension:\ndropped: 0\n");
}

TEST(Stats, DropsArePassedThrough) {
  auto s = stats_of("dropped17.jsonl");
  EXPECT_EQ(s.dropped, 17u);
  EXPECT_NE(render_text(s).find("dropped: 17\n"), std::string::npos);
  EXPECT_EQ(nlohmann::json::parse(render_json(s))["dropped"], 17);
}

TEST(Stats, JsonShape) {
  auto j = nlohmann::json::parse(render_json(stats_of("go_sample.jsonl")));
  EXPECT_EQ(j["total_events"], 26);
  EXPECT_EQ(j["file_access_events"], 12);
  EXPECT_EQ(j["distinct_files"], 12);
  EXPECT_EQ(j["by_extension"][".go"], 5);
}

TEST(Stats, MatchesIndependentCounter) {
  for (const char* f : {"go_sample.jsonl", "synthetic2000.jsonl", "hello_build.jsonl", "dropped17.jsonl"}) {
    auto r = test::run_python({test::tool_script("count_log_stats.py"), test::fixture(f)});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(r.out), nlohmann::json::parse(render_json(stats_of(f)))) << f;
  }
}

TEST(Stats, MalformedLogThrows) {
  ReplaySource src(test::fixture("go_sample_truncated.jsonl"));
  EXPECT_THROW(compute_log_stats(src), ParseError);
}
