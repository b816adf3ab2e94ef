#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "oracles.hpp"

using namespace evwsss;
using namespace evwsss::events;

namespace {

EventStream two_events() { return EventStream({4, 4}, {{1, 1, 0, 1}, {2, 2, 100, -1}}); }

}  // namespace

TEST(EventStream, RejectsZeroPolarity) {
  EXPECT_THROW(EventStream({4, 4}, {{0, 0, 0, 0}}), ArgumentError);
}

TEST(EventStream, RejectsOutOfBounds) {
  EXPECT_THROW(EventStream({4, 4}, {{4, 0, 0, 1}}), ArgumentError);
  EXPECT_THROW(EventStream({4, 4}, {{0, -1, 0, 1}}), ArgumentError);
}

TEST(EventStream, RejectsUnsorted) {
  EXPECT_THROW(EventStream({4, 4}, {{0, 0, 5, 1}, {0, 0, 4, 1}}), ArgumentError);
}

TEST(SliceWindow, WholeRangeIsIdentity) {
  Rng rng(1);
  const auto s = oracle::random_stream(16, 16, 300, 0, 5000, rng);
  EXPECT_EQ(slice_window(s, 0, kForever), s);
}

TEST(SliceWindow, CountMatchesLinearScan) {
  Rng rng(2);
  const auto s = oracle::random_stream(32, 32, 1000, 0, 1'000'000, rng);
  const auto w = slice_window(s, 200'000, 700'000);
  EXPECT_EQ(w.size(), oracle::count_in_window(s, 200'000, 700'000));
}

TEST(SliceWindow, HalfOpenBoundaries) {
  const EventStream s({4, 4}, {{0, 0, 10, 1}, {0, 0, 20, 1}, {0, 0, 30, 1}});
  const auto w = slice_window(s, 10, 30);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].t, 10);
  EXPECT_EQ(w[1].t, 20);
}

TEST(SliceWindow, RejectsEmptyInterval) {
  EXPECT_THROW(slice_window(two_events(), 5, 5), ArgumentError);
  EXPECT_THROW(slice_window(two_events(), 6, 5), ArgumentError);
}

TEST(SliceWindow, IsOrderPreservingSubsequence) {
  Rng rng(3);
  const auto s = oracle::random_stream(8, 8, 400, 0, 1000, rng);
  const auto w = slice_window(s, 250, 600);
  std::size_t j = 0;
  for (const auto& e : s)
    if (j < w.size() && e == w[j]) ++j;
  EXPECT_EQ(j, w.size());
}

TEST(SelectBackward, FiveTimesForwardCount) {
  std::vector<Event> ev;
  for (int i = 0; i < 20; ++i) ev.push_back({0, 0, i, 1});
  for (int i = 0; i < 100; ++i) ev.push_back({1, 1, 1000 + i, 1});
  const EventStream s({4, 4}, ev);
  const auto b = select_backward(s, 1000, 10, 5);
  ASSERT_EQ(b.size(), 50u);
  EXPECT_EQ(b[0].t, 1000);
  EXPECT_EQ(b[49].t, 1049);
}

TEST(SelectBackward, ZeroRequestIsEmpty) {
  Rng rng(4);
  const auto s = oracle::random_stream(8, 8, 50, 0, 1000, rng);
  EXPECT_TRUE(select_backward(s, 0, 0, 1).empty());
}

TEST(SelectBackward, MatchesFilterAndTake) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = oracle::random_stream(8, 8, 200, 0, 1000, rng);
    const auto T = static_cast<Timestamp>(rng.below(1000));
    const auto b = select_backward(s, T, 7, 3);
    const auto expected = oracle::filter_and_take(s, T, 21);
    EXPECT_EQ(std::vector<Event>(b.begin(), b.end()), expected);
  }
}

TEST(SelectBackward, FewerAvailableReturnsAll) {
  const EventStream s({4, 4}, {{0, 0, 5, 1}, {0, 0, 6, 1}});
  EXPECT_EQ(select_backward(s, 0, 10, 5).size(), 2u);
}

TEST(Reverse, TwoEventFlip) {
  const auto r = reverse(two_events());
  const EventStream expected({4, 4}, {{2, 2, 0, 1}, {1, 1, 100, -1}});
  EXPECT_EQ(r, expected);
}

TEST(Reverse, Involution) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = oracle::random_stream(16, 16, 300, 1000, 2000, rng);
    EXPECT_EQ(reverse(reverse(s)), s);
  }
  const EventStream empty({4, 4}, {});
  EXPECT_EQ(reverse(empty), empty);
  const EventStream single({4, 4}, {{1, 2, 7, 1}});
  EXPECT_EQ(reverse(single), EventStream({4, 4}, {{1, 2, 7, -1}}));
}

TEST(Reverse, PerEventRemap) {
  Rng rng(7);
  const auto s = oracle::random_stream(16, 16, 500, 100, 9000, rng);
  const auto r = reverse(s);
  std::multiset<Timestamp> expected, got;
  long psum = 0, rsum = 0;
  std::map<std::pair<int, int>, int> per_pixel, per_pixel_r;
  for (const auto& e : s) {
    expected.insert(s.t_min() + s.t_max() - e.t);
    psum += e.p;
    ++per_pixel[{e.x, e.y}];
  }
  for (const auto& e : r) {
    got.insert(e.t);
    rsum += e.p;
    ++per_pixel_r[{e.x, e.y}];
  }
  EXPECT_EQ(got, expected);
  EXPECT_EQ(rsum, -psum);
  EXPECT_EQ(per_pixel, per_pixel_r);
  EXPECT_EQ(r.sensor(), s.sensor());
}

TEST(Voxelize, EmptyStreamIsZero) {
  const auto g = voxelize(EventStream({4, 3}, {}), {5, {4, 3}, 0, 100});
  EXPECT_EQ(g.data.shape(), (std::vector<std::size_t>{5, 3, 4}));
  for (double v : g.data.values()) EXPECT_EQ(v, 0.0);
}

TEST(Voxelize, MidpointSplitsEvenly) {
  const EventStream s({4, 4}, {{2, 1, 50, 1}});
  const auto g = voxelize(s, {2, {4, 4}, 0, 100});
  EXPECT_DOUBLE_EQ(g.data(0, 1, 2), 0.5);
  EXPECT_DOUBLE_EQ(g.data(1, 1, 2), 0.5);
}

TEST(Voxelize, EndpointsLandInTerminalBins) {
  const EventStream s({4, 4}, {{0, 0, 0, 1}, {1, 0, 100, -1}});
  const auto g = voxelize(s, {5, {4, 4}, 0, 100});
  EXPECT_DOUBLE_EQ(g.data(0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.data(4, 0, 1), -1.0);
}

TEST(Voxelize, RejectsOutOfWindowEvents) {
  const EventStream s({4, 4}, {{0, 0, 150, 1}});
  EXPECT_THROW(voxelize(s, {5, {4, 4}, 0, 100}), ArgumentError);
}

TEST(Voxelize, RejectsBadConfig) {
  EXPECT_THROW(voxelize(EventStream({4, 4}, {}), {0, {4, 4}, 0, 100}), ArgumentError);
  EXPECT_THROW(voxelize(EventStream({4, 4}, {}), {5, {4, 4}, 100, 100}), ArgumentError);
}

TEST(Voxelize, MassConservation) {
  Rng rng(8);
  const auto s = oracle::random_stream(32, 32, 10000, 0, 100000, rng);
  const auto g = voxelize(s, {5, {32, 32}, 0, 100000});
  double total = 0;
  long psum = 0;
  for (double v : g.data.values()) total += v;
  for (const auto& e : s) psum += e.p;
  EXPECT_NEAR(total, static_cast<double>(psum), 1e-5 * std::max(1.0, std::abs(static_cast<double>(psum))));
}

TEST(Voxelize, MatchesPerEventEnumeration) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const int B = rng.uniform_int(1, 7);
    const auto s = oracle::random_stream(8, 6, 300, 10, 5000, rng);
    const auto g = voxelize(s, {B, {8, 6}, 10, 5000});
    const auto o = oracle::voxelize(s, B, 10, 5000);
    for (std::size_t i = 0; i < o.size(); ++i) EXPECT_NEAR(g.data[i], o[i], 1e-12);
  }
}

TEST(Voxelize, Additive) {
  Rng rng(10);
  const auto a = oracle::random_stream(8, 8, 200, 0, 1000, rng);
  const auto b = oracle::random_stream(8, 8, 200, 0, 1000, rng);
  std::vector<Event> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  std::stable_sort(all.begin(), all.end(), [](auto& x, auto& y) { return x.t < y.t; });
  const VoxelizationConfig cfg{5, {8, 8}, 0, 1000};
  const auto ga = voxelize(a, cfg), gb = voxelize(b, cfg), gu = voxelize(EventStream({8, 8}, all), cfg);
  for (std::size_t i = 0; i < gu.data.size(); ++i) EXPECT_NEAR(gu.data[i], ga.data[i] + gb.data[i], 1e-6);
}

TEST(RenderFrame, EmptyIsUniformBackground) {
  const auto img = render_frame(EventStream({5, 4}, {}));
  EXPECT_EQ(img.width, 5);
  EXPECT_EQ(img.height, 4);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    EXPECT_EQ(img.pixels[i], kBackground[0]);
    EXPECT_EQ(img.pixels[i + 1], kBackground[1]);
    EXPECT_EQ(img.pixels[i + 2], kBackground[2]);
  }
}

TEST(RenderFrame, SingleEventColorsOnePixel) {
  const auto img = render_frame(EventStream({8, 8}, {{3, 4, 0, 1}}));
  int colored = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const auto* px = &img.pixels[(static_cast<std::size_t>(y) * 8 + x) * 3];
      if (px[0] != kBackground[0] || px[1] != kBackground[1] || px[2] != kBackground[2]) {
        ++colored;
        EXPECT_EQ(x, 3);
        EXPECT_EQ(y, 4);
      }
    }
  EXPECT_EQ(colored, 1);
}

TEST(RenderFrame, ColoredSetEqualsNonzeroNetMass) {
  Rng rng(11);
  const auto s = oracle::random_stream(12, 10, 400, 0, 1000, rng);
  const auto img = render_frame(s);
  std::set<std::pair<int, int>> colored;
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 12; ++x) {
      const auto* px = &img.pixels[(static_cast<std::size_t>(y) * 12 + x) * 3];
      if (px[0] != kBackground[0] || px[1] != kBackground[1] || px[2] != kBackground[2]) colored.insert({x, y});
    }
  EXPECT_EQ(colored, oracle::nonzero_mass_pixels(s));
  EXPECT_EQ(render_frame(s).pixels, img.pixels);
}

TEST(EventFile, RoundTrip) {
  Rng rng(12);
  const auto s = oracle::random_stream(20, 10, 100, 0, 1000, rng);
  std::stringstream ss;
  write_events(ss, s);
  EXPECT_EQ(read_events(ss), s);
}

TEST(EventFile, RejectsBadInput) {
  std::stringstream no_header("1 2 3 1\n");
  EXPECT_THROW(read_events(no_header), FormatError);
  std::stringstream bad_line("# width=4 height=4\n1 2 x 1\n");
  EXPECT_THROW(read_events(bad_line), FormatError);
  std::stringstream bad_polarity("# width=4 height=4\n1 2 3 0\n");
  EXPECT_THROW(read_events(bad_polarity), FormatError);
}
