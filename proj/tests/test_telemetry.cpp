#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "gen.hpp"
#include "meddds/telemetry.hpp"

using namespace meddds;
using namespace meddds::telemetry;

namespace {

SampleId id(std::uint8_t n) {
  SampleId s{};
  s[15] = n;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("latency pairs") {
  LatencyRecorder rec;
  rec.record_publish(id(1), 100'000);
  CHECK(rec.pending() == 1);
  const auto r = rec.record_result(id(1), 165'000);
  REQUIRE(r);
  CHECK(r->rtt_us() == 65'000);
  CHECK(rec.pending() == 0);

  CHECK_FALSE(rec.record_result(id(9), 1).has_value());
  CHECK_FALSE(rec.record_result(id(1), 200'000).has_value());  // already answered
  CHECK(rec.orphans() == 2);
  CHECK(rec.records().size() == 1);
}

TEST_CASE("a result stamped before its publish is an orphan") {
  LatencyRecorder rec;
  rec.record_publish(id(1), 500);
  CHECK_FALSE(rec.record_result(id(1), 499).has_value());
  CHECK(rec.orphans() == 1);
}

TEST_CASE("latency statistics") {
  const std::vector<std::uint64_t> one{65'000};
  const auto s1 = latency_stats(one);
  CHECK(s1.count == 1);
  CHECK(s1.mean_us == 65'000);
  CHECK(s1.p50_us == 65'000);
  CHECK(s1.p95_us == 65'000);

  const std::vector<std::uint64_t> four{40, 10, 30, 20};
  const auto s4 = latency_stats(four);
  CHECK(s4.p50_us == 20);
  CHECK(s4.mean_us == 25);
  CHECK(s4.p95_us == 40);
  CHECK(s4.max_us == 40);

  const std::vector<std::uint64_t> two{60'000, 70'000};
  CHECK(latency_stats(two).mean_us == 65'000);

  try {
    latency_stats(std::vector<std::uint64_t>{});
    FAIL("expected EmptyInput");
  } catch (const TelemetryError& e) {
    CHECK(e.code() == TelemetryErrc::EmptyInput);
  }
}

TEST_CASE("nearest rank matches a counting oracle") {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 300; ++i) {
    std::vector<std::uint64_t> v(testing::uniform(rng, 1, 60));
    for (auto& x : v) x = testing::uniform(rng, 0, 1000);
    for (int pct : {1, 5, 25, 50, 90, 95, 99, 100}) {
      // Smallest value with at least pct% of the samples at or below it.
      std::uint64_t oracle = 0;
      auto sorted = v;
      std::sort(sorted.begin(), sorted.end());
      for (auto x : sorted) {
        const auto at_or_below = static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [&](auto y) { return y <= x; }));
        if (at_or_below * 100 >= static_cast<std::size_t>(pct) * v.size()) {
          oracle = x;
          break;
        }
      }
      CHECK(nearest_rank(v, pct / 100.0) == oracle);
    }
  }
}

TEST_CASE("throughput windows") {
  SUBCASE("3,200 bytes within one second") {
    std::vector<ThroughputEvent> ev;
    for (int i = 0; i < 32; ++i) ev.push_back({static_cast<std::uint64_t>(i) * 30'000, 100, 1});
    const auto w = throughput_profile(ev);
    REQUIRE(w.size() == 1);
    CHECK(w[0].bytes == 3'200);
    CHECK(w[0].bytes_per_sec() == 3'200.0);
    CHECK(w[0].packets == 32);
  }
  SUBCASE("empty interior windows") {
    const auto w = throughput_profile({{2'500'000, 300, 0}, {500'000, 100, 0}});
    REQUIRE(w.size() == 3);
    CHECK(w[0].bytes == 100);
    CHECK(w[1].bytes == 0);
    CHECK(w[2].bytes == 300);
    CHECK(w[0].window_start_us == 500'000);
    CHECK(w[2].window_start_us == 2'500'000);
  }
  SUBCASE("no events") { CHECK(throughput_profile({}).empty()); }
  SUBCASE("explicit origin") {
    const auto w = throughput_profile({{1'500'000, 10, 0}}, 1'000'000, 0);
    REQUIRE(w.size() == 2);
    CHECK(w[0].bytes == 0);
    CHECK(w[1].window_start_us == 1'000'000);
  }
}

TEST_CASE("constant-rate stream reports the rate in every window") {
  std::vector<ThroughputEvent> ev;
  for (std::uint64_t sec = 0; sec < 10; ++sec)
    for (std::uint64_t k = 0; k < 8; ++k) ev.push_back({sec * 1'000'000 + k * 125'000, 400, 1});
  const auto w = throughput_profile(ev);
  REQUIRE(w.size() == 10);
  for (const auto& x : w) CHECK(x.bytes_per_sec() == 3'200.0);
}

TEST_CASE("throughput conservation and stride on random streams") {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 200; ++i) {
    std::vector<ThroughputEvent> ev(testing::uniform(rng, 1, 300));
    std::uint64_t bytes = 0, packets = 0;
    for (auto& e : ev) {
      e = {testing::uniform(rng, 0, 20'000'000), testing::uniform(rng, 0, 5'000), testing::uniform(rng, 0, 3)};
      bytes += e.bytes;
      packets += e.packets;
    }
    const std::uint64_t len = testing::uniform(rng, 1, 3'000'000);
    const auto w = throughput_profile(ev, len);
    std::uint64_t wb = 0, wp = 0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      wb += w[k].bytes;
      wp += w[k].packets;
      if (k > 0) CHECK(w[k].window_start_us == w[k - 1].window_start_us + len);
    }
    CHECK(wb == bytes);
    CHECK(wp == packets);
  }
}

TEST_CASE("random interleavings never yield negative rtts") {
  std::mt19937_64 rng(77);
  LatencyRecorder rec;
  std::uint64_t t = 0;
  for (int i = 0; i < 5'000; ++i) {
    t += testing::uniform(rng, 0, 10);
    const auto sid = id(static_cast<std::uint8_t>(testing::uniform(rng, 0, 20)));
    if (testing::uniform(rng, 0, 1)) {
      rec.record_publish(sid, t);
    } else if (auto r = rec.record_result(sid, t)) {
      CHECK(r->t_result_us >= r->t_publish_us);
    }
  }
  const auto recs = rec.records();
  if (!recs.empty()) {
    const auto s = latency_stats(recs);
    std::uint64_t sum = 0;
    for (const auto& r : recs) sum += r.rtt_us();
    CHECK(std::abs(static_cast<double>(sum) - s.mean_us * static_cast<double>(s.count)) < 1.0);
  }
}

TEST_CASE("recorders accept concurrent events") {
  LatencyRecorder lat;
  ThroughputRecorder thr;
  std::vector<std::thread> threads;
  for (std::uint8_t t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (std::uint8_t i = 0; i < 50; ++i) {
        SampleId s{};
        s[0] = t;
        s[1] = i;
        lat.record_publish(s, i);
        lat.record_result(s, i + 10u);
        thr.add(i, 10, 1);
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(lat.records().size() == 200);
  CHECK(thr.total_bytes() == 2'000);
  CHECK(thr.total_packets() == 200);
}

TEST_CASE("CSV export") {
  const auto dir = std::filesystem::temp_directory_path() / ("meddds-tel-" + samples::to_hex(samples::random_sample_id()));
  std::filesystem::create_directories(dir);

  export_csv(std::vector<LatencyRecord>{}, dir / "empty.csv");
  CHECK(slurp(dir / "empty.csv") == "sample_id,t_publish_us,t_result_us,rtt_us\n");
  export_csv(std::vector<ThroughputWindow>{}, dir / "empty_t.csv");
  CHECK(slurp(dir / "empty_t.csv") == "window_start_us,bytes,packets,bytes_per_sec\n");

  const std::vector<LatencyRecord> recs{{id(2), 300, 500}, {id(1), 100'000, 165'000}, {id(3), 300, 400}};
  export_csv(recs, dir / "lat.csv");
  const std::string text = slurp(dir / "lat.csv");
  CHECK(text ==
        "sample_id,t_publish_us,t_result_us,rtt_us\n"
        "00000000000000000000000000000002,300,500,200\n"
        "00000000000000000000000000000003,300,400,100\n"
        "00000000000000000000000000000001,100000,165000,65000\n");
  export_csv(std::vector<LatencyRecord>{recs[2], recs[0], recs[1]}, dir / "lat2.csv");
  CHECK(slurp(dir / "lat2.csv") == text);

  export_csv(std::vector<ThroughputWindow>{{0, 1'000'000, 3'200, 4}, {1'000'000, 1'000'000, 1'234, 1}},
             dir / "thr.csv");
  CHECK(slurp(dir / "thr.csv") ==
        "window_start_us,bytes,packets,bytes_per_sec\n"
        "0,3200,4,3200\n"
        "1000000,1234,1,1234\n");

  try {
    export_csv(recs, dir / "no" / "such" / "dir.csv");
    FAIL("expected IoFailure");
  } catch (const TelemetryError& e) {
    CHECK(e.code() == TelemetryErrc::IoFailure);
  }
  std::filesystem::remove_all(dir);
}
