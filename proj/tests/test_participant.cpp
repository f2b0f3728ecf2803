#include <doctest.h>

#include <memory>
#include <random>

#include "gen.hpp"
#include "meddds/sim_driver.hpp"

using namespace meddds;
using namespace meddds::pubsub;
using transport::FaultProfile;
using transport::SimNetwork;

namespace {

const TopicDescription kTopic{"xray", "XrayImageSample"};

QoS qos(Reliability r, std::size_t depth = 16) { return QoS{r, depth, 50}; }

// N participants on one simulated network, all driven in virtual time.
struct World {
  explicit World(FaultProfile profile, std::size_t n = 2, ParticipantConfig base = {}) : net(clock, profile) {
    for (std::size_t i = 0; i < n; ++i) {
      endpoints.push_back(net.create_endpoint());
      ParticipantConfig cfg = base;
      cfg.guid_seed = 100 + i;
      cfg.name = "p" + std::to_string(i);
      participants.push_back(std::make_unique<Participant>(*endpoints.back(), clock, cfg));
      driver.add(*participants.back());
    }
  }

  Participant& operator[](std::size_t i) { return *participants[i]; }

  ManualClock clock;
  SimNetwork net;
  SimulationDriver driver{clock, net};
  std::vector<std::unique_ptr<transport::SimTransport>> endpoints;
  std::vector<std::unique_ptr<Participant>> participants;
};

struct Received {
  std::vector<SequenceNumber> seqs;
  std::vector<Bytes> payloads;
  DataCallback callback() {
    return [this](const SampleInfo& info, Bytes payload) {
      seqs.push_back(info.seq);
      payloads.push_back(std::move(payload));
    };
  }
};

Bytes numbered_payload(SequenceNumber i, std::size_t size) {
  Bytes b(size);
  for (std::size_t k = 0; k < size; ++k) b[k] = static_cast<std::uint8_t>(i * 31 + k);
  return b;
}

// Publishes `count` samples, letting the simulation run whenever the
// writer's history is full of unacknowledged samples.
void publish_all(World& w, Writer& writer, std::size_t count, std::size_t size) {
  for (std::size_t i = 1; i <= count; ++i) {
    if (!writer.can_write()) REQUIRE(w.driver.run_until([&] { return writer.can_write(); }, 120'000'000));
    writer.write(numbered_payload(i, size));
    w.driver.run_for_ms(1);
  }
}

}  // namespace

TEST_CASE("two participants discover each other within two announce periods") {
  World w(FaultProfile{});
  const auto t0 = w.driver.now_us();
  const bool found =
      w.driver.run_until([&] { return w[0].known_participants() == 1 && w[1].known_participants() == 1; }, 2'000'000);
  CHECK(found);
  CHECK(w.driver.now_us() - t0 <= 2'000'000);
}

TEST_CASE("a lone participant matches nothing") {
  World w(FaultProfile{}, 1);
  Received got;
  auto writer = w[0].create_writer(kTopic, qos(Reliability::Reliable));
  auto reader = w[0].create_reader(kTopic, qos(Reliability::Reliable), got.callback());
  w.driver.run_for_ms(5'000);
  CHECK(w[0].known_participants() == 0);
  CHECK(w[0].matched_endpoints() == 0);
  CHECK(writer.matched_readers() == 0);
  CHECK(reader.matched_writers() == 0);
}

TEST_CASE("lease expiry unmatches a silent participant") {
  World w(FaultProfile{});
  Received got;
  auto writer = w[0].create_writer(kTopic, qos(Reliability::Reliable));
  auto reader = w[1].create_reader(kTopic, qos(Reliability::Reliable), got.callback());
  REQUIRE(w.driver.run_until([&] { return writer.matched_readers() == 1 && reader.matched_writers() == 1; },
                             2'000'000));

  w[1].set_announcing(false);
  const auto silent_since = w.driver.now_us();
  w.driver.run_for_ms(9'000);
  CHECK(writer.matched_readers() == 1);
  REQUIRE(w.driver.run_until([&] { return w[0].known_participants() == 0; }, 3'000'000));
  CHECK(writer.matched_readers() == 0);
  CHECK(w.driver.now_us() - silent_since <= 11'000'000);

  w[1].set_announcing(true);
  CHECK(w.driver.run_until([&] { return writer.matched_readers() == 1; }, 2'000'000));
}

TEST_CASE("matching requires topic, type and compatible reliability") {
  struct Case {
    TopicDescription reader_topic;
    Reliability writer_rel;
    Reliability reader_rel;
    bool match;
  };
  const std::vector<Case> cases{
      {kTopic, Reliability::Reliable, Reliability::Reliable, true},
      {kTopic, Reliability::Reliable, Reliability::BestEffort, true},
      {kTopic, Reliability::BestEffort, Reliability::BestEffort, true},
      {kTopic, Reliability::BestEffort, Reliability::Reliable, false},
      {{"xray", "OtherType"}, Reliability::Reliable, Reliability::Reliable, false},
      {{"other", "XrayImageSample"}, Reliability::Reliable, Reliability::Reliable, false},
  };
  for (const auto& c : cases) {
    World w(FaultProfile{});
    Received got;
    auto writer = w[0].create_writer(kTopic, qos(c.writer_rel));
    auto reader = w[1].create_reader(c.reader_topic, qos(c.reader_rel), got.callback());
    w.driver.run_for_ms(3'000);
    CHECK(writer.matched_readers() == (c.match ? 1u : 0u));
    // Matching is symmetric.
    CHECK(reader.matched_writers() == writer.matched_readers());
  }
}

TEST_CASE("sequence numbers, payload integrity and datagram counts") {
  World w(FaultProfile{});
  Received got;
  auto writer = w[0].create_writer(kTopic, qos(Reliability::Reliable));
  [[maybe_unused]] auto reader = w[1].create_reader(kTopic, qos(Reliability::Reliable), got.callback());
  REQUIRE(w.driver.run_until([&] { return writer.matched_readers() == 1; }, 2'000'000));

  CHECK(writer.write(numbered_payload(1, 10)) == 1);
  CHECK(writer.write(numbered_payload(2, 10)) == 2);
  CHECK(writer.write(numbered_payload(3, 10)) == 3);

  auto before = w[0].stats().data_sent;
  const Bytes big = numbered_payload(4, 262'144);
  CHECK(writer.write(big) == 4);
  CHECK(w[0].stats().data_sent - before == 219);

  before = w[0].stats().data_sent;
  CHECK(writer.write(numbered_payload(5, 500)) == 5);
  CHECK(w[0].stats().data_sent - before == 1);

  REQUIRE(w.driver.run_until([&] { return got.seqs.size() == 5; }, 5'000'000));
  CHECK(got.seqs == std::vector<SequenceNumber>{1, 2, 3, 4, 5});
  CHECK(got.payloads[3] == big);
  CHECK(got.payloads[4] == numbered_payload(5, 500));

  CHECK_THROWS_AS(writer.write(Bytes{}), PubSubError);
}

TEST_CASE("reliable delivery is exactly-once and in order under loss and reorder") {
  std::mt19937_64 rng(5150);
  for (int run = 0; run < 6; ++run) {
    const double loss = 0.05 * static_cast<double>(testing::uniform(rng, 0, 8));
    const double reorder = 0.05 * static_cast<double>(testing::uniform(rng, 0, 6));
    const std::uint32_t delay = static_cast<std::uint32_t>(testing::uniform(rng, 0, 30));
    const std::size_t size = testing::uniform(rng, 1, 6'000);
    const std::size_t depth = testing::uniform(rng, 1, 32);
    CAPTURE(run);
    CAPTURE(loss);
    CAPTURE(size);
    CAPTURE(depth);

    World w(FaultProfile{loss, 0, delay, reorder, rng()});
    Received got;
    auto writer = w[0].create_writer(kTopic, qos(Reliability::Reliable, depth));
    auto reader = w[1].create_reader(kTopic, qos(Reliability::Reliable), got.callback());
    REQUIRE(w.driver.run_until([&] { return writer.matched_readers() == 1 && reader.matched_writers() == 1; },
                               60'000'000));
    publish_all(w, writer, 150, size);
    REQUIRE(w.driver.run_until([&] { return writer.all_acknowledged(); }, 120'000'000));

    REQUIRE(got.seqs.size() == 150);
    for (std::size_t i = 0; i < 150; ++i) {
      CHECK(got.seqs[i] == i + 1);
      CHECK(got.payloads[i] == numbered_payload(i + 1, size));
    }
    CHECK(w[1].stats().samples_skipped == 0);
  }
}

TEST_CASE("best-effort delivery is monotone and at-most-once") {
  World w(FaultProfile{0.2, 0, 20, 0.3, 77});
  Received got;
  auto writer = w[0].create_writer(kTopic, qos(Reliability::BestEffort));
  auto reader = w[1].create_reader(kTopic, qos(Reliability::BestEffort), got.callback());
  REQUIRE(w.driver.run_until([&] { return writer.matched_readers() == 1 && reader.matched_writers() == 1; },
                             60'000'000));
  for (SequenceNumber i = 1; i <= 300; ++i) {
    writer.write(numbered_payload(i, 2'000));
    w.driver.run_for_ms(2);
  }
  w.driver.run_for_ms(1'000);
  CHECK_FALSE(got.seqs.empty());
  CHECK(got.seqs.size() < 300);
  for (std::size_t i = 1; i < got.seqs.size(); ++i) CHECK(got.seqs[i] > got.seqs[i - 1]);
  for (std::size_t i = 0; i < got.seqs.size(); ++i) CHECK(got.payloads[i] == numbered_payload(got.seqs[i], 2'000));
  CHECK(w[0].stats().heartbeats_sent == 0);
  CHECK(w[1].stats().acknacks_sent == 0);
}

TEST_CASE("heartbeats stop once everything is acknowledged") {
  World w(FaultProfile{0.1, 0, 5, 0.0, 3});
  Received got;
  auto writer = w[0].create_writer(kTopic, qos(Reliability::Reliable));
  auto reader = w[1].create_reader(kTopic, qos(Reliability::Reliable), got.callback());
  REQUIRE(w.driver.run_until([&] { return writer.matched_readers() == 1 && reader.matched_writers() == 1; },
                             60'000'000));
  publish_all(w, writer, 10, 100);
  REQUIRE(w.driver.run_until([&] { return writer.all_acknowledged(); }, 60'000'000));
  w.driver.run_for_ms(200);
  const auto hb = w[0].stats().heartbeats_sent;
  const auto data = w[0].stats().data_sent + w[0].stats().data_resent;
  w.driver.run_for_ms(10'000);
  CHECK(w[0].stats().heartbeats_sent == hb);
  CHECK(w[0].stats().data_sent + w[0].stats().data_resent == data);
}

TEST_CASE("a late reader receives the retained history and skips the rest") {
  World w(FaultProfile{});
  auto writer = w[0].create_writer(kTopic, qos(Reliability::Reliable, 4));
  for (SequenceNumber i = 1; i <= 10; ++i) writer.write(numbered_payload(i, 50));

  Received got;
  [[maybe_unused]] auto reader = w[1].create_reader(kTopic, qos(Reliability::Reliable), got.callback());
  REQUIRE(w.driver.run_until([&] { return got.seqs.size() == 4; }, 10'000'000));
  CHECK(got.seqs == std::vector<SequenceNumber>{7, 8, 9, 10});
  CHECK(w[1].stats().samples_skipped == 6);
  CHECK(w.driver.run_until([&] { return writer.all_acknowledged(); }, 1'000'000));
}

TEST_CASE("a full history of unacknowledged samples refuses writes") {
  World w(FaultProfile{});
  Received got;
  auto writer = w[0].create_writer(kTopic, qos(Reliability::Reliable, 2));
  auto reader = w[1].create_reader(kTopic, qos(Reliability::Reliable), got.callback());
  REQUIRE(w.driver.run_until([&] { return writer.matched_readers() == 1 && reader.matched_writers() == 1; },
                             2'000'000));
  writer.write(numbered_payload(1, 8));
  writer.write(numbered_payload(2, 8));
  CHECK_FALSE(writer.can_write());
  try {
    writer.write(numbered_payload(3, 8));
    FAIL("expected HistoryFull");
  } catch (const PubSubError& e) {
    CHECK(e.code() == PubSubErrc::HistoryFull);
  }
  REQUIRE(w.driver.run_until([&] { return writer.can_write(); }, 2'000'000));
  CHECK(writer.write(numbered_payload(3, 8)) == 3);
}

TEST_CASE("callbacks may publish replies") {
  World w(FaultProfile{0.1, 0, 10, 0.1, 11});
  const TopicDescription reply_topic{"result", "ClassificationResult"};

  auto reply_writer = w[1].create_writer(reply_topic, qos(Reliability::Reliable));
  [[maybe_unused]] auto request_reader = w[1].create_reader(kTopic, qos(Reliability::Reliable),
                                           [&](const SampleInfo&, Bytes payload) { reply_writer.write(payload); });
  Received replies;
  auto request_writer = w[0].create_writer(kTopic, qos(Reliability::Reliable));
  [[maybe_unused]] auto reply_reader = w[0].create_reader(reply_topic, qos(Reliability::Reliable), replies.callback());

  REQUIRE(w.driver.run_until([&] { return request_writer.matched_readers() == 1 && reply_writer.matched_readers() == 1; },
                             60'000'000));
  publish_all(w, request_writer, 12, 3'000);
  REQUIRE(w.driver.run_until([&] { return replies.seqs.size() == 12; }, 60'000'000));
  for (std::size_t i = 0; i < 12; ++i) CHECK(replies.payloads[i] == numbered_payload(i + 1, 3'000));
}

TEST_CASE("simulated sessions are reproducible") {
  auto trace = [] {
    World w(FaultProfile{0.25, 0, 15, 0.2, 4242});
    std::vector<std::pair<SequenceNumber, std::uint64_t>> out;
    auto writer = w[0].create_writer(kTopic, qos(Reliability::Reliable, 8));
    [[maybe_unused]] auto reader = w[1].create_reader(kTopic, qos(Reliability::Reliable),
                                     [&](const SampleInfo& info, Bytes) { out.emplace_back(info.seq, info.reception_us); });
    w.driver.run_until([&] { return writer.matched_readers() == 1; }, 60'000'000);
    publish_all(w, writer, 40, 2'500);
    w.driver.run_until([&] { return writer.all_acknowledged(); }, 60'000'000);
    return out;
  };
  const auto a = trace();
  CHECK(a.size() == 40);
  CHECK(a == trace());
}

TEST_CASE("real-time threads over the simulated network") {
  WallClock clock;
  SimNetwork net(clock, FaultProfile{0.1, 0, 2, 0.05, 8});
  auto ea = net.create_endpoint();
  auto eb = net.create_endpoint();
  ParticipantConfig cfg;
  cfg.announce_period_ms = 100;
  Participant a(*ea, clock, cfg), b(*eb, clock, cfg);
  std::mutex mu;
  std::vector<SequenceNumber> got;
  auto writer = a.create_writer(kTopic, qos(Reliability::Reliable, 4));
  [[maybe_unused]] auto reader = b.create_reader(kTopic, qos(Reliability::Reliable), [&](const SampleInfo& info, Bytes) {
    std::lock_guard lock(mu);
    got.push_back(info.seq);
  });
  a.start();
  b.start();
  REQUIRE(writer.wait_for_matched(1, std::chrono::seconds(5)));
  for (int i = 1; i <= 50; ++i) writer.write(numbered_payload(i, 1'500));  // blocks when the history fills
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
  while (!writer.all_acknowledged() && std::chrono::steady_clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  a.stop();
  b.stop();
  std::lock_guard lock(mu);
  REQUIRE(got.size() == 50);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == i + 1);
}
