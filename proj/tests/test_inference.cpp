#include <doctest.h>

#include <cmath>
#include <random>

#include "gen.hpp"
#include "meddds/inference_node.hpp"
#include "meddds/sim_driver.hpp"

using namespace meddds;
using namespace meddds::inference;
using samples::Label;

namespace {

const std::string kAdapters = MEDDDS_FIXTURE_DIR "/adapters/";

XrayImageSample image(std::uint32_t w, std::uint32_t h, std::uint8_t fill = 0) {
  XrayImageSample s;
  s.sample_id = samples::random_sample_id();
  s.width = w;
  s.height = h;
  s.pixels.assign(std::size_t{w} * h, fill);
  return s;
}

// Bright only in quadrant q (0 TL, 1 TR, 2 BL, 3 BR).
XrayImageSample bright_quadrant(std::uint32_t w, std::uint32_t h, int q) {
  auto s = image(w, h);
  for (std::uint32_t y = 0; y < h; ++y)
    for (std::uint32_t x = 0; x < w; ++x) {
      const int qq = (y >= h / 2 ? 2 : 0) + (x >= w / 2 ? 1 : 0);
      if (qq == q) s.pixels[std::size_t{y} * w + x] = 255;
    }
  return s;
}

template <class F>
InferenceErrc inference_error(F&& f) {
  try {
    f();
  } catch (const InferenceError& e) {
    return e.code();
  }
  FAIL("expected an InferenceError");
  return InferenceErrc::AdapterIoFailure;
}

}  // namespace

TEST_CASE("quadrant features") {
  const Vec4 zero{0, 0, 0, 0}, one{1, 1, 1, 1};
  CHECK(quadrant_features(image(4, 4, 0)) == zero);
  CHECK(quadrant_features(image(4, 4, 255)) == one);
  CHECK(quadrant_features(bright_quadrant(4, 4, 2)) == Vec4{0, 0, 1, 0});

  // 3x3: the middle row and column belong to the bottom/right quadrants.
  auto odd = image(3, 3);
  odd.pixels = {10, 20, 30,  //
                40, 50, 60,  //
                70, 80, 90};
  const auto m = quadrant_features(odd);
  CHECK(m[0] == doctest::Approx(10.0 / 255));
  CHECK(m[1] == doctest::Approx((20.0 + 30) / 2 / 255));
  CHECK(m[2] == doctest::Approx((40.0 + 70) / 2 / 255));
  CHECK(m[3] == doctest::Approx((50.0 + 60 + 80 + 90) / 4 / 255));

  CHECK(inference_error([] { quadrant_features(image(1, 1)); }) == InferenceErrc::ImageTooSmall);
  CHECK(inference_error([] { quadrant_features(image(5, 1)); }) == InferenceErrc::ImageTooSmall);
}

TEST_CASE("quadrant model classification") {
  QuadrantLinearModel model;
  const auto flat = model.classify(image(4, 4, 0));
  for (double c : flat) CHECK(c == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(samples::argmax_label(flat) == Label::Covid19);

  // Oracle: with logits [0,0,4,0], p2 = e^4 / (e^4 + 3).
  const double e4 = std::exp(4.0);
  const double hi = e4 / (e4 + 3.0), lo = 1.0 / (e4 + 3.0);
  const auto c = model.classify(bright_quadrant(4, 4, 2));
  CHECK(std::abs(c[2] - hi) < 1e-12);
  for (int i : {0, 1, 3}) CHECK(std::abs(c[i] - lo) < 1e-12);
  CHECK(samples::argmax_label(c) == Label::LungOpacity);
  CHECK(c[2] == doctest::Approx(0.947915).epsilon(1e-6));
}

TEST_CASE("softmax properties") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> logit(-50, 50), shift(-1000, 1000);
  for (int i = 0; i < 1000; ++i) {
    const Vec4 z{logit(rng), logit(rng), logit(rng), logit(rng)};
    const double c = shift(rng);
    const Vec4 a = softmax(z), b = softmax(Vec4{z[0] + c, z[1] + c, z[2] + c, z[3] + c});
    double sum = 0;
    for (int k = 0; k < 4; ++k) {
      CHECK(a[k] >= 0);
      CHECK(std::abs(a[k] - b[k]) <= 1e-12);
      sum += a[k];
    }
    CHECK(std::abs(sum - 1) <= 1e-6);
  }
  // Large logits must not overflow.
  const Vec4 big = softmax({1000, 999, 0, 0});
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] > big[1]);
}

TEST_CASE("classification is deterministic and sums to one on random images") {
  QuadrantLinearModel model;
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    auto img = image(static_cast<std::uint32_t>(testing::uniform(rng, 2, 40)),
                     static_cast<std::uint32_t>(testing::uniform(rng, 2, 40)));
    img.pixels = testing::random_bytes(rng, img.pixels.size());
    const auto a = model.classify(img);
    CHECK(a == model.classify(img));
    CHECK(std::abs(a[0] + a[1] + a[2] + a[3] - 1) <= 1e-6);
  }
}

TEST_CASE("separable corpus is classified perfectly") {
  QuadrantLinearModel model;
  std::mt19937_64 rng(21);
  int correct = 0;
  for (int q = 0; q < 4; ++q) {
    for (int i = 0; i < 100; ++i) {
      const auto w = static_cast<std::uint32_t>(testing::uniform(rng, 2, 32));
      const auto h = static_cast<std::uint32_t>(testing::uniform(rng, 2, 32));
      if (samples::argmax_label(model.classify(bright_quadrant(w, h, q))) == static_cast<Label>(q)) ++correct;
    }
  }
  CHECK(correct == 400);
}

TEST_CASE("adapter response parsing") {
  CHECK(ExternalAdapter::parse_response("1 0.1 0.7 0.1 0.1\n") == samples::Confidences{0.1, 0.7, 0.1, 0.1});
  CHECK(ExternalAdapter::parse_response("0 0.25 0.25 0.25 0.25") == samples::Confidences{0.25, 0.25, 0.25, 0.25});
  for (const char* bad : {"1 0.5 0.5 0.5 0.5", "0 0.1 0.7 0.1 0.1", "1 0.1 0.7 0.1", "4 0.1 0.7 0.1 0.1",
                          "x 0.1 0.7 0.1 0.1", "1 0.1 0.7 0.1 0.1x", "1 -0.1 0.9 0.1 0.1", "", "1 0.1 0.7 0.1 0.1\n2"}) {
    CAPTURE(bad);
    CHECK(inference_error([&] { ExternalAdapter::parse_response(bad); }) == InferenceErrc::AdapterProtocolError);
  }
}

TEST_CASE("adapter process contract") {
  const auto img = bright_quadrant(8, 8, 3);

  SUBCASE("pass-through") {
    ExternalAdapter a(kAdapters + "echo_adapter.sh");
    CHECK(a.classify(img) == samples::Confidences{0.1, 0.7, 0.1, 0.1});
  }
  SUBCASE("bad sum") {
    ExternalAdapter a(kAdapters + "bad_sum_adapter.sh");
    CHECK(inference_error([&] { a.classify(img); }) == InferenceErrc::AdapterProtocolError);
  }
  SUBCASE("timeout") {
    ExternalAdapter a(kAdapters + "sleeping_adapter.sh", std::chrono::milliseconds(300));
    const auto start = std::chrono::steady_clock::now();
    CHECK(inference_error([&] { a.classify(img); }) == InferenceErrc::AdapterTimeout);
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(5));
  }
  SUBCASE("nonzero exit") {
    ExternalAdapter a(kAdapters + "failing_adapter.sh");
    CHECK(inference_error([&] { a.classify(img); }) == InferenceErrc::AdapterExitFailure);
  }
  SUBCASE("missing program") {
    ExternalAdapter a(kAdapters + "does_not_exist.sh");
    CHECK(inference_error([&] { a.classify(img); }) == InferenceErrc::AdapterExitFailure);
  }
  SUBCASE("an external model agrees with the built-in one") {
    ExternalAdapter a(kAdapters + "quadrant_adapter.py");
    QuadrantLinearModel model;
    std::mt19937_64 rng(4);
    for (int i = 0; i < 5; ++i) {
      auto x = image(9, 7);
      x.pixels = testing::random_bytes(rng, x.pixels.size());
      const auto ext = a.classify(x), own = model.classify(x);
      for (int k = 0; k < 4; ++k) CHECK(ext[k] == doctest::Approx(own[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("adapter command lookup") {
  CHECK(command_available(kAdapters + "echo_adapter.sh"));
  CHECK(command_available(kAdapters + "echo_adapter.sh --flag"));
  CHECK(command_available("sh -c true"));
  CHECK_FALSE(command_available(kAdapters + "does_not_exist.sh"));
  CHECK_FALSE(command_available("surely-not-a-command-anywhere"));
  CHECK_FALSE(command_available(""));
}

namespace {

struct NodeWorld {
  ManualClock clock;
  transport::SimNetwork net{clock, transport::FaultProfile{}};
  pubsub::SimulationDriver driver{clock, net};
  std::unique_ptr<transport::SimTransport> e0 = net.create_endpoint(), e1 = net.create_endpoint();
  pubsub::Participant doctor{*e0, clock, cfg(1)};
  pubsub::Participant infer{*e1, clock, cfg(2)};
  QuadrantLinearModel model;
  InferenceNode node{infer, clock, model, InferenceNodeOptions{wire::Reliability::Reliable, 8, 50, false}};
  std::vector<samples::ClassificationResult> results;
  pubsub::Writer images = doctor.create_writer(kImageTopic, pubsub::QoS{});
  pubsub::Reader reader = doctor.create_reader(kResultTopic, pubsub::QoS{}, [this](const pubsub::SampleInfo&, Bytes b) {
    results.push_back(samples::decode_result(b));
  });

  static pubsub::ParticipantConfig cfg(std::uint64_t seed) {
    pubsub::ParticipantConfig c;
    c.guid_seed = seed;
    return c;
  }

  NodeWorld() {
    driver.add(doctor);
    driver.add(infer);
    REQUIRE(driver.run_until([&] { return images.matched_readers() == 1 && node.writer().matched_readers() == 1; },
                             5'000'000));
  }

  bool step_until(const std::function<bool()>& done) {
    for (int i = 0; i < 100'000; ++i) {
      if (done()) return true;
      driver.run_for_ms(1);
      node.flush();
    }
    return done();
  }
};

}  // namespace

TEST_CASE("inference node answers each image with a correlated result") {
  NodeWorld w;
  const auto img = bright_quadrant(16, 16, 1);
  w.images.write(samples::encode_sample(img));
  REQUIRE(w.step_until([&] { return w.results.size() == 1; }));
  CHECK(w.results[0].sample_id == img.sample_id);
  CHECK(w.results[0].label == Label::Normal);
  CHECK(w.results[0].confidences == w.model.classify(img));
}

TEST_CASE("inference node preserves delivery order") {
  NodeWorld w;
  std::vector<samples::SampleId> sent;
  for (int i = 0; i < 10; ++i) {
    const auto img = bright_quadrant(8, 8, i % 4);
    sent.push_back(img.sample_id);
    REQUIRE(w.step_until([&] { return w.images.can_write(); }));
    w.images.write(samples::encode_sample(img));
  }
  REQUIRE(w.step_until([&] { return w.results.size() == 10; }));
  for (int i = 0; i < 10; ++i) {
    CHECK(w.results[i].sample_id == sent[i]);
    CHECK(w.results[i].label == static_cast<Label>(i % 4));
  }
}

TEST_CASE("inference node skips images the classifier rejects") {
  NodeWorld w;
  const auto a = image(4, 4), tiny = image(1, 1), b = image(4, 4, 200);
  for (const auto* img : {&a, &tiny, &b}) w.images.write(samples::encode_sample(*img));
  w.images.write(Bytes{1, 2, 3});  // not an image at all
  REQUIRE(w.step_until([&] { return w.results.size() == 2 && w.node.skipped() == 2; }));
  w.driver.run_for_ms(500);
  CHECK(w.results.size() == 2);
  CHECK(w.results[0].sample_id == a.sample_id);
  CHECK(w.results[1].sample_id == b.sample_id);
  CHECK(w.node.processed() == 2);
}

TEST_CASE("threaded inference node over real time") {
  WallClock clock;
  transport::SimNetwork net(clock, transport::FaultProfile{0.05, 0, 1, 0.05, 99});
  auto e0 = net.create_endpoint(), e1 = net.create_endpoint();
  pubsub::ParticipantConfig cfg;
  cfg.announce_period_ms = 100;
  pubsub::Participant doctor(*e0, clock, cfg), infer(*e1, clock, cfg);
  QuadrantLinearModel model;
  InferenceNode node(infer, clock, model);
  std::mutex mu;
  std::vector<samples::SampleId> got;
  auto images = doctor.create_writer(kImageTopic, pubsub::QoS{});
  auto results = doctor.create_reader(kResultTopic, pubsub::QoS{}, [&](const pubsub::SampleInfo&, Bytes b) {
    std::lock_guard lock(mu);
    got.push_back(samples::decode_result(b).sample_id);
  });
  doctor.start();
  infer.start();
  REQUIRE(images.wait_for_matched(1, std::chrono::seconds(5)));
  REQUIRE(results.wait_for_matched(1, std::chrono::seconds(5)));
  std::vector<samples::SampleId> sent;
  for (int i = 0; i < 30; ++i) {
    const auto img = bright_quadrant(64, 64, i % 4);
    sent.push_back(img.sample_id);
    images.write(samples::encode_sample(img));
  }
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(15);
  for (;;) {
    {
      std::lock_guard lock(mu);
      if (got.size() == sent.size() || std::chrono::steady_clock::now() > deadline) break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  doctor.stop();
  infer.stop();
  std::lock_guard lock(mu);
  CHECK(got == sent);
}
