#include "meddds/commands.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <ostream>
#include <thread>

namespace meddds::nodes {

namespace {

using std::chrono::milliseconds;
using Steady = std::chrono::steady_clock;

milliseconds remaining(Steady::time_point deadline) {
  return std::max(milliseconds(0), std::chrono::duration_cast<milliseconds>(deadline - Steady::now()));
}

bool adapter_ok(const ClassifierChoice& c, std::ostream& out) {
  if (c.adapter && !inference::command_available(*c.adapter)) {
    fmt::print(out, "error: adapter command not found: {}\n", *c.adapter);
    return false;
  }
  return true;
}

}  // namespace

int cmd_infer(const InferOptions& opts, const std::atomic<bool>& stop, std::ostream& out) {
  try {
    opts.config.validate();
  } catch (const std::exception& e) {
    fmt::print(out, "error: {}\n", e.what());
    return kUsageError;
  }
  if (!adapter_ok(opts.classifier, out)) return kUsageError;

  std::unique_ptr<transport::UdpTransport> udp;
  std::unique_ptr<pubsub::Participant> participant;
  try {
    transport::UdpTransport::Options o;
    o.port = opts.config.port;
    udp = std::make_unique<transport::UdpTransport>(o);
    participant = std::make_unique<pubsub::Participant>(*udp, WallClock::instance(),
                                                        opts.config.participant_config("inference"));
  } catch (const std::exception& e) {
    fmt::print(out, "error: cannot start inference node: {}\n", e.what());
    return kUsageError;
  }

  auto classifier = make_classifier(opts.classifier);
  inference::InferenceNodeOptions node_opts;
  node_opts.reliability = opts.config.reliability;
  node_opts.history_depth = opts.config.history_depth;
  node_opts.heartbeat_period_ms = opts.config.heartbeat_period_ms;
  inference::InferenceNode node(*participant, WallClock::instance(), *classifier, node_opts);
  participant->start();
  spdlog::info("inference node up: classifier={} group={} local={}", classifier->name(),
               opts.config.discovery_group.to_string(), udp->local_locator().to_string());

  while (!stop.load()) std::this_thread::sleep_for(milliseconds(50));

  participant->stop();
  spdlog::info("inference node down: processed={} skipped={}", node.processed(), node.skipped());
  return kOk;
}

int cmd_send(const SendOptions& opts, std::ostream& out) {
  std::vector<samples::XrayImageSample> images;
  try {
    opts.config.validate();
    for (const auto& p : opts.images) images.push_back(samples::load_pgm(p));
  } catch (const std::exception& e) {
    fmt::print(out, "error: {}\n", e.what());
    return kUsageError;
  }
  if (images.empty()) {
    fmt::print(out, "error: no images given\n");
    return kUsageError;
  }
  if (opts.config.simulated && !adapter_ok(opts.classifier, out)) return kUsageError;

  std::unique_ptr<DoctorSession> session;
  try {
    session = std::make_unique<DoctorSession>(opts.config, opts.classifier);
  } catch (const std::exception& e) {
    fmt::print(out, "error: cannot start doctor node: {}\n", e.what());
    return kUsageError;
  }
  DoctorNode& doctor = session->doctor();

  const auto start = Steady::now();
  if (!session->wait_ready(opts.timeout)) {
    fmt::print(out, "timeout: no inference node matched within {} ms\n", opts.timeout.count());
    return kTimeout;
  }

  eval::LabelTable predictions;
  for (std::size_t i = 0; i < images.size(); ++i) {
    // The first image shares its budget with discovery.
    const auto deadline = (i == 0 ? start : Steady::now()) + opts.timeout;
    const auto id = doctor.publish(images[i]);
    const auto r = doctor.wait_result(id, remaining(deadline));
    if (!r) {
      fmt::print(out, "timeout: no result for {} within {} ms\n", opts.images[i].string(), opts.timeout.count());
      return kTimeout;
    }
    const auto recs = doctor.latency().records();
    const auto rec = std::find_if(recs.begin(), recs.end(), [&](const auto& x) { return x.sample_id == id; });
    const double rtt_ms = rec == recs.end() ? 0.0 : static_cast<double>(rec->rtt_us()) / 1000.0;
    fmt::print(out, "label={} confidence={:.4f} rtt_ms={:.3f}\n", samples::label_name(r->label),
               r->confidences[static_cast<std::size_t>(r->label)], rtt_ms);
    predictions.emplace_back(opts.images[i].stem().string(), r->label);
  }

  if (opts.pred_out) {
    try {
      eval::write_label_csv(predictions, *opts.pred_out);
    } catch (const std::exception& e) {
      fmt::print(out, "error: {}\n", e.what());
      return kUsageError;
    }
  }
  return kOk;
}

BenchReport run_bench(const BenchOptions& opts, std::ostream& out) {
  BenchReport report;
  try {
    opts.config.validate();
    if (opts.size < 2) throw std::invalid_argument("image size must be at least 2");
    if (opts.count == 0) throw std::invalid_argument("count must be positive");
    std::filesystem::create_directories(opts.out_dir);
  } catch (const std::exception& e) {
    fmt::print(out, "error: {}\n", e.what());
    report.exit_code = kUsageError;
    return report;
  }
  if (opts.config.simulated && !adapter_ok(opts.classifier, out)) {
    report.exit_code = kUsageError;
    return report;
  }

  std::unique_ptr<DoctorSession> session;
  try {
    session = std::make_unique<DoctorSession>(opts.config, opts.classifier);
  } catch (const std::exception& e) {
    fmt::print(out, "error: cannot start doctor node: {}\n", e.what());
    report.exit_code = kUsageError;
    return report;
  }
  DoctorNode& doctor = session->doctor();
  if (!session->wait_ready(opts.timeout)) {
    fmt::print(out, "timeout: no inference node matched within {} ms\n", opts.timeout.count());
    report.exit_code = kTimeout;
    return report;
  }

  std::mt19937_64 rng(opts.seed);
  const auto t0 = Steady::now();
  for (std::size_t i = 0; i < opts.count; ++i) {
    if (opts.rate_per_sec > 0) {
      const auto due = t0 + std::chrono::duration_cast<Steady::duration>(
                                std::chrono::duration<double>(static_cast<double>(i) / opts.rate_per_sec));
      std::this_thread::sleep_until(due);
    }
    auto image = random_image(opts.size, rng);
    report.image_payload_size = samples::kImageHeaderSize + image.pixels.size();
    try {
      doctor.publish(std::move(image));
    } catch (const pubsub::PubSubError& e) {
      // Best-effort writers never block; reliable ones only fail after
      // the blocking limit.
      spdlog::warn("publish {} failed: {}", i, e.what());
      continue;
    }
    ++report.sent;
  }
  doctor.wait_results(report.sent, opts.timeout);
  session->stop();

  report.records = doctor.latency().records();
  report.completed = report.records.size();
  report.timeouts = doctor.latency().pending() + (opts.count - report.sent);
  report.orphans = doctor.latency().orphans();
  report.packets = session->packets();
  const auto events = session->traffic().events();
  report.windows = telemetry::throughput_profile(events);
  for (const auto& w : report.windows) report.payload_bytes += w.bytes;

  try {
    telemetry::export_csv(report.records, opts.out_dir / "latency.csv");
    telemetry::export_csv(report.windows, opts.out_dir / "throughput.csv");
  } catch (const std::exception& e) {
    fmt::print(out, "error: {}\n", e.what());
    report.exit_code = kUsageError;
    return report;
  }

  double mean_ms = 0, p95_ms = 0, mean_bps = 0;
  if (!report.records.empty()) {
    const auto s = telemetry::latency_stats(report.records);
    mean_ms = s.mean_us / 1000.0;
    p95_ms = static_cast<double>(s.p95_us) / 1000.0;
  }
  for (const auto& w : report.windows) mean_bps += w.bytes_per_sec();
  if (!report.windows.empty()) mean_bps /= static_cast<double>(report.windows.size());

  fmt::print(out, "n={} mean_rtt_ms={:.3f} p95_rtt_ms={:.3f} mean_throughput_Bps={:.1f} packets={}\n",
             report.completed, mean_ms, p95_ms, mean_bps, report.packets.total());
  fmt::print(out, "data_packets={} overhead_packets={} data_packets_per_exchange={:.2f}\n", report.packets.data,
             report.packets.overhead,
             report.completed ? static_cast<double>(report.packets.data) / static_cast<double>(report.completed) : 0.0);
  if (report.completed < opts.count) {
    fmt::print(out, "partial: completed={}/{} timeouts={} orphans={}\n", report.completed, opts.count,
               report.timeouts, report.orphans);
    report.exit_code = kPartial;
  }
  return report;
}

int cmd_bench(const BenchOptions& opts, std::ostream& out) { return run_bench(opts, out).exit_code; }

int cmd_split(const SplitOptions& opts, std::ostream& out) {
  try {
    const auto manifest = eval::read_manifest(opts.manifest);
    const auto split = eval::stratified_split(manifest, opts.spec);
    std::filesystem::create_directories(opts.out_dir);
    eval::write_manifest(split.train, opts.out_dir / "train.csv");
    eval::write_manifest(split.val, opts.out_dir / "val.csv");
    eval::write_manifest(split.test, opts.out_dir / "test.csv");
    fmt::print(out, "train={} val={} test={}\n", split.train.size(), split.val.size(), split.test.size());
  } catch (const std::exception& e) {
    fmt::print(out, "error: {}\n", e.what());
    return kUsageError;
  }
  return kOk;
}

int cmd_eval(const EvalOptions& opts, std::ostream& out) {
  try {
    const auto cm = eval::join_labels(eval::read_label_csv(opts.truth), eval::read_label_csv(opts.pred));
    fmt::print(out, "{}", eval::format_metrics(eval::metrics(cm)));
    if (opts.out) {
      std::ofstream f(*opts.out, std::ios::binary);
      f << "label";
      for (unsigned k = 0; k < samples::kNumClasses; ++k) f << ',' << samples::label_name(*samples::label_from_index(k));
      f << '\n';
      for (unsigned t = 0; t < samples::kNumClasses; ++t) {
        f << samples::label_name(*samples::label_from_index(t));
        for (unsigned p = 0; p < samples::kNumClasses; ++p) f << ',' << cm.counts[t][p];
        f << '\n';
      }
      if (!f) throw eval::EvalError(eval::EvalErrc::IoFailure, "cannot write " + opts.out->string());
    }
  } catch (const std::exception& e) {
    fmt::print(out, "error: {}\n", e.what());
    return kUsageError;
  }
  return kOk;
}

}  // namespace meddds::nodes
