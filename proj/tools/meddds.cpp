#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>

#include "meddds/commands.hpp"

using namespace meddds;
using namespace meddds::nodes;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

struct NetFlags {
  std::string group = transport::kDefaultDiscoveryGroup.to_string();
  std::uint16_t port = 0;
  std::string reliability = "reliable";
  std::size_t frag_size = wire::kDefaultFragSize;
  std::optional<double> sim_loss;
  std::uint64_t sim_seed = 1;
};

struct ClassifierFlags {
  bool builtin = false;
  std::optional<std::string> adapter;
};

void add_net_flags(CLI::App* cmd, NetFlags& f, bool with_sim) {
  cmd->add_option("--group", f.group, "discovery multicast group ip:port")->envname("MEDDDS_GROUP")->capture_default_str();
  cmd->add_option("--port", f.port, "unicast port, 0 picks one");
  cmd->add_option("--reliability", f.reliability, "reliable | best_effort")->capture_default_str();
  cmd->add_option("--frag-size", f.frag_size, "fragment size in bytes")->capture_default_str();
  if (with_sim) {
    cmd->add_option("--sim-loss", f.sim_loss, "run both nodes in-process over the simulator with this loss rate");
    cmd->add_option("--sim-seed", f.sim_seed, "simulator seed")->capture_default_str();
  }
}

void add_classifier_flags(CLI::App* cmd, ClassifierFlags& f) {
  auto* b = cmd->add_flag("--builtin", f.builtin, "use the built-in quadrant model");
  auto* a = cmd->add_option("--adapter", f.adapter, "external classifier command, called with a PGM path");
  b->excludes(a);
}

NodeConfig make_config(const NetFlags& f) {
  NodeConfig c;
  c.discovery_group = transport::Locator::parse(f.group);
  c.port = f.port;
  std::string r = f.reliability;
  for (auto& ch : r) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (r == "reliable") {
    c.reliability = wire::Reliability::Reliable;
  } else if (r == "best_effort" || r == "best-effort") {
    c.reliability = wire::Reliability::BestEffort;
  } else {
    throw std::invalid_argument("unknown reliability: " + f.reliability);
  }
  c.frag_size = f.frag_size;
  if (f.sim_loss) {
    transport::FaultProfile p;
    p.loss_probability = *f.sim_loss;
    p.seed = f.sim_seed;
    c.simulated = p;
  }
  return c;
}

ClassifierChoice make_choice(const ClassifierFlags& f) { return ClassifierChoice{f.adapter, {}}; }

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("meddds"));

  CLI::App app{"meddds: X-ray classification over a minimal publish/subscribe middleware"};
  app.require_subcommand(1);

  NetFlags net;
  ClassifierFlags cls;

  auto* infer = app.add_subcommand("infer", "run the inference node until interrupted");
  add_net_flags(infer, net, false);
  add_classifier_flags(infer, cls);

  auto* send = app.add_subcommand("send", "publish images and print each classification");
  std::vector<std::string> images;
  std::uint32_t send_timeout = 5'000;
  std::optional<std::string> send_out;
  send->add_option("images", images, "PGM files")->required();
  send->add_option("--timeout-ms", send_timeout, "per-image result timeout")->capture_default_str();
  send->add_option("--out", send_out, "write predictions CSV keyed by file stem");
  add_net_flags(send, net, true);
  add_classifier_flags(send, cls);

  auto* bench = app.add_subcommand("bench", "timed round trips with latency and throughput CSVs");
  BenchOptions bopts;
  std::uint32_t bench_timeout = 5'000;
  std::string bench_out = ".";
  bench->add_option("--count", bopts.count)->capture_default_str();
  bench->add_option("--rate", bopts.rate_per_sec, "images per second, 0 for back to back")->capture_default_str();
  bench->add_option("--size", bopts.size, "square image side")->capture_default_str();
  bench->add_option("--seed", bopts.seed, "image seed")->capture_default_str();
  bench->add_option("--out", bench_out, "output directory")->capture_default_str();
  bench->add_option("--timeout-ms", bench_timeout, "discovery and drain timeout")->capture_default_str();
  add_net_flags(bench, net, true);
  add_classifier_flags(bench, cls);

  auto* split = app.add_subcommand("split", "stratified train/val/test split of a manifest");
  SplitOptions sopts;
  std::string split_manifest, split_out = ".";
  split->add_option("--manifest", split_manifest, "path,label CSV")->required();
  split->add_option("--seed", sopts.spec.seed)->capture_default_str();
  split->add_option("--out", split_out, "output directory")->capture_default_str();

  auto* ev = app.add_subcommand("eval", "accuracy and macro precision/recall");
  std::string truth, pred;
  std::optional<std::string> eval_out;
  ev->add_option("--truth", truth, "sample_id,label CSV")->required();
  ev->add_option("--pred", pred, "sample_id,label CSV")->required();
  ev->add_option("--out", eval_out, "write the confusion matrix CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageError;
  }

  try {
    if (*infer) {
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      return cmd_infer(InferOptions{make_config(net), make_choice(cls)}, g_stop, std::cerr);
    }
    if (*send) {
      SendOptions o;
      o.config = make_config(net);
      o.classifier = make_choice(cls);
      o.images.assign(images.begin(), images.end());
      o.timeout = std::chrono::milliseconds(send_timeout);
      if (send_out) o.pred_out = *send_out;
      return cmd_send(o, std::cout);
    }
    if (*bench) {
      bopts.config = make_config(net);
      bopts.classifier = make_choice(cls);
      bopts.out_dir = bench_out;
      bopts.timeout = std::chrono::milliseconds(bench_timeout);
      return cmd_bench(bopts, std::cout);
    }
    if (*split) {
      sopts.manifest = split_manifest;
      sopts.out_dir = split_out;
      return cmd_split(sopts, std::cout);
    }
    if (*ev) {
      EvalOptions o{truth, pred, std::nullopt};
      if (eval_out) o.out = *eval_out;
      return cmd_eval(o, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}
