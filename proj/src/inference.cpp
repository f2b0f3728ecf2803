#include "meddds/inference.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <vector>

#include <fmt/format.h>

namespace meddds::inference {

namespace {

[[noreturn]] void fail(InferenceErrc code, const std::string& what) { throw InferenceError(code, what); }

class TempFile {
 public:
  TempFile() {
    const char* dir = std::getenv("TMPDIR");
    std::string tmpl = std::string(dir && *dir ? dir : "/tmp") + "/meddds-XXXXXX.pgm";
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    const int fd = ::mkstemps(buf.data(), 4);
    if (fd < 0) fail(InferenceErrc::AdapterIoFailure, fmt::format("mkstemps: {}", std::strerror(errno)));
    ::close(fd);
    path_ = buf.data();
  }
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  TempFile(const TempFile&) = delete;
  TempFile& operator=(const TempFile&) = delete;

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

}  // namespace

Vec4 quadrant_features(const XrayImageSample& image) {
  if (image.width < 2 || image.height < 2)
    fail(InferenceErrc::ImageTooSmall, fmt::format("image {}x{} is smaller than 2x2", image.width, image.height));
  samples::validate(image);
  const std::uint32_t mx = image.width / 2, my = image.height / 2;
  std::array<std::uint64_t, 4> sum{};
  std::array<std::uint64_t, 4> count{};
  for (std::uint32_t y = 0; y < image.height; ++y) {
    for (std::uint32_t x = 0; x < image.width; ++x) {
      const std::size_t q = (y >= my ? 2 : 0) + (x >= mx ? 1 : 0);
      sum[q] += image.at(x, y);
      ++count[q];
    }
  }
  Vec4 m{};
  for (std::size_t q = 0; q < 4; ++q) m[q] = static_cast<double>(sum[q]) / static_cast<double>(count[q]) / 255.0;
  return m;
}

Vec4 softmax(const Vec4& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vec4 e{};
  double total = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    e[i] = std::exp(logits[i] - mx);
    total += e[i];
  }
  for (double& v : e) v /= total;
  return e;
}

QuadrantLinearModel::QuadrantLinearModel() {
  for (std::size_t i = 0; i < 4; ++i) w_[i][i] = 4.0;
}

Confidences QuadrantLinearModel::classify(const XrayImageSample& image) {
  const Vec4 m = quadrant_features(image);
  Vec4 z = b_;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) z[i] += w_[i][j] * m[j];
  }
  return softmax(z);
}

// ---------------------------------------------------------------------------
// External adapter

ExternalAdapter::ExternalAdapter(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
  if (command_.empty()) throw std::invalid_argument("adapter command must not be empty");
}

Confidences ExternalAdapter::parse_response(const std::string& output) {
  std::string line = output;
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
  if (line.find('\n') != std::string::npos)
    fail(InferenceErrc::AdapterProtocolError, "adapter printed more than one line");
  const auto tokens = split_ws(line);
  if (tokens.size() != 5)
    fail(InferenceErrc::AdapterProtocolError, fmt::format("expected 5 fields, got {}: '{}'", tokens.size(), line));

  unsigned label = 0;
  {
    const auto& t = tokens[0];
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), label);
    if (ec != std::errc{} || p != t.data() + t.size() || label >= samples::kNumClasses)
      fail(InferenceErrc::AdapterProtocolError, fmt::format("bad label index '{}'", t));
  }
  Confidences c{};
  double sum = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& t = tokens[i + 1];
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), c[i]);
    if (ec != std::errc{} || p != t.data() + t.size() || !(c[i] >= 0.0 && c[i] <= 1.0))
      fail(InferenceErrc::AdapterProtocolError, fmt::format("bad confidence '{}'", t));
    sum += c[i];
  }
  if (std::abs(sum - 1.0) > 1e-6)
    fail(InferenceErrc::AdapterProtocolError, fmt::format("confidences sum to {}", sum));
  if (static_cast<unsigned>(samples::argmax_label(c)) != label)
    fail(InferenceErrc::AdapterProtocolError, fmt::format("label {} is not the argmax", label));
  return c;
}

Confidences ExternalAdapter::classify(const XrayImageSample& image) {
  TempFile pgm;
  try {
    samples::save_pgm(image, pgm.path());
  } catch (const samples::PgmError& e) {
    fail(InferenceErrc::AdapterIoFailure, e.what());
  }

  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) fail(InferenceErrc::AdapterIoFailure, fmt::format("pipe: {}", std::strerror(errno)));

  const std::string script = command_ + " \"$1\"";
  const char* argv[] = {"/bin/sh", "-c", script.c_str(), "meddds-adapter", pgm.path().c_str(), nullptr};
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    fail(InferenceErrc::AdapterIoFailure, fmt::format("fork: {}", std::strerror(errno)));
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(fds[1], STDOUT_FILENO);
    const int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    ::execv("/bin/sh", const_cast<char* const*>(argv));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(fds[1]);

  std::string output;
  bool timed_out = false;
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  char buf[4096];
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      timed_out = true;
      break;
    }
    pollfd p{fds[0], POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1000)));
    if (r < 0 && errno == EINTR) continue;
    if (r == 0) continue;
    const ssize_t n = ::read(fds[0], buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    output.append(buf, static_cast<std::size_t>(n));
    if (output.size() > 1 << 16) break;
  }
  ::close(fds[0]);

  if (timed_out) ::kill(-pid, SIGKILL);
  int status = 0;
  // A child that closed stdout early may still be running past the deadline.
  for (;;) {
    const pid_t w = ::waitpid(pid, &status, timed_out ? 0 : WNOHANG);
    if (w == pid) break;
    if (w < 0 && errno != EINTR) break;
    if (w == 0) {
      if (std::chrono::steady_clock::now() >= deadline) {
        timed_out = true;
        ::kill(-pid, SIGKILL);
      } else {
        ::usleep(1000);
      }
    }
  }
  if (timed_out)
    fail(InferenceErrc::AdapterTimeout, fmt::format("adapter exceeded {} ms", timeout_.count()));
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    fail(InferenceErrc::AdapterExitFailure,
         WIFEXITED(status) ? fmt::format("adapter exited with status {}", WEXITSTATUS(status))
                           : fmt::format("adapter killed by signal {}", WTERMSIG(status)));
  return parse_response(output);
}

bool command_available(const std::string& command) {
  const auto words = split_ws(command);
  if (words.empty()) return false;
  const std::string& prog = words[0];
  auto executable = [](const std::filesystem::path& p) {
    struct stat st {};
    return ::stat(p.c_str(), &st) == 0 && S_ISREG(st.st_mode) && ::access(p.c_str(), X_OK) == 0;
  };
  if (prog.find('/') != std::string::npos) return executable(prog);
  const char* path = std::getenv("PATH");
  std::istringstream dirs(path ? path : "/usr/bin:/bin");
  for (std::string dir; std::getline(dirs, dir, ':');) {
    if (executable(std::filesystem::path(dir.empty() ? "." : dir) / prog)) return true;
  }
  return false;
}

}  // namespace meddds::inference
