#include "meddds/samples.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <mutex>
#include <random>

#include <fmt/format.h>

namespace meddds::samples {

namespace {

constexpr std::array<std::string_view, kNumClasses> kLabelNames{"COVID19", "NORMAL", "LUNG_OPACITY",
                                                                "VIRAL_PNEUMONIA"};

[[noreturn]] void fail(SampleErrc code, const std::string& what) { throw SampleError(code, what); }
[[noreturn]] void pgm_fail(PgmErrc code, const std::string& what) { throw PgmError(code, what); }

}  // namespace

std::string_view label_name(Label l) { return kLabelNames.at(static_cast<std::size_t>(l)); }

std::optional<Label> parse_label(std::string_view s) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kLabelNames[i] == s) return static_cast<Label>(i);
  }
  if (s.size() == 1 && s[0] >= '0' && s[0] <= '3') return static_cast<Label>(s[0] - '0');
  return std::nullopt;
}

std::optional<Label> label_from_index(unsigned i) {
  if (i >= kNumClasses) return std::nullopt;
  return static_cast<Label>(i);
}

Label argmax_label(const Confidences& c) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (c[i] > c[best]) best = i;
  }
  return static_cast<Label>(best);
}

SampleId random_sample_id() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mu);
  SampleId id;
  for (std::size_t i = 0; i < id.size(); i += 8) {
    const std::uint64_t v = rng();
    for (std::size_t k = 0; k < 8; ++k) id[i + k] = static_cast<std::uint8_t>(v >> (8 * k));
  }
  return id;
}

std::string to_hex(const SampleId& id) {
  std::string s;
  s.reserve(32);
  for (auto b : id) s += fmt::format("{:02x}", b);
  return s;
}

std::optional<SampleId> sample_id_from_hex(std::string_view s) {
  if (s.size() != 32) return std::nullopt;
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
  };
  SampleId id;
  for (std::size_t i = 0; i < id.size(); ++i) {
    const int hi = nibble(s[2 * i]), lo = nibble(s[2 * i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    id[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return id;
}

void validate(const XrayImageSample& s) {
  if (s.bits_per_pixel != 8) fail(SampleErrc::BadBitDepth, fmt::format("bits_per_pixel {} (expected 8)", s.bits_per_pixel));
  if (s.width == 0 || s.height == 0 || s.pixels.size() != std::uint64_t{s.width} * s.height)
    fail(SampleErrc::BadPixelCount,
         fmt::format("{} pixels for a {}x{} image", s.pixels.size(), s.width, s.height));
}

void validate(const ClassificationResult& r) {
  if (static_cast<unsigned>(r.label) >= kNumClasses) fail(SampleErrc::BadLabel, "label out of range");
  double sum = 0;
  for (double c : r.confidences) {
    if (!(c >= 0.0 && c <= 1.0)) fail(SampleErrc::BadConfidences, fmt::format("confidence {} outside [0,1]", c));
    sum += c;
  }
  if (std::abs(sum - 1.0) > 1e-6) fail(SampleErrc::BadConfidences, fmt::format("confidences sum to {}", sum));
  if (argmax_label(r.confidences) != r.label)
    fail(SampleErrc::BadLabel, fmt::format("label {} is not the argmax", label_name(r.label)));
}

Bytes encode_sample(const XrayImageSample& s) {
  validate(s);
  Bytes out;
  ByteWriter w(out);
  w.raw(s.sample_id);
  w.u32(s.width);
  w.u32(s.height);
  w.u8(s.bits_per_pixel);
  w.u64(s.publish_timestamp_us);
  w.raw(s.pixels);
  return out;
}

Bytes encode_sample(const ClassificationResult& r) {
  validate(r);
  Bytes out;
  out.reserve(kResultSize);
  ByteWriter w(out);
  w.raw(r.sample_id);
  w.u8(static_cast<std::uint8_t>(r.label));
  for (double c : r.confidences) w.f64(c);
  w.u64(r.inference_duration_us);
  w.u64(r.result_timestamp_us);
  return out;
}

XrayImageSample decode_image(ByteView payload) {
  ByteReader r(payload);
  XrayImageSample s;
  ByteView id;
  if (!r.take(16, id) || !r.u32(s.width) || !r.u32(s.height) || !r.u8(s.bits_per_pixel) ||
      !r.u64(s.publish_timestamp_us))
    fail(SampleErrc::Truncated, "image header truncated");
  std::copy(id.begin(), id.end(), s.sample_id.begin());
  if (s.bits_per_pixel != 8) fail(SampleErrc::BadBitDepth, fmt::format("bits_per_pixel {}", s.bits_per_pixel));
  const std::uint64_t expected = std::uint64_t{s.width} * s.height;
  if (expected == 0 || r.remaining() != expected)
    fail(SampleErrc::BadPixelCount,
         fmt::format("{} pixel bytes for a {}x{} image", r.remaining(), s.width, s.height));
  ByteView px;
  r.take(r.remaining(), px);
  s.pixels.assign(px.begin(), px.end());
  return s;
}

ClassificationResult decode_result(ByteView payload) {
  ByteReader r(payload);
  ClassificationResult out;
  ByteView id;
  std::uint8_t label = 0;
  if (!r.take(16, id) || !r.u8(label)) fail(SampleErrc::Truncated, "result truncated");
  std::copy(id.begin(), id.end(), out.sample_id.begin());
  if (label >= kNumClasses) fail(SampleErrc::BadLabel, fmt::format("label byte {}", label));
  out.label = static_cast<Label>(label);
  for (double& c : out.confidences) {
    if (!r.f64(c)) fail(SampleErrc::Truncated, "result truncated");
  }
  if (!r.u64(out.inference_duration_us) || !r.u64(out.result_timestamp_us))
    fail(SampleErrc::Truncated, "result truncated");
  if (!r.empty()) fail(SampleErrc::TrailingBytes, fmt::format("{} trailing bytes", r.remaining()));
  validate(out);
  return out;
}

// ---------------------------------------------------------------------------
// PGM

XrayImageSample parse_pgm(ByteView file) {
  std::size_t pos = 0;
  if (file.size() < 2 || file[0] != 'P') pgm_fail(PgmErrc::UnsupportedFormat, "not a netpbm file");
  if (file[1] != '5') pgm_fail(PgmErrc::UnsupportedFormat, fmt::format("netpbm type P{} (only P5 is supported)", char(file[1])));
  pos = 2;

  auto skip_space = [&] {
    while (pos < file.size()) {
      if (file[pos] == '#') {
        while (pos < file.size() && file[pos] != '\n' && file[pos] != '\r') ++pos;
      } else if (std::isspace(file[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::uint64_t v = 0;
    const std::size_t start = pos;
    while (pos < file.size() && std::isdigit(file[pos])) {
      v = v * 10 + (file[pos] - '0');
      if (v > 0xFFFFFFFFu) pgm_fail(PgmErrc::MalformedHeader, fmt::format("{} too large", what));
      ++pos;
    }
    if (pos == start) pgm_fail(PgmErrc::MalformedHeader, fmt::format("missing {}", what));
    return static_cast<std::uint32_t>(v);
  };

  if (pos >= file.size() || !(std::isspace(file[pos]) || file[pos] == '#'))
    pgm_fail(PgmErrc::MalformedHeader, "expected whitespace after magic");
  const std::uint32_t width = number("width");
  const std::uint32_t height = number("height");
  const std::uint32_t maxval = number("maxval");
  if (width == 0 || height == 0) pgm_fail(PgmErrc::MalformedHeader, "zero image dimension");
  if (maxval != 255) pgm_fail(PgmErrc::UnsupportedFormat, fmt::format("maxval {} (only 255 is supported)", maxval));
  // Exactly one whitespace byte separates the header from the raster.
  if (pos >= file.size() || !std::isspace(file[pos])) pgm_fail(PgmErrc::MalformedHeader, "no raster separator");
  ++pos;

  const std::uint64_t n = std::uint64_t{width} * height;
  if (file.size() - pos < n)
    pgm_fail(PgmErrc::TruncatedPixels, fmt::format("{} of {} pixel bytes present", file.size() - pos, n));

  XrayImageSample s;
  s.sample_id = random_sample_id();
  s.width = width;
  s.height = height;
  s.pixels.assign(file.begin() + static_cast<std::ptrdiff_t>(pos), file.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return s;
}

XrayImageSample load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) pgm_fail(PgmErrc::IoFailure, fmt::format("cannot open {}", path.string()));
  const Bytes data{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (in.bad()) pgm_fail(PgmErrc::IoFailure, fmt::format("cannot read {}", path.string()));
  return parse_pgm(data);
}

Bytes encode_pgm(const XrayImageSample& image) {
  validate(image);
  Bytes out;
  ByteWriter w(out);
  w.raw(fmt::format("P5\n{} {}\n255\n", image.width, image.height));
  w.raw(image.pixels);
  return out;
}

void save_pgm(const XrayImageSample& image, const std::filesystem::path& path) {
  const Bytes data = encode_pgm(image);
  if (path.empty()) pgm_fail(PgmErrc::IoFailure, "empty output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) pgm_fail(PgmErrc::IoFailure, fmt::format("cannot create {}", path.string()));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  out.close();
  if (!out) pgm_fail(PgmErrc::IoFailure, fmt::format("cannot write {}", path.string()));
}

}  // namespace meddds::samples
