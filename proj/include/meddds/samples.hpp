#pragma once

// Application payloads carried on the middleware: the X-ray image published
// by the doctor node and the classification result sent back. Both encode
// little-endian in declared field order.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "meddds/bytes.hpp"

namespace meddds::samples {

inline constexpr std::size_t kNumClasses = 4;

using SampleId = std::array<std::uint8_t, 16>;
using Confidences = std::array<double, kNumClasses>;

enum class Label : std::uint8_t { Covid19 = 0, Normal = 1, LungOpacity = 2, ViralPneumonia = 3 };

std::string_view label_name(Label l);
std::optional<Label> parse_label(std::string_view s);
std::optional<Label> label_from_index(unsigned i);

// Lowest index wins exact ties.
Label argmax_label(const Confidences& c);

SampleId random_sample_id();
std::string to_hex(const SampleId& id);
std::optional<SampleId> sample_id_from_hex(std::string_view s);

struct XrayImageSample {
  SampleId sample_id{};
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint8_t bits_per_pixel = 8;
  std::uint64_t publish_timestamp_us = 0;
  Bytes pixels;  // row-major, width * height

  std::uint8_t at(std::uint32_t x, std::uint32_t y) const { return pixels[std::size_t{y} * width + x]; }
  bool operator==(const XrayImageSample&) const = default;
};

struct ClassificationResult {
  SampleId sample_id{};
  Label label = Label::Covid19;
  Confidences confidences{};
  std::uint64_t inference_duration_us = 0;
  std::uint64_t result_timestamp_us = 0;

  bool operator==(const ClassificationResult&) const = default;
};

inline constexpr std::size_t kImageHeaderSize = 16 + 4 + 4 + 1 + 8;
inline constexpr std::size_t kResultSize = 16 + 1 + 8 * kNumClasses + 8 + 8;

enum class SampleErrc { Truncated, BadLabel, BadPixelCount, BadBitDepth, BadConfidences, TrailingBytes };

class SampleError : public std::runtime_error {
 public:
  SampleError(SampleErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  SampleErrc code() const { return code_; }

 private:
  SampleErrc code_;
};

// Confidences in [0,1], summing to 1 within 1e-6, label at the argmax.
void validate(const ClassificationResult& r);
void validate(const XrayImageSample& s);

Bytes encode_sample(const XrayImageSample& s);
Bytes encode_sample(const ClassificationResult& r);
XrayImageSample decode_image(ByteView payload);
ClassificationResult decode_result(ByteView payload);

// Binary grayscale PGM (P5, maxval 255).
enum class PgmErrc { UnsupportedFormat, MalformedHeader, TruncatedPixels, IoFailure };

class PgmError : public std::runtime_error {
 public:
  PgmError(PgmErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  PgmErrc code() const { return code_; }

 private:
  PgmErrc code_;
};

// The returned sample has a fresh id; its timestamp is left at 0 for the
// publisher to stamp.
XrayImageSample parse_pgm(ByteView file);
XrayImageSample load_pgm(const std::filesystem::path& path);
Bytes encode_pgm(const XrayImageSample& image);
void save_pgm(const XrayImageSample& image, const std::filesystem::path& path);

}  // namespace meddds::samples
