#pragma once

// Classification engines for the inference node: the built-in quadrant model
// and an adapter that runs an external model command per image.

#include <array>
#include <chrono>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>

#include "meddds/samples.hpp"

namespace meddds::inference {

using samples::Confidences;
using samples::XrayImageSample;

enum class InferenceErrc { ImageTooSmall, AdapterTimeout, AdapterProtocolError, AdapterExitFailure, AdapterIoFailure };

class InferenceError : public std::runtime_error {
 public:
  InferenceError(InferenceErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  InferenceErrc code() const { return code_; }

 private:
  InferenceErrc code_;
};

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Confidences classify(const XrayImageSample& image) = 0;
  virtual std::string name() const = 0;
};

using Vec4 = std::array<double, 4>;

// Mean intensity / 255 of each quadrant: 0 top-left, 1 top-right,
// 2 bottom-left, 3 bottom-right. The split is at floor(w/2), floor(h/2), so
// odd middle rows/columns fall to the bottom/right.
Vec4 quadrant_features(const XrayImageSample& image);

// Max-subtracted softmax.
Vec4 softmax(const Vec4& logits);

class QuadrantLinearModel : public Classifier {
 public:
  QuadrantLinearModel();

  Confidences classify(const XrayImageSample& image) override;
  std::string name() const override { return "quadrant-linear"; }

  const std::array<Vec4, 4>& weights() const { return w_; }
  const Vec4& bias() const { return b_; }

 private:
  std::array<Vec4, 4> w_{};
  Vec4 b_{};
};

// Runs `/bin/sh -c '<command> "$1"' <pgm>` per image and reads one line
// `<label_index> <c0> <c1> <c2> <c3>` from its standard output.
class ExternalAdapter : public Classifier {
 public:
  static constexpr std::chrono::milliseconds kDefaultTimeout{30'000};

  explicit ExternalAdapter(std::string command, std::chrono::milliseconds timeout = kDefaultTimeout);

  Confidences classify(const XrayImageSample& image) override;
  std::string name() const override { return "adapter:" + command_; }

  // Validates one response line; throws AdapterProtocolError.
  static Confidences parse_response(const std::string& output);

 private:
  std::string command_;
  std::chrono::milliseconds timeout_;
};

// True if the first word of `command` names an executable file, either as a
// path or through PATH.
bool command_available(const std::string& command);

}  // namespace meddds::inference
