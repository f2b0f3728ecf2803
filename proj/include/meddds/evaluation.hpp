#pragma once

// Confusion matrix metrics, stratified dataset splits and the CSV formats
// they read and write.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "meddds/samples.hpp"

namespace meddds::eval {

using samples::kNumClasses;
using samples::Label;

enum class EvalErrc { BadLabel, EmptyMatrix, IdMismatch, BadRatios, BadCsv, DuplicateEntry, IoFailure };

class EvalError : public std::runtime_error {
 public:
  EvalError(EvalErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  EvalErrc code() const { return code_; }

 private:
  EvalErrc code_;
};

// Rows are the true class, columns the prediction.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t k) const;
  std::uint64_t col_sum(std::size_t k) const;
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion_from_pairs(const std::vector<std::pair<int, int>>& pairs);

struct Metrics {
  double accuracy = 0;
  double macro_precision = 0;
  double macro_recall = 0;
};

// Per-class precision (recall) is 0 for an empty column (row). Macro values
// average over the active classes: those with at least one true or
// predicted sample.
Metrics metrics(const ConfusionMatrix& cm);

// accuracy=, macro_precision=, macro_recall= lines with 4 decimals.
std::string format_metrics(const Metrics& m);

struct ManifestEntry {
  std::string path;
  Label label = Label::Covid19;
  bool operator==(const ManifestEntry&) const = default;
};
using Manifest = std::vector<ManifestEntry>;

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Split {
  Manifest train, val, test;
};

struct ClassCounts {
  std::size_t train = 0, val = 0, test = 0;
  bool operator==(const ClassCounts&) const = default;
};

// floor(test*n) to test, floor(val*n) to val, the remainder to train.
ClassCounts split_counts(std::size_t n, const SplitSpec& spec);

// Each class is ordered by path, shuffled with a stream seeded by
// (seed, class index), then cut test | val | train. Outputs are sorted by
// path.
Split stratified_split(const Manifest& manifest, const SplitSpec& spec);

Manifest parse_manifest_csv(const std::string& text);
Manifest read_manifest(const std::filesystem::path& path);
std::string manifest_csv(const Manifest& m);
void write_manifest(const Manifest& m, const std::filesystem::path& path);

using LabelTable = std::vector<std::pair<std::string, Label>>;

LabelTable parse_label_csv(const std::string& text);
LabelTable read_label_csv(const std::filesystem::path& path);
std::string label_csv(const LabelTable& t);
void write_label_csv(const LabelTable& t, const std::filesystem::path& path);

// Joins on sample_id; IdMismatch names missing and extra ids.
ConfusionMatrix join_labels(const LabelTable& truth, const LabelTable& pred);

}  // namespace meddds::eval
