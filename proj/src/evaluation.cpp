#include "meddds/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace meddds::eval {

namespace {

[[noreturn]] void fail(EvalErrc code, const std::string& what) { throw EvalError(code, what); }

// Unbiased draw in [0, bound) by rejection.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  for (;;) {
    const std::uint64_t x = rng();
    if (x < limit) return x % bound;
  }
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  s.erase(0, i);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

// Two-column CSV with a fixed header; the last comma separates the columns
// so the first column may itself contain commas.
std::vector<std::pair<std::string, std::string>> parse_two_columns(const std::string& text, std::string_view header) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::pair<std::string, std::string>> rows;
  bool seen_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!seen_header) {
      if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
      if (trim(line) != header) fail(EvalErrc::BadCsv, fmt::format("expected header '{}', got '{}'", header, line));
      seen_header = true;
      continue;
    }
    if (trim(line).empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) fail(EvalErrc::BadCsv, fmt::format("line {}: expected two columns", lineno));
    rows.emplace_back(trim(line.substr(0, comma)), trim(line.substr(comma + 1)));
  }
  if (!seen_header) fail(EvalErrc::BadCsv, fmt::format("missing header '{}'", header));
  return rows;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(EvalErrc::IoFailure, fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(EvalErrc::IoFailure, fmt::format("cannot create {}", path.string()));
  out << text;
  out.close();
  if (!out) fail(EvalErrc::IoFailure, fmt::format("cannot write {}", path.string()));
}

Label parse_label_or_throw(const std::string& s, std::size_t row) {
  const auto l = samples::parse_label(s);
  if (!l) fail(EvalErrc::BadLabel, fmt::format("row {}: unknown label '{}'", row, s));
  return *l;
}

}  // namespace

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts)
    for (auto c : row) n += c;
  return n;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t k) const {
  std::uint64_t n = 0;
  for (auto c : counts[k]) n += c;
  return n;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t k) const {
  std::uint64_t n = 0;
  for (const auto& row : counts) n += row[k];
  return n;
}

ConfusionMatrix confusion_from_pairs(const std::vector<std::pair<int, int>>& pairs) {
  ConfusionMatrix cm;
  for (const auto& [t, p] : pairs) {
    if (t < 0 || p < 0 || t >= static_cast<int>(kNumClasses) || p >= static_cast<int>(kNumClasses))
      fail(EvalErrc::BadLabel, fmt::format("label pair ({}, {}) out of range", t, p));
    ++cm.counts[t][p];
  }
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) fail(EvalErrc::EmptyMatrix, "confusion matrix is empty");
  Metrics m;
  std::uint64_t trace = 0;
  double psum = 0, rsum = 0;
  std::size_t active = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const auto diag = cm.counts[k][k];
    const auto row = cm.row_sum(k), col = cm.col_sum(k);
    trace += diag;
    if (row == 0 && col == 0) continue;
    ++active;
    psum += col == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(col);
    rsum += row == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(row);
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  m.macro_precision = psum / static_cast<double>(active);
  m.macro_recall = rsum / static_cast<double>(active);
  return m;
}

std::string format_metrics(const Metrics& m) {
  return fmt::format("accuracy={:.4f}\nmacro_precision={:.4f}\nmacro_recall={:.4f}\n", m.accuracy, m.macro_precision,
                     m.macro_recall);
}

void SplitSpec::validate() const {
  for (double r : {train, val, test}) {
    if (!(r > 0.0 && r < 1.0)) fail(EvalErrc::BadRatios, fmt::format("ratio {} outside (0, 1)", r));
  }
  if (std::abs(train + val + test - 1.0) > 1e-9)
    fail(EvalErrc::BadRatios, fmt::format("ratios sum to {}", train + val + test));
}

ClassCounts split_counts(std::size_t n, const SplitSpec& spec) {
  // The epsilon keeps products like 0.29 * 100 = 28.999... on the integer.
  auto portion = [n](double r) { return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9)); };
  ClassCounts c;
  c.test = portion(spec.test);
  c.val = portion(spec.val);
  c.train = n - c.test - c.val;
  return c;
}

Split stratified_split(const Manifest& manifest, const SplitSpec& spec) {
  spec.validate();
  std::array<Manifest, kNumClasses> by_class;
  std::set<std::string> paths;
  for (const auto& e : manifest) {
    if (!paths.insert(e.path).second) fail(EvalErrc::DuplicateEntry, fmt::format("duplicate path {}", e.path));
    by_class[static_cast<std::size_t>(e.label)].push_back(e);
  }

  Split out;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    auto& entries = by_class[k];
    if (entries.empty()) {
      spdlog::warn("class {} has no entries", samples::label_name(static_cast<Label>(k)));
      continue;
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(seq);
    for (std::size_t i = entries.size(); i > 1; --i) std::swap(entries[i - 1], entries[bounded(rng, i)]);

    const ClassCounts c = split_counts(entries.size(), spec);
    auto it = entries.begin();
    out.test.insert(out.test.end(), it, it + static_cast<std::ptrdiff_t>(c.test));
    it += static_cast<std::ptrdiff_t>(c.test);
    out.val.insert(out.val.end(), it, it + static_cast<std::ptrdiff_t>(c.val));
    it += static_cast<std::ptrdiff_t>(c.val);
    out.train.insert(out.train.end(), it, entries.end());
  }
  for (Manifest* m : {&out.train, &out.val, &out.test})
    std::sort(m->begin(), m->end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

Manifest parse_manifest_csv(const std::string& text) {
  Manifest m;
  std::size_t row = 0;
  for (auto& [path, label] : parse_two_columns(text, "path,label")) {
    ++row;
    if (path.empty()) fail(EvalErrc::BadCsv, fmt::format("row {}: empty path", row));
    m.push_back({path, parse_label_or_throw(label, row)});
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) { return parse_manifest_csv(read_file(path)); }

std::string manifest_csv(const Manifest& m) {
  std::string out = "path,label\n";
  for (const auto& e : m) out += fmt::format("{},{}\n", e.path, samples::label_name(e.label));
  return out;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) { write_file(path, manifest_csv(m)); }

LabelTable parse_label_csv(const std::string& text) {
  LabelTable t;
  std::size_t row = 0;
  for (auto& [id, label] : parse_two_columns(text, "sample_id,label")) {
    ++row;
    if (id.empty()) fail(EvalErrc::BadCsv, fmt::format("row {}: empty sample_id", row));
    t.emplace_back(id, parse_label_or_throw(label, row));
  }
  return t;
}

LabelTable read_label_csv(const std::filesystem::path& path) { return parse_label_csv(read_file(path)); }

std::string label_csv(const LabelTable& t) {
  std::string out = "sample_id,label\n";
  for (const auto& [id, l] : t) out += fmt::format("{},{}\n", id, samples::label_name(l));
  return out;
}

void write_label_csv(const LabelTable& t, const std::filesystem::path& path) { write_file(path, label_csv(t)); }

ConfusionMatrix join_labels(const LabelTable& truth, const LabelTable& pred) {
  auto index = [](const LabelTable& t, const char* which) {
    std::map<std::string, Label> m;
    for (const auto& [id, l] : t) {
      if (!m.emplace(id, l).second) fail(EvalErrc::DuplicateEntry, fmt::format("{} repeats sample_id {}", which, id));
    }
    return m;
  };
  const auto tm = index(truth, "truth"), pm = index(pred, "predictions");
  std::vector<std::string> missing, extra;
  for (const auto& [id, l] : tm)
    if (!pm.contains(id)) missing.push_back(id);
  for (const auto& [id, l] : pm)
    if (!tm.contains(id)) extra.push_back(id);
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "sample ids differ";
    if (!missing.empty()) msg += fmt::format("; missing from predictions: {}", fmt::join(missing, " "));
    if (!extra.empty()) msg += fmt::format("; not in truth: {}", fmt::join(extra, " "));
    fail(EvalErrc::IdMismatch, msg);
  }
  ConfusionMatrix cm;
  for (const auto& [id, t] : tm) ++cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(pm.at(id))];
  return cm;
}

}  // namespace meddds::eval
