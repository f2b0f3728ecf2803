#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include <fmt/format.h>

#include "gen.hpp"
#include "meddds/evaluation.hpp"

using namespace meddds;
using namespace meddds::eval;

namespace {

template <class F>
EvalErrc eval_error(F&& f) {
  try {
    f();
  } catch (const EvalError& e) {
    return e.code();
  }
  FAIL("expected an EvalError");
  return EvalErrc::IoFailure;
}

// Straight from the pair list, one class at a time.
Metrics brute_force(const std::vector<std::pair<int, int>>& pairs) {
  Metrics m;
  std::size_t correct = 0;
  for (auto [t, p] : pairs) correct += t == p;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
  double ps = 0, rs = 0;
  int active = 0;
  for (int k = 0; k < 4; ++k) {
    std::size_t tp = 0, predicted = 0, actual = 0;
    for (auto [t, p] : pairs) {
      tp += t == k && p == k;
      predicted += p == k;
      actual += t == k;
    }
    if (predicted == 0 && actual == 0) continue;
    ++active;
    ps += predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    rs += actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
  }
  m.macro_precision = ps / active;
  m.macro_recall = rs / active;
  return m;
}

std::vector<std::pair<int, int>> twenty_pairs() {
  std::vector<std::pair<int, int>> p;
  for (int i = 0; i < 8; ++i) p.emplace_back(0, 0);
  for (int i = 0; i < 2; ++i) p.emplace_back(0, 1);
  p.emplace_back(1, 0);
  for (int i = 0; i < 9; ++i) p.emplace_back(1, 1);
  return p;
}

Manifest manifest_with_counts(const std::array<std::size_t, 4>& counts) {
  Manifest m;
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t i = 0; i < counts[k]; ++i)
      m.push_back({fmt::format("class{}/img{:05}.pgm", k, i), static_cast<Label>(k)});
  return m;
}

}  // namespace

TEST_CASE("confusion counting") {
  const auto cm = confusion_from_pairs({{0, 0}, {0, 1}, {1, 1}});
  ConfusionMatrix expected;
  expected.counts[0][0] = 1;
  expected.counts[0][1] = 1;
  expected.counts[1][1] = 1;
  CHECK(cm == expected);
  CHECK(confusion_from_pairs({}).total() == 0);
  CHECK(eval_error([] { confusion_from_pairs({{0, 7}}); }) == EvalErrc::BadLabel);
  CHECK(eval_error([] { confusion_from_pairs({{-1, 0}}); }) == EvalErrc::BadLabel);
}

TEST_CASE("twenty-pair fixture") {
  const auto cm = confusion_from_pairs(twenty_pairs());
  CHECK(cm.counts[0] == std::array<std::uint64_t, 4>{8, 2, 0, 0});
  CHECK(cm.counts[1] == std::array<std::uint64_t, 4>{1, 9, 0, 0});
  const auto m = metrics(cm);
  CHECK(m.accuracy == doctest::Approx(17.0 / 20));
  CHECK(m.macro_precision == doctest::Approx((8.0 / 9 + 9.0 / 11) / 2));
  CHECK(m.macro_recall == doctest::Approx(0.85));
  CHECK(format_metrics(m) == "accuracy=0.8500\nmacro_precision=0.8535\nmacro_recall=0.8500\n");
}

TEST_CASE("metric edge cases") {
  ConfusionMatrix perfect;
  for (int k = 0; k < 4; ++k) perfect.counts[k][k] = 5;
  const auto m = metrics(perfect);
  CHECK(m.accuracy == 1);
  CHECK(m.macro_precision == 1);
  CHECK(m.macro_recall == 1);
  CHECK(eval_error([] { metrics(ConfusionMatrix{}); }) == EvalErrc::EmptyMatrix);

  // A class that is predicted but never true counts with recall 0.
  const auto skew = metrics(confusion_from_pairs({{0, 0}, {0, 3}}));
  CHECK(skew.macro_recall == doctest::Approx(0.25));
  CHECK(skew.macro_precision == doctest::Approx(0.5));
}

TEST_CASE("metrics match the per-pair oracle") {
  std::mt19937_64 rng(1000);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::pair<int, int>> pairs(testing::uniform(rng, 1, 200));
    const int classes = static_cast<int>(testing::uniform(rng, 1, 4));
    for (auto& p : pairs)
      p = {static_cast<int>(testing::uniform(rng, 0, classes - 1)), static_cast<int>(testing::uniform(rng, 0, 3))};
    const auto a = metrics(confusion_from_pairs(pairs));
    const auto b = brute_force(pairs);
    CHECK(std::abs(a.accuracy - b.accuracy) <= 1e-12);
    CHECK(std::abs(a.macro_precision - b.macro_precision) <= 1e-12);
    CHECK(std::abs(a.macro_recall - b.macro_recall) <= 1e-12);
  }
}

TEST_CASE("split counts follow the floor rule") {
  const SplitSpec spec;
  CHECK(split_counts(3'617, spec) == ClassCounts{2'895, 361, 361});
  CHECK(split_counts(10'193, spec) == ClassCounts{8'155, 1'019, 1'019});
  CHECK(split_counts(6'013, spec) == ClassCounts{4'811, 601, 601});
  CHECK(split_counts(1'346, spec) == ClassCounts{1'078, 134, 134});
  CHECK(split_counts(1, spec) == ClassCounts{1, 0, 0});
  CHECK(split_counts(0, spec) == ClassCounts{0, 0, 0});
  CHECK(split_counts(100, SplitSpec{0.42, 0.29, 0.29, 0}) == ClassCounts{42, 29, 29});
}

TEST_CASE("stratified split on the full class counts") {
  const auto m = manifest_with_counts({3'617, 10'193, 6'013, 1'346});
  CHECK(m.size() == 21'169);
  const auto s = stratified_split(m, SplitSpec{0.8, 0.1, 0.1, 7});
  const std::array<ClassCounts, 4> expected{
      ClassCounts{2'895, 361, 361}, {8'155, 1'019, 1'019}, {4'811, 601, 601}, {1'078, 134, 134}};
  std::array<ClassCounts, 4> got{};
  for (const auto& e : s.train) ++got[static_cast<std::size_t>(e.label)].train;
  for (const auto& e : s.val) ++got[static_cast<std::size_t>(e.label)].val;
  for (const auto& e : s.test) ++got[static_cast<std::size_t>(e.label)].test;
  CHECK(got == expected);
}

TEST_CASE("split properties on random manifests") {
  std::mt19937_64 rng(55);
  for (int i = 0; i < 100; ++i) {
    Manifest m;
    const auto n = testing::uniform(rng, 0, 400);
    std::set<std::string> used;
    while (m.size() < n) {
      auto path = testing::random_name(rng, 12) + ".pgm";
      if (!used.insert(path).second) continue;
      m.push_back({path, static_cast<Label>(testing::uniform(rng, 0, 3))});
    }
    const double test = 0.05 + 0.25 * static_cast<double>(testing::uniform(rng, 0, 100)) / 100;
    const double val = 0.05 + 0.25 * static_cast<double>(testing::uniform(rng, 0, 100)) / 100;
    const SplitSpec spec{1 - test - val, val, test, rng()};
    const auto s = stratified_split(m, spec);

    // Partition.
    std::multiset<std::string> all;
    for (const auto* part : {&s.train, &s.val, &s.test})
      for (const auto& e : *part) all.insert(e.path);
    CHECK(all.size() == m.size());
    CHECK(std::set<std::string>(all.begin(), all.end()) == used);
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      for (const auto& e : *part) {
        auto it = std::find_if(m.begin(), m.end(), [&](const auto& x) { return x.path == e.path; });
        CHECK(it->label == e.label);
      }
    }

    // Stratification: test and val within 1/n of target, train within 2/n.
    for (int k = 0; k < 4; ++k) {
      auto count = [&](const Manifest& part) {
        return static_cast<double>(std::count_if(part.begin(), part.end(), [&](const auto& e) {
          return static_cast<int>(e.label) == k;
        }));
      };
      const double nk = count(m);
      if (nk == 0) continue;
      CHECK(std::abs(count(s.test) / nk - spec.test) <= 1 / nk + 1e-12);
      CHECK(std::abs(count(s.val) / nk - spec.val) <= 1 / nk + 1e-12);
      CHECK(std::abs(count(s.train) / nk - spec.train) <= 2 / nk + 1e-12);
    }

    // Determinism, also under reordering of the input.
    auto shuffled = m;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto again = stratified_split(shuffled, spec);
    CHECK(again.train == s.train);
    CHECK(again.val == s.val);
    CHECK(again.test == s.test);
  }
}

TEST_CASE("a class's split ignores the other classes") {
  auto m = manifest_with_counts({50, 60, 0, 0});
  const auto a = stratified_split(m, SplitSpec{0.8, 0.1, 0.1, 3});
  m.push_back({"extra/covid.pgm", Label::Covid19});
  const auto b = stratified_split(m, SplitSpec{0.8, 0.1, 0.1, 3});
  auto of_class = [](const Manifest& x, Label l) {
    Manifest out;
    std::copy_if(x.begin(), x.end(), std::back_inserter(out), [&](const auto& e) { return e.label == l; });
    return out;
  };
  CHECK(of_class(a.test, Label::Normal) == of_class(b.test, Label::Normal));
  CHECK(of_class(a.val, Label::Normal) == of_class(b.val, Label::Normal));
}

TEST_CASE("different seeds give different splits") {
  const auto m = manifest_with_counts({200, 0, 0, 0});
  CHECK(stratified_split(m, SplitSpec{0.8, 0.1, 0.1, 1}).test != stratified_split(m, SplitSpec{0.8, 0.1, 0.1, 2}).test);
}

TEST_CASE("split spec validation and duplicates") {
  CHECK(eval_error([] { SplitSpec{0.8, 0.1, 0.2, 0}.validate(); }) == EvalErrc::BadRatios);
  CHECK(eval_error([] { SplitSpec{1.0, 0.0, 0.0, 0}.validate(); }) == EvalErrc::BadRatios);
  Manifest dup{{"a.pgm", Label::Normal}, {"a.pgm", Label::Covid19}};
  CHECK(eval_error([&] { stratified_split(dup, SplitSpec{}); }) == EvalErrc::DuplicateEntry);
}

TEST_CASE("manifest CSV") {
  const std::string text = "path,label\r\ndir/a.pgm,COVID19\r\nb,with,comma.pgm,VIRAL_PNEUMONIA\r\n\r\n";
  const auto m = parse_manifest_csv(text);
  REQUIRE(m.size() == 2);
  CHECK(m[0] == ManifestEntry{"dir/a.pgm", Label::Covid19});
  CHECK(m[1] == ManifestEntry{"b,with,comma.pgm", Label::ViralPneumonia});
  CHECK(parse_manifest_csv(manifest_csv(m)) == m);
  CHECK(eval_error([] { parse_manifest_csv("file,label\na,NORMAL\n"); }) == EvalErrc::BadCsv);
  CHECK(eval_error([] { parse_manifest_csv("path,label\na,SOMETHING\n"); }) == EvalErrc::BadLabel);
  CHECK(eval_error([] { parse_manifest_csv(""); }) == EvalErrc::BadCsv);
  CHECK(eval_error([] { read_manifest("/nonexistent/m.csv"); }) == EvalErrc::IoFailure);
}

TEST_CASE("joining truth and predictions") {
  const LabelTable truth{{"a", Label::Covid19}, {"b", Label::Normal}, {"c", Label::LungOpacity}};
  CHECK(metrics(join_labels(truth, truth)).accuracy == 1.0);
  CHECK(format_metrics(metrics(join_labels(truth, truth))).starts_with("accuracy=1.0000\n"));

  const LabelTable reordered{{"c", Label::LungOpacity}, {"a", Label::Normal}, {"b", Label::Normal}};
  CHECK(metrics(join_labels(truth, reordered)).accuracy == doctest::Approx(2.0 / 3));

  const LabelTable missing{{"a", Label::Covid19}, {"c", Label::LungOpacity}, {"z", Label::Normal}};
  try {
    join_labels(truth, missing);
    FAIL("expected IdMismatch");
  } catch (const EvalError& e) {
    CHECK(e.code() == EvalErrc::IdMismatch);
    CHECK(std::string(e.what()).find("missing from predictions: b") != std::string::npos);
    CHECK(std::string(e.what()).find("not in truth: z") != std::string::npos);
  }
  const LabelTable dup{{"a", Label::Covid19}, {"a", Label::Covid19}};
  CHECK(eval_error([&] { join_labels(dup, dup); }) == EvalErrc::DuplicateEntry);
  CHECK(parse_label_csv(label_csv(truth)) == truth);
}
