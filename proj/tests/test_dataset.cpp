#include <doctest.h>

#include <filesystem>
#include <set>

#include "qf/dataset.hpp"
#include "qf/error.hpp"
#include "qf/io.hpp"

using namespace qf;

namespace {

std::pair<unsigned, unsigned> operands(const Example& e) {
  const auto& p = std::get<BinaryOperands>(e.instance.payload);
  unsigned a = 0, b = 0;
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    a |= unsigned(p.x[i]) << i;
    b |= unsigned(p.y[i]) << i;
  }
  return {a, b};
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("qf_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("addition-8 split sizes and no pair leakage") {
  const auto ds = build_dataset(TaskId::kAddition, 8, 10000, 3);
  CHECK(ds.train.size() == 10000);
  CHECK(ds.validation.size() == 1000);
  CHECK(ds.test.size() == 1000);
  // Exhaustive pair-set check.
  std::set<std::pair<unsigned, unsigned>> eval;
  for (const auto* split : {&ds.validation, &ds.test}) {
    for (const auto& e : *split) eval.insert(operands(e));
  }
  CHECK(eval.size() == 2000);
  std::set<std::pair<unsigned, unsigned>> train;
  for (const auto& e : ds.train) {
    const auto [a, b] = operands(e);
    REQUIRE(eval.count({a, b}) == 0);
    REQUIRE(eval.count({b, a}) == 0);
    train.insert({a, b});
  }
  CHECK(train.size() == ds.train.size());
}

TEST_CASE("large addition split has no swap leakage") {
  const auto ds = build_dataset(TaskId::kAddition, 16, 100000, 5);
  std::set<std::pair<unsigned, unsigned>> eval;
  for (const auto* split : {&ds.validation, &ds.test}) {
    for (const auto& e : *split) eval.insert(operands(e));
  }
  std::size_t leaks = 0;
  for (const auto& e : ds.train) {
    const auto [a, b] = operands(e);
    leaks += eval.count({a, b}) + eval.count({b, a});
  }
  CHECK(leaks == 0);
}

TEST_CASE("impossible split sizes are generation errors") {
  try {
    build_dataset(TaskId::kAddition, 2, 10000, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kGeneration);
  }
}

TEST_CASE("graph splits are distinct isomorphism classes") {
  const auto ds = build_dataset(TaskId::kBfs, 6, 50, 2, 20);
  CHECK(ds.train.size() == 50);
  std::set<std::string> keys;
  for (const auto* split : {&ds.train, &ds.validation, &ds.test}) {
    for (const auto& e : *split) keys.insert(example_key(e.tokens));
  }
  CHECK(keys.size() == 90);
}

TEST_CASE("evaluation splits do not depend on the training size") {
  const auto a = build_dataset(TaskId::kAddition, 8, 100, 4);
  const auto b = build_dataset(TaskId::kAddition, 8, 5000, 4);
  for (std::size_t i = 0; i < a.test.size(); ++i) REQUIRE(a.test[i].tokens == b.test[i].tokens);
}

TEST_CASE("same seed writes byte-identical files and reads back") {
  const auto d1 = scratch("ds1");
  const auto d2 = scratch("ds2");
  const auto ds = build_dataset(TaskId::kMaxSubarray, 8, 300, 11, 50);
  write_dataset(ds, d1, "abc");
  write_dataset(build_dataset(TaskId::kMaxSubarray, 8, 300, 11, 50), d2, "abc");
  for (const auto& entry : std::filesystem::directory_iterator(d1)) {
    CHECK(read_file(entry.path()) == read_file(d2 / entry.path().filename()));
  }
  const auto back = read_dataset(d1);
  REQUIRE(back.train.size() == ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) REQUIRE(back.train[i].tokens == ds.train[i].tokens);
  std::filesystem::remove(d1 / "manifest.json");
  CHECK_THROWS_AS(read_dataset(d1), Error);
}

TEST_CASE("holdout is disjoint from all splits") {
  const auto ds = build_dataset(TaskId::kAddition, 8, 2000, 9, 200);
  const auto hold = build_holdout(ds, 1000, 0);
  std::set<std::pair<unsigned, unsigned>> seen;
  for (const auto* split : {&ds.train, &ds.validation, &ds.test}) {
    for (const auto& e : *split) seen.insert(operands(e));
  }
  for (const auto& e : hold) {
    const auto [a, b] = operands(e);
    REQUIRE(seen.count({a, b}) == 0);
  }
}
