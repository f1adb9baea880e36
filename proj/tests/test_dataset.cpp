#include <doctest.h>

#include <fstream>
#include <sstream>

#include "iso3d/dataset.hpp"
#include "iso3d/error.hpp"
#include "iso3d/shapes.hpp"
#include "support.hpp"

using namespace iso3d;

TEST_CASE("empty cloud round trip") {
  std::stringstream s;
  write_cloud(s, PointCloud{});
  CHECK(read_cloud(s).empty());
}

TEST_CASE("2048-point cloud round trip") {
  const PointCloud c = test::random_cloud(2048, 3);
  test::TempDir dir("cloud");
  save_cloud(dir / "c.pc3d", c);
  CHECK(load_cloud(dir / "c.pc3d") == c);
}

TEST_CASE("corrupt cloud files are format errors") {
  std::stringstream good;
  write_cloud(good, test::random_cloud(4, 1));
  const std::string bytes = good.str();

  std::stringstream bad_magic("PC3X" + bytes.substr(4));
  CHECK_THROWS_AS(read_cloud(bad_magic), FormatError);

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_cloud(truncated), FormatError);
}

TEST_CASE("dataset of 5 classes x 100 examples round trips") {
  SyntheticDatasetOptions o;
  o.train_per_class = 80;
  o.test_per_class = 20;
  o.points = 32;
  const Dataset ds = make_synthetic_dataset(o);
  REQUIRE(ds.train.size() + ds.test.size() == 500);
  test::TempDir dir("dataset");
  save_dataset(dir.path(), ds);
  const Dataset back = load_dataset(dir.path());
  CHECK(back.classes == ds.classes);
  REQUIRE(back.train.size() == ds.train.size());
  REQUIRE(back.test.size() == ds.test.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(back.train[i].label == ds.train[i].label);
    CHECK(back.train[i].input == ds.train[i].input);
  }
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    CHECK(back.test[i].label == ds.test[i].label);
    CHECK(back.test[i].input == ds.test[i].input);
  }
  std::ifstream m1(dir / "manifest");
  std::stringstream first;
  first << m1.rdbuf();
  test::TempDir again("dataset");
  save_dataset(again.path(), back);
  std::ifstream m2(again / "manifest");
  std::stringstream second;
  second << m2.rdbuf();
  CHECK(first.str() == second.str());
  back.validate();
}

TEST_CASE("synthetic dataset is balanced and deterministic") {
  SyntheticDatasetOptions o;
  o.train_per_class = 6;
  o.test_per_class = 2;
  o.points = 40;
  const Dataset a = make_synthetic_dataset(o);
  const Dataset b = make_synthetic_dataset(o);
  CHECK(a.classes.size() == static_cast<std::size_t>(kShapeKindCount));
  std::vector<int> per_class(a.classes.size(), 0);
  for (const auto& ex : a.train) ++per_class[ex.label];
  for (int n : per_class) CHECK(n == 6);
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].input == b.train[i].input);
  for (const auto& ex : a.test) CHECK(ex.input.size() == 40);
}
