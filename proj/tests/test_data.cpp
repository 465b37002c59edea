#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>

#include "allmargin/data.hpp"
#include "allmargin/common.hpp"
#include "allmargin/hash.hpp"

using namespace allmargin;
using namespace allmargin::data;

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() /
             ("allmargin_data_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
  std::filesystem::create_directories(dir);
  return dir;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string bytes(std::initializer_list<int> v) {
  std::string s;
  for (int b : v) s += static_cast<char>(b);
  return s;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::invalid_argument;
}

}  // namespace

TEST(Synthetic, DeterministicAndInUnitBall) {
  for (const char* kind : {"two-gaussians", "two-moons", "spirals"}) {
    auto a = gen_synthetic(kind, 301, 0.1, 9);
    auto b = gen_synthetic(kind, 301, 0.1, 9);
    EXPECT_EQ(a.inputs, b.inputs);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NE(a.inputs, gen_synthetic(kind, 301, 0.1, 10).inputs);
    ASSERT_EQ(a.size(), 301u);
    EXPECT_EQ(a.dim(), 2u);
    for (const auto& x : a.inputs) EXPECT_LE(norm2(x), 1.0 + 1e-12);
    EXPECT_FALSE(a.provenance.empty());
    a.validate();
  }
}

TEST(Synthetic, ZeroNoiseGaussiansAreLinearlySeparable) {
  auto ds = gen_synthetic("two-gaussians", 100, 0.0, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.inputs[i][0] > 0.0, ds.labels[i] == 1);
}

TEST(Synthetic, Errors) {
  EXPECT_EQ(code_of([] { gen_synthetic("circles", 10, 0.1, 1); }), ErrorCode::unknown_kind);
  EXPECT_EQ(code_of([] { gen_synthetic("two-moons", 1, 0.1, 1); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { gen_synthetic("two-moons", 10, -0.1, 1); }), ErrorCode::invalid_argument);
}

TEST(Idx, SinglePixel) {
  auto dir = temp_dir();
  write_bytes(dir / "img", bytes({0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 255}));
  write_bytes(dir / "lab", bytes({0, 0, 8, 1, 0, 0, 0, 1, 3}));
  auto ds = load_idx(dir / "img", dir / "lab");
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.inputs[0], std::vector<double>{1.0});
  EXPECT_EQ(ds.labels[0], 3u);
  EXPECT_EQ(ds.classes, 4u);
  EXPECT_EQ(ds.provenance.rfind("idx:", 0), 0u);
}

TEST(Idx, Errors) {
  auto dir = temp_dir();
  write_bytes(dir / "img", bytes({0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 7, 9}));
  write_bytes(dir / "lab1", bytes({0, 0, 8, 1, 0, 0, 0, 1, 3}));
  EXPECT_EQ(code_of([&] { load_idx(dir / "img", dir / "lab1"); }), ErrorCode::count_mismatch);
  write_bytes(dir / "bad", bytes({0, 0, 9, 1, 0, 0, 0, 2, 3, 4}));
  EXPECT_EQ(code_of([&] { load_idx(dir / "img", dir / "bad"); }), ErrorCode::bad_magic);
  write_bytes(dir / "short", bytes({0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 7}));
  write_bytes(dir / "lab2", bytes({0, 0, 8, 1, 0, 0, 0, 2, 3, 4}));
  EXPECT_EQ(code_of([&] { load_idx(dir / "short", dir / "lab2"); }), ErrorCode::truncated_file);
  EXPECT_EQ(code_of([&] { load_idx(dir / "missing", dir / "lab2"); }), ErrorCode::io_error);
}

TEST(Idx, RoundTripGenerated) {
  auto dir = temp_dir();
  auto ds = gen_synthetic("spirals", 50, 0.05, 4);
  write_idx(ds, dir / "img", dir / "lab");
  auto back = load_idx(dir / "img", dir / "lab");
  EXPECT_EQ(back.inputs, ds.inputs);
  EXPECT_EQ(back.labels, ds.labels);
}

TEST(Idx, RoundTripPixels) {
  auto dir = temp_dir();
  Dataset ds;
  ds.inputs = {{0.0, 1.0, pixel_units(17)}, {pixel_units(254), 0.0, 0.0}};
  ds.inputs[1][2] = pixel_units(128);
  ds.labels = {1, 0};
  ds.provenance = "hand";
  write_idx(ds, dir / "img", dir / "lab");
  EXPECT_EQ(read_file(dir / "img")[2], 8);
  auto back = load_idx(dir / "img", dir / "lab");
  EXPECT_EQ(back.inputs, ds.inputs);
}

TEST(Corrupt, FractionZeroIsIdentity) {
  auto ds = gen_synthetic("two-moons", 100, 0.1, 2);
  auto c = corrupt_labels(ds, 0.0, 5);
  EXPECT_EQ(c.labels, ds.labels);
  EXPECT_EQ(c.inputs, ds.inputs);
}

TEST(Corrupt, FractionOneFlipsEveryBinaryLabel) {
  auto ds = gen_synthetic("two-moons", 100, 0.1, 2);
  auto c = corrupt_labels(ds, 1.0, 5);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(c.labels[i], 1 - ds.labels[i]);
}

TEST(Corrupt, ExactCountNeverOriginal) {
  auto ds = gen_synthetic("two-moons", 1000, 0.1, 2);
  auto c = corrupt_labels(ds, 0.2, 5);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) changed += c.labels[i] != ds.labels[i];
  EXPECT_EQ(changed, 200u);
  EXPECT_NE(c.provenance.find("fraction=0.2"), std::string::npos);

  Dataset multi;
  Rng rng(3);
  for (int i = 0; i < 333; ++i) {
    multi.inputs.push_back({rng.normal()});
    multi.labels.push_back(rng.index(5));
  }
  multi.classes = 5;
  multi.provenance = "random";
  for (double f : {0.1, 0.37, 0.5}) {
    auto m = corrupt_labels(multi, f, 8);
    std::size_t diff = 0;
    for (std::size_t i = 0; i < multi.size(); ++i) diff += m.labels[i] != multi.labels[i];
    EXPECT_EQ(diff, static_cast<std::size_t>(std::ceil(f * 333.0)));
    m.validate();
  }
  multi.classes = 1;
  multi.labels.assign(multi.size(), 0);
  EXPECT_THROW(corrupt_labels(multi, 0.5, 1), Error);
}

TEST(Split, Sizes) {
  auto ds = gen_synthetic("two-moons", 100, 0.1, 2);
  auto [train, val] = split_validation(ds, 0.25, 3);
  EXPECT_EQ(train.size(), 75u);
  EXPECT_EQ(val.size(), 25u);
  EXPECT_EQ(val.split, "validation");
}

TEST(Csv, RoundTrip) {
  auto ds = gen_synthetic("two-gaussians", 20, 0.3, 6);
  auto back = from_csv(to_csv(ds));
  EXPECT_EQ(back.inputs, ds.inputs);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.provenance, ds.provenance);
  EXPECT_EQ(to_csv(back), to_csv(ds));
}

TEST(Csv, Malformed) {
  EXPECT_EQ(code_of([] { from_csv("x0,label\n1,0\n"); }), ErrorCode::malformed_input);
  const std::string head = "# allmargin-dataset v1 classes=2 split=train provenance=p\nx0,label\n";
  EXPECT_EQ(code_of([&] { from_csv(head + "1,2,0\n"); }), ErrorCode::malformed_input);
  EXPECT_EQ(code_of([&] { from_csv(head + "abc,0\n"); }), ErrorCode::malformed_input);
  EXPECT_EQ(from_csv(head).size(), 0u);
}

TEST(Hash, GitBlobIds) {
  EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}
