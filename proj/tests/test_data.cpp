#include <set>

#include "cuti/checkpoint.hpp"
#include "cuti/data.hpp"
#include "cuti/error.hpp"
#include "doctest.h"
#include "test_util.hpp"

using cuti::Tensor;

namespace {

// Two 2x3 images and their labels, written byte by byte.
std::vector<std::uint8_t> fixture_images() {
  return {0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
          0, 51, 102, 153, 204, 255,  //
          255, 0, 255, 0, 255, 0};
}
std::vector<std::uint8_t> fixture_labels() { return {0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 7, 3}; }

}  // namespace

TEST_CASE("IDX fixture parses to the exact pixels and labels") {
  const auto b = cuti::parse_idx_dataset(fixture_images(), fixture_labels());
  REQUIRE(b.images.shape() == std::vector<int>{2, 1, 2, 3});
  CHECK(b.labels == std::vector<int>{7, 3});
  CHECK(b.images.at(0, 0, 0, 1) == doctest::Approx(0.2));
  CHECK(b.images.at(0, 0, 1, 2) == 1.0);
  CHECK(b.images.at(1, 0, 0, 1) == 0.0);
}

TEST_CASE("IDX save and load round-trip") {
  const auto dir = testutil::scratch_dir("idx");
  const auto b = cuti::parse_idx_dataset(fixture_images(), fixture_labels());
  cuti::save_idx_dataset(b, dir / "i.idx", dir / "l.idx");
  CHECK(cuti::read_file_bytes(dir / "i.idx") == fixture_images());
  CHECK(cuti::read_file_bytes(dir / "l.idx") == fixture_labels());
  const auto back = cuti::load_idx_dataset(dir / "i.idx", dir / "l.idx");
  CHECK(testutil::max_abs_diff(back.images, b.images) == 0.0);

  // Multi-channel batches use the 4-D variant and come back unchanged.
  const auto rgb = cuti::replicate_channels(b, 3);
  cuti::save_idx_dataset(rgb, dir / "c.idx", dir / "cl.idx");
  CHECK(testutil::max_abs_diff(cuti::load_idx_dataset(dir / "c.idx", dir / "cl.idx").images, rgb.images) == 0.0);
}

TEST_CASE("IDX errors name the byte offset") {
  auto bad_magic = fixture_images();
  bad_magic[3] = 0x09;
  try {
    cuti::parse_idx_dataset(bad_magic, fixture_labels());
    FAIL("expected a format error");
  } catch (const cuti::FormatError& e) {
    CHECK(e.offset() == 0);
  }
  auto truncated = fixture_images();
  truncated.pop_back();
  try {
    cuti::parse_idx_dataset(truncated, fixture_labels());
    FAIL("expected a format error");
  } catch (const cuti::FormatError& e) {
    CHECK(e.offset() == truncated.size());
  }
  auto mismatch = fixture_labels();
  mismatch[7] = 3;
  mismatch.push_back(1);
  CHECK_THROWS_AS(cuti::parse_idx_dataset(fixture_images(), mismatch), cuti::FormatError);
  CHECK_THROWS_AS(cuti::parse_idx_dataset({}, fixture_labels()), cuti::FormatError);
  CHECK_THROWS_AS(cuti::load_idx_dataset("/nonexistent/a", "/nonexistent/b"), cuti::IoError);
}

TEST_CASE("synthetic domains are a pure function of the spec") {
  cuti::SyntheticSpec s;
  s.n_per_class = 5;
  s.image_size = 12;
  s.seed = 4;
  const auto a = cuti::make_synthetic_domains(s);
  const auto b = cuti::make_synthetic_domains(s);
  REQUIRE(a.size() == 4);
  CHECK(testutil::max_abs_diff(a[0].train.images, b[0].train.images) == 0.0);
  // Same content and labels across domains, different pixels.
  CHECK(a[0].train.labels == a[1].train.labels);
  CHECK(a[0].test.labels == a[2].test.labels);
  CHECK(testutil::max_abs_diff(a[0].train.images, a[1].train.images) > 0.1);
  for (const auto& d : a) {
    d.train.validate(10);
    d.test.validate(10);
  }
  // A style's pixels do not depend on which other styles are listed.
  cuti::SyntheticSpec only = s;
  only.styles = {"noisy"};
  CHECK(testutil::max_abs_diff(cuti::make_synthetic_domains(only)[0].train.images, a[3].train.images) == 0.0);
}

TEST_CASE("synthetic spec validation") {
  cuti::SyntheticSpec s;
  s.n_classes = 1;
  CHECK_THROWS_AS(s.validate(), cuti::InvalidInput);
  s = {};
  s.styles = {"sepia"};
  CHECK_THROWS_AS(s.validate(), cuti::InvalidInput);
}

TEST_CASE("split is deterministic, disjoint, complete and 80/20") {
  cuti::SyntheticSpec s;
  s.n_per_class = 7;
  s.image_size = 8;
  s.styles = {"plain"};
  const auto d = cuti::make_synthetic_domains(s)[0];
  const auto all = cuti::concat(d.train, d.test, cuti::DomainTag::Source);
  const auto [train, test] = cuti::split_and_shuffle(all, 11);
  CHECK(test.size() == 14);  // round(0.2 * 70)
  CHECK(train.size() + test.size() == all.size());
  const auto [train2, test2] = cuti::split_and_shuffle(all, 11);
  CHECK(train2.labels == train.labels);

  std::multiset<std::uint64_t> whole, parts;
  for (int i = 0; i < all.size(); ++i) whole.insert(cuti::content_hash(all, i));
  std::set<std::uint64_t> train_hashes;
  for (int i = 0; i < train.size(); ++i) {
    parts.insert(cuti::content_hash(train, i));
    train_hashes.insert(cuti::content_hash(train, i));
  }
  for (int i = 0; i < test.size(); ++i) {
    parts.insert(cuti::content_hash(test, i));
    CHECK(train_hashes.count(cuti::content_hash(test, i)) == 0);
  }
  CHECK(whole == parts);
}

TEST_CASE("batch validation catches bad pixels and labels") {
  cuti::LabeledBatch b;
  b.images = Tensor({1, 1, 2, 2}, 0.5);
  b.labels = {3};
  CHECK_THROWS_AS(b.validate(3), cuti::InvalidInput);
  b.labels = {0};
  b.images[0] = 1.5;
  CHECK_THROWS_AS(b.validate(3), cuti::InvalidInput);
}
