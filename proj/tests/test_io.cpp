#include <doctest.h>

#include <bit>
#include <cmath>
#include <functional>
#include <limits>

#include "patchguard/io.hpp"
#include "patchguard/synthetic.hpp"
#include "support.hpp"

using namespace patchguard;
using testing::TempDir;

namespace {

std::size_t format_offset(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("expected a FormatError");
  return 0;
}

void put_f64(std::vector<std::uint8_t>& bytes, std::size_t at, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) bytes[at + i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("dataset byte layout") {
    LabeledDataset d;
    d.images.push_back(ImageTensor(1, 1, 1, {0.5}));
    d.labels.push_back(1);
    d.class_count = 2;
    const std::vector<std::uint8_t> want{'P', 'G', 'D', 'S', 1,    1, 0, 0, 0, 1, 0, 0, 0,
                                         1,   0,   0,   0,   1,    0, 0, 0, 2, 0, 0, 0, 0,
                                         0,   0,   0x3f, 1,  0};
    CHECK(encode_dataset(d) == want);
  }

  TEST_CASE("dataset round trip") {
    SyntheticSpec spec;
    spec.count = 12;
    spec.rows = 10;
    spec.cols = 9;
    spec.channels = 2;
    spec.classes = 4;
    const auto d = make_synthetic(spec);
    const auto back = decode_dataset(encode_dataset(d));
    CHECK(back.class_count == 4);
    CHECK(back.labels == d.labels);
    CHECK(back.images == d.images);

    TempDir dir("io_dataset");
    save_dataset(d, dir.path() / "nested" / "d.pgds");
    CHECK(load_dataset(dir.path() / "nested" / "d.pgds").images == d.images);
  }

  TEST_CASE("dataset errors report the failing offset") {
    LabeledDataset d;
    d.images = {ImageTensor(2, 2, 1, {0.0, 0.25, 0.5, 1.0}), ImageTensor::filled(2, 2, 1, 0.5)};
    d.labels = {0, 2};
    d.class_count = 3;
    const auto good = encode_dataset(d);
    REQUIRE(good.size() == 25 + 2 * 4 * 4 + 2 * 2);

    auto bad = good;
    bad[0] = 'X';
    CHECK(format_offset([&] { decode_dataset(bad); }) == 0);
    bad = good;
    bad[4] = 9;
    CHECK(format_offset([&] { decode_dataset(bad); }) == 4);
    bad = std::vector<std::uint8_t>(good.begin(), good.end() - 3);
    CHECK(format_offset([&] { decode_dataset(bad); }) == bad.size());
    bad = good;
    bad.push_back(0);
    CHECK(format_offset([&] { decode_dataset(bad); }) == good.size());
    bad = good;
    // Second pixel of the first image: 0.25 becomes 4.0.
    bad[25 + 4 + 3] = 0x40;
    CHECK(format_offset([&] { decode_dataset(bad); }) == 29);
    bad = good;
    bad[25 + 32 + 2] = 3;
    CHECK(format_offset([&] { decode_dataset(bad); }) == 59);
    bad = good;
    bad[21] = 0;
    CHECK(format_offset([&] { decode_dataset(bad); }) == 21);
  }

  TEST_CASE("model round trip and errors") {
    const auto m = PatchEnsembleModel::initialized(RFGeometry::make(9, 8, 2, 3, 2), 3, 4, 5);
    const auto bytes = encode_model(m);
    CHECK(bytes.size() == 45 + 8 * m.params().size());
    CHECK(decode_model(bytes) == m);

    auto bad = bytes;
    put_f64(bad, 45 + 8 * 7, std::numeric_limits<double>::quiet_NaN());
    CHECK(format_offset([&] { decode_model(bad); }) == 45 + 8 * 7);
    bad = bytes;
    bad[5 + 4 * 7] = 7;  // inputs field
    CHECK(format_offset([&] { decode_model(bad); }) == 33);
    bad = bytes;
    bad[5 + 4 * 3] = 20;  // rf rows beyond the image
    CHECK(format_offset([&] { decode_model(bad); }) == 33);
    bad = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 60);
    CHECK(format_offset([&] { decode_model(bad); }) == 60);

    TempDir dir("io_model");
    save_model(m, dir.path() / "m.pgmd");
    CHECK(load_model(dir.path() / "m.pgmd") == m);
    CHECK_THROWS_AS(load_model(dir.path() / "missing.pgmd"), std::runtime_error);
  }

  TEST_CASE("feature round trip and errors") {
    const FeatureTensor t(2, 1, 2, FeatureKind::confidence, {0.25, 0.75, 1.0, 0.0});
    const auto bytes = encode_features(t);
    CHECK(bytes.size() == 18 + 4 * 8);
    CHECK(decode_features(bytes) == t);
    auto bad = bytes;
    bad[5] = 3;
    CHECK(format_offset([&] { decode_features(bad); }) == 5);
    bad = bytes;
    put_f64(bad, 18, 0.5);
    CHECK(format_offset([&] { decode_features(bad); }) == 18);
    TempDir dir("io_features");
    save_features(t, dir.path() / "f.pgft");
    CHECK(load_features(dir.path() / "f.pgft") == t);
  }

  TEST_CASE("key value parsing") {
    const auto kv = parse_key_values("# comment\n a = 1 \n\nb=two # trailing\nc=\n");
    CHECK(kv.size() == 3);
    CHECK(kv.at("a") == "1");
    CHECK(kv.at("b") == "two");
    CHECK(kv.at("c").empty());
    CHECK_THROWS_WITH_AS(parse_key_values("a=1\nnoequals\n"), doctest::Contains("line 2"),
                         ContractViolation);
    CHECK_THROWS_AS(parse_key_values(" = 3"), ContractViolation);
  }

  TEST_CASE("real formatting") {
    CHECK(format_real(0.5) == "0.500000");
    CHECK(format_real(-0.0) == "0.000000");
    CHECK(format_real(-1e-9) == "0.000000");
    CHECK(format_real(-2.5, 2) == "-2.50");
    CHECK(format_real(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(format_real(std::nan("")) == "nan");
  }
}
